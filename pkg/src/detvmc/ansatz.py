"""Wave function evaluation: orbitals -> determinant stack -> readout -> Jastrow.

The pipeline is written once against :mod:`detvmc.ops` and therefore runs in
three modes depending on what the caller passes in:

- plain positions + plain parameters: fast values for sampling,
- jet-seeded positions: coordinate gradient and Laplacian of log|psi|,
- tape-wrapped parameters: adjoints of log|psi| for the optimizer.

All public entry points take positions shaped (B, N, 3) with spin-up
electrons first.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .errors import SingularEvaluationError
from .jets import SignedLog
from .params import AnsatzParams, DeterminantStackParams, JastrowParams, MLPParams
from .system import Molecule

# squared-distance smoothing so exponential radials keep finite derivatives
# at electron-nucleus coincidence points; shifts energies immeasurably
DISTANCE_GUARD = 1e-24


def _batch_size(x) -> int:
    v = ops.value_of(x)
    if v.ndim != 3:
        raise ValueError(f"positions must be (B, N, 3), got shape {v.shape}")
    return v.shape[0]


def spin_split(r, n_up: int):
    """Split (B, N, 3) positions into the up and down blocks."""
    return r[:, :n_up, :], r[:, n_up:, :]


def eval_orbital_matrix(r_spin, mol: Molecule, coeffs, log_exps, kind: str):
    """Slater matrices (B, K, n, n) for one spin block.

    Entry (i, j) is orbital j at electron i: a sum over nuclei of
    c * exp(-zeta * |r - R|^2) (gaussian) or c * exp(-zeta * |r - R|) (exponential).
    """
    b = _batch_size(r_spin)
    k, n, m = ops.value_of(coeffs).shape
    dtype = ops.value_of(r_spin).dtype
    centers = mol.positions.astype(dtype).reshape(1, 1, m, 3)

    diff = ops.reshape(r_spin, (b, n, 1, 3)) - centers              # (B, n, M, 3)
    d2 = ops.sum_along(diff * diff, -1)                             # (B, n, M)
    if kind == "gaussian":
        radial = d2
    elif kind == "exponential":
        radial = ops.sqrt(d2 + DISTANCE_GUARD)
    else:
        raise ValueError(f"unknown orbital kind {kind!r}")

    zeta = ops.exp(log_exps)
    arg = -(ops.reshape(radial, (b, 1, n, 1, m)) * ops.reshape(zeta, (1, k, 1, n, m)))
    return ops.sum_along(ops.reshape(coeffs, (1, k, 1, n, m)) * ops.exp(arg), -1)


def eval_determinant_stack(r, mol: Molecule, dets: DeterminantStackParams) -> SignedLog:
    """Signed-log values (B, K) of the spin-factorized determinants."""
    up, down = spin_split(r, mol.n_up)
    sl_up = ops.slogdet(eval_orbital_matrix(up, mol, dets.up_coeffs, dets.up_log_exps, dets.kind))
    if mol.n_down == 0:
        return sl_up
    sl_down = ops.slogdet(
        eval_orbital_matrix(down, mol, dets.down_coeffs, dets.down_log_exps, dets.kind))
    return sl_up * sl_down


# ---------------------------------------------------------------------------
# linlog domain


def linlog_forward(sl: SignedLog, alpha: float):
    """sign(x) * log(|x| e^alpha + 1), evaluated stably from (sign, log|x|).

    Odd, strictly monotone, exactly zero iff x is zero.
    """
    return ops.softplus(sl.logabs + alpha) * sl.sign


def linlog_inverse(y, alpha: float) -> SignedLog:
    """Map a linlog-domain value back to (sign, log|x|); y = 0 flags sign 0."""
    v = ops.value_of(y)
    sign = np.sign(v)
    u = y * sign + (sign == 0.0).astype(v.dtype)
    return SignedLog(sign, ops.log_expm1(u) - alpha)


def linlog_forward_values(x, alpha: float):
    """linlog on linear-domain inputs (theory checks, histograms)."""
    return linlog_forward(ops.signedlog_from_values(x), alpha)


# ---------------------------------------------------------------------------
# Jastrow factor


def jastrow_features(r, mol: Molecule):
    """Electron-summed per-nucleus features (B, 4M): displacements then distances.

    Sum pooling over electrons makes every downstream head permutation
    invariant by construction.
    """
    b = _batch_size(r)
    n = ops.value_of(r).shape[1]
    m = mol.n_nuclei
    dtype = ops.value_of(r).dtype
    centers = mol.positions.astype(dtype).reshape(1, 1, m, 3)

    diff = ops.reshape(r, (b, n, 1, 3)) - centers          # (B, N, M, 3)
    disp = ops.sum_along(diff, 1)                          # (B, M, 3)
    dist = ops.sqrt(ops.sum_along(diff * diff, -1) + DISTANCE_GUARD)
    return ops.concat([ops.reshape(disp, (b, 3 * m)), ops.sum_along(dist, 1)], -1)


def _mlp(x, p: MLPParams, activate_last: bool):
    h = x
    last = len(p.weights) - 1
    for i, w in enumerate(p.weights):
        h = ops.matmul(h, w, None if p.biases is None else p.biases[i])
        if i < last or activate_last:
            h = ops.silu(h)
    return h


def jastrow_trunk(r, mol: Molecule, jp: JastrowParams):
    return _mlp(jastrow_features(r, mol), jp.trunk, activate_last=True)


def jastrow_head(trunk_out, jp: JastrowParams, head):
    """Linear head over the shared trunk; `head` is 'scalar', 'gate_in',
    'gate_out', or ('layer', t)."""
    if head == "scalar":
        return ops.matmul(trunk_out, jp.scalar_w, jp.scalar_b)
    if head == "gate_in":
        return ops.matmul(trunk_out, jp.gate_in_w, jp.gate_in_b)
    if head == "gate_out":
        return ops.matmul(trunk_out, jp.gate_out_w, jp.gate_out_b)
    if isinstance(head, tuple) and head[0] == "layer":
        t = head[1]
        return ops.matmul(trunk_out, jp.layer_ws[t], jp.layer_bs[t])
    raise KeyError(f"unknown jastrow head {head!r}")


def eval_jastrow(r, mol: Molecule, jp: JastrowParams, head):
    """Permutation-invariant Jastrow output for one head slot."""
    return jastrow_head(jastrow_trunk(r, mol, jp), jp, head)


# ---------------------------------------------------------------------------
# readouts


def readout_linear(dets_sl: SignedLog, weights) -> SignedLog:
    """Classic linear combination sum_k w_k det_k in signed-log space."""
    return ops.signed_logsumexp(dets_sl, weights=weights)


def readout_implicit_odd(x, layer_weights, layer_gates=None):
    """Bias-free tanh chain with optional per-layer symmetric gates.

    Each layer maps h -> tanh(h W) * J; with no biases the whole chain is odd
    in its input by construction.
    """
    h = x
    width = ops.value_of(x).shape[-1]
    for t, w in enumerate(layer_weights):
        w_shape = ops.value_of(w).shape
        if w_shape[0] != width:
            raise ValueError(f"implicit layer {t}: expected input width {width}, got {w_shape}")
        h = ops.tanh(ops.matmul(h, w))
        if layer_gates is not None:
            h = h * layer_gates[t]
        width = ops.value_of(h).shape[-1]
    if width != 1:
        raise ValueError("implicit readout must end in width 1")
    b = ops.value_of(h).shape[0]
    return ops.reshape(h, (b,))


def readout_explicit_odd(x, mlp: MLPParams, gate_in=None, gate_out=None):
    """f(x) = (g(x * J0) - g(-x * J0)) * JT with an arbitrary (biased) MLP g.

    Evaluating g at the mirrored input with identical weights makes f odd in
    x regardless of g; biases cancel in the difference.
    """
    xg = x * gate_in if gate_in is not None else x
    y = _mlp(xg, mlp, activate_last=False) - _mlp(-xg, mlp, activate_last=False)
    if gate_out is not None:
        y = y * gate_out
    b = ops.value_of(y).shape[0]
    if ops.value_of(y).shape[-1] != 1:
        raise ValueError("explicit readout must end in width 1")
    return ops.reshape(y, (b,))


# ---------------------------------------------------------------------------
# full pipeline


def eval_psi(r, mol: Molecule, p: AnsatzParams) -> SignedLog:
    """Full wave function as (sign, log|psi|); the log carrier matches the inputs."""
    ro = p.readout
    b = _batch_size(r)
    dets_sl = eval_determinant_stack(r, mol, p.dets)

    gated = ro.jastrow_mode == "symmetric-odd"
    trunk = None
    if ro.jastrow_mode != "none":
        trunk = jastrow_trunk(r, mol, p.jastrow)

    if ro.kind == "linear":
        gate_in = jastrow_head(trunk, p.jastrow, "gate_in") if gated else None
        gate_out = (ops.reshape(jastrow_head(trunk, p.jastrow, "gate_out"), (b,))
                    if gated else None)
        if ro.domain == "linear":
            sl = dets_sl
            if gated:
                sl = sl * ops.signedlog_from_values(gate_in)
            psi = readout_linear(sl, p.dets.weights)
            if gated:
                psi = psi * ops.signedlog_from_values(gate_out)
        else:
            x = linlog_forward(dets_sl, ro.alpha)
            if gated:
                x = x * gate_in
            y = ops.sum_along(x * p.dets.weights, -1)
            if gated:
                y = y * gate_out
            psi = linlog_inverse(y, ro.alpha)
    else:
        x = (ops.signedlog_to_values(dets_sl) if ro.domain == "linear"
             else linlog_forward(dets_sl, ro.alpha))
        if ro.kind == "implicit":
            gates = ([jastrow_head(trunk, p.jastrow, ("layer", t))
                      for t in range(len(ro.implicit_weights))] if gated else None)
            y = readout_implicit_odd(x, ro.implicit_weights, gates)
        elif ro.kind == "explicit":
            gate_in = jastrow_head(trunk, p.jastrow, "gate_in") if gated else None
            gate_out = jastrow_head(trunk, p.jastrow, "gate_out") if gated else None
            y = readout_explicit_odd(x, ro.explicit, gate_in, gate_out)
        else:
            raise ValueError(f"unknown readout kind {ro.kind!r}")
        psi = (ops.signedlog_from_values(y) if ro.domain == "linear"
               else linlog_inverse(y, ro.alpha))

    if ro.jastrow_mode == "standalone":
        j = ops.reshape(jastrow_head(trunk, p.jastrow, "scalar"), (b,))
        psi = SignedLog(psi.sign, psi.logabs + j)
    return psi


def eval_logabs(r: np.ndarray, mol: Molecule, p: AnsatzParams) -> tuple[np.ndarray, np.ndarray]:
    """Value-only (sign, log|psi|) for plain position arrays."""
    sl = eval_psi(np.asarray(r), mol, p)
    return sl.sign, ops.value_of(sl.logabs)


# ---------------------------------------------------------------------------
# linlog shift initialization


def max_logdets(r: np.ndarray, mol: Molecule, dets: DeterminantStackParams) -> np.ndarray:
    """Per-sample max_k log|det_k| (values only), used to place alpha."""
    sl = eval_determinant_stack(np.asarray(r), mol, dets)
    lv = np.where(sl.sign == 0.0, -np.inf, ops.value_of(sl.logabs))
    return np.max(lv, axis=-1)


def alpha_init(batch_max_logdets: np.ndarray, offset: float) -> float:
    """Shift alpha so typical determinant magnitudes sit at the linear-log
    crossover: alpha = offset - median(max_k log|det_k|)."""
    vals = np.asarray(batch_max_logdets, dtype=np.float64)
    if vals.size == 0:
        raise ValueError("alpha_init needs a nonempty batch")
    finite = vals[np.isfinite(vals)]
    if finite.size == 0:
        raise SingularEvaluationError("alpha_init: every sample sits on a node")
    return float(offset - np.median(finite))
