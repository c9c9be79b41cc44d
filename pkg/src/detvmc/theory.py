"""Randomized numerical verification of the sign-equivariance results.

Two statements are checked against the actual ansatz components:

1. every odd readout f can be reconstructed as g(x) - g(-x) from the non-odd
   gate function g(x) = f(x) if x.v > 0 else 0;
2. every wave function built as an odd readout over determinants factors
   almost everywhere into (linear combination) * (symmetric factor)
   J_hat(r) = psi(r) / (dets(r) . v), which a linear readout plus Jastrow can
   represent.

Plus direct randomized checks of the odd/even/symmetric/antisymmetric
definitions for arbitrary callables.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ansatz, ops
from .params import AnsatzParams
from .system import Molecule


@dataclass
class CheckReport:
    name: str
    trials: int
    max_abs_error: float
    max_rel_error: float
    failures: int
    tolerance: float
    excluded: int = 0
    counterexample: dict | None = None

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "trials": self.trials,
            "max_abs_error": self.max_abs_error,
            "max_rel_error": self.max_rel_error,
            "failures": self.failures,
            "tolerance": self.tolerance,
            "excluded": self.excluded,
            "pass": self.passed,
            "counterexample": self.counterexample,
        }


def readout_as_function(params: AnsatzParams, frozen_gates: dict | None = None):
    """The readout as an odd map from determinant vectors x (B, K) to values.

    The domain transform and its inverse are folded in, so the returned f is
    exactly the x -> psi map with the symmetric gates frozen (they depend on
    electron positions, not on x).
    """
    ro = params.readout
    gates = frozen_gates or {}

    def f(x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        sl = ops.signedlog_from_values(x)
        if ro.kind == "linear":
            gate_in = gates.get("gate_in")
            gate_out = gates.get("gate_out")
            if ro.domain == "linear":
                s = sl
                if gate_in is not None:
                    s = s * ops.signedlog_from_values(gate_in)
                psi = ops.signed_logsumexp(s, weights=params.dets.weights)
                if gate_out is not None:
                    psi = psi * ops.signedlog_from_values(gate_out)
            else:
                h = ansatz.linlog_forward(sl, ro.alpha)
                if gate_in is not None:
                    h = h * gate_in
                y = np.sum(h * params.dets.weights, axis=-1)
                if gate_out is not None:
                    y = y * gate_out[:, 0]
                psi = ansatz.linlog_inverse(y, ro.alpha)
        else:
            h = ops.signedlog_to_values(sl) if ro.domain == "linear" else ansatz.linlog_forward(sl, ro.alpha)
            if ro.kind == "implicit":
                y = ansatz.readout_implicit_odd(h, ro.implicit_weights, gates.get("layers"))
            else:
                y = ansatz.readout_explicit_odd(h, ro.explicit, gates.get("gate_in"),
                                                gates.get("gate_out"))
            psi = (ops.signedlog_from_values(y) if ro.domain == "linear"
                   else ansatz.linlog_inverse(y, ro.alpha))
        return ops.signedlog_to_values(psi)

    return f


def frozen_gates_from(r: np.ndarray, mol: Molecule, params: AnsatzParams,
                      batch: int) -> dict:
    """Evaluate the symmetric gate heads at one configuration and broadcast
    them over a trial batch, so the readout becomes a pure function of x."""
    if params.readout.jastrow_mode != "symmetric-odd":
        return {}
    trunk = ansatz.jastrow_trunk(np.asarray(r), mol, params.jastrow)
    gi = ops.value_of(ansatz.jastrow_head(trunk, params.jastrow, "gate_in"))
    go = ops.value_of(ansatz.jastrow_head(trunk, params.jastrow, "gate_out"))
    layers = [np.repeat(ops.value_of(ansatz.jastrow_head(trunk, params.jastrow, ("layer", t))),
                        batch, axis=0)
              for t in range(len(params.readout.implicit_weights))]
    return {
        "gate_in": np.repeat(gi, batch, axis=0),
        "gate_out": np.repeat(go, batch, axis=0),
        "layers": layers,
    }


def construct_g(f, v: np.ndarray):
    """The non-odd gate of the reconstruction theorem:
    g(x) = f(x) where x.v > 0, else 0."""
    v = np.asarray(v, dtype=np.float64)
    if not np.any(v != 0):
        raise ValueError("v must be nonzero")

    def g(x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        mask = x @ v > 0
        out = np.zeros(x.shape[0])
        if np.any(mask):
            out[mask] = f(x[mask])
        return out

    return g


def check_oddness_first(f, dim: int, rng: np.random.Generator, tol: float = 1e-10) -> bool:
    x = rng.standard_normal((64, dim))
    return bool(np.max(np.abs(f(-x) + f(x))) < tol)


def check_theorem1(f, v: np.ndarray, n_trials: int = 1000, seed: int = 0,
                   tol: float = 1e-12, name: str = "odd-reconstruction") -> CheckReport:
    """Verify g(x) - g(-x) == f(x) on random x off the x.v = 0 hyperplane."""
    rng = np.random.default_rng(seed)
    v = np.asarray(v, dtype=np.float64)
    if not check_oddness_first(f, len(v), rng):
        return CheckReport(name, 0, np.inf, np.inf, failures=1, tolerance=tol,
                           counterexample={"reason": "f is not odd"})
    g = construct_g(f, v)

    x = rng.standard_normal((n_trials, len(v)))
    off_plane = np.abs(x @ v) > 1e-12
    x = x[off_plane]
    lhs = g(x) - g(-x)
    rhs = f(x)
    err = np.abs(lhs - rhs)
    rel = err / np.maximum(np.abs(rhs), 1e-300)
    failures = int(np.sum(err >= tol))
    worst = int(np.argmax(err)) if len(err) else 0
    return CheckReport(name, len(x), float(err.max(initial=0.0)), float(rel.max(initial=0.0)),
                       failures, tol, excluded=int(n_trials - len(x)),
                       counterexample=None if failures == 0 else
                       {"x": x[worst].tolist(), "lhs": float(lhs[worst]), "rhs": float(rhs[worst])})


def construct_jhat(mol: Molecule, params: AnsatzParams, v: np.ndarray,
                   guard: float = 1e-30):
    """The symmetric factor J_hat(r) = psi(r) / (dets(r) . v).

    Returns a callable r -> (values, valid mask); configurations with
    |dets . v| below the guard sit on the nodal surface of the linear
    combination and are flagged rather than evaluated.
    """
    v = np.asarray(v, dtype=np.float64)
    if not np.any(v != 0):
        raise ValueError("v must be nonzero")

    def jhat(r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        r = np.asarray(r, dtype=np.float64)
        dets = ops.signedlog_to_values(ansatz.eval_determinant_stack(r, mol, params.dets))
        denom = dets @ v
        psi = ops.signedlog_to_values(ansatz.eval_psi(r, mol, params))
        ok = np.abs(denom) > guard
        out = np.zeros_like(denom)
        out[ok] = psi[ok] / denom[ok]
        return out, ok

    return jhat


def random_configurations(mol: Molecule, n: int, rng: np.random.Generator,
                          scale: float = 1.0) -> np.ndarray:
    slots = np.arange(mol.n_electrons) % mol.n_nuclei
    centers = mol.positions[slots]
    return centers[None, :, :] + rng.normal(scale=scale, size=(n, mol.n_electrons, 3))


def same_spin_transpositions(mol: Molecule, n: int, rng: np.random.Generator) -> np.ndarray:
    """(n, 2) index pairs that swap two electrons of equal spin."""
    pairs = []
    for a in range(mol.n_up):
        for b_ in range(a + 1, mol.n_up):
            pairs.append((a, b_))
    for a in range(mol.n_down):
        for b_ in range(a + 1, mol.n_down):
            pairs.append((mol.n_up + a, mol.n_up + b_))
    if not pairs:
        raise ValueError("system has no same-spin pair to swap")
    pairs = np.asarray(pairs)
    return pairs[rng.integers(0, len(pairs), size=n)]


def check_jhat(mol: Molecule, params: AnsatzParams, v: np.ndarray, n_trials: int = 1000,
               seed: int = 0, recon_tol: float = 1e-10, sym_tol: float = 1e-8) -> CheckReport:
    """Reconstruction psi = (dets.v) * J_hat plus permutation invariance of J_hat."""
    rng = np.random.default_rng(seed)
    r = random_configurations(mol, n_trials, rng)
    jh = construct_jhat(mol, params, v)

    vals, ok = jh(r)
    dets = ops.signedlog_to_values(ansatz.eval_determinant_stack(r, mol, params.dets))
    psi = ops.signedlog_to_values(ansatz.eval_psi(r, mol, params))
    recon = (dets @ np.asarray(v, dtype=np.float64)) * vals
    scale = np.maximum(np.abs(psi), 1e-300)
    recon_rel = np.abs(recon - psi)[ok] / scale[ok]

    swaps = same_spin_transpositions(mol, n_trials, rng)
    r_perm = r.copy()
    rows = np.arange(n_trials)
    r_perm[rows, swaps[:, 0]], r_perm[rows, swaps[:, 1]] = (
        r[rows, swaps[:, 1]].copy(), r[rows, swaps[:, 0]].copy())
    vals_p, ok_p = jh(r_perm)
    both = ok & ok_p
    sym_rel = np.abs(vals_p - vals)[both] / np.maximum(np.abs(vals)[both], 1e-300)

    max_rel = float(max(recon_rel.max(initial=0.0), sym_rel.max(initial=0.0)))
    failures = int(np.sum(recon_rel >= recon_tol) + np.sum(sym_rel >= sym_tol))
    excluded = int(np.sum(~ok) + np.sum(~both))
    return CheckReport("jastrow-factorization", int(ok.sum() + both.sum()),
                       max_abs_error=float(np.abs(recon - psi)[ok].max(initial=0.0)),
                       max_rel_error=max_rel, failures=failures,
                       tolerance=max(recon_tol, sym_tol), excluded=excluded)


def check_definitions(fn, symmetry: str, dim_or_mol, n_trials: int = 200, seed: int = 0,
                      tol: float = 1e-10) -> CheckReport:
    """Randomized verification that `fn` has the claimed symmetry.

    odd/even take fn: (B, dim) -> (B,) with `dim_or_mol` an int;
    symmetric/antisymmetric take fn: (B, N, 3) -> (B,) with a Molecule and
    test random same-spin transpositions.
    """
    rng = np.random.default_rng(seed)
    if symmetry in ("odd", "even"):
        dim = int(dim_or_mol)
        x = rng.standard_normal((n_trials, dim))
        lhs = fn(-x)
        rhs = -fn(x) if symmetry == "odd" else fn(x)
    elif symmetry in ("symmetric", "antisymmetric"):
        mol = dim_or_mol
        r = random_configurations(mol, n_trials, rng)
        swaps = same_spin_transpositions(mol, n_trials, rng)
        rows = np.arange(n_trials)
        r_perm = r.copy()
        r_perm[rows, swaps[:, 0]], r_perm[rows, swaps[:, 1]] = (
            r[rows, swaps[:, 1]].copy(), r[rows, swaps[:, 0]].copy())
        lhs = fn(r_perm)
        rhs = -fn(r) if symmetry == "antisymmetric" else fn(r)
    else:
        raise ValueError(f"unknown symmetry {symmetry!r}")

    err = np.abs(lhs - rhs)
    scale = np.maximum(np.maximum(np.abs(lhs), np.abs(rhs)), 1e-300)
    rel = err / scale
    failures = int(np.sum(rel >= tol))
    worst = int(np.argmax(rel)) if len(rel) else 0
    return CheckReport(f"definition-{symmetry}", n_trials, float(err.max(initial=0.0)),
                       float(rel.max(initial=0.0)), failures, tol,
                       counterexample=None if failures == 0 else
                       {"index": worst, "lhs": float(lhs[worst]), "rhs": float(rhs[worst])})
