"""VMC optimization: parameter adjoints, the centered energy gradient,
an adaptive first-order optimizer, and the full training loop."""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field

import numpy as np

from . import ansatz, hamiltonian, sampler
from .errors import NanDivergenceError, SingularEvaluationError
from .params import AnsatzParams, collect_grads, flatten, unflatten, wrap_in_vars
from .system import Molecule
from .tape import backward


@dataclass
class TrainConfig:
    batch_size: int = 512
    steps: int = 500
    mcmc_steps: int = 20          # decorrelation sweeps between updates
    burn_in: int = 500
    learning_rate: float = 1.0    # multiplier on the 0.05/(1 + t/1000) schedule
    clip_mad: float = 5.0         # local-energy clip width in batch MADs
    alpha_init_offset: float = 0.0
    max_bad_steps: int = 10


@dataclass
class TrainRecord:
    step: int
    energy: float
    stderr: float
    accept_rate: float
    alpha: float
    wall_ms: float


@dataclass
class OptimizerState:
    """Adam moments; learning rate follows 0.05/(1 + t/1000) times a base multiplier."""

    step: int = 0
    base_lr: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def learning_rate(self) -> float:
        return self.base_lr * 0.05 / (1.0 + self.step / 1000.0)


def grad_logpsi_params(r: np.ndarray, mol: Molecule, params: AnsatzParams,
                       seed_weights: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """Adjoint pass: d log|psi| / d theta, summed over walkers with `seed_weights`.

    With the default unit seed on a single-walker batch this is the exact
    per-configuration parameter gradient.
    """
    r = np.asarray(r, dtype=np.float64)
    wrapped, leaves = wrap_in_vars(params)
    sl = ansatz.eval_psi(r, mol, wrapped)
    if np.any(sl.sign == 0.0):
        raise SingularEvaluationError("parameter gradient at a nodal configuration")
    seed = np.ones(r.shape[0]) if seed_weights is None else np.asarray(seed_weights, dtype=np.float64)
    backward(sl.logabs, seed)
    return collect_grads(leaves)


def clip_local_energies(e_l: np.ndarray, width_in_mads: float) -> tuple[np.ndarray, np.ndarray]:
    """Clip to median +/- width * MAD over the finite entries; returns
    (clipped energies, validity mask)."""
    e_l = np.asarray(e_l, dtype=np.float64)
    valid = np.isfinite(e_l)
    if valid.sum() < 2:
        raise SingularEvaluationError("fewer than two finite local energies in batch")
    med = np.median(e_l[valid])
    mad = np.median(np.abs(e_l[valid] - med))
    clipped = np.clip(e_l, med - width_in_mads * mad, med + width_in_mads * mad)
    return np.where(valid, clipped, 0.0), valid


def energy_weights(e_l: np.ndarray, width_in_mads: float = 5.0) -> tuple[np.ndarray, np.ndarray]:
    """Per-walker weights (E_i - mean E)/n for the score-function estimator.

    Invalid walkers get weight zero and are excluded from the mean.
    """
    clipped, valid = clip_local_energies(e_l, width_in_mads)
    n = int(valid.sum())
    mean = clipped[valid].sum() / n
    weights = np.where(valid, (clipped - mean) / n, 0.0)
    return weights, valid


def energy_gradient(e_l: np.ndarray, logpsi_grads: np.ndarray,
                    width_in_mads: float = 5.0) -> np.ndarray:
    """Centered estimator mean_i (E_i - mean E) grad_theta log|psi_i| from a
    (B, P) matrix of per-walker parameter gradients."""
    weights, _ = energy_weights(e_l, width_in_mads)
    return weights @ np.asarray(logpsi_grads)


def optimizer_step(state: OptimizerState, params: AnsatzParams,
                   grads: dict[str, np.ndarray]) -> tuple[AnsatzParams, bool]:
    """One bias-corrected adaptive-moment update; non-finite gradients skip
    the update (the step counter still advances)."""
    finite = all(np.all(np.isfinite(g)) for g in grads.values())
    leaves = flatten(params)
    if not state.m:
        state.m = {k: np.zeros_like(v, dtype=np.float64) for k, v in leaves.items()}
        state.v = {k: np.zeros_like(v, dtype=np.float64) for k, v in leaves.items()}

    state.step += 1
    if not finite:
        return params, False
    lr = state.base_lr * 0.05 / (1.0 + (state.step - 1) / 1000.0)
    b1, b2 = state.beta1, state.beta2
    new_leaves = {}
    for key, value in leaves.items():
        g = grads[key]
        state.m[key] = b1 * state.m[key] + (1 - b1) * g
        state.v[key] = b2 * state.v[key] + (1 - b2) * g * g
        m_hat = state.m[key] / (1 - b1 ** state.step)
        v_hat = state.v[key] / (1 - b2 ** state.step)
        new_leaves[key] = (value - lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(value.dtype)
    return unflatten(params, new_leaves), True


def blocked_stats(energies: np.ndarray, block: int = 50) -> tuple[float, float]:
    """Mean and blocked standard error of a per-step energy trace."""
    e = np.asarray(energies, dtype=np.float64)
    e = e[np.isfinite(e)]
    if e.size == 0:
        return float("nan"), float("nan")
    n_blocks = max(e.size // block, 1)
    trimmed = e[e.size - n_blocks * block:] if e.size >= block else e
    means = trimmed.reshape(n_blocks, -1).mean(axis=1) if e.size >= block else np.array([e.mean()])
    if len(means) < 2:
        return float(np.mean(means)), float(np.std(e) / np.sqrt(max(e.size, 1)))
    return float(np.mean(means)), float(np.std(means, ddof=1) / np.sqrt(len(means)))


@dataclass
class TrainResult:
    params: AnsatzParams
    records: list
    energy: float
    stderr: float
    walkers: sampler.WalkerBatch
    aborted: bool = False
    abort_reason: str = ""


def _probe_params(params: AnsatzParams) -> AnsatzParams:
    """Linear readout stand-in used to place alpha before training."""
    probe_readout = dataclasses.replace(params.readout, kind="linear",
                                        jastrow_mode="none", domain="linear")
    return AnsatzParams(dets=params.dets, jastrow=params.jastrow, readout=probe_readout)


def train(mol: Molecule, params: AnsatzParams, cfg: TrainConfig, seed: int,
          on_record=None, alpha_auto: bool = False) -> TrainResult:
    """Burn-in, optional linlog-alpha placement, then the optimization loop.

    Each step: `cfg.mcmc_steps` Metropolis sweeps, a local-energy batch, the
    centered gradient via one adjoint pass, and an optimizer update.  More
    than `cfg.max_bad_steps` consecutive non-finite steps aborts.
    """
    def logpsi_fn_for(p: AnsatzParams):
        return lambda pos: ansatz.eval_logabs(pos, mol, p)

    if alpha_auto:
        if params.readout.domain != "linlog":
            raise ValueError("alpha auto-initialization only applies to the linlog domain")
        probe = _probe_params(params)
        batch = sampler.init_walkers(mol, cfg.batch_size, seed, logpsi_fn_for(probe))
        sampler.equilibrate(batch, logpsi_fn_for(probe), cfg.burn_in)
        maxld = ansatz.max_logdets(batch.positions, mol, params.dets)
        params.readout.alpha = ansatz.alpha_init(maxld, cfg.alpha_init_offset)
        sampler.equilibrate(batch, logpsi_fn_for(params), max(cfg.burn_in // 5, 50))
    else:
        batch = sampler.init_walkers(mol, cfg.batch_size, seed, logpsi_fn_for(params))
        sampler.equilibrate(batch, logpsi_fn_for(params), cfg.burn_in)

    opt = OptimizerState(base_lr=cfg.learning_rate)
    records: list[TrainRecord] = []
    consecutive_bad = 0

    for step in range(cfg.steps):
        t0 = time.perf_counter()
        logpsi_fn = logpsi_fn_for(params)
        sampler.refresh(batch, logpsi_fn)
        batch.accept_count = 0
        batch.proposal_count = 0
        sampler.mcmc_sweep(batch, logpsi_fn, cfg.mcmc_steps)
        accept_rate = batch.acceptance_rate

        breakdown = hamiltonian.local_energy(batch.positions, mol, params)
        e_l = breakdown.total
        good = np.isfinite(e_l)
        step_ok = good.sum() >= 2

        if step_ok:
            energy = float(np.mean(e_l[good]))
            stderr = float(np.std(e_l[good]) / np.sqrt(good.sum()))
            weights, _ = energy_weights(e_l, cfg.clip_mad)
            try:
                grads = grad_logpsi_params(batch.positions, mol, params, seed_weights=weights)
            except SingularEvaluationError:
                step_ok = False
                grads = {}
        if step_ok:
            params, applied = optimizer_step(opt, params, grads)
            step_ok = applied
        if not step_ok:
            energy, stderr = float("nan"), float("nan")

        consecutive_bad = 0 if step_ok else consecutive_bad + 1
        wall_ms = (time.perf_counter() - t0) * 1e3
        rec = TrainRecord(step, energy, stderr, accept_rate, params.readout.alpha, wall_ms)
        records.append(rec)
        if on_record is not None:
            on_record(rec)
        if consecutive_bad > cfg.max_bad_steps:
            return TrainResult(params, records, float("nan"), float("nan"), batch,
                               aborted=True,
                               abort_reason=f"{consecutive_bad} consecutive non-finite steps")

    window = [r.energy for r in records[max(len(records) - max(cfg.steps // 4, 50), 0):]]
    energy, stderr = blocked_stats(np.array(window))
    return TrainResult(params, records, energy, stderr, batch)
