"""Metropolis-Hastings sampling of walkers from psi^2.

All-electron gaussian proposals; each walker owns an independent counter-based
RNG stream, so trajectories are bitwise deterministic for a given seed no
matter how evaluation work is scheduled.  Reductions over walkers always run
in walker-index order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .system import Molecule

# (B, N, 3) positions -> (sign (B,), log|psi| (B,))
LogPsiFn = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]

SIGMA_MIN, SIGMA_MAX = 1e-3, 10.0


@dataclass
class WalkerBatch:
    """B electron configurations with cached wave function values."""

    positions: np.ndarray          # (B, N, 3) Bohr
    sign: np.ndarray               # (B,)
    logabs: np.ndarray             # (B,)
    rngs: list                     # B independent generators
    step_sigma: float = 0.4
    accept_count: int = 0
    proposal_count: int = 0

    @property
    def size(self) -> int:
        return self.positions.shape[0]

    @property
    def acceptance_rate(self) -> float:
        return self.accept_count / max(self.proposal_count, 1)


def _nucleus_slots(mol: Molecule) -> np.ndarray:
    """Assign each electron a nucleus index, proportional to charge
    (largest-remainder rounding, deterministic)."""
    n = mol.n_electrons
    frac = mol.charges / mol.charges.sum() * n
    counts = np.floor(frac).astype(int)
    remainder = frac - counts
    for idx in np.argsort(-remainder)[: n - counts.sum()]:
        counts[idx] += 1
    return np.repeat(np.arange(mol.n_nuclei), counts)


def init_walkers(mol: Molecule, batch_size: int, seed: int,
                 logpsi_fn: LogPsiFn | None = None, step_sigma: float = 0.4) -> WalkerBatch:
    """Electrons start at their assigned nucleus plus unit gaussian noise."""
    if batch_size < 1:
        raise ValueError("batch size must be >= 1")
    seq = np.random.SeedSequence(seed)
    rngs = [np.random.default_rng(child) for child in seq.spawn(batch_size)]

    slots = _nucleus_slots(mol)
    centers = mol.positions[slots]  # (N, 3)
    positions = np.stack([centers + rng.normal(size=centers.shape) for rng in rngs])

    sign = np.zeros(batch_size)
    logabs = np.full(batch_size, -np.inf)
    batch = WalkerBatch(positions, sign, logabs, rngs, step_sigma=step_sigma)
    if logpsi_fn is not None:
        refresh(batch, logpsi_fn)
    return batch


def refresh(batch: WalkerBatch, logpsi_fn: LogPsiFn) -> WalkerBatch:
    """Recompute cached (sign, log|psi|), e.g. after a parameter update."""
    batch.sign, batch.logabs = logpsi_fn(batch.positions)
    return batch


def mcmc_sweep(batch: WalkerBatch, logpsi_fn: LogPsiFn, n_steps: int = 1) -> WalkerBatch:
    """Advance every walker by `n_steps` all-electron Metropolis moves.

    Acceptance is min(1, exp(2 dlog|psi|)); proposals landing on a node
    (sign 0) or failing to evaluate are always rejected.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    b = batch.size
    n = batch.positions.shape[1]

    # each walker reads only its own stream; draws for the whole sweep are
    # taken up front so the python loop runs once per walker, not per step
    noise = np.empty((b, n_steps, n, 3))
    uniform = np.empty((b, n_steps))
    for i, rng in enumerate(batch.rngs):
        noise[i] = rng.normal(size=(n_steps, n, 3))
        uniform[i] = rng.uniform(size=n_steps)

    for step in range(n_steps):
        proposal = batch.positions + batch.step_sigma * noise[:, step]
        new_sign, new_logabs = logpsi_fn(proposal)
        with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
            log_ratio = 2.0 * (new_logabs - batch.logabs)
            ok = (new_sign != 0.0) & np.isfinite(new_logabs)
            accept = ok & (np.log(uniform[:, step]) < log_ratio)
        batch.positions = np.where(accept[:, None, None], proposal, batch.positions)
        batch.logabs = np.where(accept, new_logabs, batch.logabs)
        batch.sign = np.where(accept, new_sign, batch.sign)
        batch.accept_count += int(np.sum(accept))
        batch.proposal_count += b
    return batch


def adapt_step_size(batch: WalkerBatch) -> WalkerBatch:
    """Multiplicative update steering acceptance toward 0.5; resets counters."""
    if batch.proposal_count == 0:
        raise ValueError("no proposals recorded since last adaptation")
    rate = batch.acceptance_rate
    batch.step_sigma = float(np.clip(batch.step_sigma * np.exp(rate - 0.5), SIGMA_MIN, SIGMA_MAX))
    batch.accept_count = 0
    batch.proposal_count = 0
    return batch


def equilibrate(batch: WalkerBatch, logpsi_fn: LogPsiFn, n_sweeps: int,
                adapt_every: int = 20) -> WalkerBatch:
    """Burn-in with periodic step-size adaptation; sigma is frozen afterwards."""
    refresh(batch, logpsi_fn)
    for sweep in range(n_sweeps):
        mcmc_sweep(batch, logpsi_fn, 1)
        if adapt_every and (sweep + 1) % adapt_every == 0:
            adapt_step_size(batch)
    batch.accept_count = 0
    batch.proposal_count = 0
    return batch


def amplitude_histogram(signs: np.ndarray, logabs: np.ndarray, domain: str,
                        alpha: float = 0.0, n_bins: int = 60):
    """Histogram of sampled wave function amplitudes in one viewing domain.

    domain 'log' bins log10|psi|, 'linear' bins |psi| (honest underflow),
    'linlog' bins softplus(log|psi| + alpha).  Node samples are dropped.
    Returns (bin_edges, counts).
    """
    logabs = np.asarray(logabs, dtype=np.float64)
    keep = (np.asarray(signs) != 0.0) & np.isfinite(logabs)
    la = logabs[keep]
    if la.size == 0:
        raise ValueError("no valid amplitudes to histogram")
    if domain == "log":
        data = la / np.log(10.0)
    elif domain == "linear":
        with np.errstate(over="ignore"):
            data = np.exp(la)
        data = data[np.isfinite(data)]
    elif domain == "linlog":
        data = np.log1p(np.exp(-np.abs(la + alpha))) + np.maximum(la + alpha, 0.0)
    else:
        raise ValueError(f"unknown histogram domain {domain!r}")
    counts, edges = np.histogram(data, bins=n_bins)
    return edges, counts
