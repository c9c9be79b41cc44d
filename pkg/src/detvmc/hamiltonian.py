"""Molecular Hamiltonian terms, local energy, and the nuclear-cusp diagnostic.

The kinetic term is evaluated exclusively from log-domain jets via
T psi / psi = -1/2 (lap log|psi| + |grad log|psi||^2); raw psi values would
underflow for multi-electron systems.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ansatz
from .errors import SingularEvaluationError
from .jets import Jet, SignedLog, seed_coordinates
from .params import AnsatzParams
from .system import Molecule

COINCIDENCE_TOL = 1e-12


@dataclass
class LocalEnergyBreakdown:
    """Per-walker energy terms in Hartree; total = sum of parts."""

    kinetic: np.ndarray
    electron_nuclear: np.ndarray
    electron_electron: np.ndarray
    nuclear_nuclear: np.ndarray
    total: np.ndarray
    valid: np.ndarray  # False where the configuration was nodal or singular


def nuclear_repulsion(mol: Molecule) -> float:
    e = 0.0
    for i in range(mol.n_nuclei):
        for j in range(i + 1, mol.n_nuclei):
            d = np.linalg.norm(mol.positions[i] - mol.positions[j])
            e += mol.charges[i] * mol.charges[j] / d
    return float(e)


def potential_energy(r: np.ndarray, mol: Molecule, on_coincidence: str = "raise"):
    """Electron-nuclear, electron-electron, and nuclear-nuclear terms (B,).

    Exact particle coincidences either raise (default) or propagate as inf
    so batched callers can exclude the affected walkers.
    """
    r = np.asarray(r, dtype=np.float64)
    if r.ndim != 3:
        raise ValueError("positions must be (B, N, 3)")
    b, n, _ = r.shape

    d_en = np.linalg.norm(r[:, :, None, :] - mol.positions[None, None, :, :], axis=-1)
    iu, ju = np.triu_indices(n, k=1)
    d_ee = (np.linalg.norm(r[:, iu, :] - r[:, ju, :], axis=-1)
            if len(iu) else np.ones((b, 0)))

    coincident = np.any(d_en < COINCIDENCE_TOL, axis=(1, 2))
    if d_ee.shape[1]:
        coincident |= np.any(d_ee < COINCIDENCE_TOL, axis=1)
    if np.any(coincident) and on_coincidence == "raise":
        raise SingularEvaluationError("particle coincidence within 1e-12 Bohr")

    with np.errstate(divide="ignore"):
        en = -np.sum(mol.charges[None, None, :] / d_en, axis=(1, 2))
        ee = np.sum(1.0 / d_ee, axis=1) if d_ee.shape[1] else np.zeros(b)
    if np.any(coincident):
        en = np.where(coincident, np.nan, en)
        ee = np.where(coincident, np.nan, ee)
    nn = np.full(b, nuclear_repulsion(mol))
    return en, ee, nn


def kinetic_energy(logpsi: SignedLog) -> np.ndarray:
    """-1/2 (lap log|psi| + |grad log|psi||^2) per walker, in Hartree."""
    if not isinstance(logpsi.logabs, Jet):
        raise TypeError("kinetic_energy needs a jet-valued log|psi|")
    if np.any(logpsi.sign == 0.0):
        raise SingularEvaluationError("kinetic energy at a nodal configuration")
    la = logpsi.logabs
    return -0.5 * (la.lap + np.sum(la.grad * la.grad, axis=-1))


def local_energy(r: np.ndarray, mol: Molecule, p: AnsatzParams) -> LocalEnergyBreakdown:
    """E_L = H psi / psi per walker; nodal or coincident walkers come back
    flagged invalid with NaN totals rather than aborting the batch."""
    r = np.asarray(r, dtype=np.float64)
    en, ee, nn = potential_energy(r, mol, on_coincidence="inf")
    sl = ansatz.eval_psi(seed_coordinates(r), mol, p)
    la = sl.logabs
    valid = (sl.sign != 0.0) & np.isfinite(la.value)
    with np.errstate(invalid="ignore"):
        kin = -0.5 * (la.lap + np.sum(la.grad * la.grad, axis=-1))
    total = kin + en + ee + nn
    valid &= np.isfinite(total)
    total = np.where(valid, total, np.nan)
    return LocalEnergyBreakdown(kin, en, ee, nn, total, valid)


def cusp_scan(
    mol: Molecule,
    p: AnsatzParams,
    nucleus: int,
    direction: np.ndarray,
    radii: np.ndarray,
    background: np.ndarray | None = None,
    electron: int = 0,
    rng_seed: int = 0,
) -> list[tuple[float, float, bool]]:
    """Radial log-derivative -(d psi/d r)/psi approaching one nucleus.

    One electron walks along `direction` toward nucleus `nucleus`; the others
    stay at `background` positions (default: a deterministic halo around the
    nuclei).  Returns (radius, -dlog|psi|/dr, valid) per radius; entries that
    cross a node are flagged invalid.
    """
    direction = np.asarray(direction, dtype=np.float64)
    direction = direction / np.linalg.norm(direction)
    radii = np.asarray(radii, dtype=np.float64)
    if np.any(radii <= 0):
        raise ValueError("radii must be positive")
    n = mol.n_electrons
    if background is None:
        rng = np.random.default_rng(rng_seed)
        nuc = mol.positions[np.arange(n) % mol.n_nuclei]
        background = nuc + rng.normal(scale=0.7, size=(n, 3))
    background = np.asarray(background, dtype=np.float64)

    batch = np.repeat(background[None, :, :], len(radii), axis=0)
    batch[:, electron, :] = mol.positions[nucleus][None, :] + radii[:, None] * direction[None, :]

    sl = ansatz.eval_psi(seed_coordinates(batch), mol, p)
    grads = sl.logabs.grad.reshape(len(radii), n, 3)[:, electron, :]
    slope = -grads @ direction
    valid = (sl.sign != 0.0) & np.isfinite(sl.logabs.value)
    return [(float(rad), float(s), bool(v)) for rad, s, v in zip(radii, slope, valid)]
