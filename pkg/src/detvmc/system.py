"""Molecular systems: nuclei, charges, spin-resolved electron counts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Molecule:
    """Nuclear geometry (Bohr) plus spin-resolved electron counts."""

    name: str
    positions: np.ndarray  # (M, 3)
    charges: np.ndarray    # (M,)
    n_up: int
    n_down: int

    def __post_init__(self):
        object.__setattr__(self, "positions", np.asarray(self.positions, dtype=np.float64))
        object.__setattr__(self, "charges", np.asarray(self.charges, dtype=np.float64))
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ValueError("nuclei positions must be (M, 3)")
        if len(self.charges) != len(self.positions):
            raise ValueError("one charge per nucleus required")
        if np.sum(self.charges) < 1 or np.any(self.charges <= 0):
            raise ValueError("nuclear charges must be positive")
        if self.n_up < 0 or self.n_down < 0 or self.n_up + self.n_down < 1:
            raise ValueError("need at least one electron")
        m = len(self.positions)
        for i in range(m):
            for j in range(i + 1, m):
                if np.linalg.norm(self.positions[i] - self.positions[j]) < 1e-9:
                    raise ValueError(f"nuclei {i} and {j} coincide")

    @property
    def n_electrons(self) -> int:
        return self.n_up + self.n_down

    @property
    def n_nuclei(self) -> int:
        return len(self.charges)


def _diatomic(name: str, z1: float, z2: float, distance: float, n_up: int, n_down: int) -> Molecule:
    pos = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, distance]])
    return Molecule(name, pos, np.array([z1, z2]), n_up, n_down)


def make_preset(name: str) -> Molecule:
    """Build a named system; diatomic bond lengths are in Bohr."""
    key = name.lower().replace("-", "_")
    if key == "h":
        return Molecule("H", np.zeros((1, 3)), np.array([1.0]), 1, 0)
    if key == "he":
        return Molecule("He", np.zeros((1, 3)), np.array([2.0]), 1, 1)
    if key == "h2":
        return _diatomic("H2", 1.0, 1.0, 1.4, 1, 1)
    if key == "lih":
        return _diatomic("LiH", 3.0, 1.0, 3.015, 2, 2)
    if key == "li2":
        return _diatomic("Li2", 3.0, 3.0, 5.051, 3, 3)
    if key == "n2":
        return _diatomic("N2", 7.0, 7.0, 2.068, 7, 7)
    if key == "n2_distorted":
        return _diatomic("N2-distorted", 7.0, 7.0, 4.0, 7, 7)
    raise KeyError(f"unknown molecule preset: {name!r}")


PRESET_NAMES = ("H", "He", "H2", "LiH", "Li2", "N2", "N2-distorted")
