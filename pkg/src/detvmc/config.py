"""Run configuration: versioned schema, strict validation, content hashing.

Unknown keys anywhere in a config file are hard errors naming the offending
path, so experiment matrices cannot silently mistype a field.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np
import yaml

from .errors import ConfigError
from .system import Molecule, make_preset
from .trainer import TrainConfig

CONFIG_VERSION = 1

_ANSATZ_DEFAULTS = {
    "n_determinants": 1,
    "orbital_kind": "exponential",
    "readout": "linear",
    "jastrow_mode": "none",
    "domain": "linear",
    "alpha": None,            # null -> auto init (linlog only)
    "odd_hidden": [16, 16],
    "jastrow_hidden": [16, 16],
}

_TRAINING_DEFAULTS = {
    "batch_size": 512,
    "steps": 500,
    "mcmc_steps": 20,
    "burn_in": 500,
    "learning_rate": 1.0,
    "clip_mad": 5.0,
    "alpha_init_offset": 0.0,
}

_CHOICES = {
    "ansatz.orbital_kind": ("gaussian", "exponential"),
    "ansatz.readout": ("linear", "implicit", "explicit"),
    "ansatz.jastrow_mode": ("none", "standalone", "symmetric-odd"),
    "ansatz.domain": ("linear", "linlog"),
    "precision": ("single", "double"),
}


@dataclass
class RunConfig:
    molecule: Molecule
    ansatz: dict
    training: TrainConfig
    seed: int
    precision: str
    output_dir: str
    resolved: dict

    @property
    def dtype(self):
        return np.float32 if self.precision == "single" else np.float64

    @property
    def alpha_auto(self) -> bool:
        return self.ansatz["alpha"] is None and self.ansatz["domain"] == "linlog"

    def content_hash(self) -> str:
        return content_hash(self.resolved)


def content_hash(resolved: dict) -> str:
    blob = json.dumps(resolved, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha1(blob).hexdigest()


def _require_keys(d: dict, allowed: set[str], path: str) -> None:
    for key in d:
        if key not in allowed:
            raise ConfigError(f"unknown config key: {path}{key}")


def _typed(d: dict, key: str, kind, default, path: str):
    full = f"{path}{key}"
    value = d.get(key, default)
    if value is None:
        if default is None:
            return None
        raise ConfigError(f"{full}: may not be null")
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{full}: expected integer, got {value!r}")
    elif kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{full}: expected number, got {value!r}")
        value = float(value)
    elif kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"{full}: expected string, got {value!r}")
    elif kind is list:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{full}: expected list, got {value!r}")
        value = list(value)
    if full in _CHOICES and value not in _CHOICES[full]:
        raise ConfigError(f"{full}: must be one of {_CHOICES[full]}, got {value!r}")
    return value


def _parse_molecule(spec, path: str = "molecule") -> tuple[Molecule, object]:
    if isinstance(spec, str):
        try:
            return make_preset(spec), spec
        except KeyError as exc:
            raise ConfigError(f"{path}: {exc.args[0]}") from None
    if isinstance(spec, dict):
        _require_keys(spec, {"name", "nuclei", "n_up", "n_down"}, path + ".")
        try:
            nuclei = np.asarray(spec["nuclei"], dtype=np.float64)
            if nuclei.ndim != 2 or nuclei.shape[1] != 4:
                raise ConfigError(f"{path}.nuclei: expected rows of [x, y, z, charge]")
            mol = Molecule(str(spec.get("name", "custom")), nuclei[:, :3], nuclei[:, 3],
                           int(spec["n_up"]), int(spec["n_down"]))
        except KeyError as exc:
            raise ConfigError(f"{path}.{exc.args[0]}: required") from None
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return mol, {"name": mol.name, "nuclei": nuclei.tolist(),
                     "n_up": mol.n_up, "n_down": mol.n_down}
    raise ConfigError(f"{path}: expected a preset name or an inline geometry")


def from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    _require_keys(raw, {"config_version", "molecule", "ansatz", "training",
                        "seed", "precision", "output_dir"}, "")
    version = _typed(raw, "config_version", int, None, "")
    if version != CONFIG_VERSION:
        raise ConfigError(f"config_version: expected {CONFIG_VERSION}, got {version!r}")
    if "molecule" not in raw:
        raise ConfigError("molecule: required")
    mol, mol_resolved = _parse_molecule(raw["molecule"])

    a_raw = raw.get("ansatz") or {}
    if not isinstance(a_raw, dict):
        raise ConfigError("ansatz: expected a mapping")
    _require_keys(a_raw, set(_ANSATZ_DEFAULTS), "ansatz.")
    a = {}
    for key, default in _ANSATZ_DEFAULTS.items():
        kind = type(default) if default is not None else float
        a[key] = _typed(a_raw, key, kind, default, "ansatz.")
    if a["n_determinants"] < 1:
        raise ConfigError("ansatz.n_determinants: must be >= 1")
    for key in ("odd_hidden", "jastrow_hidden"):
        if not all(isinstance(w, int) and w >= 1 for w in a[key]):
            raise ConfigError(f"ansatz.{key}: widths must be positive integers")
    if a["alpha"] is None and a["domain"] == "linear":
        a["alpha"] = 0.0  # inert in the linear domain

    t_raw = raw.get("training") or {}
    if not isinstance(t_raw, dict):
        raise ConfigError("training: expected a mapping")
    _require_keys(t_raw, set(_TRAINING_DEFAULTS), "training.")
    t = {}
    for key, default in _TRAINING_DEFAULTS.items():
        t[key] = _typed(t_raw, key, type(default), default, "training.")
    for key in ("batch_size", "steps", "mcmc_steps", "burn_in"):
        if t[key] < (0 if key == "burn_in" else 1):
            raise ConfigError(f"training.{key}: out of range")
    training = TrainConfig(batch_size=t["batch_size"], steps=t["steps"],
                           mcmc_steps=t["mcmc_steps"], burn_in=t["burn_in"],
                           learning_rate=t["learning_rate"], clip_mad=t["clip_mad"],
                           alpha_init_offset=t["alpha_init_offset"])

    seed = _typed(raw, "seed", int, 0, "")
    precision = _typed(raw, "precision", str, "double", "")
    output_dir = _typed(raw, "output_dir", str, "runs/run", "")

    resolved = {
        "config_version": CONFIG_VERSION,
        "molecule": mol_resolved,
        "ansatz": dict(a),
        "training": dict(t),
        "seed": seed,
        "precision": precision,
        "output_dir": output_dir,
    }
    return RunConfig(mol, a, training, seed, precision, output_dir, resolved)


def load(path: str) -> RunConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    return from_dict(raw)


def dump_resolved(cfg: RunConfig, path: str) -> None:
    doc = dict(cfg.resolved)
    doc["content_hash"] = cfg.content_hash()
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)
