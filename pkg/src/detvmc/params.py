"""Wave function parameter containers, initialization, and (de)serialization.

Everything trainable is a numpy array leaf inside nested dataclasses, so a
single tree walk supports flattening for the optimizer, wrapping leaves in
tape variables for the adjoint pass, and checkpointing.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .system import Molecule
from .tape import Var

ORBITAL_KINDS = ("gaussian", "exponential")
READOUT_KINDS = ("linear", "implicit", "explicit")
JASTROW_MODES = ("none", "standalone", "symmetric-odd")
DOMAINS = ("linear", "linlog")

CHECKPOINT_VERSION = 1


@dataclass
class MLPParams:
    """Weight/bias stacks for one multilayer perceptron.

    ``biases`` is None for bias-free chains (a bias term would break the
    sign equivariance of the implicit readout).
    """

    weights: list = field(default_factory=list)
    biases: list | None = None


@dataclass
class DeterminantStackParams:
    """K determinants of analytic orbitals, spin-factorized.

    Orbital j of determinant k evaluates sum_m c[k,j,m] * radial(zeta[k,j,m], |r - R_m|)
    where the radial kind is shared by the whole stack.  Exponents are stored
    as logs so unconstrained optimizer updates keep them positive.
    """

    kind: str
    up_coeffs: np.ndarray      # (K, n_up, M)
    up_log_exps: np.ndarray
    down_coeffs: np.ndarray    # (K, n_down, M)
    down_log_exps: np.ndarray
    weights: np.ndarray        # (K,) linear-readout weights

    @property
    def n_determinants(self) -> int:
        return self.up_coeffs.shape[0]


@dataclass
class JastrowParams:
    """Shared symmetric trunk plus one linear head per consumer slot."""

    trunk: MLPParams                 # 4M features -> hidden
    scalar_w: np.ndarray             # -> 1, standalone log-space multiplier
    scalar_b: np.ndarray
    gate_in_w: np.ndarray            # -> K, input gate of the explicit readout
    gate_in_b: np.ndarray
    gate_out_w: np.ndarray           # -> 1, output gate
    gate_out_b: np.ndarray
    layer_ws: list = field(default_factory=list)   # -> implicit layer widths
    layer_bs: list = field(default_factory=list)


@dataclass
class OddReadoutParams:
    """How the K determinant values are combined into one wave function value."""

    kind: str                        # linear | implicit | explicit
    jastrow_mode: str                # none | standalone | symmetric-odd
    domain: str                      # linear | linlog
    alpha: float                     # linlog shift; inert in the linear domain
    implicit_weights: list = field(default_factory=list)   # bias-free chain K -> ... -> 1
    explicit: MLPParams = field(default_factory=MLPParams)  # biased chain K -> ... -> 1


@dataclass
class AnsatzParams:
    dets: DeterminantStackParams
    jastrow: JastrowParams
    readout: OddReadoutParams


# ---------------------------------------------------------------------------
# initialization


def _mlp_init(rng: np.random.Generator, widths: list[int], bias: bool, dtype) -> MLPParams:
    ws, bs = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        ws.append((rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)).astype(dtype))
        bs.append(np.zeros(fan_out, dtype=dtype))
    return MLPParams(ws, bs if bias else None)


def _orbital_grid(k: int, n: int, m: int, offset: int, total: int) -> np.ndarray:
    # log-uniform grid over [0.1, 5]; strided assignment spreads the grid
    # across orbitals within each determinant so no spin block is singular
    grid = np.geomspace(0.1, 5.0, max(total, 2))
    idx = offset + np.arange(k * n * m)
    vals = grid[idx % len(grid)]
    return vals.reshape(n, m, k).transpose(2, 0, 1) if k * n * m else vals.reshape(k, n, m)


def init_ansatz(
    mol: Molecule,
    *,
    n_determinants: int = 1,
    orbital_kind: str = "exponential",
    readout_kind: str = "linear",
    jastrow_mode: str = "none",
    domain: str = "linear",
    alpha: float = 0.0,
    odd_hidden: tuple = (16, 16),
    jastrow_hidden: tuple = (16, 16),
    seed: int = 0,
    dtype=np.float64,
) -> AnsatzParams:
    """Fresh parameters for a molecule.

    Orbital exponents come from a deterministic log-uniform grid in [0.1, 5];
    network weights are 1/sqrt(fan-in) normals; determinant weights are 1/K;
    Jastrow gate heads start at the multiplicative identity.
    """
    if orbital_kind not in ORBITAL_KINDS:
        raise ValueError(f"orbital kind must be one of {ORBITAL_KINDS}")
    if readout_kind not in READOUT_KINDS:
        raise ValueError(f"readout must be one of {READOUT_KINDS}")
    if jastrow_mode not in JASTROW_MODES:
        raise ValueError(f"jastrow_mode must be one of {JASTROW_MODES}")
    if domain not in DOMAINS:
        raise ValueError(f"domain must be one of {DOMAINS}")

    rng = np.random.default_rng(seed)
    k, m = n_determinants, mol.n_nuclei
    n_up, n_down = mol.n_up, mol.n_down

    total = k * (n_up + n_down) * m
    up_exps = _orbital_grid(k, n_up, m, 0, total)
    down_exps = _orbital_grid(k, n_down, m, k * n_up * m, total)
    dets = DeterminantStackParams(
        kind=orbital_kind,
        up_coeffs=np.ones((k, n_up, m), dtype=dtype),
        up_log_exps=np.log(up_exps).astype(dtype),
        down_coeffs=np.ones((k, n_down, m), dtype=dtype),
        down_log_exps=np.log(down_exps).astype(dtype) if n_down else np.zeros((k, 0, m), dtype=dtype),
        weights=np.full(k, 1.0 / k, dtype=dtype),
    )

    odd_widths = [k, *odd_hidden, 1]
    readout = OddReadoutParams(
        kind=readout_kind,
        jastrow_mode=jastrow_mode,
        domain=domain,
        alpha=float(alpha),
        implicit_weights=[
            (rng.standard_normal((fi, fo)) / np.sqrt(fi)).astype(dtype)
            for fi, fo in zip(odd_widths[:-1], odd_widths[1:])
        ],
        explicit=_mlp_init(rng, odd_widths, bias=True, dtype=dtype),
    )

    trunk_widths = [4 * m, *jastrow_hidden]
    h = trunk_widths[-1]

    def head(out_dim: int, identity: bool) -> tuple[np.ndarray, np.ndarray]:
        w = (rng.standard_normal((h, out_dim)) * 0.01 / np.sqrt(h)).astype(dtype)
        b = np.full(out_dim, 1.0 if identity else 0.0, dtype=dtype)
        return w, b

    sw, sb = head(1, identity=False)       # standalone head: exp(0) = 1 at init
    giw, gib = head(k, identity=True)      # gates start near the identity
    gow, gob = head(1, identity=True)
    layer_ws, layer_bs = [], []
    for width in odd_widths[1:]:
        lw, lb = head(width, identity=True)
        layer_ws.append(lw)
        layer_bs.append(lb)

    jastrow = JastrowParams(
        trunk=_mlp_init(rng, trunk_widths, bias=True, dtype=dtype),
        scalar_w=sw, scalar_b=sb,
        gate_in_w=giw, gate_in_b=gib,
        gate_out_w=gow, gate_out_b=gob,
        layer_ws=layer_ws, layer_bs=layer_bs,
    )
    return AnsatzParams(dets=dets, jastrow=jastrow, readout=readout)


# ---------------------------------------------------------------------------
# tree utilities


def _walk(obj, path: str, leaf_fn):
    """Rebuild a params tree, applying leaf_fn(path, array) to ndarray leaves."""
    if isinstance(obj, np.ndarray):
        return leaf_fn(path, obj)
    if dataclasses.is_dataclass(obj):
        updates = {}
        for f in dataclasses.fields(obj):
            updates[f.name] = _walk(getattr(obj, f.name), f"{path}.{f.name}" if path else f.name, leaf_fn)
        return dataclasses.replace(obj, **updates)
    if isinstance(obj, list):
        return [_walk(v, f"{path}.{i}", leaf_fn) for i, v in enumerate(obj)]
    return obj


def flatten(params: AnsatzParams) -> dict[str, np.ndarray]:
    """Ordered {dotted path: array} view of every trainable leaf."""
    leaves: dict[str, np.ndarray] = {}

    def visit(path, arr):
        leaves[path] = arr
        return arr

    _walk(params, "", visit)
    return leaves


def unflatten(params: AnsatzParams, leaves: dict[str, np.ndarray]) -> AnsatzParams:
    """New params tree with leaves replaced by `leaves` (missing keys error)."""
    return _walk(params, "", lambda path, arr: leaves[path])


def wrap_in_vars(params: AnsatzParams) -> tuple[AnsatzParams, dict[str, Var]]:
    """Parallel tree with tape variables at the leaves, for the adjoint pass."""
    var_leaves: dict[str, Var] = {}

    def visit(path, arr):
        v = Var(arr)
        var_leaves[path] = v
        return v

    wrapped = _walk(params, "", visit)
    return wrapped, var_leaves


def collect_grads(var_leaves: dict[str, Var]) -> dict[str, np.ndarray]:
    return {path: (v.grad if v.grad is not None else np.zeros_like(v.value))
            for path, v in var_leaves.items()}


# ---------------------------------------------------------------------------
# checkpointing


def save_checkpoint(path: str, params: AnsatzParams, meta: dict) -> None:
    """Versioned .npz checkpoint: parameter leaves plus a JSON meta record."""
    leaves = flatten(params)
    structure = {
        "version": CHECKPOINT_VERSION,
        "orbital_kind": params.dets.kind,
        "readout_kind": params.readout.kind,
        "jastrow_mode": params.readout.jastrow_mode,
        "domain": params.readout.domain,
        "alpha": params.readout.alpha,
        "shapes": {k: list(v.shape) for k, v in leaves.items()},
        "meta": meta,
    }
    arrays = {f"leaf::{k}": v for k, v in leaves.items()}
    arrays["structure_json"] = np.frombuffer(json.dumps(structure).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path: str, template: AnsatzParams) -> tuple[AnsatzParams, dict]:
    """Restore parameters into a structurally matching template."""
    data = np.load(path)
    structure = json.loads(bytes(data["structure_json"].tobytes()).decode())
    if structure["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {structure['version']}")
    leaves = {k[len("leaf::"):]: data[k] for k in data.files if k.startswith("leaf::")}
    restored = unflatten(template, leaves)
    restored.readout.alpha = float(structure["alpha"])
    return restored, structure["meta"]
