"""Command-line surface: run, matrix, check, histogram, cusp."""

from __future__ import annotations

import csv
import itertools
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import __version__, ansatz, config, fdcheck, hamiltonian, sampler, theory, trainer
from .errors import ConfigError
from .jets import seed_coordinates
from .params import init_ansatz, save_checkpoint
from .system import make_preset

SUMMARY_FIELDS = ["cell_id", "system", "readout", "jastrow_mode", "domain", "alpha",
                  "energy", "stderr", "nan_flag"]


def _build_params(cfg: config.RunConfig):
    a = cfg.ansatz
    return init_ansatz(
        cfg.molecule,
        n_determinants=a["n_determinants"],
        orbital_kind=a["orbital_kind"],
        readout_kind=a["readout"],
        jastrow_mode=a["jastrow_mode"],
        domain=a["domain"],
        alpha=a["alpha"] if a["alpha"] is not None else 0.0,
        odd_hidden=tuple(a["odd_hidden"]),
        jastrow_hidden=tuple(a["jastrow_hidden"]),
        seed=cfg.seed,
        dtype=cfg.dtype,
    )


def run_experiment(resolved: dict) -> dict:
    """Execute one training run from a resolved config dict; returns the
    summary row and writes all artifacts under its output_dir."""
    cfg = config.from_dict(resolved)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    config.dump_resolved(cfg, str(out / "resolved_config.yaml"))

    params = _build_params(cfg)
    metrics_path = out / "metrics.jsonl"
    with open(metrics_path, "w") as fh:
        def on_record(rec: trainer.TrainRecord):
            fh.write(json.dumps({
                "step": rec.step, "energy": rec.energy, "stderr": rec.stderr,
                "accept_rate": rec.accept_rate, "alpha": rec.alpha,
                "wall_ms": rec.wall_ms,
            }) + "\n")

        result = trainer.train(cfg.molecule, params, cfg.training, cfg.seed,
                               on_record=on_record, alpha_auto=cfg.alpha_auto)

    save_checkpoint(str(out / "checkpoint.npz"), result.params,
                    meta={"config_hash": cfg.content_hash(), "steps": len(result.records)})

    nan_flag = result.aborted or not np.isfinite(result.energy)
    row = {
        "cell_id": cfg.content_hash()[:12],
        "system": cfg.molecule.name,
        "readout": cfg.ansatz["readout"],
        "jastrow_mode": cfg.ansatz["jastrow_mode"],
        "domain": cfg.ansatz["domain"],
        "alpha": result.params.readout.alpha,
        "energy": result.energy,
        "stderr": result.stderr,
        "nan_flag": nan_flag,
    }
    with open(out / "summary.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS)
        writer.writeheader()
        writer.writerow(row)
    row["records"] = [(r.step, r.energy, r.stderr) for r in result.records]
    row["aborted"] = result.aborted
    row["abort_reason"] = result.abort_reason
    return row


@click.group()
@click.version_option(__version__)
def main():
    """Determinant-stack VMC with sign-equivariant readouts."""


def _config_with_overrides(config_path: str, seed: int | None, out: str | None,
                           precision: str | None) -> dict:
    import yaml

    with open(config_path) as fh:
        raw = yaml.safe_load(fh)
    if seed is not None:
        raw["seed"] = seed
    if out is not None:
        raw["output_dir"] = out
    if precision is not None:
        raw["precision"] = precision
    return config.from_dict(raw).resolved


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=None, help="override config seed")
@click.option("--out", type=str, default=None, help="override output directory")
@click.option("--precision", type=click.Choice(["single", "double"]), default=None)
@click.option("--threads", type=int, default=1, help="accepted for interface parity; a single run is sequential")
def run(config_path, seed, out, precision, threads):
    """Train one configuration and write metrics, summary, and a checkpoint."""
    try:
        resolved = _config_with_overrides(config_path, seed, out, precision)
    except ConfigError as exc:
        raise click.ClickException(str(exc))
    row = run_experiment(resolved)
    if row["aborted"]:
        click.echo(f"NaN divergence: {row['abort_reason']}", err=True)
        sys.exit(3)
    click.echo(f"{row['system']}: E = {row['energy']:.6f} +/- {row['stderr']:.6f} Ha "
               f"(cell {row['cell_id']})")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--readouts", default="linear,implicit,explicit", show_default=True)
@click.option("--jastrow-modes", default="none,standalone,symmetric-odd", show_default=True)
@click.option("--domains", default="linear,linlog", show_default=True)
@click.option("--alphas", default="-2,0,2", show_default=True)
@click.option("--threads", type=int, default=1, help="parallel worker processes, one per cell")
@click.option("--out", type=str, default=None, help="override output directory")
@click.option("--seed", type=int, default=None)
def matrix(config_path, readouts, jastrow_modes, domains, alphas, threads, out, seed):
    """Run the readout x jastrow-mode x domain x alpha grid; one row per cell.

    A failing cell is flagged in its row instead of aborting the grid.
    """
    try:
        base = _config_with_overrides(config_path, seed, out, None)
    except ConfigError as exc:
        raise click.ClickException(str(exc))
    axes = {
        "readout": [s.strip() for s in readouts.split(",") if s.strip()],
        "jastrow_mode": [s.strip() for s in jastrow_modes.split(",") if s.strip()],
        "domain": [s.strip() for s in domains.split(",") if s.strip()],
        "alpha": [float(s) for s in alphas.split(",") if s.strip()],
    }
    if not all(axes.values()):
        raise click.ClickException("every axis needs at least one value")

    out_dir = Path(base["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    cells = []
    for ro, jm, dom, al in itertools.product(axes["readout"], axes["jastrow_mode"],
                                             axes["domain"], axes["alpha"]):
        resolved = json.loads(json.dumps(base))
        resolved["ansatz"]["readout"] = ro
        resolved["ansatz"]["jastrow_mode"] = jm
        resolved["ansatz"]["domain"] = dom
        resolved["ansatz"]["alpha"] = al
        cell_name = f"{ro}_{jm}_{dom}_a{al:+g}"
        resolved["output_dir"] = str(out_dir / "cells" / cell_name)
        try:
            config.from_dict(resolved)
        except ConfigError as exc:
            raise click.ClickException(f"cell {cell_name}: {exc}")
        cells.append((cell_name, resolved))

    results = run_matrix_cells(cells, threads)

    rows, trace_rows = [], []
    for cell_name, row in results:
        rows.append({k: row.get(k) for k in SUMMARY_FIELDS})
        for step, energy, stderr in row.get("records", []):
            trace_rows.append({"cell_id": row["cell_id"], "system": row["system"],
                               "readout": row["readout"], "jastrow_mode": row["jastrow_mode"],
                               "domain": row["domain"], "alpha": row["alpha"],
                               "step": step, "energy": energy, "stderr": stderr})
    with open(out_dir / "matrix_summary.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
    with open(out_dir / "matrix_long.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["cell_id", "system", "readout", "jastrow_mode",
                                                "domain", "alpha", "step", "energy", "stderr"])
        writer.writeheader()
        writer.writerows(trace_rows)
    n_nan = sum(1 for r in rows if r["nan_flag"])
    click.echo(f"matrix complete: {len(rows)} cells, {n_nan} flagged; "
               f"summary at {out_dir / 'matrix_summary.csv'}")


def _matrix_worker(item):
    cell_name, resolved = item
    try:
        row = run_experiment(resolved)
    except Exception as exc:  # a cell must never abort the matrix
        cfg = config.from_dict(resolved)
        row = {"cell_id": cfg.content_hash()[:12], "system": cfg.molecule.name,
               "readout": resolved["ansatz"]["readout"],
               "jastrow_mode": resolved["ansatz"]["jastrow_mode"],
               "domain": resolved["ansatz"]["domain"], "alpha": resolved["ansatz"]["alpha"],
               "energy": float("nan"), "stderr": float("nan"), "nan_flag": True,
               "records": [], "aborted": True, "abort_reason": f"{type(exc).__name__}: {exc}"}
    return cell_name, row


def run_matrix_cells(cells, threads: int):
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(_matrix_worker, cells))
    return [_matrix_worker(item) for item in cells]


@main.command()
@click.option("--scope", type=click.Choice(["all", "theorem1", "theorem2", "definitions",
                                            "gradients", "zero-variance"]), default="all")
@click.option("--trials", type=int, default=1000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--random-v", is_flag=True, help="use a random projection vector instead of ones")
@click.option("--out", type=click.Path(), default=None, help="also write the JSON reports here")
def check(scope, trials, seed, random_v, out):
    """Numerical verification suites; exit 0 iff every check passes."""
    reports = run_checks(scope, trials=trials, seed=seed, random_v=random_v)
    payload = json.dumps([r.to_dict() for r in reports], indent=2)
    click.echo(payload)
    if out:
        Path(out).write_text(payload)
    bad = [r for r in reports if not r.passed]
    if bad:
        click.echo(f"{len(bad)} check(s) failed", err=True)
        sys.exit(1)


def _fixture_params(readout, jastrow_mode, domain, alpha, seed=0, mol=None):
    mol = mol or make_preset("LiH")
    return mol, init_ansatz(mol, n_determinants=4, orbital_kind="gaussian",
                            readout_kind=readout, jastrow_mode=jastrow_mode, domain=domain,
                            alpha=alpha, odd_hidden=(8, 8), jastrow_hidden=(8, 8), seed=seed)


def run_checks(scope: str, trials: int = 1000, seed: int = 0, random_v: bool = False):
    """Assemble the CheckReports for one scope (or all of them)."""
    rng = np.random.default_rng(seed)
    reports = []

    if scope in ("all", "theorem1"):
        for readout in ("implicit", "explicit"):
            for domain in ("linear", "linlog"):
                for alpha in (-2.0, 0.0, 2.0):
                    mol, p = _fixture_params(readout, "none", domain, alpha, seed=seed)
                    f = theory.readout_as_function(p)
                    k = p.dets.n_determinants
                    v = rng.standard_normal(k) if random_v else np.ones(k)
                    rep = theory.check_theorem1(f, v, n_trials=trials, seed=seed)
                    rep.name = f"odd-reconstruction[{readout},{domain},alpha={alpha:+g}]"
                    reports.append(rep)

    if scope in ("all", "theorem2"):
        for jastrow_mode in ("none", "symmetric-odd"):
            mol, p = _fixture_params("explicit", jastrow_mode, "linlog", -2.0, seed=seed)
            k = p.dets.n_determinants
            v = rng.standard_normal(k) if random_v else np.ones(k)
            rep = theory.check_jhat(mol, p, v, n_trials=trials, seed=seed)
            rep.name = f"jastrow-factorization[{jastrow_mode}]"
            reports.append(rep)

    if scope in ("all", "definitions"):
        mol, p = _fixture_params("implicit", "symmetric-odd", "linlog", -2.0, seed=seed)
        reports.append(theory.check_definitions(
            lambda r: np.asarray(ansatz.eval_jastrow(r, mol, p.jastrow, "scalar"))[:, 0],
            "symmetric", mol, n_trials=min(trials, 300), seed=seed))
        sign_log = lambda r: ansatz.eval_logabs(r, mol, p)
        def psi_signed(r):
            s, la = sign_log(r)
            return s * np.exp(la - la.mean())  # common scale keeps values representable
        rep = theory.check_definitions(psi_signed, "antisymmetric", mol,
                                       n_trials=min(trials, 300), seed=seed)
        rep.name = "definition-antisymmetric[psi]"
        reports.append(rep)
        square = theory.check_definitions(lambda x: np.sum(x**2, axis=-1), "odd", 4,
                                          n_trials=min(trials, 300), seed=seed)
        square.name = "definition-odd[x^2-canary-must-fail]"
        if square.passed:
            square.failures = 1  # the canary existing to fail has itself failed
            square.counterexample = {"reason": "x^2 wrongly accepted as odd"}
        else:
            square.failures = 0
            square.counterexample = None
        reports.append(square)

    if scope in ("all", "gradients"):
        reports.append(gradient_check_report(n_eval=min(trials, 100), seed=seed))

    if scope in ("all", "zero-variance"):
        reports.append(zero_variance_report(n_samples=max(trials, 1000), seed=seed))

    return reports


def gradient_check_report(n_eval: int = 100, seed: int = 0) -> theory.CheckReport:
    """Jet gradients/Laplacians and parameter adjoints vs finite differences
    on random LiH configurations."""
    mol, p = _fixture_params("implicit", "symmetric-odd", "linlog", -2.0, seed=seed)
    rng = np.random.default_rng(seed)
    r = theory.random_configurations(mol, n_eval, rng, scale=0.8)

    def logabs_of(pos):
        return ansatz.eval_logabs(pos, mol, p)[1]

    def grad_of(pos):
        sl = ansatz.eval_psi(seed_coordinates(pos), mol, p)
        return sl.logabs.grad

    sl = ansatz.eval_psi(seed_coordinates(r), mol, p)
    grad_rel = fdcheck.max_relative_error(sl.logabs.grad, fdcheck.fd_gradient(logabs_of, r),
                                          floor=1e-6)
    lap_rel = fdcheck.max_relative_error(sl.logabs.lap, fdcheck.fd_laplacian(grad_of, r),
                                         floor=1e-6)

    adjoint = trainer.grad_logpsi_params(r[:1], mol, p)
    fd = fdcheck.fd_param_gradient(lambda q: float(logabs_of_params(r[:1], mol, q)), p)
    adj_rel = max(fdcheck.max_relative_error(adjoint[k], fd[k], floor=1e-6) for k in fd)

    failures = int(grad_rel >= 1e-6) + int(lap_rel >= 1e-6) + int(adj_rel >= 1e-5)
    return theory.CheckReport("derivative-fd", trials=n_eval,
                              max_abs_error=float("nan"),
                              max_rel_error=max(grad_rel, lap_rel, adj_rel),
                              failures=failures, tolerance=1e-5,
                              counterexample=None if failures == 0 else
                              {"grad_rel": grad_rel, "lap_rel": lap_rel, "adjoint_rel": adj_rel})


def logabs_of_params(r, mol, p):
    return ansatz.eval_logabs(r, mol, p)[1][0]


def zero_variance_report(n_samples: int = 10000, seed: int = 0) -> theory.CheckReport:
    """Hydrogen with the exact orbital: Var(E_L) must vanish to double precision."""
    mol = make_preset("H")
    p = init_ansatz(mol, n_determinants=1, orbital_kind="exponential",
                    readout_kind="linear", seed=seed)
    p.dets.up_log_exps[:] = 0.0
    p.dets.up_coeffs[:] = 1.0
    batch = sampler.init_walkers(mol, 256, seed, lambda pos: ansatz.eval_logabs(pos, mol, p))
    sampler.equilibrate(batch, lambda pos: ansatz.eval_logabs(pos, mol, p), 200)
    samples = []
    while len(samples) * batch.size < n_samples:
        sampler.mcmc_sweep(batch, lambda pos: ansatz.eval_logabs(pos, mol, p), 5)
        samples.append(hamiltonian.local_energy(batch.positions, mol, p).total)
    e = np.concatenate(samples)[:n_samples]
    var = float(np.var(e))
    max_dev = float(np.max(np.abs(e + 0.5)))
    failures = int(var >= 1e-20) + int(max_dev >= 1e-10)
    return theory.CheckReport("zero-variance-hydrogen", trials=len(e),
                              max_abs_error=max_dev, max_rel_error=var,
                              failures=failures, tolerance=1e-20)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--domains", default="log,linear,linlog", show_default=True)
@click.option("--samples", type=int, default=20000, show_default=True)
@click.option("--bins", type=int, default=60, show_default=True)
@click.option("--out", type=str, default=None)
@click.option("--seed", type=int, default=None)
def histogram(config_path, domains, samples, bins, out, seed):
    """Equilibrate walkers and write amplitude histograms per viewing domain."""
    try:
        resolved = _config_with_overrides(config_path, seed, out, None)
    except ConfigError as exc:
        raise click.ClickException(str(exc))
    cfg = config.from_dict(resolved)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    signs, logabs, alpha = collect_amplitudes(cfg, samples)
    for domain in [s.strip() for s in domains.split(",") if s.strip()]:
        edges, counts = sampler.amplitude_histogram(signs, logabs, domain, alpha=alpha,
                                                    n_bins=bins)
        path = out_dir / f"amplitude_{domain}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin_left", "bin_right", "count"])
            for lo, hi, c in zip(edges[:-1], edges[1:], counts):
                writer.writerow([f"{lo:.12g}", f"{hi:.12g}", int(c)])
        click.echo(f"wrote {path}")


def collect_amplitudes(cfg: config.RunConfig, n_samples: int,
                       thin: int = 5) -> tuple[np.ndarray, np.ndarray, float]:
    """Equilibrated psi^2 samples of (sign, log|psi|); alpha is auto-placed
    for linlog configs with alpha null."""
    params = _build_params(cfg)
    mol = cfg.molecule

    def logpsi(pos):
        return ansatz.eval_logabs(pos, mol, params)

    batch = sampler.init_walkers(mol, min(cfg.training.batch_size, 512), cfg.seed, logpsi)
    sampler.equilibrate(batch, logpsi, max(cfg.training.burn_in, 200))
    if cfg.alpha_auto:
        params.readout.alpha = ansatz.alpha_init(
            ansatz.max_logdets(batch.positions, mol, params.dets),
            cfg.training.alpha_init_offset)
        sampler.equilibrate(batch, logpsi, 100)

    signs, logabs = [], []
    while sum(len(s) for s in signs) < n_samples:
        sampler.mcmc_sweep(batch, logpsi, thin)
        signs.append(batch.sign.copy())
        logabs.append(batch.logabs.copy())
    return (np.concatenate(signs)[:n_samples], np.concatenate(logabs)[:n_samples],
            params.readout.alpha)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--nucleus", type=int, default=0, show_default=True)
@click.option("--direction", default="1,0,0", show_default=True)
@click.option("--out", type=str, default=None)
@click.option("--seed", type=int, default=None)
def cusp(config_path, nucleus, direction, out, seed):
    """Scan -(d psi/d r)/psi along an approach to one nucleus."""
    try:
        resolved = _config_with_overrides(config_path, seed, out, None)
    except ConfigError as exc:
        raise click.ClickException(str(exc))
    cfg = config.from_dict(resolved)
    if not 0 <= nucleus < cfg.molecule.n_nuclei:
        raise click.ClickException(f"nucleus index {nucleus} out of range")
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    params = _build_params(cfg)
    dirvec = np.array([float(s) for s in direction.split(",")])
    radii = np.geomspace(1e-1, 1e-6, 11)
    rows = hamiltonian.cusp_scan(cfg.molecule, params, nucleus, dirvec, radii,
                                 rng_seed=cfg.seed)
    path = out_dir / f"cusp_nucleus{nucleus}.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["radius", "minus_dlogpsi_dr", "valid"])
        for radius, slope, valid in rows:
            writer.writerow([f"{radius:.6e}", f"{slope:.12g}", valid])
    click.echo(f"wrote {path}")


if __name__ == "__main__":
    main()
