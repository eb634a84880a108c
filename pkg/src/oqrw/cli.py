"""Command-line front end.

Exit codes: 0 success, 1 domain refusal or validation failure, 2 I/O or schema error.
Every output starts with a header naming model, seed, n and version; CSV
outputs carry it as a ``#`` comment line, JSON outputs as a ``header`` object.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import json
import secrets
import subprocess
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .asymptotics import HypothesisViolation, InconsistentEquation, clt_parameters, sigma_squared_gamma
from .channel import ConvergenceError, invariant_state, validate_kraus
from .fourier import AliasingError, InversionError, MomentumGrid, characteristic_function_batch, invert
from .fourier import scaled_cf_limit_probe_batch
from .lattice import embed, validate_lattice
from .models import BUNDLED, ModelError, ModelSpec, bundled_model, load_model
from .walk import clt_statistic, distribution, evolve, sample_trajectories


class DomainError(Exception):
    """Refusal that maps to exit code 1."""


@dataclass
class RunConfig:
    command: str
    model: str
    steps: list[int] = field(default_factory=list)
    traj: int = 1000
    seed: int | None = None
    grid: int | None = None
    t: list[list[float]] = field(default_factory=list)
    out: str | None = None
    format: str = "csv"
    threads: int = 1

    @property
    def n(self) -> int:
        if len(self.steps) != 1:
            raise DomainError(f"{self.command} needs exactly one --steps value")
        return self.steps[0]


def version_string() -> str:
    try:
        res = subprocess.run(["git", "describe", "--tags", "--always", "--dirty"], capture_output=True,
                             text=True, timeout=5, cwd=Path(__file__).resolve().parent)
        if res.returncode == 0 and res.stdout.strip():
            return res.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return f"v{__version__}"


def fmt(x: float) -> str:
    return f"{x:.17g}"


def _complex_json(M) -> list:
    M = np.asarray(M, dtype=complex)
    return [[[float(z.real), float(z.imag)] for z in row] for row in M]


def resolve_model(ref: str) -> ModelSpec:
    if ref in BUNDLED:
        return bundled_model(ref)
    path = Path(ref)
    if not path.exists():
        raise FileNotFoundError(f"model {ref!r} is neither a bundled name ({', '.join(sorted(BUNDLED))}) nor a file")
    return load_model(path)


@contextlib.contextmanager
def _output(cfg: RunConfig):
    if cfg.out is None:
        yield sys.stdout
    else:
        with open(cfg.out, "w", newline="") as fh:
            yield fh


def _header(model: ModelSpec, cfg: RunConfig, n=None, seed=None) -> dict:
    return {"model": model.name, "seed": seed, "n": n, "version": version_string()}


def _header_line(h: dict) -> str:
    return "# " + " ".join(f"{k}={'' if v is None else v}" for k, v in h.items()) + "\n"


def _emit_json(cfg: RunConfig, payload: dict) -> None:
    with _output(cfg) as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def _emit_csv(cfg: RunConfig, header: dict, columns: list[str], rows) -> None:
    with _output(cfg) as fh:
        fh.write(_header_line(header))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        w.writerows(rows)


# --- commands --------------------------------------------------------------------------

def cmd_validate(cfg: RunConfig) -> int:
    model = resolve_model(cfg.model)
    found = validate_lattice(model.lattice, include_warnings=True) + validate_kraus(model.kraus)
    errors = [v for v in found if v.severity == "error"]
    if found:
        json.dump({"model": model.name, "violations": [v.to_dict() for v in found]}, sys.stderr, indent=2)
        sys.stderr.write("\n")
    if errors:
        return 1
    print(f"{model.name}: ok")
    return 0


def _gamma_crosscheck(K, params, n_dirs: int = 16) -> float:
    d = len(params.mean)
    rng = np.random.default_rng(0)
    dirs = list(np.eye(d)) + list(rng.normal(size=(n_dirs, d)))
    worst = 0.0
    for l in dirs:
        L_l = params.L_canonical[0] * l[0]
        for i in range(1, d):
            L_l = L_l + params.L_canonical[i] * l[i]
        sig = sigma_squared_gamma(K, params.rho_inf, params.mean, L_l, l)
        worst = max(worst, abs(float(l @ params.covariance @ l) - sig))
    return worst


def _clt_or_refuse(model: ModelSpec):
    report = invariant_state(model.kraus)
    try:
        return report, clt_parameters(model.kraus, report)
    except HypothesisViolation as exc:
        raise DomainError(json.dumps({"error": str(exc), "multiplicity": exc.multiplicity})) from exc


def cmd_clt(cfg: RunConfig) -> int:
    model = resolve_model(cfg.model)
    report, params = _clt_or_refuse(model)
    header = _header(model, cfg)
    if cfg.format == "csv":
        d = len(params.mean)
        _emit_csv(cfg, header, [f"c{j + 1}" for j in range(d)],
                  [[fmt(x) for x in row] for row in params.covariance])
        return 0
    payload = {
        "header": header,
        "rho_inf": {u: _complex_json(b) for u, b in report.state.blocks.items()},
        "unique": report.unique,
        "multiplicity": report.eigenvalue_one_multiplicity,
        "m": params.mean.tolist(),
        "Sigma": params.covariance.tolist(),
        "L_basis": [{u: _complex_json(b) for u, b in L.blocks.items()} for L in params.L_basis],
        "L_residuals": params.residuals,
        "gamma_crosscheck_max_error": _gamma_crosscheck(model.kraus, params),
    }
    _emit_json(cfg, payload)
    return 0


def _emit_distribution(cfg, model, header, probs: dict, extra: dict) -> None:
    lat = model.lattice
    keys = sorted(probs)
    d = lat.d
    if cfg.format == "json":
        sites = [{"x": list(x), "position": embed(lat, x).tolist(), "p": probs[x]} for x in keys]
        _emit_json(cfg, {"header": header, **extra, "sites": sites})
        return
    cols = [f"x{i + 1}" for i in range(d)] + [f"pos{i + 1}" for i in range(d)] + ["probability"]
    rows = [[*map(str, x), *(fmt(v) for v in embed(lat, x)), fmt(probs[x])] for x in keys]
    _emit_csv(cfg, header, cols, rows)


def cmd_evolve(cfg: RunConfig) -> int:
    model = resolve_model(cfg.model)
    n = cfg.n
    state = evolve(model.kraus, model.initial, n)
    _emit_distribution(cfg, model, _header(model, cfg, n=n), distribution(state),
                       {"pruned_mass": state.pruned_mass})
    return 0


def cmd_sample(cfg: RunConfig) -> int:
    model = resolve_model(cfg.model)
    n = cfg.n
    seed = cfg.seed if cfg.seed is not None else secrets.randbits(63)
    (site, rho0), = model.initial.support.items()
    sample = sample_trajectories(model.kraus, (rho0, site), n, cfg.traj, seed, threads=cfg.threads)
    header = _header(model, cfg, n=n, seed=seed)
    if cfg.format == "json":
        stat = clt_statistic(sample, model.lattice, np.zeros(model.lattice.d))
        payload = {
            "header": header,
            "n": n,
            "seed": seed,
            "trajectories": cfg.traj,
            "empirical_mean": stat.mean.tolist(),
            "empirical_cov": stat.covariance.tolist(),
            "pruned_mass": sample.excluded_mass,
        }
        _emit_json(cfg, payload)
        return 0
    d = model.lattice.d
    pos = embed(model.lattice, sample.final_positions)
    cols = ["trajectory"] + [f"x{i + 1}" for i in range(d)] + [f"pos{i + 1}" for i in range(d)] + ["vertex"]
    rows = ([i, *map(int, sample.final_positions[i]), *(fmt(v) for v in pos[i]), sample.vertices[sample.final_vertex[i]]]
            for i in range(len(sample)))
    _emit_csv(cfg, header, cols, rows)
    return 0


def cmd_dual(cfg: RunConfig) -> int:
    model = resolve_model(cfg.model)
    n = cfg.n
    d = model.lattice.d
    if cfg.t:
        ks = np.array(cfg.t, dtype=float)
    else:
        ks = MomentumGrid(model.lattice, cfg.grid or 8).nodes
    vals = characteristic_function_batch(model.kraus, model.initial, ks, n)
    cols = [f"k{i + 1}" for i in range(d)] + ["re", "im"]
    rows = [[*(fmt(v) for v in k), fmt(z.real), fmt(z.imag)] for k, z in zip(ks, vals)]
    if cfg.format == "json":
        _emit_json(cfg, {"header": _header(model, cfg, n=n), "columns": cols, "rows": rows})
    else:
        _emit_csv(cfg, _header(model, cfg, n=n), cols, rows)
    return 0


def cmd_invert(cfg: RunConfig) -> int:
    model = resolve_model(cfg.model)
    n = cfg.n
    grid = cfg.grid if cfg.grid is not None else 2 * n * max(model.lattice.max_step, 1) + 2
    try:
        res = invert(model.kraus, model.initial, n, grid, threads=cfg.threads)
    except AliasingError as exc:
        raise DomainError(f"{exc} (required N = {exc.required})") from exc
    _emit_distribution(cfg, model, _header(model, cfg, n=n), res.probabilities,
                       {"imag_residue": res.imag_residue, "grid": res.grid})
    return 0


def cmd_cf_limit(cfg: RunConfig) -> int:
    model = resolve_model(cfg.model)
    _, params = _clt_or_refuse(model)
    ts = np.array(cfg.t or [[1.0] + [0.0] * (model.lattice.d - 1)], dtype=float)
    if ts.shape[1] != model.lattice.d:
        raise DomainError(f"--t needs {model.lattice.d} components")
    steps = cfg.steps or [10_000]
    d = model.lattice.d
    rows = []
    for n in steps:
        if n < 1:
            raise DomainError("cf-limit needs n >= 1")
        vals = scaled_cf_limit_probe_batch(model.kraus, model.initial, ts, n)
        for t, z in zip(ts, vals):
            # Gaussian target built from the computed covariance; centred on the drift
            target = np.exp(-0.5 * t @ params.covariance @ t)
            centred = z * np.exp(-1j * np.sqrt(n) * float(t @ params.mean))
            rows.append([n, *(fmt(v) for v in t), fmt(centred.real), fmt(target), fmt(abs(centred - target))])
    cols = ["n"] + [f"t{i + 1}" for i in range(d)] + ["re_cf", "target", "abs_error"]
    header = _header(model, cfg, n=",".join(map(str, steps)))
    if cfg.format == "json":
        _emit_json(cfg, {"header": header, "columns": cols, "rows": rows})
    else:
        _emit_csv(cfg, header, cols, rows)
    return 0


COMMANDS = {
    "validate": cmd_validate,
    "clt": cmd_clt,
    "evolve": cmd_evolve,
    "sample": cmd_sample,
    "dual": cmd_dual,
    "invert": cmd_invert,
    "cf-limit": cmd_cf_limit,
}


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _vector(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="oqrw", description="Open quantum random walks on crystal lattices.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--model", required=True, help="model file or bundled name: " + ", ".join(sorted(BUNDLED)))
    p.add_argument("--steps", type=_int_list, default=[], help="number of steps n (cf-limit accepts a list)")
    p.add_argument("--traj", type=int, default=1000, help="number of trajectories for sample")
    p.add_argument("--seed", type=int, default=None, help="RNG seed; generated and recorded if omitted")
    p.add_argument("--grid", type=int, default=None, help="momentum grid points per dimension")
    p.add_argument("--t", type=_vector, action="append", default=[],
                   help="comma-separated vector, repeatable (k for dual, t for cf-limit)")
    p.add_argument("--out", default=None, help="output path (default stdout)")
    p.add_argument("--format", choices=["csv", "json"], default=None)
    p.add_argument("--threads", type=int, default=1)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    default_format = "json" if args.command in {"clt", "sample"} else "csv"
    cfg = RunConfig(args.command, args.model, args.steps, args.traj, args.seed, args.grid, args.t,
                    args.out, args.format or default_format, max(1, args.threads))
    try:
        return COMMANDS[cfg.command](cfg)
    except (ModelError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DomainError, InconsistentEquation, ConvergenceError, InversionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
