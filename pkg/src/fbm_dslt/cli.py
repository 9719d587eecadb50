"""Command-line entry point: ``fbm-dslt {simulate,estimate,constants,experiment}``.

Settings resolve with precedence CLI flag > ``DSLT_*`` environment variable >
``--config`` JSON file > built-in default.  Every run writes a manifest
next to its outputs holding the resolved settings and SHA-256 checksums;
``--from-manifest`` replays a run and verifies the checksums.

Exit codes: 0 on success, 1 when an experiment has a failing check or a
replay does not reproduce, 2 on usage or domain errors.
"""
import argparse
from dataclasses import asdict, dataclass, field
import datetime
import hashlib
import json
import logging
import os
from pathlib import Path
import sys
import tempfile

import numpy as np

from . import __version__, quadrature
from .dslt import alpha_batch, chaos_batch, scale_alpha, scale_chaos
from .errors import DomainError
from .experiments import ExperimentConfig, Tolerances, plot_report, run_experiment
from .fbm_model import HurstModel
from .fbm_sim import GridSpec, dump_header, read_paths, sample_paths, write_paths

log = logging.getLogger("fbm_dslt")

ENV_PREFIX = "DSLT_"
MANIFEST_SCHEMA = "fbm-dslt-manifest/1"
EXPERIMENT_KINDS = ("alpha-clt", "chaos-l2", "chaos-clt")

DEFAULTS = {
    "hurst": None,
    "horizon": 1.0,
    "steps": 2048,
    "paths": 2000,
    "eps": [1e-1, 1e-2, 1e-3],
    "q": None,
    "seed": 0,
    "method": "circulant",
    "workers": 1,
    "out_dir": ".",
    "format": "json",
    "plot": False,
    "tolerances": {},
    "resolution_waiver": False,
}

# settings that may come from the environment, with their parsers
_ENV = {
    "hurst": float,
    "horizon": float,
    "steps": int,
    "paths": int,
    "eps": lambda s: [float(v) for v in s.split(",")],
    "q": lambda s: [int(v) for v in s.split(",")],
    "seed": int,
    "method": str,
    "workers": int,
    "out_dir": str,
    "format": str,
    "plot": lambda s: s.lower() in ("1", "true", "yes"),
}


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    config: dict
    version: str
    timestamp: str
    master_seed: int
    outputs: dict = field(default_factory=dict)
    schema: str = MANIFEST_SCHEMA

    def write(self, path):
        _atomic_write(path, json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")

    @classmethod
    def read(cls, path):
        with open(path) as fh:
            d = json.load(fh)
        if d.get("schema") != MANIFEST_SCHEMA:
            raise UsageError(f"{path}: not a run manifest")
        return cls(**d)


def _atomic_write(path, data):
    path = Path(path)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--hurst", type=float, help="Hurst parameter H")
    common.add_argument("--horizon", type=float, help="time horizon T (default 1)")
    common.add_argument("--steps", type=int, help="grid steps n (default 2048)")
    common.add_argument("--paths", type=int, help="number of paths (default 2000)")
    common.add_argument("--eps", type=float, action="append", help="regularisation; repeatable")
    common.add_argument("--q", type=int, action="append", help="chaos index; repeatable")
    common.add_argument("--seed", type=int, help="master seed (default 0)")
    common.add_argument("--method", choices=["circulant", "cholesky"])
    common.add_argument("--workers", type=int, help="worker processes; results do not depend on it")
    common.add_argument("--out-dir", dest="out_dir")
    common.add_argument("--format", choices=["json", "csv"])
    common.add_argument("--plot", action="store_true", default=None, help="write SVG plots")
    common.add_argument("--config", help="JSON file of settings")
    common.add_argument("--from-manifest", dest="from_manifest", help="replay a previous run")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="fbm-dslt",
        description="Derivative of self-intersection local time of fBm: simulation, "
        "estimators, exact constants and limit-theorem experiments.",
        epilog=f"Environment overrides: {ENV_PREFIX}HURST, {ENV_PREFIX}STEPS, "
        f"{ENV_PREFIX}EPS=1e-1,1e-2, ... (CLI > environment > --config > defaults).",
    )
    # replay form: fbm-dslt --from-manifest M [--out-dir D] [--workers N]
    parser.add_argument("--from-manifest", dest="top_manifest", help="replay a previous run")
    parser.add_argument("--out-dir", dest="top_out_dir")
    parser.add_argument("--workers", dest="top_workers", type=int)
    sub = parser.add_subparsers(dest="command")
    sub.add_parser("simulate", parents=[common], help="write a matrix of fBm paths")
    est = sub.add_parser("estimate", parents=[common], help="alpha_eps and chaos projections per path")
    est.add_argument("--input", help="path dump from 'simulate' instead of fresh paths")
    sub.add_parser("constants", parents=[common], help="sigma^2, sigma_q^2, bar sigma_q^2 and exact variances")
    exp = sub.add_parser("experiment", parents=[common], help="run a limit-theorem experiment")
    exp.add_argument("kind", choices=EXPERIMENT_KINDS)
    return parser


def resolve_config(args, environ=None):
    """Merge defaults, config file, environment and flags (later wins)."""
    environ = os.environ if environ is None else environ
    cfg = {k: (list(v) if isinstance(v, list) else v) for k, v in DEFAULTS.items()}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            from_file = json.load(fh)
        unknown = set(from_file) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown keys in {args.config}: {sorted(unknown)}")
        cfg.update(from_file)
    for key, parse in _ENV.items():
        raw = environ.get(ENV_PREFIX + key.upper())
        if raw is not None:
            try:
                cfg[key] = parse(raw)
            except ValueError as exc:
                raise UsageError(f"{ENV_PREFIX}{key.upper()}={raw!r}: {exc}") from exc
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if getattr(args, "kind", None):
        cfg["kind"] = args.kind
    if getattr(args, "input", None):
        cfg["input"] = args.input
    if cfg["hurst"] is None:
        raise UsageError("--hurst is required")
    if cfg["workers"] < 1:
        raise UsageError("--workers must be at least 1")
    return cfg


def _model_grid(cfg):
    return HurstModel(cfg["hurst"], cfg["horizon"]), GridSpec(cfg["steps"], cfg["horizon"])


def cmd_simulate(cfg, out):
    model, grid = _model_grid(cfg)
    matrix = sample_paths(model, grid, cfg["seed"], cfg["paths"], cfg["method"])
    header = dump_header(model, grid, cfg["seed"], cfg["method"], cfg["paths"])
    fmt = "csv" if cfg["format"] == "csv" else "npz"
    path = out / f"paths.{fmt}"
    tmp = out / f".paths.{fmt}.tmp"
    write_paths(tmp, matrix, header, fmt)
    os.replace(tmp, path)
    return [path], 0


def cmd_estimate(cfg, out):
    model, grid = _model_grid(cfg)
    if cfg.get("input"):
        matrix, header = read_paths(cfg["input"])
        if header["H"] != model.H or header["n"] != grid.n or header["T"] != grid.T:
            raise UsageError("--input was simulated with a different H, T or n")
    else:
        matrix = sample_paths(model, grid, cfg["seed"], cfg["paths"], cfg["method"])
    eps_list = cfg["eps"]
    cols = {}
    for eps in eps_list:
        raw = alpha_batch(matrix, grid, eps)
        cols[f"alpha_raw[eps={eps:g}]"] = raw
        cols[f"alpha_scaled[eps={eps:g}]"] = scale_alpha(model, eps, raw)
    combos = [(q, eps) for q in cfg["q"] or [] for eps in eps_list]
    if combos:
        chaos = chaos_batch(matrix, grid, model.H, combos)
        for j, (q, eps) in enumerate(combos):
            cols[f"J{2 * q - 1}_raw[eps={eps:g}]"] = chaos[:, j]
            cols[f"J{2 * q - 1}_scaled[eps={eps:g}]"] = scale_chaos(model, eps, chaos[:, j])
    if cfg["format"] == "csv":
        path = out / "estimates.csv"
        names = list(cols)
        table = np.column_stack([np.arange(matrix.shape[0])] + [cols[k] for k in names])
        lines = [",".join(["path"] + names)]
        lines += [",".join([str(int(r[0]))] + [repr(float(v)) for v in r[1:]]) for r in table]
        _atomic_write(path, "\n".join(lines) + "\n")
    else:
        path = out / "estimates.json"
        doc = {"schema": "fbm-dslt-estimates/1", "columns": {k: v.tolist() for k, v in cols.items()}}
        _atomic_write(path, json.dumps(doc, sort_keys=True) + "\n")
    return [path], 0


def _constants_for_q(model, q):
    """Names of the q-dependent limit constants whose window contains H."""
    model.check_not_critical(q)
    hi = (4.0 * q - 3.0) / (4.0 * q - 2.0)
    names = []
    if 2.0 / 3.0 < model.H < 0.75:
        names.append("sigma_q_bar_squared")
    if 0.75 < model.H < hi:
        names.append("sigma_q_squared")
    if not names:
        raise DomainError(
            f"no q = {q} limit constant exists at H = {model.H}: the L2 limit needs "
            f"2/3 < H < 3/4 and sigma_q^2 needs 3/4 < H < {hi:.6g}"
        )
    return names


def cmd_constants(cfg, out):
    model, _ = _model_grid(cfg)
    q_list = cfg["q"] or []
    for q in q_list:
        _constants_for_q(model, q)
    table = quadrature.constants_table(model.H, model.T, cfg["eps"], q_list)
    # drop q-constants that are simply outside their window; explicit errors were raised above
    table["entries"] = [e for e in table["entries"] if "error" not in e or e["name"] == "sigma_squared"]
    if cfg["format"] == "csv":
        path = out / "constants.csv"
        keys = ["name", "q", "eps", "value", "abs_err_est", "evaluations", "converged", "error"]
        lines = [",".join(keys)]
        for e in table["entries"]:
            lines.append(",".join("" if e.get(k) is None else str(e.get(k)) for k in keys))
        _atomic_write(path, "\n".join(lines) + "\n")
    else:
        path = out / "constants.json"
        _atomic_write(path, json.dumps(table, indent=2, sort_keys=True) + "\n")
    return [path], 0


def experiment_config(cfg):
    model, grid = _model_grid(cfg)
    return ExperimentConfig(
        model=model,
        grid=grid,
        eps_schedule=tuple(sorted(cfg["eps"], reverse=True)),
        n_paths=cfg["paths"],
        q_list=tuple(cfg["q"] or [2]),
        master_seed=cfg["seed"],
        method=cfg["method"],
        tolerances=Tolerances(**cfg["tolerances"]),
        resolution_waiver=cfg["resolution_waiver"],
    )


def cmd_experiment(cfg, out):
    kind = cfg["kind"]
    report = run_experiment(kind, experiment_config(cfg), workers=cfg["workers"])
    stem = f"report-{kind}"
    paths = []
    if cfg["format"] == "csv":
        path = out / f"{stem}.csv"
        _atomic_write(path, report.to_csv())
    else:
        path = out / f"{stem}.json"
        _atomic_write(path, report.to_json())
    paths.append(path)
    if cfg["plot"]:
        svg = out / f"{stem}.svg"
        plot_report(report, svg)
        paths.append(svg)
    for name, ok in report.flags.items():
        log.info("%-40s %s", name, "PASS" if ok else "FAIL")
    return paths, 0 if report.passed else 1


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "constants": cmd_constants,
    "experiment": cmd_experiment,
}


def execute(command, cfg):
    """Run a resolved command; returns ``(manifest, exit_code)``."""
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    paths, code = COMMANDS[command](cfg, out)
    manifest = RunManifest(
        command=command,
        config=cfg,
        version=__version__,
        timestamp=datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
        master_seed=cfg["seed"],
        outputs={p.name: sha256_file(p) for p in paths},
    )
    manifest.write(out / f"manifest-{command}.json")
    return manifest, code


def replay(manifest_path, out_dir=None, workers=None):
    """Re-run a manifest; returns ``(new_manifest, exit_code)``, exit 1 on checksum mismatch."""
    old = RunManifest.read(manifest_path)
    cfg = dict(old.config)
    if out_dir is not None:
        cfg["out_dir"] = out_dir
    if workers is not None:
        cfg["workers"] = workers
    new, code = execute(old.command, cfg)
    mismatched = sorted(k for k, v in old.outputs.items() if new.outputs.get(k) != v)
    for name in mismatched:
        log.error("replay of %s differs from the manifest checksum", name)
    return new, 1 if mismatched else code


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    manifest = args.top_manifest or getattr(args, "from_manifest", None)
    if args.command is None and manifest is None:
        parser.error("a command or --from-manifest is required")
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING, format="%(message)s"
    )
    try:
        if manifest:
            out_dir = getattr(args, "out_dir", None) or args.top_out_dir
            workers = getattr(args, "workers", None) or args.top_workers
            _, code = replay(manifest, out_dir, workers)
            return code
        cfg = resolve_config(args)
        _, code = execute(args.command, cfg)
        return code
    except (UsageError, DomainError) as exc:
        print(f"fbm-dslt: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
