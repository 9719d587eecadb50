"""Monte Carlo experiments for the limit theorems, with auditable reports.

Each experiment simulates ``n_paths`` fBm paths, evaluates the pathwise
functionals at every ``eps`` of the schedule on the *same* paths, and puts
the sample moments next to their exact quadrature counterparts and limit
constants.  Pass flags are recomputed from the stored numbers by
:func:`evaluate_checks`, so a report can be audited without rerunning it.

Paths are processed in fixed chunks of :data:`CHUNK` consecutive indices.
Chunk boundaries do not depend on the worker count and results are folded in
chunk order, which makes reports bit-identical for any ``workers``.
"""
from concurrent.futures import ProcessPoolExecutor
import csv
from dataclasses import asdict, dataclass, field, fields
import io
import json
import math
import warnings

import numpy as np
from scipy import stats

from .dslt import ResolutionWarning, alpha_batch, chaos_batch
from .errors import DomainError
from .fbm_model import ChaosKernelSpec, HurstModel
from .fbm_sim import METHODS, GridSpec, sample_paths
from . import quadrature

CHUNK = 64
REPORT_SCHEMA = "fbm-dslt-report/1"
MIN_NORMALITY_SAMPLES = 8


@dataclass(frozen=True)
class Tolerances:
    """Named pass/fail thresholds; all are engineering choices.

    ``cauchy_decrease_factor`` is the factor by which each successive L2
    difference must shrink (1.0 means strictly decreasing).
    """

    variance_rel_tol: float = 0.2
    variance_ratio_low: float = 0.8
    variance_ratio_high: float = 1.25
    normality_alpha: float = 0.01
    cauchy_decrease_factor: float = 1.0
    mean_se_mult: float = 4.0
    closure_se_mult: float = 4.0
    kurtosis_abs_max: float = 0.3
    limit_rel_tol: float = 0.1
    quadrature_limit_eps: float = 1e-4
    quadrature_rtol: float = 1e-6


@dataclass(frozen=True)
class ExperimentConfig:
    model: HurstModel
    grid: GridSpec
    eps_schedule: tuple = (1e-1, 1e-2, 1e-3)
    n_paths: int = 2000
    q_list: tuple = (2,)
    master_seed: int = 0
    method: str = "circulant"
    tolerances: Tolerances = field(default_factory=Tolerances)
    resolution_waiver: bool = False

    def __post_init__(self):
        eps = tuple(float(e) for e in self.eps_schedule)
        object.__setattr__(self, "eps_schedule", eps)
        object.__setattr__(self, "q_list", tuple(int(q) for q in self.q_list))
        if not eps:
            raise DomainError("eps_schedule is empty")
        if any(e <= 0 for e in eps):
            raise DomainError("every eps must be positive")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise DomainError(f"eps_schedule must be strictly decreasing, got {eps}")
        if self.n_paths < 100:
            raise DomainError(f"n_paths must be at least 100, got {self.n_paths}")
        if self.method not in METHODS:
            raise DomainError(f"method must be one of {METHODS}")
        if abs(self.model.T - self.grid.T) > 1e-12 * self.grid.T:
            raise DomainError("model and grid horizons differ")
        if not 0 <= self.master_seed < 2**64:
            raise DomainError("master_seed must fit in 64 bits")
        coarse = [e for e in eps if self.grid.dt > math.sqrt(e)]
        if coarse and not self.resolution_waiver:
            raise DomainError(
                f"dt = {self.grid.dt:.3g} exceeds sqrt(eps) for eps in {coarse}; "
                "refine the grid or set resolution_waiver"
            )

    def to_dict(self):
        return {
            "H": self.model.H,
            "T": self.model.T,
            "n": self.grid.n,
            "eps_schedule": list(self.eps_schedule),
            "n_paths": self.n_paths,
            "q_list": list(self.q_list),
            "master_seed": self.master_seed,
            "method": self.method,
            "tolerances": asdict(self.tolerances),
            "resolution_waiver": self.resolution_waiver,
        }

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(Tolerances)}
        unknown = set(d.get("tolerances", {})) - known
        if unknown:
            raise DomainError(f"unknown tolerances: {sorted(unknown)}")
        return cls(
            model=HurstModel(d["H"], d.get("T", 1.0)),
            grid=GridSpec(d["n"], d.get("T", 1.0)),
            eps_schedule=tuple(d["eps_schedule"]),
            n_paths=d["n_paths"],
            q_list=tuple(d.get("q_list", (2,))),
            master_seed=d.get("master_seed", 0),
            method=d.get("method", "circulant"),
            tolerances=Tolerances(**d.get("tolerances", {})),
            resolution_waiver=d.get("resolution_waiver", False),
        )


@dataclass(frozen=True)
class NormalityStats:
    ks_stat: float
    ks_pvalue: float
    jb_stat: float
    jb_pvalue: float
    skewness: float
    excess_kurtosis: float


def normality_stats(samples):
    """KS against the fitted normal, Jarque-Bera, skewness and excess kurtosis.

    The KS p-value uses the Kolmogorov distribution although mean and
    variance are estimated from the same sample (the Lilliefors situation),
    which makes it conservative.  Samples are sorted first, so the result does
    not depend on their order.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    if x.size < MIN_NORMALITY_SAMPLES:
        raise DomainError(f"need at least {MIN_NORMALITY_SAMPLES} samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise DomainError("samples contain non-finite values")
    sd = x.std(ddof=1)
    if not sd > 0:
        raise DomainError("samples have zero variance")
    ks = stats.kstest(x, "norm", args=(x.mean(), sd))
    jb = stats.jarque_bera(x)
    return NormalityStats(
        ks_stat=float(ks.statistic),
        ks_pvalue=float(ks.pvalue),
        jb_stat=float(jb.statistic),
        jb_pvalue=float(jb.pvalue),
        skewness=float(stats.skew(x)),
        excess_kurtosis=float(stats.kurtosis(x)),
    )


@dataclass
class MomentRow:
    kind: str
    q: int
    eps: float
    n_paths: int
    scale: float
    mean: float
    mean_se: float
    variance: float
    variance_se: float
    variance_ci_low: float
    variance_ci_high: float
    skewness: float
    excess_kurtosis: float
    ks_stat: float
    ks_pvalue: float
    jb_stat: float
    jb_pvalue: float
    target_name: str = ""
    target: float = None
    exact_variance: float = None
    exact_abs_err: float = None
    exact_converged: bool = None
    terminal: bool = False
    checks: dict = field(default_factory=dict)


@dataclass
class CauchyRow:
    q: int
    eps_from: float
    eps_to: float
    n_paths: int
    mean_sq_diff: float
    mean_sq_diff_se: float
    exact: float = None
    exact_converged: bool = None
    checks: dict = field(default_factory=dict)


@dataclass
class LimitRow:
    q: int
    eps: float
    exact: float
    exact_converged: bool
    target_name: str
    target: float
    checks: dict = field(default_factory=dict)


@dataclass
class ExperimentReport:
    experiment: str
    config: dict
    rows: list
    cauchy: list = field(default_factory=list)
    limits: list = field(default_factory=list)
    targets: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(self.flags.values())

    def to_dict(self):
        return {
            "schema": REPORT_SCHEMA,
            "experiment": self.experiment,
            "config": self.config,
            "targets": self.targets,
            "rows": [asdict(r) for r in self.rows],
            "cauchy": [asdict(r) for r in self.cauchy],
            "limits": [asdict(r) for r in self.limits],
            "flags": self.flags,
            "passed": self.passed,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self):
        """Per-eps moment rows; checks are flattened to ``check_<name>`` columns."""
        names = [f.name for f in fields(MomentRow) if f.name != "checks"]
        check_names = sorted({k for r in self.rows for k in r.checks})
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(names + [f"check_{k}" for k in check_names])
        for r in self.rows:
            d = asdict(r)
            w.writerow([_csv_cell(d[k]) for k in names] + [_csv_cell(r.checks.get(k)) for k in check_names])
        return buf.getvalue()


def _csv_cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def report_from_dict(d):
    """Rebuild an :class:`ExperimentReport` from :meth:`ExperimentReport.to_dict` output."""
    if d.get("schema") != REPORT_SCHEMA:
        raise DomainError(f"unsupported report schema {d.get('schema')!r}")
    return ExperimentReport(
        experiment=d["experiment"],
        config=d["config"],
        rows=[MomentRow(**r) for r in d["rows"]],
        cauchy=[CauchyRow(**r) for r in d["cauchy"]],
        limits=[LimitRow(**r) for r in d["limits"]],
        targets=d["targets"],
        flags=d["flags"],
    )


# --- simulation -----------------------------------------------------------


def _chunk_job(job):
    H, T, n, method, seed, start, count, alpha_eps, combos, waiver = job
    model, grid = HurstModel(H, T), GridSpec(n, T)
    paths = sample_paths(model, grid, seed, count, method, start=start)
    with warnings.catch_warnings():
        if waiver:
            warnings.simplefilter("ignore", ResolutionWarning)
        alpha = np.empty((count, len(alpha_eps)))
        for j, eps in enumerate(alpha_eps):
            alpha[:, j] = alpha_batch(paths, grid, eps)
        chaos = chaos_batch(paths, grid, H, combos) if combos else np.empty((count, 0))
    return alpha, chaos


def simulate_functionals(cfg, alpha_eps=(), chaos_combos=(), workers=1):
    """Raw alpha_eps and chaos projections for paths ``0 .. n_paths - 1``.

    Returns ``(alpha, chaos)`` of shapes ``(n_paths, len(alpha_eps))`` and
    ``(n_paths, len(chaos_combos))``.  Every column uses the same paths.
    """
    jobs = [
        (
            cfg.model.H,
            cfg.model.T,
            cfg.grid.n,
            cfg.method,
            cfg.master_seed,
            start,
            min(CHUNK, cfg.n_paths - start),
            tuple(alpha_eps),
            tuple(chaos_combos),
            cfg.resolution_waiver,
        )
        for start in range(0, cfg.n_paths, CHUNK)
    ]
    if workers <= 1 or len(jobs) == 1:
        parts = [_chunk_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_chunk_job, jobs))
    return np.vstack([p[0] for p in parts]), np.vstack([p[1] for p in parts])


# --- rows and checks ---------------------------------------------------------


def moment_row(samples, kind, q, eps, scale):
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    mean = float(x.mean())
    var = float(x.var(ddof=1))
    centred = x - mean
    m2 = float(np.mean(centred**2))
    m4 = float(np.mean(centred**4))
    var_se = math.sqrt(max(m4 - m2 * m2, 0.0) / n)
    ns = normality_stats(x)
    return MomentRow(
        kind=kind,
        q=q,
        eps=eps,
        n_paths=n,
        scale=scale,
        mean=mean,
        mean_se=math.sqrt(var / n),
        variance=var,
        variance_se=var_se,
        variance_ci_low=var - 1.96 * var_se,
        variance_ci_high=var + 1.96 * var_se,
        **asdict(ns),
    )


def _attach_exact(row, res, scale):
    row.exact_variance = res.value * scale * scale
    row.exact_abs_err = res.abs_err_est * scale * scale
    row.exact_converged = bool(res.converged)


def evaluate_checks(report, tol):
    """Fill every ``checks`` dict and ``report.flags`` from stored numbers only."""
    flags = {}
    for r in report.rows:
        c = {"mean_zero": abs(r.mean) <= tol.mean_se_mult * r.mean_se}
        if r.exact_variance is not None:
            c["closure"] = abs(r.variance - r.exact_variance) <= tol.closure_se_mult * r.variance_se
        null = r.kind == "chaos" and r.q == 1
        if null or (r.terminal and report.experiment in ("alpha-clt", "chaos-clt")):
            c["ks_normal"] = r.ks_pvalue > tol.normality_alpha
        if r.terminal and report.experiment in ("alpha-clt", "chaos-clt") and not null:
            c["jb_normal"] = r.jb_pvalue > tol.normality_alpha
            ratio = r.variance / r.target
            if report.experiment == "alpha-clt":
                c["variance_target"] = abs(ratio - 1.0) <= tol.variance_rel_tol
            else:
                c["variance_target"] = tol.variance_ratio_low <= ratio <= tol.variance_ratio_high
                c["kurtosis_small"] = abs(r.excess_kurtosis) <= tol.kurtosis_abs_max
        r.checks = c = {k: bool(v) for k, v in c.items()}
        for k, v in c.items():
            key = f"{r.kind}{r.q}:{k}" if r.kind == "chaos" else f"alpha:{k}"
            flags[key] = flags.get(key, True) and bool(v)
    if report.experiment == "chaos-clt":
        for q in sorted({r.q for r in report.rows}):
            ks = [abs(r.excess_kurtosis) for r in report.rows if r.q == q]
            flags[f"chaos{q}:kurtosis_decreasing"] = bool(all(b < a for a, b in zip(ks, ks[1:])))
    prev = {}
    for r in report.cauchy:
        c = {}
        if r.q in prev:
            c["decreasing"] = r.mean_sq_diff * tol.cauchy_decrease_factor < prev[r.q]
        if r.exact is not None:
            c["closure"] = abs(r.mean_sq_diff - r.exact) <= tol.closure_se_mult * r.mean_sq_diff_se
        prev[r.q] = r.mean_sq_diff
        r.checks = c = {k: bool(v) for k, v in c.items()}
        for k, v in c.items():
            key = f"cauchy{r.q}:{k}"
            flags[key] = flags.get(key, True) and bool(v)
    for r in report.limits:
        r.checks = {"limit": bool(r.exact_converged and abs(r.exact / r.target - 1.0) <= tol.limit_rel_tol)}
        flags[f"limit{r.q}"] = r.checks["limit"]
    report.flags = flags
    return report


# --- experiments -----------------------------------------------------------


def clt_alpha_experiment(cfg, workers=1):
    """Scaled alpha_eps against N(0, sigma^2), with the first chaos as null pipeline."""
    model, tol = cfg.model, cfg.tolerances
    model.check_not_critical(only=(2.0 / 3.0,))
    model.require_window(2.0 / 3.0, 1.0, "the CLT for alpha_eps")
    s2 = quadrature.sigma_squared(model)
    combos = [(1, e) for e in cfg.eps_schedule]
    alpha, chaos = simulate_functionals(cfg, cfg.eps_schedule, combos, workers)
    rows = []
    last = len(cfg.eps_schedule) - 1
    for j, eps in enumerate(cfg.eps_schedule):
        scale = eps ** (1.5 - 1.0 / model.H)
        v = quadrature.exact_alpha_variance(model, eps, tol.quadrature_rtol)[3]
        row = moment_row(alpha[:, j] * scale, "alpha", 0, eps, scale)
        row.target_name, row.target, row.terminal = "sigma_squared", s2, j == last
        _attach_exact(row, v, scale)
        rows.append(row)
        null = moment_row(chaos[:, j] * scale, "chaos", 1, eps, scale)
        null.target_name, null.target = "sigma_squared", s2
        _attach_exact(null, quadrature.exact_first_chaos_variance(model, eps, tol.quadrature_rtol), scale)
        rows.append(null)
    report = ExperimentReport("alpha-clt", cfg.to_dict(), rows, targets={"sigma_squared": s2})
    return evaluate_checks(report, tol)


def _chaos_qs(cfg):
    if not cfg.q_list or any(q < 2 for q in cfg.q_list):
        raise DomainError(f"chaos experiments need q >= 2, got {cfg.q_list}")
    return cfg.q_list


def chaos_l2_experiment(cfg, workers=1):
    """L2 Cauchy behaviour of the unscaled chaos components on common paths."""
    model, tol = cfg.model, cfg.tolerances
    qs = _chaos_qs(cfg)
    targets, limits = {}, []
    for q in qs:
        model.check_not_critical(q)
        model.require_window(2.0 / 3.0, 0.75, "L2 convergence of the chaos components")
    for q in qs:
        bar = quadrature.sigma_q_bar_squared(ChaosKernelSpec(q, 1.0, model), tol.quadrature_rtol)
        targets[f"sigma_bar_{q}_squared"] = bar.value
        at = quadrature.exact_chaos_variance(
            ChaosKernelSpec(q, tol.quadrature_limit_eps, model), tol.quadrature_rtol
        )
        limits.append(
            LimitRow(q, tol.quadrature_limit_eps, at.value, bool(at.converged), f"sigma_bar_{q}_squared", bar.value)
        )
    combos = [(q, e) for q in qs for e in cfg.eps_schedule]
    _, chaos = simulate_functionals(cfg, (), combos, workers)
    rows, cauchy = [], []
    k = len(cfg.eps_schedule)
    for i, q in enumerate(qs):
        block = chaos[:, i * k : (i + 1) * k]
        for j, eps in enumerate(cfg.eps_schedule):
            row = moment_row(block[:, j], "chaos", q, eps, 1.0)
            row.target_name = f"sigma_bar_{q}_squared"
            row.target = targets[row.target_name]
            row.terminal = j == k - 1
            _attach_exact(row, quadrature.exact_chaos_variance(ChaosKernelSpec(q, eps, model), tol.quadrature_rtol), 1.0)
            rows.append(row)
        for j in range(k - 1):
            d2 = (block[:, j] - block[:, j + 1]) ** 2
            exact = quadrature.exact_chaos_l2_distance(
                model, q, cfg.eps_schedule[j], cfg.eps_schedule[j + 1], tol.quadrature_rtol
            )
            cauchy.append(
                CauchyRow(
                    q=q,
                    eps_from=cfg.eps_schedule[j],
                    eps_to=cfg.eps_schedule[j + 1],
                    n_paths=cfg.n_paths,
                    mean_sq_diff=float(np.mean(np.sort(d2))),
                    mean_sq_diff_se=float(d2.std(ddof=1) / math.sqrt(d2.size)),
                    exact=exact.value,
                    exact_converged=bool(exact.converged),
                )
            )
    report = ExperimentReport("chaos-l2", cfg.to_dict(), rows, cauchy, limits, targets)
    return evaluate_checks(report, tol)


def clt_chaos_experiment(cfg, workers=1):
    """Scaled chaos components against N(0, sigma_q^2), with a fourth-moment check."""
    model, tol = cfg.model, cfg.tolerances
    qs = _chaos_qs(cfg)
    targets = {}
    for q in qs:
        model.check_not_critical(q)
        hi = (4.0 * q - 3.0) / (4.0 * q - 2.0)
        model.require_window(0.75, hi, f"the CLT of the order-{2 * q - 1} chaos component")
    for q in qs:
        targets[f"sigma_{q}_squared"] = quadrature.sigma_q_squared(
            ChaosKernelSpec(q, 1.0, model), tol.quadrature_rtol
        ).value
    combos = [(q, e) for q in qs for e in cfg.eps_schedule]
    _, chaos = simulate_functionals(cfg, (), combos, workers)
    rows = []
    k = len(cfg.eps_schedule)
    for i, q in enumerate(qs):
        for j, eps in enumerate(cfg.eps_schedule):
            scale = eps ** (1.0 - 0.75 / model.H)
            row = moment_row(chaos[:, i * k + j] * scale, "chaos", q, eps, scale)
            row.target_name = f"sigma_{q}_squared"
            row.target = targets[row.target_name]
            row.terminal = j == k - 1
            _attach_exact(row, quadrature.exact_chaos_variance(ChaosKernelSpec(q, eps, model), tol.quadrature_rtol), scale)
            rows.append(row)
    report = ExperimentReport("chaos-clt", cfg.to_dict(), rows, targets=targets)
    return evaluate_checks(report, tol)


EXPERIMENTS = {
    "alpha-clt": clt_alpha_experiment,
    "chaos-l2": chaos_l2_experiment,
    "chaos-clt": clt_chaos_experiment,
}


def run_experiment(kind, cfg, workers=1):
    if kind not in EXPERIMENTS:
        raise DomainError(f"unknown experiment {kind!r}; choose from {sorted(EXPERIMENTS)}")
    return EXPERIMENTS[kind](cfg, workers=workers)


def plot_report(report, path):
    """SVG of sample and exact variance against eps on log axes, with the limit constant."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    # fixed salt keeps SVG element ids identical across runs
    matplotlib.rcParams["svg.hashsalt"] = "fbm-dslt"
    fig, ax = plt.subplots(figsize=(6, 4))
    series = sorted({(r.kind, r.q) for r in report.rows})
    for kind, q in series:
        rs = [r for r in report.rows if (r.kind, r.q) == (kind, q)]
        eps = [r.eps for r in rs]
        label = "alpha" if kind == "alpha" else f"J_{2 * q - 1}"
        ax.errorbar(eps, [r.variance for r in rs], yerr=[1.96 * r.variance_se for r in rs], marker="o", label=f"{label} sample")
        if rs[0].exact_variance is not None:
            ax.plot(eps, [r.exact_variance for r in rs], "k--", lw=0.8)
        if rs[0].target is not None:
            ax.axhline(rs[0].target, color="gray", lw=0.8, ls=":")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("eps")
    ax.set_ylabel("variance")
    ax.set_title(report.experiment)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
