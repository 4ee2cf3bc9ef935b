"""Experiment configuration, grid evaluation and report writers."""
from __future__ import annotations

import csv
import datetime as _dt
import io
import json
import logging
import math
import re
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .bench import (
    FUNCTIONS,
    RNG_ID,
    MultivariateNormal,
    Normal,
    SyntheticProblem,
    Triangular,
    Uniform,
    morokoff_inputs,
    sample_doe,
    standardize,
    wing_weight_inputs,
)
from .conformal import METHODS, jminmax_gp
from .data_io import TabularDataset, load_csv, split
from .gp import MleSettings, credibility_interval, fit
from .kernels import NUGGET_MODES
from .loo import LOO_MODES, loo_from_gp
from .metrics import (
    EvalRecord,
    NotComputable,
    average_width,
    beta_soft_threshold,
    bootstrap_spearman,
    empirical_coverage,
    mse,
    predictivity_q2,
    select_best,
    spearman_width_error,
)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "EvalReport",
    "load_config",
    "prepare_data",
    "run_experiment",
    "emit_report",
    "derive_seed",
    "ALL_METHODS",
]

logger = logging.getLogger(__name__)

ALL_METHODS = ("credibility",) + tuple(METHODS)
DEFAULT_METHODS = ("credibility", "jackknife+", "jackknife-minmax", "J+GP", "J-minmax-GP")
REPORT_FORMATS = ("json", "csv", "md")
SCHEMA_PATH = Path(__file__).with_name("report.schema.json")


class ConfigError(ValueError):
    """Invalid experiment configuration."""

    def __init__(self, msg, key=None):
        super().__init__(msg)
        self.key = key


def derive_seed(seed: int, *keys) -> int:
    """Stable 32-bit seed for a named branch of an experiment."""
    words = [int(seed) & 0xFFFFFFFF] + [zlib.crc32(str(k).encode()) for k in keys]
    return int(np.random.SeedSequence(words).generate_state(1)[0])


@dataclass
class ExperimentConfig:
    problem: dict
    name: str = "experiment"
    train_fraction: float = 0.8
    seed: int = 0
    nugget: float = 0.0
    nugget_mode: str = "sd_on_diagonal"
    nu_grid: list = field(default_factory=lambda: [0.5, 1.5, 2.5])
    beta_grid: list = field(default_factory=lambda: [0.5, 1.0, 1.5])
    alpha_grid: list = field(default_factory=lambda: [0.1, 0.05, 0.01])
    methods: list = field(default_factory=lambda: list(DEFAULT_METHODS))
    delta: float = 1e-6
    loo_mode: str = "closed-form"
    n_boot: int = 999
    upsilon: float = 0.1
    jminmax_literal: bool = False
    mle: dict = field(default_factory=dict)
    formats: list = field(default_factory=lambda: list(REPORT_FORMATS))
    threads: int = 1

    def __post_init__(self):
        def bad(msg, key):
            raise ConfigError(msg, key)

        for grid in ("nu_grid", "beta_grid", "alpha_grid", "methods"):
            if not getattr(self, grid):
                bad(f"{grid} must not be empty", grid)
        if any(not 0 < a < 1 for a in self.alpha_grid):
            bad("every alpha must lie in (0, 1)", "alpha_grid")
        if any(not b > 0 for b in self.beta_grid):
            bad("every beta must be positive", "beta_grid")
        if not 0 < self.train_fraction < 1:
            bad("train_fraction must lie in (0, 1)", "train_fraction")
        if not 0 < self.upsilon < 1:
            bad("upsilon must lie in (0, 1)", "upsilon")
        if not self.delta > 0:
            bad("delta must be positive", "delta")
        if self.nugget < 0:
            bad("nugget must be >= 0", "nugget")
        if self.nugget_mode not in NUGGET_MODES:
            bad(f"nugget_mode must be one of {NUGGET_MODES}", "nugget_mode")
        if self.loo_mode not in LOO_MODES:
            bad(f"loo_mode must be one of {LOO_MODES}", "loo_mode")
        unknown = [m for m in self.methods if m not in ALL_METHODS]
        if unknown:
            bad(f"unknown methods {unknown}; choose from {list(ALL_METHODS)}", "methods")
        bad_fmt = [f for f in self.formats if f not in REPORT_FORMATS]
        if bad_fmt:
            bad(f"unknown formats {bad_fmt}; choose from {list(REPORT_FORMATS)}", "formats")
        if self.n_boot < 1:
            bad("n_boot must be >= 1", "n_boot")
        if self.threads < 0:
            bad("threads must be >= 0", "threads")
        kind = self.problem.get("kind") if isinstance(self.problem, dict) else None
        if kind not in ("synthetic", "csv"):
            bad("problem.kind must be 'synthetic' or 'csv'", "problem")
        if kind == "csv" and not {"path", "target"} <= set(self.problem):
            bad("csv problems need 'path' and 'target'", "problem")
        if kind == "synthetic" and self.problem.get("function") not in FUNCTIONS:
            bad(f"problem.function must be one of {sorted(FUNCTIONS)}", "function")
        try:
            self.mle_settings()
        except (TypeError, ValueError) as exc:
            bad(f"invalid mle settings: {exc}", "mle")

    def mle_settings(self, seed: Optional[int] = None) -> MleSettings:
        kw = dict(self.mle)
        for k in ("theta_bounds", "sigma2_bounds"):
            if k in kw:
                kw[k] = tuple(kw[k])
        if seed is not None:
            kw["seed"] = seed
        return MleSettings(**kw)

    def to_dict(self) -> dict:
        return asdict(self)


def _line_of(text: str, key: str) -> Optional[int]:
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def load_config(path_or_text, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Parse a JSON config file (or JSON text); errors carry line numbers."""
    p = Path(path_or_text) if not str(path_or_text).lstrip().startswith("{") else None
    text = p.read_text(encoding="utf-8") if p is not None else str(path_or_text)
    where = str(p) if p is not None else "<config>"
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{where}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}:1: top-level value must be an object")
    known = {f.name for f in fields(ExperimentConfig)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"{where}:{_line_of(text, key)}: unknown key {key!r}")
    if "problem" not in raw:
        raise ConfigError(f"{where}:1: missing required key 'problem'")
    raw.update(overrides or {})
    try:
        return ExperimentConfig(**raw)
    except ConfigError as exc:
        line = (_line_of(text, exc.key) if exc.key else None) or 1
        raise ConfigError(f"{where}:{line}: {exc}", exc.key) from None
    except TypeError as exc:
        raise ConfigError(f"{where}:1: {exc}") from None


_DISTS = {"uniform": Uniform, "normal": Normal, "triangular": Triangular,
          "multivariate-normal": MultivariateNormal}


def _distribution(spec: dict):
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind not in _DISTS:
        raise ConfigError(f"unknown input distribution kind {kind!r}")
    if kind == "multivariate-normal":
        return MultivariateNormal(tuple(spec["mean"]),
                                  tuple(tuple(r) for r in spec["covariance"]))
    return _DISTS[kind](**spec)


@dataclass
class PreparedData:
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    info: dict


def prepare_data(config: ExperimentConfig) -> PreparedData:
    """Generate or load the data, split it and standardize the inputs."""
    prob = config.problem
    if prob["kind"] == "synthetic":
        fname = prob["function"]
        if "inputs" in prob:
            dists = [_distribution(d) for d in prob["inputs"]]
        elif fname == "morokoff_caflisch":
            dists = morokoff_inputs(int(prob.get("dim", 10)))
        else:
            dists = wing_weight_inputs()
        problem = SyntheticProblem(function=fname, input_dist=dists,
                                   noise_sd=float(prob.get("noise_sd", 0.0)),
                                   n_samples=int(prob.get("n_samples", 600)),
                                   seed=derive_seed(config.seed, "doe"))
        X, y = sample_doe(problem)
        data = TabularDataset(name=fname, X=X, y=y,
                              feature_names=tuple(f"x{i + 1}" for i in range(X.shape[1])))
        stats = dists
    else:
        data = load_csv(prob["path"], prob["target"],
                        missing_policy=prob.get("missing_policy", "drop"),
                        delimiter=prob.get("delimiter", ","),
                        feature_columns=prob.get("features"))
        stats = "empirical"
    train, test = split(data, config.train_fraction, derive_seed(config.seed, "split"))
    X_train, tf = standardize(train.X, stats)
    info = dict(dataset=data.name, n_total=int(data.n), n_train=int(train.n),
                n_test=int(test.n), dim=int(data.X.shape[1]),
                rows_dropped=int(data.rows_dropped), source_digest=data.source_digest,
                standardization=tf.source)
    return PreparedData(X_train, train.y, tf.apply(test.X), test.y, info)


@dataclass
class EvalReport:
    records: list
    gp_summary: list
    failed_branches: list
    metadata: dict
    selections: list

    def to_dict(self) -> dict:
        return dict(
            metadata=self.metadata,
            gp_summary=self.gp_summary,
            failed_branches=self.failed_branches,
            selections=self.selections,
            records=[r.to_dict() for r in self.records],
        )


def _evaluate(intervals, y_test, abs_err, q2, err, n_train, upsilon, n_boot, seed):
    coverage = empirical_coverage(intervals, y_test)
    avg_w, n_inf = average_width(intervals)
    t = beta_soft_threshold(n_train, intervals.alpha, upsilon)
    try:
        point = spearman_width_error(intervals, abs_err)
    except NotComputable:
        point = None
    try:
        med, ci, samples, skipped = bootstrap_spearman(intervals, abs_err, n_boot, seed)
    except NotComputable:
        med, ci, samples, skipped = None, None, [], n_boot
    return EvalRecord(method=intervals.method, nu=intervals.kernel_nu,
                      beta_power=intervals.beta_power, alpha=intervals.alpha,
                      coverage=coverage, avg_width=avg_w, width_infinite_count=n_inf,
                      spearman_median=med, spearman_ci=ci, q2=q2, mse=err,
                      passes_soft_threshold=bool(coverage >= t), threshold=t,
                      spearman_point=point, bootstrap_skipped=skipped,
                      bootstrap_samples=samples)


def _run_branch(config: ExperimentConfig, data: PreparedData, nu: float):
    settings = config.mle_settings(seed=derive_seed(config.seed, "mle", nu))
    gp = fit(data.X_train, data.y_train, nu, config.nugget, settings,
             nugget_mode=config.nugget_mode)
    pred = gp.mean(data.X_test)
    q2 = predictivity_q2(data.y_test, pred)
    err = mse(data.y_test, pred)
    abs_err = np.abs(data.y_test - pred)
    summary = dict(nu=nu, q2=q2, mse=err, sigma2=gp.spec.sigma2, theta=list(gp.spec.theta),
                   nugget=gp.spec.nugget, objective=gp.objective, jitter=gp.jitter)

    needs_loo = any(m != "credibility" for m in config.methods)
    base = None
    if needs_loo:
        base = loo_from_gp(gp, data.X_test, beta=1.0, delta=config.delta,
                           mode=config.loo_mode, settings=settings)
    n_train = data.X_train.shape[0]
    records = []

    def add(iv):
        seed = derive_seed(config.seed, "boot", iv.method, nu, iv.beta_power, iv.alpha)
        records.append(_evaluate(iv, data.y_test, abs_err, q2, err, n_train,
                                 config.upsilon, config.n_boot, seed))

    for alpha in config.alpha_grid:
        for method in config.methods:
            if method == "credibility":
                add(credibility_interval(gp, data.X_test, alpha))
                continue
            ctor, uses_beta = METHODS[method]
            if method == "jackknife":
                add(ctor(pred, base, alpha))
            elif not uses_beta:
                add(ctor(base, alpha))
            else:
                for beta in config.beta_grid:
                    ens = base.with_beta(beta)
                    if method == "J-minmax-GP":
                        add(jminmax_gp(ens, alpha, literal=config.jminmax_literal))
                    else:
                        add(ctor(ens, alpha))
    return summary, records


def _method_order(method):
    return ALL_METHODS.index(method)


def run_experiment(config: ExperimentConfig, data: Optional[PreparedData] = None) -> EvalReport:
    """Fit one GP per nu, build the LOO ensembles and score every interval."""
    if data is None:
        data = prepare_data(config)
    threads = config.threads or None
    results = {}
    failed = []

    def work(nu):
        try:
            return nu, _run_branch(config, data, nu), None
        except Exception as exc:  # a failed branch must not sink the others
            logger.exception("branch nu=%s failed", nu)
            return nu, None, f"{type(exc).__name__}: {exc}"

    if threads == 1 or len(config.nu_grid) == 1:
        outcomes = [work(nu) for nu in config.nu_grid]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(work, config.nu_grid))
    for nu, res, error in outcomes:
        if error is None:
            results[nu] = res
        else:
            failed.append(dict(nu=nu, error=error))

    records = []
    summaries = []
    for nu in config.nu_grid:
        if nu in results:
            summaries.append(results[nu][0])
            records.extend(results[nu][1])
    records.sort(key=lambda r: (config.alpha_grid.index(r.alpha), _method_order(r.method),
                                r.nu, -1.0 if r.beta_power is None else r.beta_power))

    selections = []
    for alpha in config.alpha_grid:
        w, c = select_best(records, alpha)
        selections.append(dict(alpha=alpha,
                               threshold=beta_soft_threshold(data.info["n_train"], alpha,
                                                             config.upsilon),
                               min_width=_record_key(w), max_spearman=_record_key(c)))

    metadata = dict(
        library_version=__version__,
        timestamp=_dt.datetime.now(_dt.timezone.utc).isoformat(),
        rng=RNG_ID,
        loo_mode=config.loo_mode,
        nugget_mode=config.nugget_mode,
        delta=config.delta,
        upsilon=config.upsilon,
        data=data.info,
        config=config.to_dict(),
    )
    return EvalReport(records=records, gp_summary=summaries, failed_branches=failed,
                      metadata=metadata, selections=selections)


def _record_key(r):
    if r is None:
        return None
    return dict(method=r.method, nu=r.nu, beta_power=r.beta_power)


def _clean(obj):
    """JSON-safe copy: non-finite floats become None."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, (np.floating, np.integer)):
        return _clean(obj.item())
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


CSV_FIELDS = ("method", "nu", "beta_power", "alpha", "coverage", "threshold",
              "passes_soft_threshold", "avg_width", "width_infinite_count",
              "spearman_point", "spearman_median", "spearman_ci_lo", "spearman_ci_hi",
              "q2", "mse")


def report_json(report: EvalReport) -> str:
    return json.dumps(_clean(report.to_dict()), indent=2)


def report_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for r in report.records:
        ci = r.spearman_ci or (None, None)
        row = dict(method=r.method, nu=r.nu, beta_power=r.beta_power, alpha=r.alpha,
                   coverage=r.coverage, threshold=r.threshold,
                   passes_soft_threshold=int(r.passes_soft_threshold),
                   avg_width=r.avg_width, width_infinite_count=r.width_infinite_count,
                   spearman_point=r.spearman_point, spearman_median=r.spearman_median,
                   spearman_ci_lo=ci[0], spearman_ci_hi=ci[1], q2=r.q2, mse=r.mse)
        writer.writerow({k: ("" if v is None else (repr(v) if isinstance(v, float) else v))
                         for k, v in row.items()})
    return buf.getvalue()


_METHOD_LABEL = {"credibility": "GP credibility", "jackknife": "Jackknife",
                 "jackknife+": "J+", "jackknife-minmax": "J-minmax",
                 "J+GP": "J+GP", "J-minmax-GP": "J-minmax-GP"}


def _fmt_nu(nu):
    return {0.5: "1/2", 1.5: "3/2", 2.5: "5/2"}.get(nu, f"{nu:g}")


def _level(alpha):
    return f"{100 * (1 - alpha):g}%"


def report_markdown(report: EvalReport) -> str:
    alphas = report.metadata["config"]["alpha_grid"]
    info = report.metadata["data"]
    lines = [f"# {report.metadata['config']['name']}", ""]
    lines.append(f"Dataset `{info['dataset']}`: n_train={info['n_train']}, "
                 f"n_test={info['n_test']}, d={info['dim']}; LOO mode "
                 f"`{report.metadata['loo_mode']}`, nugget mode "
                 f"`{report.metadata['nugget_mode']}`, delta={report.metadata['delta']:g}.")
    lines.append("")
    lines.append("| Matérn | Q² | MSE |")
    lines.append("|---|---|---|")
    for s in report.gp_summary:
        lines.append(f"| {_fmt_nu(s['nu'])} | {s['q2']:.3f} | {s['mse']:.3g} |")
    lines.append("")
    lines.append("Soft thresholds: " + ", ".join(
        f"{_level(s['alpha'])} → {s['threshold']:.3f}" for s in report.selections))
    lines.append("")

    best = {}
    for s in report.selections:
        for kind in ("min_width", "max_spearman"):
            if s[kind] is not None:
                k = s[kind]
                best[(kind, s["alpha"], k["method"], k["nu"], k["beta_power"])] = True

    head = ["Method", "Matérn", "β"]
    head += [f"Cov. {_level(a)}" for a in alphas]
    head += [f"Pass {_level(a)}" for a in alphas]
    head += [f"Width {_level(a)}" for a in alphas]
    head += [f"Spearman {_level(a)}" for a in alphas]
    lines.append("| " + " | ".join(head) + " |")
    lines.append("|" + "---|" * len(head))

    rows = {}
    for r in report.records:
        rows.setdefault((r.method, r.nu, r.beta_power), {})[r.alpha] = r
    order = sorted(rows, key=lambda k: (_method_order(k[0]), k[1],
                                        -1.0 if k[2] is None else k[2]))
    for key in order:
        method, nu, beta = key
        by_a = rows[key]
        cells = [_METHOD_LABEL[method], _fmt_nu(nu), "" if beta is None else f"{beta:g}"]
        cells += [f"{by_a[a].coverage:.3f}" if a in by_a else "" for a in alphas]
        cells += [("yes" if by_a[a].passes_soft_threshold else "no") if a in by_a else ""
                  for a in alphas]
        for a in alphas:
            r = by_a.get(a)
            if r is None:
                cells.append("")
                continue
            txt = f"{r.avg_width:.3g}" if math.isfinite(r.avg_width) else "inf"
            if r.width_infinite_count and math.isfinite(r.avg_width):
                txt += f" ({r.width_infinite_count} inf)"
            if best.get(("min_width", a, method, nu, beta)):
                txt = f"**{txt}**"
            cells.append(txt)
        for a in alphas:
            r = by_a.get(a)
            if r is None:
                cells.append("")
                continue
            txt = "n.c" if r.spearman_median is None else f"{r.spearman_median:.3f}"
            if best.get(("max_spearman", a, method, nu, beta)):
                txt = f"**{txt}**"
            cells.append(txt)
        lines.append("| " + " | ".join(cells) + " |")
    lines.append("")
    lines.append("Bold: smallest average width / highest median bootstrap Spearman "
                 "among records passing the soft threshold.")
    for s in report.selections:
        if s["min_width"] is None and s["max_spearman"] is None:
            lines.append("")
            lines.append(f"Note: no method passes the soft threshold at {_level(s['alpha'])}.")
    for f in report.failed_branches:
        lines.append("")
        lines.append(f"Note: branch Matérn-{_fmt_nu(f['nu'])} failed ({f['error']}).")
    return "\n".join(lines) + "\n"


_WRITERS = {"json": ("report.json", report_json), "csv": ("report.csv", report_csv),
            "md": ("report.md", report_markdown)}


def emit_report(report: EvalReport, formats=REPORT_FORMATS, out_dir=".") -> list:
    """Write the requested report files; returns their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for fmt in formats:
        if fmt not in _WRITERS:
            raise ValueError(f"unknown format {fmt!r}")
        fname, writer = _WRITERS[fmt]
        path = out / fname
        path.write_text(writer(report), encoding="utf-8")
        paths.append(path)
    return paths
