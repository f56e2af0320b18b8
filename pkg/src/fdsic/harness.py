"""Experiment orchestration: dataset sweeps, per-method protocol, tuning split, aggregation, CSV output."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from . import adapt, cancelers, metrics
from .baseband import Constellation, OfdmConfig
from .hwmodel import Dataset, HwDistributionConfig, generate_dataset, history_matrix, oversampling_for_beta

log = logging.getLogger(__name__)

OUT_ENV = "FDSIC_OUT"

METHODS = metrics.METHODS

# tie-break direction of the grid search: smaller step sizes, larger forgetting factors
CONSERVATIVE = {"linear-lms": "low", "wlmp-lms": "low", "wlmp-rls": "high", "mbnn-ftrl": "low"}


def _log_grid(lo_exp: float, decades: int = 6, per_decade: int = 7) -> list[float]:
    return [float(v) for v in np.logspace(lo_exp, lo_exp + decades, decades * per_decade + 1)]


def default_grids() -> dict[str, list[float]]:
    return {
        "linear-lms": _log_grid(-5),
        "wlmp-lms": _log_grid(-7),
        "wlmp-rls": [0.9, 0.99, 0.995, 0.999, 0.9995, 0.9999, 1.0],
        "mbnn-ftrl": _log_grid(-4),
    }


@dataclass
class ExperimentConfig:
    betas: list[float] = field(default_factory=lambda: [0.9, 0.99, 0.999, 0.9999, 0.99999])
    n_seeds: int = 50
    n_tuning_seeds: int = 10
    first_seed: int = 0
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    static_len: int = 10000
    dynamic_len: int = 10000
    noise_db: float = -40.0
    mbnn_epochs: int = 5
    ftrl_beta: float = 1.0
    hw: HwDistributionConfig = field(default_factory=HwDistributionConfig)
    ofdm: OfdmConfig = field(default_factory=OfdmConfig)
    grids: dict[str, list[float]] = field(default_factory=default_grids)
    out_dir: str = "results"
    jobs: int = 1

    def validate(self):
        if not 0 <= self.n_tuning_seeds < self.n_seeds:
            raise ValueError(f"need 0 <= n_tuning_seeds < n_seeds, got {self.n_tuning_seeds} / {self.n_seeds}")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}; expected one of {', '.join(METHODS)}")
            if not self.grids.get(m):
                raise ValueError(f"empty hyperparameter grid for {m}")
        for b in self.betas:
            if not 0 <= b < 1:
                raise ValueError(f"beta must lie in [0, 1), got {b}")
        if self.static_len < 1 or self.dynamic_len < 1:
            raise ValueError("period lengths must be positive")
        self.hw.validate()
        self.ofdm.validate()

    @property
    def seeds(self) -> list[int]:
        return list(range(self.first_seed, self.first_seed + self.n_seeds))

    @property
    def tuning_seeds(self) -> list[int]:
        return self.seeds[: self.n_tuning_seeds]

    @property
    def eval_seeds(self) -> list[int]:
        return self.seeds[self.n_tuning_seeds:]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ofdm"]["constellation"] = Constellation(self.ofdm.constellation).value
        return d

    def hash(self) -> str:
        """Digest of everything that affects numerical results (not output dir or parallelism)."""
        d = self.to_dict()
        for k in ("out_dir", "jobs", "methods", "n_seeds", "betas"):
            d.pop(k)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d or {})
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        kw = {}
        if "hw" in d:
            kw["hw"] = HwDistributionConfig(**d.pop("hw"))
        if "ofdm" in d:
            o = dict(d.pop("ofdm"))
            if "constellation" in o:
                o["constellation"] = Constellation(o["constellation"])
            kw["ofdm"] = OfdmConfig(**o)
        if "grids" in d:
            grids = default_grids()
            grids.update({k: [float(v) for v in vs] for k, vs in d.pop("grids").items()})
            kw["grids"] = grids
        cfg = cls(**d, **kw)
        cfg.betas = [float(b) for b in cfg.betas]
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(yaml.safe_load(f))


def quick_config(cfg: ExperimentConfig | None = None) -> ExperimentConfig:
    """Desk-scale preset: 10 seeds, of which 2 are used for tuning."""
    return replace(cfg or ExperimentConfig(), n_seeds=10, n_tuning_seeds=2)


# ---------------------------------------------------------------- per-method protocol


def make_dataset(cfg: ExperimentConfig, seed: int, beta: float) -> Dataset:
    return generate_dataset(
        seed, beta, cfg.hw, cfg.ofdm, static_len=cfg.static_len, dynamic_len=cfg.dynamic_len, noise_db=cfg.noise_db
    )


class Features:
    """Regressors of one dataset, computed once and shared by all methods and candidates."""

    def __init__(self, ds: Dataset):
        self.ds = ds
        self._cache = {}

    def rows(self, kind: str) -> np.ndarray:
        if kind not in self._cache:
            x, m, p = self.ds.x, self.ds.memory_len, self.ds.nonlin_order
            if kind == "wlmp":
                self._cache[kind] = cancelers.wlmp_basis_matrix(x, m, p)
            else:
                self._cache[kind] = history_matrix(x, m)
        return self._cache[kind]

    def static_ls(self, kind: str) -> np.ndarray:
        key = ("ls", kind)
        if key not in self._cache:
            rows = self.rows(kind)[: self.ds.static_len]
            self._cache[key] = adapt.ls_fit(rows, self.ds.y_static).weights
        return self._cache[key]


def run_method(method: str, feats: Features, value: float, cfg: ExperimentConfig) -> tuple[float, float]:
    """Static fit then per-sample tracking; returns (static, dynamic) cancellation in dB.

    Polynomial cancelers are fitted by least squares on the static period;
    the MBNN is trained with FTRL for ``mbnn_epochs`` passes over it and keeps
    its optimiser state into the dynamic period.  Every dynamic prediction is
    made before the update on that sample.
    """
    ds = feats.ds
    L = ds.static_len
    with np.errstate(all="ignore"):
        if method == "mbnn-ftrl":
            rows = feats.rows("history")
            can = cancelers.MbnnCanceler.initial(ds.memory_len, ds.nonlin_order)
            state = adapt.FtrlState.init(can.real_params(), alpha=value, beta=cfg.ftrl_beta)
            adapt.run_mbnn_ftrl(can.theta, rows[:L], ds.y_static, ds.nonlin_order, state, epochs=cfg.mbnn_epochs)
            static_pred = can.predict_sequence(ds.x_static)
            dyn_pred = adapt.run_mbnn_ftrl(can.theta, rows[L:], ds.y_dynamic, ds.nonlin_order, state)
        else:
            kind = "history" if method == "linear-lms" else "wlmp"
            rows = feats.rows(kind)
            w = feats.static_ls(kind).copy()
            static_pred = rows[:L] @ w
            if method == "wlmp-rls":
                state = adapt.RlsState.init(w.size, value, adapt.default_rls_delta(rows[:L]))
                dyn_pred = adapt.run_rls(w, state, rows[L:], ds.y_dynamic)
            else:
                dyn_pred = adapt.run_lms(w, rows[L:], ds.y_dynamic, complex(value))
        return metrics.cancellation_db(ds.y_static, static_pred), metrics.cancellation_db(ds.y_dynamic, dyn_pred)


# ---------------------------------------------------------------- tasks


def _tune_task(args):
    cfg, seed, beta, methods = args
    feats = Features(make_dataset(cfg, seed, beta))
    return {m: [run_method(m, feats, v, cfg)[1] for v in cfg.grids[m]] for m in methods}


def _eval_task(args):
    cfg, seed, beta, chosen = args
    feats = Features(make_dataset(cfg, seed, beta))
    out = []
    for method in cfg.methods:
        value = chosen[method]
        s, d = run_method(method, feats, value, cfg)
        out.append(RunResult(method, beta, oversampling_for_beta(beta), seed, s, d, value))
    return out


def _map(fn, tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, tasks))


def tune(cfg: ExperimentConfig) -> dict[str, dict[float, float]]:
    """Grid-search every method at every beta on the tuning seeds."""
    cfg.validate()
    if not cfg.tuning_seeds:
        raise ValueError("tuning needs at least one tuning seed")
    tasks = [(cfg, seed, beta, cfg.methods) for beta in cfg.betas for seed in cfg.tuning_seeds]
    results = _map(_tune_task, tasks, cfg.jobs)
    table = {}
    for (_, seed, beta, _), res in zip(tasks, results):
        for m, vals in res.items():
            for v, db in zip(cfg.grids[m], vals):
                table[(m, beta, seed, v)] = db
    chosen: dict[str, dict[float, float]] = {m: {} for m in cfg.methods}
    for m in cfg.methods:
        for beta in cfg.betas:
            res = adapt.hyperparam_search(
                m, beta, cfg.tuning_seeds, cfg.grids[m],
                lambda method, seed, b, v: table[(method, b, seed, v)],
                conservative=CONSERVATIVE[m],
            )
            chosen[m][beta] = res.best
            log.info("tuned %s at beta=%g: %g (mean %.2f dB)", m, beta, res.best, res.scores[res.best])
    return chosen


def tuned_path(cfg: ExperimentConfig) -> Path:
    return Path(cfg.out_dir) / "tuned.json"


def save_tuned(cfg: ExperimentConfig, chosen: dict) -> Path:
    path = tuned_path(cfg)
    path.parent.mkdir(parents=True, exist_ok=True)
    store = json.loads(path.read_text()) if path.exists() else {}
    entry = store.setdefault(cfg.hash(), {})
    for m, per_beta in chosen.items():
        entry.setdefault(m, {}).update({repr(float(b)): v for b, v in per_beta.items()})
    path.write_text(json.dumps(store, indent=1, sort_keys=True) + "\n")
    return path


def load_tuned(cfg: ExperimentConfig) -> dict | None:
    """Previously tuned values for this config, or None when any (method, beta) is missing."""
    path = tuned_path(cfg)
    if not path.exists():
        return None
    entry = json.loads(path.read_text()).get(cfg.hash())
    if not entry:
        return None
    try:
        return {m: {b: entry[m][repr(float(b))] for b in cfg.betas} for m in cfg.methods}
    except KeyError:
        return None


# ---------------------------------------------------------------- results


@dataclass
class RunResult:
    method: str
    beta: float
    oversampling: int
    seed: int
    static_cancellation_db: float
    dynamic_cancellation_db: float
    hyperparam: float

    @property
    def drop_db(self) -> float:
        return metrics.cancellation_drop(self.static_cancellation_db, self.dynamic_cancellation_db)

    @property
    def diverged(self) -> bool:
        return not math.isfinite(self.dynamic_cancellation_db)


@dataclass
class SummaryRow:
    method: str
    beta: float
    oversampling: int
    n_runs: int
    n_diverged: int
    mean_static_db: float
    mean_dynamic_db: float
    std_dynamic_db: float
    mean_drop_db: float
    std_drop_db: float
    hyperparam: float
    flops: float


@dataclass
class SweepSummary:
    rows: list[SummaryRow]
    diverged_runs: list[tuple[str, float, int]]

    def get(self, method: str, beta: float) -> SummaryRow:
        for r in self.rows:
            if r.method == method and math.isclose(r.beta, beta):
                return r
        raise KeyError((method, beta))


def _g6(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(v)
    if isinstance(v, str):
        return v
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.6g}"


def _round6(v: float) -> float:
    return float(_g6(v))


def summarize(results: list[RunResult], methods=None, betas=None) -> SweepSummary:
    """Mean / std over evaluation runs per (method, beta); values are rounded as written to CSV first."""
    results = [replace(r, static_cancellation_db=_round6(r.static_cancellation_db),
                       dynamic_cancellation_db=_round6(r.dynamic_cancellation_db),
                       hyperparam=_round6(r.hyperparam)) for r in results]
    methods = methods or sorted({r.method for r in results}, key=lambda m: METHODS.index(m))
    betas = betas or sorted({r.beta for r in results})
    rows = []
    counts = {m: metrics.count_ops_analytic(m) for m in methods}
    for m in methods:
        for b in betas:
            rs = sorted((r for r in results if r.method == m and math.isclose(r.beta, b)), key=lambda r: r.seed)
            if not rs:
                continue
            dyn = np.array([r.dynamic_cancellation_db for r in rs])
            stat = np.array([r.static_cancellation_db for r in rs])
            drop = stat - dyn
            with np.errstate(invalid="ignore"):
                rows.append(SummaryRow(
                    m, b, rs[0].oversampling, len(rs), int(sum(r.diverged for r in rs)),
                    float(np.mean(stat)), float(np.mean(dyn)), float(np.std(dyn)),
                    float(np.mean(drop)), float(np.std(drop)),
                    rs[0].hyperparam, metrics.flops_projection(counts[m], rs[0].oversampling),
                ))
    diverged = [(r.method, r.beta, r.seed) for r in results if r.diverged]
    return SweepSummary(rows, diverged)


def run_sweep(cfg: ExperimentConfig, chosen: dict | None = None) -> tuple[SweepSummary, list[RunResult]]:
    """Tune (unless ``chosen`` is given) and evaluate every method on every evaluation dataset."""
    cfg.validate()
    if chosen is None:
        chosen = tune(cfg)
    tasks = [
        (cfg, seed, beta, {m: chosen[m][beta] for m in cfg.methods})
        for beta in cfg.betas
        for seed in cfg.eval_seeds
    ]
    results = [r for batch in _map(_eval_task, tasks, cfg.jobs) for r in batch]
    tuning = set(cfg.tuning_seeds)
    assert not any(r.seed in tuning for r in results)
    summary = summarize(results, cfg.methods, cfg.betas)
    if summary.diverged_runs:
        log.warning("%d run(s) diverged: %s", len(summary.diverged_runs), summary.diverged_runs)
    return summary, results


RUNS_HEADER = ["method", "beta", "oversampling", "seed", "static_cancellation_db", "dynamic_cancellation_db",
               "drop_db", "hyperparam"]
SUMMARY_HEADER = [f.name for f in fields(SummaryRow)]
FLOPS_HEADER = ["method", "beta", "mean_dynamic_db", "flops"]


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_g6(v) for v in row])


def write_summary(summary: SweepSummary, out_dir: Path) -> None:
    _write_csv(out_dir / "summary.csv", SUMMARY_HEADER, [[getattr(r, k) for k in SUMMARY_HEADER] for r in summary.rows])
    _write_csv(out_dir / "flops_vs_cancellation.csv", FLOPS_HEADER,
               [[r.method, r.beta, r.mean_dynamic_db, r.flops] for r in summary.rows])


def complexity_reports(methods=METHODS, memory_len: int = 3, nonlin_order: int = 5) -> dict:
    return {m: metrics.count_ops_instrumented(m, memory_len, nonlin_order) for m in methods}


def write_complexity(out_dir: Path, methods=METHODS, memory_len: int = 3, nonlin_order: int = 5) -> dict:
    reports = complexity_reports(methods, memory_len, nonlin_order)
    (out_dir / "complexity.csv").write_text(metrics.reports_to_csv(reports), encoding="utf-8")
    notes = [metrics.__doc__.strip(), ""]
    if (memory_len, nonlin_order) == (3, 5):
        diffs = metrics.convention_diff(reports, tolerance=0.0)
        notes.append("Differences from the published table:" if diffs else "All counts equal the published table.")
        notes += [f"  {d}" for d in diffs]
    (out_dir / "complexity_notes.txt").write_text("\n".join(notes) + "\n", encoding="utf-8")
    return reports


def emit_results(summary: SweepSummary, results: list[RunResult], out_dir) -> Path:
    """Write runs.csv, summary.csv, complexity.csv and flops_vs_cancellation.csv."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create output directory {out_dir}: {e}") from e
    if not os.access(out_dir, os.W_OK):
        raise OSError(f"output directory {out_dir} is not writable")
    ordered = sorted(results, key=lambda r: (METHODS.index(r.method), r.beta, r.seed))
    _write_csv(out_dir / "runs.csv", RUNS_HEADER, [
        [r.method, r.beta, r.oversampling, r.seed, r.static_cancellation_db, r.dynamic_cancellation_db,
         r.drop_db, r.hyperparam] for r in ordered
    ])
    write_summary(summary, out_dir)
    write_complexity(out_dir, [r.method for r in summary.rows if r.beta == summary.rows[0].beta] or METHODS)
    return out_dir


def read_runs(path) -> list[RunResult]:
    out = []
    with open(path, newline="", encoding="utf-8") as f:
        r = csv.DictReader(f)
        if r.fieldnames != RUNS_HEADER:
            raise ValueError(f"{path}: unexpected header {r.fieldnames}")
        for row in r:
            out.append(RunResult(
                row["method"], float(row["beta"]), int(row["oversampling"]), int(row["seed"]),
                float(row["static_cancellation_db"]), float(row["dynamic_cancellation_db"]), float(row["hyperparam"]),
            ))
    return out


def report(out_dir) -> SweepSummary:
    """Re-aggregate an existing runs.csv into summary.csv and flops_vs_cancellation.csv."""
    out_dir = Path(out_dir)
    summary = summarize(read_runs(out_dir / "runs.csv"))
    write_summary(summary, out_dir)
    return summary


def flops_at_cancellation(summary: SweepSummary, method: str, target_db: float) -> float:
    """FLOPS needed for ``method`` to reach a mean dynamic cancellation of ``target_db``.

    Walks the oversampling ladder upward and interpolates log10(FLOPS)
    linearly in dB between the last point below the target and the first one
    reaching it; ``nan`` if the target is never reached.
    """
    rows = sorted((r for r in summary.rows if r.method == method), key=lambda r: r.oversampling)
    prev = None
    for r in rows:
        if r.mean_dynamic_db >= target_db:
            if prev is None or not math.isfinite(prev.mean_dynamic_db):
                return r.flops
            frac = (target_db - prev.mean_dynamic_db) / (r.mean_dynamic_db - prev.mean_dynamic_db)
            return float(10 ** (math.log10(prev.flops) + frac * (math.log10(r.flops) - math.log10(prev.flops))))
        prev = r
    return math.nan
