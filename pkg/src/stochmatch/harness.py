"""Experiment orchestration: trials, hindsight optima, ratio statistics, reports.

Determinism: trials are cut into fixed-size chunks.  Chunk ``c`` draws its
arrivals from ``derive_seed(seed, c)`` (shared by every algorithm) and each
algorithm's own randomness from ``algorithm_stream(seed, c, label)``.
Chunks may run on any number of worker threads; their moment accumulators
are merged in chunk order, so reports are byte-identical for any thread
count.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import algorithms as alg
from . import fractional, graph, offline
from . import simulate as sim
from .analysis import DEFAULT_THETA
from .arrivals import adversarial_order, derive_seed, sample_poisson_batch

log = logging.getLogger(__name__)

__all__ = [
    "ConfigError",
    "AlgorithmEntry",
    "ExperimentConfig",
    "Moments",
    "AlgorithmResult",
    "RatioReport",
    "load_config",
    "build_instance",
    "fractional_reference",
    "run_stochastic_experiment",
    "run_adversarial_experiment",
    "run_experiment",
    "emit_report",
    "format_report",
    "parse_csv_report",
]

Z95 = 1.959963984540054
CSV_COLUMNS = ["algorithm", "mean_alg", "mean_opt", "ratio", "ci95"]
ADVERSARIAL_COLUMNS = ["worst_ratio", "worst_ci95"]
DEFAULT_TRIALS = 10_000


class ConfigError(ValueError):
    pass


@dataclass
class AlgorithmEntry:
    id: str
    theta: float = DEFAULT_THETA
    tie_break: str = "lowest-index"
    label: str | None = None

    @property
    def name(self) -> str:
        return self.label or self.id

    def matcher(self) -> alg.MatcherConfig:
        return alg.MatcherConfig(self.id, self.theta, tie_break=self.tie_break)


@dataclass
class ExperimentConfig:
    """One experiment; see the README for the JSON schema."""

    instance: str | dict
    algorithms: list[AlgorithmEntry]
    model: str = "stochastic"
    trials: int = DEFAULT_TRIALS
    orders: int = 1000
    runs_per_order: int = 100
    fractional: dict | None = None
    seed: int = 0
    output: str | None = None
    format: str = "csv"
    chunk: int = sim.DEFAULT_CHUNK
    has_weights: bool = False
    base_dir: str | None = None

    def __post_init__(self):
        if self.model not in ("stochastic", "adversarial"):
            raise ConfigError(f"model must be 'stochastic' or 'adversarial', got {self.model!r}")
        if not self.algorithms:
            raise ConfigError("at least one algorithm is required")
        for name in ("trials", "orders", "runs_per_order", "chunk"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.format not in ("csv", "json"):
            raise ConfigError(f"format must be csv or json, got {self.format!r}")
        labels = [a.name for a in self.algorithms]
        if len(set(labels)) != len(labels):
            raise ConfigError("algorithm labels must be unique")
        for a in self.algorithms:
            try:
                a.matcher()
            except ValueError as e:
                raise ConfigError(str(e)) from None
        needs_x = any(alg.ALGORITHMS[a.id].needs_x for a in self.algorithms)
        if needs_x and self.fractional is None:
            raise ConfigError("a fractional source is required for the listed algorithms")
        if self.fractional is not None:
            src = self.fractional.get("source")
            if src not in ("exact-lp", "monte-carlo", "file"):
                raise ConfigError(f"unknown fractional source {src!r}")
            if src == "monte-carlo" and int(self.fractional.get("samples", 0)) < 1:
                raise ConfigError("monte-carlo fractional source needs samples >= 1")
            if src == "file" and "path" not in self.fractional:
                raise ConfigError("file fractional source needs a path")

    @classmethod
    def from_dict(cls, d: dict, base_dir: str | None = None) -> "ExperimentConfig":
        d = dict(d)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "instance" not in d or "algorithms" not in d:
            raise ConfigError("config needs 'instance' and 'algorithms'")
        entries = []
        for a in d.pop("algorithms"):
            if isinstance(a, str):
                a = {"id": a}
            try:
                entries.append(AlgorithmEntry(**a))
            except TypeError as e:
                raise ConfigError(f"bad algorithm entry {a!r}: {e}") from None
        d.setdefault("base_dir", base_dir)
        return cls(algorithms=entries, **d)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None
    return ExperimentConfig.from_dict(raw, base_dir=str(path.parent))


def _resolve(cfg: ExperimentConfig, p: str) -> Path:
    path = Path(p)
    if not path.is_absolute() and cfg.base_dir is not None:
        path = Path(cfg.base_dir) / path
    return path


def build_instance(cfg: ExperimentConfig) -> graph.TypeGraph:
    inst = cfg.instance
    if isinstance(inst, str):
        return graph.load_type_graph(_resolve(cfg, inst), cfg.has_weights)
    if "edges" in inst:
        return graph.type_graph_from_dict(inst)
    spec = dict(inst)
    spec.setdefault("seed", derive_seed(cfg.seed, 0xC0FFEE))
    for key in ("rate_range", "weight_range"):
        if spec.get(key) is not None:
            spec[key] = tuple(spec[key])
    try:
        return graph.random_type_graph(**spec)
    except TypeError as e:
        raise ConfigError(f"bad synthetic instance spec: {e}") from None


def fractional_reference(cfg: ExperimentConfig, tg: graph.TypeGraph):
    if cfg.fractional is None:
        return None
    src = cfg.fractional["source"]
    if src == "exact-lp":
        return fractional.solve_natural_lp(tg)
    if src == "file":
        return fractional.load_fractional(_resolve(cfg, cfg.fractional["path"]))
    return fractional.estimate_fractional_matching_mc(tg, int(cfg.fractional["samples"]),
                                                      derive_seed(cfg.seed))


# ---------------------------------------------------------------------------
# Statistics


@dataclass
class Moments:
    """Paired first and second moments of (ALG, OPT), mergeable in a fixed order."""

    n: int = 0
    mean_a: float = 0.0
    mean_o: float = 0.0
    m_aa: float = 0.0
    m_oo: float = 0.0
    m_ao: float = 0.0

    @classmethod
    def of(cls, a, o) -> "Moments":
        a = np.asarray(a, dtype=float)
        o = np.broadcast_to(np.asarray(o, dtype=float), a.shape)
        if a.size == 0:
            return cls()
        ma, mo = a.mean(), o.mean()
        da, do = a - ma, o - mo
        return cls(a.size, float(ma), float(mo), float(da @ da), float(do @ do), float(da @ do))

    def merge(self, other: "Moments") -> "Moments":
        if other.n == 0:
            return self
        if self.n == 0:
            return other
        n = self.n + other.n
        da = other.mean_a - self.mean_a
        do = other.mean_o - self.mean_o
        f = self.n * other.n / n
        return Moments(n, self.mean_a + da * other.n / n, self.mean_o + do * other.n / n,
                       self.m_aa + other.m_aa + da * da * f,
                       self.m_oo + other.m_oo + do * do * f,
                       self.m_ao + other.m_ao + da * do * f)

    def ratio(self) -> tuple[float, float, bool]:
        """Ratio of means, its delta-method 95% half-width, and a 0/0 flag."""
        if self.mean_o == 0.0:
            return 1.0, 0.0, True
        r = self.mean_a / self.mean_o
        if self.n < 2:
            return r, 0.0, False
        var = (self.m_aa - 2 * r * self.m_ao + r * r * self.m_oo) / (self.n - 1)
        hw = Z95 * math.sqrt(max(var, 0.0) / self.n) / abs(self.mean_o)
        return r, hw, False


@dataclass
class AlgorithmResult:
    algorithm: str
    mean_alg: float
    mean_opt: float
    ratio: float
    ci95: float
    worst_ratio: float | None = None
    worst_ci95: float | None = None
    degenerate: bool = False

    @classmethod
    def from_moments(cls, name: str, m: Moments, **extra) -> "AlgorithmResult":
        r, hw, degenerate = m.ratio()
        return cls(name, m.mean_a, m.mean_o, r, hw, degenerate=degenerate, **extra)


@dataclass
class RatioReport:
    model: str
    trials: int
    seed: int
    results: list[AlgorithmResult] = field(default_factory=list)
    partial: bool = False

    def __getitem__(self, name: str) -> AlgorithmResult:
        for r in self.results:
            if r.algorithm == name:
                return r
        raise KeyError(name)


# ---------------------------------------------------------------------------
# Experiments


def _map(fn, items, threads: int):
    """Ordered map over ``items``; stops cleanly on Ctrl-C, returning what finished."""
    out = []
    if threads <= 1:
        try:
            for it in items:
                out.append(fn(it))
        except KeyboardInterrupt:
            log.warning("interrupted after %d of %d work items", len(out), len(items))
            return out, True
        return out, False
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(fn, it) for it in items]
        try:
            for f in futures:
                out.append(f.result())
        except KeyboardInterrupt:
            for f in futures:
                f.cancel()
            log.warning("interrupted after %d of %d work items", len(out), len(items))
            return out, True
    return out, False


def run_stochastic_experiment(cfg: ExperimentConfig, threads: int = 1,
                              tg: graph.TypeGraph | None = None, x=None) -> RatioReport:
    tg = build_instance(cfg) if tg is None else tg
    if x is None:
        x = fractional_reference(cfg, tg)
    x_dense = None if x is None else np.asarray(getattr(x, "dense", x), dtype=float)
    oracle = offline.HindsightOracle(tg)
    contexts = {a.name: alg.Context.build(tg, x_dense, a.theta, a.tie_break) for a in cfg.algorithms}
    sizes = [min(cfg.chunk, cfg.trials - s) for s in range(0, cfg.trials, cfg.chunk)]
    lock = threading.Lock()

    def work(c):
        n = sizes[c]
        batch = sample_poisson_batch(tg, n, derive_seed(cfg.seed, c))
        with lock:  # the oracle cache is shared
            opt = oracle.values(batch.counts)
        out = {}
        for a in cfg.algorithms:
            rand = sim.draw_randomness(a.id, n, batch.max_len, tg.n_offline,
                                       sim.algorithm_stream(cfg.seed, c, a.name))
            res = sim.simulate_batch(a.id, contexts[a.name], batch, rand)
            out[a.name] = Moments.of(res.objective, opt)
        return out

    chunks, interrupted = _map(work, list(range(len(sizes))), threads)
    report = RatioReport("stochastic", sum(sizes[:len(chunks)]), cfg.seed, partial=interrupted)
    for a in cfg.algorithms:
        total = Moments()
        for ch in chunks:
            total = total.merge(ch[a.name])
        report.results.append(AlgorithmResult.from_moments(a.name, total))
    return report


def hindsight_full(tg: graph.TypeGraph) -> float:
    """Optimum of the graph where every type arrives exactly once."""
    g = offline.realize(tg, range(tg.n_types))
    m = offline.max_weight_matching(g) if tg.weighted else offline.max_cardinality_matching(g)
    return m.weight


def run_adversarial_experiment(cfg: ExperimentConfig, threads: int = 1,
                               tg: graph.TypeGraph | None = None, x=None) -> RatioReport:
    tg = build_instance(cfg) if tg is None else tg
    if x is None:
        x = fractional_reference(cfg, tg)
    x_dense = None if x is None else np.asarray(getattr(x, "dense", x), dtype=float)
    opt = hindsight_full(tg)
    contexts = {a.name: alg.Context.build(tg, x_dense, a.theta, a.tie_break) for a in cfg.algorithms}

    def work(o):
        order = adversarial_order(tg, derive_seed(cfg.seed, o))
        out = {}
        for a in cfg.algorithms:
            runs = cfg.runs_per_order if alg.ALGORITHMS[a.id].randomized else 1
            batch = sim.adversarial_batch(order, runs, tg.n_types)
            rand = sim.draw_randomness(a.id, runs, batch.max_len, tg.n_offline,
                                       sim.algorithm_stream(cfg.seed, o, a.name))
            res = sim.simulate_batch(a.id, contexts[a.name], batch, rand)
            out[a.name] = Moments.of(res.objective, opt)
        return out

    per_order, interrupted = _map(work, list(range(cfg.orders)), threads)
    report = RatioReport("adversarial", len(per_order), cfg.seed, partial=interrupted)
    for a in cfg.algorithms:
        total = Moments()
        worst, worst_hw = None, None
        for m in per_order:
            mo = m[a.name]
            total = total.merge(mo)
            r, hw, _ = mo.ratio()
            if worst is None or r < worst:
                worst, worst_hw = r, hw
        report.results.append(AlgorithmResult.from_moments(
            a.name, total, worst_ratio=worst, worst_ci95=worst_hw))
    return report


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> RatioReport:
    if cfg.model == "adversarial":
        return run_adversarial_experiment(cfg, threads)
    return run_stochastic_experiment(cfg, threads)


# ---------------------------------------------------------------------------
# Reports


def _num(v) -> str:
    return "" if v is None else repr(float(v))


def format_report(report: RatioReport, fmt: str = "csv") -> str:
    adversarial = report.model == "adversarial"
    if fmt == "json":
        rows = []
        for r in report.results:
            d = asdict(r)
            if not adversarial:
                d.pop("worst_ratio")
                d.pop("worst_ci95")
            rows.append(d)
        body = {"model": report.model, "trials": report.trials, "seed": report.seed,
                "partial": report.partial, "algorithms": rows}
        return json.dumps(body, indent=2) + "\n"
    if fmt != "csv":
        raise ValueError(f"unknown report format {fmt!r}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = CSV_COLUMNS + (ADVERSARIAL_COLUMNS if adversarial else [])
    w.writerow(cols)
    for r in report.results:
        row = [r.algorithm, _num(r.mean_alg), _num(r.mean_opt), _num(r.ratio), _num(r.ci95)]
        if adversarial:
            row += [_num(r.worst_ratio), _num(r.worst_ci95)]
        w.writerow(row)
    return buf.getvalue()


def emit_report(report: RatioReport, fmt: str = "csv", path: str | Path | None = None) -> str:
    """Render ``report`` and write it to ``path`` (if given); returns the text."""
    text = format_report(report, fmt)
    if path is not None:
        try:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        except OSError as e:
            raise OSError(f"cannot write report to {path}: {e.strerror or e}") from e
    return text


def parse_csv_report(text: str, model: str = "stochastic", trials: int = 0, seed: int = 0) -> RatioReport:
    rows = list(csv.DictReader(io.StringIO(text)))
    report = RatioReport(model, trials, seed)
    for row in rows:
        def f(key):
            v = row.get(key)
            return None if v in (None, "") else float(v)
        mean_alg, mean_opt = f("mean_alg"), f("mean_opt")
        report.results.append(AlgorithmResult(
            row["algorithm"], mean_alg, mean_opt, f("ratio"), f("ci95"),
            f("worst_ratio"), f("worst_ci95"), degenerate=(mean_opt == 0.0)))
    return report
