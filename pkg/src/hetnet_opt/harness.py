"""
Strategy comparison over random drops: metrics, per-drop and aggregate
reports, CDF samples and optional SVG plots.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Sequence

import numpy as np

from .association import re_association, solve_fixed_association, solve_single_bs
from .fw_solver import SolverOptions, utility_of_rates
from .patterns import Topology, build_strategy_patterns, normalize_strategy
from .rates import FadingOptions, cached_rate_matrix
from .scenario import ScenarioConfig, generate_scenario

log = logging.getLogger(__name__)

DISPLAY_NAMES = {
    "all": "AllPattern",
    "feature": "FeaPattern",
    "abs": "MacroABS",
    "od1": "OD1",
    "od3": "OD3",
    "reuse1": "Reuse1",
}
DEFAULT_ORDER = ("all", "feature", "abs", "od1", "od3", "reuse1")


@dataclass(frozen=True)
class StrategySpec:
    """A candidate pattern set plus an association rule.

    ``association`` is ``"joint"`` (alternating optimization) or ``"re"``
    (range expansion with ``bias_db`` on every pico).
    """

    name: str
    patterns: str
    association: str = "joint"
    bias_db: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "patterns", normalize_strategy(self.patterns))
        if self.association not in ("joint", "re"):
            raise ValueError(f"unknown association mode {self.association!r}")
        if self.association == "re" and self.bias_db is None:
            raise ValueError("range expansion needs a bias")

    @classmethod
    def joint(cls, patterns: str) -> "StrategySpec":
        key = normalize_strategy(patterns)
        return cls(DISPLAY_NAMES[key], key)

    @classmethod
    def re_bias(cls, bias_db: float, patterns: str = "feature") -> "StrategySpec":
        key = normalize_strategy(patterns)
        return cls(f"REbias({bias_db:g})-{DISPLAY_NAMES[key]}", key, "re", float(bias_db))


def parse_strategies(text: str) -> List[StrategySpec]:
    """Parse ``all,feature,od1,...`` and ``re:<bias>[:<patterns>]`` entries."""
    out = []
    for tok in (t.strip() for t in text.split(",")):
        if not tok:
            continue
        if tok.lower() in ("*", "every"):
            out.extend(StrategySpec.joint(k) for k in DEFAULT_ORDER)
        elif tok.lower().startswith("re:"):
            parts = tok.split(":")
            pats = parts[2] if len(parts) > 2 else "feature"
            out.append(StrategySpec.re_bias(float(parts[1]), pats))
        else:
            out.append(StrategySpec.joint(tok))
    if not out:
        raise ValueError("no strategies given")
    return out


# ------------------------------------------------------------------ metrics

@dataclass
class MetricsReport:
    rates: np.ndarray
    geometric_mean: float
    arithmetic_mean: float
    sum_rate: float
    p5: float
    p50: float
    p95: float
    cdf_x: np.ndarray
    cdf_y: np.ndarray
    utility: float

    def summary(self) -> dict:
        return {"geometric_mean": self.geometric_mean, "sum_rate": self.sum_rate,
                "arithmetic_mean": self.arithmetic_mean, "p5": self.p5, "p50": self.p50,
                "p95": self.p95, "utility": self.utility}


def metrics(rate_vector, weights=None) -> MetricsReport:
    """Throughput statistics of per-user rates (bit/s)."""
    R = np.asarray(rate_vector, dtype=float).ravel()
    if R.size == 0 or np.any(~np.isfinite(R)) or np.any(R <= 0):
        raise ValueError("rates must be positive and finite")
    w = np.ones(R.size) if weights is None else np.asarray(weights, dtype=float)
    logs = np.log(R)
    x = np.sort(R)
    p5, p50, p95 = np.percentile(R, [5, 50, 95])
    return MetricsReport(
        rates=R,
        geometric_mean=float(np.exp(logs.mean())),
        arithmetic_mean=float(R.mean()),
        sum_rate=float(R.sum()),
        p5=float(p5), p50=float(p50), p95=float(p95),
        cdf_x=x,
        cdf_y=np.arange(1, R.size + 1) / R.size,
        utility=float(np.dot(w, logs)),
    )


# --------------------------------------------------------------- comparison

@dataclass
class DropResult:
    drop: int
    seed: int
    strategy: str
    metrics: Optional[dict] = None
    rates: Optional[List[float]] = None
    utility: Optional[float] = None
    relaxed_bound: Optional[float] = None
    num_patterns: Optional[int] = None
    active_patterns: Optional[int] = None
    certified: bool = False
    error: Optional[str] = None


@dataclass
class Report:
    config: dict
    strategies: List[str]
    drops: int
    seed: int
    results: List[DropResult] = field(default_factory=list)

    def for_strategy(self, name: str) -> List[DropResult]:
        return [r for r in self.results if r.strategy == name]

    def aggregate(self) -> Dict[str, dict]:
        """Per-strategy means over the drops that solved."""
        out = {}
        for name in self.strategies:
            ok = [r for r in self.for_strategy(name) if r.error is None]
            if not ok:
                out[name] = {"drops_ok": 0}
                continue
            keys = ok[0].metrics.keys()
            agg = {k: float(np.mean([r.metrics[k] for r in ok])) for k in keys}
            agg["drops_ok"] = len(ok)
            agg["certified"] = all(r.certified for r in ok)
            out[name] = agg
        return out

    def pooled_rates(self, name: str) -> np.ndarray:
        return np.concatenate([r.rates for r in self.for_strategy(name) if r.rates] or [[]])

    @property
    def all_certified(self) -> bool:
        return all(r.error is None and r.certified for r in self.results)

    def to_dict(self) -> dict:
        return {"config": self.config, "strategies": self.strategies, "drops": self.drops,
                "seed": self.seed, "results": [asdict(r) for r in self.results],
                "aggregate": self.aggregate()}


def drop_seed(seed: int, drop: int) -> int:
    return int(np.random.SeedSequence([seed, drop]).generate_state(1)[0])


def _run_drop(config: ScenarioConfig, strategies: Sequence[StrategySpec], drop: int, seed: int,
              opts: SolverOptions, relaxed_alg: str, fading: FadingOptions,
              cache_dir: Optional[str]) -> List[DropResult]:
    s = drop_seed(seed, drop)
    scenario = generate_scenario(config, s)
    topo = Topology.from_scenario(scenario)
    w = scenario.weights
    rates_by_set = {}
    joint_by_set = {}
    out = []
    for spec in strategies:
        res = DropResult(drop, s, spec.name)
        try:
            if spec.patterns not in rates_by_set:
                pats = build_strategy_patterns(spec.patterns, topo)
                rates_by_set[spec.patterns] = cached_rate_matrix(scenario, pats, fading, cache_dir)
            rm = rates_by_set[spec.patterns]
            res.num_patterns = rm.I
            if spec.association == "joint":
                if spec.patterns not in joint_by_set:
                    joint_by_set[spec.patterns] = solve_single_bs(rm, w, opts, relaxed_alg)
                jr = joint_by_set[spec.patterns]
                alloc, res.relaxed_bound, res.certified = jr.allocation, jr.relaxed_bound, jr.certified
            else:
                assoc = re_association(scenario, spec.bias_db)
                sr = solve_fixed_association(rm, assoc, w, opts, relaxed_alg)
                alloc, res.certified = sr.allocation, sr.certified
            R = alloc.user_rates(rm)
            m = metrics(R, w)
            res.metrics = m.summary()
            res.rates = R.tolist()
            res.utility = utility_of_rates(R, w)
            res.active_patterns = int(np.count_nonzero(alloc.pi > opts.tol_for(rm.I)))
        except Exception as e:  # recorded per cell, the sweep goes on
            log.exception("drop %d, strategy %s failed", drop, spec.name)
            res.error = f"{type(e).__name__}: {e}"
        out.append(res)
    return out


def run_comparison(config: ScenarioConfig, strategies: Sequence[StrategySpec], drops: int = 5,
                   seed: int = 0, opts: Optional[SolverOptions] = None, relaxed_alg: str = "fc",
                   fading: FadingOptions = FadingOptions(), cache_dir: Optional[str] = None,
                   workers: int = 1) -> Report:
    """Solve every strategy on every drop; the report depends only on the inputs."""
    if not strategies:
        raise ValueError("need at least one strategy")
    opts = opts or SolverOptions()
    config.validate()
    args = [(config, list(strategies), d, seed, opts, relaxed_alg, fading, cache_dir)
            for d in range(drops)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            per_drop = list(ex.map(_run_drop, *zip(*args)))
    else:
        per_drop = [_run_drop(*a) for a in args]
    report = Report(config.to_dict(), [s.name for s in strategies], drops, seed)
    for rows in per_drop:
        report.results.extend(rows)
    return report


def spread(aggregate: Dict[str, dict], key: str = "geometric_mean") -> float:
    vals = [v[key] for v in aggregate.values() if v.get("drops_ok")]
    return (max(vals) - min(vals)) / max(vals)


def check_gap_narrowing(light: Report, heavy: Report) -> bool:
    """Soft check: strategy spread should shrink as the load grows (warning only)."""
    a, b = spread(light.aggregate()), spread(heavy.aggregate())
    if b > a:
        log.warning("strategy spread grew with load: %.3f -> %.3f", a, b)
        return False
    return True


# ------------------------------------------------------------------ outputs

def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name)


def write_report(report: Report, out_dir: str, svg: bool = False) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w") as f:
        json.dump(report.to_dict(), f, indent=1)

    fields = ["drop", "seed", "strategy", "geometric_mean", "sum_rate", "arithmetic_mean",
              "p5", "p50", "p95", "utility", "relaxed_bound", "num_patterns",
              "active_patterns", "certified", "error"]
    with open(os.path.join(out_dir, "metrics.csv"), "w", newline="") as f:
        wr = csv.DictWriter(f, fieldnames=fields)
        wr.writeheader()
        for r in report.results:
            row = {"drop": r.drop, "seed": r.seed, "strategy": r.strategy,
                   "relaxed_bound": r.relaxed_bound, "num_patterns": r.num_patterns,
                   "active_patterns": r.active_patterns, "certified": r.certified,
                   "error": r.error or ""}
            row.update(r.metrics or {})
            wr.writerow(row)
        for name, agg in report.aggregate().items():
            row = {"drop": "mean", "strategy": name, "certified": agg.get("certified", False)}
            row.update({k: v for k, v in agg.items() if k in fields})
            wr.writerow(row)

    curves = {}
    for name in report.strategies:
        x = np.sort(report.pooled_rates(name))
        if x.size == 0:
            continue
        y = np.arange(1, x.size + 1) / x.size
        curves[name] = (x, y)
        with open(os.path.join(out_dir, f"cdf_{_slug(name)}.csv"), "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["rate_bps", "cdf"])
            wr.writerows(zip(x.tolist(), y.tolist()))
    if svg and curves:
        with open(os.path.join(out_dir, "cdf.svg"), "w") as f:
            f.write(cdf_svg(curves))
        with open(os.path.join(out_dir, "geometric_mean.svg"), "w") as f:
            agg = report.aggregate()
            f.write(bar_svg({k: v["geometric_mean"] / 1e6 for k, v in agg.items()
                             if v.get("drops_ok")}, "geometric mean rate (Mbit/s)"))


_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"]


def cdf_svg(curves: Dict[str, tuple], width: int = 640, height: int = 420) -> str:
    """Self-contained SVG with one empirical CDF line per strategy (x in Mbit/s)."""
    pad = 50
    xmax = max(float(x.max()) for x, _ in curves.values()) / 1e6
    def sx(v):
        return pad + (width - 2 * pad) * v / xmax

    def sy(v):
        return height - pad - (height - 2 * pad) * v

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<line x1="{pad}" y1="{sy(0)}" x2="{width - pad}" y2="{sy(0)}" stroke="black"/>',
             f'<line x1="{pad}" y1="{sy(0)}" x2="{pad}" y2="{sy(1)}" stroke="black"/>',
             f'<text x="{width / 2}" y="{height - 10}" text-anchor="middle">user rate (Mbit/s, max {xmax:.1f})</text>',
             f'<text x="12" y="{height / 2}" transform="rotate(-90 12 {height / 2})" text-anchor="middle">CDF</text>']
    for n, (name, (x, y)) in enumerate(curves.items()):
        c = _COLORS[n % len(_COLORS)]
        pts = " ".join(f"{sx(a / 1e6):.1f},{sy(b):.1f}" for a, b in zip(x, y))
        parts.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{pts}"/>')
        parts.append(f'<text x="{width - pad - 150}" y="{pad + 16 * n}" fill="{c}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def bar_svg(values: Dict[str, float], label: str, width: int = 640, height: int = 360) -> str:
    pad = 50
    vmax = max(values.values())
    bw = (width - 2 * pad) / max(len(values), 1)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{width / 2}" y="20" text-anchor="middle">{label}</text>']
    for n, (name, v) in enumerate(values.items()):
        h = (height - 2 * pad) * v / vmax
        x = pad + n * bw
        parts.append(f'<rect x="{x + 4:.1f}" y="{height - pad - h:.1f}" width="{bw - 8:.1f}" '
                     f'height="{h:.1f}" fill="{_COLORS[n % len(_COLORS)]}"/>')
        parts.append(f'<text x="{x + bw / 2:.1f}" y="{height - pad + 16}" font-size="11" '
                     f'text-anchor="middle">{name}</text>')
        parts.append(f'<text x="{x + bw / 2:.1f}" y="{height - pad - h - 4:.1f}" font-size="11" '
                     f'text-anchor="middle">{v:.2f}</text>')
    parts.append("</svg>")
    return "\n".join(parts)
