"""Deployment-side comparison: inlining strategies measured under the
performance oracle, and per-region unroll/interleave autotuning.

The heuristic baseline (inline when callee static cost <= 30 and the
callee is not recursive) and the size baseline (inline only when the
module does not grow) are stand-ins for production inliners; reports
label them as such.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .analysis import is_recursive
from .inline import apply_inline, enumerate_callsites, count_tunable_regions, tunable_regions
from .ir import Module, ProgramError, dumps
from .perf_oracle import (
    DEFAULT_COST_MODEL,
    INTERLEAVE_GRID,
    UNROLL_GRID,
    CostModel,
    apply_unroll_config,
    measure,
    module_runtime,
    static_cost,
)
from .policy import GROWTH_CAP, PolicyParams, advise

HEURISTIC_COST_LIMIT = 30.0
STRATEGIES = ("never", "heuristic", "size", "policy")
STAND_IN_LABELS = {
    "never": "no inlining",
    "heuristic": "stand-in: callee static cost <= 30, non-recursive",
    "size": "stand-in: inline only when module size does not grow",
    "policy": "trained policy, argmax deployment",
}


class EvaluateError(ProgramError):
    """Corpus overlap or malformed evaluation inputs."""


def apply_strategy(m: Module, decide) -> Module:
    """Walk the evolving call-site list once per site, inlining where
    `decide(module, site)` says so; same visit order and growth cap as
    policy rollouts."""
    current = m
    cap = GROWTH_CAP * m.size()
    visited: set[int] = set()
    while True:
        site = next((cs for cs in enumerate_callsites(current) if cs.id not in visited), None)
        if site is None:
            return current
        visited.add(site.id)
        if site.caller == site.callee:
            continue
        if not decide(current, site):
            continue
        if current.size() + current.function(site.callee).size() - 2 > cap:
            continue
        current = apply_inline(current, site)


def heuristic_inline(m: Module, cm: CostModel = DEFAULT_COST_MODEL) -> Module:
    def decide(current: Module, site) -> bool:
        if is_recursive(current, site.callee):
            return False
        return static_cost(current, site.callee, cm) <= HEURISTIC_COST_LIMIT

    return apply_strategy(m, decide)


def size_baseline_inline(m: Module) -> Module:
    # |m'| = |m| + |callee| - 2, so growth-free means callee size <= 2
    return apply_strategy(m, lambda current, site: current.function(site.callee).size() <= 2)


def transform_by_strategy(
    m: Module, strategy: str, p: PolicyParams | None, cm: CostModel
) -> Module:
    if strategy == "never":
        return m
    if strategy == "heuristic":
        return heuristic_inline(m, cm)
    if strategy == "size":
        return size_baseline_inline(m)
    if strategy == "policy":
        if p is None:
            raise EvaluateError("policy strategy needs parameters")
        return advise(m, p)[0]
    raise EvaluateError(f"unknown strategy {strategy!r}")


def geometric_mean(values) -> float:
    vals = np.asarray(list(values), dtype=np.float64)
    if len(vals) == 0:
        raise EvaluateError("geometric mean of nothing")
    if np.any(vals <= 0):
        raise EvaluateError("geometric mean needs positive values")
    return float(np.exp(np.mean(np.log(vals))))


@dataclass
class EvalRow:
    program_id: str
    runtime: dict[str, float]  # trimmed-mean measured runtime per strategy
    variance: dict[str, float]  # relative variance of the measurement
    size: dict[str, int]  # instruction count per strategy
    regions: dict[str, int]  # tunable-region count per strategy

    def speedup(self, strategy: str, versus: str) -> float:
        return self.runtime[versus] / self.runtime[strategy]

    def size_ratio(self, strategy: str, versus: str) -> float:
        return self.size[strategy] / self.size[versus]


@dataclass
class EvalReport:
    rows: list[EvalRow]
    # policy speedup and size ratio against each baseline, geomeans
    speedup_geomean: dict[str, float]
    size_ratio_geomean: dict[str, float]
    noise_epsilon: float
    seed: int
    labels: dict[str, str] = field(default_factory=lambda: dict(STAND_IN_LABELS))


def evaluate(
    corpus: list[tuple[str, Module]],
    p: PolicyParams,
    cm: CostModel = DEFAULT_COST_MODEL,
    train_ids=(),
    noise_epsilon: float = 0.01,
    seed: int = 0,
    runs: int = 5,
) -> EvalReport:
    """Measure every strategy on every program; enforce train/test
    disjointness by program id."""
    if not corpus:
        raise EvaluateError("evaluation corpus is empty")
    ids = [pid for pid, _ in corpus]
    if len(set(ids)) != len(ids):
        raise EvaluateError("duplicate program ids in evaluation corpus")
    overlap = set(ids) & set(train_ids)
    if overlap:
        raise EvaluateError(f"evaluation corpus overlaps training set: {sorted(overlap)}")

    rows = []
    for pi, (pid, m) in enumerate(corpus):
        runtime: dict[str, float] = {}
        variance: dict[str, float] = {}
        size: dict[str, int] = {}
        regions: dict[str, int] = {}
        for si, strategy in enumerate(STRATEGIES):
            tm = transform_by_strategy(m, strategy, p, cm)
            meas = measure(tm, cm, noise_epsilon, seed=seed + 1000 * pi + si, runs=runs)
            runtime[strategy] = meas.mean
            variance[strategy] = meas.relative_variance
            size[strategy] = tm.size()
            regions[strategy] = count_tunable_regions(tm)
        rows.append(EvalRow(pid, runtime, variance, size, regions))

    baselines = [s for s in STRATEGIES if s != "policy"]
    speedup_geo = {
        b: geometric_mean(r.speedup("policy", b) for r in rows) for b in baselines
    }
    ratio_geo = {
        b: geometric_mean(r.size_ratio("policy", b) for r in rows) for b in baselines
    }
    return EvalReport(rows, speedup_geo, ratio_geo, noise_epsilon, seed)


def report_to_obj(report: EvalReport) -> dict:
    return {
        "labels": report.labels,
        "noise_epsilon": report.noise_epsilon,
        "seed": report.seed,
        "programs": [
            {
                "program_id": r.program_id,
                "runtime": r.runtime,
                "relative_variance": r.variance,
                "size": r.size,
                "tunable_regions": r.regions,
                "policy_speedup_vs": {
                    b: r.speedup("policy", b) for b in STRATEGIES if b != "policy"
                },
                "policy_size_ratio_vs": {
                    b: r.size_ratio("policy", b) for b in STRATEGIES if b != "policy"
                },
            }
            for r in report.rows
        ],
        "policy_speedup_geomean": report.speedup_geomean,
        "policy_size_ratio_geomean": report.size_ratio_geomean,
    }


def report_table(report: EvalReport) -> str:
    """Human-readable table: per-program policy speedups, variance, size."""
    header = (
        f"{'program':<12} {'vs-never':>9} {'vs-heur':>9} {'vs-size':>9} "
        f"{'variance':>9} {'size-ratio':>10} {'regions':>8}"
    )
    lines = [header, "-" * len(header)]
    for r in report.rows:
        lines.append(
            f"{r.program_id:<12} {r.speedup('policy', 'never'):>9.4f} "
            f"{r.speedup('policy', 'heuristic'):>9.4f} {r.speedup('policy', 'size'):>9.4f} "
            f"{r.variance['policy']:>9.4f} {r.size_ratio('policy', 'never'):>10.4f} "
            f"{r.regions['policy']:>8d}"
        )
    g = report.speedup_geomean
    lines.append("-" * len(header))
    lines.append(
        f"{'geomean':<12} {g['never']:>9.4f} {g['heuristic']:>9.4f} {g['size']:>9.4f}"
    )
    for name in ("heuristic", "size"):
        lines.append(f"note: {name} = {report.labels[name]}")
    return "\n".join(lines) + "\n"


def report_to_json(report: EvalReport) -> str:
    return dumps(report_to_obj(report))


# ---------------------------------------------------------------------------
# Region autotuning.


@dataclass
class AutotuneResult:
    best_runtime: float
    region_count: int
    best_config: dict[tuple[str, str], tuple[int, int]]
    evaluations: int


def autotune_regions(
    m: Module,
    budget: int = 120,
    cm: CostModel = DEFAULT_COST_MODEL,
    seed: int = 0,
) -> AutotuneResult:
    """Search per-region (unroll, interleave) settings under the cost
    oracle: identity first, exhaustive when the grid fits the budget,
    otherwise random search then single-region hill-climbing.

    Identity is always evaluated, so the result is never worse than the
    untuned module.
    """
    if budget < 1:
        raise EvaluateError("autotune budget must be at least 1")
    regions = tunable_regions(m)
    baseline = module_runtime(m, cm).total
    if not regions:
        return AutotuneResult(baseline, 0, {}, 1)

    grid = [(u, i) for u in UNROLL_GRID for i in INTERLEAVE_GRID]
    best_rt = baseline
    best_cfg: dict[tuple[str, str], tuple[int, int]] = {}
    evals = 1

    def try_config(cfg) -> None:
        nonlocal best_rt, best_cfg, evals
        rt = module_runtime(apply_unroll_config(m, cfg), cm).total
        evals += 1
        if rt < best_rt:
            best_rt = rt
            best_cfg = dict(cfg)

    if len(grid) ** len(regions) <= budget:
        for combo in product(grid, repeat=len(regions)):
            cfg = dict(zip(regions, combo))
            try_config(cfg)
    else:
        rng = np.random.default_rng(seed)
        explore = (budget - 1) // 2
        while evals - 1 < explore:
            cfg = {r: grid[int(rng.integers(len(grid)))] for r in regions}
            try_config(cfg)
        while evals - 1 < budget - 1:
            cfg = dict(best_cfg)
            region = regions[int(rng.integers(len(regions)))]
            cfg[region] = grid[int(rng.integers(len(grid)))]
            try_config(cfg)
    return AutotuneResult(best_rt, len(regions), best_cfg, evals)


@dataclass
class RegionRow:
    program_id: str
    regions: dict[str, int]
    untuned: dict[str, float]
    tuned: dict[str, float]


def region_report(
    corpus: list[tuple[str, Module]],
    p: PolicyParams,
    cm: CostModel = DEFAULT_COST_MODEL,
    budget: int = 120,
    seed: int = 0,
    strategies: tuple[str, ...] = ("never", "size", "policy"),
) -> list[RegionRow]:
    """Region counts and post-tuning runtimes per strategy variant of
    each program."""
    rows = []
    for pid, m in corpus:
        regions: dict[str, int] = {}
        untuned: dict[str, float] = {}
        tuned: dict[str, float] = {}
        for strategy in strategies:
            tm = transform_by_strategy(m, strategy, p, cm)
            result = autotune_regions(tm, budget=budget, cm=cm, seed=seed)
            regions[strategy] = result.region_count
            untuned[strategy] = module_runtime(tm, cm).total
            tuned[strategy] = result.best_runtime
        rows.append(RegionRow(pid, regions, untuned, tuned))
    return rows


def region_report_to_obj(rows: list[RegionRow]) -> dict:
    return {
        "programs": [
            {
                "program_id": r.program_id,
                "tunable_regions": r.regions,
                "untuned_runtime": r.untuned,
                "tuned_runtime": r.tuned,
            }
            for r in rows
        ]
    }


def region_table(rows: list[RegionRow]) -> str:
    header = (
        f"{'program':<12} {'strategy':<10} {'regions':>8} {'untuned':>14} {'tuned':>14}"
    )
    lines = [header, "-" * len(header)]
    for r in rows:
        for strategy in r.regions:
            lines.append(
                f"{r.program_id:<12} {strategy:<10} {r.regions[strategy]:>8d} "
                f"{r.untuned[strategy]:>14.4f} {r.tuned[strategy]:>14.4f}"
            )
    return "\n".join(lines) + "\n"
