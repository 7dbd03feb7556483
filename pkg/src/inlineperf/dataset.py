"""Phase-1 data collection.

An autotuner walks inlining configurations of a program, the oracle prices
each one, and every sufficiently hot function contributes a (features,
speedup) training sample labeled against the never-inline baseline of the
same program. Filters follow the collection protocol: a hard upper label
guard, an optional symmetric lower guard, and a minimum runtime share.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .features import FUNCTION_FEATURE_NAMES, extract_function_features
from .inline import apply_inline, enumerate_callsites, find_callsite
from .ir import CallSite, Module, ProgramError
from .perf_oracle import (
    DEFAULT_COST_MODEL,
    CostModel,
    RuntimeProfile,
    func_runtime,
    func_speedup,
    module_runtime,
)


class DatasetError(ProgramError):
    """Bad collection input: unknown sites, bad knobs, malformed rows."""


def eligible_sites(m: Module) -> list[CallSite]:
    """Call sites a config may flip: every site except direct recursion."""
    return [cs for cs in enumerate_callsites(m) if cs.caller != cs.callee]


def apply_inline_config(m: Module, config: dict[int, bool]) -> Module:
    """Apply per-site decisions in call-site enumeration order.

    Keys must be pristine site ids of m; direct-recursive sites must not be
    set. Sites cloned by earlier inlines keep fresh ids outside the config
    and are therefore never touched.
    """
    sites = enumerate_callsites(m)
    known = {cs.id for cs in sites}
    unknown = set(config) - known
    if unknown:
        raise DatasetError(f"config refers to unknown sites {sorted(unknown)}")
    out = m
    for cs in sites:
        if not config.get(cs.id, False):
            continue
        if cs.caller == cs.callee:
            raise DatasetError(f"config inlines direct-recursive site {cs.id}")
        out = apply_inline(out, find_callsite(out, cs.id))
    return out


@dataclass(frozen=True)
class CollectConfig:
    iterations: int
    seed: int
    strategy: str = "random"
    exclusion_threshold: float = 3.0
    min_overhead_fraction: float = 0.01
    symmetric_guard: bool = False

    def validate(self) -> None:
        if self.iterations < 0:
            raise DatasetError("iterations must be non-negative")
        if self.strategy not in ("random", "hillclimb"):
            raise DatasetError(f"unknown strategy {self.strategy!r}")
        if not self.exclusion_threshold > 1.0:
            raise DatasetError("exclusion threshold must exceed 1")
        if not 0.0 < self.min_overhead_fraction < 1.0:
            raise DatasetError("min overhead fraction must be in (0, 1)")


@dataclass(frozen=True)
class TrainingSample:
    features: tuple[float, ...]
    label: float
    program_id: str
    function: str
    config_id: int
    global_speedup: float
    # Runtime share in the configured run; kept in memory for diagnostics,
    # never serialized.
    t_func: float = field(default=math.nan, compare=False)


def autotune_collect(
    m: Module,
    cc: CollectConfig,
    cm: CostModel = DEFAULT_COST_MODEL,
    program_id: str = "p0",
) -> list[TrainingSample]:
    """Explore `iterations` configs after the mandatory all-false baseline.

    random: independent fair coin per eligible site. hillclimb: flip one
    uniformly chosen bit of the best config so far, accept on strict global
    runtime improvement. Deterministic given (module, config, cost model).
    """
    cc.validate()
    sites = eligible_sites(m)
    base_prof = module_runtime(m, cm)
    rng = np.random.default_rng(cc.seed)
    samples: list[TrainingSample] = []

    baseline = {cs.id: False for cs in sites}
    _emit_samples(m, baseline, 0, base_prof, cm, cc, program_id, samples)

    if cc.strategy == "random":
        for i in range(1, cc.iterations + 1):
            bits = rng.random(len(sites)) < 0.5
            config = {cs.id: bool(b) for cs, b in zip(sites, bits)}
            _emit_samples(m, config, i, base_prof, cm, cc, program_id, samples)
    else:
        best = dict(baseline)
        best_total = base_prof.total
        for i in range(1, cc.iterations + 1):
            candidate = dict(best)
            if sites:
                flip = sites[int(rng.integers(0, len(sites)))].id
                candidate[flip] = not candidate[flip]
            total = _emit_samples(m, candidate, i, base_prof, cm, cc, program_id, samples)
            if total < best_total:
                best, best_total = candidate, total
    return samples


def _emit_samples(
    m: Module,
    config: dict[int, bool],
    config_id: int,
    base_prof: RuntimeProfile,
    cm: CostModel,
    cc: CollectConfig,
    program_id: str,
    out: list[TrainingSample],
) -> float:
    transformed = apply_inline_config(m, config)
    prof = module_runtime(transformed, cm)
    global_speedup = func_speedup(base_prof.total, prof.total)
    base_records = {r.function: r for r in base_prof.records}
    for rec in sorted(prof.records, key=lambda r: r.function):
        if rec.t_func < cc.min_overhead_fraction:
            continue
        base_rec = base_records.get(rec.function)
        if base_rec is None:
            # A function invoked under inlining was cold at baseline; there
            # is no Eq.-3 reference for it.
            continue
        label = func_speedup(
            func_runtime(base_prof.total, base_rec.t_func, base_rec.n_func),
            func_runtime(prof.total, rec.t_func, rec.n_func),
        )
        if label > cc.exclusion_threshold:
            continue
        if cc.symmetric_guard and label < 1.0 / cc.exclusion_threshold:
            continue
        feats = extract_function_features(transformed, rec.function).to_array()
        out.append(
            TrainingSample(
                features=tuple(float(v) for v in feats),
                label=float(label),
                program_id=program_id,
                function=rec.function,
                config_id=config_id,
                global_speedup=float(global_speedup),
                t_func=rec.t_func,
            )
        )
    return prof.total


def dedup(samples: list[TrainingSample]) -> list[TrainingSample]:
    """Drop exact (features, label) duplicates, keeping first occurrences."""
    seen: set[tuple] = set()
    out = []
    for s in samples:
        key = (s.features, s.label)
        if key not in seen:
            seen.add(key)
            out.append(s)
    return out


def contradiction_fraction(samples: list[TrainingSample]) -> float:
    """Share of samples whose function and global speedups pull in strictly
    opposite directions. Reported, never asserted against."""
    if not samples:
        return 0.0
    n = sum(
        1
        for s in samples
        if (s.label - 1.0) * (s.global_speedup - 1.0) < 0.0
    )
    return n / len(samples)


DATASET_COLUMNS = FUNCTION_FEATURE_NAMES + (
    "label",
    "program_id",
    "function",
    "config_id",
    "global_speedup",
)


def samples_to_csv(samples: list[TrainingSample]) -> str:
    lines = [",".join(DATASET_COLUMNS)]
    for s in samples:
        if len(s.features) != len(FUNCTION_FEATURE_NAMES):
            raise DatasetError(f"sample has {len(s.features)} features")
        row = [repr(v) for v in s.features]
        row.append(repr(s.label))
        row.extend([s.program_id, s.function, str(s.config_id), repr(s.global_speedup)])
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def samples_from_csv(text: str) -> list[TrainingSample]:
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    if not lines:
        raise DatasetError("empty dataset file")
    header = lines[0].split(",")
    if tuple(header) != DATASET_COLUMNS:
        raise DatasetError("dataset header does not match the 25-column contract")
    n_feat = len(FUNCTION_FEATURE_NAMES)
    out = []
    for ln in lines[1:]:
        cells = ln.split(",")
        if len(cells) != len(DATASET_COLUMNS):
            raise DatasetError(f"row has {len(cells)} cells: {ln!r}")
        try:
            out.append(
                TrainingSample(
                    features=tuple(float(c) for c in cells[:n_feat]),
                    label=float(cells[n_feat]),
                    program_id=cells[n_feat + 1],
                    function=cells[n_feat + 2],
                    config_id=int(cells[n_feat + 3]),
                    global_speedup=float(cells[n_feat + 4]),
                )
            )
        except ValueError as exc:
            raise DatasetError(f"malformed row {ln!r}: {exc}") from exc
    return out
