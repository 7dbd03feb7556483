"""Deterministic performance oracle.

Runtime is a weighted dynamic instruction count: block costs scale with a
static trip-count estimate per loop level, calls charge a fixed overhead
plus argument setup, and a callee's dynamic cost at a call shrinks with the
number of constant arguments (floored). Exceeding the module's cache budget
inflates everything uniformly. The oracle also attributes runtime to
functions the way a flat profiler would: self cost only, with call counts
tracked separately, which is what the speedup formulas consume.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import analysis
from .inline import tunable_regions
from .ir import Function, Module, Opcode, ProgramError, SchemaError


class OracleError(ProgramError):
    """Bad oracle input: empty profile, zero runtime, unknown region."""


COSTMODEL_SCHEMA = "costmodel/1"

UNROLL_GRID = (0, 2, 4, 8)
INTERLEAVE_GRID = (1, 2, 4)


@dataclass(frozen=True)
class CostModel:
    fadd: float = 2.0
    fsub: float = 2.0
    fmul: float = 4.0
    fdiv: float = 8.0
    ret: float = 1.0
    generic: float = 1.0
    call_overhead: float = 10.0
    per_arg_setup: float = 1.0
    # Callee dynamic cost at a call is scaled by max(floor, 1 - bonus * const_args).
    const_param_bonus: float = 0.05
    const_scale_floor: float = 0.5
    icache_beta: float = 0.5
    # Charged once per loop-member block per iteration; unrolling divides it.
    loop_overhead: float = 1.0

    def weight(self, op: Opcode) -> float:
        return getattr(self, op.value)

    def to_obj(self) -> dict:
        return {
            "schema": COSTMODEL_SCHEMA,
            "fadd": self.fadd,
            "fsub": self.fsub,
            "fmul": self.fmul,
            "fdiv": self.fdiv,
            "ret": self.ret,
            "generic": self.generic,
            "call_overhead": self.call_overhead,
            "per_arg_setup": self.per_arg_setup,
            "const_param_bonus": self.const_param_bonus,
            "const_scale_floor": self.const_scale_floor,
            "icache_beta": self.icache_beta,
            "loop_overhead": self.loop_overhead,
        }

    @staticmethod
    def from_obj(obj: dict) -> "CostModel":
        if obj.get("schema") != COSTMODEL_SCHEMA:
            raise SchemaError(f"expected schema {COSTMODEL_SCHEMA!r}, got {obj.get('schema')!r}")
        kwargs = {k: float(v) for k, v in obj.items() if k != "schema"}
        return CostModel(**kwargs)


DEFAULT_COST_MODEL = CostModel()


def const_scale(cm: CostModel, const_args: int) -> float:
    return max(cm.const_scale_floor, 1.0 - cm.const_param_bonus * const_args)


def static_cost(m: Module, fname: str, cm: CostModel = DEFAULT_COST_MODEL) -> float:
    """Frequency-free weighted instruction sum of one function body."""
    f = m.function(fname)
    total = 0.0
    for b in f.blocks:
        for ins in b.instructions:
            if ins.is_call():
                callee = m.function(ins.callee)  # type: ignore[arg-type]
                total += cm.call_overhead + cm.per_arg_setup * callee.param_count
            else:
                total += cm.weight(ins.op)
    return total


@dataclass
class ProfileRecord:
    function: str
    t_func: float
    n_func: float
    self_cost: float
    in_cycle: bool


@dataclass
class RuntimeProfile:
    total: float
    raw_total: float
    penalty: float
    size: float
    records: list[ProfileRecord] = field(default_factory=list)

    def record(self, fname: str) -> ProfileRecord:
        for r in self.records:
            if r.function == fname:
                return r
        raise OracleError(f"function {fname!r} absent from profile")


def _region_scaling(m: Module, f: Function) -> dict[str, tuple[int, int]]:
    # Innermost loops are pairwise disjoint, so each block has at most one region.
    out: dict[str, tuple[int, int]] = {}
    for loop in analysis.innermost_loops(f):
        knobs = m.tuning.get((f.name, loop.header))
        if knobs:
            for b in loop.members:
                out[b] = knobs
    return out


def effective_size(m: Module) -> float:
    """Instruction count with tuned regions expanded by unroll/interleave."""
    total = 0.0
    for f in m.functions.values():
        scaling = _region_scaling(m, f)
        for b in f.blocks:
            u, i = scaling.get(b.id, (0, 1))
            total += len(b.instructions) * max(u, 1) * i
    return total


def _function_costs(m: Module, f: Function, cm: CostModel):
    """Self cost of f plus its weighted outgoing calls.

    Returns (self_cost, calls) with calls = [(callee, freq, scale)]; freq is
    the call block's static frequency and scale the const-arg discount that
    applies to the callee's whole dynamic subtree.
    """
    freqs = analysis.block_frequencies(f)
    depths = analysis.loop_depths(f)
    scaling = _region_scaling(m, f)
    self_cost = 0.0
    calls: list[tuple[str, float, float]] = []
    for b in f.blocks:
        u, i = scaling.get(b.id, (0, 1))
        arith_scale = 1.0 / min(i, 2) if i >= 2 else 1.0
        cost = 0.0
        for ins in b.instructions:
            if ins.is_call():
                callee = m.function(ins.callee)  # type: ignore[arg-type]
                cost += cm.call_overhead + cm.per_arg_setup * callee.param_count
                calls.append((ins.callee, freqs[b.id], const_scale(cm, ins.const_args)))  # type: ignore[arg-type]
            elif ins.op in (Opcode.FADD, Opcode.FSUB, Opcode.FMUL, Opcode.FDIV):
                cost += cm.weight(ins.op) * arith_scale
            else:
                cost += cm.weight(ins.op)
        if depths[b.id] >= 1:
            cost += cm.loop_overhead / (u if u >= 2 else 1)
        self_cost += freqs[b.id] * cost
    return self_cost, calls


def module_runtime(m: Module, cm: CostModel = DEFAULT_COST_MODEL) -> RuntimeProfile:
    """Total runtime plus a flat profile (self-time shares and call counts).

    Attribution propagates caller-first over the call-graph condensation;
    edges inside a strongly connected component are relaxed exactly once, so
    recursion is charged one level deep instead of diverging.
    """
    info = analysis.call_graph_info(m)
    self_cost: dict[str, float] = {}
    calls: dict[str, list[tuple[str, float, float]]] = {}
    for name, f in m.functions.items():
        self_cost[name], calls[name] = _function_costs(m, f, cm)

    weight = {name: 0.0 for name in m.functions}  # attribution multiplier
    count = {name: 0.0 for name in m.functions}  # invocation count
    weight[m.entry_function] = 1.0
    count[m.entry_function] = 1.0

    module_order = {name: i for i, name in enumerate(m.functions)}
    for comp in reversed(info.sccs):  # reversed Tarjan order = callers first
        members = sorted(comp, key=module_order.__getitem__)
        comp_id = info.component_of[members[0]]
        for intra_pass in (True, False):
            for src in members:
                for callee, freq, scale in calls[src]:
                    if (info.component_of[callee] == comp_id) == intra_pass:
                        weight[callee] += freq * scale * weight[src]
                        count[callee] += freq * count[src]

    contributions = {name: self_cost[name] * weight[name] for name in m.functions}
    raw_total = sum(contributions.values())
    if raw_total <= 0:
        raise OracleError("module has no executable cost")

    size = effective_size(m)
    over = max(0.0, size - m.cache_budget)
    penalty = 1.0 + cm.icache_beta * over / m.cache_budget
    records = [
        ProfileRecord(
            function=name,
            t_func=contributions[name] / raw_total,
            n_func=count[name],
            self_cost=self_cost[name],
            in_cycle=name in info.recursive,
        )
        for name in m.functions
        if count[name] > 0
    ]
    return RuntimeProfile(
        total=raw_total * penalty,
        raw_total=raw_total,
        penalty=penalty,
        size=size,
        records=records,
    )


def func_runtime(total: float, t_func: float, n_func: float) -> float:
    """Per-invocation runtime attributed to a function."""
    if n_func < 1:
        raise OracleError(f"undefined profile: n_func = {n_func}")
    if not 0.0 < t_func <= 1.0:
        raise OracleError(f"t_func out of range: {t_func}")
    return total * t_func / n_func


def func_speedup(base: float, configured: float) -> float:
    """Baseline runtime over configured runtime; > 1 means faster."""
    if configured <= 0.0 or base <= 0.0:
        raise OracleError("runtimes must be positive")
    return base / configured


def trimmed_mean(values: list[float]) -> float:
    """Drop one minimum and one maximum, average the rest."""
    if len(values) < 3:
        raise OracleError(f"trimmed mean needs at least 3 runs, got {len(values)}")
    inner = sorted(values)[1:-1]
    return sum(inner) / len(inner)


@dataclass
class Measurement:
    runs: list[float]
    mean: float
    relative_variance: float
    remeasured: bool


# Measurements whose run-to-run spread exceeds this fraction are redone once.
VARIANCE_LIMIT = 0.02


def measure(
    m: Module,
    cm: CostModel = DEFAULT_COST_MODEL,
    noise_epsilon: float = 0.0,
    seed: int = 0,
    runs: int = 5,
) -> Measurement:
    """Trimmed-mean measurement protocol over seeded multiplicative noise."""
    if runs < 3:
        raise OracleError(f"need at least 3 runs, got {runs}")
    total = module_runtime(m, cm).total

    def sample(s: int) -> Measurement:
        rng = np.random.default_rng(s)
        vals = [total * float(u) for u in rng.uniform(1 - noise_epsilon, 1 + noise_epsilon, runs)]
        mean = trimmed_mean(vals)
        rel = float(np.std(vals)) / mean if mean > 0 else 0.0
        return Measurement(vals, mean, rel, False)

    result = sample(seed)
    if result.relative_variance > VARIANCE_LIMIT:
        result = sample(seed + 1)
        result.remeasured = True
    return result


def apply_unroll_config(
    m: Module, config: dict[tuple[str, str], tuple[int, int]]
) -> Module:
    """Attach unroll/interleave knobs to innermost-loop regions.

    Purely a cost-side annotation: unroll u >= 2 divides the region's
    per-iteration loop overhead by u and multiplies its size by u; interleave
    halves arithmetic weight (capped at 2x gain) and multiplies size by i.
    u = 0 leaves the region untouched.
    """
    known = set(tunable_regions(m))
    for key, (u, i) in config.items():
        if key not in known:
            raise OracleError(f"unknown tunable region {key}")
        if u not in UNROLL_GRID:
            raise OracleError(f"unroll {u} not in {UNROLL_GRID}")
        if i not in INTERLEAVE_GRID:
            raise OracleError(f"interleave {i} not in {INTERLEAVE_GRID}")
    tuning = dict(m.tuning)
    tuning.update(config)
    return Module(
        functions=dict(m.functions),
        entry_function=m.entry_function,
        cache_budget=m.cache_budget,
        next_site_id=m.next_site_id,
        tuning=tuning,
    )


def profile_rows(profile: RuntimeProfile) -> list[tuple[str, float, float, float]]:
    """Rows for the profile CSV dump: (function, t_func, n_func, total)."""
    return [(r.function, r.t_func, r.n_func, profile.total) for r in profile.records]
