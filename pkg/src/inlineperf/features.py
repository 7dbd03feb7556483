"""Static feature extraction.

Two vectors: 20 per-function features feeding the speedup regressor, and 13
per-call-site features feeding the inlining policy. All components are
non-negative reals; ratio features use 0 when their denominator is 0.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import analysis
from .ir import CallSite, Module, Opcode, iter_calls
from .perf_oracle import DEFAULT_COST_MODEL, CostModel, static_cost

# Field order is the serialization contract; the Succecors misspelling is
# part of the published column name and is kept verbatim.
FUNCTION_FEATURE_NAMES = (
    "InstructionPerBlock",
    "SuccessorPerBlock",
    "AvgNestedLoopLevel",
    "InstrPerLoop",
    "BlockWithMultipleSuccecorsPerLoop",
    "CallsNo",
    "IsLocal",
    "MaxLoopDepth",
    "MaxDomTreeLevel",
    "CallerHeight",
    "CallUsage",
    "IsRecursive",
    "NumCallsiteInLoop",
    "EntryBlockFreq",
    "MaxCallsiteBlockFreq",
    "RetCount",
    "FmulCount",
    "FdivCount",
    "FaddCount",
    "FsubCount",
)

CALLSITE_FEATURE_NAMES = (
    "CalleeBasicBlockCount",
    "CallSiteHeight",
    "NodeCount",
    "EdgeCount",
    "NrConstantParams",
    "CalleeUsers",
    "CallerUsers",
    "CallerBasicBlockCount",
    "CallerConditionallyExecutedBlocks",
    "CalleeConditionallyExecutedBlocks",
    "CalleeCostEstimate",
    "CallSiteBlockFreq",
    "CallSiteLoopLevel",
)


@dataclass(frozen=True)
class FunctionFeatures:
    InstructionPerBlock: float
    SuccessorPerBlock: float
    AvgNestedLoopLevel: float
    InstrPerLoop: float
    BlockWithMultipleSuccecorsPerLoop: float
    CallsNo: float
    IsLocal: float
    MaxLoopDepth: float
    MaxDomTreeLevel: float
    CallerHeight: float
    CallUsage: float
    IsRecursive: float
    NumCallsiteInLoop: float
    EntryBlockFreq: float
    MaxCallsiteBlockFreq: float
    RetCount: float
    FmulCount: float
    FdivCount: float
    FaddCount: float
    FsubCount: float

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)], dtype=np.float64)


@dataclass(frozen=True)
class CallSiteFeatures:
    CalleeBasicBlockCount: float
    CallSiteHeight: float
    NodeCount: float
    EdgeCount: float
    NrConstantParams: float
    CalleeUsers: float
    CallerUsers: float
    CallerBasicBlockCount: float
    CallerConditionallyExecutedBlocks: float
    CalleeConditionallyExecutedBlocks: float
    CalleeCostEstimate: float
    CallSiteBlockFreq: float
    CallSiteLoopLevel: float

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)], dtype=np.float64)


def extract_function_features(m: Module, fname: str) -> FunctionFeatures:
    f = m.function(fname)
    n_blocks = len(f.blocks)
    loops = analysis.detect_loops(f)
    depths = analysis.loop_depths(f)
    freqs = analysis.block_frequencies(f)

    call_blocks = [b.id for b, _, _ in iter_calls(f)]
    loop_instrs = sum(
        sum(len(block.instructions) for block in f.blocks if block.id in loop.members)
        for loop in loops
    )
    branchy_in_loop = sum(
        1 for b in f.blocks if len(b.successors) >= 2 and depths[b.id] >= 1
    )
    counts = {op: 0 for op in Opcode}
    for b in f.blocks:
        for ins in b.instructions:
            counts[ins.op] += 1

    n_loops = len(loops)
    return FunctionFeatures(
        InstructionPerBlock=f.size() / n_blocks,
        SuccessorPerBlock=sum(len(b.successors) for b in f.blocks) / n_blocks,
        AvgNestedLoopLevel=sum(l.depth for l in loops) / n_loops if n_loops else 0.0,
        InstrPerLoop=loop_instrs / n_loops if n_loops else 0.0,
        BlockWithMultipleSuccecorsPerLoop=branchy_in_loop / n_loops if n_loops else 0.0,
        CallsNo=float(len(call_blocks)),
        IsLocal=float(f.is_local),
        MaxLoopDepth=float(max((l.depth for l in loops), default=0)),
        MaxDomTreeLevel=float(max(analysis.dominator_depths(f).values())),
        CallerHeight=float(analysis.call_graph_height(m, fname)),
        CallUsage=float(analysis.callsite_counts(m)[fname]),
        IsRecursive=float(analysis.is_recursive(m, fname)),
        NumCallsiteInLoop=float(sum(1 for b in call_blocks if depths[b] >= 1)),
        EntryBlockFreq=freqs[f.entry],
        MaxCallsiteBlockFreq=max((freqs[b] for b in call_blocks), default=0.0),
        RetCount=float(counts[Opcode.RET]),
        FmulCount=float(counts[Opcode.FMUL]),
        FdivCount=float(counts[Opcode.FDIV]),
        FaddCount=float(counts[Opcode.FADD]),
        FsubCount=float(counts[Opcode.FSUB]),
    )


def extract_callsite_features(
    m: Module, cs: CallSite, cm: CostModel = DEFAULT_COST_MODEL
) -> CallSiteFeatures:
    caller = m.function(cs.caller)
    callee = m.function(cs.callee)
    users = analysis.callsite_counts(m)
    graph = analysis.call_graph(m)
    caller_freqs = analysis.block_frequencies(caller)
    caller_depths = analysis.loop_depths(caller)

    def conditional_blocks(f) -> float:
        spine = analysis.exit_dominators(f)
        return float(sum(1 for b in f.blocks if b.id not in spine))

    return CallSiteFeatures(
        CalleeBasicBlockCount=float(len(callee.blocks)),
        CallSiteHeight=float(analysis.call_graph_height(m, cs.caller)),
        NodeCount=float(len(m.functions)),
        EdgeCount=float(sum(len(v) for v in graph.values())),
        NrConstantParams=float(cs.const_args),
        CalleeUsers=float(users[cs.callee]),
        CallerUsers=float(users[cs.caller]),
        CallerBasicBlockCount=float(len(caller.blocks)),
        CallerConditionallyExecutedBlocks=conditional_blocks(caller),
        CalleeConditionallyExecutedBlocks=conditional_blocks(callee),
        CalleeCostEstimate=static_cost(m, cs.callee, cm),
        CallSiteBlockFreq=caller_freqs[cs.block],
        CallSiteLoopLevel=float(caller_depths[cs.block]),
    )


def features_csv(rows: list[np.ndarray], names: tuple[str, ...]) -> str:
    """Render feature vectors as CSV with the exact fixed header."""
    lines = [",".join(names)]
    for row in rows:
        if len(row) != len(names):
            raise ValueError(f"row width {len(row)} != {len(names)}")
        lines.append(",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"
