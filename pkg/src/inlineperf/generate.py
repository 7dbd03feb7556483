"""Seeded synthetic program generator.

Programs are built from structured control flow only (chains, diamonds,
while-loops), which keeps every CFG reducible by construction. The same
config always yields a bit-identical module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ir import (
    ARITH_OPS,
    BasicBlock,
    Function,
    Instr,
    Module,
    Opcode,
    ProgramError,
    default_cache_budget,
    iter_calls,
    validate_module,
)


class ConfigError(ProgramError):
    """Generator config fails validation."""


@dataclass(frozen=True)
class GenConfig:
    """Knobs for one generated module.

    blocks_per_function bounds the number of structural segments laid out
    between the dedicated entry and exit blocks. callsite_density is the
    probability that any given block hosts one call. recursion_probability
    is the chance a call targets an already-generated function (possibly the
    caller itself); zero guarantees an acyclic call graph.
    """

    seed: int
    n_functions: int = 4
    blocks_per_function: tuple[int, int] = (2, 5)
    loop_probability: float = 0.3
    callsite_density: float = 0.4
    recursion_probability: float = 0.0
    max_loop_depth: int = 3
    # Total structural nesting budget (loops and diamonds combined); keeps
    # the recursive layout finite.
    max_nesting: int = 4
    instrs_per_block: tuple[int, int] = (1, 4)
    max_params: int = 3
    local_probability: float = 0.5
    diamond_probability: float = 0.25

    def validate(self) -> None:
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.n_functions < 1:
            raise ConfigError("need at least one function")
        for lo, hi, what in (
            (*self.blocks_per_function, "blocks_per_function"),
            (*self.instrs_per_block, "instrs_per_block"),
        ):
            if not (1 <= lo <= hi):
                raise ConfigError(f"bad {what} range ({lo}, {hi})")
        for p, what in (
            (self.loop_probability, "loop_probability"),
            (self.callsite_density, "callsite_density"),
            (self.recursion_probability, "recursion_probability"),
            (self.local_probability, "local_probability"),
            (self.diamond_probability, "diamond_probability"),
        ):
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{what} must be in [0, 1], got {p}")
        if self.max_loop_depth < 1:
            raise ConfigError("max_loop_depth must be at least 1")
        if self.max_nesting < 1:
            raise ConfigError("max_nesting must be at least 1")
        if self.max_params < 0:
            raise ConfigError("max_params must be non-negative")


_BODY_OPS = ARITH_OPS + (Opcode.GENERIC,)


class _FunctionBuilder:
    def __init__(self, cfg: GenConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self.blocks: list[BasicBlock] = []

    def new_block(self) -> BasicBlock:
        b = BasicBlock(id=f"b{len(self.blocks)}", instructions=[])
        self.blocks.append(b)
        return b

    def fill(self, b: BasicBlock) -> None:
        lo, hi = self.cfg.instrs_per_block
        for _ in range(int(self.rng.integers(lo, hi + 1))):
            op = _BODY_OPS[int(self.rng.integers(0, len(_BODY_OPS)))]
            b.instructions.append(Instr(op))

    def segment(self, loop_depth: int, nest: int) -> tuple[BasicBlock, BasicBlock]:
        r = float(self.rng.random())
        if nest < self.cfg.max_nesting:
            if r < self.cfg.loop_probability and loop_depth < self.cfg.max_loop_depth:
                return self.loop(loop_depth, nest)
            if r < self.cfg.loop_probability + self.cfg.diamond_probability:
                return self.diamond(loop_depth, nest)
        b = self.new_block()
        self.fill(b)
        return b, b

    def loop(self, loop_depth: int, nest: int) -> tuple[BasicBlock, BasicBlock]:
        header = self.new_block()
        self.fill(header)
        n_body = int(self.rng.integers(1, 3))
        first, last = self.chain(n_body, loop_depth + 1, nest + 1)
        header.successors.append(first.id)
        last.successors.append(header.id)
        # The forward edge out of the loop is linked by the caller.
        return header, header

    def diamond(self, loop_depth: int, nest: int) -> tuple[BasicBlock, BasicBlock]:
        cond = self.new_block()
        self.fill(cond)
        arms = []
        for _ in range(2):
            first, last = self.chain(1, loop_depth, nest + 1)
            cond.successors.append(first.id)
            arms.append(last)
        join = self.new_block()
        self.fill(join)
        for last in arms:
            last.successors.append(join.id)
        return cond, join

    def chain(self, n_segments: int, loop_depth: int, nest: int) -> tuple[BasicBlock, BasicBlock]:
        first, last = self.segment(loop_depth, nest)
        for _ in range(n_segments - 1):
            nxt_first, nxt_last = self.segment(loop_depth, nest)
            last.successors.append(nxt_first.id)
            last = nxt_last
        return first, last

    def build(self) -> list[BasicBlock]:
        lo, hi = self.cfg.blocks_per_function
        n_segments = int(self.rng.integers(lo, hi + 1))
        entry = self.new_block()
        self.fill(entry)
        first, last = self.chain(n_segments, 0, 0)
        entry.successors.append(first.id)
        exit_block = self.new_block()
        self.fill(exit_block)
        exit_block.instructions.append(Instr(Opcode.RET))
        last.successors.append(exit_block.id)
        return self.blocks


def generate_program(cfg: GenConfig) -> Module:
    """Deterministically generate one module from the config."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    names = [f"f{i}" for i in range(cfg.n_functions)]

    # Signatures first so call sites can bound const_args by the callee.
    params = [int(rng.integers(0, cfg.max_params + 1)) for _ in names]
    locals_ = [bool(rng.random() < cfg.local_probability) for _ in names]
    locals_[0] = False

    functions: dict[str, Function] = {}
    for i, name in enumerate(names):
        blocks = _FunctionBuilder(cfg, rng).build()
        _insert_calls(cfg, rng, i, names, params, blocks)
        functions[name] = Function(
            name=name,
            is_local=locals_[i],
            param_count=params[i],
            entry="b0",
            blocks=blocks,
        )

    next_id = 0
    for f in functions.values():
        for _, _, ins in iter_calls(f):
            ins.site_id = next_id
            next_id += 1

    m = Module(
        functions=functions,
        entry_function=names[0],
        cache_budget=default_cache_budget(sum(f.size() for f in functions.values())),
        next_site_id=next_id,
    )
    validate_module(m)
    return m


def _insert_calls(
    cfg: GenConfig,
    rng: np.random.Generator,
    index: int,
    names: list[str],
    params: list[int],
    blocks: list[BasicBlock],
) -> None:
    forward = names[index + 1 :]
    backward = names[: index + 1]
    for b in blocks:
        if rng.random() >= cfg.callsite_density:
            continue
        if cfg.recursion_probability > 0 and rng.random() < cfg.recursion_probability:
            pool = backward
        else:
            pool = forward
        if not pool:
            continue
        callee = pool[int(rng.integers(0, len(pool)))]
        const_args = int(rng.integers(0, params[names.index(callee)] + 1))
        ends_with_ret = bool(b.instructions) and b.instructions[-1].op is Opcode.RET
        limit = len(b.instructions) - 1 if ends_with_ret else len(b.instructions)
        pos = int(rng.integers(0, limit + 1))
        b.instructions.insert(pos, Instr(Opcode.CALL, callee=callee, const_args=const_args))
