"""Core program representation: modules, functions, blocks, instructions.

A module is a closed set of functions with a designated entry function.
Function bodies are control-flow graphs of basic blocks; the only opcodes
are a handful of arithmetic ops, a call, a return, and a generic filler.
Values are treated as immutable: transforms return new objects and never
touch their inputs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum


class ProgramError(Exception):
    """A module or function violates a structural invariant."""


class SchemaError(ProgramError):
    """A serialized artifact does not match the expected schema."""


class Opcode(Enum):
    FADD = "fadd"
    FSUB = "fsub"
    FMUL = "fmul"
    FDIV = "fdiv"
    RET = "ret"
    CALL = "call"
    GENERIC = "generic"


ARITH_OPS = (Opcode.FADD, Opcode.FSUB, Opcode.FMUL, Opcode.FDIV)


@dataclass
class Instr:
    """One instruction. Call instructions carry their callee, the number of
    constant arguments at the site, and a module-wide unique site id."""

    op: Opcode
    callee: str | None = None
    const_args: int = 0
    site_id: int | None = None

    def __post_init__(self) -> None:
        if self.op is Opcode.CALL:
            if self.callee is None:
                raise ProgramError("call instruction requires a callee")
        elif self.callee is not None or self.const_args or self.site_id is not None:
            raise ProgramError(f"{self.op.value} instruction cannot carry call fields")

    def is_call(self) -> bool:
        return self.op is Opcode.CALL


@dataclass
class BasicBlock:
    id: str
    instructions: list[Instr]
    successors: list[str] = field(default_factory=list)


@dataclass
class Function:
    name: str
    is_local: bool
    param_count: int
    entry: str
    blocks: list[BasicBlock]
    # Lazily filled by the analysis layer; never serialized or compared.
    analysis_cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def block_map(self) -> dict[str, BasicBlock]:
        return {b.id: b for b in self.blocks}

    def exit_block(self) -> BasicBlock:
        for b in self.blocks:
            if b.instructions and b.instructions[-1].op is Opcode.RET:
                return b
        raise ProgramError(f"function {self.name!r} has no return block")

    def size(self) -> int:
        return sum(len(b.instructions) for b in self.blocks)


@dataclass
class CallSite:
    """A view of one call instruction, located by its module-wide id."""

    id: int
    caller: str
    block: str
    instr_index: int
    callee: str
    const_args: int


@dataclass
class Module:
    functions: dict[str, Function]
    entry_function: str
    cache_budget: int
    next_site_id: int
    # Loop-region tuning knobs: (function, header block) -> (unroll, interleave).
    # Affects only the cost oracle, never the program structure.
    tuning: dict[tuple[str, str], tuple[int, int]] = field(default_factory=dict)
    analysis_cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def size(self) -> int:
        return sum(f.size() for f in self.functions.values())

    def function(self, name: str) -> Function:
        try:
            return self.functions[name]
        except KeyError:
            raise ProgramError(f"unknown function {name!r}") from None


def iter_calls(f: Function):
    """Yield (block, instr_index, instr) for every call in block order."""
    for b in f.blocks:
        for i, ins in enumerate(b.instructions):
            if ins.is_call():
                yield b, i, ins


def validate_module(m: Module) -> None:
    """Raise ProgramError on any structural violation.

    Checks block uniqueness, non-empty instruction lists, single-return shape,
    successor integrity, reachability from entry, call targets and const-arg
    bounds, site-id uniqueness, and CFG reducibility.
    """
    if m.entry_function not in m.functions:
        raise ProgramError(f"entry function {m.entry_function!r} missing")
    if m.cache_budget < 1:
        raise ProgramError("cache budget must be a positive integer")

    seen_sites: set[int] = set()
    for name, f in m.functions.items():
        if name != f.name:
            raise ProgramError(f"function key {name!r} does not match name {f.name!r}")
        _validate_function(m, f, seen_sites)
    if seen_sites and m.next_site_id <= max(seen_sites):
        raise ProgramError("next_site_id must exceed every existing site id")

    for fname, header in m.tuning:
        f = m.function(fname)
        if header not in f.block_map():
            raise ProgramError(f"tuning refers to unknown block {fname}:{header}")

    # Reducibility is a dominator property; checked via the analysis layer.
    from . import analysis

    for f in m.functions.values():
        analysis.detect_loops(f)


def _validate_function(m: Module, f: Function, seen_sites: set[int]) -> None:
    ids = [b.id for b in f.blocks]
    if len(ids) != len(set(ids)):
        raise ProgramError(f"duplicate block id in {f.name!r}")
    blocks = f.block_map()
    if f.entry not in blocks:
        raise ProgramError(f"entry block {f.entry!r} missing in {f.name!r}")
    if f.param_count < 0:
        raise ProgramError(f"negative param count in {f.name!r}")

    ret_blocks = []
    for b in f.blocks:
        if not b.instructions:
            raise ProgramError(f"empty block {f.name}:{b.id}")
        for s in b.successors:
            if s not in blocks:
                raise ProgramError(f"dangling successor {f.name}:{b.id} -> {s}")
        for i, ins in enumerate(b.instructions):
            if ins.op is Opcode.RET:
                if i != len(b.instructions) - 1:
                    raise ProgramError(f"return not last in {f.name}:{b.id}")
                ret_blocks.append(b)
            if ins.is_call():
                if ins.callee is None or ins.callee not in m.functions:
                    raise ProgramError(f"call to unknown function {ins.callee!r} in {f.name}")
                target = m.functions[ins.callee]
                if not 0 <= ins.const_args <= target.param_count:
                    raise ProgramError(
                        f"const_args {ins.const_args} out of range for {ins.callee!r}"
                    )
                if ins.site_id is None or ins.site_id < 0:
                    raise ProgramError(f"call without site id in {f.name}:{b.id}")
                if ins.site_id in seen_sites:
                    raise ProgramError(f"duplicate site id {ins.site_id}")
                seen_sites.add(ins.site_id)
    if len(ret_blocks) != 1:
        raise ProgramError(f"{f.name!r} must have exactly one return block")
    if ret_blocks[0].successors:
        raise ProgramError(f"return block {f.name}:{ret_blocks[0].id} has successors")

    reachable = _reachable(f)
    if reachable != set(blocks):
        missing = sorted(set(blocks) - reachable)
        raise ProgramError(f"unreachable blocks in {f.name!r}: {missing}")


def _reachable(f: Function) -> set[str]:
    blocks = f.block_map()
    seen = {f.entry}
    stack = [f.entry]
    while stack:
        for s in blocks[stack.pop()].successors:
            if s not in seen:
                seen.add(s)
                stack.append(s)
    return seen


def default_cache_budget(total_instructions: int) -> int:
    """Budget sized to the pristine module with 20% headroom."""
    return math.ceil(1.2 * total_instructions)


# ---------------------------------------------------------------------------
# Serialization, schema "progmodel/1". Field order is fixed so that equal
# modules always serialize to identical bytes.

PROGMODEL_SCHEMA = "progmodel/1"


def _instr_to_obj(ins: Instr) -> dict:
    if ins.is_call():
        return {
            "op": ins.op.value,
            "callee": ins.callee,
            "const_args": ins.const_args,
            "site_id": ins.site_id,
        }
    return {"op": ins.op.value}


def _instr_from_obj(obj: dict) -> Instr:
    try:
        op = Opcode(obj["op"])
    except (KeyError, ValueError) as exc:
        raise SchemaError(f"bad instruction record: {obj!r}") from exc
    if op is Opcode.CALL:
        return Instr(op, obj["callee"], int(obj["const_args"]), int(obj["site_id"]))
    return Instr(op)


def module_to_obj(m: Module) -> dict:
    obj: dict = {
        "schema": PROGMODEL_SCHEMA,
        "entry_function": m.entry_function,
        "cache_budget": m.cache_budget,
        "next_site_id": m.next_site_id,
        "functions": [
            {
                "name": f.name,
                "is_local": f.is_local,
                "param_count": f.param_count,
                "entry": f.entry,
                "blocks": [
                    {
                        "id": b.id,
                        "instructions": [_instr_to_obj(i) for i in b.instructions],
                        "successors": list(b.successors),
                    }
                    for b in f.blocks
                ],
            }
            for f in m.functions.values()
        ],
    }
    if m.tuning:
        obj["tuning"] = [
            [fn, header, u, i] for (fn, header), (u, i) in sorted(m.tuning.items())
        ]
    return obj


def module_from_obj(obj: dict) -> Module:
    if not isinstance(obj, dict) or obj.get("schema") != PROGMODEL_SCHEMA:
        raise SchemaError(f"expected schema {PROGMODEL_SCHEMA!r}, got {obj.get('schema')!r}")
    try:
        functions = {}
        for fo in obj["functions"]:
            f = Function(
                name=fo["name"],
                is_local=bool(fo["is_local"]),
                param_count=int(fo["param_count"]),
                entry=fo["entry"],
                blocks=[
                    BasicBlock(
                        id=bo["id"],
                        instructions=[_instr_from_obj(io) for io in bo["instructions"]],
                        successors=list(bo["successors"]),
                    )
                    for bo in fo["blocks"]
                ],
            )
            functions[f.name] = f
        tuning = {
            (fn, header): (int(u), int(i)) for fn, header, u, i in obj.get("tuning", [])
        }
        return Module(
            functions=functions,
            entry_function=obj["entry_function"],
            cache_budget=int(obj["cache_budget"]),
            next_site_id=int(obj["next_site_id"]),
            tuning=tuning,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed module record: {exc}") from exc


def dumps(obj: dict) -> str:
    """Canonical JSON encoding used for every artifact this package writes."""
    return json.dumps(obj, indent=2) + "\n"


def module_to_json(m: Module) -> str:
    return dumps(module_to_obj(m))


def module_from_json(text: str) -> Module:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"not valid JSON: {exc}") from exc
    return module_from_obj(obj)
