"""Call-site enumeration and the inlining transform.

apply_inline is a pure transform: it returns a new module that shares every
untouched function with its input. Cloned blocks get ids prefixed with the
consumed site id, which can never collide because site ids are unique and
never reused within a module.
"""

from __future__ import annotations

from . import analysis
from .ir import (
    BasicBlock,
    CallSite,
    Function,
    Instr,
    Module,
    Opcode,
    ProgramError,
    iter_calls,
)


class InlineError(ProgramError):
    """A call site cannot be inlined (missing, consumed, or self-recursive)."""


def enumerate_callsites(m: Module) -> list[CallSite]:
    """All call sites, callees before callers (bottom-up over call-graph
    SCCs), then block order and instruction order within a function."""
    info = analysis.call_graph_info(m)
    module_order = {name: i for i, name in enumerate(m.functions)}
    sites: list[CallSite] = []
    for comp in info.sccs:
        for fname in sorted(comp, key=module_order.__getitem__):
            f = m.functions[fname]
            for b, i, ins in iter_calls(f):
                sites.append(
                    CallSite(
                        id=ins.site_id,  # type: ignore[arg-type]
                        caller=fname,
                        block=b.id,
                        instr_index=i,
                        callee=ins.callee,  # type: ignore[arg-type]
                        const_args=ins.const_args,
                    )
                )
    return sites


def find_callsite(m: Module, site_id: int) -> CallSite:
    for name, f in m.functions.items():
        for b, i, ins in iter_calls(f):
            if ins.site_id == site_id:
                return CallSite(site_id, name, b.id, i, ins.callee, ins.const_args)  # type: ignore[arg-type]
    raise InlineError(f"call site {site_id} not found (unknown or already consumed)")


def apply_inline(m: Module, cs: CallSite) -> Module:
    """Inline the callee body at the given site; returns a new module.

    The call block is split at the call: its head is fused with the cloned
    callee entry, and the cloned return block (Ret dropped) is fused with the
    tail. Fusing rather than linking keeps every block non-empty, relying on
    the generator guarantee that return blocks hold at least two instructions.
    """
    site = find_callsite(m, cs.id)
    if site.caller != cs.caller or site.callee != cs.callee:
        raise InlineError(f"call site {cs.id} does not match module state")
    if site.callee == site.caller:
        raise InlineError(f"refusing to inline direct recursion at site {cs.id}")

    caller = m.functions[site.caller]
    callee = m.functions[site.callee]
    exit_id = callee.exit_block().id

    # Fresh ids for cloned blocks; the callee entry fuses into the call block.
    prefix = f"i{cs.id}_"
    id_map = {b.id: prefix + b.id for b in callee.blocks}
    id_map[callee.entry] = site.block

    next_site = m.next_site_id

    def clone_instrs(block: BasicBlock, drop_ret: bool) -> list[Instr]:
        nonlocal next_site
        out = []
        src = block.instructions[:-1] if drop_ret else block.instructions
        for ins in src:
            if ins.is_call():
                out.append(Instr(Opcode.CALL, ins.callee, ins.const_args, next_site))
                next_site += 1
            else:
                out.append(Instr(ins.op))
        return out

    call_block = caller.block_map()[site.block]
    pre = call_block.instructions[: site.instr_index]
    post = call_block.instructions[site.instr_index + 1 :]

    entry_block = callee.block_map()[callee.entry]
    if callee.entry == exit_id:
        # Single-block callee: everything fuses into the call block.
        new_call_block = BasicBlock(
            id=site.block,
            instructions=pre + clone_instrs(entry_block, drop_ret=True) + post,
            successors=list(call_block.successors),
        )
        cloned: list[BasicBlock] = []
    else:
        new_call_block = BasicBlock(
            id=site.block,
            instructions=pre + clone_instrs(entry_block, drop_ret=False),
            successors=[id_map[s] for s in entry_block.successors],
        )
        cloned = []
        for b in callee.blocks:
            if b.id == callee.entry:
                continue
            drop_ret = b.id == exit_id
            nb = BasicBlock(
                id=id_map[b.id],
                instructions=clone_instrs(b, drop_ret),
                successors=list(call_block.successors)
                if drop_ret
                else [id_map[s] for s in b.successors],
            )
            if drop_ret:
                nb.instructions = nb.instructions + post
            cloned.append(nb)

    new_blocks: list[BasicBlock] = []
    for b in caller.blocks:
        if b.id == site.block:
            new_blocks.append(new_call_block)
            new_blocks.extend(cloned)
        else:
            new_blocks.append(b)

    new_caller = Function(
        name=caller.name,
        is_local=caller.is_local,
        param_count=caller.param_count,
        entry=caller.entry,
        blocks=new_blocks,
    )
    functions = {
        name: (new_caller if name == caller.name else f) for name, f in m.functions.items()
    }
    return Module(
        functions=functions,
        entry_function=m.entry_function,
        cache_budget=m.cache_budget,
        next_site_id=next_site,
        tuning=dict(m.tuning),
    )


def tunable_regions(m: Module) -> list[tuple[str, str]]:
    """(function, header) for every innermost loop, in deterministic order."""
    out = []
    for name, f in m.functions.items():
        for loop in analysis.innermost_loops(f):
            out.append((name, loop.header))
    return out


def count_tunable_regions(m: Module) -> int:
    return len(tunable_regions(m))
