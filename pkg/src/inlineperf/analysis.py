"""Control-flow and call-graph analyses.

Everything here is a pure function of the module structure. Results are
memoized on the analysed object's cache dict, which is safe because values
are never mutated after construction.
"""

from __future__ import annotations

from dataclasses import dataclass

from .ir import Function, Module, Opcode, ProgramError, iter_calls

# Every loop iteration estimate is this constant; block frequency is its
# power of the loop depth.
TRIP_ESTIMATE = 8


def reverse_postorder(f: Function) -> list[str]:
    blocks = f.block_map()
    seen: set[str] = set()
    order: list[str] = []

    def visit(name: str) -> None:
        # Iterative DFS; successors pushed in reverse so the first successor
        # is explored first, matching the recursive formulation.
        stack = [(name, iter(blocks[name].successors))]
        seen.add(name)
        while stack:
            node, it = stack[-1]
            for succ in it:
                if succ not in seen:
                    seen.add(succ)
                    stack.append((succ, iter(blocks[succ].successors)))
                    break
            else:
                order.append(node)
                stack.pop()

    visit(f.entry)
    return order[::-1]


def compute_dominators(f: Function) -> dict[str, str | None]:
    """Immediate dominator of every block; the entry maps to None.

    Iterative two-finger intersection over reverse postorder until fixpoint.
    """
    rpo = reverse_postorder(f)
    index = {b: i for i, b in enumerate(rpo)}
    preds: dict[str, list[str]] = {b: [] for b in rpo}
    blocks = f.block_map()
    for b in rpo:
        for s in blocks[b].successors:
            preds[s].append(b)

    idom: dict[str, str | None] = {b: None for b in rpo}
    idom[f.entry] = f.entry

    def intersect(a: str, b: str) -> str:
        while a != b:
            while index[a] > index[b]:
                a = idom[a]  # type: ignore[assignment]
            while index[b] > index[a]:
                b = idom[b]  # type: ignore[assignment]
        return a

    changed = True
    while changed:
        changed = False
        for b in rpo:
            if b == f.entry:
                continue
            candidates = [p for p in preds[b] if idom[p] is not None]
            new = candidates[0]
            for p in candidates[1:]:
                new = intersect(new, p)
            if idom[b] != new:
                idom[b] = new
                changed = True
    idom[f.entry] = None
    return idom


def dominator_depths(f: Function) -> dict[str, int]:
    """Dominator-tree level per block; the entry block is level 1."""
    idom = _cached(f, "idom", lambda: compute_dominators(f))
    depths: dict[str, int] = {}

    def depth(b: str) -> int:
        if b not in depths:
            parent = idom[b]
            depths[b] = 1 if parent is None else depth(parent) + 1
        return depths[b]

    for b in f.block_map():
        depth(b)
    return depths


def dominates(idom: dict[str, str | None], a: str, b: str) -> bool:
    """True when block a dominates block b (every block dominates itself)."""
    node: str | None = b
    while node is not None:
        if node == a:
            return True
        node = idom[node]
    return False


@dataclass(frozen=True)
class Loop:
    header: str
    members: frozenset[str]
    depth: int


def detect_loops(f: Function) -> list[Loop]:
    """Natural loops, one per header (shared-header loops merged).

    Raises ProgramError when the CFG is irreducible, i.e. some cycle remains
    after deleting every edge whose target dominates its source.
    """

    def build() -> list[Loop]:
        idom = _cached(f, "idom", lambda: compute_dominators(f))
        blocks = f.block_map()
        preds: dict[str, list[str]] = {b: [] for b in blocks}
        back_edges: list[tuple[str, str]] = []
        for b in f.blocks:
            for s in b.successors:
                preds[s].append(b.id)
                if dominates(idom, s, b.id):
                    back_edges.append((b.id, s))

        _check_reducible(f, set(back_edges))

        members: dict[str, set[str]] = {}
        for tail, header in back_edges:
            body = members.setdefault(header, {header})
            stack = [tail]
            while stack:
                node = stack.pop()
                if node not in body:
                    body.add(node)
                    stack.extend(preds[node])

        order = {b.id: i for i, b in enumerate(f.blocks)}
        headers = sorted(members, key=order.__getitem__)
        loops = []
        for h in headers:
            depth = 1 + sum(1 for other in headers if other != h and h in members[other])
            loops.append(Loop(h, frozenset(members[h]), depth))
        return loops

    return _cached(f, "loops", build)


def _check_reducible(f: Function, back_edges: set[tuple[str, str]]) -> None:
    # Kahn's algorithm on the forward edges; leftovers mean a cycle that no
    # dominator-back-edge explains.
    blocks = f.block_map()
    indeg = {b: 0 for b in blocks}
    for b in f.blocks:
        for s in b.successors:
            if (b.id, s) not in back_edges:
                indeg[s] += 1
    queue = [b for b, d in indeg.items() if d == 0]
    visited = 0
    while queue:
        visited += 1
        node = queue.pop()
        for s in blocks[node].successors:
            if (node, s) not in back_edges:
                indeg[s] -= 1
                if indeg[s] == 0:
                    queue.append(s)
    if visited != len(blocks):
        raise ProgramError(f"irreducible control flow in {f.name!r}")


def loop_depths(f: Function) -> dict[str, int]:
    """Loop nesting depth per block; blocks outside every loop are 0."""

    def build() -> dict[str, int]:
        depths = {b.id: 0 for b in f.blocks}
        for loop in detect_loops(f):
            for b in loop.members:
                depths[b] = max(depths[b], loop.depth)
        return depths

    return _cached(f, "loop_depths", build)


def block_frequencies(f: Function) -> dict[str, float]:
    """Static execution-count estimate: TRIP_ESTIMATE ** loop depth."""

    def build() -> dict[str, float]:
        return {b: float(TRIP_ESTIMATE**d) for b, d in loop_depths(f).items()}

    return _cached(f, "freqs", build)


def exit_dominators(f: Function) -> set[str]:
    """Blocks on every entry-to-exit path, i.e. dominators of the exit."""

    def build() -> set[str]:
        idom = _cached(f, "idom", lambda: compute_dominators(f))
        out: set[str] = set()
        node: str | None = f.exit_block().id
        while node is not None:
            out.add(node)
            node = idom[node]
        return out

    return _cached(f, "exit_doms", build)


def innermost_loops(f: Function) -> list[Loop]:
    """Loops containing no other loop's header: the tunable regions."""
    loops = detect_loops(f)
    headers = {l.header for l in loops}
    return [l for l in loops if not (l.members & headers) - {l.header}]


# ---------------------------------------------------------------------------
# Call graph.


def call_graph(m: Module) -> dict[str, list[str]]:
    """Distinct caller -> callee edges, callees in first-call order."""

    def build() -> dict[str, list[str]]:
        graph: dict[str, list[str]] = {name: [] for name in m.functions}
        for name, f in m.functions.items():
            for _, _, ins in iter_calls(f):
                if ins.callee not in graph[name]:
                    graph[name].append(ins.callee)  # type: ignore[arg-type]
        return graph

    return _cached(m, "call_graph", build)


def strongly_connected_components(graph: dict[str, list[str]]) -> list[list[str]]:
    """Tarjan's algorithm, iterative. Components come out callee-first:
    every component precedes the components that call into it."""
    index: dict[str, int] = {}
    low: dict[str, int] = {}
    on_stack: set[str] = set()
    stack: list[str] = []
    sccs: list[list[str]] = []
    counter = 0

    for root in graph:
        if root in index:
            continue
        work = [(root, iter(graph[root]))]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            node, it = work[-1]
            advanced = False
            for succ in it:
                if succ not in index:
                    index[succ] = low[succ] = counter
                    counter += 1
                    stack.append(succ)
                    on_stack.add(succ)
                    work.append((succ, iter(graph[succ])))
                    advanced = True
                    break
                if succ in on_stack:
                    low[node] = min(low[node], index[succ])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[node])
            if low[node] == index[node]:
                comp = []
                while True:
                    member = stack.pop()
                    on_stack.discard(member)
                    comp.append(member)
                    if member == node:
                        break
                sccs.append(comp)
    return sccs


@dataclass
class CallGraphInfo:
    sccs: list[list[str]]
    component_of: dict[str, int]
    # Component-level successor sets, excluding self loops.
    comp_edges: list[set[int]]
    heights: dict[str, int]
    recursive: set[str]


def call_graph_info(m: Module) -> CallGraphInfo:
    def build() -> CallGraphInfo:
        graph = call_graph(m)
        sccs = strongly_connected_components(graph)
        comp_of = {}
        for i, comp in enumerate(sccs):
            for name in comp:
                comp_of[name] = i
        comp_edges: list[set[int]] = [set() for _ in sccs]
        recursive: set[str] = set()
        for name, callees in graph.items():
            for callee in callees:
                a, b = comp_of[name], comp_of[callee]
                if a == b:
                    recursive.update(sccs[a])
                else:
                    comp_edges[a].add(b)
        for comp in sccs:
            if len(comp) > 1:
                recursive.update(comp)

        comp_height: list[int] = [0] * len(sccs)
        # Tarjan order is callee-first, so successors are already resolved.
        for i, edges in enumerate(comp_edges):
            comp_height[i] = 1 + max((comp_height[j] for j in edges), default=-1)
        heights = {name: comp_height[comp_of[name]] for name in graph}
        return CallGraphInfo(sccs, comp_of, comp_edges, heights, recursive)

    return _cached(m, "cg_info", build)


def call_graph_height(m: Module, fname: str) -> int:
    """Longest call chain below the function; leaves are 0. Members of one
    strongly connected component share a height."""
    if fname not in m.functions:
        raise ProgramError(f"unknown function {fname!r}")
    return call_graph_info(m).heights[fname]


def is_recursive(m: Module, fname: str) -> bool:
    return fname in call_graph_info(m).recursive


def callsite_counts(m: Module) -> dict[str, int]:
    """How many call instructions in the module target each function."""

    def build() -> dict[str, int]:
        counts = {name: 0 for name in m.functions}
        for f in m.functions.values():
            for _, _, ins in iter_calls(f):
                counts[ins.callee] += 1  # type: ignore[index]
        return counts

    return _cached(m, "callsite_counts", build)


def _cached(obj, key: str, build):
    cache = obj.analysis_cache
    if key not in cache:
        cache[key] = build()
    return cache[key]
