"""Hand-built module fixtures and small test utilities."""

from __future__ import annotations

import os
from pathlib import Path

from inlineperf.ir import (
    BasicBlock,
    Function,
    Instr,
    Module,
    Opcode,
    default_cache_budget,
    iter_calls,
)

FIXTURES = Path(__file__).parent / "fixtures"


def instr(token: str) -> Instr:
    """'fadd' | 'ret' | 'call:callee' | 'call:callee:n_const_args'."""
    if token.startswith("call"):
        parts = token.split(":")
        return Instr(Opcode.CALL, callee=parts[1], const_args=int(parts[2]) if len(parts) > 2 else 0)
    return Instr(Opcode(token))


def func(name, blocks, entry="b0", params=0, local=False) -> Function:
    built = [
        BasicBlock(bid, [instr(t) for t in text.split()], list(succ))
        for bid, text, succ in blocks
    ]
    return Function(name=name, is_local=local, param_count=params, entry=entry, blocks=built)


def module(*funcs: Function, entry: str | None = None, budget: int | None = None) -> Module:
    m = Module(
        functions={f.name: f for f in funcs},
        entry_function=entry or funcs[0].name,
        cache_budget=1,
        next_site_id=0,
    )
    next_id = 0
    for f in funcs:
        for _, _, ins in iter_calls(f):
            ins.site_id = next_id
            next_id += 1
    m.next_site_id = next_id
    m.cache_budget = budget if budget is not None else default_cache_budget(m.size())
    return m


def site_by_id(sites, sid):
    return next(cs for cs in sites if cs.id == sid)


def check_golden(path: Path, text: str) -> None:
    """Compare against a frozen snapshot; UPDATE_GOLDENS=1 rewrites it."""
    if os.environ.get("UPDATE_GOLDENS") == "1":
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        return
    assert path.exists(), f"golden file {path} missing; run with UPDATE_GOLDENS=1"
    assert text == path.read_text(), f"output differs from frozen snapshot {path}"


def slow_dominator_sets(f: Function) -> dict[str, set[str]]:
    """Quadratic dataflow dominator oracle, independent of the fast path."""
    names = [b.id for b in f.blocks]
    preds: dict[str, list[str]] = {b: [] for b in names}
    for b in f.blocks:
        for s in b.successors:
            preds[s].append(b.id)
    dom = {b: set(names) for b in names}
    dom[f.entry] = {f.entry}
    changed = True
    while changed:
        changed = False
        for b in names:
            if b == f.entry:
                continue
            incoming = [dom[p] for p in preds[b]]
            new = set.intersection(*incoming) | {b} if incoming else {b}
            if new != dom[b]:
                dom[b] = new
                changed = True
    return dom


def fast_dominator_sets(f: Function) -> dict[str, set[str]]:
    from inlineperf.analysis import compute_dominators

    idom = compute_dominators(f)
    out = {}
    for b in f.block_map():
        chain = {b}
        node = idom[b]
        while node is not None:
            chain.add(node)
            node = idom[node]
        out[b] = chain
    return out


def jacobi_eigh(matrix):
    """Cyclic Jacobi eigensolver for symmetric matrices; the reference
    implementation the production eigendecomposition is checked against.
    Returns (eigenvalues descending, eigenvectors as rows)."""
    import numpy as np

    A = np.array(matrix, dtype=np.float64)
    n = A.shape[0]
    V = np.eye(n)
    tol = 1e-12 * max(abs(np.trace(A)), 1e-300)

    def off_norm():
        return np.sqrt(np.sum(A**2) - np.sum(np.diag(A) ** 2))

    for _ in range(200):
        if off_norm() <= tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(A[p, q]) <= tol / n**2:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * A[p, q])
                if abs(theta) > 1e100:
                    t = 1.0 / (2.0 * theta)
                elif theta == 0.0:
                    t = 1.0
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta**2 + 1.0))
                c = 1.0 / np.sqrt(t**2 + 1.0)
                s = t * c
                J = np.eye(n)
                J[p, p] = J[q, q] = c
                J[p, q] = s
                J[q, p] = -s
                A = J.T @ A @ J
                V = V @ J
    order = np.argsort(np.diag(A))[::-1]
    return np.diag(A)[order], V[:, order].T


def make_samples(X, labels=None, program_id="p0"):
    from inlineperf.dataset import TrainingSample

    out = []
    for i, row in enumerate(X):
        out.append(
            TrainingSample(
                features=tuple(float(v) for v in row),
                label=float(labels[i]) if labels is not None else 1.0,
                program_id=program_id,
                function=f"f{i}",
                config_id=i,
                global_speedup=1.0,
            )
        )
    return out


def fd_gradient_error(model, X, y, rng, n_coords=20, h=1e-6):
    """Worst relative mismatch between backprop and central differences
    over a random subset of parameter coordinates."""
    import numpy as np

    from inlineperf.speedup_model import backward, loss_on

    grads_w, grads_b, _ = backward(model, X, y)
    coords = []
    for k in range(len(model.weights)):
        for idx in np.ndindex(model.weights[k].shape):
            coords.append(("w", k, idx))
        for idx in np.ndindex(model.biases[k].shape):
            coords.append(("b", k, idx))
    if n_coords is None or n_coords >= len(coords):
        picks = range(len(coords))
    else:
        picks = rng.choice(len(coords), size=n_coords, replace=False)
    worst = 0.0
    for ci in picks:
        kind, k, idx = coords[int(ci)]
        arr = model.weights[k] if kind == "w" else model.biases[k]
        grad = (grads_w if kind == "w" else grads_b)[k][idx]
        orig = arr[idx]
        arr[idx] = orig + h
        up = loss_on(model, X, y)
        arr[idx] = orig - h
        down = loss_on(model, X, y)
        arr[idx] = orig
        fd = (up - down) / (2.0 * h)
        rel = abs(fd - grad) / max(abs(fd), abs(grad), 1e-2)
        worst = max(worst, rel)
    return worst
