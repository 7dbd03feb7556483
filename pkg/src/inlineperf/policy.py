"""Inlining agent: a softmax policy over the 13 call-site features,
trained with perturbed-parameter rollouts and a log-likelihood update,
rewarded by the speedup regression model.

The network is 13-64-64-2 (logits for no-inline / inline). Inputs pass
through log1p first to tame the count-scale features. Deployment
(`advise`) runs the same walk in argmax mode and needs no reward model.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .features import extract_callsite_features
from .inline import apply_inline, enumerate_callsites
from .ir import Module, ProgramError, SchemaError, dumps
from .speedup_model import RegressionModel, predict_speedup

POLICY_SCHEMA = "policy/1"
POLICY_DIMS = (13, 64, 64, 2)
POLICY_SLOPE = 0.01
GROWTH_CAP = 64
TIE_RULE = "no-inline"
FORCED_RULE = "direct-recursion-no-inline"


class PolicyError(ProgramError):
    """Bad trainer configuration or malformed policy files."""


@dataclass
class PolicyParams:
    weights: list[np.ndarray]  # per layer, shape (out, in)
    biases: list[np.ndarray]
    slope: float = POLICY_SLOPE

    def dims(self) -> tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    def copy_params(self) -> "PolicyParams":
        return PolicyParams(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            slope=self.slope,
        )


def init_policy(seed: int, dims: tuple[int, ...] = POLICY_DIMS) -> PolicyParams:
    rng = np.random.default_rng(seed)
    weights = []
    biases = []
    for fan_in, fan_out in zip(dims, dims[1:]):
        scale = np.sqrt(2.0 / fan_in)
        weights.append(rng.normal(0.0, scale, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return PolicyParams(weights=weights, biases=biases)


def zero_policy(dims: tuple[int, ...] = POLICY_DIMS) -> PolicyParams:
    return PolicyParams(
        weights=[np.zeros((o, i)) for i, o in zip(dims, dims[1:])],
        biases=[np.zeros(o) for o in dims[1:]],
    )


def _forward_cached(p: PolicyParams, X: np.ndarray):
    acts = [np.log1p(X)]
    pre = []
    h = acts[0]
    last = len(p.weights) - 1
    for k, (W, b) in enumerate(zip(p.weights, p.biases)):
        z = h @ W.T + b
        pre.append(z)
        h = z if k == last else np.where(z > 0, z, p.slope * z)
        acts.append(h)
    return acts, pre


def logits(p: PolicyParams, x: np.ndarray) -> np.ndarray:
    acts, _ = _forward_cached(p, np.asarray(x, dtype=np.float64)[None, :])
    return acts[-1][0]


def log_probs(p: PolicyParams, x: np.ndarray) -> np.ndarray:
    z = logits(p, x)
    m = float(np.max(z))
    return z - (m + np.log(np.sum(np.exp(z - m))))


def action_probabilities(p: PolicyParams, x: np.ndarray) -> np.ndarray:
    return np.exp(log_probs(p, x))


def act(p: PolicyParams, x: np.ndarray, mode: str = "sample", rng=None) -> tuple[bool, float]:
    """Pick inline (True) or not; ties in argmax mode break to no-inline."""
    lp = log_probs(p, x)
    if mode == "argmax":
        idx = 1 if lp[1] > lp[0] else 0
    elif mode == "sample":
        if rng is None:
            raise PolicyError("sample mode needs an rng")
        idx = 1 if rng.random() < np.exp(lp[1]) else 0
    else:
        raise PolicyError(f"unknown action mode {mode!r}")
    return bool(idx), float(lp[idx])


# ---------------------------------------------------------------------------
# Rollouts.


@dataclass(frozen=True)
class Step:
    features: tuple[float, ...]
    action: bool
    log_prob: float
    # Forced no-inline (direct recursion or the size guard): probability 1,
    # excluded from the gradient.
    forced: bool = False


@dataclass
class Trajectory:
    steps: list[Step] = field(default_factory=list)
    total_reward: float = float("nan")
    guard_hits: int = 0


@dataclass(frozen=True)
class Decision:
    site_id: int
    caller: str
    callee: str
    features: tuple[float, ...]
    action: bool


def _walk(
    m: Module,
    p: PolicyParams,
    mode: str,
    rng,
    logprob_params: PolicyParams | None = None,
):
    """Visit each call site of the evolving module once, newest last.

    Inlining consumes the visited site and may clone new ones; the walk
    picks the first not-yet-visited site each round, so clones are seen.
    Module size is hard-capped at GROWTH_CAP times the input size.
    """
    base = logprob_params if logprob_params is not None else p
    current = m
    size_cap = GROWTH_CAP * m.size()
    visited: set[int] = set()
    steps: list[Step] = []
    decisions: list[Decision] = []
    guard_hits = 0
    while True:
        site = next((cs for cs in enumerate_callsites(current) if cs.id not in visited), None)
        if site is None:
            break
        visited.add(site.id)
        feats = extract_callsite_features(current, site).to_array()
        if site.caller == site.callee:
            steps.append(Step(tuple(feats), False, 0.0, forced=True))
            decisions.append(Decision(site.id, site.caller, site.callee, tuple(feats), False))
            continue
        action, _ = act(p, feats, mode, rng)
        log_prob = float(log_probs(base, feats)[1 if action else 0])
        if action:
            grown = current.size() + current.function(site.callee).size() - 2
            if grown > size_cap:
                guard_hits += 1
                steps.append(Step(tuple(feats), False, 0.0, forced=True))
                decisions.append(
                    Decision(site.id, site.caller, site.callee, tuple(feats), False)
                )
                continue
            current = apply_inline(current, site)
        steps.append(Step(tuple(feats), action, log_prob))
        decisions.append(Decision(site.id, site.caller, site.callee, tuple(feats), action))
    return steps, decisions, current, guard_hits


def total_predicted_speedup(model: RegressionModel, m: Module) -> float:
    return sum(predict_speedup(model, m, name) for name in sorted(m.functions))


def rollout(
    m: Module,
    p: PolicyParams,
    model: RegressionModel,
    mode: str = "sample",
    rng=None,
    logprob_params: PolicyParams | None = None,
) -> tuple[Trajectory, Module]:
    steps, _, final, guard_hits = _walk(m, p, mode, rng, logprob_params)
    reward = total_predicted_speedup(model, final)
    return Trajectory(steps=steps, total_reward=reward, guard_hits=guard_hits), final


def advise(m: Module, p: PolicyParams) -> tuple[Module, list[Decision]]:
    """Deployment path: argmax decisions, no reward model involved."""
    _, decisions, final, _ = _walk(m, p, "argmax", rng=None)
    return final, decisions


def decisions_csv(decisions: list[Decision]) -> str:
    lines = ["site,caller,callee,action"]
    for d in decisions:
        lines.append(f"{d.site_id},{d.caller},{d.callee},{int(d.action)}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Training.


@dataclass(frozen=True)
class TrainerConfig:
    corpus: tuple[Module, ...]
    iterations: int = 200
    n_rollouts: int = 8
    learning_rate: float = 0.05
    sigma: float = 0.02
    normalize_rewards: bool = True
    seed: int = 0

    def validate(self) -> None:
        if not self.corpus:
            raise PolicyError("training corpus is empty")
        if self.learning_rate < 0:
            raise PolicyError("learning rate must be non-negative")
        if self.sigma <= 0:
            raise PolicyError("perturbation scale must be positive")
        if self.n_rollouts < 1:
            raise PolicyError("need at least one rollout per iteration")
        if self.iterations < 1:
            raise PolicyError("need at least one iteration")


@dataclass
class PolicyTrainResult:
    params: PolicyParams
    # Mean raw (unnormalized) rollout reward per iteration.
    reward_history: list[float]
    skipped_iterations: int = 0


def _perturbed(p: PolicyParams, sigma: float, rng) -> PolicyParams:
    return PolicyParams(
        weights=[w + sigma * rng.standard_normal(w.shape) for w in p.weights],
        biases=[b + sigma * rng.standard_normal(b.shape) for b in p.biases],
        slope=p.slope,
    )


def _grad_log_probs(p: PolicyParams, steps: list[Step]):
    """Σ_t ∇ log π(a_t|x_t) over the non-forced steps, batched."""
    live = [s for s in steps if not s.forced]
    gw = [np.zeros_like(w) for w in p.weights]
    gb = [np.zeros_like(b) for b in p.biases]
    if not live:
        return gw, gb
    X = np.array([s.features for s in live], dtype=np.float64)
    actions = np.array([1 if s.action else 0 for s in live])
    acts, pre = _forward_cached(p, X)
    z = pre[-1]
    z = z - z.max(axis=1, keepdims=True)
    probs = np.exp(z)
    probs /= probs.sum(axis=1, keepdims=True)
    delta = -probs
    delta[np.arange(len(live)), actions] += 1.0
    for k in reversed(range(len(p.weights))):
        gw[k] = delta.T @ acts[k]
        gb[k] = delta.sum(axis=0)
        if k > 0:
            upstream = delta @ p.weights[k]
            gate = np.where(pre[k - 1] > 0, 1.0, p.slope)
            delta = upstream * gate
    return gw, gb


def policy_objective(p: PolicyParams, trajectories: list[Trajectory], rewards) -> float:
    """Σ_i R_i Σ_t log π(a|x) over non-forced steps; the quantity whose
    gradient drives the update."""
    total = 0.0
    for traj, r in zip(trajectories, rewards):
        for s in traj.steps:
            if not s.forced:
                total += r * float(log_probs(p, np.array(s.features))[1 if s.action else 0])
    return total


def policy_gradient(p: PolicyParams, trajectories: list[Trajectory], rewards):
    gw = [np.zeros_like(w) for w in p.weights]
    gb = [np.zeros_like(b) for b in p.biases]
    for traj, r in zip(trajectories, rewards):
        tw, tb = _grad_log_probs(p, traj.steps)
        for k in range(len(gw)):
            gw[k] += r * tw[k]
            gb[k] += r * tb[k]
    return gw, gb


def normalize_rewards(raw: np.ndarray) -> np.ndarray:
    return (raw - raw.mean()) / (raw.std() + 1e-8)


def train_policy(
    tc: TrainerConfig,
    model: RegressionModel,
    dims: tuple[int, ...] = POLICY_DIMS,
) -> PolicyTrainResult:
    """Perturbed-parameter rollouts, log-likelihood update on the base
    parameters, deterministic per seed.

    Per iteration: rollout 0 takes the corpus module round-robin, the
    rest draw uniformly; each rollout samples under perturbed parameters
    while log-probs and gradients are taken under the base parameters.
    """
    tc.validate()
    params = init_policy(tc.seed, dims=dims)
    history: list[float] = []
    skipped = 0
    for it in range(tc.iterations):
        trajectories: list[Trajectory] = []
        for i in range(tc.n_rollouts):
            rng = np.random.default_rng([tc.seed, it, i])
            noisy = _perturbed(params, tc.sigma, rng)
            if i == 0:
                m = tc.corpus[it % len(tc.corpus)]
            else:
                m = tc.corpus[int(rng.integers(0, len(tc.corpus)))]
            traj, _ = rollout(m, noisy, model, "sample", rng, logprob_params=params)
            trajectories.append(traj)
        raw = np.array([t.total_reward for t in trajectories])
        history.append(float(raw.mean()))
        if all(not t.steps or all(s.forced for s in t.steps) for t in trajectories):
            skipped += 1
            continue
        rewards = normalize_rewards(raw) if tc.normalize_rewards else raw
        gw, gb = policy_gradient(params, trajectories, rewards)
        scale = tc.learning_rate / tc.n_rollouts
        for k in range(len(params.weights)):
            params.weights[k] += scale * gw[k]
            params.biases[k] += scale * gb[k]
    return PolicyTrainResult(params=params, reward_history=history, skipped_iterations=skipped)


# ---------------------------------------------------------------------------
# Serialization.


def policy_to_obj(p: PolicyParams) -> dict:
    return {
        "schema": POLICY_SCHEMA,
        "dims": list(p.dims()),
        "slope": p.slope,
        "input_transform": "log1p",
        "tie_rule": TIE_RULE,
        "forced_rule": FORCED_RULE,
        "weights": [[[float(v) for v in row] for row in W] for W in p.weights],
        "biases": [[float(v) for v in b] for b in p.biases],
    }


def policy_from_obj(obj: dict) -> PolicyParams:
    if not isinstance(obj, dict) or obj.get("schema") != POLICY_SCHEMA:
        raise SchemaError(f"expected schema {POLICY_SCHEMA!r}, got {obj.get('schema')!r}")
    try:
        p = PolicyParams(
            weights=[np.array(W, dtype=np.float64) for W in obj["weights"]],
            biases=[np.array(b, dtype=np.float64) for b in obj["biases"]],
            slope=float(obj["slope"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed policy record: {exc}") from exc
    if list(p.dims()) != list(obj["dims"]):
        raise SchemaError("stored dims do not match weight shapes")
    if not all(np.all(np.isfinite(w)) for w in p.weights + p.biases):
        raise SchemaError("policy parameters must be finite")
    return p


def policy_to_json(p: PolicyParams) -> str:
    return dumps(policy_to_obj(p))
