"""Expression search for PDE solutions with a policy-gradient outer loop.

Candidates live on a fixed tree skeleton whose operator slots are filled from
(optionally restricted) operator pools.  A product-categorical policy over the
slots is improved by projected score-function gradient steps; each sampled
candidate gets its scalar parameters fitted by a small inner optimizer against
a fixed collocation loss.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptySearchSpace
from .expr import (
    BINARY_EVAL,
    DEFAULT_BINARY_SET,
    DEFAULT_UNARY_SET,
    Binary,
    Const,
    Expression,
    Param,
    Unary,
    Var,
    bind_params,
    eval_array,
    gradient,
    node_count,
    postfix_string,
    simplify,
    to_infix,
)
from .pde import (
    Collocation,
    CollocationConfig,
    PdeInstance,
    relative_l2_error,
    residual_operator,
    reward as reward_of_loss,
)

PHI_MAX_DEFAULT = 10.0


# ---------------------------------------------------------------------------
# Search space
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Slot:
    """One categorical decision: an operator (or leaf variable) position."""

    kind: str  # "unary" | "binary" | "leaf"
    name: str
    choices: tuple[str, ...]


@dataclass(frozen=True)
class SearchSpace:
    depth: int
    dim: int
    slots: tuple[Slot, ...]
    unary_ops: tuple[str, ...]
    binary_ops: tuple[str, ...]
    variables: tuple[str, ...]
    informed: bool

    @property
    def block_sizes(self) -> tuple[int, ...]:
        return tuple(len(s.choices) for s in self.slots)

    @property
    def n_unary(self) -> int:
        return sum(1 for s in self.slots if s.kind == "unary")

    @property
    def n_scalars(self) -> int:
        # alpha, beta per unary node plus the fitted output affine a, b
        return 2 * self.n_unary + 2

    def choice_count(self) -> int:
        out = 1
        for s in self.slots:
            out *= len(s.choices)
        return out


def build_search_space(operator_set=None, depth: int = 2, dim: int = 3) -> SearchSpace:
    """Slot list for the fixed skeleton of the given depth.

    `operator_set` restricts the per-slot pools (an informed search); None
    uses the full default pools.  Missing arities fall back to {Id} / {+},
    and a prediction without variables falls back to all of them.
    """
    if depth < 1 or dim < 1:
        raise EmptySearchSpace("depth and dim must both be at least 1")
    all_vars = tuple(f"x{i}" for i in range(1, dim + 1))
    if operator_set is None:
        unary, binary, variables = DEFAULT_UNARY_SET, DEFAULT_BINARY_SET, all_vars
        informed = False
    else:
        toks = set(operator_set)
        unary = tuple(t for t in DEFAULT_UNARY_SET if t in toks) or ("Id",)
        binary = tuple(t for t in DEFAULT_BINARY_SET if t in toks) or ("+",)
        variables = tuple(v for v in all_vars if v in toks) or all_vars
        informed = True
    if not unary or not binary or not variables:
        raise EmptySearchSpace("no operator choices available for some slot")

    slots: list[Slot] = []
    counters = {"unary": 0, "binary": 0, "leaf": 0}

    def add(kind: str, choices: tuple[str, ...]) -> None:
        slots.append(Slot(kind, f"{kind}{counters[kind]}", choices))
        counters[kind] += 1

    # preorder over the template: unary wrapper, then its (binary) child
    def build(level: int) -> None:
        add("unary", unary)
        if level == 1:
            add("leaf", variables)
        else:
            add("binary", binary)
            build(level - 1)
            build(level - 1)

    build(depth)
    return SearchSpace(depth, dim, tuple(slots), unary, binary, variables, informed)


def realize_core(space: SearchSpace, choices) -> Expression:
    """Parameterized expression for one skeleton: unary node i carries
    Param(2i) * op(child) + Param(2i+1); the output affine is fitted separately."""
    if len(choices) != len(space.slots):
        raise ValueError("choice vector length does not match the slot list")
    it = iter(zip(space.slots, choices))

    def build() -> Expression:
        slot, c = next(it)
        if slot.kind != "unary":
            raise ValueError("malformed slot sequence")
        i = int(slot.name[len("unary"):])
        child = build_child()
        base = Unary(slot.choices[c], 1.0, 0.0, child)
        return Binary("+", Binary("*", Param(2 * i), base), Param(2 * i + 1))

    def build_child() -> Expression:
        slot, c = next(it)
        if slot.kind == "leaf":
            return Var(int(slot.choices[c][1:]))
        if slot.kind == "binary":
            left = build()
            right = build()
            return Binary(slot.choices[c], left, right)
        raise ValueError("malformed slot sequence")

    return build()


# ---------------------------------------------------------------------------
# Policy
# ---------------------------------------------------------------------------


@dataclass
class PolicyParams:
    """Concatenated logits, one block per slot, clamped to a box."""

    block_sizes: tuple[int, ...]
    phi: np.ndarray
    phi_max: float = PHI_MAX_DEFAULT

    @classmethod
    def uniform(cls, block_sizes, phi_max: float = PHI_MAX_DEFAULT) -> "PolicyParams":
        return cls(tuple(block_sizes), np.zeros(sum(block_sizes)), phi_max)

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.block_sizes, self.phi.copy(), self.phi_max)

    def blocks(self):
        start = 0
        for size in self.block_sizes:
            yield start, start + size
            start += size

    def probabilities(self) -> list[np.ndarray]:
        out = []
        for lo, hi in self.blocks():
            z = self.phi[lo:hi] - np.max(self.phi[lo:hi])
            e = np.exp(z)
            out.append(e / np.sum(e))
        return out

    def project(self) -> None:
        np.clip(self.phi, -self.phi_max, self.phi_max, out=self.phi)


@dataclass
class Candidate:
    """A sampled skeleton plus (after evaluation) fitted scalars and reward."""

    choices: tuple[int, ...]
    log_prob: float
    theta: np.ndarray | None = None
    loss: float = math.inf
    reward: float = 0.0


def sample_candidate(policy: PolicyParams, rng: np.random.Generator) -> Candidate:
    choices = []
    log_prob = 0.0
    for p in policy.probabilities():
        c = int(rng.choice(len(p), p=p))
        choices.append(c)
        log_prob += math.log(p[c])
    return Candidate(tuple(choices), log_prob)


def log_prob_of(policy: PolicyParams, choices) -> float:
    total = 0.0
    for p, c in zip(policy.probabilities(), choices):
        total += math.log(p[c])
    return total


def score_function(policy: PolicyParams, choices) -> np.ndarray:
    """Gradient of log p(choices; phi): per block, onehot(choice) - softmax."""
    out = np.zeros_like(policy.phi)
    for (lo, hi), p, c in zip(policy.blocks(), policy.probabilities(), choices):
        out[lo:hi] = -p
        out[lo + c] += 1.0
    return out


def sppgm_step(policy: PolicyParams, evaluator, B: int, eta: float,
               rng: np.random.Generator):
    """One projected policy-gradient step.

    Samples B candidates, scores them with `evaluator.evaluate`, forms the
    score-function gradient estimate, takes an ascent step and clamps back
    into the box.  Returns (new policy, stats dict, candidates).
    """
    if B < 1 or eta <= 0:
        raise ValueError("need B >= 1 and eta > 0")
    candidates = [sample_candidate(policy, rng) for _ in range(B)]
    grad = np.zeros_like(policy.phi)
    for cand in candidates:
        r = evaluator.evaluate(cand)
        if r:
            grad += r * score_function(policy, cand.choices)
    grad /= B
    new = policy.copy()
    new.phi += eta * grad
    new.project()
    rewards = [c.reward for c in candidates]
    stats = {
        "best_reward": max(rewards),
        "mean_reward": float(np.mean(rewards)),
        "grad_norm": float(np.linalg.norm(grad)),
        "stat_proxy": float(np.sum(((new.phi - policy.phi) / eta) ** 2)),
    }
    return new, stats, candidates


# ---------------------------------------------------------------------------
# Candidate evaluation against a PDE instance
# ---------------------------------------------------------------------------


@dataclass
class InnerConfig:
    steps: int = 60
    init_step: float = 0.5
    fd_step: float = 1e-4
    max_stall: int = 4


class _Skeleton:
    """Symbolic data shared by every evaluation of one choice vector."""

    __slots__ = ("core", "residual", "grads", "n_inner")

    def __init__(self, space: SearchSpace, instance: PdeInstance, choices):
        self.core = realize_core(space, choices)
        self.residual = residual_operator(instance.pde_type, self.core, space.dim)
        self.grads = (
            gradient(self.core, space.dim) if instance.bc_type == "neumann" else None
        )
        self.n_inner = 2 * space.n_unary


_LINE_FACTORS = np.array([4.0, 2.0, 1.0, 0.5, 0.25, 0.0625])


class CandidateEvaluator:
    """Loss/reward of candidates over one fixed collocation set.

    The output affine a*core+b is fitted in closed form inside every loss
    evaluation (the differential operators are linear, so the loss is an
    exact quadratic in a and b); finite-difference descent only has to move
    the per-unary alpha/beta scalars.  Results are cached per skeleton.
    """

    def __init__(self, instance: PdeInstance, space: SearchSpace,
                 colloc: Collocation, inner: InnerConfig | None = None,
                 quick_steps: int = 12):
        self.instance = instance
        self.space = space
        self.colloc = colloc
        self.inner = inner or InnerConfig()
        self.quick_steps = quick_steps
        self._skeletons: dict[tuple, _Skeleton] = {}
        self.cache: dict[tuple, dict] = {}
        self.evaluations = 0

        dom = instance.domain
        self._wi = dom.volume / colloc.x_int.shape[0]
        self._wb = instance.lam * dom.boundary_area / colloc.x_bnd.shape[0]
        self._f = colloc.f_vals
        if instance.bc_type == "cauchy":
            self._bvec = colloc.cauchy_mask
            self._yb = colloc.g_vals * colloc.cauchy_mask
        elif instance.bc_type == "dirichlet":
            self._bvec = np.ones(colloc.x_bnd.shape[0])
            self._yb = colloc.g_vals
        else:  # neumann: the constant offset b does not enter the residual
            self._bvec = np.zeros(colloc.x_bnd.shape[0])
            self._yb = colloc.g_vals

    # -- skeleton plumbing -------------------------------------------------

    def _skeleton(self, choices) -> _Skeleton:
        sk = self._skeletons.get(choices)
        if sk is None:
            sk = _Skeleton(self.space, self.instance, choices)
            self._skeletons[choices] = sk
        return sk

    def _boundary_column(self, sk: _Skeleton, P: np.ndarray) -> np.ndarray:
        bc = self.instance.bc_type
        if bc == "neumann":
            total = None
            normals = self.colloc.normals
            for i, gi in enumerate(sk.grads):
                col = normals[:, i]
                if not np.any(col):
                    continue
                term = eval_array(gi, self.colloc.x_bnd, P) * col
                total = term if total is None else total + term
            if total is None:
                total = np.zeros((P.shape[0], self.colloc.x_bnd.shape[0]))
            return total
        vals = eval_array(sk.core, self.colloc.x_bnd, P)
        if bc == "cauchy":
            return vals * self._bvec
        return vals

    def loss_batch(self, sk: _Skeleton, P: np.ndarray):
        """Losses and fitted (a, b) for a batch of inner-scalar rows."""
        self.evaluations += 1
        P = np.atleast_2d(np.asarray(P, dtype=float))
        with np.errstate(all="ignore"):
            Rc = eval_array(sk.residual, self.colloc.x_int, P)
            Cb = self._boundary_column(sk, P)
            wi, wb, f, yb, bvec = self._wi, self._wb, self._f, self._yb, self._bvec
            suu = wi * np.sum(Rc * Rc, axis=-1) + wb * np.sum(Cb * Cb, axis=-1)
            suv = wb * np.sum(Cb * bvec, axis=-1)
            svv = wb * float(np.sum(bvec * bvec))
            suy = wi * np.sum(Rc * f, axis=-1) + wb * np.sum(Cb * yb, axis=-1)
            svy = wb * float(np.sum(bvec * yb))
            ridge = 1e-12 * (1.0 + suu + svv)
            a11 = suu + ridge
            a22 = svv + ridge
            det = a11 * a22 - suv * suv
            a = (a22 * suy - suv * svy) / det
            b = (a11 * svy - suv * suy) / det
            r_int = a[:, None] * Rc - f
            r_bnd = a[:, None] * Cb + b[:, None] * bvec - yb
            losses = wi * np.sum(r_int * r_int, axis=-1) + wb * np.sum(r_bnd * r_bnd, axis=-1)
        ok = np.isfinite(losses) & np.isfinite(a) & np.isfinite(b)
        losses = np.where(ok, losses, np.inf)
        return losses, np.stack([a, b], axis=-1)

    # -- inner scalar optimization ------------------------------------------

    def _neutral_theta(self, sk: _Skeleton) -> np.ndarray:
        theta = np.zeros(sk.n_inner)
        theta[0::2] = 1.0  # alpha = 1, beta = 0
        return theta

    def _descend(self, sk: _Skeleton, theta: np.ndarray, budget: int):
        """Best-so-far gradient descent with a vectorized line search."""
        m = theta.size
        losses, ab = self.loss_batch(sk, theta[None, :])
        best = (losses[0], theta.copy(), ab[0])
        if budget <= 0 or not math.isfinite(best[0]):
            return best
        cur = theta.copy()
        step = self.inner.init_step
        stall = 0
        for _ in range(budget):
            hs = self.inner.fd_step * np.maximum(1.0, np.abs(cur))
            P = np.tile(cur, (2 * m + 1, 1))
            idx = np.arange(m)
            P[1 + idx, idx] += hs
            P[1 + m + idx, idx] -= hs
            L, AB = self.loss_batch(sk, P)
            if L[0] < best[0]:
                best = (L[0], cur.copy(), AB[0])
            with np.errstate(invalid="ignore"):
                grad = (L[1:1 + m] - L[1 + m:]) / (2.0 * hs)
            grad = np.where(np.isfinite(grad), grad, 0.0)
            gnorm = float(np.linalg.norm(grad))
            if gnorm < 1e-14:
                break
            direction = grad / gnorm
            trial = cur[None, :] - (step * _LINE_FACTORS)[:, None] * direction[None, :]
            Lt, ABt = self.loss_batch(sk, trial)
            j = int(np.argmin(Lt))
            if Lt[j] < best[0] - 1e-15 * (1.0 + abs(best[0])):
                cur = trial[j]
                best = (Lt[j], cur.copy(), ABt[j])
                step = min(step * _LINE_FACTORS[j] * 2.0, 1e6)
                stall = 0
            else:
                step *= 0.125
                stall += 1
                if stall >= self.inner.max_stall:
                    break
        return best

    def optimize(self, choices, budget: int) -> dict:
        """Fit scalars for one skeleton, continuing any cached progress."""
        choices = tuple(choices)
        sk = self._skeleton(choices)
        entry = self.cache.get(choices)
        if entry is None:
            theta0 = self._neutral_theta(sk)
            loss, theta, ab = self._descend(sk, theta0, 0)
            entry = {"loss": loss, "theta": theta, "ab": ab, "steps": 0,
                     "reward": reward_of_loss(loss)}
            self.cache[choices] = entry
        remaining = budget - entry["steps"]
        if remaining <= 0:
            return entry
        loss, theta, ab = self._descend(sk, entry["theta"], remaining)
        if loss < entry["loss"]:
            entry.update(loss=loss, theta=theta, ab=ab)
        entry["steps"] = budget
        entry["reward"] = reward_of_loss(entry["loss"])
        return entry

    def evaluate(self, candidate: Candidate) -> float:
        entry = self.optimize(candidate.choices, self.quick_steps)
        candidate.loss = entry["loss"]
        candidate.reward = entry["reward"]
        candidate.theta = np.concatenate([entry["theta"], entry["ab"]])
        return candidate.reward

    def realize(self, choices, theta=None) -> Expression:
        """Fully numeric, simplified expression for a cached skeleton."""
        choices = tuple(choices)
        if theta is None:
            entry = self.cache[choices]
            theta = np.concatenate([entry["theta"], entry["ab"]])
        sk = self._skeleton(choices)
        core = bind_params(sk.core, theta[:sk.n_inner])
        a, b = theta[sk.n_inner], theta[sk.n_inner + 1]
        return simplify(Binary("+", Binary("*", Const(float(a)), core), Const(float(b))))


def optimize_scalars(candidate: Candidate, evaluator: CandidateEvaluator,
                     steps: int = 60) -> Candidate:
    """Fit the candidate's scalar parameters; sets theta, loss and reward."""
    entry = evaluator.optimize(candidate.choices, steps)
    candidate.loss = entry["loss"]
    candidate.reward = entry["reward"]
    candidate.theta = np.concatenate([entry["theta"], entry["ab"]])
    return candidate


# ---------------------------------------------------------------------------
# Synthetic landscapes (test and diagnostics support)
# ---------------------------------------------------------------------------


class EnumerableLandscape:
    """Deterministic reward table over a small discrete slot space.

    Small enough to enumerate, so the exact expected reward and its exact
    policy gradient are available for unbiasedness and scaling studies.
    """

    def __init__(self, block_sizes, reward_fn):
        self.block_sizes = tuple(block_sizes)
        self.reward_fn = reward_fn

    def evaluate(self, candidate: Candidate) -> float:
        r = float(self.reward_fn(candidate.choices))
        candidate.reward = r
        candidate.loss = (1.0 / r - 1.0) if r > 0 else math.inf
        return r

    def all_choices(self):
        return itertools.product(*(range(n) for n in self.block_sizes))

    def expected_reward(self, policy: PolicyParams) -> float:
        total = 0.0
        for choices in self.all_choices():
            total += math.exp(log_prob_of(policy, choices)) * self.reward_fn(choices)
        return total

    def exact_gradient(self, policy: PolicyParams) -> np.ndarray:
        grad = np.zeros_like(policy.phi)
        for choices in self.all_choices():
            p = math.exp(log_prob_of(policy, choices))
            grad += p * self.reward_fn(choices) * score_function(policy, choices)
        return grad


def stationarity_report(trace, B: int, eta: float) -> dict:
    """Mean stationarity proxy over a run's iterations (uniform iterate pick)."""
    proxies = [row["stat_proxy"] for row in trace.rows] if hasattr(trace, "rows") else list(trace)
    return {
        "iterations": len(proxies),
        "B": B,
        "eta": eta,
        "mean_stat_proxy": float(np.mean(proxies)) if proxies else 0.0,
    }


# ---------------------------------------------------------------------------
# Full solve loop
# ---------------------------------------------------------------------------


@dataclass
class SolveConfig:
    depth: int = 2
    B: int = 64
    eta: float = 0.5
    T_max: int = 100
    inner_steps: int = 60
    quick_steps: int = 4
    finetune_steps: int = 600
    reward_threshold: float = 0.999
    phi_max: float = PHI_MAX_DEFAULT
    top_k: int = 3
    seed: int = 0
    n_interior: int = 512
    n_boundary: int = 128
    final_n_interior: int = 4096
    final_n_boundary: int = 1024


@dataclass
class SolveTrace:
    rows: list = field(default_factory=list)

    def append(self, **row) -> None:
        self.rows.append(row)

    @property
    def best_rewards(self):
        return [r["best_reward"] for r in self.rows]

    def csv_rows(self):
        yield ("iter", "best_reward", "mean_reward", "grad_norm", "stat_proxy", "wall_ms")
        for r in self.rows:
            yield (r["iter"], f"{r['best_reward']:.12g}", f"{r['mean_reward']:.12g}",
                   f"{r['grad_norm']:.12g}", f"{r['stat_proxy']:.12g}",
                   f"{r['wall_ms']:.3f}")


@dataclass
class SolveResult:
    expression: Expression
    postfix: str
    infix: str
    reward: float
    loss: float
    search_reward: float
    iterations: int
    converged: bool
    total_time: float
    rel_l2_error: float | None
    trace: SolveTrace
    informed: bool
    space: SearchSpace


def _pool_key(entry):
    return (-entry["reward"], entry["nodes"], entry["choices"])


def solve(instance: PdeInstance, predicted_ops=None, cfg: SolveConfig | None = None) -> SolveResult:
    """Search for a closed-form solution of the instance.

    `predicted_ops` (tokens) restricts the operator pools; None searches the
    full default pools.  Stops when the best reward reaches the threshold or
    after T_max policy iterations; the best skeleton then gets a longer
    scalar fine-tune on the full-size collocation set.
    """
    cfg = cfg or SolveConfig()
    t_start = time.perf_counter()
    space = build_search_space(predicted_ops, cfg.depth, instance.domain.dim)
    rng = np.random.default_rng(cfg.seed)
    colloc = Collocation(instance, CollocationConfig(cfg.n_interior, cfg.n_boundary, cfg.seed))
    evaluator = CandidateEvaluator(
        instance, space, colloc,
        InnerConfig(steps=cfg.inner_steps), quick_steps=cfg.quick_steps,
    )
    policy = PolicyParams.uniform(space.block_sizes, cfg.phi_max)

    pool: list[dict] = []

    def offer(choices) -> None:
        entry = evaluator.cache[choices]
        item = {
            "choices": choices,
            "reward": entry["reward"],
            "nodes": node_count(evaluator.realize(choices)),
        }
        for existing in pool:
            if existing["choices"] == choices:
                existing.update(item)
                break
        else:
            pool.append(item)
        pool.sort(key=_pool_key)
        del pool[cfg.top_k:]

    trace = SolveTrace()
    best_reward = 0.0
    iterations = 0
    converged = False
    for t in range(1, cfg.T_max + 1):
        t0 = time.perf_counter()
        policy, stats, cands = sppgm_step(policy, evaluator, cfg.B, cfg.eta, rng)
        iterations = t
        for cand in cands:
            offer(cand.choices)
        # give the current leader the full inner budget before judging it
        if pool:
            lead = pool[0]["choices"]
            entry = evaluator.optimize(lead, cfg.inner_steps)
            pool[0]["reward"] = entry["reward"]
            pool.sort(key=_pool_key)
        best_reward = max(best_reward, pool[0]["reward"] if pool else 0.0)
        trace.append(
            iter=t,
            best_reward=best_reward,
            mean_reward=stats["mean_reward"],
            grad_norm=stats["grad_norm"],
            stat_proxy=stats["stat_proxy"],
            wall_ms=(time.perf_counter() - t0) * 1e3,
        )
        if best_reward >= cfg.reward_threshold:
            converged = True
            break

    # final fine-tune of the pool leaders on the full collocation set
    final_colloc = Collocation(
        instance, CollocationConfig(cfg.final_n_interior, cfg.final_n_boundary, cfg.seed)
    )
    final_eval = CandidateEvaluator(
        instance, space, final_colloc,
        InnerConfig(steps=cfg.finetune_steps), quick_steps=cfg.finetune_steps,
    )
    best_entry = None
    best_item = None
    for item in pool:
        warm = evaluator.cache[item["choices"]]
        final_eval.cache[item["choices"]] = {
            "loss": math.inf, "theta": warm["theta"].copy(),
            "ab": warm["ab"].copy(), "steps": 0,
        }
        entry = final_eval.optimize(item["choices"], cfg.finetune_steps)
        cand_nodes = node_count(final_eval.realize(item["choices"]))
        key = (-entry["reward"], cand_nodes)
        if best_entry is None or key < (-best_entry["reward"], best_item["nodes"]):
            best_entry = entry
            best_item = {"choices": item["choices"], "nodes": cand_nodes}
    if best_entry is None:
        raise EmptySearchSpace("no candidate was ever evaluated")

    expression = final_eval.realize(best_item["choices"])
    rel_err = None
    if instance.true_u is not None:
        try:
            rel_err = relative_l2_error(expression, instance.true_u, instance.domain)
        except Exception:
            rel_err = None
    return SolveResult(
        expression=expression,
        postfix=postfix_string(expression),
        infix=to_infix(expression),
        reward=best_entry["reward"],
        loss=best_entry["loss"],
        search_reward=best_reward,
        iterations=iterations,
        converged=converged,
        total_time=time.perf_counter() - t_start,
        rel_l2_error=rel_err,
        trace=trace,
        informed=space.informed,
        space=space,
    )
