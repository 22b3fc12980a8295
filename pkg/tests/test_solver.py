"""Tests for the policy-gradient expression search.

The policy math is checked against numeric gradients and full enumeration;
the inner optimizer is cross-checked against the plain collocation loss.
"""

import math

import numpy as np
import pytest

from fexkit.errors import EmptySearchSpace
from fexkit.expr import Binary, Unary, Var, evaluate, node_count
from fexkit.pde import (
    Collocation,
    CollocationConfig,
    Domain,
    manufactured_instance,
)
from fexkit.solver import (
    Candidate,
    CandidateEvaluator,
    EnumerableLandscape,
    InnerConfig,
    PolicyParams,
    SearchSpace,
    SolveConfig,
    build_search_space,
    log_prob_of,
    optimize_scalars,
    realize_core,
    sample_candidate,
    score_function,
    solve,
    sppgm_step,
    stationarity_report,
)


# ---------------------------------------------------------------------------
# search space
# ---------------------------------------------------------------------------


def test_informed_space_arity_split():
    space = build_search_space(("x1", "SIN", "+"), depth=2, dim=3)
    assert space.unary_ops == ("SIN",)
    assert space.binary_ops == ("+",)
    assert space.variables == ("x1",)
    assert space.informed


def test_uninformed_space_default_pools():
    space = build_search_space(None, depth=2, dim=3)
    assert len(space.unary_ops) == 9
    assert len(space.binary_ops) == 3
    assert space.variables == ("x1", "x2", "x3")
    assert not space.informed


def test_full_dictionary_prediction_equals_uninformed():
    full = ("x1", "x2", "x3", "0", "1", "Id", "^2", "^3", "^4", "EXP", "SIN", "COS",
            "+", "-", "*")
    inf_space = build_search_space(full, depth=2, dim=3)
    uni_space = build_search_space(None, depth=2, dim=3)
    assert inf_space.unary_ops == uni_space.unary_ops
    assert inf_space.binary_ops == uni_space.binary_ops
    assert inf_space.variables == uni_space.variables
    assert inf_space.block_sizes == uni_space.block_sizes


def test_fallback_injection():
    space = build_search_space(("x2", "SIN"), depth=2, dim=3)
    assert space.binary_ops == ("+",)  # no binary predicted
    space = build_search_space(("x1", "+"), depth=2, dim=3)
    assert space.unary_ops == ("Id",)  # no unary predicted
    space = build_search_space(("SIN", "+"), depth=1, dim=2)
    assert space.variables == ("x1", "x2")  # no variable predicted


def test_informed_choice_counts_dominated_by_uninformed():
    uni = build_search_space(None, depth=2, dim=3)
    inf = build_search_space(("x1", "x3", "SIN", "EXP", "^2", "+", "*"), depth=2, dim=3)
    assert all(a <= b for a, b in zip(inf.block_sizes, uni.block_sizes))


@pytest.mark.parametrize("depth", [1, 2, 3])
def test_slot_counts(depth):
    space = build_search_space(None, depth=depth, dim=3)
    kinds = [s.kind for s in space.slots]
    assert kinds.count("unary") == 2 ** depth - 1
    assert kinds.count("binary") == 2 ** (depth - 1) - 1
    assert kinds.count("leaf") == 2 ** (depth - 1)
    assert space.n_scalars == 2 * (2 ** depth - 1) + 2


def test_empty_search_space_errors():
    with pytest.raises(EmptySearchSpace):
        build_search_space(None, depth=0, dim=3)
    with pytest.raises(EmptySearchSpace):
        build_search_space(("x1", "SIN", "+"), depth=1, dim=0)


# ---------------------------------------------------------------------------
# skeleton realization
# ---------------------------------------------------------------------------


def test_realize_core_depth1():
    space = build_search_space(("x2", "SIN", "+"), depth=1, dim=3)
    core = realize_core(space, (0, 0))
    # p0 * sin(x2) + p1
    assert evaluate(core, [0.0, 0.5, 0.0], params=[2.0, 3.0]) == pytest.approx(
        2.0 * math.sin(0.5) + 3.0
    )


def test_realize_core_depth2_structure():
    space = build_search_space(("x1", "x3", "Id", "^2", "+", "*"), depth=2, dim=3)
    # slots: unary0, binary0, unary1, leaf0, unary2, leaf1
    names = [(s.kind) for s in space.slots]
    assert names == ["unary", "binary", "unary", "leaf", "unary", "leaf"]
    ch = (
        space.slots[0].choices.index("Id"),
        space.slots[1].choices.index("*"),
        space.slots[2].choices.index("^2"),
        space.slots[3].choices.index("x1"),
        space.slots[4].choices.index("Id"),
        space.slots[5].choices.index("x3"),
    )
    core = realize_core(space, ch)
    # p0*( (p2*x1^2+p3) * (p4*x3+p5) ) + p1 at neutral inner scalars
    theta = [1.0, 0.0, 1.0, 0.0, 1.0, 0.0]
    x = [0.5, 0.0, -0.7]
    assert evaluate(core, x, params=theta) == pytest.approx(0.25 * -0.7)
    theta = [2.0, 1.0, 3.0, -1.0, 1.0, 2.0]
    want = 2.0 * ((3 * 0.25 - 1) * (-0.7 + 2)) + 1.0
    assert evaluate(core, x, params=theta) == pytest.approx(want)


def test_realize_core_rejects_bad_length():
    space = build_search_space(("x1", "SIN", "+"), depth=1, dim=1)
    with pytest.raises(ValueError):
        realize_core(space, (0,))


# ---------------------------------------------------------------------------
# policy and score function
# ---------------------------------------------------------------------------


def test_uniform_policy_probabilities():
    pol = PolicyParams.uniform((3, 2))
    probs = pol.probabilities()
    assert np.allclose(probs[0], [1 / 3] * 3)
    assert np.allclose(probs[1], [0.5, 0.5])


def test_projection_is_componentwise_clamp():
    pol = PolicyParams((2, 2), np.array([25.0, -3.0, -11.0, 9.0]), phi_max=10.0)
    pol.project()
    assert np.array_equal(pol.phi, [10.0, -3.0, -10.0, 9.0])


def test_projection_matches_qp_oracle():
    scipy_opt = pytest.importorskip("scipy.optimize")
    rng = np.random.default_rng(7)
    for _ in range(10):
        y = rng.uniform(-30, 30, size=6)
        res = scipy_opt.minimize(
            lambda x: 0.5 * np.sum((x - y) ** 2),
            np.zeros(6),
            jac=lambda x: x - y,
            bounds=[(-10, 10)] * 6,
            method="L-BFGS-B",
        )
        assert np.allclose(res.x, np.clip(y, -10, 10), atol=1e-6)


def test_single_choice_slots_are_deterministic():
    pol = PolicyParams.uniform((1, 1, 1))
    cand = sample_candidate(pol, np.random.default_rng(0))
    assert cand.choices == (0, 0, 0)
    assert cand.log_prob == 0.0


def test_sampling_matches_softmax_frequencies():
    rng = np.random.default_rng(3)
    pol = PolicyParams((2,), np.array([1.0, -1.0]))
    n = 10_000
    hits = sum(sample_candidate(pol, rng).choices[0] == 0 for _ in range(n))
    p = 1.0 / (1.0 + math.exp(-2.0))  # sigmoid of the logit gap
    assert abs(hits / n - p) < 3 * math.sqrt(p * (1 - p) / n)

    # saturated logits at the box bound
    pol = PolicyParams((2,), np.array([10.0, -10.0]))
    hits = sum(sample_candidate(pol, rng).choices[0] == 0 for _ in range(n))
    assert hits == n  # sigmoid(20) deviates by 2e-9


def test_uniform_sampling_frequencies():
    rng = np.random.default_rng(11)
    pol = PolicyParams.uniform((3,))
    n = 9_000
    counts = np.zeros(3)
    for _ in range(n):
        counts[sample_candidate(pol, rng).choices[0]] += 1
    assert np.all(np.abs(counts / n - 1 / 3) < 3 * math.sqrt((1 / 3) * (2 / 3) / n))


def test_score_function_matches_numeric_gradient():
    rng = np.random.default_rng(5)
    for _ in range(10):
        sizes = (3, 2, 4)
        pol = PolicyParams(sizes, rng.uniform(-2, 2, size=sum(sizes)))
        choices = tuple(int(rng.integers(0, s)) for s in sizes)
        analytic = score_function(pol, choices)
        h = 1e-6
        numeric = np.zeros_like(analytic)
        for j in range(pol.phi.size):
            up, dn = pol.copy(), pol.copy()
            up.phi[j] += h
            dn.phi[j] -= h
            numeric[j] = (log_prob_of(up, choices) - log_prob_of(dn, choices)) / (2 * h)
        assert np.allclose(analytic, numeric, atol=1e-6)


# ---------------------------------------------------------------------------
# sppgm step
# ---------------------------------------------------------------------------


class _FixedRewards:
    """Evaluator stub with a reward table over single-slot choices."""

    def __init__(self, table):
        self.table = table

    def evaluate(self, cand):
        cand.reward = self.table[cand.choices[0]]
        cand.loss = 1.0 / cand.reward - 1.0 if cand.reward else math.inf
        return cand.reward


def test_sppgm_zero_rewards_leave_policy_unchanged():
    pol = PolicyParams.uniform((3, 2))
    new, stats, _ = sppgm_step(pol, _FixedRewards([0.0, 0.0, 0.0]), B=8, eta=0.5,
                               rng=np.random.default_rng(1))
    assert np.array_equal(new.phi, pol.phi)
    assert stats["grad_norm"] == 0.0 and stats["stat_proxy"] == 0.0


def test_sppgm_hand_computed_update():
    # single 2-choice slot, uniform logits, reward 1: sampling choice 0 gives
    # score (0.5, -0.5); with eta = 0.1 the block moves to (0.05, -0.05)
    pol = PolicyParams.uniform((2,))
    grad = 1.0 * score_function(pol, (0,))
    assert np.allclose(grad, [0.5, -0.5])
    seed = next(
        s for s in range(50)
        if sample_candidate(PolicyParams.uniform((2,)), np.random.default_rng(s)).choices == (0,)
    )
    new, stats, cands = sppgm_step(pol, _FixedRewards([1.0, 0.0]), B=1, eta=0.1,
                                   rng=np.random.default_rng(seed))
    assert cands[0].choices == (0,)
    assert np.allclose(new.phi, [0.05, -0.05])
    assert stats["stat_proxy"] == pytest.approx(0.5)  # ||(0.5,-0.5)||^2


def test_sppgm_step_clamps_to_box():
    pol = PolicyParams.uniform((2,))
    new, stats, _ = sppgm_step(pol, _FixedRewards([1.0, 0.0]), B=4, eta=1000.0,
                               rng=np.random.default_rng(2))
    assert stats["grad_norm"] > 0  # at least one rewarded sample
    assert np.all(np.abs(new.phi) <= 10.0)
    assert np.max(np.abs(new.phi)) == 10.0


def test_sppgm_matches_manual_replay():
    pol = PolicyParams.uniform((3, 2))
    land = EnumerableLandscape((3, 2), lambda c: 0.2 + 0.3 * c[0] + 0.1 * c[1])
    new, stats, cands = sppgm_step(pol, land, B=16, eta=0.7,
                                   rng=np.random.default_rng(9))
    rng = np.random.default_rng(9)
    manual = np.zeros_like(pol.phi)
    for _ in range(16):
        c = sample_candidate(pol, rng)
        manual += land.reward_fn(c.choices) * score_function(pol, c.choices)
    manual /= 16
    assert np.allclose(new.phi, np.clip(pol.phi + 0.7 * manual, -10, 10))
    assert stats["grad_norm"] == pytest.approx(float(np.linalg.norm(manual)))


def test_sppgm_validates_arguments():
    pol = PolicyParams.uniform((2,))
    with pytest.raises(ValueError):
        sppgm_step(pol, _FixedRewards([1, 1]), B=0, eta=0.1, rng=np.random.default_rng(0))
    with pytest.raises(ValueError):
        sppgm_step(pol, _FixedRewards([1, 1]), B=4, eta=0.0, rng=np.random.default_rng(0))


# ---------------------------------------------------------------------------
# enumerable landscape: unbiasedness and scaling
# ---------------------------------------------------------------------------


def test_gradient_estimator_unbiased_on_enumerable_landscape():
    land = EnumerableLandscape((3, 2), lambda c: 0.1 + 0.25 * c[0] + 0.15 * c[1])
    rng = np.random.default_rng(17)
    pol = PolicyParams((3, 2), rng.uniform(-1, 1, size=5))
    exact = land.exact_gradient(pol)

    n = 100_000
    samples = np.empty((n, pol.phi.size))
    for i in range(n):
        cand = sample_candidate(pol, rng)
        samples[i] = land.reward_fn(cand.choices) * score_function(pol, cand.choices)
    mc_mean = samples.mean(axis=0)
    mc_sem = samples.std(axis=0, ddof=1) / math.sqrt(n)
    assert np.all(np.abs(mc_mean - exact) <= 3 * mc_sem + 1e-12)


def test_expected_reward_enumeration():
    land = EnumerableLandscape((2, 2), lambda c: float(c[0] == 1 and c[1] == 0))
    pol = PolicyParams.uniform((2, 2))
    assert land.expected_reward(pol) == pytest.approx(0.25)


def _mean_proxy(land, B, T, eta, reps, seed0):
    vals = []
    for r in range(reps):
        rng = np.random.default_rng(seed0 + r)
        pol = PolicyParams.uniform(land.block_sizes)
        for _ in range(T):
            pol, stats, _ = sppgm_step(pol, land, B, eta, rng)
            vals.append(stats["stat_proxy"])
    return float(np.mean(vals))


def _loglog_slope(xs, ys):
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def test_stationarity_proxy_scales_inverse_B():
    # equal-reward bandit: exact gradient is 0, the proxy is pure estimator
    # variance and must decay like 1/B
    land = EnumerableLandscape((2,), lambda c: 0.7)
    Bs = [8, 32, 128]
    proxies = [_mean_proxy(land, B, 10, 0.5, 8, 500) for B in Bs]
    assert -1.4 < _loglog_slope(Bs, proxies) < -0.6


def test_stationarity_proxy_scales_inverse_T():
    land = EnumerableLandscape((4,), lambda c: [1.0, 0.6, 0.4, 0.2][c[0]])
    Ts = [50, 200, 800]
    proxies = [_mean_proxy(land, 16, T, 0.5, 4, 100) for T in Ts]
    assert -1.4 < _loglog_slope(Ts, proxies) < -0.6


def test_stationarity_report_summary():
    rows = [{"stat_proxy": 0.5}, {"stat_proxy": 0.1}]

    class T:
        pass

    trace = T()
    trace.rows = rows
    rep = stationarity_report(trace, B=16, eta=0.5)
    assert rep["mean_stat_proxy"] == pytest.approx(0.3)
    assert rep["iterations"] == 2 and rep["B"] == 16


# ---------------------------------------------------------------------------
# candidate evaluation on PDE instances
# ---------------------------------------------------------------------------


def _p2_instance():
    # u = 8 x1^2 x3 + 2
    u = Unary("Id", 8.0, 2.0, Binary("*", Unary("^2", 1.0, 0.0, Var(1)), Var(3)))
    return manufactured_instance("poisson", "dirichlet", Domain("unit_box", 3), u)


def _p2_space_and_truth():
    space = build_search_space(("x1", "x3", "Id", "^2", "+", "*"), depth=2, dim=3)
    truth = (
        space.slots[0].choices.index("Id"),
        space.slots[1].choices.index("*"),
        space.slots[2].choices.index("^2"),
        space.slots[3].choices.index("x1"),
        space.slots[4].choices.index("Id"),
        space.slots[5].choices.index("x3"),
    )
    return space, truth


def _evaluator(instance, space, n=256, m=128, quick=4):
    colloc = Collocation(instance, CollocationConfig(n, m, seed=0))
    return CandidateEvaluator(instance, space, colloc, InnerConfig(), quick_steps=quick)


def test_true_skeleton_reaches_high_reward():
    inst = _p2_instance()
    space, truth = _p2_space_and_truth()
    ev = _evaluator(inst, space)
    cand = Candidate(truth, 0.0)
    optimize_scalars(cand, ev, steps=60)
    assert cand.reward >= 0.99
    assert cand.loss < 1e-2


def test_zero_inner_steps_evaluates_at_initialization():
    inst = _p2_instance()
    space, truth = _p2_space_and_truth()
    ev = _evaluator(inst, space)
    cand = Candidate(truth, 0.0)
    optimize_scalars(cand, ev, steps=0)
    assert cand.loss >= 0.0  # finite or +inf, never an exception
    assert 0.0 <= cand.reward <= 1.0


def test_inner_descent_is_monotone_vs_initialization():
    inst = _p2_instance()
    space, _ = _p2_space_and_truth()
    rng = np.random.default_rng(23)
    pol = PolicyParams.uniform(space.block_sizes)
    for _ in range(20):
        cand = sample_candidate(pol, rng)
        ev = _evaluator(inst, space)  # fresh cache: steps accumulate otherwise
        at_init = optimize_scalars(Candidate(cand.choices, 0.0), ev, steps=0).loss
        ev2 = _evaluator(inst, space)
        after = optimize_scalars(Candidate(cand.choices, 0.0), ev2, steps=10).loss
        assert after <= at_init + 1e-12


def test_rewards_bounded_in_unit_interval():
    inst = _p2_instance()
    space, _ = _p2_space_and_truth()
    ev = _evaluator(inst, space)
    rng = np.random.default_rng(3)
    pol = PolicyParams.uniform(space.block_sizes)
    for _ in range(25):
        cand = sample_candidate(pol, rng)
        r = ev.evaluate(cand)
        assert 0.0 <= r <= 1.0
        assert cand.reward == r


def test_fitted_loss_consistent_with_plain_collocation_loss():
    inst = _p2_instance()
    space, truth = _p2_space_and_truth()
    colloc = Collocation(inst, CollocationConfig(256, 128, seed=0))
    ev = CandidateEvaluator(inst, space, colloc, InnerConfig(), quick_steps=4)
    rng = np.random.default_rng(8)
    pol = PolicyParams.uniform(space.block_sizes)
    for _ in range(10):
        cand = sample_candidate(pol, rng)
        entry = ev.optimize(cand.choices, 4)
        if not math.isfinite(entry["loss"]):
            continue
        expr = ev.realize(cand.choices)
        direct = colloc.loss(expr)
        assert direct == pytest.approx(entry["loss"], rel=1e-6, abs=1e-9)


def test_skeleton_cache_reuses_results():
    inst = _p2_instance()
    space, truth = _p2_space_and_truth()
    ev = _evaluator(inst, space)
    c1 = Candidate(truth, 0.0)
    ev.evaluate(c1)
    evals_before = ev.evaluations
    c2 = Candidate(truth, 0.0)
    ev.evaluate(c2)
    assert ev.evaluations == evals_before  # pure cache hit
    assert c2.reward == c1.reward


# ---------------------------------------------------------------------------
# full solve
# ---------------------------------------------------------------------------


def test_solve_informed_sixteen_sine_converges_fast():
    u = Unary("SIN", 16.0, 0.0, Var(3))
    inst = manufactured_instance("conservation", "cauchy", Domain("unit_box", 3), u)
    res = solve(inst, ("x3", "SIN", "+", "*"), SolveConfig(seed=0))
    assert res.converged
    assert res.iterations <= 5
    assert res.reward >= 0.99
    assert res.rel_l2_error is not None and res.rel_l2_error < 0.05


def test_solve_single_skeleton_space_converges_in_one_iteration():
    u = Unary("SIN", 16.0, 0.0, Var(3))
    inst = manufactured_instance("poisson", "dirichlet", Domain("unit_box", 3), u)
    res = solve(inst, ("x3", "SIN"), SolveConfig(seed=1, depth=1))
    assert res.space.choice_count() == 1
    assert res.converged and res.iterations == 1
    assert res.reward > 0.999
    assert res.rel_l2_error < 1e-5


def test_solve_recovers_exact_polynomial():
    inst = _p2_instance()
    res = solve(inst, ("x1", "x3", "Id", "^2", "+", "*"), SolveConfig(seed=0))
    assert res.converged
    assert res.rel_l2_error < 1e-6
    assert res.loss < 1e-9


def test_solve_trace_contract():
    inst = _p2_instance()
    res = solve(inst, ("x1", "x3", "Id", "^2", "+", "*"), SolveConfig(seed=4))
    rows = res.trace.rows
    assert len(rows) == res.iterations
    best = [r["best_reward"] for r in rows]
    assert all(b2 >= b1 for b1, b2 in zip(best, best[1:]))  # monotone
    assert all(
        set(r) >= {"iter", "best_reward", "mean_reward", "grad_norm", "stat_proxy", "wall_ms"}
        for r in rows
    )
    header, *data = list(res.trace.csv_rows())
    assert header == ("iter", "best_reward", "mean_reward", "grad_norm", "stat_proxy", "wall_ms")
    assert len(data) == len(rows)


def test_solve_is_deterministic_modulo_wall_time():
    inst = _p2_instance()
    ops = ("x1", "x3", "Id", "^2", "+", "*")
    a = solve(inst, ops, SolveConfig(seed=7))
    b = solve(inst, ops, SolveConfig(seed=7))
    assert a.postfix == b.postfix
    assert a.iterations == b.iterations
    assert a.reward == b.reward
    for ra, rb in zip(a.trace.rows, b.trace.rows):
        for key in ("iter", "best_reward", "mean_reward", "grad_norm", "stat_proxy"):
            assert ra[key] == rb[key]


def test_solve_propagates_empty_search_space():
    inst = _p2_instance()
    with pytest.raises(EmptySearchSpace):
        solve(inst, None, SolveConfig(depth=0))
