import numpy as np
import pytest

from bayesgrad import allocators as al
from bayesgrad import estimator as es
from bayesgrad import qaoa as q
from bayesgrad import trigcore as tc


@pytest.fixture(scope="module")
def setup():
    g = q.random_graph(8, 4)
    p = q.CircuitParams(np.random.default_rng(7).uniform(0, 2 * np.pi, 8))
    return g, p, es.layer_priors(g, 8), q.exact_gradient(g, p)


def test_exact_mode_ulge_and_psr(setup):
    g, p, pri, grad = setup
    for method in ("ULGE", "PSR"):
        m_g = es.minimum_budget(method, g, 8)
        est, reps = es.estimate_gradient(g, p, m_g, method, pri, exact=True)
        np.testing.assert_allclose(est, grad, atol=1e-8)
        assert all(r.rounds_spent <= b for r, b in zip(reps, es.split_budget(m_g, 8)))


def test_report_invariants(setup):
    g, p, pri, _ = setup
    est, reps = es.estimate_gradient(g, p, 2000, "BLGE", pri, rng=3)
    for r, b in zip(reps, es.split_budget(2000, 8)):
        y = np.array([row[1] for row in r.per_position])
        assert r.delta_hat == pytest.approx(float(r.weights_used @ y), abs=1e-12)
        assert r.rounds_spent <= b
    assert np.allclose(est, [r.delta_hat for r in reps])
    assert set(reps[0].to_dict()) >= {"delta_hat", "per_position", "weights_used", "rounds_spent"}


def test_zero_weight_plan(setup):
    g, p, pri, _ = setup
    plan = al.MeasurementPlan([0.4, 1.2], [0.0, 0.0], [3, 3], "BLGE")
    assert es.estimate_partial(g, p, 1, plan, rng=1).delta_hat == 0.0


def test_zero_rounds_rejected(setup):
    g, p, _, _ = setup
    plan = al.MeasurementPlan([0.4], [1.0], [0], "BLGE")
    with pytest.raises(ValueError):
        es.estimate_partial(g, p, 1, plan)


def test_single_round_variance_substitution(setup):
    g, p, pri, _ = setup
    plan = al.MeasurementPlan([0.4, 1.2], [1.0, 0.5], [1, 4], "BLGE")
    rep = es.estimate_partial(g, p, 1, plan, rng=2, prior=pri[1])
    assert rep.variance_substituted
    assert rep.per_position[0][2] == pri[1].shot_variance
    rep2 = es.estimate_partial(g, p, 1, al.MeasurementPlan([0.4], [1.0], [5], "BLGE"), rng=2, prior=pri[1])
    assert not rep2.variance_substituted


def test_determinism(setup):
    g, p, pri, _ = setup
    a, ra = es.estimate_gradient(g, p, 3000, "BLGE", pri, postprocess=True, rng=11)
    b, rb = es.estimate_gradient(g, p, 3000, "BLGE", pri, postprocess=True, rng=11)
    np.testing.assert_array_equal(a, b)
    assert [r.to_json() for r in ra] == [r.to_json() for r in rb]
    c, _ = es.estimate_gradient(g, p, 3000, "BLGE", pri, postprocess=True, rng=12)
    assert not np.array_equal(a, c)


def test_postprocess_does_not_increase_objective(setup):
    g, p, pri, _ = setup
    for l in (0, 1, 4):
        prior = pri[l]
        m = 4000
        plan = al.allocate("BLGE", prior, m)
        if plan.n_x == 0:
            continue
        rep = es.estimate_partial(g, p, l, plan, True, rng=5, prior=prior, budget=m)
        var_y = np.array([row[2] / (2 * row[3]) for row in rep.per_position])
        mu, A = prior.mu, prior.second_moments
        S = al.sine_matrix(mu, plan.positions)

        def obj(w):
            return A @ (S @ w - mu) ** 2 + var_y @ w**2

        assert rep.postprocessed
        assert obj(rep.weights_used) <= obj(plan.weights) * (1 + 1e-12)


def test_shifted_means_unbiased(setup):
    g, p, _, _ = setup
    ev = q.CircuitEvaluator(g, p)
    req = q.EvalRequest(q.LAYER_SHIFT, 3, 0.7)
    exact = ev.expectation(req)
    rng = np.random.default_rng(0)
    ys = np.array([ev.sample(req, 8, rng)[0] for _ in range(5000)])
    assert abs(ys.mean() - exact) < 3 * ys.std(ddof=1) / np.sqrt(len(ys))


def test_split_budget_rule():
    b = es.split_budget(1296, 24)
    assert b[0::2].tolist() == [36] * 12 and b[1::2].tolist() == [72] * 12
    b = es.split_budget(100, 4)
    assert b.sum() == 100
    assert b[0] == b[2] == 16 and b[1] + b[3] == 68 and b[1] - b[3] in (0, 1)


def test_psr_full_scale_budget_is_one_round_each():
    g = q.random_graph(18, 0)
    assert es.minimum_budget("PSR", g, 24) == 1296
    b = es.split_budget(1296, 24)
    for l in range(24):
        plan = al.psr_allocate(q.generator_decomposition(g, l), int(b[l]))
        assert plan.rounds.tolist() == [1] * plan.n_x


def test_infeasible_budget_lists_minimum(setup):
    g, p, pri, _ = setup
    need = es.minimum_budget("PSR", g, 8)
    with pytest.raises(al.InfeasibleBudget, match=str(need)):
        es.estimate_gradient(g, p, need - 1, "PSR", pri)


def test_blge_small_budget_shrinks_estimates():
    g = q.random_graph(10, 2)
    p = q.CircuitParams(np.random.default_rng(1).uniform(0, 2 * np.pi, 12))
    pri = es.layer_priors(g, 12)
    m_g = 36
    blge, reps = es.estimate_gradient(g, p, m_g, "BLGE", pri, rng=0)
    # plateau regime: the weights stay far below the unbiased l1-norm
    for r, prior in zip(reps, pri):
        assert np.abs(r.weights_used).sum() < 0.5 * prior.spectrum.nu
    grad = q.exact_gradient(g, p)
    assert np.linalg.norm(blge) < np.linalg.norm(grad)


def test_restrict_prior():
    from bayesgrad.priors import PriorModel

    p = PriorModel(tc.FrequencySpectrum((2, 4)), [0.1, 0.2], 1.0)
    r = es.restrict_prior(p, tc.FrequencySpectrum((1, 2, 3, 4)))
    np.testing.assert_array_equal(r.second_moments, [0, 0.1, 0, 0.2])


def test_layer_priors_kinds():
    g = q.random_graph(6, 0)
    exp = es.layer_priors(g, 4)
    bar = es.layer_priors(g, 4, "barren", mc_samples=20_000)
    for l in range(4):
        assert exp[l].spectrum == bar[l].spectrum == q.layer_spectrum(g, l)
        assert exp[l].shot_variance == g.n_edges / 4
    with pytest.raises(ValueError):
        es.layer_priors(g, 4, "nope")
