import math

import numpy as np
import pytest
from scipy import optimize
from scipy.stats import norm

from emmwsed.channel import ChannelConfig, ed_moments, generate_energy_samples, simulate_pu_states
from emmwsed.consensus import consensus_window, generate_network
from emmwsed.detectors import mwsed_statistic
from emmwsed.hmm import (DegenerateComponentError, DegenerateInputError, ModelParams,
                         PosteriorMarginals, canonical_order, e_step, em_mwsed_detect, em_viterbi,
                         estimate_noise_power, forward_pass, grid_init_transitions, initialize,
                         kmeans_init, m_step, run_em, viterbi)
from emmwsed.stats import rng_stream

from oracles import enumerate_hmm, exact_two_means, sequence_logjoint


def random_instance(rng, D):
    mu0 = rng.uniform(5, 15)
    mu1 = mu0 + rng.uniform(0.5, 10)
    var0, var1 = rng.uniform(1, 30, 2)
    alpha, beta = rng.uniform(0.05, 0.95, 2)
    p = ModelParams(mu0, var0, mu1, var1, alpha, beta)
    x = rng.normal(rng.uniform(mu0 - 3, mu1 + 3), math.sqrt(max(var0, var1)), D)
    return x, p


def oracle(x, p):
    return enumerate_hmm(x, p.mu0, p.var0, p.mu1, p.var1, p.alpha, p.beta)


def test_enumeration_exactness():
    rng = rng_stream(100)
    for _ in range(200):
        D = int(rng.integers(1, 13))
        x, p = random_instance(rng, D)
        ll, gamma, xi, best, _, _ = oracle(x, p)
        fb, marg = e_step(x, p)
        assert fb.loglik == pytest.approx(ll, rel=1e-10)
        np.testing.assert_allclose(marg.gamma, gamma, rtol=1e-10, atol=1e-14)
        np.testing.assert_allclose(marg.xi, xi, rtol=1e-10, atol=1e-14)
        np.testing.assert_array_equal(viterbi(x, p), best)


def test_marginal_consistency():
    rng = rng_stream(101)
    x, p = random_instance(rng, 60)
    fb, m = e_step(x, p)
    np.testing.assert_allclose(fb.nu.sum(-1), 1, atol=1e-12)
    np.testing.assert_allclose(m.gamma.sum(-1), 1, atol=1e-10)
    np.testing.assert_allclose(m.xi.sum((-1, -2)), 1, atol=1e-10)
    np.testing.assert_allclose(m.xi.sum(-1), m.gamma[1:], atol=1e-10)
    np.testing.assert_allclose(m.xi.sum(-2), m.gamma[:-1], atol=1e-10)
    np.testing.assert_array_equal(fb.pi[-1], [1.0, 1.0])


def test_single_step():
    p = ModelParams(10.0, 4.0, 20.0, 9.0, 0.2, 0.3)
    x = np.array([14.0])
    prior1 = 0.3 / 0.5
    mix = (1 - prior1) * norm.pdf(14, 10, 2) + prior1 * norm.pdf(14, 20, 3)
    fb, m = e_step(x, p)
    assert fb.loglik == pytest.approx(math.log(mix), rel=1e-12)
    np.testing.assert_allclose(m.gamma[0], fb.nu[0])
    assert m.xi.shape == (0, 2, 2)
    expected = int(prior1 * norm.pdf(14, 20, 3) > (1 - prior1) * norm.pdf(14, 10, 2))
    assert viterbi(x, p)[0] == expected


def test_iid_chain():
    rng = rng_stream(102)
    x = rng.normal(12, 4, 40)
    p = ModelParams(10.0, 9.0, 15.0, 16.0, 0.5, 0.5)
    mix = 0.5 * norm.pdf(x, 10, 3) + 0.5 * norm.pdf(x, 15, 4)
    assert forward_pass(x, p).loglik == pytest.approx(np.log(mix).sum(), rel=1e-12)


def test_scaling_matches_unscaled_long_double():
    rng = rng_stream(103)
    for D in (5, 17, 30):
        x, p = random_instance(rng, D)
        A = np.array([[1 - p.beta, p.beta], [p.alpha, 1 - p.alpha]], dtype=np.longdouble)
        prior = np.array([p.alpha / (p.alpha + p.beta), p.beta / (p.alpha + p.beta)], dtype=np.longdouble)
        def dens(v):
            return np.array([norm.pdf(v, p.mu0, math.sqrt(p.var0)),
                             norm.pdf(v, p.mu1, math.sqrt(p.var1))], dtype=np.longdouble)
        f = prior * dens(x[0])
        for d in range(1, D):
            f = (f @ A) * dens(x[d])
        ref = float(np.log(f.sum()))
        assert forward_pass(x, p).loglik == pytest.approx(ref, rel=1e-9)


def test_batched_matches_single():
    rng = rng_stream(104)
    X = rng.normal(15, 5, (4, 3, 25))
    p = ModelParams(10.0, 20.0, 18.0, 40.0, 0.2, 0.1)
    fb, m = e_step(X, p)
    for i in range(4):
        for j in range(3):
            fb1, m1 = e_step(X[i, j], p)
            assert fb.loglik[i, j] == pytest.approx(fb1.loglik, rel=1e-13)
            np.testing.assert_allclose(m.xi[i, j], m1.xi, rtol=1e-12)
            np.testing.assert_array_equal(viterbi(X, p)[i, j], viterbi(X[i, j], p))


def _hard(s):
    gamma = np.eye(2)[np.asarray(s)]
    return gamma, np.einsum("dh,dg->dhg", gamma[1:], gamma[:-1])


def test_m_step_hard_responsibilities():
    x = np.array([1.0, 2.0, 3.0, 10.0, 12.0, 14.0, 2.5])
    s = np.array([0, 0, 0, 1, 1, 1, 0])
    p = m_step(x, PosteriorMarginals(*_hard(s)), initial_term=False)
    lo, hi = x[s == 0], x[s == 1]
    assert (p.mu0, p.var0, p.mu1, p.var1) == pytest.approx((lo.mean(), lo.var(), hi.mean(), hi.var()))
    # one 0->1 out of 3 transitions leaving 0 (s = 0 0 0 1 1 1 0), one 1->0 out of 3 leaving 1
    assert p.beta == pytest.approx(1 / 3) and p.alpha == pytest.approx(1 / 3)


def test_m_step_transitions_maximize_full_objective():
    rng = rng_stream(120)
    for _ in range(20):
        x, p = random_instance(rng, 30)
        _, marg = e_step(x, p)
        got = m_step(x, marg)
        if got.mu0 != min(got.mu0, got.mu1) or p.mu0 > p.mu1:
            continue
        first = marg.gamma[0]
        c = marg.xi.sum(0)  # [next, prev]

        def neg_q(v):
            a, b = v
            return -(first[0] * math.log(a / (a + b)) + first[1] * math.log(b / (a + b))
                     + c[0, 1] * math.log(a) + c[1, 1] * math.log(1 - a)
                     + c[1, 0] * math.log(b) + c[0, 0] * math.log(1 - b))

        opt = optimize.minimize(neg_q, [0.5, 0.5], bounds=[(1e-4, 1 - 1e-4)] * 2,
                                method="L-BFGS-B", options={"ftol": 1e-15, "gtol": 1e-12})
        assert neg_q([got.alpha, got.beta]) <= opt.fun + 1e-9
        assert (got.alpha, got.beta) == pytest.approx(tuple(opt.x), abs=1e-4)


def test_m_step_alpha_zero_is_clamped():
    # every transition (and the first state) sits in the active state
    x = np.array([1.0, 1.5, 9.0, 10.0, 11.0])
    gamma = np.array([[0.0, 1.0], [0.5, 0.5], [0.5, 0.5], [0.2, 0.8], [0.1, 0.9]])
    xi = np.zeros((4, 2, 2))
    xi[:, 1, 1] = 1
    for initial_term in (False, True):
        p = m_step(x, PosteriorMarginals(gamma, xi), initial_term=initial_term)
        assert p.alpha == 1e-4


def test_m_step_degenerate_component():
    x = np.arange(5.0)
    gamma = np.tile([1.0, 0.0], (5, 1))
    xi = np.zeros((4, 2, 2))
    xi[:, 0, 0] = 1
    with pytest.raises(DegenerateComponentError):
        m_step(x, PosteriorMarginals(gamma, xi))


def test_m_step_orders_components():
    x = np.array([10.0, 11.0, 1.0, 2.0, 1.5])
    # labels deliberately reversed
    p = m_step(x, PosteriorMarginals(*_hard([0, 0, 1, 1, 1])))
    assert p.mu0 < p.mu1


def test_label_swap_gives_complementary_path():
    rng = rng_stream(105)
    x, p = random_instance(rng, 40)
    q = ModelParams(p.mu1, p.var1, p.mu0, p.var0, p.beta, p.alpha)
    np.testing.assert_array_equal(viterbi(x, q), 1 - viterbi(x, p))
    assert canonical_order(q).mu0 == p.mu0


def test_viterbi_identical_emissions_constant_path():
    p = ModelParams(10.0, 5.0, 10.0, 5.0, 0.01, 0.01)
    path = viterbi(rng_stream(106).normal(10, 2, 50), p)
    assert np.all(path == path[0])


def test_viterbi_trellis_attains_best():
    rng = rng_stream(107)
    x, p = random_instance(rng, 10)
    path, tr = viterbi(x, p, return_trellis=True)
    lj = sequence_logjoint(x, path, p.mu0, p.var0, p.mu1, p.var1, p.alpha, p.beta)
    assert tr.log_omega[-1].max() == pytest.approx(lj, rel=1e-12)


def test_em_monotone_on_random_windows():
    rng = rng_stream(108)
    cfg = ChannelConfig(L=12, snr_db=-3, alpha=0.1, beta=0.1)
    X = np.stack([generate_energy_samples(simulate_pu_states(cfg, 150, rng), cfg, rng) for _ in range(100)])
    res = run_em(X, initialize(X), strict=False)
    tr = np.vstack([res.initial_loglik[None], res.loglik_trace])
    for b in range(100):
        t = tr[:, b][~np.isnan(tr[:, b])]
        assert np.all(np.diff(t) >= -1e-8)


def test_run_em_zero_iterations():
    x = rng_stream(109).normal(12, 3, 30)
    init = ModelParams(10.0, 9.0, 15.0, 9.0, 0.2, 0.2)
    res = run_em(x, init, max_iter=0)
    assert res.loglik_trace.size == 0 and res.iterations == 0
    np.testing.assert_array_equal(res.params.as_vector(), init.as_vector())


def test_run_em_from_truth_converges_fast():
    truth = ModelParams(12.0, 2.0, 30.0, 3.0, 0.1, 0.1)
    rng = rng_stream(110)
    cfg = ChannelConfig(alpha=0.1, beta=0.1)
    s = simulate_pu_states(cfg, 150, rng)
    x = np.where(s == 1, rng.normal(30, math.sqrt(3), 150), rng.normal(12, math.sqrt(2), 150))
    res = run_em(x, truth)
    assert res.converged and res.iterations <= 5


def _consensus_windows(n_trials, snr_db=-3, L=12, N=20, c=0.2, seed=111):
    cfg = ChannelConfig(L=L, snr_db=snr_db, alpha=0.1, beta=0.1)
    out, states = [], []
    for t in range(n_trials):
        rng = rng_stream(seed, t)
        net = generate_network(N, c, rng)
        s = simulate_pu_states(cfg, 150, rng)
        X = generate_energy_samples(s, cfg, rng, n_sus=N)
        out.append(consensus_window(X, net.weights).values)
        states.append(s)
    return cfg, np.array(out), np.array(states)


def test_run_em_recovers_transitions_and_noise_power():
    # mean degree R = c (N - 1) = 0.5 * 19 ~ 10 neighbours
    cfg, X, _ = _consensus_windows(200, N=20, c=0.5)
    res = run_em(X, initialize(X), strict=False)
    assert np.median(res.params.alpha) == pytest.approx(0.1, abs=0.05)
    assert np.median(res.params.beta) == pytest.approx(0.1, abs=0.05)
    assert np.median(estimate_noise_power(res.params, cfg.L)) == pytest.approx(1.0, rel=0.1)


def test_kmeans_examples():
    p = kmeans_init(np.array([0, 0, 0, 10, 10, 10.0]))
    assert (p.mu0, p.mu1) == (0.0, 10.0)
    rng = rng_stream(112)
    x = np.concatenate([rng.normal(12, math.sqrt(24), 75), rng.normal(30, math.sqrt(48), 75)])
    rng.shuffle(x)
    p = kmeans_init(x)
    e0, e1 = exact_two_means(x)
    assert p.mu0 == pytest.approx(e0, rel=0.1) and p.mu1 == pytest.approx(e1, rel=0.1)
    assert p.mu0 == pytest.approx(12, rel=0.1) and p.mu1 == pytest.approx(30, rel=0.1)
    for _ in range(20):
        p = kmeans_init(rng.normal(0, 1, 30))
        assert p.mu0 <= p.mu1 and p.var0 > 0 and p.var1 > 0


def test_kmeans_degenerate():
    with pytest.raises(DegenerateInputError):
        kmeans_init(np.full(10, 3.0))
    with pytest.raises(DegenerateInputError):
        kmeans_init(np.array([1.0]))


def test_grid_search():
    grid = np.round(np.arange(1, 10) * 0.1, 10)
    picks = []
    for seed in range(20):
        rng = rng_stream(113, seed)
        cfg = ChannelConfig(alpha=0.1, beta=0.1)
        s = simulate_pu_states(cfg, 150, rng)
        x = np.where(s == 1, rng.normal(30, 2, 150), rng.normal(12, 2, 150))
        em = kmeans_init(x)
        a, b = grid_init_transitions(x, em)
        lls = {(ga, gb): forward_pass(x, ModelParams(em.mu0, em.var0, em.mu1, em.var1, ga, gb)).loglik
               for ga in grid for gb in grid}
        assert len(lls) == 81
        best = max(sorted(lls), key=lambda k: lls[k])
        assert (a, b) == best
        picks.append(best)
    assert max(set(picks), key=picks.count) == (0.1, 0.1)


def test_grid_symmetry():
    x = np.array([0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0])
    em = ModelParams(0.0, 0.2, 1.0, 0.2)
    flipped = 1.0 - x
    for ga, gb in ((0.2, 0.7), (0.4, 0.9)):
        l1 = forward_pass(x, ModelParams(0.0, 0.2, 1.0, 0.2, ga, gb)).loglik
        l2 = forward_pass(flipped, ModelParams(0.0, 0.2, 1.0, 0.2, gb, ga)).loglik
        assert l1 == pytest.approx(l2, rel=1e-12)
    grid_init_transitions(x, em)


def test_noise_power():
    assert estimate_noise_power(ModelParams(12.0, 1, 20.0, 1), 12) == 1.0
    assert estimate_noise_power(ModelParams(24.0, 1, 30.0, 1), 12) == 2.0
    with pytest.raises(ValueError):
        estimate_noise_power(ModelParams(24.0, 1, 30.0, 1), 0)


def test_em_mwsed_bypass_and_separated():
    rng = rng_stream(114)
    cfg = ChannelConfig(alpha=0.1, beta=0.1)
    s = simulate_pu_states(cfg, 150, rng)
    x = np.where(s == 1, rng.normal(100, 1, 150), rng.normal(10, 1, 150))
    oracle_t = mwsed_statistic(x, s, "exponential")
    r = em_mwsed_detect(x, 50.0, states=s)
    assert r.statistic == pytest.approx(oracle_t) and r.params is None
    r = em_mwsed_detect(x, 50.0)
    np.testing.assert_array_equal(r.states, s)
    assert r.decision == int(oracle_t >= 50.0) and not r.fallback


def test_em_mwsed_fallback():
    r = em_mwsed_detect(np.full(20, 5.0), 4.0)
    assert r.fallback and r.statistic == 5.0 and r.decision == 1


def test_em_viterbi_batch_flags_degenerate():
    rng = rng_stream(115)
    X = rng.normal(10, 3, (3, 40))
    X[1] = 7.0
    res = em_viterbi(X)
    assert list(res.ok) == [True, False, True]
    single = em_viterbi(X[0])
    np.testing.assert_array_equal(single.states, res.states[0])
    assert np.ndim(single.params.mu0) == 0


def test_state_error_shrinks_with_neighbourhood():
    errs = []
    for N in (10, 60):
        _, X, S = _consensus_windows(30, snr_db=-5, N=N, c=0.2, seed=116)
        errs.append(np.mean(em_viterbi(X).states != S))
    assert errs[1] < errs[0]
