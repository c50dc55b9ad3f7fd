import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hmmfraud import ghmm
from hmmfraud.ghmm import GaussianHmm


def random_hmm(rng, K):
    pi = rng.dirichlet(np.ones(K))
    trans = rng.dirichlet(np.ones(K), size=K)
    means = rng.normal(0, 2, K)
    stds = rng.uniform(0.3, 2.0, K)
    return GaussianHmm(pi, trans, means, stds)


def hand_hmm():
    return GaussianHmm([0.6, 0.4], [[0.7, 0.3], [0.2, 0.8]], [0.0, 3.0], [1.0, 0.5])


def test_single_gaussian_density():
    hmm = GaussianHmm([1.0], [[1.0]], [0.0], [1.0])
    assert ghmm.loglik(hmm, [0.0]) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-15)
    assert ghmm.loglik(hmm, [0.0]) == pytest.approx(-0.9189, abs=1e-4)


def test_hand_built_matches_enumeration():
    hmm = hand_hmm()
    obs = [0.1, 2.5, 3.3, -0.4]
    # independent oracle: explicit sum of products over the 16 paths
    total = 0.0
    for path in itertools.product(range(2), repeat=4):
        p = hmm.pi[path[0]]
        for t, s in enumerate(path):
            if t:
                p *= hmm.trans[path[t - 1], s]
            z = (obs[t] - hmm.means[s]) / hmm.stds[s]
            p *= math.exp(-0.5 * z * z) / (hmm.stds[s] * math.sqrt(2 * math.pi))
        total += p
    assert ghmm.loglik(hmm, obs) == pytest.approx(math.log(total), rel=1e-9)
    assert ghmm.brute_force_loglik(hmm, obs) == pytest.approx(math.log(total), rel=1e-12)


def test_brute_force_t1_is_mixture_density():
    hmm = hand_hmm()
    x = 1.7
    mix = sum(hmm.pi[k] * math.exp(-0.5 * ((x - hmm.means[k]) / hmm.stds[k]) ** 2)
              / (hmm.stds[k] * math.sqrt(2 * math.pi)) for k in range(2))
    assert ghmm.brute_force_loglik(hmm, [x]) == pytest.approx(math.log(mix), rel=1e-12)


def test_brute_force_refuses_large_instances():
    hmm = random_hmm(np.random.default_rng(0), 3)
    with pytest.raises(ghmm.HmmError):
        ghmm.brute_force_loglik(hmm, np.zeros(13))


def test_forward_matches_brute_force_on_random_instances():
    rng = np.random.default_rng(1)
    for _ in range(100):
        K = int(rng.integers(1, 4))
        T = int(rng.integers(1, 7))
        hmm = random_hmm(rng, K)
        obs = rng.normal(0, 3, T)
        ref = ghmm.brute_force_loglik(hmm, obs)
        assert abs(ghmm.loglik(hmm, obs) - ref) <= 1e-9 * abs(ref)


def test_far_observations_do_not_underflow():
    hmm = hand_hmm()
    res = ghmm.log_forward(hmm, [1e3, -1e3])
    assert res.ok and np.isfinite(res.loglik)


def test_zero_probability_path_is_flagged():
    hmm = GaussianHmm([1.0, 0.0], [[1.0, 0.0], [0.0, 1.0]], [0.0, 1.0], [1.0, 1.0])
    assert ghmm.log_forward(hmm, [0.0, 1.0]).ok
    # gaussian emissions never vanish, so force a zero step through pi
    hmm0 = GaussianHmm([0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]], [0.0, 1.0], [1.0, 1.0])
    res = ghmm.log_forward(hmm0, [0.0])
    assert not res.ok and res.loglik == -math.inf


def test_backward_base_case():
    hmm = hand_hmm()
    beta = ghmm.log_backward(hmm, [0.3])
    np.testing.assert_array_equal(beta, [[1.0, 1.0]])


def test_forward_backward_consistency_every_step():
    rng = np.random.default_rng(2)
    hmm = random_hmm(rng, 3)
    obs = rng.normal(0, 2, 12)
    fw = ghmm.log_forward(hmm, obs)
    beta = ghmm.log_backward(hmm, obs, fw)
    for t in range(obs.size):
        combined = math.log((fw.alpha[t] * beta[t]).sum()) + fw.log_scales.sum()
        assert combined == pytest.approx(fw.loglik, rel=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 3), st.integers(1, 6), st.integers(0, 2 ** 31))
def test_state_relabelling_leaves_scores_unchanged(K, T, seed):
    rng = np.random.default_rng(seed)
    hmm = random_hmm(rng, K)
    obs = rng.normal(0, 2, T)
    perm = rng.permutation(K)
    other = hmm.permuted(perm)
    a, b = ghmm.loglik(hmm, obs), ghmm.loglik(other, obs)
    assert a == pytest.approx(b, rel=1e-10, abs=1e-12)
    fb = ghmm.log_backward(other, obs)
    np.testing.assert_allclose(fb, ghmm.log_backward(hmm, obs)[:, perm], rtol=1e-9)
    _, va = ghmm.viterbi(hmm, obs)
    _, vb = ghmm.viterbi(other, obs)
    assert va == pytest.approx(vb, rel=1e-10, abs=1e-12)


def test_score_windows_matches_single_sequence():
    rng = np.random.default_rng(3)
    hmm = random_hmm(rng, 4)
    X = rng.normal(0, 2, (50, 5))
    got = ghmm.score_windows(hmm, X)
    want = [ghmm.loglik(hmm, row) for row in X]
    np.testing.assert_allclose(got, want, rtol=1e-12)


def test_viterbi_single_state():
    hmm = GaussianHmm([1.0], [[1.0]], [2.0], [1.0])
    path, _ = ghmm.viterbi(hmm, [0.0, 5.0, 1.0])
    np.testing.assert_array_equal(path, [0, 0, 0])


def test_viterbi_matches_exhaustive_argmax():
    hmm = hand_hmm()
    obs = [0.2, 2.9, 3.1, 0.4, 2.0]
    paths, lp = ghmm.path_logprobs(hmm, obs)
    # independent scan with python floats
    best, best_lp = None, -math.inf
    for path in itertools.product(range(2), repeat=5):
        v = math.log(hmm.pi[path[0]])
        for t, s in enumerate(path):
            if t:
                v += math.log(hmm.trans[path[t - 1], s])
            v += -0.5 * ((obs[t] - hmm.means[s]) / hmm.stds[s]) ** 2 - math.log(hmm.stds[s] * math.sqrt(2 * math.pi))
        if v > best_lp:
            best, best_lp = path, v
    path, logp = ghmm.viterbi(hmm, obs)
    assert tuple(path) == best
    assert logp == pytest.approx(best_lp, rel=1e-12)
    assert logp <= ghmm.loglik(hmm, obs)


def test_init_single_state():
    corpus = [np.array([1.0, 2.0, 3.0]), np.array([4.0, 5.0])]
    hmm = ghmm.init_hmm(1, corpus, seed=0)
    assert hmm.means[0] == pytest.approx(3.0)
    np.testing.assert_array_equal(hmm.trans, [[1.0]])


def test_init_quantile_means():
    hmm = ghmm.init_hmm(2, [np.arange(100.0)], seed=0)
    np.testing.assert_allclose(hmm.means, np.quantile(np.arange(100.0), [0.25, 0.75]))
    assert hmm.means[0] == pytest.approx(24.75)
    hmm.check()


def test_init_deterministic_and_perturbation_bounded():
    corpus = [np.random.default_rng(0).normal(size=40)]
    a = ghmm.init_hmm(5, corpus, seed=11)
    b = ghmm.init_hmm(5, corpus, seed=11)
    np.testing.assert_array_equal(a.trans, b.trans)
    assert np.all(np.abs(a.trans - 0.2) <= 0.2 * 0.03)
    a.check()


def test_init_constant_corpus_warns():
    with pytest.warns(RuntimeWarning):
        hmm = ghmm.init_hmm(2, [np.full(5, 3.0)], seed=0)
    np.testing.assert_array_equal(hmm.stds, [ghmm.VAR_FLOOR_STD] * 2)


def two_state_truth():
    return GaussianHmm([0.5, 0.5], [[0.9, 0.1], [0.15, 0.85]], [0.0, 3.0], [1.0, 0.7])


def test_baum_welch_recovers_means():
    rng = np.random.default_rng(4)
    truth = two_state_truth()
    corpus = [truth.sample(50, rng)[0] for _ in range(100)]
    hmm, rep = ghmm.fit_hmm(corpus, 2, seed=0)
    got = np.sort(hmm.means)
    assert np.all(np.abs(got - truth.means) < 0.1)
    assert rep.converged


def test_baum_welch_monotone_and_invariants():
    rng = np.random.default_rng(5)
    corpus = [rng.gamma(2.0, 1.5, int(rng.integers(2, 30))) for _ in range(60)]
    hmm0 = ghmm.init_hmm(4, corpus, seed=3)
    hmm, rep = ghmm.baum_welch(hmm0, corpus, max_iter=60, tol=0.0)
    traj = np.array(rep.loglik_trajectory)
    assert np.all(np.diff(traj) >= -1e-8)
    assert rep.n_iterations == 60 and len(traj) == 61
    hmm.check()


def test_baum_welch_infinite_tolerance_single_iteration():
    corpus = [np.random.default_rng(6).normal(size=20)]
    hmm, rep = ghmm.baum_welch(ghmm.init_hmm(2, corpus), corpus, tol=math.inf)
    assert rep.n_iterations == 1


def test_baum_welch_variance_floor():
    corpus = [np.array([1.0, 1.0, 1.0, 1.0]), np.array([5.0, 5.0, 5.0])]
    hmm0 = ghmm.init_hmm(2, corpus)
    hmm, _ = ghmm.baum_welch(hmm0, corpus, max_iter=50)
    assert np.all(hmm.stds >= ghmm.VAR_FLOOR_STD)
    hmm.check()


def test_baum_welch_empty_corpus():
    with pytest.raises(ghmm.HmmError):
        ghmm.baum_welch(hand_hmm(), [])


def test_corpus_loglik_matches_forward():
    rng = np.random.default_rng(7)
    hmm = random_hmm(rng, 3)
    corpus = [rng.normal(0, 2, n) for n in (2, 5, 9)]
    want = sum(ghmm.loglik(hmm, s) for s in corpus)
    assert ghmm.corpus_loglik(hmm, corpus) == pytest.approx(want, rel=1e-12)


def test_save_load_roundtrip_exact(tmp_path):
    rng = np.random.default_rng(8)
    hmm = random_hmm(rng, 3)
    hmm.metadata = {"perspective": "CH-amount-genuine", "window": 3}
    ghmm.save_hmm(hmm, tmp_path / "m.json")
    back = ghmm.load_hmm(tmp_path / "m.json")
    for name in ("pi", "trans", "means", "stds"):
        np.testing.assert_array_equal(getattr(back, name), getattr(hmm, name))
    assert back.metadata == hmm.metadata and back.transform_tag == hmm.transform_tag
