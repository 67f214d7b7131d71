import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import random_hmm
from qstat.errors import ResourceLimitError, ValidationError, ZeroProbabilityRecord
from qstat.hmm import (DiscreteRecord, HmmModel, hmm_filter, hmm_joint_oracle, hmm_sample,
                       hmm_smooth, hmm_step_loglik)


def _path_marginals(model, obs):
    """P(x_k | Y) by enumerating every hidden path."""
    n, K = model.n_states, len(obs)
    marg = np.zeros((K + 1, n))
    for path in itertools.product(range(n), repeat=K + 1):
        p = model.initial[path[0]]
        for k, y in enumerate(obs):
            p *= model.kernel[y, path[k + 1], path[k]]
        for k, x in enumerate(path):
            marg[k, x] += p
    return marg / marg.sum(axis=1, keepdims=True)


def _coin_model():
    # two-state chain, noisy binary readout
    T = np.array([[0.9, 0.2], [0.1, 0.8]])
    E = np.array([[0.75, 0.3], [0.25, 0.7]])
    return HmmModel.from_independent([0.6, 0.4], T, E)


def test_filter_matches_enumeration():
    rng = np.random.default_rng(7)
    for _ in range(30):
        model = random_hmm(rng)
        obs = rng.integers(0, model.n_obs, size=int(rng.integers(0, 8)))
        _, ll = hmm_filter(model, obs)
        assert ll == pytest.approx(hmm_joint_oracle(model, obs), abs=1e-10)


def test_known_two_step_likelihood():
    model = _coin_model()
    # P(y1=0) = sum_x E[0,x] pi(x) = 0.75*0.6 + 0.3*0.4
    _, ll = hmm_filter(model, [0])
    assert ll == pytest.approx(math.log(0.57), abs=1e-14)


def test_step_logliks_sum_to_total():
    model = _coin_model()
    obs = [0, 1, 1, 0, 1]
    assert hmm_step_loglik(model, obs).sum() == pytest.approx(hmm_filter(model, obs)[1])


def test_smoother_matches_path_marginals():
    rng = np.random.default_rng(11)
    for _ in range(15):
        model = random_hmm(rng, n_max=3)
        obs = rng.integers(0, model.n_obs, size=5)
        np.testing.assert_allclose(hmm_smooth(model, obs), _path_marginals(model, obs),
                                   atol=1e-12)


def test_smoother_last_step_equals_filter():
    model = _coin_model()
    obs = [1, 1, 0, 1]
    post, _ = hmm_filter(model, obs)
    np.testing.assert_allclose(hmm_smooth(model, obs)[-1], post[-1])


def test_empty_record():
    model = _coin_model()
    post, ll = hmm_filter(model, [])
    assert ll == 0.0
    np.testing.assert_allclose(post[0], model.initial)


def test_zero_probability_record_reports_step():
    # observation 1 impossible from every state
    model = HmmModel.from_independent([1.0, 0.0], np.eye(2), [[1.0, 1.0], [0.0, 0.0]])
    with pytest.raises(ZeroProbabilityRecord) as info:
        hmm_filter(model, [0, 0, 1])
    assert info.value.step == 3


def test_invalid_models_rejected():
    with pytest.raises(ValidationError):
        HmmModel([0.5, 0.6], np.full((1, 2, 2), 0.5))
    with pytest.raises(ValidationError):
        HmmModel([1.0], np.full((2, 1, 1), 0.6))
    with pytest.raises(ValidationError):
        hmm_filter(_coin_model(), [0, 2])


def test_oracle_cap():
    model = _coin_model()
    with pytest.raises(ResourceLimitError):
        hmm_joint_oracle(model, [0] * 30, cap=1000)


def test_json_round_trip():
    model = random_hmm(np.random.default_rng(3))
    back = HmmModel.from_json(model.to_json())
    np.testing.assert_array_equal(back.kernel, model.kernel)
    np.testing.assert_array_equal(back.initial, model.initial)


def test_sampler_frequencies():
    model = _coin_model()
    _, rec = hmm_sample(model, 20000, seed=5)
    assert isinstance(rec, DiscreteRecord)
    # stationary law of the chain is (2/3, 1/3); P(y=0) follows from emission
    p0 = 0.75 * 2 / 3 + 0.3 / 3
    assert np.mean(rec.observations == 0) == pytest.approx(p0, abs=0.02)


def test_sampler_deterministic_by_seed():
    model = _coin_model()
    a = hmm_sample(model, 50, seed=9)
    b = hmm_sample(model, 50, seed=9)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1].observations, b[1].observations)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), k=st.integers(0, 12))
def test_posteriors_are_distributions(seed, k):
    rng = np.random.default_rng(seed)
    model = random_hmm(rng)
    obs = rng.integers(0, model.n_obs, size=k)
    post, ll = hmm_filter(model, obs)
    sm = hmm_smooth(model, obs)
    assert ll <= 1e-12
    np.testing.assert_allclose(post.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(sm.sum(axis=1), 1.0, atol=1e-12)
    assert (post >= 0).all() and (sm >= 0).all()
