import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import expit, log_expit

from amploco import amp, priors
from amploco.amp import (Discriminator, PolicyTransitionBuffer, disc_logit, disc_objective,
                         disc_update, sample_policy_transitions, push_policy_transitions, style_reward)
from amploco.approx import Mlp
from amploco.dynamics import FEATURE_DIM, RobotModel
from amploco.errors import DimensionMismatch, EmptyBatch, InsufficientSamples
import oracles


def _pairs(rng, n, dim=FEATURE_DIM, scale=1.0, shift=0.0):
    return rng.normal(shift, scale, size=(n, 2, dim))


def _with_logit(value):
    """A discriminator whose logit is the constant ``value``."""
    d = Discriminator(feature_dim=3, hidden=(4,), rng=np.random.default_rng(0))
    d.net.zero_()
    d.net.biases[-1][:] = value
    return d


class TestStyleReward:
    @pytest.mark.parametrize("D", [-10.0, -1.0, 0.0, 1.0, 10.0])
    def test_closed_form(self, D):
        r = style_reward(_with_logit(D), np.zeros(3), np.zeros(3))
        assert abs(r - np.log1p(np.exp(D))) < 1e-9

    def test_log_two(self):
        assert style_reward(_with_logit(0.0), np.ones(3), np.ones(3)) == np.log(2.0)

    def test_values(self):
        assert amp.softplus(-10.0) == pytest.approx(4.5399e-5, rel=1e-4)
        assert amp.softplus(1e3) == 1000.0
        assert amp.softplus(-1e3) == 0.0

    def test_matches_negative_log_one_minus_sigmoid(self):
        D = np.linspace(-30, 30, 121)
        np.testing.assert_allclose(amp.softplus(D), -log_expit(-D), rtol=1e-13)

    @given(a=st.floats(-700, 700), b=st.floats(-700, 700))
    def test_monotone_nonnegative(self, a, b):
        ra, rb = amp.softplus(a), amp.softplus(b)
        assert ra >= 0 and rb >= 0 and np.isfinite(ra)
        if a < b:
            assert ra <= rb

    def test_sigmoid(self):
        x = np.array([-800.0, -3.0, 0.0, 2.5, 800.0])
        np.testing.assert_allclose(amp.sigmoid(x), expit(x), rtol=1e-14)


class TestLogit:
    def test_zero_network(self, rng):
        d = Discriminator(rng=rng)
        d.net.zero_()
        assert disc_logit(d, rng.normal(size=FEATURE_DIM), rng.normal(size=FEATURE_DIM)) == 0.0

    def test_pure(self, rng):
        d = Discriminator(rng=rng)
        a, b = rng.normal(size=(2, FEATURE_DIM))
        assert disc_logit(d, a, b) == disc_logit(d, a, b)

    def test_composition(self, rng):
        d = Discriminator(rng=rng)
        d.fit_normalizer(rng.normal(3.0, 2.0, size=(500, FEATURE_DIM)))
        a, b = rng.normal(size=(2, 7, FEATURE_DIM))
        x = np.concatenate([d.normalizer.normalize(a), d.normalizer.normalize(b)], axis=1)
        expected = oracles.forward(oracles.ld_params(d.net), x).astype(float)[:, 0]
        np.testing.assert_allclose(d.logit(a, b), expected, rtol=1e-12, atol=1e-14)

    def test_dimension_mismatch(self, rng):
        d = Discriminator(rng=rng)
        with pytest.raises(DimensionMismatch):
            d.logit(np.zeros(FEATURE_DIM), np.zeros(FEATURE_DIM - 1))
        with pytest.raises(DimensionMismatch):
            d.logit(np.zeros(5), np.zeros(5))

    def test_input_width(self):
        d = Discriminator()
        assert d.net.sizes[0] == 2 * FEATURE_DIM and d.net.sizes[-1] == 1
        with pytest.raises(ValueError):
            Discriminator(w_gp=-1.0)

    def test_normalizer_frozen(self, rng):
        d = Discriminator(rng=rng).fit_normalizer(rng.normal(size=(100, FEATURE_DIM)))
        before = d.normalizer.mean.copy()
        d.normalizer.update(rng.normal(50.0, size=(100, FEATURE_DIM)))
        np.testing.assert_array_equal(d.normalizer.mean, before)


def _objective_oracle(d, xd, xp):
    def loss(params):
        ld = oracles.forward(params, xd)[:, 0]
        lp = oracles.forward(params, xp)[:, 0]
        gp = np.mean(np.sum(oracles.input_gradient(params, xd) ** 2, axis=1))
        return np.mean(oracles.softplus(-ld)) + np.mean(oracles.softplus(lp)) + oracles.LD(d.w_gp) * gp
    return loss


class TestObjective:
    def test_zero_network(self, rng):
        d = Discriminator(rng=rng)
        d.net.zero_()
        terms, _ = disc_objective(d, _pairs(rng, 8), _pairs(rng, 5))
        assert terms["dataset"] == np.log(2.0)
        assert terms["policy"] == np.log(2.0)
        assert terms["penalty"] == 0.0

    def test_perfect_separation(self):
        data, pol = np.zeros((4, 2, 3)), np.zeros((4, 2, 3))
        d = _with_logit(10.0)
        t_data, _ = disc_objective(d, data, pol)
        d = _with_logit(-10.0)
        t_pol, _ = disc_objective(d, data, pol)
        total = t_data["dataset"] + t_pol["policy"]
        assert total == pytest.approx(-2 * np.log(expit(10.0)), rel=1e-12)
        assert total == pytest.approx(9.08e-5, rel=1e-3)
        assert t_data["penalty"] == 0.0 and t_pol["penalty"] == 0.0

    def test_terms_match_definition(self, rng):
        d = Discriminator(feature_dim=4, hidden=(6, 5), w_gp=3.0, rng=rng)
        data, pol = _pairs(rng, 6, 4), _pairs(rng, 9, 4, shift=1.0)
        terms, _ = disc_objective(d, data, pol)
        xd = d.inputs(data[:, 0], data[:, 1])
        xp = d.inputs(pol[:, 0], pol[:, 1])
        assert terms["total"] == pytest.approx(float(_objective_oracle(d, xd, xp)(oracles.ld_params(d.net))),
                                               rel=1e-12)
        assert terms["total"] == pytest.approx(terms["dataset"] + terms["policy"] + 3.0 * terms["penalty"])

    @pytest.mark.parametrize("w_gp", [0.0, 10.0])
    def test_gradient_matches_finite_differences(self, rng, w_gp):
        d = Discriminator(feature_dim=5, hidden=(8, 6), w_gp=w_gp, rng=rng)
        for b in d.net.biases:
            b[:] = rng.normal(scale=0.3, size=b.size)
        d.fit_normalizer(rng.normal(1.0, 2.0, size=(50, 5)))
        data, pol = _pairs(rng, 6, 5), _pairs(rng, 7, 5, shift=0.5)
        _, grads = disc_objective(d, data, pol)
        xd = d.inputs(data[:, 0], data[:, 1])
        xp = d.inputs(pol[:, 0], pol[:, 1])
        numeric = oracles.finite_differences(d.net, _objective_oracle(d, xd, xp))
        assert oracles.max_relative_error(grads, numeric) < 1e-6

    def test_empty_batches(self, rng):
        d = Discriminator(rng=rng)
        with pytest.raises(EmptyBatch):
            disc_update(d, np.zeros((0, 2, FEATURE_DIM)), _pairs(rng, 3))
        with pytest.raises(EmptyBatch):
            disc_update(d, _pairs(rng, 3), np.zeros((0, 2, FEATURE_DIM)))

    def test_update_reports_terms_before_step(self, rng):
        d = Discriminator(rng=rng, lr=1e-3)
        data, pol = _pairs(rng, 16), _pairs(rng, 16, shift=1.0)
        before = d.net.copy()
        expected, _ = disc_objective(d, data, pol)
        assert disc_update(d, data, pol) == expected
        assert any(not np.array_equal(a, b) for a, b in zip(before.params, d.net.params))

    def test_update_touches_only_the_discriminator(self, rng):
        policy = Mlp([FEATURE_DIM, 8, 2], rng=rng)
        snapshot = [p.copy() for p in policy.params]
        d = Discriminator(rng=rng, lr=1e-3)
        for _ in range(3):
            disc_update(d, _pairs(rng, 8), _pairs(rng, 8))
        for a, b in zip(snapshot, policy.params):
            assert a.tobytes() == b.tobytes()

    def test_monotone_decrease_without_penalty(self):
        rng = np.random.default_rng(4)
        d = Discriminator(feature_dim=2, hidden=(16,), w_gp=0.0, lr=1e-3, rng=rng)
        data = _pairs(rng, 128, 2, 0.3, 1.0)
        pol = _pairs(rng, 128, 2, 0.3, -1.0)
        losses = []
        for _ in range(50):
            t = disc_update(d, data, pol)
            losses.append(t["dataset"] + t["policy"])
        assert np.all(np.diff(losses) < 0)


class TestSeparation:
    def test_one_dimensional_matches_logistic_regression(self):
        """Synthetic separable 1-D features against a logistic regression fitted by Newton's method.

        The regression has no input-gradient penalty, so the discriminator runs with ``w_gp = 0``
        to solve the same problem.
        """
        rng = np.random.default_rng(21)

        def draw(n, shift):
            x = rng.normal(shift, 0.5, size=(n, 1))
            return np.stack([x, x], axis=1)

        train_d, train_p = draw(512, 1.0), draw(512, -1.0)
        test_d, test_p = draw(2000, 1.0), draw(2000, -1.0)

        x = np.r_[train_d[:, 0, 0], train_p[:, 0, 0]]
        y = np.r_[np.ones(512), np.zeros(512)]
        w = np.zeros(2)
        X = np.column_stack([np.ones_like(x), x])
        for _ in range(25):
            p = expit(X @ w)
            w += np.linalg.solve(X.T @ (X * (p * (1 - p))[:, None]) + 1e-9 * np.eye(2), X.T @ (y - p))
        xt = np.r_[test_d[:, 0, 0], test_p[:, 0, 0]]
        yt = np.r_[np.ones(2000), np.zeros(2000)]
        lr_acc = np.mean((w[0] + w[1] * xt > 0) == yt)

        d = Discriminator(feature_dim=1, hidden=(16, 16), w_gp=0.0, lr=1e-3, rng=rng)
        d.fit_normalizer(train_d[:, 0])
        for k in range(500):
            i = rng.choice(512, 128, replace=False)
            disc_update(d, train_d[i], train_p[i])
        acc = np.mean(np.r_[d.logit(test_d[:, 0], test_d[:, 1]) > 0, d.logit(test_p[:, 0], test_p[:, 1]) < 0])
        assert lr_acc >= 0.95
        assert acc >= 0.95
        assert acc >= lr_acc - 0.01

    def test_walk_prior_against_noise(self):
        rng = np.random.default_rng(8)
        walk, _ = priors.default_priors(RobotModel(), n_walk=4, n_fly=1, seed=2)
        d = Discriminator(rng=rng, lr=1e-3).fit_normalizer(walk.frames())
        lo, hi = walk.frames().min(axis=0), walk.frames().max(axis=0)

        def noise(n):
            return rng.uniform(lo, hi + 1e-9, size=(n, 2, FEATURE_DIM))

        for _ in range(500):
            disc_update(d, walk.sample(256, rng), noise(256))
        held_d, held_p = walk.sample(1000, rng), noise(1000)
        acc = np.mean(np.r_[d.logit(held_d[:, 0], held_d[:, 1]) > 0, d.logit(held_p[:, 0], held_p[:, 1]) < 0])
        assert acc >= 0.95


class TestBuffer:
    def test_fifo(self, rng):
        buf = PolicyTransitionBuffer(capacity=5, feature_dim=3)
        pairs = np.arange(10, dtype=float)[:, None, None] * np.ones((10, 2, 3))
        for k in range(10):
            push_policy_transitions(buf, pairs[k:k + 1])
        assert len(buf) == 5
        np.testing.assert_array_equal(buf.contents(), pairs[5:])

    def test_push_larger_than_capacity(self):
        buf = PolicyTransitionBuffer(capacity=4, feature_dim=1)
        pairs = np.arange(9, dtype=float)[:, None, None] * np.ones((9, 2, 1))
        buf.push(pairs[:2])
        buf.push(pairs[2:])
        np.testing.assert_array_equal(buf.contents(), pairs[5:])

    def test_full_sample_is_permutation(self, rng):
        buf = PolicyTransitionBuffer(capacity=6, feature_dim=2)
        buf.push(rng.normal(size=(8, 2, 2)))
        out = sample_policy_transitions(buf, 6, rng)
        key = lambda a: sorted(map(tuple, a.reshape(len(a), -1)))
        assert key(out) == key(buf.contents())

    def test_without_replacement(self, rng):
        buf = PolicyTransitionBuffer(capacity=50, feature_dim=1)
        buf.push(np.arange(30, dtype=float)[:, None, None] * np.ones((30, 2, 1)))
        out = buf.sample(30, rng)
        assert len(np.unique(out[:, 0, 0])) == 30

    def test_seeded(self, rng):
        buf = PolicyTransitionBuffer(capacity=20, feature_dim=2)
        buf.push(rng.normal(size=(25, 2, 2)))
        a = buf.sample(7, np.random.default_rng(1))
        b = buf.sample(7, np.random.default_rng(1))
        np.testing.assert_array_equal(a, b)

    def test_insufficient(self, rng):
        buf = PolicyTransitionBuffer(capacity=10, feature_dim=2)
        buf.push(rng.normal(size=(3, 2, 2)))
        with pytest.raises(InsufficientSamples):
            buf.sample(4, rng)

    def test_bad_shapes(self):
        with pytest.raises(DimensionMismatch):
            PolicyTransitionBuffer(capacity=3, feature_dim=2).push(np.zeros((1, 2, 3)))
        with pytest.raises(ValueError):
            PolicyTransitionBuffer(capacity=0)


def test_checkpoint_round_trip(rng):
    d = Discriminator(rng=rng, lr=1e-3).fit_normalizer(rng.normal(size=(20, FEATURE_DIM)))
    disc_update(d, _pairs(rng, 4), _pairs(rng, 4))
    e = Discriminator(rng=np.random.default_rng(77))
    e.load_state_dict(d.state_dict())
    a, b = rng.normal(size=(2, 3, FEATURE_DIM))
    np.testing.assert_array_equal(d.logit(a, b), e.logit(a, b))
