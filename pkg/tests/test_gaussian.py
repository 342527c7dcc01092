import math

import numpy as np
import pytest

from safeswarm import tensor as T
from safeswarm.errors import DimensionError
from safeswarm.gaussian import (
    diag_gaussian_kl,
    gaussian_entropy,
    gaussian_log_prob,
    sample,
)
from safeswarm.tensor import Tensor


class TestLogProb:
    def test_standard_normal_mode(self):
        lp = gaussian_log_prob(Tensor([0.0]), Tensor([0.0]), Tensor([0.0]))
        assert abs(lp.data - (-0.5 * math.log(2 * math.pi))) < 1e-14

    def test_unit_deviation(self):
        lp = gaussian_log_prob(Tensor([1.0]), Tensor([0.0]), Tensor([2.0]))
        assert abs(lp.data - (-0.5 - 0.5 * math.log(2 * math.pi))) < 1e-14

    def test_mode_is_maximal(self):
        mean = Tensor([0.3, -0.7])
        log_std = Tensor([0.1, -0.4])
        at_mode = gaussian_log_prob(mean, log_std, mean).data
        rng = np.random.default_rng(0)
        for _ in range(20):
            a = Tensor(rng.standard_normal(2))
            assert gaussian_log_prob(mean, log_std, a).data <= at_mode + 1e-12

    def test_batched_rows(self):
        rng = np.random.default_rng(1)
        mean = rng.standard_normal((5, 3))
        log_std = rng.standard_normal((5, 3)) * 0.2
        act = rng.standard_normal((5, 3))
        batched = gaussian_log_prob(Tensor(mean), Tensor(log_std), Tensor(act)).data
        for i in range(5):
            one = gaussian_log_prob(Tensor(mean[i]), Tensor(log_std[i]), Tensor(act[i])).data
            assert abs(batched[i] - one) < 1e-14

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            gaussian_log_prob(Tensor([0.0, 0.0]), Tensor([0.0]), Tensor([0.0, 0.0]))


class TestKL:
    def test_self_distance_zero(self):
        mean = Tensor([0.4, -1.2])
        ls = Tensor([0.3, -0.1])
        assert abs(diag_gaussian_kl(mean, ls, mean, ls).data) < 1e-15

    def test_mean_shift_formula(self):
        kl = diag_gaussian_kl(Tensor([1.0]), Tensor([0.0]), Tensor([0.0]), Tensor([0.0]))
        assert abs(kl.data - 0.5) < 1e-14

    def test_nonnegative_random(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            m1, m2 = rng.standard_normal(3), rng.standard_normal(3)
            s1, s2 = rng.standard_normal(3) * 0.5, rng.standard_normal(3) * 0.5
            kl = diag_gaussian_kl(Tensor(m1), Tensor(s1), Tensor(m2), Tensor(s2)).data
            assert kl >= -1e-14

    def test_zero_iff_equal(self):
        rng = np.random.default_rng(3)
        m = rng.standard_normal(4)
        s = rng.standard_normal(4) * 0.3
        assert diag_gaussian_kl(Tensor(m), Tensor(s), Tensor(m), Tensor(s)).data < 1e-15
        kl = diag_gaussian_kl(Tensor(m), Tensor(s), Tensor(m + 1e-3), Tensor(s)).data
        assert kl > 0.0

    def test_monte_carlo_oracle(self):
        # KL(N1||N2) = E_{x~N1}[log p1(x) - log p2(x)], estimated by sampling
        rng = np.random.default_rng(4)
        m1, m2 = np.array([0.5, -0.2]), np.array([-0.3, 0.4])
        s1, s2 = np.array([0.1, -0.3]), np.array([0.4, 0.0])
        closed = diag_gaussian_kl(Tensor(m1), Tensor(s1), Tensor(m2), Tensor(s2)).data

        n = 1_000_000
        x = m1 + np.exp(s1) * rng.standard_normal((n, 2))

        def logp(x, m, ls):
            return (
                -0.5 * np.sum(((x - m) / np.exp(ls)) ** 2, axis=1)
                - np.sum(ls)
                - math.log(2 * math.pi)
            )

        diffs = logp(x, m1, s1) - logp(x, m2, s2)
        mc = diffs.mean()
        se = diffs.std(ddof=1) / math.sqrt(n)
        assert abs(closed - mc) < 3.0 * se


class TestEntropyAndSampling:
    def test_entropy_closed_form(self):
        ls = np.array([0.2, -0.5])
        expect = np.sum(ls) + 0.5 * 2 * (math.log(2 * math.pi) + 1.0)
        assert abs(gaussian_entropy(Tensor(ls)).data - expect) < 1e-14

    def test_sample_determinism(self):
        mean = np.zeros((4, 2))
        ls = np.zeros((4, 2))
        a = sample(mean, ls, np.random.default_rng(7))
        b = sample(mean, ls, np.random.default_rng(7))
        assert np.array_equal(a, b)

    def test_logprob_gradient(self):
        from util import finite_difference_gradient, max_rel_error

        rng = np.random.default_rng(5)
        x0 = rng.standard_normal(4) * 0.5
        action = rng.standard_normal(2)

        def value(v):
            with T.Tape():
                p = Tensor(v, requires_grad=True)
                mean = T.slice_axis(p, 0, 0, 2)
                ls = T.slice_axis(p, 0, 2, 4)
                lp = gaussian_log_prob(mean, ls, Tensor(action))
            return lp.data.item()

        with T.Tape():
            p = Tensor(x0, requires_grad=True)
            mean = T.slice_axis(p, 0, 0, 2)
            ls = T.slice_axis(p, 0, 2, 4)
            lp = gaussian_log_prob(mean, ls, Tensor(action))
            (g,) = T.backward(lp, [p])
        fd, _ = finite_difference_gradient(value, x0)
        assert max_rel_error(g.data, fd) < 1e-4
