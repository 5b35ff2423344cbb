"""Smoothed dual value, softmax weights, gradients and concentration."""

import numpy as np
import pytest

from smoothdro import (CostParams, Dataset, NoiseBank, NumericError,
                       ParamPoint, RobustnessConfig, Sample, ValidationError,
                       concentration_report, exponent_table, full_gradient,
                       grad_pair, make_loss, objective_F, phi_beta_m,
                       sample_noise_bank, softmax_weights)
from smoothdro.smoothing import ExponentTable

from conftest import fd_vector

CP = CostParams(1.0)

# log((1 + e^{-10}) / 2) computed with mpmath at 40 decimal digits
PHI_TWO_ENTRY = -0.6931017816607284


def manual_bank(omegas, zs, sigma2=1.0, seed=0, J=2):
    return NoiseBank(np.asarray(omegas, dtype=float),
                     np.asarray(zs, dtype=int), sigma2, seed, J)


def random_table(rng, m, scale=5.0):
    h = scale * rng.standard_normal(m)
    return ExponentTable(h=h, h_max=float(np.max(h)))


class TestExponentTable:
    model = make_loss("logistic", 2)

    def test_single_entry_formula(self):
        xi = Sample([0.5, -0.5], 1)
        bank = manual_bank([[0.3, 0.1]], [2])
        theta, lam = np.array([1.0, 2.0]), 1.5
        table = exponent_table(self.model, theta, lam, xi, bank, CP)
        x_pert = xi.x + bank.omegas[0]
        expect = self.model.value(theta, x_pert, 2) - \
            lam * (float(bank.omegas[0] @ bank.omegas[0]) + CP.kappa)
        assert table.m == 1
        assert table.h[0] == pytest.approx(expect, rel=1e-14)
        assert table.h_max == table.h[0]

    def test_zero_perturbation_recovers_loss(self):
        xi = Sample([0.5, -0.5], 1)
        bank = manual_bank(np.zeros((4, 2)), [1, 1, 1, 1])
        theta, lam = np.array([0.2, 0.9]), 2.0
        table = exponent_table(self.model, theta, lam, xi, bank, CP)
        f = self.model.value(theta, xi.x, xi.y)
        assert np.allclose(table.h, f, rtol=0, atol=1e-15)

    def test_cross_check_against_direct_loop(self, rng):
        # independently coded direct evaluation of the same exponents
        xi = Sample(rng.standard_normal(2), 2)
        bank = sample_noise_bank(32, 2, 2, 0.6, seed=21)
        theta, lam = rng.standard_normal(2), 0.8
        table = exponent_table(self.model, theta, lam, xi, bank, CP)
        for l in range(bank.m):
            x_pert = xi.x + bank.omegas[l]
            z = int(bank.zs[l])
            s = 1.0 if z == 1 else -1.0
            f = float(np.log1p(np.exp(-s * float(theta @ x_pert))))
            cost = float(np.sum(bank.omegas[l] ** 2)) + \
                (CP.kappa if z != xi.y else 0.0)
            assert table.h[l] == pytest.approx(f - lam * cost, rel=1e-12)

    def test_nonfinite_loss_names_bank_index(self):
        class BadLoss(make_loss("logistic", 1).__class__):
            def value_batch(self, theta, X, ys):
                out = super().value_batch(theta, X, ys)
                out[2] = np.nan
                return out

        bad = BadLoss(1)
        bank = sample_noise_bank(5, 1, 2, 1.0, seed=0)
        with pytest.raises(NumericError) as err:
            exponent_table(bad, np.array([0.1]), 1.0, Sample([0.0], 1), bank, CP)
        assert "index 2" in str(err.value)

    def test_lambda_must_be_positive(self):
        bank = sample_noise_bank(3, 2, 2, 1.0, seed=0)
        with pytest.raises(ValidationError):
            exponent_table(self.model, np.zeros(2), 0.0, Sample([0.0, 0.0], 1),
                           bank, CP)


class TestPhiBetaM:
    def test_equal_entries_return_value(self):
        table = ExponentTable(h=np.full(7, 3.25), h_max=3.25)
        assert phi_beta_m(table, 0.37) == pytest.approx(3.25, abs=1e-14)

    def test_single_sample_collapse(self):
        table = ExponentTable(h=np.array([-1.7]), h_max=-1.7)
        assert phi_beta_m(table, 2.0) == -1.7

    def test_frozen_two_entry_value(self):
        table = ExponentTable(h=np.array([0.0, -10.0]), h_max=0.0)
        assert phi_beta_m(table, 1.0) == pytest.approx(PHI_TWO_ENTRY, abs=1e-12)

    def test_sandwich_and_monotonicity(self, rng):
        betas = np.array([1e-3, 1e-2, 1e-1, 1.0, 10.0])
        for _ in range(1000):
            table = random_table(rng, int(rng.integers(1, 40)))
            vals = [phi_beta_m(table, b) for b in betas]
            for b, v in zip(betas, vals):
                assert table.h_max - b * np.log(table.m) - 1e-10 <= v
                assert v <= table.h_max + 1e-10
            # power-mean monotonicity: the value is nonincreasing in beta,
            # climbing toward h_max as beta shrinks
            assert all(v1 >= v2 - 1e-10 for v1, v2 in zip(vals, vals[1:]))

    def test_translation_stability(self, rng):
        for _ in range(50):
            table = random_table(rng, 16)
            C = float(10.0 * rng.standard_normal())
            shifted = ExponentTable(h=table.h + C, h_max=table.h_max + C)
            assert phi_beta_m(shifted, 0.3) == \
                pytest.approx(phi_beta_m(table, 0.3) + C, abs=1e-12)
            w0 = softmax_weights(table, 0.3).w
            w1 = softmax_weights(shifted, 0.3).w
            assert np.max(np.abs(w0 - w1)) <= 1e-12

    def test_weights_sum_to_one(self, rng):
        for _ in range(100):
            table = random_table(rng, 25, scale=50.0)
            w = softmax_weights(table, 0.01).w
            assert abs(float(np.sum(w)) - 1.0) <= 1e-12
            assert np.all(w >= 0)

    def test_beta_must_be_positive(self):
        table = ExponentTable(h=np.zeros(2), h_max=0.0)
        with pytest.raises(ValidationError):
            phi_beta_m(table, 0.0)

    def test_std_shrinks_as_m_doubles(self):
        # sample-average concentration: std of phi over 30 independent banks
        # drops by at least factor 0.8 per m doubling
        model = make_loss("logistic", 2)
        xi = Sample([0.8, -0.4], 1)
        theta, lam, beta = np.array([0.7, -0.3]), 1.0, 1.0
        stds = []
        for m in (64, 128, 256):
            vals = []
            for b in range(30):
                bank = sample_noise_bank(m, 2, 2, 1.0, seed=1000 + b)
                table = exponent_table(model, theta, lam, xi, bank, CP)
                vals.append(phi_beta_m(table, beta))
            stds.append(float(np.std(vals, ddof=1)))
        assert stds[1] <= 0.8 * stds[0]
        assert stds[2] <= 0.8 * stds[1]


class TestObjectiveAndGradients:
    model = make_loss("logistic", 2)
    rob = RobustnessConfig(rho=0.1, beta=0.5)

    def setup_method(self):
        self.data = Dataset.from_arrays(
            np.array([[1.0, 0.4], [-0.9, -0.5], [0.3, 1.1], [-0.2, -1.0]]),
            np.array([1, 2, 1, 2]), J=2)
        self.bank = sample_noise_bank(48, 2, 2, 0.7, seed=33)

    def test_single_point_dataset(self):
        xi = self.data.samples[0]
        single = Dataset((xi,), 2, 2)
        w = ParamPoint(np.array([0.4, -0.2]), 1.2)
        table = exponent_table(self.model, w.theta, w.lam, xi, self.bank, CP)
        expect = w.lam * self.rob.rho + phi_beta_m(table, self.rob.beta)
        assert objective_F(self.model, w, single, self.bank, CP, self.rob) == \
            pytest.approx(expect, rel=1e-15)

    def test_bit_identical_determinism(self):
        w = ParamPoint(np.array([0.4, -0.2]), 1.2)
        a = objective_F(self.model, w, self.data, self.bank, CP, self.rob)
        b = objective_F(self.model, w, self.data, self.bank, CP, self.rob)
        assert a == b

    def test_objective_monotone_in_beta(self):
        # nonincreasing in beta: smaller beta hugs the per-sample maxima tighter
        w = ParamPoint(np.array([0.4, -0.2]), 1.2)
        vals = [objective_F(self.model, w, self.data, self.bank, CP,
                            RobustnessConfig(rho=0.1, beta=b))
                for b in (1e-3, 1e-2, 1e-1, 1.0, 10.0)]
        assert all(v1 >= v2 - 1e-12 for v1, v2 in zip(vals, vals[1:]))

    def test_grad_pair_single_sample_collapse(self):
        xi = self.data.samples[1]
        bank = self.bank.prefix(1)
        g = grad_pair(self.model, np.array([0.1, 0.2]), 1.5, xi, bank, CP, self.rob)
        cost = float(bank.omegas[0] @ bank.omegas[0]) + \
            (CP.kappa if int(bank.zs[0]) != xi.y else 0.0)
        assert g.g_lambda == pytest.approx(self.rob.rho - cost, rel=1e-14)
        expect = self.model.grad_theta(np.array([0.1, 0.2]),
                                       xi.x + bank.omegas[0], int(bank.zs[0]))
        assert np.allclose(g.g_theta, expect, rtol=1e-14)

    def test_uniform_weights_give_plain_average(self):
        # equal exponents: same omega magnitude, same labels as the sample
        xi = Sample([0.5, 0.5], 1)
        om = np.array([[0.3, 0.0], [0.0, 0.3], [-0.3, 0.0], [0.0, -0.3]])
        # pick theta = 0 so the loss value is constant (log 2) at all points
        bank = manual_bank(om, [1, 1, 1, 1])
        g = grad_pair(self.model, np.zeros(2), 1.0, xi, bank, CP, self.rob)
        grads = np.array([self.model.grad_theta(np.zeros(2), xi.x + o, 1)
                          for o in om])
        assert np.allclose(g.g_theta, grads.mean(axis=0), atol=1e-15)
        assert g.g_lambda == pytest.approx(self.rob.rho - 0.09, rel=1e-12)

    def test_grad_pair_matches_finite_differences(self, rng):
        for _ in range(20):
            v = np.concatenate([rng.standard_normal(2), [0.5 + rng.random()]])
            xi = self.data.samples[int(rng.integers(4))]

            def phi_obj(vv):
                t = exponent_table(self.model, vv[:2], vv[2], xi, self.bank, CP)
                return vv[2] * self.rob.rho + phi_beta_m(t, self.rob.beta)

            g = grad_pair(self.model, v[:2], v[2], xi, self.bank, CP,
                          self.rob).as_vector()
            fd = fd_vector(phi_obj, v)
            assert np.linalg.norm(g - fd) <= 1e-5 * max(1.0, np.linalg.norm(fd))

    def test_g_lambda_never_exceeds_rho(self, rng):
        for _ in range(50):
            theta = rng.standard_normal(2)
            lam = 0.2 + 2.0 * rng.random()
            xi = self.data.samples[int(rng.integers(4))]
            g = grad_pair(self.model, theta, lam, xi, self.bank, CP, self.rob)
            assert g.g_lambda <= self.rob.rho + 1e-15

    def test_full_gradient_single_point(self):
        xi = self.data.samples[2]
        single = Dataset((xi,), 2, 2)
        w = ParamPoint(np.array([-0.3, 0.6]), 0.9)
        gf = full_gradient(self.model, w, single, self.bank, CP, self.rob)
        gp = grad_pair(self.model, w.theta, w.lam, xi, self.bank, CP, self.rob)
        assert np.array_equal(gf.g_theta, gp.g_theta)
        assert gf.g_lambda == gp.g_lambda

    def test_symmetry_forces_zero_theta_gradient(self):
        # dataset {(x, 1), (-x, 1)} with a shared symmetric bank: at theta = 0
        # the two per-sample theta-gradients cancel exactly
        x = np.array([0.8, 0.3])
        data = Dataset((Sample(x, 1), Sample(-x, 1)), 2, 2)
        u = np.array([0.25, -0.1])
        bank = manual_bank(np.stack([u, -u]), [1, 1])
        w = ParamPoint(np.zeros(2), 1.0)
        g = full_gradient(self.model, w, data, bank, CP, self.rob)
        assert np.allclose(g.g_theta, 0.0, atol=1e-16)

    def test_full_gradient_matches_objective_differences(self, rng):
        for _ in range(50):
            v = np.concatenate([rng.standard_normal(2), [0.5 + rng.random()]])
            w = ParamPoint(v[:2], v[2])
            g = full_gradient(self.model, w, self.data, self.bank, CP,
                              self.rob).as_vector()
            fd = fd_vector(
                lambda vv: objective_F(self.model, ParamPoint(vv[:2], vv[2]),
                                       self.data, self.bank, CP, self.rob), v)
            assert np.linalg.norm(g - fd) <= 1e-5 * max(1.0, np.linalg.norm(fd))


class TestConcentration:
    def test_tiny_beta_concentrates_on_top(self, rng):
        table = random_table(rng, 20)
        rep = concentration_report(table, 1e-6, eta=1e-3)
        assert rep.mass_on_eta_argmax >= 1.0 - 1e-9
        assert rep.ess == pytest.approx(1.0, abs=1e-6)

    def test_uniform_table_entropy_and_ess(self):
        table = ExponentTable(h=np.full(16, 2.0), h_max=2.0)
        rep = concentration_report(table, 0.5, eta=0.1)
        assert rep.weight_entropy == pytest.approx(np.log(16.0), abs=1e-12)
        assert rep.ess == pytest.approx(16.0, rel=1e-12)
        assert rep.mass_on_eta_argmax == pytest.approx(1.0)

    def test_mass_nondecreasing_as_beta_decreases(self, rng):
        for _ in range(20):
            table = random_table(rng, 30)
            masses = [concentration_report(table, b, eta=0.05).mass_on_eta_argmax
                      for b in (10.0, 1.0, 0.1, 0.01, 0.001)]
            assert all(m2 >= m1 - 1e-12 for m1, m2 in zip(masses, masses[1:]))

    def test_eta_must_be_positive(self):
        table = ExponentTable(h=np.zeros(2), h_max=0.0)
        with pytest.raises(ValidationError):
            concentration_report(table, 0.1, eta=0.0)
