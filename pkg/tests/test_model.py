import numpy as np
import pytest

import sbmoe
from sbmoe.errors import DimensionMismatch, DomainError, NonFiniteError
from sbmoe.model import (Dataset, FitConfig, Hyperparameters, Linearization,
                         Responsibilities, default_hyperparameters, init_state)


class TestDataset:
    def test_rejects_non_finite(self):
        with pytest.raises(NonFiniteError):
            Dataset(x=np.array([[1.0], [np.nan]]), y=np.array([[0.0], [1.0]]))

    def test_rejects_row_mismatch(self):
        with pytest.raises(DimensionMismatch):
            Dataset(x=np.zeros((3, 2)), y=np.zeros((2, 1)))

    def test_single_row_allowed_for_prediction_utilities(self):
        d = Dataset(x=np.array([[1.0, 2.0]]), y=np.array([[3.0]]))
        assert (d.n, d.dx, d.dy) == (1, 2, 1)


class TestDefaultHyperparameters:
    def test_sigma0_equals_diag_variance(self):
        rng = np.random.default_rng(0)
        y = rng.normal(size=(400, 2))
        y = (y - y.mean(axis=0)) / y.std(axis=0)  # unit sample variance
        data = Dataset(x=rng.normal(size=(400, 1)), y=y)
        hp = default_hyperparameters(data, 3)
        assert hp.nu0 == 4.0  # Dy + 2
        assert np.allclose(hp.Sigma0, np.eye(2), atol=1e-12)

    def test_lambda0_for_standardized_inputs(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(300, 3))
        x = (x - x.mean(axis=0)) / x.std(axis=0)
        data = Dataset(x=x, y=rng.normal(size=(300, 1)))
        hp = default_hyperparameters(data, 2)
        assert hp.eta0 == 5.0  # Dx + 2
        assert np.allclose(hp.Lambda0, np.eye(3) / 5.0, atol=1e-12)
        assert hp.kappa0 == 0.01
        assert np.allclose(hp.mu0, data.y.mean(axis=0))

    def test_constant_coordinate_jittered_with_warning(self):
        rng = np.random.default_rng(2)
        x = np.column_stack([np.full(50, 3.0), rng.normal(size=50)])
        data = Dataset(x=x, y=rng.normal(size=(50, 1)))
        with pytest.warns(UserWarning):
            hp = default_hyperparameters(data, 2)
        hp.validate(data)

    def test_c_out_of_range(self):
        data = Dataset(x=np.random.default_rng(0).normal(size=(5, 1)),
                       y=np.random.default_rng(1).normal(size=(5, 1)))
        with pytest.raises(DomainError):
            default_hyperparameters(data, 6)


class TestHyperparameters:
    def test_eta0_must_cover_dim(self):
        hp = Hyperparameters(Lambda0=np.eye(2), eta0=1.5, mu0=np.zeros(1),
                             kappa0=1.0, Sigma0=np.eye(1), nu0=2.0, C=1)
        with pytest.raises(DomainError):
            hp.validate()

    def test_valid(self):
        hp = Hyperparameters(Lambda0=np.eye(2), eta0=4.0, mu0=np.zeros(1),
                             kappa0=1.0, Sigma0=np.eye(1), nu0=2.0, C=1)
        hp.validate()


class TestResponsibilities:
    def test_omega_marginal_is_exact_sum(self):
        rng = np.random.default_rng(3)
        omega = rng.uniform(size=(3, 4, 4))
        omega[:, np.arange(4), np.arange(4)] = 0.0
        omega /= omega.sum(axis=(0, 2), keepdims=True)
        resp = Responsibilities(omega)
        resp.validate()
        assert np.array_equal(resp.Omega, omega.sum(axis=0))

    def test_validation_catches_bad_normalization(self):
        omega = np.full((2, 3, 3), 0.1)
        omega[:, np.arange(3), np.arange(3)] = 0.0
        with pytest.raises(DomainError):
            Responsibilities(omega).validate()


class TestLinearization:
    def test_validation(self):
        s = np.array([[0.5, 0.5], [1.0, 0.0]])
        t = np.array([[0.0, 1.0], [1.0, 0.0]])
        Linearization(s, t).validate()
        with pytest.raises(DomainError):
            Linearization(np.array([[0.6, 0.6]]), t).validate()


class TestFitConfig:
    def test_defaults_are_valid(self):
        cfg = FitConfig(seed=0)
        cfg.validate()
        assert cfg.iterations == 20
        assert cfg.gate_subiterations == 50
        assert cfg.gate_mc_samples == 8
        assert cfg.predictive_Ke == 64 and cfg.predictive_Kg == 64
        assert cfg.gate_mode == "stochastic"

    def test_rejects_unknown_gate_mode(self):
        with pytest.raises(DomainError):
            FitConfig(seed=0, gate_mode="projected").validate()


class TestInitState:
    def test_single_cluster_mean(self):
        rng = np.random.default_rng(4)
        data = Dataset(x=rng.normal(size=(40, 2)), y=rng.normal(size=(40, 2)))
        hp = default_hyperparameters(data, 1)
        state = init_state(data, hp)
        assert np.allclose(state.experts[0].mu, data.y.mean(axis=0))
        assert state.experts[0].kappa == hp.kappa0
        assert state.experts[0].nu == hp.nu0
        assert np.allclose(state.experts[0].Sigma, hp.Sigma0)

    def test_singleton_clusters(self):
        rng = np.random.default_rng(5)
        data = Dataset(x=rng.normal(size=(7, 2)), y=rng.normal(size=(7, 1)))
        hp = default_hyperparameters(data, 7)
        state = init_state(data, hp)
        got = sorted(float(e.mu[0]) for e in state.experts)
        want = sorted(float(v) for v in data.y[:, 0])
        assert np.allclose(got, want)

    def test_two_separated_blobs(self):
        x = np.array([[0.0, 0.0], [0.1, 0.0], [-0.1, 0.1],
                      [10.0, 10.0], [10.1, 10.0], [9.9, 10.1]])
        y = np.array([[1.0], [2.0], [3.0], [10.0], [11.0], [12.0]])
        data = Dataset(x=x, y=y)
        hp = default_hyperparameters(data, 2)
        state = init_state(data, hp)
        mus = sorted(float(e.mu[0]) for e in state.experts)
        assert np.allclose(mus, [2.0, 11.0])

    def test_uniform_initial_rows(self):
        rng = np.random.default_rng(6)
        data = Dataset(x=rng.normal(size=(9, 2)), y=rng.normal(size=(9, 1)))
        hp = default_hyperparameters(data, 3)
        state = init_state(data, hp)
        assert np.all(state.lin.s == 1.0 / 3.0)
        off = ~np.eye(9, dtype=bool)
        assert np.all(state.lin.t[off] == 1.0 / 8.0)
        assert np.all(np.diag(state.lin.t) == 0.0)
        state.resp.validate()
        assert np.allclose(state.resp.omega[:, off], 1.0 / (3 * 8))
        assert np.allclose(state.gate_L, sbmoe.mathcore.cholesky(hp.Lambda0))

    def test_duplicate_points_fall_back_to_seeding(self):
        x = np.zeros((6, 2))
        x[3:] += 1.0
        x[5] = [0.0, 1.0]
        data = Dataset(x=np.repeat(x, 1, axis=0), y=np.arange(6, dtype=float)[:, None])
        hp = default_hyperparameters(data, 4)
        state = init_state(data, hp)  # ward on duplicates may under-split; must not fail
        assert len(state.experts) == 4
