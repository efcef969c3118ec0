import numpy as np
import pytest
from scipy.special import gamma as G

from fracaffine.fbm import (
    FbmConfig,
    fbm_cov_oracle,
    fbm_grid,
    fbm_measure_spec,
    fbm_variance_scale,
    simulate_fbm,
)
from fracaffine.measures import GridConfig

COARSE = GridConfig(1e-5, 1e5, 80)


class TestOracle:
    def test_zero_time(self):
        assert fbm_cov_oracle(0.3, 0.0, 2.0) == 0.0

    @pytest.mark.parametrize("H", [0.2, 0.5, 0.8])
    def test_cov_ratio_identity(self, H):
        # Cov(W_1, W_2)/Var(W_1) = 2^{2H-1} for every H
        ratio = fbm_cov_oracle(H, 1, 2) / fbm_cov_oracle(H, 1, 1)
        assert ratio == pytest.approx(2 ** (2 * H - 1), rel=1e-10)

    def test_brownian_case(self):
        assert fbm_variance_scale(0.5) == 1.0
        assert fbm_cov_oracle(0.5, 0.7, 1.3) == pytest.approx(0.7)

    @pytest.mark.parametrize("H", [0.1, 0.3, 0.49, 0.7, 0.9])
    def test_variance_scale_vs_closed_form(self, H):
        # independent check: V_H = Gamma(2-2H) cos(pi H) / (pi H (1-2H))
        closed = G(2 - 2 * H) * np.cos(np.pi * H) / (np.pi * H * (1 - 2 * H))
        assert fbm_variance_scale(H) == pytest.approx(closed, rel=1e-8)

    def test_self_similarity(self):
        h, c = 0.3, 2.5
        for s, t in ((0.5, 1.0), (1.0, 3.0)):
            lhs = fbm_cov_oracle(h, c * s, c * t)
            rhs = c ** (2 * h) * fbm_cov_oracle(h, s, t)
            assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_measure_family_selection(self):
        assert fbm_measure_spec(0.3).family == "fbm_mu"
        assert fbm_measure_spec(0.7).family == "fbm_nu"
        with pytest.raises(ValueError):
            fbm_measure_spec(0.5)


class TestSimulation:
    def test_starts_at_w0(self):
        cfg = FbmConfig(H=0.3, w0=2.5, grid_cfg=COARSE, times=[0.0, 0.5, 1.0])
        paths = simulate_fbm(cfg, np.random.default_rng(0), n_paths=50)
        assert np.all(paths[:, 0] == 2.5)

    def test_brownian_increments_uncorrelated(self):
        cfg = FbmConfig(H=0.5, times=[0.0, 0.5, 1.0, 1.5])
        paths = simulate_fbm(cfg, np.random.default_rng(6), n_paths=10_000)
        inc = np.diff(paths, axis=1)
        for a in range(3):
            for b in range(a + 1, 3):
                corr = np.corrcoef(inc[:, a], inc[:, b])[0, 1]
                assert abs(corr) < 3.5 / np.sqrt(10_000)

    def test_brownian_variance(self):
        cfg = FbmConfig(H=0.5, times=[0.0, 1.0])
        paths = simulate_fbm(cfg, np.random.default_rng(2), n_paths=20_000)
        v = paths[:, 1].var()
        assert abs(v - 1.0) < 3 * np.sqrt(2.0 / 20_000)

    @pytest.mark.parametrize("H", [0.3, 0.7])
    def test_persistence_ratio(self, H):
        # Cov(W_1, W_2)/Var(W_1) = 2^{2H-1} within MC + grid tolerance
        cfg = FbmConfig(H=H, grid_cfg=COARSE, times=[0.0, 1.0, 2.0])
        paths = simulate_fbm(cfg, np.random.default_rng(3), n_paths=10_000)
        w1, w2 = paths[:, 1], paths[:, 2]
        ratio = np.mean(w1 * w2) / np.mean(w1 * w1)
        se = 3.5 / np.sqrt(10_000)
        assert abs(ratio - 2 ** (2 * H - 1)) < se + 0.01

    def test_increment_stationarity(self):
        cfg = FbmConfig(H=0.3, grid_cfg=COARSE, times=[0.0, 0.5, 1.0, 1.5])
        paths = simulate_fbm(cfg, np.random.default_rng(4), n_paths=20_000)
        inc = np.diff(paths, axis=1)
        variances = inc.var(axis=0)
        spread = variances[0] * np.sqrt(2.0 / 20_000)
        assert np.abs(variances - variances.mean()).max() < 4 * spread

    def test_exact_grid_covariance_vs_oracle(self):
        # analytic grid covariance (no MC): stationary-increment algebra
        # of the representation, against the continuous oracle
        cfg = FbmConfig(H=0.3, grid_cfg=GridConfig(1e-6, 1e6, 200),
                        times=[0.0, 0.25, 1.0])
        gm = fbm_grid(cfg)
        x, w = gm.x, gm.w
        s_sum = x[:, None] + x[None, :]

        def cov_y(a, b):
            d = abs(b - a)
            decay = np.exp(-d * x[None, :]) if b >= a else np.exp(-d * x[:, None])
            return decay / s_sum

        for s, t in ((0.25, 0.25), (0.25, 1.0), (1.0, 1.0)):
            m = cov_y(s, t) - cov_y(s, 0) - cov_y(0, t) + cov_y(0, 0)
            grid_cov = w @ m @ w
            oracle = fbm_cov_oracle(0.3, s, t)
            assert grid_cov == pytest.approx(oracle, rel=2e-3)
