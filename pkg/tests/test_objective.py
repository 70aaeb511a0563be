import numpy as np
import pytest
from hypothesis import given, strategies as st

from csiforge.neural import engine as E
from csiforge.neural.gradcheck import grad_check
from csiforge.neural.transformer import split_complex
from csiforge.objective import (LossWeights, corr_loss, corr_t, nmse, nmse_t, smooth_loss, smooth_t,
                                sp_nmse, sp_nmse_t, total_loss, total_loss_t)

from conftest import crandn


def orthogonal_pair(rng, shape=(6, 4)):
    H = crandn(rng, *shape)
    G = crandn(rng, *shape)
    G = G - (np.vdot(H, G) / np.vdot(H, H)) * H
    return H, G * np.linalg.norm(H) / np.linalg.norm(G)


class TestExamples:
    def test_nmse(self, rng):
        H = crandn(rng, 4, 3)
        assert nmse(H, H) == 0
        assert nmse(np.zeros_like(H), H) == 1
        assert nmse(2 * H, H) == pytest.approx(1.0)
        with pytest.raises(ValueError):
            nmse(H, np.zeros_like(H))

    def test_sp_nmse(self, rng):
        H = crandn(rng, 4, 3)
        rot = np.exp(1j * np.pi / 4)
        loss, alpha = sp_nmse(rot * H, H)
        assert loss == pytest.approx(0.0, abs=1e-15)
        assert alpha == pytest.approx(rot)
        H, G = orthogonal_pair(rng)
        loss, alpha = sp_nmse(G, H)
        assert loss == pytest.approx(1.0)
        assert abs(alpha) < 1e-12

    def test_corr(self, rng):
        H, G = orthogonal_pair(rng)
        assert corr_loss((2 - 3j) * H, H) == pytest.approx(0.0, abs=1e-12)
        assert corr_loss(G, H) == pytest.approx(1.0)
        assert corr_loss(H + G, H) == pytest.approx(1 - 1 / np.sqrt(2), abs=1e-5)
        with pytest.raises(ValueError):
            corr_loss(np.zeros_like(H), H)

    def test_smooth(self):
        assert smooth_loss(np.full((5, 3), 2 + 1j)) == 0
        ramp = np.arange(4.0)[:, None]
        assert smooth_loss(ramp, LossWeights(lambda_f=1, lambda_t=0)) == 3
        alt = np.array([[(-1.0) ** l for l in range(14)]])
        assert smooth_loss(alt, LossWeights(lambda_f=0, lambda_t=1)) == 52

    def test_total(self, rng):
        H = crandn(rng, 6, 4)
        w = LossWeights()
        b = total_loss(H, H, w)
        assert b.pri == pytest.approx(0, abs=1e-15) and b.corr == pytest.approx(0, abs=1e-12)
        assert b.total == pytest.approx(w.beta * smooth_loss(H, w) / np.vdot(H, H).real)
        Hh = crandn(rng, 6, 4)
        assert total_loss(Hh, H, LossWeights(beta=0, gamma=0)).total == sp_nmse(Hh, H)[0]
        w = LossWeights(beta=0.05, gamma=0.1)
        b = total_loss(Hh, H, w)
        hand = sp_nmse(Hh, H)[0] + 0.05 * smooth_loss(Hh, w) / np.vdot(H, H).real + 0.1 * corr_loss(Hh, H)
        assert b.total == pytest.approx(hand, abs=1e-12)

    def test_weights_validation(self):
        with pytest.raises(ValueError):
            LossWeights(beta=-1)
        with pytest.raises(ValueError):
            LossWeights(primary="mse")
        with pytest.raises(ValueError):
            LossWeights(reduction="median")


class TestProperties:
    @given(st.integers(0, 10_000), st.floats(0, 2 * np.pi))
    def test_phase_invariance(self, seed, theta):
        rng = np.random.default_rng(seed)
        H, Hh = crandn(rng, 5, 3), crandn(rng, 5, 3)
        r = np.exp(1j * theta)
        base = sp_nmse(Hh, H)[0]
        assert abs(sp_nmse(Hh, r * H)[0] - base) <= 1e-9
        assert abs(sp_nmse(r * Hh, H)[0] - base) <= 1e-9
        assert abs(corr_loss(r * Hh, H) - corr_loss(Hh, H)) <= 1e-9

    @given(st.integers(0, 10_000), st.floats(-3, 3))
    def test_corr_bounded(self, seed, scale):
        rng = np.random.default_rng(seed)
        H = crandn(rng, 4, 4)
        Hh = crandn(rng, 4, 4) + scale * H
        assert 0.0 <= corr_loss(Hh, H) <= 1.0

    def test_sp_nmse_grid_search(self, rng):
        H, Hh = crandn(rng, 4, 3), crandn(rng, 4, 3)
        loss, alpha = sp_nmse(Hh, H)
        step = 0.01
        grid = np.arange(-2, 2, step)
        c = grid[:, None] + 1j * grid[None, :]
        e = np.vdot(H, H).real
        vals = np.array([[np.sum(np.abs(Hh - cc * H) ** 2) / e for cc in row] for row in c])
        best = vals.min()
        assert loss <= best + 1e-12
        # the grid point nearest alpha is within the resolution penalty
        assert best - loss <= e * step**2 / e + 1e-9
        i, j = np.unravel_index(vals.argmin(), vals.shape)
        assert abs(c[i, j] - alpha) <= step


class TestGraph:
    def setup_method(self):
        rng = np.random.default_rng(7)
        self.pred = split_complex(crandn(rng, 3, 6, 4))
        self.target = split_complex(crandn(rng, 3, 6, 4))

    def test_matches_numpy(self):
        P, T = self.pred, self.target
        Pc, Tc = P[:, 0] + 1j * P[:, 1], T[:, 0] + 1j * T[:, 1]
        w = LossWeights()
        np.testing.assert_allclose(nmse_t(E.Tensor(P), T).value, [nmse(a, b) for a, b in zip(Pc, Tc)])
        np.testing.assert_allclose(sp_nmse_t(E.Tensor(P), T).value, [sp_nmse(a, b)[0] for a, b in zip(Pc, Tc)])
        np.testing.assert_allclose(corr_t(E.Tensor(P), T).value, [corr_loss(a, b) for a, b in zip(Pc, Tc)])
        np.testing.assert_allclose(smooth_t(E.Tensor(P), w).value, [smooth_loss(a, w) for a in Pc])
        loss, _ = total_loss_t(E.Tensor(P), T, w)
        assert float(loss.value) == pytest.approx(np.mean([total_loss(a, b, w).total for a, b in zip(Pc, Tc)]))

    def test_energy_weights(self):
        e = np.sum(self.target**2, axis=(1, 2, 3))
        loss, parts = total_loss_t(E.Tensor(self.pred), self.target, LossWeights(primary="nmse", beta=0, gamma=0), e)
        ratio = np.sum((self.pred - self.target) ** 2) / np.sum(self.target**2)
        assert float(loss.value) == pytest.approx(ratio)
        assert parts["pri"] == pytest.approx(ratio)
        with pytest.raises(ValueError):
            total_loss_t(E.Tensor(self.pred), self.target, LossWeights(), np.zeros(3))

    @pytest.mark.parametrize("fn", [nmse_t, sp_nmse_t, corr_t,
                                    lambda p, t: smooth_t(p, LossWeights(), t)])
    def test_gradients(self, fn):
        target = self.target
        err = grad_check(lambda d: E.tsum(fn(d["p"], target)), {"p": self.pred})
        assert err <= 1e-4
