import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dualmotion import graph as G
from dualmotion import tensor as T
from dualmotion.tensor import Tensor
from dualmotion.tensor.gradcheck import directional_gradcheck, gradcheck


def adjacency_oracle(X, s):
    """Scalar-loop D^-1/2 exp(s A0) D^-1/2."""
    N = X.shape[0]
    Ex = np.zeros((N, N))
    for i in range(N):
        for j in range(N):
            ni, nj = np.sqrt(sum(v * v for v in X[i])), np.sqrt(sum(v * v for v in X[j]))
            c = sum(a * b for a, b in zip(X[i], X[j])) / (ni * nj)
            Ex[i, j] = np.exp(s * c)
    d = Ex.sum(axis=1)
    return np.array([[Ex[i, j] / np.sqrt(d[i] * d[j]) for j in range(N)] for i in range(N)])


class TestAdjacency:
    def test_identical_features_similarity_one(self):
        X = Tensor(np.array([[[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]]]))
        A0, _ = G.cosine_similarity(X)
        assert abs(A0.data[0, 0, 1] - 1.0) < 1e-15

    def test_orthogonal_features_similarity_zero(self):
        X = Tensor(np.array([[[1.0, 0.0], [0.0, 3.0]]]))
        A0, _ = G.cosine_similarity(X)
        assert A0.data[0, 0, 1] == 0.0

    @pytest.mark.parametrize("s", [0.5, 3.0, 9.0])
    def test_three_node_oracle(self, s):
        X = np.array([[1.0, 0.2, -0.3], [0.4, 1.0, 0.1], [-0.5, 0.3, 0.9]])
        A, _ = G.build_adjacency(X, None, s)
        np.testing.assert_allclose(A.data, adjacency_oracle(X, s), rtol=0, atol=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 30))
    def test_symmetric_positive_psd(self, seed, n):
        X = np.random.default_rng(seed).standard_normal((n, 8))
        A, _ = G.build_adjacency(X, np.random.default_rng(seed + 1).standard_normal((8, 4)), 3.0)
        a = A.data
        assert np.abs(a - a.T).max() < 1e-9
        assert (a > 0).all()
        L = np.eye(n) - a
        assert np.linalg.eigvalsh(L).min() > -1e-8

    def test_zero_norm_node_reported(self, caplog):
        X = np.random.default_rng(0).standard_normal((5, 4))
        X[2] = 0.0
        A, zero = G.build_adjacency(X, None, 2.0)
        assert zero.tolist() == [False, False, True, False, False]
        assert "zero-norm" in caplog.text
        # its similarities are 0, so its row of exp(s A0) is all ones before normalization
        Xn = X / np.maximum(np.linalg.norm(X, axis=1, keepdims=True), 1e-300)
        Ex = np.exp(2.0 * Xn @ Xn.T)
        Ex[2, :] = Ex[:, 2] = 1.0
        d = Ex.sum(1)
        np.testing.assert_allclose(A.data, Ex / np.sqrt(np.outer(d, d)), atol=1e-12)

    def test_node_limit(self):
        with pytest.raises(ValueError, match="downscale"):
            G.build_adjacency(np.ones((4097, 2)), None, 1.0)

    def test_s_clamp(self):
        g = G.MotionGraph(0)
        g.s.data = np.array(12.0)
        g.clamp()
        assert g.s.data == pytest.approx(10 - 1e-3)
        g.s.data = np.array(-1.0)
        g.clamp()
        assert g.s.data == pytest.approx(1e-3)

    def test_gradcheck(self):
        rng = np.random.default_rng(0)
        X = Tensor(rng.standard_normal((1, 6, 5)), requires_grad=True)
        phi = Tensor(rng.standard_normal((5, 3)), requires_grad=True)
        s = Tensor(np.array(2.5), requires_grad=True)
        w = rng.standard_normal((1, 6, 6))
        errs = gradcheck(lambda: (G.build_adjacency(X, phi, s)[0] * Tensor(w)).sum(), {"X": X, "phi": phi, "s": s},
                         h=1e-6)
        assert max(errs.values()) < 1e-4


def small_gru(seed=0, C=4):
    return G.GatedUpdateUnit(seed, hidden=C, n_in=C)


class TestGRU:
    def test_update_one_passthrough_gives_propagated(self):
        rng = np.random.default_rng(0)
        E = Tensor(rng.random((1, 4, 3, 3)))
        A, _ = G.build_adjacency(G.nodes_from_map(E), None, 3.0)
        gru = small_gru()
        gru.clamp_update = 1.0
        gru.candidate_passthrough = True
        out = G.integrate_step(A, E, gru)
        np.testing.assert_allclose(out.data, G.propagate(A, E).data, atol=1e-14)

    def test_update_zero_keeps_state(self):
        rng = np.random.default_rng(1)
        E = Tensor(rng.random((2, 4, 3, 5)))
        A, _ = G.build_adjacency(G.nodes_from_map(E), None, 3.0)
        gru = small_gru()
        gru.clamp_update = 0.0
        np.testing.assert_array_equal(G.integrate_step(A, E, gru).data, E.data)

    def test_uniform_adjacency_averages(self):
        rng = np.random.default_rng(2)
        E = Tensor(rng.random((1, 3, 4, 4)))
        N = 16
        A = Tensor(np.full((1, N, N), 1.0 / N))
        out = G.propagate(A, E).data
        mean = E.data.mean(axis=(2, 3), keepdims=True)
        np.testing.assert_allclose(out, np.broadcast_to(mean, out.shape), atol=1e-14)

    def test_gates_in_unit_interval(self):
        gru = small_gru()
        x = Tensor(np.random.default_rng(3).standard_normal((1, 8, 3, 3)) * 50)
        w = T.concat([gru.params["z0.w"], gru.params["r0.w"]], 0)
        b = T.concat([gru.params["z0.b"], gru.params["r0.b"]], 0)
        zr = T.sigmoid(G._conv_bias(x, w, b, (0, 1))).data
        assert (zr >= 0).all() and (zr <= 1).all()

    def test_shape_preserved(self):
        gru = G.GatedUpdateUnit(0)
        E = Tensor(np.random.default_rng(4).random((1, 256, 4, 4)))
        A, _ = G.build_adjacency(G.nodes_from_map(E), None, 3.0)
        assert G.integrate_step(A, E, gru).shape == E.shape

    def test_gradcheck(self):
        gru = small_gru(5, C=3)
        rng = np.random.default_rng(5)
        x = Tensor(rng.standard_normal((1, 3, 3, 4)), requires_grad=True)
        h = Tensor(rng.standard_normal((1, 3, 3, 4)), requires_grad=True)
        params = {"x": x, "h": h, "z0.w": gru.params["z0.w"], "q1.w": gru.params["q1.w"], "r1.b": gru.params["r1.b"]}
        errs = gradcheck(lambda: T.square(gru(x, h)).sum(), params, h=1e-6)
        assert max(errs.values()) < 1e-4


class TestDecoder:
    def test_sign_flip_invariance(self):
        dec = G.FlowDecoder(0)
        E = np.random.default_rng(0).standard_normal((1, 256, 4, 4))
        np.testing.assert_array_equal(dec(E, (32, 32)).data, dec(-E, (32, 32)).data)

    def test_shape_and_finite(self):
        dec = G.FlowDecoder(0)
        F = G.decode_flow(np.random.default_rng(1).random((2, 256, 8, 8)), dec, (64, 64))
        assert F.shape == (2, 2, 64, 64)
        assert np.isfinite(F.data).all()

    def test_normalization_oracle(self):
        dec = G.FlowDecoder(0, n_in=5)
        E = np.random.default_rng(2).standard_normal((1, 5, 2, 3))
        out = dec.normalize(Tensor(E)).data
        K2, s2 = float(dec.params["K2"].data), float(dec.params["sigma2"].data)
        for i in range(2):
            for j in range(3):
                tot = sum(E[0, c, i, j] ** 2 for c in range(5))
                for c in range(5):
                    assert abs(out[0, c, i, j] - K2 * E[0, c, i, j] ** 2 / (tot + s2 ** 2)) < 1e-12

    def test_positive_clamp(self):
        dec = G.FlowDecoder(0)
        dec.params["K2"].data = np.array(-1.0)
        dec.params["sigma2"].data = np.array(0.0)
        dec.clamp()
        assert dec.params["K2"].data > 0 and dec.params["sigma2"].data > 0

    def test_gradcheck(self):
        dec = G.FlowDecoder(1, n_in=4, width=5)
        E = Tensor(np.random.default_rng(3).standard_normal((1, 4, 2, 2)), requires_grad=True)
        params = {"E": E, **dec.parameters()}
        errs = gradcheck(lambda: T.square(dec(E, (4, 4))).sum(), params, h=1e-6)
        assert max(errs.values()) < 1e-4


class TestStage2:
    def modules(self, C=8):
        return (G.MotionGraph(0, n_in=C, d=4), G.GatedUpdateUnit(1, hidden=C, n_in=C),
                G.FlowDecoder(2, n_in=C, width=6))

    def test_single_iteration(self):
        g, gru, dec = self.modules()
        E = np.random.default_rng(0).random((1, 8, 3, 3))
        out = G.stage2_forward(E, g, gru, dec, iterations=1, out_size=(24, 24))
        assert out.n_adjacency_builds == 1
        assert len(out.flows) == 1 and len(out.states) == 1

    def test_returns_symmetric_final_adjacency(self):
        g, gru, dec = self.modules()
        E = np.random.default_rng(1).random((2, 8, 3, 3))
        out = G.stage2_forward(E, g, gru, dec, iterations=4)
        A = out.adjacency.data
        assert len(out.flows) == 4
        assert np.abs(A - np.swapaxes(A, 1, 2)).max() < 1e-9
        assert (A >= 0).all()

    def test_adjacency_rebuilt_from_state(self):
        g, gru, dec = self.modules()
        E = np.random.default_rng(2).random((1, 8, 3, 3))
        out = G.stage2_forward(E, g, gru, dec, iterations=2)
        A_expected, _ = G.build_adjacency(G.nodes_from_map(out.states[0]), g.phi, g.s)
        np.testing.assert_allclose(out.adjacency.data, A_expected.data, atol=1e-14)

    def test_zero_iterations_rejected(self):
        with pytest.raises(ValueError):
            G.stage2_forward(np.ones((1, 8, 2, 2)), *self.modules(), iterations=0)

    def test_directional_gradcheck(self):
        g, gru, dec = self.modules()
        E = Tensor(np.random.default_rng(3).random((1, 8, 3, 3)), requires_grad=True)
        params = {"E": E, "phi": g.phi, "s": g.s, **gru.parameters(), **dec.parameters()}
        fn = lambda: sum((T.square(F).mean() for F in G.stage2_forward(E, g, gru, dec, 3, (6, 6)).flows),
                         Tensor(np.array(0.0)))
        assert directional_gradcheck(fn, params, h=1e-6) < 1e-4
