import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from farmamba.gradcheck import max_relative_error, weighted_sum
from farmamba.ssm import SS2D, SsmParams, VSSBlock, direction_orders, scan_core, selective_scan, ss2d, ss2d_directions
from farmamba.tensor import ShapeError, Tensor
from farmamba.verify import scan_oracle, serial_positions


def jitter(module, rng, scale=0.1):
    for p in module.parameters():
        p.data += scale * rng.normal(size=p.shape)
    return module


class TestScanCore:
    def test_frozen_three_steps(self):
        # decay exp(ln2 * -1) = 1/2 and input gain ln2: h = ln2 * (1, 1.5, 1.75)
        ln2 = math.log(2)
        ones = np.ones((1, 1, 3, 1))
        y = scan_core(
            Tensor(ones),
            Tensor(ln2 * ones),
            Tensor(-np.ones((1, 1, 1))),
            Tensor(ones),
            Tensor(ones),
            Tensor(np.zeros((1, 1))),
        ).data
        np.testing.assert_allclose(y.ravel(), [ln2, 1.5 * ln2, 1.75 * ln2], rtol=1e-15)

    def test_skip_term_only_when_state_is_zero(self, rng):
        u = rng.normal(size=(2, 1, 4, 3))
        y = scan_core(
            Tensor(u),
            Tensor(np.ones_like(u)),
            Tensor(-np.ones((2, 3, 2))),
            Tensor(np.zeros((2, 1, 4, 2))),
            Tensor(np.ones((2, 1, 4, 2))),
            Tensor(np.full((2, 3), 0.5)),
        ).data
        np.testing.assert_allclose(y, 0.5 * u)

    def test_shape_validation(self):
        z = Tensor(np.zeros((1, 1, 3, 2)))
        with pytest.raises(ShapeError):
            scan_core(z, z, Tensor(np.zeros((1, 2, 4))), Tensor(np.zeros((1, 1, 3, 5))), Tensor(np.zeros((1, 1, 3, 4))), Tensor(np.zeros((1, 2))))

    def test_gradient_all_inputs(self, rng):
        G, B, L, E, N = 2, 2, 5, 3, 2
        u = Tensor(rng.normal(size=(G, B, L, E)), requires_grad=True)
        d = Tensor(rng.uniform(0.1, 1.0, size=(G, B, L, E)), requires_grad=True)
        A = Tensor(-rng.uniform(0.5, 2.0, size=(G, E, N)), requires_grad=True)
        Bm = Tensor(rng.normal(size=(G, B, L, N)), requires_grad=True)
        Cm = Tensor(rng.normal(size=(G, B, L, N)), requires_grad=True)
        D = Tensor(rng.normal(size=(G, E)), requires_grad=True)
        w = rng.normal(size=(G, B, L, E))
        assert max_relative_error(lambda: weighted_sum(scan_core(u, d, A, Bm, Cm, D), w), [u, d, A, Bm, Cm, D]) < 1e-6


class TestSelectiveScan:
    @settings(max_examples=15, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**16))
    def test_matches_per_step_loop(self, L, E, N, seed):
        rng = np.random.default_rng(seed)
        p = jitter(SsmParams(E, N, rng, G=1), rng)
        u = rng.normal(size=(2, L, E))
        ref = scan_oracle(u, p.x_proj.data[0], p.dt_proj.data[0], p.dt_bias.data[0], p.A_log.data[0], p.D.data[0])
        np.testing.assert_allclose(selective_scan(Tensor(u), p).data, ref, atol=1e-12)

    def test_causal(self, rng):
        p = SsmParams(3, 4, rng, G=1)
        u = rng.normal(size=(1, 6, 3))
        v = u.copy()
        v[0, 4:] += 5.0
        a, b = selective_scan(Tensor(u), p).data, selective_scan(Tensor(v), p).data
        np.testing.assert_array_equal(a[0, :4], b[0, :4])
        assert not np.allclose(a[0, 4:], b[0, 4:])

    def test_init_decays_are_stable(self, rng):
        p = SsmParams(8, 4, rng, G=1)
        assert (p.A().data < 0).all()
        delta, _, _ = p.project(Tensor(rng.normal(size=(1, 1, 5, 8))))
        assert (delta.data > 0).all()

    def test_rejects_multi_direction_params(self, rng):
        with pytest.raises(ValueError):
            selective_scan(Tensor(np.zeros((1, 2, 3))), SsmParams(3, 2, rng, G=4))


class TestFourDirections:
    def test_orders_are_permutations(self):
        orders = direction_orders(3, 4)
        assert len(orders) == 4
        for o in orders:
            assert sorted(o.tolist()) == list(range(12))
        np.testing.assert_array_equal(orders[1], orders[0][::-1])
        assert orders[2][:3].tolist() == [0, 4, 8]

    @pytest.mark.parametrize("H,W", [(1, 1), (2, 3), (4, 4), (3, 1)])
    def test_each_direction_matches_loop(self, rng, H, W):
        p = jitter(SsmParams(2, 3, rng, G=4), rng)
        x = rng.normal(size=(1, H, W, 2))
        parts = ss2d_directions(Tensor(x), p)
        for g, route in enumerate(serial_positions(H, W)):
            seq = np.stack([x[:, i, j] for i, j in route], axis=1)
            ys = scan_oracle(seq, p.x_proj.data[g], p.dt_proj.data[g], p.dt_bias.data[g], p.A_log.data[g], p.D.data[g])
            for k, (i, j) in enumerate(route):
                np.testing.assert_allclose(parts[g].data[:, i, j], ys[:, k], atol=1e-12)

    def test_first_cell_sees_only_itself_in_forward_route(self, rng):
        p = SsmParams(2, 2, rng, G=4)
        x = rng.normal(size=(1, 3, 3, 2))
        y = x.copy()
        y[0, 2, 2] += 1.0
        a = ss2d_directions(Tensor(x), p)[0].data
        b = ss2d_directions(Tensor(y), p)[0].data
        np.testing.assert_array_equal(a[0, 0, 0], b[0, 0, 0])

    def test_needs_four_directions(self, rng):
        with pytest.raises(ValueError):
            ss2d_directions(Tensor(np.zeros((1, 2, 2, 3))), SsmParams(3, 2, rng, G=1))


class TestBlocks:
    def test_ss2d_shape_and_dtype(self, rng):
        blk = SS2D(4, rng, np.float32, state_dim=2)
        out = ss2d(Tensor(rng.normal(size=(2, 4, 3, 5)).astype(np.float32)), blk)
        assert out.shape == (2, 4, 3, 5) and out.dtype == np.float32

    def test_ss2d_gradient(self, rng):
        blk = jitter(SS2D(2, rng, state_dim=2), rng)
        x = Tensor(rng.normal(size=(1, 2, 2, 3)), requires_grad=True)
        w = rng.normal(size=(1, 2, 2, 3))
        assert max_relative_error(lambda: weighted_sum(ss2d(x, blk), w), [x] + blk.parameters(), max_entries=10) < 1e-5

    def test_vss_zero_init_is_identity(self, rng):
        blk = VSSBlock(4, rng, state_dim=2, zero_init=True)
        x = rng.normal(size=(1, 3, 3, 4))
        np.testing.assert_array_equal(blk(Tensor(x)).data, x)

    def test_vss_gradient(self, rng):
        blk = jitter(VSSBlock(2, rng, state_dim=2), rng)
        x = Tensor(rng.normal(size=(1, 2, 2, 2)), requires_grad=True)
        w = rng.normal(size=(1, 2, 2, 2))
        assert max_relative_error(lambda: weighted_sum(blk(x), w), [x] + blk.parameters(), max_entries=10) < 1e-5

    def test_parameters_are_all_discovered(self, rng):
        blk = VSSBlock(4, rng, state_dim=2)
        names = [n for n, _ in blk.named_parameters()]
        assert "ss2d.ssm.A_log" in names and "fc2.bias" in names
        assert len(names) == len(set(names))


class TestRouteSymmetry:
    """With identical parameters in every direction the summed scan commutes with the
    grid symmetries that map the route set onto itself: transpose swaps row and column
    routes, a half turn swaps each route with its reverse. A quarter turn does not: it
    sends row-major order to columns walked bottom-to-top from the left, a route the set lacks."""

    @pytest.fixture
    def shared(self, rng):
        p = jitter(SsmParams(2, 3, rng, G=4), rng)
        for t in p.parameters():
            t.data[...] = t.data[0]
        return p

    @staticmethod
    def total(p, a):
        return sum(t.data for t in ss2d_directions(Tensor(np.ascontiguousarray(a)), p))

    @pytest.mark.parametrize(
        "op",
        [lambda a: np.swapaxes(a, 1, 2), lambda a: a[:, ::-1, ::-1]],
        ids=["transpose", "half-turn"],
    )
    def test_summed_output_commutes(self, shared, rng, op):
        x = rng.normal(size=(1, 3, 4, 2))
        np.testing.assert_allclose(self.total(shared, op(x)), op(self.total(shared, x)), atol=1e-12)

    def test_quarter_turn_is_not_a_symmetry(self, shared, rng):
        x = rng.normal(size=(1, 3, 4, 2))
        rot = lambda a: np.rot90(a, 1, axes=(1, 2))
        assert np.abs(self.total(shared, rot(x)) - rot(self.total(shared, x))).max() > 1e-6
