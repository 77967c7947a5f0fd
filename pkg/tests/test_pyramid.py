import numpy as np
import pytest

from conftest import pyramid
from msconv import reference
from msconv.ops import ConvWeights
from msconv.pyramid import (check_pyramid, connection_cost, default_shapes, gather,
                            leading_order_ratio, reduce_channels, scatter)
from msconv.tensor import Tensor

SHAPES3 = [(8, 8), (4, 4), (2, 2)]


def reduced(rng, L=3, n=1, c_r=4, shapes=SHAPES3):
    return pyramid(rng, n, c_r, shapes[:L])


def test_default_shapes_halve_with_ceiling():
    assert default_shapes(640 // 8, 640 // 8, 5) == [(80, 80), (40, 40), (20, 20), (10, 10), (5, 5)]
    assert default_shapes(25, 13, 3) == [(25, 13), (13, 7), (7, 4)]


def test_check_pyramid_rejects_bad_levels(rng):
    with pytest.raises(ValueError):
        check_pyramid([])
    with pytest.raises(ValueError):
        check_pyramid(pyramid(rng, 1, 3, [(4, 4), (8, 8)]))
    with pytest.raises(ValueError):
        check_pyramid([Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((1, 2, 2, 2)))])
    with pytest.raises(ValueError):
        check_pyramid(pyramid(rng, 1, 3, [(4, 4)]), channels=5)


def test_reduce_channels_shapes_and_oracle(rng):
    X = pyramid(rng, 1, 6, SHAPES3)
    convs = [ConvWeights.init(rng, 6, 2, 1) for _ in range(3)]
    D = reduce_channels(X, convs)
    for d, x, w in zip(D, X, convs):
        assert d.shape == (1, 2) + x.shape[2:]
        want = reference.conv2d(x.data, w.kernel.data, w.bias.data)
        np.testing.assert_allclose(d.data, want, rtol=0, atol=1e-13)
    with pytest.raises(ValueError):
        reduce_channels(X, convs[:2])


def test_reduce_with_embedding_kernel_copies_channels(rng):
    X = pyramid(rng, 1, 6, SHAPES3[:1])
    k = np.zeros((4, 6, 1, 1))
    k[np.arange(4), np.arange(4)] = 1.0
    D = reduce_channels(X, [ConvWeights(Tensor(k))])
    np.testing.assert_array_equal(D[0].data, X[0].data[:, :4])


@pytest.mark.parametrize("l_gl", [1, 2, 3])
def test_gather_slice_is_bit_exact(rng, l_gl):
    D = reduced(rng)
    phi = gather(D, l_gl)
    assert phi.shape == (1, 12) + SHAPES3[l_gl - 1]
    lo = 4 * (l_gl - 1)
    assert phi.data[:, lo:lo + 4].tobytes() == D[l_gl - 1].data.tobytes()


@pytest.mark.parametrize("l_gl", [1, 2, 3])
def test_scatter_at_gathering_level_is_identity(rng, l_gl):
    D = reduced(rng)
    phi = gather(D, l_gl)
    Q = scatter(phi, SHAPES3)
    assert Q[l_gl - 1] is phi
    for q, s in zip(Q, SHAPES3):
        assert q.shape == (1, 12) + s


def test_single_level_pipeline_is_identity(rng):
    D = reduced(rng, L=1)
    phi = gather(D)
    assert phi is D[0]
    assert scatter(phi, [SHAPES3[0]])[0] is D[0]


def test_constant_phi_scatters_to_constants():
    phi = Tensor(np.full((1, 6, 8, 8), -3.5))
    for q in scatter(phi, SHAPES3):
        assert np.all(q.data == -3.5)


def test_gather_errors(rng):
    with pytest.raises(ValueError):
        gather([])
    with pytest.raises(ValueError):
        gather(reduced(rng), l_gl=4)


def test_spec_shape_example(rng):
    D = [Tensor(np.zeros((1, 64, s, s))) for s in (32, 16, 8)]
    phi = gather(D)
    assert phi.shape == (1, 192, 32, 32)
    assert scatter(phi, [(32, 32), (16, 16), (8, 8)])[1].shape == (1, 192, 16, 16)


# ---------------------------------------------------------------------------
# connection cost

@pytest.mark.parametrize("mode", ["full", "gather_scatter"])
def test_single_level_costs_nothing(mode):
    c = connection_cost(256, 64, 1, mode=mode)
    assert c.resizes == 0 and c.channel_resizes == 0


@pytest.mark.parametrize("L", range(1, 9))
def test_counters_match_closed_forms(L):
    C, C_r = 256, 64
    full = connection_cost(C, C_r, L, mode="full")
    gs = connection_cost(C, C_r, L, mode="gather_scatter")
    assert full.resizes == C * L * (L - 1)
    assert gs.resizes == 2 * C_r * (L - 1)
    assert gs.channel_resizes == C_r * (L - 1) + L * C_r * (L - 1)
    assert full.formula == "C*L*(L-1)" and gs.formula == "2*C_r*(L-1)"


def test_growth_quadratic_vs_linear():
    C, C_r = 256, 64
    full = [connection_cost(C, C_r, L, mode="full").resizes for L in (2, 4, 8)]
    gs = [connection_cost(C, C_r, L).resizes for L in (2, 4, 8)]
    # second differences over L: constant non-zero (quadratic) vs zero (linear)
    f = [connection_cost(C, C_r, L, mode="full").resizes for L in range(1, 10)]
    g = [connection_cost(C, C_r, L).resizes for L in range(1, 10)]
    assert len({f[i + 2] - 2 * f[i + 1] + f[i] for i in range(7)}) == 1 and f[2] - 2 * f[1] + f[0] > 0
    assert all(g[i + 2] - 2 * g[i + 1] + g[i] == 0 for i in range(7))
    assert full[1] / full[0] == 6 and full[2] / full[1] == 56 / 12
    assert gs[1] / gs[0] == 3 and gs[2] / gs[1] == 7 / 3


def test_leading_order_ratio():
    assert leading_order_ratio(256, 64, 5) == 20


def test_element_traffic_with_shapes():
    shapes = [(4, 4), (2, 2)]
    full = connection_cost(8, 2, 2, shapes, "full")
    gs = connection_cost(8, 2, 2, shapes, "gather_scatter")
    assert full.element_traffic == 8 * 16 + 8 * 4
    # gather: level 2 -> 4x4 at C_r; scatter: phi (2*C_r) -> 2x2
    assert gs.element_traffic == 2 * 16 + 4 * 4
    assert connection_cost(8, 2, 2).element_traffic is None


def test_connection_cost_validation():
    with pytest.raises(ValueError):
        connection_cost(8, 16, 2)
    with pytest.raises(ValueError):
        connection_cost(8, 2, 2, mode="mesh")
    with pytest.raises(ValueError):
        connection_cost(8, 2, 2, shapes=[(1, 1)])
