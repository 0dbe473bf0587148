from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deformnet import network as nw
from deformnet.collision import Correspondence
from deformnet.mesh_core import ObjectModel, build_internal_edges
from deformnet.scenes import subdivided_cube, uv_sphere

from conftest import mirror_x, small_pair

NO_TRIS = np.zeros((0, 3), dtype=np.int64)


def point(x, k=1.0, mobile=True, h=0.0):
    return ObjectModel(np.array([x], float), NO_TRIS, mobility=[int(mobile)], stiffness_k=k, poisson_h=h)


def rod(p0, p1, k=1.0, mobility=(1, 1), h=0.0):
    return ObjectModel(
        np.array([p0, p1], float), NO_TRIS, mobility=list(mobility), stiffness_k=k, poisson_h=h, internal_edges=[[0, 1]]
    )


def fixed_detect(mapping):
    corr = Correspondence.from_dict(mapping)
    return lambda positions: corr


def state_at(net, positions, mapping=None, chi3=0):
    corr = Correspondence.from_dict(mapping or {})
    return nw.NetworkState(np.asarray(positions, float), corr, chi3)


# --------------------------------------------------------------------------
# construction and initial state


def test_two_triangles_network_size():
    tri = ObjectModel(np.eye(3), np.array([[0, 1, 2]]))
    a = build_internal_edges(tri)
    b = build_internal_edges(replace(tri, rest_positions=np.eye(3) + 5))
    net = nw.build_network(a, b)
    assert net.n_vertices == 6
    sig = nw.update_internal_signals(state_at(net, net.rest), net)
    assert len(sig.forward) + len(sig.backward) == 12
    assert np.all(sig.forward == 0) and np.all(sig.backward == 0)
    assert net.edges.min() >= 0 and set(net.edges[3:].ravel().tolist()) == {3, 4, 5}


def test_vertex_count_is_sum():
    s, c = small_pair()
    assert nw.build_network(s, c).n_vertices == s.n_vertices + c.n_vertices


def test_init_without_penetration():
    s = uv_sphere(1.0, (5, 0, 0), 6, 6)
    c = subdivided_cube(2.0, (0, 0, 0), 2)
    net = nw.build_network(s, c)
    st0 = nw.init_state(net, nw.make_detector(net))
    np.testing.assert_array_equal(st0.chi1, net.rest)
    assert len(st0.chi2) == 0 and st0.chi3 == 0


def test_init_equal_k_midpoint():
    net = nw.build_network(point([0, 0, 0]), point([2, 0, 0]))
    st0 = nw.init_state(net, fixed_detect({0: [1]}))
    np.testing.assert_array_equal(st0.chi1[0], [1, 0, 0])
    np.testing.assert_array_equal(st0.chi1[1], [2, 0, 0])


def test_init_stiffness_weight():
    # own k = 1, other k = 3: weight 3/4 toward the correspondent
    net = nw.build_network(point([0, 0, 0], k=1.0), point([2, 0, 0], k=3.0))
    st0 = nw.init_state(net, fixed_detect({0: [1]}))
    np.testing.assert_allclose(st0.chi1[0], [1.5, 0, 0], rtol=0, atol=1e-15)


def test_init_fixed_vertex_stays():
    net = nw.build_network(point([0, 0, 0], mobile=False), point([2, 0, 0]))
    st0 = nw.init_state(net, fixed_detect({0: [1], 1: [0]}))
    np.testing.assert_array_equal(st0.chi1[0], [0, 0, 0])
    np.testing.assert_array_equal(st0.chi1[1], [1, 0, 0])


# --------------------------------------------------------------------------
# internal signals


def test_displaced_end_receives_restoring_half_force():
    net = nw.build_network(rod([0, 0, 0], [1, 0, 0]), point([9, 9, 9]))
    pos = net.rest.copy()
    pos[1, 0] += 1.0
    sig = nw.update_internal_signals(state_at(net, pos), net)
    # edge (0, 1): forward acts on vertex 1, backward on vertex 0
    np.testing.assert_array_equal(sig.forward[0], [-0.5, 0, 0])
    np.testing.assert_array_equal(sig.backward[0], [0.5, 0, 0])


def test_fixed_endpoint_full_force():
    net = nw.build_network(rod([0, 0, 0], [1, 0, 0], mobility=(0, 1)), point([9, 9, 9]))
    pos = net.rest.copy()
    pos[1, 0] += 1.0
    sig = nw.update_internal_signals(state_at(net, pos), net)
    np.testing.assert_array_equal(sig.forward[0], [-1, 0, 0])


def test_both_fixed_zero():
    net = nw.build_network(rod([0, 0, 0], [1, 0, 0], mobility=(0, 0)), point([9, 9, 9]))
    sig = nw.update_internal_signals(state_at(net, net.rest), net)
    assert np.all(sig.forward == 0) and np.all(sig.backward == 0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-0.9, 0.45), st.floats(0.1, 10.0))
def test_newton_pairs_exact(seed, h, k):
    rng = np.random.default_rng(seed)
    s = replace(build_internal_edges(uv_sphere(1.0, (0, 0, 0), 5, 6)), stiffness_k=k, poisson_h=h)
    s = replace(s, mobility=rng.integers(0, 2, s.n_vertices))
    net = nw.build_network(s, point([5, 5, 5]))
    pos = net.rest + rng.normal(scale=rng.uniform(1e-6, 1e3), size=net.rest.shape)
    sig = nw.update_internal_signals(state_at(net, pos), net)
    assert np.all(sig.forward + sig.backward == 0)


# --------------------------------------------------------------------------
# external signals


def test_external_empty():
    s, c = small_pair((5.0, 0.0, 0.0))
    net = nw.build_network(s, c)
    sig = nw.compute_signals(state_at(net, net.rest), net)
    assert len(sig.external) == 0


def test_external_split_by_correspondent_count():
    net = nw.build_network(point([0, 0, 0]), ObjectModel(np.eye(3), NO_TRIS))
    state = state_at(net, net.rest, {0: [1, 2, 3], 1: [0]})
    internal = np.zeros((4, 3))
    internal[0] = [3.0, 0, 0]
    ext = nw.update_external_signals(state, net, internal)
    # vertex 0 has three correspondents, so it hands a third of its force to vertex 1
    sel = ext.target == 1
    np.testing.assert_array_equal(ext.signal[sel], [[1.0, 0, 0]])
    # vertices 2, 3 are not penetrating: divisor falls back to 1
    assert len(ext) == 4


def test_external_signals_toy_pair_opposite():
    # two rods pressed together end to end, symmetric about x = 0
    a = rod([-2, 0, 0], [-0.5, 0, 0], mobility=(0, 1))
    b = rod([2, 0, 0], [0.5, 0, 0], mobility=(0, 1))
    net = nw.build_network(a, b)
    pos = net.rest.copy()
    pos[1, 0] = -0.2
    pos[3, 0] = 0.2
    sig = nw.compute_signals(state_at(net, pos, {1: [3], 3: [1]}), net)
    ext = dict(zip(sig.external.target.tolist(), sig.external.signal.tolist()))
    # each end is pushed by the other's compression
    np.testing.assert_allclose(ext[1], [0.3, 0, 0], rtol=0, atol=1e-15)
    np.testing.assert_array_equal(np.array(ext[1]), -np.array(ext[3]))
    # equal compression on both sides: the contact is balanced
    np.testing.assert_allclose(sig.net_force[[1, 3]], 0.0, atol=1e-15)


def test_external_sparsity_matches_counts():
    s, c = small_pair()
    net = nw.build_network(s, c)
    st0 = nw.init_state(net, nw.make_detector(net))
    sig = nw.compute_signals(st0, net)
    assert len(sig.external) == st0.chi2.counts(net.n_vertices).sum() > 0
    t, src = st0.chi2.pairs()
    np.testing.assert_array_equal(sig.external.target, t)
    np.testing.assert_array_equal(sig.external.source, src)


# --------------------------------------------------------------------------
# state transition


@pytest.mark.parametrize(
    "gamma,beta,chi3,expected",
    [(0.1, 0.0, 0, 0.1), (0.1, 0.0, 57, 0.1), (0.5, 1.0, 1, 0.25), (0.1, 0.5, 2, 0.01)],
)
def test_alpha(gamma, beta, chi3, expected):
    assert nw.alpha(gamma, beta, chi3) == pytest.approx(expected, rel=1e-15)


@pytest.mark.parametrize("gamma,beta", [(0.0, 0.0), (1.0, 0.0), (1.5, 0.0), (0.1, -0.1), (0.1, 1.1)])
def test_alpha_domain(gamma, beta):
    with pytest.raises(ValueError):
        nw.alpha(gamma, beta, 0)


def test_step_force_single_vertex():
    net = nw.build_network(point([0, 0, 0]), point([9, 9, 9], mobile=False))
    force = np.array([[1.0, 0, 0], [5.0, 5, 5]])
    out = nw.step_force(state_at(net, net.rest), net, 0.1, force)
    np.testing.assert_allclose(out[0], [0.1, 0, 0], rtol=0, atol=1e-17)
    np.testing.assert_array_equal(out[1], net.rest[1])


def test_step_force_zero_force_fixed_point():
    s, c = small_pair()
    net = nw.build_network(s, c)
    pos = net.rest + 0.01 * net.status[:, None]
    out = nw.step_force(state_at(net, pos), net, 0.1, np.zeros_like(pos))
    np.testing.assert_array_equal(out, pos)


def test_step_force_raises_on_overflow():
    net = nw.build_network(point([0, 0, 0]), point([9, 9, 9]))
    with pytest.raises(nw.DivergenceError):
        nw.step_force(state_at(net, net.rest), net, 0.1, np.array([[np.inf, 0, 0], [0, 0, 0]]))


def test_correction_empty_only_counts():
    net = nw.build_network(point([0, 0, 0]), point([4, 0, 0]))
    out = nw.penetration_correction(net.rest, Correspondence.empty(), net, 7)
    np.testing.assert_array_equal(out.chi1, net.rest)
    assert out.chi3 == 8


def test_correction_half_depth():
    net = nw.build_network(point([0, 0, 0]), point([4, 0, 0]))
    out = nw.penetration_correction(net.rest, Correspondence.from_dict({0: [1]}), net, 0)
    np.testing.assert_array_equal(out.chi1[0], [2, 0, 0])
    np.testing.assert_array_equal(out.chi1[1], [4, 0, 0])


def test_correction_mutual_pair_synchronous():
    net = nw.build_network(point([0, 0, 0]), point([4, 0, 0]))
    out = nw.penetration_correction(net.rest, Correspondence.from_dict({0: [1], 1: [0]}), net, 0)
    np.testing.assert_array_equal(out.chi1, [[2, 0, 0], [2, 0, 0]])


def test_rest_state_is_fixed_point():
    s, c = small_pair((5.0, 0.0, 0.0))
    net = nw.build_network(s, c)
    st0 = nw.init_state(net, nw.make_detector(net))
    new, _ = nw.step(st0, net, nw.make_detector(net), 0.1)
    np.testing.assert_array_equal(new.chi1, net.rest)
    assert new.chi3 == 1


def test_internal_forces_relax_to_rest():
    # without contact the internal edges must pull a disturbed object back
    s = build_internal_edges(uv_sphere(1.0, (0, 0, 0), 6, 8))
    s = replace(s, mobility=(s.rest_positions[:, 2] > -0.5).astype(int))
    net = nw.build_network(s, point([9, 9, 9], mobile=False))
    rng = np.random.default_rng(3)
    pos = net.rest + 0.1 * rng.normal(size=net.rest.shape) * net.status[:, None]
    state = state_at(net, pos)
    start = np.abs(pos - net.rest).max()
    for _ in range(2000):
        state, _ = nw.step(state, net, lambda p: Correspondence.empty(), 0.1)
    assert np.abs(state.chi1 - net.rest).max() < 1e-6 * start


def test_fixed_vertices_never_move():
    s, c = small_pair()
    net = nw.build_network(s, c)
    det = nw.make_detector(net)
    state = nw.init_state(net, det)
    fixed = ~net.status
    for _ in range(50):
        state, info = nw.step(state, net, det, 0.1)
        assert np.array_equal(state.chi1[fixed], net.rest[fixed])
        assert np.array_equal(info.intermediate[fixed], net.rest[fixed])


def test_order_independence():
    s, c = small_pair()
    rng = np.random.default_rng(11)
    perm = rng.permutation(s.n_vertices)  # new id -> old id
    inv = np.argsort(perm)
    s_perm = replace(
        s,
        rest_positions=s.rest_positions[perm],
        triangles=inv[s.triangles],
        mobility=s.mobility[perm],
        internal_edges=np.sort(inv[s.internal_edges], axis=1),
    )

    def trajectory(a):
        net = nw.build_network(a, c)
        det = nw.make_detector(net)
        state = nw.init_state(net, det)
        for _ in range(40):
            state, _ = nw.step(state, net, det, 0.1)
        return state.chi1

    base = trajectory(s)
    other = trajectory(s_perm)
    na = s.n_vertices
    np.testing.assert_allclose(other[:na], base[:na][perm], rtol=0, atol=1e-12)
    np.testing.assert_allclose(other[na:], base[na:], rtol=0, atol=1e-12)


def test_mirror_symmetric_trajectories():
    s, c = small_pair()
    nets = [nw.build_network(s, c), nw.build_network(mirror_x(s), mirror_x(c))]
    dets = [nw.make_detector(n) for n in nets]
    states = [nw.init_state(n, d) for n, d in zip(nets, dets)]
    flip = np.array([-1.0, 1.0, 1.0])
    for _ in range(60):
        states = [nw.step(st, n, d, 0.1)[0] for st, n, d in zip(states, nets, dets)]
        assert np.abs(states[1].chi1 * flip - states[0].chi1).max() <= 1e-9
