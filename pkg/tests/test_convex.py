import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from funnelloop.convex import (
    Ball,
    InfeasibleError,
    Polytope,
    QpProblem,
    UnboundedError,
    chebyshev_center,
    closest_points,
    contains,
    enumerate_vertices,
    hill_climb_vertex,
    is_bounded,
    maximize_linear_over_polytope,
    smallest_enclosing_ball,
    solve_qp,
)


# ---------------------------------------------------------------- oracles

def active_set_qp_oracle(H, g, lower, upper):
    """Exhaustive active-set enumeration for box-constrained QPs.

    For each variable choose {free, at lower, at upper}; minimize over the
    free block; keep the best feasible candidate.
    """
    n = H.shape[0]
    best, best_val = None, np.inf
    for pattern in itertools.product((0, 1, 2), repeat=n):
        x = np.zeros(n)
        free = [i for i, p in enumerate(pattern) if p == 0]
        for i, p in enumerate(pattern):
            if p == 1:
                x[i] = lower[i]
            elif p == 2:
                x[i] = upper[i]
        if free:
            F = np.ix_(free, free)
            rhs = -g[free] - H[np.ix_(free, [i for i in range(n) if i not in free])] @ x[
                [i for i in range(n) if i not in free]
            ]
            try:
                x[free] = np.linalg.solve(H[F], rhs)
            except np.linalg.LinAlgError:
                continue
        if np.any(x < lower - 1e-9) or np.any(x > upper + 1e-9):
            continue
        val = 0.5 * x @ H @ x + g @ x
        if val < best_val:
            best, best_val = x.copy(), val
    return best, best_val


def polygon_boundary_points(poly, step=1e-3):
    """Dense sample of a bounded 2D polytope's boundary via its edges."""
    graph = enumerate_vertices(poly)
    pts = graph.points
    center = pts.mean(axis=0)
    order = np.argsort(np.arctan2(pts[:, 1] - center[1], pts[:, 0] - center[0]))
    ring = pts[order]
    samples = []
    for i in range(len(ring)):
        a, b = ring[i], ring[(i + 1) % len(ring)]
        k = max(2, int(np.linalg.norm(b - a) / step))
        t = np.linspace(0, 1, k)
        samples.append(a[None, :] * (1 - t)[:, None] + b[None, :] * t[:, None])
    return np.vstack(samples)


def miniball_bruteforce(points):
    """Exact minimum enclosing circle of 2D points by pair/triple enumeration."""
    best = None
    n = len(points)
    for i in range(n):
        for j in range(i + 1, n):
            c = 0.5 * (points[i] + points[j])
            r = np.linalg.norm(points[i] - c)
            if np.all(np.linalg.norm(points - c, axis=1) <= r + 1e-9):
                if best is None or r < best[1]:
                    best = (c, r)
    if best is not None:
        return best
    for i, j, k in itertools.combinations(range(n), 3):
        pts = np.array([points[i], points[j], points[k]])
        mat = 2 * (pts[1:] - pts[0])
        if abs(np.linalg.det(mat)) < 1e-12:
            continue
        rhs = np.sum(pts[1:] ** 2, axis=1) - np.sum(pts[0] ** 2)
        c = np.linalg.solve(mat, rhs)
        r = np.linalg.norm(pts[0] - c)
        if np.all(np.linalg.norm(points - c, axis=1) <= r + 1e-9):
            if best is None or r < best[1]:
                best = (c, r)
    return best


def random_bounded_polytope(rng, d=2, extra_rows=4):
    """Random bounded polytope: a box plus random cutting halfspaces."""
    half = rng.uniform(0.5, 2.0, size=d)
    A = [np.eye(d), -np.eye(d)]
    b = [half, half]
    for _ in range(extra_rows):
        a = rng.normal(size=d)
        a /= np.linalg.norm(a)
        A.append(a[None, :])
        b.append(np.array([rng.uniform(0.3, 2.0)]))
    return Polytope(np.vstack(A), np.concatenate(b))


# ---------------------------------------------------------------- polytope basics

def test_polytope_requires_unit_rows():
    with pytest.raises(ValueError):
        Polytope(np.array([[2.0, 0.0]]), np.array([1.0]))
    p = Polytope.from_halfspaces(np.array([[2.0, 0.0]]), np.array([4.0]))
    assert np.allclose(p.A, [[1.0, 0.0]])
    assert np.allclose(p.b, [2.0])


def test_contains_examples():
    box = Polytope.box([-1, -1], [1, 1])
    assert contains(box, [0, 0], 0.0)
    assert not contains(box, [1 + 1e-3, 0], 1e-6)
    assert contains(box, [1 + 1e-3, 0], 1e-2)


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=2),
       st.lists(st.floats(-3, 3), min_size=2, max_size=2))
def test_contains_translation_invariant(xl, dl):
    box = Polytope.box([-1, -0.5], [1.5, 1])
    x, delta = np.array(xl), np.array(dl)
    assert contains(box, x, 1e-9) == contains(box.translate(delta), x + delta, 1e-9)


# ---------------------------------------------------------------- QP solver

def test_qp_unconstrained_interior():
    prob = QpProblem(2 * np.eye(2), np.zeros(2), Polytope.box([-1, -1], [1, 1]))
    x = solve_qp(prob)
    assert np.allclose(x, [0, 0], atol=1e-6)


def test_qp_clipped_minimum():
    prob = QpProblem(2 * np.eye(2), np.array([-4.0, 0.0]), Polytope.box([-1, -1], [1, 1]))
    x = solve_qp(prob)
    assert np.allclose(x, [1, 0], atol=1e-6)


def test_qp_matches_active_set_enumeration():
    rng = np.random.default_rng(7)
    for _ in range(25):
        n = 4
        M = rng.normal(size=(n, n))
        H = M @ M.T + 0.1 * np.eye(n)
        g = rng.normal(size=n)
        lower = -rng.uniform(0.2, 1.5, size=n)
        upper = rng.uniform(0.2, 1.5, size=n)
        prob = QpProblem(H, g, Polytope.box(lower, upper))
        x = solve_qp(prob)
        x_ref, val_ref = active_set_qp_oracle(H, g, lower, upper)
        val = 0.5 * x @ H @ x + g @ x
        assert val <= val_ref + 1e-6
        assert np.allclose(x, x_ref, atol=1e-4)


def test_qp_objective_beats_all_vertices():
    rng = np.random.default_rng(3)
    for _ in range(10):
        M = rng.normal(size=(2, 2))
        H = M @ M.T + 0.5 * np.eye(2)
        g = rng.normal(size=2)
        poly = random_bounded_polytope(rng)
        x = solve_qp(QpProblem(H, g, poly))
        obj = lambda v: 0.5 * v @ H @ v + g @ v
        for v in enumerate_vertices(poly).points:
            assert obj(x) <= obj(v) + 1e-6


def test_qp_infeasible_certificate():
    A = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    b = np.array([1.0, -2.0, 1.0, 1.0])  # x <= 1 and x >= 2
    prob = QpProblem(np.eye(2), np.zeros(2), Polytope(A, b))
    with pytest.raises(InfeasibleError):
        solve_qp(prob)


# ---------------------------------------------------------------- linear maximization

def test_maximize_linear_trivial():
    box = Polytope.box([-1, -1], [1, 1])
    x = maximize_linear_over_polytope([1, 0], box)
    assert abs(x[0] - 1) < 1e-8
    cube = Polytope.box([0, 0, 0], [1, 1, 1])
    x = maximize_linear_over_polytope([1, 1, 1], cube)
    assert np.allclose(x, [1, 1, 1], atol=1e-8)


def test_maximize_linear_matches_vertex_bruteforce_3d():
    rng = np.random.default_rng(11)
    for _ in range(10):
        poly = random_bounded_polytope(rng, d=3, extra_rows=3)
        c = rng.normal(size=3)
        x_lp = maximize_linear_over_polytope(c, poly)
        graph = enumerate_vertices(poly)
        best = max(graph.points @ c)
        assert abs(c @ x_lp - best) < 1e-7


def test_hill_climb_agrees_with_lp():
    rng = np.random.default_rng(13)
    for _ in range(20):
        poly = random_bounded_polytope(rng, d=2, extra_rows=5)
        graph = enumerate_vertices(poly)
        c = rng.normal(size=2)
        v = maximize_linear_over_polytope(c, poly, vertices=graph)
        x_lp = maximize_linear_over_polytope(c, poly)
        assert abs(c @ v - c @ x_lp) < 1e-8
        # every start converges to the same value
        for s in range(len(graph.points)):
            assert abs(graph.points[hill_climb_vertex(graph, c, s)] @ c - c @ v) < 1e-10


def test_unbounded_raises():
    halfplane = Polytope(np.array([[1.0, 0.0]]), np.array([1.0]))
    assert not is_bounded(halfplane)
    with pytest.raises(UnboundedError):
        maximize_linear_over_polytope([-1.0, 0.0], halfplane)
    with pytest.raises(UnboundedError):
        smallest_enclosing_ball(halfplane)


# ---------------------------------------------------------------- closest points

def test_closest_points_axis_aligned_gap():
    P = Polytope.box([0, 0], [1, 1])
    V = Polytope.box([2, 0], [3, 1])
    p, v, dist = closest_points(P, V)
    assert abs(dist - 1.0) < 1e-6
    assert abs(p[0] - 1.0) < 1e-5
    assert abs(v[0] - 2.0) < 1e-5


def test_closest_points_overlap():
    P = Polytope.box([0, 0], [1, 1])
    _, _, dist = closest_points(P, P)
    assert dist <= 1e-6


def test_closest_points_symmetry():
    rng = np.random.default_rng(5)
    P = random_bounded_polytope(rng).translate([3.0, 0.5])
    V = random_bounded_polytope(rng)
    p1, v1, d1 = closest_points(P, V)
    v2, p2, d2 = closest_points(V, P)
    assert abs(d1 - d2) < 1e-9 + 1e-6  # solver tolerance on either route
    assert np.linalg.norm(p1 - p2) < 1e-4
    assert np.linalg.norm(v1 - v2) < 1e-4


def test_closest_points_matches_boundary_sampling():
    rng = np.random.default_rng(17)
    for _ in range(5):
        P = random_bounded_polytope(rng).translate(rng.uniform(2.5, 4.0, size=2))
        V = random_bounded_polytope(rng)
        _, _, dist = closest_points(P, V)
        bp = polygon_boundary_points(P)
        bv = polygon_boundary_points(V)
        d2 = np.min(
            np.linalg.norm(bp[:, None, :] - bv[None, :, :], axis=2)
        )
        assert abs(dist - d2) < 2e-3


# ---------------------------------------------------------------- smallest enclosing ball

def test_miniball_unit_square():
    ball = smallest_enclosing_ball(Polytope.box([0, 0], [1, 1]))
    assert np.allclose(ball.center, [0.5, 0.5], atol=1e-9)
    assert abs(ball.radius - np.sqrt(2) / 2) < 1e-9


def test_miniball_degenerate_segment():
    seg = Polytope.box([0.0, -0.0], [2.0, 0.0])
    ball = smallest_enclosing_ball(seg)
    assert np.allclose(ball.center, [1.0, 0.0], atol=1e-8)
    assert abs(ball.radius - 1.0) < 1e-8


def test_miniball_matches_bruteforce():
    rng = np.random.default_rng(23)
    for _ in range(10):
        poly = random_bounded_polytope(rng, extra_rows=5)
        graph = enumerate_vertices(poly)
        ball = smallest_enclosing_ball(poly)
        c_ref, r_ref = miniball_bruteforce(graph.points)
        assert abs(ball.radius - r_ref) < 1e-6
        assert np.all(np.linalg.norm(graph.points - ball.center, axis=1) <= ball.radius + 1e-6)
        bpts = polygon_boundary_points(poly, step=5e-3)
        assert np.all(np.linalg.norm(bpts - ball.center, axis=1) <= ball.radius + 1e-6)


# ---------------------------------------------------------------- misc

def test_chebyshev_center_box():
    c, r = chebyshev_center(Polytope.box([0, 0], [2, 1]))
    assert abs(r - 0.5) < 1e-8
    assert 0.5 - 1e-6 <= c[1] <= 0.5 + 1e-6


@settings(max_examples=25)
@given(st.integers(3, 8), st.floats(0.2, 3.0))
def test_regular_polygon_bounded_and_contains_center(n, radius):
    poly = Polytope.regular_polygon(n, radius)
    assert contains(poly, np.zeros(2), 1e-12)
    graph = enumerate_vertices(poly)
    assert len(graph.points) == n
