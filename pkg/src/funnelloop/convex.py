"""Convex geometry primitives and the small dense QP/LP backend.

Everything here operates on halfspace polytopes {x | A x <= b} with
unit-norm rows. Problems are tiny (dimension <= ~dozens), so the solver is
an operator-splitting (ADMM) iteration with an active-set polish step, and
vertex enumeration is done by brute-force facet intersection.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

FEAS_TOL = 1e-6
ROW_NORM_TOL = 1e-9


class SolverError(Exception):
    pass


class InfeasibleError(SolverError):
    """The constraint set is (certified) empty."""


class UnboundedError(SolverError):
    """The objective is unbounded over the feasible set."""


class MaxIterationsError(SolverError):
    """The iteration budget ran out before reaching tolerance."""


@dataclass(frozen=True)
class Polytope:
    """Halfspace set {x | A x <= b} with unit-normalized rows."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if A.shape[0] != b.shape[0]:
            raise ValueError("row counts of A and b differ")
        if A.shape[0] < 1:
            raise ValueError("polytope needs at least one row")
        norms = np.linalg.norm(A, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-7):
            raise ValueError("rows of A must be unit vectors; use from_halfspaces")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @classmethod
    def from_halfspaces(cls, A, b) -> "Polytope":
        """Build a polytope, normalizing each row of (A, b) to unit norm."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        norms = np.linalg.norm(A, axis=1)
        if np.any(norms < 1e-12):
            raise ValueError("zero row in A")
        return cls(A / norms[:, None], b / norms)

    @classmethod
    def box(cls, lower, upper) -> "Polytope":
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        d = lower.size
        eye = np.eye(d)
        return cls(np.vstack([eye, -eye]), np.concatenate([upper, -lower]))

    @classmethod
    def regular_polygon(cls, n: int, radius: float, center=None, phase: float = 0.0) -> "Polytope":
        """Regular n-gon in 2D given by support value `radius` in n directions."""
        ang = phase + 2 * np.pi * np.arange(n) / n
        A = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        b = np.full(n, float(radius))
        if center is not None:
            b = b + A @ np.asarray(center, dtype=float)
        return cls(A, b)

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @property
    def nrows(self) -> int:
        return self.A.shape[0]

    def translate(self, delta) -> "Polytope":
        delta = np.asarray(delta, dtype=float)
        return Polytope(self.A, self.b + self.A @ delta)

    def rotate(self, angle: float) -> "Polytope":
        """Rotate the set about the origin (2D only)."""
        c, s = np.cos(angle), np.sin(angle)
        rot = np.array([[c, -s], [s, c]])
        return Polytope(self.A @ rot.T, self.b)

    def intersect(self, other: "Polytope") -> "Polytope":
        return Polytope(np.vstack([self.A, other.A]), np.concatenate([self.b, other.b]))


def contains(poly: Polytope, x, tol: float = 0.0) -> bool:
    """True iff A x <= b + tol componentwise."""
    x = np.asarray(x, dtype=float)
    return bool(np.all(poly.A @ x <= poly.b + tol))


@dataclass(frozen=True)
class Ball:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.radius < 0:
            raise ValueError("radius must be nonnegative")


@dataclass(frozen=True)
class QpProblem:
    """minimize 0.5 x^T H x + g^T x  subject to  constraint.A x <= constraint.b."""

    H: np.ndarray
    g: np.ndarray
    constraint: Polytope

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        g = np.asarray(self.g, dtype=float)
        if np.max(np.abs(H - H.T)) > 1e-9:
            raise ValueError("H must be symmetric")
        if np.min(np.linalg.eigvalsh(H)) < -1e-8:
            raise ValueError("H must be positive semidefinite")
        if H.shape[0] != self.constraint.dim or g.shape[0] != H.shape[0]:
            raise ValueError("dimension mismatch")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "g", g)

    @property
    def dimension(self) -> int:
        return self.H.shape[0]


def _polish(H, g, A, b, x, y, eps=FEAS_TOL):
    """Active-set refinement of an ADMM iterate.

    Solves the equality-constrained KKT system for the guessed active set and
    accepts the result only if it satisfies the full KKT conditions
    (stationarity, primal/dual feasibility, complementary slackness).
    """
    act = np.flatnonzero((b - A @ x < 1e-5) | (y > 1e-5))
    n = H.shape[0]
    k = act.size
    if k == 0:
        try:
            xp = np.linalg.solve(H + 1e-12 * np.eye(n), -g)
        except np.linalg.LinAlgError:
            return None
        nu = np.zeros(0)
        act = np.zeros(0, dtype=int)
    else:
        kkt = np.zeros((n + k, n + k))
        kkt[:n, :n] = H
        kkt[:n, n:] = A[act].T
        kkt[n:, :n] = A[act]
        rhs = np.concatenate([-g, b[act]])
        sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
        xp, nu = sol[:n], sol[n:]
    yp = np.zeros(A.shape[0])
    if k:
        yp[act] = nu
    if (np.max(A @ xp - b, initial=0.0) > eps
            or np.any(yp < -eps)
            or np.max(np.abs(H @ xp + g + A.T @ yp)) > eps):
        return None
    yp = np.maximum(yp, 0.0)
    return xp, yp


def solve_qp(problem: QpProblem, warm_start=None, max_iter: int = 20000, eps: float = FEAS_TOL):
    """Solve a small dense QP by operator splitting with an active-set polish.

    Returns x with constraint violation and KKT stationarity residual <= eps.
    Raises InfeasibleError when a primal infeasibility certificate is found,
    MaxIterationsError when the budget runs out.
    """
    H, g = problem.H, problem.g
    A, b = problem.constraint.A, problem.constraint.b
    n, m = H.shape[0], A.shape[0]
    rho, sigma, relax = 2.0, 1e-6, 1.6

    x = np.zeros(n) if warm_start is None else np.asarray(warm_start, dtype=float).copy()
    z = A @ x
    y = np.zeros(m)

    M = H + sigma * np.eye(n) + rho * (A.T @ A)
    try:
        chol = np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise SolverError("ADMM system matrix not positive definite")

    def kkt_ok(xc, yc):
        pri = np.max(A @ xc - b, initial=0.0)
        sta = np.max(np.abs(H @ xc + g + A.T @ yc))
        comp = np.max(yc * np.maximum(b - A @ xc, 0.0), initial=0.0)
        return pri <= eps and sta <= eps and comp <= eps * (1.0 + np.max(yc, initial=0.0))

    y_prev = y.copy()
    for it in range(1, max_iter + 1):
        rhs = sigma * x - g + A.T @ (rho * z - y)
        xt = np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))
        zt = A @ xt
        x = relax * xt + (1 - relax) * x
        z_relaxed = relax * zt + (1 - relax) * z
        z = np.minimum(z_relaxed + y / rho, b)
        y = y + rho * (z_relaxed - z)

        if it % 25 == 0:
            polished = _polish(H, g, A, b, x, y)
            if polished is not None and kkt_ok(*polished):
                return polished[0]
            if kkt_ok(x, y):
                return x
            # primal infeasibility certificate: delta-y with A^T dy ~ 0, b^T dy < 0
            dy = y - y_prev
            ndy = np.linalg.norm(dy, np.inf)
            if ndy > 1e-10:
                if (np.linalg.norm(A.T @ dy, np.inf) <= 1e-6 * ndy
                        and b @ dy < -1e-6 * ndy and np.min(dy) >= -1e-6 * ndy):
                    raise InfeasibleError("primal infeasibility certificate found")
            y_prev = y.copy()
            if not np.all(np.isfinite(x)):
                raise SolverError("ADMM iterates diverged")

    polished = _polish(H, g, A, b, x, y)
    if polished is not None and kkt_ok(*polished):
        return polished[0]
    raise MaxIterationsError(f"no convergence in {max_iter} iterations")


@dataclass
class VertexGraph:
    """Vertices of a bounded polytope plus facet-sharing adjacency."""

    points: np.ndarray                       # (nv, d)
    neighbors: list = field(default_factory=list)   # list of sorted index lists


def enumerate_vertices(poly: Polytope, tol: float = 1e-7) -> VertexGraph:
    """Brute-force vertex enumeration by intersecting d-subsets of facets.

    Intended for small fixed sets (disturbance polytopes, funnel shapes);
    cost grows combinatorially with the facet count.
    """
    A, b, d = poly.A, poly.b, poly.dim
    pts = []
    for rows in itertools.combinations(range(poly.nrows), d):
        sub = A[list(rows)]
        if abs(np.linalg.det(sub)) < 1e-10:
            continue
        v = np.linalg.solve(sub, b[list(rows)])
        if np.all(A @ v <= b + tol):
            pts.append(v)
    if not pts:
        raise InfeasibleError("polytope has no vertices (empty or degenerate)")
    uniq = []
    for p in pts:
        if not any(np.linalg.norm(p - q) < 1e-8 for q in uniq):
            uniq.append(p)
    points = np.array(uniq)
    active = [set(np.flatnonzero(np.abs(A @ p - b) <= 10 * tol)) for p in points]
    neighbors = [[] for _ in points]
    for i in range(len(points)):
        for j in range(i + 1, len(points)):
            if len(active[i] & active[j]) >= d - 1:
                neighbors[i].append(j)
                neighbors[j].append(i)
    return VertexGraph(points, neighbors)


def is_bounded(poly: Polytope) -> bool:
    """Recession-cone test: bounded iff {x | A x <= 0} = {0}."""
    for i in range(poly.dim):
        for sign in (1.0, -1.0):
            c = np.zeros(poly.dim)
            c[i] = -sign  # linprog minimizes
            res = linprog(c, A_ub=poly.A, b_ub=np.zeros(poly.nrows),
                          bounds=[(-1, 1)] * poly.dim, method="highs")
            if res.status == 0 and -res.fun > 1e-9:
                return False
    return True


def maximize_linear_over_polytope(c, poly: Polytope, vertices: VertexGraph | None = None):
    """argmax of c^T x over the polytope.

    With a precomputed VertexGraph the maximizer is found by hill-climbing on
    the vertex adjacency graph (no spurious local maxima by convexity);
    otherwise the problem is solved as an LP.
    """
    c = np.asarray(c, dtype=float)
    if vertices is not None:
        return vertices.points[hill_climb_vertex(vertices, c)]
    res = linprog(-c, A_ub=poly.A, b_ub=poly.b, bounds=[(None, None)] * poly.dim,
                  method="highs")
    if res.status == 3:
        raise UnboundedError("objective unbounded over polytope")
    if res.status == 2:
        raise InfeasibleError("empty polytope")
    if res.status != 0:
        raise SolverError(f"LP failed: {res.message}")
    return res.x


def hill_climb_vertex(graph: VertexGraph, c, start: int = 0) -> int:
    """Walk the vertex graph uphill on c^T v; returns the index of a maximizer."""
    vals = graph.points @ np.asarray(c, dtype=float)
    cur = start
    while True:
        nbrs = graph.neighbors[cur]
        if not nbrs:
            return int(np.argmax(vals))
        best = max(nbrs, key=lambda j: vals[j])
        if vals[best] > vals[cur] + 1e-12:
            cur = best
        else:
            return cur


def polygon_vertices(poly: Polytope) -> np.ndarray:
    """Ordered vertices of a 2D polytope whose facets are all supporting
    (true for support polytopes and boxes): adjacent facet intersections
    taken in angular order. O(n) versus the combinatorial enumeration."""
    ang = np.arctan2(poly.A[:, 1], poly.A[:, 0])
    order = np.argsort(ang)
    A, b = poly.A[order], poly.b[order]
    n = len(order)
    pts = []
    for i in range(n):
        j = (i + 1) % n
        M = np.stack([A[i], A[j]])
        det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
        if abs(det) < 1e-12:
            continue
        pts.append(np.linalg.solve(M, [b[i], b[j]]))
    return np.array(pts)


def closest_points_vertices(va: np.ndarray, vb: np.ndarray):
    """Exact closest pair between two convex polygons given as vertex arrays
    (any order). Overlap gives distance 0 with a shared witness point."""
    va = np.atleast_2d(va)
    vb = np.atleast_2d(vb)

    def order_ccw(v):
        c = v.mean(axis=0)
        return v[np.argsort(np.arctan2(v[:, 1] - c[1], v[:, 0] - c[0]))]

    va, vb = order_ccw(va), order_ccw(vb)

    def separated(u, w):
        n = len(u)
        for i in range(n):
            e = u[(i + 1) % n] - u[i]
            if e @ e < 1e-24:
                continue
            axis = np.array([-e[1], e[0]])
            pu, pw = u @ axis, w @ axis
            if pu.max() < pw.min() - 1e-12 or pw.max() < pu.min() - 1e-12:
                return True
        return False

    if not (separated(va, vb) or separated(vb, va)):
        witness = 0.5 * (va.mean(axis=0) + vb.mean(axis=0))
        return witness, witness, 0.0

    def point_segments(points, verts):
        """Closest (point index, foot, distance) over all point/edge pairs."""
        a = verts
        b = np.roll(verts, -1, axis=0)
        ab = b - a                                     # (m, 2)
        denom = np.maximum(np.sum(ab * ab, axis=1), 1e-30)
        ap = points[:, None, :] - a[None, :, :]        # (k, m, 2)
        t = np.clip(np.sum(ap * ab[None, :, :], axis=2) / denom, 0.0, 1.0)
        foot = a[None, :, :] + t[..., None] * ab[None, :, :]
        d = np.linalg.norm(points[:, None, :] - foot, axis=2)
        idx = np.unravel_index(np.argmin(d), d.shape)
        return idx[0], foot[idx], d[idx]

    ia, foot_b, d1 = point_segments(va, vb)
    ib, foot_a, d2 = point_segments(vb, va)
    if d1 <= d2:
        return va[ia], foot_b, float(d1)
    return foot_a, vb[ib], float(d2)


def closest_points(P: Polytope, V: Polytope):
    """Closest pair between two bounded polytopes via the 2d-variable QP.

    Returns (p, v, distance). Overlapping sets give distance ~0 with an
    arbitrary common point; callers treat distance < 1e-6 as collision.
    """
    d = P.dim
    if V.dim != d:
        raise ValueError("dimension mismatch")
    eye = np.eye(d)
    H = 2.0 * np.block([[eye, -eye], [-eye, eye]])
    A = np.zeros((P.nrows + V.nrows, 2 * d))
    A[: P.nrows, :d] = P.A
    A[P.nrows :, d:] = V.A
    b = np.concatenate([P.b, V.b])
    prob = QpProblem(H, np.zeros(2 * d), Polytope(A, b))
    z = solve_qp(prob)
    p, v = z[:d], z[d:]
    return p, v, float(np.linalg.norm(p - v))


def _circumsphere(points: np.ndarray):
    """Smallest sphere with the given affinely independent points on its boundary."""
    p0 = points[0]
    rest = points[1:] - p0
    if rest.shape[0] == 0:
        return p0.copy(), 0.0
    # solve for center in the affine hull: 2 (p_i - p0) . (c - p0) = |p_i - p0|^2
    rhs = 0.5 * np.sum(rest * rest, axis=1)
    gram = rest @ rest.T
    try:
        lam = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError:
        return None
    center = p0 + rest.T @ lam
    return center, float(np.linalg.norm(points[0] - center))


def _miniball_points(points: np.ndarray, tol: float = 1e-9) -> Ball:
    """Welzl's algorithm (iterative move-to-front) over a finite point set."""

    def ball_of(support):
        if not support:
            return np.zeros(points.shape[1]), -1.0
        out = _circumsphere(np.array(support))
        if out is None:
            return np.zeros(points.shape[1]), -1.0
        return out

    def welzl(pts, support):
        if len(pts) == 0 or len(support) == points.shape[1] + 1:
            return ball_of(support)
        p = pts[0]
        c, r = welzl(pts[1:], support)
        if r >= 0 and np.linalg.norm(p - c) <= r + tol:
            return c, r
        return welzl(pts[1:], support + [p])

    pts = [points[i] for i in range(points.shape[0])]
    c, r = welzl(pts, [])
    return Ball(c, max(r, 0.0))


def smallest_enclosing_ball(poly: Polytope) -> Ball:
    """Smallest ball covering the polytope (computed over its vertex set)."""
    if not is_bounded(poly):
        raise UnboundedError("cannot enclose an unbounded polytope")
    graph = enumerate_vertices(poly)
    return _miniball_points(graph.points)


def chebyshev_center(poly: Polytope):
    """Center and radius of the largest inscribed ball; radius < 0 means empty."""
    d = poly.dim
    c = np.zeros(d + 1)
    c[-1] = -1.0
    A = np.hstack([poly.A, np.ones((poly.nrows, 1))])
    res = linprog(c, A_ub=A, b_ub=poly.b, bounds=[(None, None)] * d + [(None, None)],
                  method="highs")
    if res.status == 2:
        raise InfeasibleError("empty polytope")
    if res.status != 0:
        raise SolverError(f"Chebyshev LP failed: {res.message}")
    return res.x[:d], float(res.x[-1])
