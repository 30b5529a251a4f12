"""Adversarial forward reachability along a reference trajectory.

Worst-case disturbance sequences are synthesized by first-order differential
dynamic programming: forward-simulate the error, backward-propagate the
objective gradient through the closed-loop Jacobians, then push each step's
disturbance to the polytope vertex that maximizes the local linear model.
The returned value is always re-simulated, so it is attained by an explicit
feasible sequence (a falsification engine, not an over-approximation).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from funnelloop.convex import (
    Polytope,
    QpProblem,
    VertexGraph,
    enumerate_vertices,
    solve_qp,
)
from funnelloop.dynamics import wrap_angle
from funnelloop.funnels import Funnel
from funnelloop.world import Corridor


class NoncyclicViolationError(Exception):
    """The funnel entrance is unreachable in the noncyclic coordinates."""


@dataclass(frozen=True)
class DisturbanceModel:
    """Bounded disturbance polytope with precomputed vertices and adjacency."""

    polytope: Polytope
    vertices: np.ndarray
    graph: VertexGraph = None

    @classmethod
    def from_polytope(cls, poly: Polytope) -> "DisturbanceModel":
        graph = enumerate_vertices(poly)
        if np.any(poly.A @ np.zeros(poly.dim) > poly.b + 1e-12):
            raise ValueError("disturbance set must contain zero")
        return cls(poly, graph.points, graph)

    @property
    def dim(self) -> int:
        return self.polytope.dim

    def support_argmax(self, g):
        """Vertex maximizing g.w for each gradient in g (..., n)."""
        scores = np.asarray(g) @ self.vertices.T
        idx = np.argmax(scores, axis=-1)
        return self.vertices[idx], np.max(scores, axis=-1)


@dataclass(frozen=True)
class FrsQuery:
    """Maximize direction.e(tau) + offset over admissible disturbances."""

    direction: np.ndarray
    tau: int
    e0: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "direction", np.asarray(self.direction, float))
        object.__setattr__(self, "e0", np.asarray(self.e0, float))
        if self.tau < 1:
            raise ValueError("tau must be at least 1")


@dataclass
class FrsResult:
    worst_values: dict
    b_frs: np.ndarray
    collision_safe: bool
    worst_disturbance: np.ndarray


def _forward_batch(ed, e0, w):
    """Roll the error dynamics for every query; w is (B, tau, n)."""
    B, tau, n = w.shape
    traj = np.empty((B, tau + 1, n))
    traj[:, 0] = e0
    for t in range(tau):
        traj[:, t + 1] = ed.error_step(t, traj[:, t], w[:, t])
    return traj


def _backward_batch(ed, traj, dirs, tau):
    """Gradients of dirs.e(tau) w.r.t. each w(t): (B, tau, n).

    g(tau-1) is the objective gradient itself; stepping down,
    g(t-1) = J(t, e(t))^T g(t) by the chain rule.
    """
    B, n = dirs.shape
    G = np.empty((B, tau, n))
    G[:, tau - 1] = dirs
    g = dirs
    for t in range(tau - 1, 0, -1):
        J = ed.jacobian(t, traj[:, t])
        g = np.einsum("bij,bi->bj", J, g)
        G[:, t - 1] = g
    return G


def _ddp_batch(ed, W: DisturbanceModel, dirs, offs, tau, e0,
               iters: int = 10, alpha: float = 0.0, improve_tol: float = 1e-9):
    """Run first-order adversarial DDP for a batch of linear objectives
    sharing one horizon. Returns (best values, best sequences, best finals)."""
    dirs = np.atleast_2d(np.asarray(dirs, float))
    offs = np.atleast_1d(np.asarray(offs, float))
    B, n = dirs.shape
    w = np.zeros((B, tau, n))
    best_val = np.full(B, -np.inf)
    best_w = w.copy()
    best_final = np.zeros((B, n))
    for it in range(iters):
        traj = _forward_batch(ed, e0, w)
        val = np.einsum("bi,bi->b", dirs, traj[:, tau]) + offs
        improved = val > best_val + improve_tol
        best_w[improved] = w[improved]
        best_final[improved] = traj[improved, tau]
        best_val = np.maximum(best_val, val)
        if it > 0 and not np.any(improved):
            break
        G = _backward_batch(ed, traj, dirs, tau)
        if alpha == 0.0:
            w, _ = W.support_argmax(G)
        else:
            w = _proximal_update(W, G, w, alpha)
    return best_val, best_w, best_final


def _proximal_update(W: DisturbanceModel, G, w_cur, alpha):
    """argmax g.w - alpha*|w - w_cur|^2 over W, one small QP per step."""
    B, tau, n = G.shape
    out = np.empty_like(w_cur)
    for b in range(B):
        for t in range(tau):
            H = 2 * alpha * np.eye(n)
            g_qp = -(G[b, t] + 2 * alpha * w_cur[b, t])
            out[b, t] = solve_qp(QpProblem(H, g_qp, W.polytope),
                                 warm_start=w_cur[b, t])
    return out


def worst_case(ed, W: DisturbanceModel, query: FrsQuery,
               iters: int = 10, alpha: float = 0.0):
    """Best adversarial value found for one query; (value, disturbance seq)."""
    vals, seqs, _ = _ddp_batch(ed, W, query.direction[None, :],
                               np.array([query.offset]), query.tau, query.e0,
                               iters=iters, alpha=alpha)
    return float(vals[0]), seqs[0]


def _lift(direction_c, n, d):
    out = np.zeros(n)
    out[:d] = direction_c
    return out


def terminal_supports(ed, W: DisturbanceModel, directions, e0=None,
                      iters: int = 10):
    """Worst-case support of the terminal cyclic error along each direction,
    plus the worst heading deviations; shared by the composability check and
    the loop-search root construction."""
    n = ed.reference.states.shape[1]
    d = ed.cyclic_dim
    e0 = np.zeros(n) if e0 is None else np.asarray(e0, float)
    directions = np.atleast_2d(np.asarray(directions, float))
    K = directions.shape[0]
    dirs = np.vstack([
        np.stack([_lift(c, n, d) for c in directions]),
        [_lift_theta(n, d, +1.0)],
        [_lift_theta(n, d, -1.0)],
    ])
    vals, seqs, finals = _ddp_batch(ed, W, dirs, np.zeros(K + 2), ed.T, e0,
                                    iters=iters)
    supports = vals[:K]
    th_hi, th_lo = vals[K], -vals[K + 1]
    worst_idx = int(np.argmax(supports))
    return supports, (th_lo, th_hi), seqs[worst_idx]


def _lift_theta(n, d, sign):
    out = np.zeros(n)
    out[d] = sign
    return out


def entrance_margin(funnel: Funnel, supports, x_rT_c):
    """Translatable margin vector for the funnel entrance: per facet,
    b_FRS_i = b_i - support_i - a_i . (end - p_I); the closure constraint is
    -A_I dp <= b_FRS (containment of the worst-case set in the translated
    entrance)."""
    A, b = funnel.entrance.A, funnel.entrance.b
    return b - supports - A @ (np.asarray(x_rT_c) - funnel.p_I)


def check_composability(ed, W: DisturbanceModel, funnel: Funnel, e0=None,
                        corridor: Corridor | None = None,
                        iters: int = 10) -> FrsResult:
    """Worst-case check that the reference's terminal reachable set fits the
    funnel entrance; returns the per-facet translatable margin b_FRS."""
    n = ed.reference.states.shape[1]
    d = ed.cyclic_dim
    x_rT = ed.reference.state(ed.T)
    supports, (th_lo, th_hi), worst_seq = terminal_supports(
        ed, W, funnel.entrance.A, e0=e0, iters=iters)

    # noncyclic: both faces of the heading interval, wrapped to the branch
    # nearest the reference's final heading
    c = x_rT[d] + wrap_angle(funnel.entrance_nc.center[0] - x_rT[d])
    half = funnel.entrance_nc.half[0]
    val_up = (x_rT[d] + th_hi) - (c + half)
    val_dn = (c - half) - (x_rT[d] + th_lo)
    worst_values = {"noncyclic_upper": float(val_up), "noncyclic_lower": float(val_dn)}
    for i, v in enumerate(supports):
        worst_values[f"cyclic_facet_{i}"] = float(v)
    if val_up > 0 or val_dn > 0:
        raise NoncyclicViolationError(
            f"entrance heading box unreachable (upper {val_up:.4f}, lower {val_dn:.4f})")

    b_frs = entrance_margin(funnel, supports, x_rT[:d])
    safe = True
    if corridor is not None:
        safe = check_collision(ed, W, corridor, e0=e0, iters=iters)
    return FrsResult(worst_values, b_frs, safe, worst_seq)


def _transition_products(ed, traj, T):
    """Phi(t,0) for t=0..T along a rollout, plus inverses."""
    n = traj.shape[-1]
    P = np.empty((T + 1, n, n))
    P[0] = np.eye(n)
    for t in range(T):
        J = ed.jacobian(t, traj[0, t])
        P[t + 1] = J @ P[t]
    Q = np.linalg.inv(P)
    return P, Q


def check_collision(ed, W: DisturbanceModel, corridor: Corridor, e0=None,
                    iters: int = 10, refine_margin: float = 0.05,
                    refine_top: int = 3) -> bool:
    """Worst-case collision check of the tracked reference against every
    corridor facet at every epoch.

    A single linearization around the undisturbed rollout scores all
    (facet, epoch) pairs at once (exact for linear closed loops); pairs close
    to the bound are re-verified with the full DDP iteration, and a collision
    is reported only when an explicit disturbance sequence actually attains a
    violation.
    """
    n = ed.reference.states.shape[1]
    d = ed.cyclic_dim
    T = ed.T
    e0 = np.zeros(n) if e0 is None else np.asarray(e0, float)
    A, b = corridor.polytope.A, corridor.polytope.b

    traj = _forward_batch(ed, e0, np.zeros((1, T, n)))
    ref_c = ed.reference.states[:, :d]
    nominal_vals = (ref_c + traj[0, :, :d]) @ A.T - b[None, :]   # (T+1, K)

    P, Q = _transition_products(ed, traj, T)
    # sup[tau, t] is the support of the gradient for w(t-1) under horizon tau;
    # the estimate for horizon tau accumulates t in [1, tau]
    taus = np.arange(T + 1)[:, None]
    ts = np.arange(T + 1)[None, :]
    mask = (ts >= 1) & (ts <= taus)
    estimates = nominal_vals.copy()
    for k in range(A.shape[0]):
        dvec = _lift(A[k], n, d)
        s = np.einsum("tji,j->ti", P, dvec)          # Phi(t,0)^T d
        g = np.einsum("tji,Tj->Tti", Q, s)           # g[tau, t] = Q(t)^T s(tau)
        _, sup = W.support_argmax(g)                 # (T+1, T+1) supports
        estimates[:, k] += np.where(mask, sup, 0.0).sum(axis=1)
    if nominal_vals.max() > 0:
        return False  # the undisturbed rollout itself leaves the corridor

    # refine candidates near or above the bound with the full iteration
    order = np.argsort(estimates, axis=None)[::-1]
    refined = 0
    for flat in order:
        tau, k = np.unravel_index(flat, estimates.shape)
        if tau == 0:
            continue
        if estimates[tau, k] <= -refine_margin or refined >= refine_top * A.shape[0]:
            break
        query = FrsQuery(_lift(A[k], n, d), int(tau), e0,
                         offset=float(ref_c[tau] @ A[k] - b[k]))
        val, _ = worst_case(ed, W, query, iters=iters)
        refined += 1
        if val > 0:
            return False
    return True


def envelope(ed, W: DisturbanceModel, e0=None, directions: int = 8,
             stride: int = 5):
    """Per-epoch worst-case cyclic extents (linearized scores) for plotting
    and the UI stream: list of {t, extents: K values} with the direction set."""
    n = ed.reference.states.shape[1]
    d = ed.cyclic_dim
    T = ed.T
    e0 = np.zeros(n) if e0 is None else np.asarray(e0, float)
    ang = 2 * np.pi * np.arange(directions) / directions
    dirs_c = np.stack([np.cos(ang), np.sin(ang)], axis=1)

    traj = _forward_batch(ed, e0, np.zeros((1, T, n)))
    P, Q = _transition_products(ed, traj, T)
    out = []
    taus = np.arange(T + 1)[:, None]
    ts = np.arange(T + 1)[None, :]
    mask = (ts >= 1) & (ts <= taus)
    sup_cum = np.zeros((T + 1, directions))
    for k in range(directions):
        dvec = _lift(dirs_c[k], n, d)
        s = np.einsum("tji,j->ti", P, dvec)
        g = np.einsum("tji,Tj->Tti", Q, s)
        _, sup = W.support_argmax(g)
        sup_cum[:, k] = np.where(mask, sup, 0.0).sum(axis=1)
    nominal_c = traj[0, :, :d]
    for t in range(0, T + 1, stride):
        extents = dirs_c @ nominal_c[t] + sup_cum[t]
        out.append({"t": int(t), "extents": extents.tolist()})
    return {"directions": dirs_c.tolist(), "rings": out}
