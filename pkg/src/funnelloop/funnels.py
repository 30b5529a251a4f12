"""Funnels, the funnel library, and empirical calibration.

A funnel is (entrance I, exit X, encompassing shape E): any state entering I
is driven by the tracking controller to X while its workspace projection
stays inside E. Entrance/exit constraints decouple into a cyclic (position)
polytope and a noncyclic (heading) interval, so funnels compose by pure
translation. The library holds 5 base shapes instanced at 16 headings;
bounds are calibrated from disturbed closed-loop rollouts rather than
synthesized.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from funnelloop.convex import Polytope, contains
from funnelloop.dynamics import Trajectory, rollout, wrap_angle


class CalibrationFailure(Exception):
    pass


@dataclass(frozen=True)
class NcBox:
    """Noncyclic interval box; dimensions flagged in `wrap` compare modulo 2*pi."""

    center: np.ndarray
    half: np.ndarray
    wrap: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, float)))
        object.__setattr__(self, "half", np.atleast_1d(np.asarray(self.half, float)))
        object.__setattr__(self, "wrap", np.atleast_1d(np.asarray(self.wrap, bool)))

    def distance(self, v):
        v = np.atleast_1d(np.asarray(v, float))
        diff = v - self.center
        diff = np.where(self.wrap, wrap_angle(diff), diff)
        return np.abs(diff)

    def contains_value(self, v, tol: float = 0.0) -> bool:
        return bool(np.all(self.distance(v) <= self.half + tol))

    def contains_box(self, other: "NcBox", tol: float = 0.0) -> bool:
        """True iff every value in `other` lies in this box."""
        diff = other.center - self.center
        diff = np.where(self.wrap | other.wrap, wrap_angle(diff), diff)
        return bool(np.all(np.abs(diff) + other.half <= self.half + tol))

    def shifted(self, delta) -> "NcBox":
        return NcBox(self.center + np.asarray(delta, float), self.half, self.wrap)

    def to_dict(self):
        return {"center": self.center.tolist(), "half": self.half.tolist(),
                "wrap": self.wrap.astype(int).tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["center"]), np.asarray(d["half"]),
                   np.asarray(d["wrap"], dtype=bool))


@dataclass(frozen=True)
class Funnel:
    """One translatable funnel instance.

    `entrance` is the cyclic polytope relative to its center p_I; `shape` is
    the encompassing polytope in absolute workspace coordinates.
    """

    entrance: Polytope
    p_I: np.ndarray
    entrance_nc: NcBox
    p_X: np.ndarray
    r_X: float
    exit_nc: NcBox
    shape: Polytope
    nominal: Trajectory
    library_id: str
    tube_radius: float = 0.0
    ball_offset: np.ndarray | None = None   # shape's enclosing-ball center - p_I
    ball_radius: float = 0.0
    inner_radius: float = 0.0               # inscribed-ball radius at that center

    def __post_init__(self):
        object.__setattr__(self, "p_I", np.asarray(self.p_I, float))
        object.__setattr__(self, "p_X", np.asarray(self.p_X, float))
        if self.ball_offset is None:
            from funnelloop.convex import smallest_enclosing_ball

            ball = smallest_enclosing_ball(self.shape)
            object.__setattr__(self, "ball_offset", ball.center - self.p_I)
            object.__setattr__(self, "ball_radius", float(ball.radius))
            object.__setattr__(self, "inner_radius",
                               float(np.min(self.shape.b - self.shape.A @ ball.center)))
        else:
            object.__setattr__(self, "ball_offset", np.asarray(self.ball_offset, float))

    @property
    def duration(self) -> int:
        return self.nominal.horizon

    @property
    def turn_angle(self) -> float:
        return float(wrap_angle(self.exit_nc.center[0] - self.entrance_nc.center[0]))

    @property
    def path_length(self) -> float:
        steps = np.diff(self.nominal.positions, axis=0)
        return float(np.sum(np.linalg.norm(steps, axis=1)))

    def translate(self, delta) -> "Funnel":
        delta = np.asarray(delta, float)
        return Funnel(self.entrance, self.p_I + delta, self.entrance_nc,
                      self.p_X + delta, self.r_X, self.exit_nc,
                      self.shape.translate(delta), self.nominal.translate(delta),
                      self.library_id, self.tube_radius,
                      self.ball_offset, self.ball_radius, self.inner_radius)

    def rotate(self, angle: float) -> "Funnel":
        """Rotate about the workspace origin (library construction only)."""
        c, s = np.cos(angle), np.sin(angle)
        rot = np.array([[c, -s], [s, c]])
        return Funnel(
            Polytope(self.entrance.A @ rot.T, self.entrance.b),
            rot @ self.p_I,
            self.entrance_nc.shifted([angle]),
            rot @ self.p_X,
            self.r_X,
            self.exit_nc.shifted([angle]),
            self.shape.rotate(angle),
            self.nominal.rotate(angle),
            self.library_id,
            self.tube_radius,
            rot @ self.ball_offset,
            self.ball_radius,
            self.inner_radius,
        )

    def entrance_contains(self, p, tol: float = 0.0) -> bool:
        return contains(self.entrance, np.asarray(p, float) - self.p_I, tol)

    def to_dict(self):
        T = self.nominal.horizon
        nominal = []
        for t in range(T + 1):
            rec = {"t": t, "x": self.nominal.states[t].tolist()}
            rec["u"] = self.nominal.inputs[t].tolist() if t < T else None
            nominal.append(rec)
        return {
            "id": self.library_id,
            "A_I": self.entrance.A.tolist(),
            "b_I": self.entrance.b.tolist(),
            "p_I": self.p_I.tolist(),
            "I_nc": self.entrance_nc.to_dict(),
            "p_X": self.p_X.tolist(),
            "r_X": self.r_X,
            "X_nc": self.exit_nc.to_dict(),
            "A_E": self.shape.A.tolist(),
            "b_E": self.shape.b.tolist(),
            "tube_radius": self.tube_radius,
            "dt": self.nominal.dt,
            "nominal": nominal,
        }

    @classmethod
    def from_dict(cls, d):
        recs = d["nominal"]
        states = np.array([r["x"] for r in recs])
        inputs = np.array([r["u"] for r in recs if r["u"] is not None])
        return cls(
            Polytope(np.asarray(d["A_I"]), np.asarray(d["b_I"])),
            np.asarray(d["p_I"]),
            NcBox.from_dict(d["I_nc"]),
            np.asarray(d["p_X"]),
            float(d["r_X"]),
            NcBox.from_dict(d["X_nc"]),
            Polytope(np.asarray(d["A_E"]), np.asarray(d["b_E"])),
            Trajectory(states, inputs, float(d["dt"])),
            d["id"],
            float(d.get("tube_radius", 0.0)),
        )


def composable(f_i: Funnel, f_j: Funnel, tol: float = 1e-9) -> bool:
    """True iff the exit of f_i fits inside the entrance of f_j:
    noncyclic box inclusion plus the cyclic inequality with the r_X margin."""
    if not f_j.entrance_nc.contains_box(f_i.exit_nc, tol):
        return False
    lhs = f_j.entrance.A @ (f_i.p_X - f_j.p_I)
    return bool(np.all(lhs <= f_j.entrance.b - f_i.r_X + tol))


@dataclass(frozen=True)
class FunnelConfig:
    """Template geometry and calibration settings for the bicycle library.

    Arc templates turn by exact multiples of the 22.5 deg heading grid and
    end with a straight settling tail; template curvature stays well inside
    the 1.1 1/m input bound so the controller keeps authority on both sides
    (a reference at the saturation limit is not stabilizable from a wide
    entrance).
    """

    speed: float = 0.5
    dt: float = 0.01
    straight_epochs: int = 300            # 1.5 m
    arc1_curvature: float = 0.55
    arc1_epochs: int = 286                # 45 deg turn
    arc2_curvature: float = 0.7
    arc2_epochs: int = 449                # 90 deg turn
    tail_epochs: int = 150                # 0.75 m settling tail after each arc
    headings: int = 16
    entrance_radius: float = 0.11
    entrance_facets: int = 8
    entrance_heading_half: float = 0.35
    exit_safety: float = 1.2
    trials: int = 200
    tube_cap: float = 0.5
    exit_cap: float = 0.105
    shape_facets: int = 12
    shape_pad: float = 0.02
    disturbance_pos: float = 0.0003       # per-step position bound (16-gon radius)
    disturbance_heading: float = 0.0004   # per-step heading bound

    def disturbance_polytope(self) -> Polytope:
        """Per-step disturbance set: regular 16-gon in position x heading interval.

        The 16-gon is invariant under the 22.5 deg library rotations, which is
        what makes rotation instancing of calibrated funnels exact.
        """
        ang = 2 * np.pi * np.arange(16) / 16
        A = np.zeros((18, 3))
        A[:16, 0] = np.cos(ang)
        A[:16, 1] = np.sin(ang)
        A[16, 2] = 1.0
        A[17, 2] = -1.0
        b = np.concatenate([np.full(16, self.disturbance_pos),
                            [self.disturbance_heading, self.disturbance_heading]])
        return Polytope(A, b)


@dataclass
class FunnelLibrary:
    entries: list
    clearance: float = 0.0           # swept tube half-width for local planning
    disturbance: Polytope | None = None
    config: FunnelConfig | None = None

    def __len__(self):
        return len(self.entries)

    def by_id(self, library_id: str) -> Funnel:
        for f in self.entries:
            if f.library_id == library_id:
                return f
        raise KeyError(library_id)

    def save(self, path):
        data = {
            "version": 1,
            "clearance": self.clearance,
            "disturbance": None if self.disturbance is None else
                {"A": self.disturbance.A.tolist(), "b": self.disturbance.b.tolist()},
            "funnels": [f.to_dict() for f in self.entries],
        }
        with open(path, "w") as f:
            json.dump(data, f)

    @classmethod
    def load(cls, path) -> "FunnelLibrary":
        with open(path) as f:
            data = json.load(f)
        if data.get("version") != 1:
            raise ValueError(f"unsupported funnel library version {data.get('version')}")
        dist = data.get("disturbance")
        return cls(
            [Funnel.from_dict(d) for d in data["funnels"]],
            clearance=float(data.get("clearance", 0.0)),
            disturbance=None if dist is None else Polytope(np.asarray(dist["A"]),
                                                           np.asarray(dist["b"])),
        )


def base_nominals(model, config: FunnelConfig):
    """The 5 base reference trajectories at canonical heading 0."""
    v = config.speed

    def arc_with_tail(kappa, arc_epochs):
        inputs = [[v, kappa]] * arc_epochs + [[v, 0.0]] * config.tail_epochs
        return rollout(model, [0, 0, 0], np.array(inputs))

    return {
        "S": rollout(model, [0, 0, 0], np.tile([v, 0.0], (config.straight_epochs, 1))),
        "L1": arc_with_tail(config.arc1_curvature, config.arc1_epochs),
        "R1": arc_with_tail(-config.arc1_curvature, config.arc1_epochs),
        "L2": arc_with_tail(config.arc2_curvature, config.arc2_epochs),
        "R2": arc_with_tail(-config.arc2_curvature, config.arc2_epochs),
    }


def sample_polytope(poly: Polytope, count: int, rng) -> np.ndarray:
    """Uniform rejection sampling from a bounded polytope's bounding box."""
    from funnelloop.convex import enumerate_vertices

    verts = enumerate_vertices(poly).points
    lo, hi = verts.min(axis=0), verts.max(axis=0)
    out = []
    while len(out) < count:
        cand = rng.uniform(lo, hi, size=(max(count, 16), poly.dim))
        ok = np.all(cand @ poly.A.T <= poly.b + 1e-12, axis=1)
        out.extend(cand[ok])
    return np.array(out[:count])


def _initial_errors(entrance: Polytope, nc_half: float, trials: int, rng):
    """Initial error samples covering the design entrance set: polygon boundary
    corners crossed with heading extremes, plus random interior points."""
    from funnelloop.convex import enumerate_vertices

    verts = enumerate_vertices(entrance).points
    mids = 0.5 * (verts + np.roll(verts, 1, axis=0))
    boundary = np.vstack([verts, mids])
    thetas = np.array([-nc_half, 0.0, nc_half])
    combos = [np.concatenate([p, [th]]) for p in boundary for th in thetas]
    combos.append(np.zeros(3))
    n_random = max(trials - len(combos), 0)
    if n_random:
        pos = sample_polytope(entrance, n_random, rng)
        ths = rng.uniform(-nc_half, nc_half, size=(n_random, 1))
        combos.extend(np.hstack([pos, ths]))
    return np.array(combos)


def _disturbance_regimes(W: Polytope, n_err: int, epochs: int, rng):
    """Disturbance sequences crossing every initial error with several
    regimes: quiet, uniform-random, random vertex switching, and held
    vertices (the held extremes are what drive the worst-case drift)."""
    from funnelloop.convex import enumerate_vertices

    verts = enumerate_vertices(W).points
    n = W.dim
    regimes = 6
    seqs = np.zeros((n_err, regimes, epochs, n))
    flat = sample_polytope(W, n_err * epochs, rng)
    seqs[:, 1] = flat.reshape(n_err, epochs, n)
    idx = rng.integers(0, len(verts), size=(n_err, epochs))
    seqs[:, 2] = verts[idx]
    for j in range(3):
        vidx = (np.arange(n_err) * 3 + j * 7 + rng.integers(0, len(verts))) % len(verts)
        seqs[:, 3 + j] = verts[vidx][:, None, :]
    return seqs.reshape(n_err * regimes, epochs, n), regimes


def calibrate_template(model, controller, nominal: Trajectory, config: FunnelConfig,
                       disturbance: Polytope, rng, library_id: str,
                       entrance: Polytope | None = None,
                       nc_half: float | None = None) -> Funnel:
    """Monte-Carlo calibration of one funnel template.

    Runs disturbed closed-loop rollouts from initial errors covering the
    design entrance; the encompassing shape, exit radius and noncyclic exit
    box are set from the observed extremes with a safety factor.
    """
    if config.trials < 16:
        raise ValueError("too few trials for calibration")
    entrance = entrance if entrance is not None else Polytope.regular_polygon(
        config.entrance_facets, config.entrance_radius)
    nc_half = config.entrance_heading_half if nc_half is None else nc_half

    T = nominal.horizon
    errs = _initial_errors(entrance, nc_half, config.trials, rng)
    ws, regimes = _disturbance_regimes(disturbance, len(errs), T, rng)
    errs = np.repeat(errs, regimes, axis=0)
    n_tr = len(errs)

    x = nominal.state(0) + errs
    max_dev = np.zeros(n_tr)
    for t in range(T):
        x_r, u_r = nominal.state(t), nominal.input(t)
        x_rp = nominal.state(t - 1) if t > 0 else None
        u = controller.compute(x, x_r, u_r, x_rp)
        x = model.step(x, u, ws[:, t])
        dev = np.linalg.norm(x[:, :2] - nominal.state(t + 1)[:2], axis=1)
        max_dev = np.maximum(max_dev, dev)

    term_pos = np.linalg.norm(x[:, :2] - nominal.state(T)[:2], axis=1)
    term_th = np.abs(wrap_angle(x[:, 2] - nominal.state(T)[2]))

    worst_dev = float(max_dev.max())
    worst_term = float(term_pos.max())
    if worst_dev > config.tube_cap:
        raise CalibrationFailure(
            f"{library_id}: rollout left the candidate tube ({worst_dev:.3f} m)")
    if worst_term * config.exit_safety > config.exit_cap:
        raise CalibrationFailure(
            f"{library_id}: terminal error too large ({worst_term:.3f} m)")

    r_x = worst_term * config.exit_safety
    exit_nc = NcBox([nominal.state(T)[2]],
                    [max(float(term_th.max()) * config.exit_safety, 1e-4)], [True])
    entrance_nc = NcBox([nominal.state(0)[2]], [nc_half], [True])

    tube = worst_dev * config.exit_safety + config.shape_pad
    ang = 2 * np.pi * np.arange(config.shape_facets) / config.shape_facets
    dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    support = (nominal.positions @ dirs.T).max(axis=0)
    shape = Polytope(dirs, support + tube)

    return Funnel(entrance, nominal.state(0)[:2], entrance_nc,
                  nominal.state(T)[:2], r_x, exit_nc, shape, nominal,
                  library_id, tube_radius=tube)


def build_library(model, controller, config: FunnelConfig | None = None,
                  seed: int = 0) -> FunnelLibrary:
    """Calibrate the 5 base shapes and instance them at 16 headings."""
    config = config or FunnelConfig()
    rng = np.random.default_rng(seed)
    W = config.disturbance_polytope()
    entries = []
    clearance = 0.0
    for name, nominal in base_nominals(model, config).items():
        base = calibrate_template(model, controller, nominal, config, W, rng, name)
        clearance = max(clearance, base.tube_radius)
        for k in range(config.headings):
            angle = 2 * np.pi * k / config.headings
            inst = base.rotate(angle) if k else base
            entries.append(Funnel(inst.entrance, inst.p_I, inst.entrance_nc,
                                  inst.p_X, inst.r_X, inst.exit_nc, inst.shape,
                                  inst.nominal, f"{name}@{k}", inst.tube_radius))
    return FunnelLibrary(entries, clearance=clearance, disturbance=W, config=config)
