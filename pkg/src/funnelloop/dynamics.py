"""Discrete-time vehicle models, the tracking controller, and closed-loop
error dynamics with Jacobians.

All models are translation-invariant in their cyclic coordinates (workspace
position), which is what lets funnels be instanced by pure translation.
State/batch conventions: every operation accepts arrays with arbitrary
leading batch dimensions, state in the trailing axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class EpochOutOfRangeError(Exception):
    pass


def wrap_angle(a):
    """Wrap to [-pi, pi)."""
    return np.mod(np.asarray(a) + np.pi, 2 * np.pi) - np.pi


@dataclass(frozen=True)
class BicycleModel:
    """Kinematic bicycle: state (p_x, p_y, theta), input (speed v, curvature kappa)."""

    dt: float = 0.01
    u_min: np.ndarray = field(default_factory=lambda: np.array([0.0, -1.1]))
    u_max: np.ndarray = field(default_factory=lambda: np.array([1.0, 1.1]))

    n: int = 3
    m: int = 2
    d: int = 2  # cyclic dims: position

    def step(self, x, u, w=None):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        v, kappa = u[..., 0], u[..., 1]
        theta = x[..., 2]
        out = np.empty_like(x)
        out[..., 0] = x[..., 0] + v * np.cos(theta) * self.dt
        out[..., 1] = x[..., 1] + v * np.sin(theta) * self.dt
        out[..., 2] = theta + v * kappa * self.dt
        if w is not None:
            out = out + np.asarray(w, dtype=float)
        return out

    def inverse_step(self, x, u):
        """Undo one noiseless Euler step driven by input u."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        v, kappa = u[..., 0], u[..., 1]
        theta_prev = x[..., 2] - v * kappa * self.dt
        out = np.empty_like(x)
        out[..., 0] = x[..., 0] - v * np.cos(theta_prev) * self.dt
        out[..., 1] = x[..., 1] - v * np.sin(theta_prev) * self.dt
        out[..., 2] = theta_prev
        return out

    def step_jacobians(self, x, u):
        """d step / d x and d step / d u (batched: (..., 3, 3) and (..., 3, 2))."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        v, kappa = u[..., 0], u[..., 1]
        theta = x[..., 2]
        batch = np.broadcast(theta, v).shape
        Fx = np.zeros(batch + (3, 3))
        Fx[..., 0, 0] = 1.0
        Fx[..., 1, 1] = 1.0
        Fx[..., 2, 2] = 1.0
        Fx[..., 0, 2] = -v * np.sin(theta) * self.dt
        Fx[..., 1, 2] = v * np.cos(theta) * self.dt
        Fu = np.zeros(batch + (3, 2))
        Fu[..., 0, 0] = np.cos(theta) * self.dt
        Fu[..., 1, 0] = np.sin(theta) * self.dt
        Fu[..., 2, 0] = kappa * self.dt
        Fu[..., 2, 1] = v * self.dt
        return Fx, Fu


@dataclass(frozen=True)
class PlanarQuadrotor:
    """Planar quadrotor: state (x, y, theta, vx, vy, omega), input (thrust f, torque tau).

    Constants chosen for the reachability demo only; not safety-critical.
    """

    dt: float = 0.01
    mass: float = 0.5
    inertia: float = 0.01
    gravity: float = 9.81
    u_min: np.ndarray = field(default_factory=lambda: np.array([0.0, -0.5]))
    u_max: np.ndarray = field(default_factory=lambda: np.array([15.0, 0.5]))

    n: int = 6
    m: int = 2
    d: int = 2

    def step(self, x, u, w=None):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        f, tau = u[..., 0], u[..., 1]
        theta = x[..., 2]
        ax = -(f / self.mass) * np.sin(theta)
        ay = (f / self.mass) * np.cos(theta) - self.gravity
        alpha = tau / self.inertia
        out = np.empty_like(x)
        out[..., 0] = x[..., 0] + x[..., 3] * self.dt
        out[..., 1] = x[..., 1] + x[..., 4] * self.dt
        out[..., 2] = theta + x[..., 5] * self.dt
        out[..., 3] = x[..., 3] + ax * self.dt
        out[..., 4] = x[..., 4] + ay * self.dt
        out[..., 5] = x[..., 5] + alpha * self.dt
        if w is not None:
            out = out + np.asarray(w, dtype=float)
        return out


@dataclass(frozen=True)
class Trajectory:
    """Reference trajectory: states x_r(0..T), inputs u_r(0..T-1), fixed step dt."""

    states: np.ndarray
    inputs: np.ndarray
    dt: float

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        inputs = np.asarray(self.inputs, dtype=float)
        if states.shape[0] != inputs.shape[0] + 1:
            raise ValueError("need exactly one more state than inputs")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "inputs", inputs)

    @property
    def horizon(self) -> int:
        return self.inputs.shape[0]

    @property
    def positions(self) -> np.ndarray:
        return self.states[:, :2]

    def state(self, t: int) -> np.ndarray:
        return self.states[t]

    def input(self, t: int) -> np.ndarray:
        return self.inputs[min(t, self.horizon - 1)]

    def translate(self, delta) -> "Trajectory":
        delta = np.asarray(delta, dtype=float)
        states = self.states.copy()
        states[:, : delta.size] += delta
        return Trajectory(states, self.inputs, self.dt)

    def rotate(self, angle: float) -> "Trajectory":
        c, s = np.cos(angle), np.sin(angle)
        rot = np.array([[c, -s], [s, c]])
        states = self.states.copy()
        states[:, :2] = states[:, :2] @ rot.T
        states[:, 2] += angle
        return Trajectory(states, self.inputs, self.dt)


def rollout(model, x0, inputs, dt=None) -> Trajectory:
    """Noiseless rollout of an input sequence; the result is model-feasible."""
    x = np.asarray(x0, dtype=float)
    states = [x]
    for u in inputs:
        x = model.step(x, u)
        states.append(x)
    return Trajectory(np.array(states), np.asarray(inputs, dtype=float), model.dt)


@dataclass(frozen=True)
class TrackingController:
    """Saturated PD set-point controller for the bicycle model.

    Errors are expressed in the reference frame: forward and leftward
    displacement plus heading deviation. The derivative term is a one-step
    backward difference where the previous pose is reconstructed by stepping
    the model backwards under the reference input, which keeps the control
    law memoryless (exact for constant-input reference segments).
    """

    model: BicycleModel
    kp: np.ndarray = field(
        default_factory=lambda: np.array([[1.2, 0.0, 0.0], [0.0, 6.5, 0.4]])
    )
    kd: np.ndarray = field(
        default_factory=lambda: np.array([[0.15, 0.0, 0.0], [0.0, 3.0, 0.0]])
    )

    def features(self, x, x_ref):
        """(forward, leftward, heading) displacement of x measured from x_ref."""
        x = np.asarray(x, dtype=float)
        x_ref = np.asarray(x_ref, dtype=float)
        dx = x[..., 0] - x_ref[..., 0]
        dy = x[..., 1] - x_ref[..., 1]
        th = x_ref[..., 2]
        c, s = np.cos(th), np.sin(th)
        out = np.empty(np.broadcast(dx, th).shape + (3,))
        out[..., 0] = c * dx + s * dy
        out[..., 1] = -s * dx + c * dy
        out[..., 2] = wrap_angle(x[..., 2] - x_ref[..., 2])
        return out

    def compute(self, x, x_ref, u_ref, x_ref_prev=None):
        """Saturated PD command. x_ref_prev=None disables the derivative term."""
        feat = self.features(x, x_ref)
        if x_ref_prev is None:
            rate = np.zeros_like(feat)
        else:
            x_prev = self.model.inverse_step(x, u_ref)
            rate = (feat - self.features(x_prev, x_ref_prev)) / self.model.dt
        raw = (
            np.asarray(u_ref, dtype=float)
            - np.einsum("ij,...j->...i", self.kp, feat)
            - np.einsum("ij,...j->...i", self.kd, rate)
        )
        return np.clip(raw, self.model.u_min, self.model.u_max)

    def command_jacobian(self, x, x_ref, u_ref, x_ref_prev=None):
        """d command / d x, with saturation zeroing saturated rows. (..., 2, 3)."""
        x = np.asarray(x, dtype=float)
        th_r = np.asarray(x_ref, dtype=float)[..., 2]
        batch = x.shape[:-1]
        dfeat = np.zeros(batch + (3, 3))
        c, s = np.cos(th_r), np.sin(th_r)
        dfeat[..., 0, 0] = c
        dfeat[..., 0, 1] = s
        dfeat[..., 1, 0] = -s
        dfeat[..., 1, 1] = c
        dfeat[..., 2, 2] = 1.0

        if x_ref_prev is None:
            drate = np.zeros_like(dfeat)
        else:
            u_ref = np.asarray(u_ref, dtype=float)
            v, kappa = u_ref[..., 0], u_ref[..., 1]
            x_prev = self.model.inverse_step(x, u_ref)
            th_prev = x_prev[..., 2]
            th_rp = np.asarray(x_ref_prev, dtype=float)[..., 2]
            # d x_prev / d x for the inverse Euler step
            dprev = np.zeros(batch + (3, 3))
            dprev[..., 0, 0] = 1.0
            dprev[..., 1, 1] = 1.0
            dprev[..., 2, 2] = 1.0
            dprev[..., 0, 2] = v * np.sin(th_prev) * self.model.dt
            dprev[..., 1, 2] = -v * np.cos(th_prev) * self.model.dt
            dfeat_prev = np.zeros(batch + (3, 3))
            cp, sp = np.cos(th_rp), np.sin(th_rp)
            dfeat_prev[..., 0, 0] = cp
            dfeat_prev[..., 0, 1] = sp
            dfeat_prev[..., 1, 0] = -sp
            dfeat_prev[..., 1, 1] = cp
            dfeat_prev[..., 2, 2] = 1.0
            drate = (dfeat - dfeat_prev @ dprev) / self.model.dt

        raw = (
            np.asarray(u_ref, dtype=float)
            - np.einsum("ij,...j->...i", self.kp, self.features(x, x_ref))
        )
        if x_ref_prev is not None:
            x_prev = self.model.inverse_step(x, np.asarray(u_ref, dtype=float))
            rate = (
                self.features(x, x_ref) - self.features(x_prev, x_ref_prev)
            ) / self.model.dt
            raw = raw - np.einsum("ij,...j->...i", self.kd, rate)
        unsat = (raw > self.model.u_min + 1e-12) & (raw < self.model.u_max - 1e-12)

        jac = -(
            np.einsum("ij,...jk->...ik", self.kp, dfeat)
            + np.einsum("ij,...jk->...ik", self.kd, drate)
        )
        return jac * unsat[..., :, None]


@dataclass(frozen=True)
class QuadrotorHoverController:
    """Linear saturated state feedback around a quadrotor reference (demo use)."""

    model: PlanarQuadrotor
    gains: np.ndarray = field(
        default_factory=lambda: np.array(
            [
                [0.0, 8.0, 0.0, 0.0, 5.0, 0.0],
                [0.08, 0.0, 0.6, 0.12, 0.0, 0.08],
            ]
        )
    )

    def compute(self, x, x_ref, u_ref, x_ref_prev=None):
        err = np.asarray(x, dtype=float) - np.asarray(x_ref, dtype=float)
        raw = np.asarray(u_ref, dtype=float) - np.einsum("ij,...j->...i", self.gains, err)
        return np.clip(raw, self.model.u_min, self.model.u_max)


class TrackingErrorDynamics:
    """Time-varying closed-loop error dynamics around a reference trajectory.

    The error state is e(t) = x(t) - x_r(t) for every epoch, i.e. the next
    reference sample is subtracted after stepping the true state.
    """

    def __init__(self, model, controller, reference: Trajectory):
        self.model = model
        self.controller = controller
        self.reference = reference
        self.T = reference.horizon
        self.cyclic_dim = model.d

    def _refs(self, t):
        x_r = self.reference.state(t)
        u_r = self.reference.input(t)
        x_rp = self.reference.state(t - 1) if t > 0 else None
        return x_r, u_r, x_rp

    def error_step(self, t: int, e, w=None):
        if not 0 <= t < self.T:
            raise EpochOutOfRangeError(f"epoch {t} outside horizon {self.T}")
        x_r, u_r, x_rp = self._refs(t)
        x = x_r + np.asarray(e, dtype=float)
        u = self.controller.compute(x, x_r, u_r, x_rp)
        x_next = self.model.step(x, u)
        out = x_next - self.reference.state(t + 1)
        if w is not None:
            out = out + np.asarray(w, dtype=float)
        return out

    def jacobian(self, t: int, e, fd_step: float = 1e-5, analytic: bool = True):
        """d error_step / d e. Analytic chain rule when the model provides
        Jacobians, otherwise central finite differences with step fd_step."""
        if not 0 <= t < self.T:
            raise EpochOutOfRangeError(f"epoch {t} outside horizon {self.T}")
        if analytic and hasattr(self.model, "step_jacobians") and hasattr(
            self.controller, "command_jacobian"
        ):
            x_r, u_r, x_rp = self._refs(t)
            x = x_r + np.asarray(e, dtype=float)
            u = self.controller.compute(x, x_r, u_r, x_rp)
            Fx, Fu = self.model.step_jacobians(x, u)
            Ku = self.controller.command_jacobian(x, x_r, u_r, x_rp)
            return Fx + Fu @ Ku
        return self._fd_jacobian(t, e, fd_step)

    def _fd_jacobian(self, t: int, e, h: float):
        e = np.asarray(e, dtype=float)
        n = e.shape[-1]
        cols = []
        for i in range(n):
            dv = np.zeros(n)
            dv[i] = h
            cols.append((self.error_step(t, e + dv) - self.error_step(t, e - dv)) / (2 * h))
        return np.stack(cols, axis=-1)


class LinearErrorDynamics:
    """e(t+1) = A e(t) + w(t); used for exactness tests and LTI baselines."""

    def __init__(self, A: np.ndarray, horizon: int, cyclic_dim: int | None = None):
        self.A = np.asarray(A, dtype=float)
        self.T = horizon
        self.cyclic_dim = self.A.shape[0] if cyclic_dim is None else cyclic_dim
        n = self.A.shape[0]
        self.reference = Trajectory(
            np.zeros((horizon + 1, n)), np.zeros((horizon, n)), 1.0
        )

    def error_step(self, t: int, e, w=None):
        if not 0 <= t < self.T:
            raise EpochOutOfRangeError(f"epoch {t} outside horizon {self.T}")
        out = np.einsum("ij,...j->...i", self.A, np.asarray(e, dtype=float))
        if w is not None:
            out = out + np.asarray(w, dtype=float)
        return out

    def jacobian(self, t: int, e, **_):
        e = np.asarray(e, dtype=float)
        return np.broadcast_to(self.A, e.shape[:-1] + self.A.shape).copy()
