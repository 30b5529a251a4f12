"""Funnel-loop motion planning: robust receding-horizon planning without braking.

The planner keeps the end of every local trajectory inside a loop of
sequentially composed funnels, so the vehicle always has a collision-free
holding pattern even when replanning fails.
"""

from funnelloop.convex import Ball, Polytope, QpProblem, solve_qp
from funnelloop.dynamics import BicycleModel, TrackingController, Trajectory

__all__ = [
    "Ball",
    "Polytope",
    "QpProblem",
    "solve_qp",
    "BicycleModel",
    "TrackingController",
    "Trajectory",
]
