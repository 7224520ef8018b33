"""Parametric working surfaces and the penalty contact model between tool and surface."""

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as poly

from tactile.config_schema import SurfaceConfig, SurfaceKind
from tactile.dynamics import RobotState
from tactile.exceptions import SurfaceDomainError

_NO_WRENCH = np.zeros(6)


@dataclass(frozen=True)
class ContactState:
    in_contact: bool
    penetration: float
    normal: np.ndarray
    wrench: np.ndarray = field(default_factory=lambda: _NO_WRENCH.copy())
    on_floor: bool = False
    over_gap: bool = False

    @property
    def normal_force(self) -> float:
        return float(self.wrench[:3] @ self.normal)

    @property
    def tangential_force(self) -> float:
        force = self.wrench[:3]
        return float(np.linalg.norm(force - (force @ self.normal) * self.normal))


class SurfaceModel:
    """Immutable analytic surface z = h(u, v) with an optional contact-loss strip."""

    def __init__(self, config: SurfaceConfig, name: str = "surface"):
        self.config = config
        self.name = name
        self._coefficients = np.asarray(config.coefficients, dtype=float)
        self._coefficients_du = poly.polyder(self._coefficients, axis=0)
        self._coefficients_dv = poly.polyder(self._coefficients, axis=1)
        c = config
        self._gap = (
            -math.inf if c.gap_u_min is None else c.gap_u_min,
            math.inf if c.gap_u_max is None else c.gap_u_max,
            -math.inf if c.gap_v_min is None else c.gap_v_min,
            math.inf if c.gap_v_max is None else c.gap_v_max,
        )

    @property
    def mu(self) -> float:
        return self.config.mu

    def in_workspace(self, u: float, v: float) -> bool:
        u_min, u_max, v_min, v_max = self.config.workspace
        return u_min <= u <= u_max and v_min <= v <= v_max

    def in_gap(self, u: float, v: float) -> bool:
        if not self.config.has_gap:
            return False
        u_min, u_max, v_min, v_max = self._gap
        return u_min <= u <= u_max and v_min <= v <= v_max

    def height_and_gradient(self, u: float, v: float) -> tuple[float, float, float]:
        """Returns h, dh/du, dh/dv without workspace checks."""
        c = self.config
        if c.kind == SurfaceKind.PLANAR:
            return 0.0, 0.0, 0.0
        if c.kind == SurfaceKind.INCLINED:
            return c.incline_grade * u, c.incline_grade, 0.0
        if c.kind == SurfaceKind.CURVED:
            a, w = c.amplitude, c.frequency
            su, cu = math.sin(w * u), math.cos(w * u)
            sv, cv = math.sin(w * v), math.cos(w * v)
            return a * su * cv, a * w * cu * cv, -a * w * su * sv
        return (
            float(poly.polyval2d(u, v, self._coefficients)),
            float(poly.polyval2d(u, v, self._coefficients_du)),
            float(poly.polyval2d(u, v, self._coefficients_dv)),
        )

    def evaluate(self, u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Vectorized h, dh/du, dh/dv over arrays of surface coordinates."""
        c = self.config
        zeros = np.zeros_like(u, dtype=float)
        if c.kind == SurfaceKind.PLANAR:
            return zeros, zeros.copy(), zeros.copy()
        if c.kind == SurfaceKind.INCLINED:
            return c.incline_grade * u, zeros + c.incline_grade, zeros
        if c.kind == SurfaceKind.CURVED:
            a, w = c.amplitude, c.frequency
            su, cu = np.sin(w * u), np.cos(w * u)
            sv, cv = np.sin(w * v), np.cos(w * v)
            return a * su * cv, a * w * cu * cv, -a * w * su * sv
        return (
            poly.polyval2d(u, v, self._coefficients),
            poly.polyval2d(u, v, self._coefficients_du),
            poly.polyval2d(u, v, self._coefficients_dv),
        )

    def normal_at(self, u: float, v: float) -> np.ndarray:
        _, hu, hv = self.height_and_gradient(u, v)
        return _unit_normal(hu, hv)


def _unit_normal(hu: float, hv: float) -> np.ndarray:
    norm = math.sqrt(1.0 + hu * hu + hv * hv)
    return np.array([-hu / norm, -hv / norm, 1.0 / norm])


def surface_eval(surface: SurfaceModel, u: float, v: float) -> tuple[float, np.ndarray]:
    """Returns the height and outward unit normal of the surface at (u, v)."""
    if not surface.in_workspace(u, v):
        raise SurfaceDomainError(f"({u:.4f}, {v:.4f}) is outside the workspace of surface '{surface.name}'")
    h, hu, hv = surface.height_and_gradient(u, v)
    return h, _unit_normal(hu, hv)


def contact_wrench(surface: SurfaceModel, state: RobotState) -> ContactState:
    """Penalty normal force with tanh-regularized Coulomb friction at a single point contact."""
    u, v, z = float(state.x[0]), float(state.x[1]), float(state.x[2])
    over_gap = surface.in_gap(u, v)
    if not surface.in_workspace(u, v):
        return ContactState(False, 0.0, np.array([0.0, 0.0, 1.0]), over_gap=over_gap)

    h, hu, hv = surface.height_and_gradient(u, v)
    normal = _unit_normal(hu, hv)
    on_floor = False
    if over_gap:
        if surface.config.gap_depth is None:
            return ContactState(False, 0.0, normal, over_gap=True)
        h -= surface.config.gap_depth
        on_floor = True

    penetration = (h - z) * normal[2]
    if penetration <= 0.0:
        return ContactState(False, 0.0, normal, over_gap=over_gap)

    c = surface.config
    velocity = state.x_dot[:3]
    normal_velocity = float(velocity @ normal)
    f_n = max(0.0, c.k_n * penetration - c.b_n * normal_velocity)

    tangential = velocity - normal_velocity * normal
    speed = float(np.linalg.norm(tangential))
    force = f_n * normal
    if speed > 0.0 and f_n > 0.0:
        force = force - c.mu * f_n * math.tanh(speed / c.v_reg) * (tangential / speed)

    wrench = np.zeros(6)
    wrench[:3] = force
    return ContactState(True, penetration, normal, wrench, on_floor=on_floor, over_gap=over_gap)
