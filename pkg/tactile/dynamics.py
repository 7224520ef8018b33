"""Cartesian rigid-body dynamics of the end-effector with constant apparent inertia."""

from dataclasses import dataclass

import numpy as np

from tactile.config_schema import DynamicsConfig
from tactile.exceptions import ContractViolation, SimulationFault


@dataclass(frozen=True)
class RobotBody:
    """Constant Cartesian inertia M_C, damping D_C and gravity wrench f_g."""

    inertia: np.ndarray
    damping: np.ndarray
    gravity: np.ndarray
    inertia_inv: np.ndarray

    @classmethod
    def create(cls, inertia: np.ndarray, damping: np.ndarray, gravity: np.ndarray) -> "RobotBody":
        inertia = np.asarray(inertia, dtype=float)
        damping = np.asarray(damping, dtype=float)
        gravity = np.asarray(gravity, dtype=float)
        if inertia.shape != (6, 6) or damping.shape != (6, 6) or gravity.shape != (6,):
            raise ContractViolation("inertia and damping must be 6x6, gravity a 6-vector")
        if not np.allclose(inertia, inertia.T) or np.linalg.eigvalsh(inertia).min() <= 0:
            raise ContractViolation("Cartesian inertia must be symmetric positive definite")
        if np.linalg.eigvalsh(0.5 * (damping + damping.T)).min() < -1e-12:
            raise ContractViolation("Cartesian damping must be positive semidefinite")
        return cls(inertia, damping, gravity, np.linalg.inv(inertia))

    @classmethod
    def from_config(cls, config: DynamicsConfig) -> "RobotBody":
        return cls.create(np.diag(config.inertia), np.diag(config.damping), np.array(config.gravity_wrench))


@dataclass(frozen=True)
class RobotState:
    x: np.ndarray
    x_dot: np.ndarray
    body: RobotBody

    @classmethod
    def at_rest(cls, pose: np.ndarray, body: RobotBody) -> "RobotState":
        return cls(np.array(pose, dtype=float), np.zeros(6), body)

    @property
    def M_C(self) -> np.ndarray:  # noqa: N802
        return self.body.inertia

    @property
    def D_C(self) -> np.ndarray:  # noqa: N802
        return self.body.damping

    @property
    def f_g(self) -> np.ndarray:
        return self.body.gravity


def step_dynamics(state: RobotState, f_robot: np.ndarray, f_ext: np.ndarray, dt: float) -> RobotState:
    """Semi-implicit Euler step of M_C x'' + D_C x' + f_g = f_robot + f_ext (C_C vanishes for constant M_C)."""
    if dt <= 0:
        raise ContractViolation(f"dt must be positive, got {dt}")
    body = state.body
    acceleration = body.inertia_inv @ (f_robot + f_ext - body.damping @ state.x_dot - body.gravity)
    if not np.all(np.isfinite(acceleration)):
        raise SimulationFault(
            "Non-finite acceleration in Cartesian dynamics",
            payload={
                "x": state.x.tolist(),
                "x_dot": state.x_dot.tolist(),
                "f_robot": np.asarray(f_robot).tolist(),
                "f_ext": np.asarray(f_ext).tolist(),
            },
        )
    x_dot = state.x_dot + acceleration * dt
    return RobotState(state.x + x_dot * dt, x_dot, body)


def kinetic_energy(state: RobotState) -> float:
    """E_robot = 1/2 x'^T M_C x'."""
    return 0.5 * float(state.x_dot @ state.body.inertia @ state.x_dot)
