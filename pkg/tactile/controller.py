"""Unified force-impedance control with a virtual energy tank and valve."""

import logging
from dataclasses import dataclass, replace

import numpy as np

from tactile.config_schema import ControllerConfig, TankConfig, TankMode
from tactile.dynamics import RobotState
from tactile.exceptions import ContractViolation, DomainError, ScheduleExhausted
from tactile.power import PowerTrace


def _diagonal_psd(matrix: np.ndarray, name: str) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=float)
    if matrix.shape != (6, 6):
        raise ContractViolation(f"{name} must be 6x6")
    if np.any(matrix - np.diag(np.diag(matrix))) or np.any(np.diag(matrix) < 0):
        raise ContractViolation(f"{name} must be diagonal positive-semidefinite")
    return matrix


@dataclass(frozen=True)
class ControllerGains:
    K_C: np.ndarray
    D_C_ctrl: np.ndarray
    K_p: np.ndarray
    K_i: np.ndarray
    f_integral_limit: float

    def __post_init__(self) -> None:
        for name in ("K_C", "D_C_ctrl", "K_p", "K_i"):
            object.__setattr__(self, name, _diagonal_psd(getattr(self, name), name))
        if self.f_integral_limit <= 0:
            raise ContractViolation("f_integral_limit must be positive")

    @classmethod
    def from_config(cls, config: ControllerConfig) -> "ControllerGains":
        return cls(
            K_C=np.diag(config.stiffness),
            D_C_ctrl=np.diag(config.damping),
            K_p=np.diag(config.force_p_gain),
            K_i=np.diag(config.force_i_gain),
            f_integral_limit=config.integral_limit,
        )


@dataclass(frozen=True)
class EnergySchedule:
    """Predicted tank power per control step, with its plan expressed over tangential arclength."""

    power: np.ndarray
    dt: float
    arclength: np.ndarray
    cumulative: np.ndarray

    def __len__(self) -> int:
        return int(self.power.shape[0])

    @classmethod
    def from_trace(cls, trace: PowerTrace, x_dot_d: np.ndarray | None = None) -> "EnergySchedule":
        power = np.asarray(trace.power, dtype=float)
        dt = trace.dt if len(trace) > 1 else 1e-3
        step_energy = np.maximum(power, 0.0) * dt
        cumulative = np.concatenate([[0.0], np.cumsum(step_energy)])
        if x_dot_d is None:
            arclength = np.arange(len(power) + 1, dtype=float)
        else:
            speeds = np.linalg.norm(x_dot_d[: len(power), :2], axis=1)
            arclength = np.concatenate([[0.0], np.cumsum(speeds * dt)])
        return cls(power, dt, arclength, cumulative)

    def energy_at(self, s: float) -> float:
        return float(np.interp(s, self.arclength, self.cumulative))


@dataclass(frozen=True)
class TankState:
    energy: float
    epsilon: float
    epsilon_on: float
    max_energy: float
    sigma: int
    mode: TankMode
    schedule: EnergySchedule | None = None
    parameterization: str = "time"
    injection_gain: float = 1.0
    step: int = 0
    arclength: float = 0.0
    stopped: bool = False
    last_injected: float = 0.0
    last_consumed: float = 0.0
    last_clamped: float = 0.0

    @property
    def rearm_level(self) -> float:
        return min(self.epsilon_on, self.max_energy)

    def stop(self) -> "TankState":
        """Latches the valve shut after a controlled stop."""
        return replace(self, sigma=0, stopped=True, last_injected=0.0, last_consumed=0.0, last_clamped=0.0)


def make_tank(mode: TankMode, config: TankConfig, schedule: EnergySchedule | None = None) -> TankState:
    """Builds the initial tank for scalar (low/high budget) or scheduled injection."""
    if mode == TankMode.SCHEDULED:
        if schedule is None:
            raise ContractViolation("scheduled mode requires an energy schedule")
        initial = config.epsilon + config.scheduled_headroom
        max_energy = config.max_energy or config.epsilon + 2.0 * config.scheduled_headroom
    else:
        initial = config.low_energy if mode == TankMode.SCALAR_LOW else config.high_energy
        max_energy = config.max_energy or 2.0 * initial
    initial = min(initial, max_energy)
    return TankState(
        energy=initial,
        epsilon=config.epsilon,
        epsilon_on=config.rearm_threshold,
        max_energy=max_energy,
        sigma=1 if initial >= config.epsilon else 0,
        mode=mode,
        schedule=schedule if mode == TankMode.SCHEDULED else None,
        parameterization=config.parameterization,
        injection_gain=config.injection_gain,
    )


def impedance_wrench(state: RobotState, x_d: np.ndarray, gains: ControllerGains) -> np.ndarray:
    """Compliance law f_i = -K_C (x - x_d) - D_C x'."""
    return -gains.K_C @ (state.x - x_d) - gains.D_C_ctrl @ state.x_dot


def force_wrench(
    f_ext_ee: np.ndarray,
    f_d_ee: np.ndarray,
    integral: np.ndarray,
    R_ee_to_base: np.ndarray,  # noqa: N803
    gains: ControllerGains,
    dt: float,
) -> tuple[np.ndarray, np.ndarray]:
    """PI force law with feed-forward, evaluated in the tool frame and rotated to the base frame.

    `f_ext_ee` is the sensed wrench the tool exerts on the environment. The error is
    f_d - f_ext so that missing contact force makes the tool push harder.
    """
    if dt <= 0:
        raise ContractViolation(f"dt must be positive, got {dt}")
    error = f_d_ee - f_ext_ee
    limit = gains.f_integral_limit
    new_integral = np.clip(integral + error * dt, -limit, limit)
    local = f_d_ee + gains.K_p @ error + gains.K_i @ new_integral
    f_f = np.empty(6)
    f_f[:3] = R_ee_to_base @ local[:3]
    f_f[3:] = R_ee_to_base @ local[3:]
    return f_f, new_integral


def control_wrench(f_i: np.ndarray, f_f: np.ndarray, sigma: int, f_g: np.ndarray) -> np.ndarray:
    """f_robot = sigma (f_i + f_f) + f_g."""
    if sigma == 0:
        return np.array(f_g, dtype=float)
    if sigma != 1:
        raise ContractViolation(f"valve state must be 0 or 1, got {sigma}")
    return f_i + f_f + f_g


def tank_step(tank: TankState, x_dot: np.ndarray, f_cntr: np.ndarray, dt: float) -> TankState:
    """Advances the tank by one control step: scheduled injection, drain by x'^T f_cntr, valve update.

    Raises ScheduleExhausted when a scheduled tank runs past the end of its plan.
    """
    if dt <= 0:
        raise ContractViolation(f"dt must be positive, got {dt}")

    injected = 0.0
    arclength = tank.arclength
    if tank.mode == TankMode.SCHEDULED and not tank.stopped:
        schedule = tank.schedule
        if schedule is None or tank.step >= len(schedule):
            raise ScheduleExhausted(tank.step, 0 if schedule is None else len(schedule))
        if tank.parameterization == "arclength":
            arclength = tank.arclength + float(np.hypot(x_dot[0], x_dot[1])) * dt
            injected = tank.injection_gain * (schedule.energy_at(arclength) - schedule.energy_at(tank.arclength))
        else:
            injected = tank.injection_gain * max(0.0, float(schedule.power[tank.step])) * dt

    filled = tank.energy + injected
    clamped = min(filled, tank.max_energy) - filled
    filled += clamped

    consumed = float(x_dot @ f_cntr)
    drained = filled - consumed * dt
    energy = min(max(drained, 0.0), tank.max_energy)
    clamped += energy - drained

    if tank.stopped or energy < tank.epsilon:
        sigma = 0
    elif energy >= tank.rearm_level:
        sigma = 1
    else:
        sigma = tank.sigma

    return replace(
        tank,
        energy=energy,
        sigma=sigma,
        step=tank.step + 1,
        arclength=arclength,
        last_injected=injected,
        last_consumed=consumed,
        last_clamped=clamped,
    )


def task_energy(trace: PowerTrace, epsilon: float) -> float:
    """Energy a skill needs: trapezoidal integral of the logged consumption plus the residual epsilon."""
    if len(trace) == 0:
        raise DomainError("task energy is undefined for an empty trace")
    energy = epsilon + trace.total_energy()
    logging.debug(f"Task energy {energy:.6f} J over {len(trace)} steps")
    return energy
