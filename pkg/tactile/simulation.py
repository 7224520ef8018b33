"""Closed-loop simulation of the tool on a surface under force-impedance control with an energy tank."""

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.spatial.transform import Rotation

from tactile.config_schema import ControllerConfig, ExperimentConfig, TankMode
from tactile.controller import (
    ControllerGains,
    EnergySchedule,
    TankState,
    control_wrench,
    force_wrench,
    impedance_wrench,
    make_tank,
    tank_step,
)
from tactile.dynamics import RobotBody, RobotState, kinetic_energy, step_dynamics
from tactile.exceptions import ContractViolation, ScheduleExhausted, SimulationFault
from tactile.power import PowerTrace
from tactile.skills import SkillProfile
from tactile.surface import SurfaceModel, contact_wrench

_AXES = range(6)


@dataclass(frozen=True)
class SimulationTrace:
    """Per-step log of one closed-loop run. Row k holds the state before step k and what was applied during it."""

    t: np.ndarray
    x: np.ndarray
    x_dot: np.ndarray
    x_d: np.ndarray
    f_robot: np.ndarray
    f_ext: np.ndarray
    f_cntr: np.ndarray
    e_robot: np.ndarray
    e_tank: np.ndarray
    sigma: np.ndarray
    injected: np.ndarray
    consumed: np.ndarray
    clamped: np.ndarray
    normal_force: np.ndarray
    in_contact: np.ndarray
    on_floor: np.ndarray
    over_gap: np.ndarray
    initial_tank_energy: float
    skill_steps: int
    dt: float
    f_g: np.ndarray

    def __len__(self) -> int:
        return int(self.t.shape[0])

    def power_trace(self, skill_only: bool = True) -> PowerTrace:
        """Tank drain x'^T (sigma f_cntr) per step, the ground-truth power label."""
        n = self.skill_steps if skill_only else len(self)
        return PowerTrace(self.t[:n].copy(), self.consumed[:n].copy())

    def bookkeeping_residual(self) -> float:
        """E(0) + injections - drain + clamp corrections - E(t_final); zero up to rounding."""
        if len(self) == 0:
            return 0.0
        balance = (
            self.initial_tank_energy
            + float(np.sum(self.injected))
            - float(np.sum(self.consumed)) * self.dt
            + float(np.sum(self.clamped))
        )
        return balance - float(self.e_tank[-1])

    def power_balance_residual(self, damping: np.ndarray) -> np.ndarray:
        """dE_robot/dt - x'^T (f_cntr + f_ext - D_C x') per step, first order in dt."""
        if len(self) < 2:
            return np.zeros(0)
        rate = np.diff(self.e_robot) / self.dt
        x_dot = self.x_dot[:-1]
        net = self.f_cntr[:-1] + self.f_ext[:-1] - x_dot @ damping.T
        return rate - np.einsum("ij,ij->i", x_dot, net)

    def valve_leaks(self) -> int:
        """Steps with a closed valve where the controller still added a wrench beyond gravity compensation."""
        closed = self.sigma == 0
        return int(np.count_nonzero(np.any(self.f_robot[closed] != self.f_g, axis=1)))

    def to_frame(self) -> pd.DataFrame:
        columns: dict[str, np.ndarray] = {"t": self.t}
        for name, data in (
            ("x", self.x),
            ("xdot", self.x_dot),
            ("xd", self.x_d),
            ("f_robot", self.f_robot),
            ("f_ext", self.f_ext),
        ):
            columns.update({f"{name}{i}": data[:, i] for i in _AXES})
        columns.update(
            {
                "E_robot": self.e_robot,
                "E_tank": self.e_tank,
                "sigma": self.sigma,
                "injected_J": self.injected,
                "consumed_W": self.consumed,
                "clamped_J": self.clamped,
                "normal_force": self.normal_force,
                "in_contact": self.in_contact.astype(int),
                "on_floor": self.on_floor.astype(int),
                "over_gap": self.over_gap.astype(int),
            }
        )
        return pd.DataFrame(columns)


def _tool_rotation(x: np.ndarray) -> np.ndarray:
    return Rotation.from_rotvec(x[3:6]).as_matrix()


def simulate(
    surface: SurfaceModel,
    skill: SkillProfile,
    body: RobotBody,
    gains: ControllerGains,
    tank: TankState,
    *,
    noise_std: float = 0.0,
    seed: int | None = None,
    settle_time: float = 0.0,
    valve_off_from: float | None = None,
) -> SimulationTrace:
    """Runs the skill closed-loop, then holds its final pose for `settle_time` seconds.

    The tool starts at rest on the first desired pose. The force integral is only
    committed while the valve is open. A scheduled tank that runs past its plan
    performs a controlled stop: the valve latches shut for the rest of the run.
    """
    if len(skill) == 0:
        raise ContractViolation("cannot simulate an empty skill")
    dt = skill.dt
    n_skill = len(skill)
    n = n_skill + int(round(settle_time / dt))
    rng = np.random.default_rng(seed)

    log = {name: np.zeros((n, 6)) for name in ("x", "x_dot", "x_d", "f_robot", "f_ext", "f_cntr")}
    scalars = {name: np.zeros(n) for name in ("e_robot", "e_tank", "injected", "consumed", "clamped", "normal_force")}
    sigma_log = np.zeros(n, dtype=int)
    flags = {name: np.zeros(n, dtype=bool) for name in ("in_contact", "on_floor", "over_gap")}
    t = skill.t[0] + dt * np.arange(n)

    state = RobotState.at_rest(skill.x_d[0], body)
    integral = np.zeros(6)
    initial_energy = tank.energy
    clamp_events = 0

    for k in range(n):
        x_d = skill.x_d[min(k, n_skill - 1)]
        if valve_off_from is not None and t[k] >= valve_off_from and not tank.stopped:
            tank = tank.stop()

        contact = contact_wrench(surface, state)
        R = _tool_rotation(state.x)  # noqa: N806
        # Wrench the tool exerts on the surface, expressed in the tool frame
        sensed = np.empty(6)
        sensed[:3] = R.T @ -contact.wrench[:3]
        sensed[3:] = R.T @ -contact.wrench[3:]
        if noise_std > 0:
            sensed += rng.normal(0.0, noise_std, 6)

        f_i = impedance_wrench(state, x_d, gains)
        f_f, new_integral = force_wrench(sensed, skill.f_d, integral, R, gains, dt)
        sigma = tank.sigma
        if sigma == 1:
            integral = new_integral
        f_cntr = sigma * (f_i + f_f)
        f_robot = control_wrench(f_i, f_f, sigma, body.gravity)

        try:
            tank = tank_step(tank, state.x_dot, f_cntr, dt)
        except ScheduleExhausted as e:
            logging.info(f"{e}; stopping the controller")
            tank = tank_step(tank.stop(), state.x_dot, f_cntr, dt)

        log["x"][k] = state.x
        log["x_dot"][k] = state.x_dot
        log["x_d"][k] = x_d
        log["f_robot"][k] = f_robot
        log["f_ext"][k] = contact.wrench
        log["f_cntr"][k] = f_cntr
        scalars["e_robot"][k] = kinetic_energy(state)
        scalars["e_tank"][k] = tank.energy
        scalars["injected"][k] = tank.last_injected
        scalars["consumed"][k] = tank.last_consumed
        scalars["clamped"][k] = tank.last_clamped
        scalars["normal_force"][k] = contact.normal_force if contact.in_contact else 0.0
        sigma_log[k] = sigma
        flags["in_contact"][k] = contact.in_contact
        flags["on_floor"][k] = contact.on_floor and contact.in_contact
        flags["over_gap"][k] = contact.over_gap
        if tank.last_clamped != 0.0:
            clamp_events += 1

        try:
            state = step_dynamics(state, f_robot, contact.wrench, dt)
        except SimulationFault as e:
            e.payload["step"] = k
            e.payload["t"] = float(t[k])
            raise

    if clamp_events:
        logging.warning(f"Tank saturated on {clamp_events} of {n} steps")

    return SimulationTrace(
        t=t,
        **log,
        **scalars,
        sigma=sigma_log,
        **flags,
        initial_tank_energy=initial_energy,
        skill_steps=n_skill,
        dt=dt,
        f_g=body.gravity.copy(),
    )


def gains_for(
    config: ControllerConfig, normal_stiffness: float | None = None, normal_damping: float | None = None
) -> ControllerGains:
    """Controller gains from config, optionally overriding the normal (z) impedance axis."""
    gains = ControllerGains.from_config(config)
    if normal_stiffness is None and normal_damping is None:
        return gains
    K_C = gains.K_C.copy()  # noqa: N806
    D_C = gains.D_C_ctrl.copy()  # noqa: N806
    if normal_stiffness is not None:
        K_C[2, 2] = normal_stiffness
    if normal_damping is not None:
        D_C[2, 2] = normal_damping
    return ControllerGains(K_C, D_C, gains.K_p, gains.K_i, gains.f_integral_limit)


def schedule_for(config: ExperimentConfig, planned: PowerTrace, skill: SkillProfile) -> EnergySchedule:
    """Energy plan for a scheduled tank, parameterized the way the tank config asks."""
    if config.tank.parameterization == "arclength":
        return EnergySchedule.from_trace(planned, skill.x_dot_d)
    return EnergySchedule.from_trace(planned)


def run_skill(
    config: ExperimentConfig,
    surface: SurfaceModel,
    skill: SkillProfile,
    mode: TankMode = TankMode.SCALAR_HIGH,
    *,
    planned: PowerTrace | None = None,
    seed: int | None = None,
    settle_time: float = 0.0,
    gains: ControllerGains | None = None,
    valve_off_from: float | None = None,
) -> SimulationTrace:
    """Simulates a skill with the body, gains, noise and tank described by an experiment config."""
    schedule = schedule_for(config, planned, skill) if mode == TankMode.SCHEDULED and planned is not None else None
    return simulate(
        surface,
        skill,
        RobotBody.from_config(config.dynamics),
        gains or ControllerGains.from_config(config.controller),
        make_tank(mode, config.tank, schedule),
        noise_std=config.controller.force_noise_std,
        seed=seed,
        settle_time=settle_time,
        valve_off_from=valve_off_from,
    )
