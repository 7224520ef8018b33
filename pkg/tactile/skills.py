"""Nominal tactile skills: desired surface trajectories with a time-invariant force policy."""

import logging
import math
import re
from collections.abc import Callable
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.integrate import cumulative_trapezoid
from scipy.ndimage import gaussian_filter1d

from tactile.config_schema import Pattern, PatternShapeConfig, SkillGenConfig
from tactile.exceptions import SkillParseError, SurfaceDomainError
from tactile.surface import SurfaceModel

SKILL_COLUMNS = ["t"] + [f"xd{i}" for i in range(6)] + [f"vd{i}" for i in range(6)] + [f"fd{i}" for i in range(6)]
CSV_FLOAT_FORMAT = "%.17g"

# Planar paths are returned as (points, unit tangents) for an array of planar arclengths
PlanarPath = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class SkillProfile:
    t: np.ndarray
    x_d: np.ndarray
    x_dot_d: np.ndarray
    f_d: np.ndarray
    surface_id: str = "unknown"
    start_uv: tuple[float, float] = (0.0, 0.0)
    pattern: Pattern | None = None
    truncated: bool = False

    def __len__(self) -> int:
        return int(self.t.shape[0])

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if len(self) > 1 else 1e-3

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0]) if len(self) else 0.0

    def same_samples(self, other: "SkillProfile") -> bool:
        """Bit-exact comparison of every numeric field."""
        return (
            np.array_equal(self.t, other.t)
            and np.array_equal(self.x_d, other.x_d)
            and np.array_equal(self.x_dot_d, other.x_dot_d)
            and np.array_equal(self.f_d, other.f_d)
            and self.start_uv == other.start_uv
        )

    @classmethod
    def hold(cls, pose: np.ndarray, f_d: np.ndarray, duration: float, dt: float = 1e-3) -> "SkillProfile":
        """A set-point skill that keeps the desired pose fixed."""
        n = int(round(duration / dt)) + 1
        pose = np.asarray(pose, dtype=float)
        return cls(
            t=np.arange(n) * dt,
            x_d=np.tile(pose, (n, 1)),
            x_dot_d=np.zeros((n, 6)),
            f_d=np.asarray(f_d, dtype=float),
            start_uv=(float(pose[0]), float(pose[1])),
        )


def _line(start: np.ndarray, heading: float) -> PlanarPath:
    direction = np.array([math.cos(heading), math.sin(heading)])

    def path(s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return start + s[:, None] * direction, np.tile(direction, (s.shape[0], 1))

    return path


def _zigzag(start: np.ndarray, heading: float, shape: PatternShapeConfig, s_max: float) -> PlanarPath:
    segment = shape.zigzag_segment
    n_segments = int(math.ceil(s_max / segment)) + 2
    angles = heading + np.where(np.arange(n_segments) % 2 == 0, shape.zigzag_angle, -shape.zigzag_angle)
    directions = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    corners = start + np.concatenate([[[0.0, 0.0]], np.cumsum(segment * directions, axis=0)[:-1]])

    def path(s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        index = np.clip(np.floor(s / segment).astype(int), 0, n_segments - 1)
        local = s - index * segment
        return corners[index] + local[:, None] * directions[index], directions[index]

    return path


def _spiral_angle(s: np.ndarray, b: float) -> np.ndarray:
    """Inverts the Archimedean arclength s(phi) = b/2 (phi sqrt(1+phi^2) + asinh phi) by Newton's method."""
    phi = np.sqrt(2.0 * np.maximum(s, 0.0) / b)
    for _ in range(60):
        arc = 0.5 * b * (phi * np.sqrt(1.0 + phi * phi) + np.arcsinh(phi))
        step = (arc - s) / (b * np.sqrt(1.0 + phi * phi))
        phi = phi - step
        if np.all(np.abs(step) < 1e-15):
            break
    return np.maximum(phi, 0.0)


def _spiral(start: np.ndarray, heading: float, shape: PatternShapeConfig) -> PlanarPath:
    b = shape.spiral_pitch / (2.0 * math.pi)

    def path(s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        phi = _spiral_angle(s, b)
        theta = phi + heading
        radial = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        tangential = np.stack([-np.sin(theta), np.cos(theta)], axis=1)
        points = start + (b * phi)[:, None] * radial
        tangents = (radial + phi[:, None] * tangential) / np.sqrt(1.0 + phi * phi)[:, None]
        return points, tangents

    return path


def _arc(start: np.ndarray, heading: float, shape: PatternShapeConfig) -> PlanarPath:
    radius = shape.arc_radius
    center = start + radius * np.array([-math.sin(heading), math.cos(heading)])

    def path(s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        alpha = heading - math.pi / 2 + s / radius
        points = center + radius * np.stack([np.cos(alpha), np.sin(alpha)], axis=1)
        return points, np.stack([-np.sin(alpha), np.cos(alpha)], axis=1)

    return path


def _random_walk(
    start: np.ndarray, heading: float, shape: PatternShapeConfig, s_max: float, rng: np.random.Generator
) -> PlanarPath:
    step = 1e-4
    n_nodes = int(math.ceil(s_max / step)) + 2
    turn_rate = gaussian_filter1d(rng.standard_normal(n_nodes), sigma=shape.walk_correlation / step, mode="nearest")
    spread = float(turn_rate.std())
    if spread > 0:
        turn_rate = turn_rate / spread * shape.walk_turn_std
    headings = heading + np.concatenate([[0.0], np.cumsum(turn_rate[:-1] * step)])
    directions = np.stack([np.cos(headings), np.sin(headings)], axis=1)
    nodes = start + np.concatenate([[[0.0, 0.0]], np.cumsum(step * directions, axis=0)[:-1]])

    def path(s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        index = np.clip(np.floor(s / step).astype(int), 0, n_nodes - 1)
        local = s - index * step
        return nodes[index] + local[:, None] * directions[index], directions[index]

    return path


def planar_path(
    pattern: Pattern,
    start_uv: tuple[float, float],
    heading: float,
    shape: PatternShapeConfig,
    s_max: float,
    seed: int | None = None,
) -> PlanarPath:
    """Analytic (u, v) path of a pattern parameterized by planar arclength."""
    start = np.asarray(start_uv, dtype=float)
    if pattern == Pattern.LINE:
        return _line(start, heading)
    if pattern == Pattern.ZIGZAG:
        return _zigzag(start, heading, shape, s_max)
    if pattern == Pattern.SPIRAL:
        return _spiral(start, heading, shape)
    if pattern == Pattern.ARC:
        return _arc(start, heading, shape)
    return _random_walk(start, heading, shape, s_max, np.random.default_rng(seed))


def _tool_rotvec(hu: np.ndarray, hv: np.ndarray) -> np.ndarray:
    """Small-angle rotation vector that tilts the tool z-axis onto the surface normal."""
    norm = np.sqrt(1.0 + hu * hu + hv * hv)
    nx, ny, nz = -hu / norm, -hv / norm, 1.0 / norm
    sin_angle = np.hypot(nx, ny)
    angle = np.arctan2(sin_angle, nz)
    scale = np.divide(angle, sin_angle, out=np.ones_like(angle), where=sin_angle > 0)
    return np.stack([-ny * scale, nx * scale, np.zeros_like(nx)], axis=1)


def generate_pattern(
    surface: SurfaceModel,
    pattern: Pattern,
    start_uv: tuple[float, float],
    speed: float,
    length: float,
    f_d: np.ndarray,
    seed: int | None = None,
    *,
    heading: float = 0.0,
    dt: float = 1e-3,
    dwell: float = 0.0,
    shape: PatternShapeConfig | None = None,
) -> SkillProfile:
    """Traces a pattern at constant 3D speed over the surface, lifting (u, v) with the surface height.

    Paths that leave the workspace are truncated at the first sample outside it.
    """
    if speed <= 0 or length <= 0:
        raise ValueError("speed and length must be positive")
    if not surface.in_workspace(*start_uv):
        raise SurfaceDomainError(f"start {start_uv} lies outside the workspace of surface '{surface.name}'")
    shape = shape or PatternShapeConfig()
    path = planar_path(pattern, start_uv, heading, shape, length, seed)

    # 3D arclength as a function of planar arclength on a dense grid
    grid_step = 1e-4
    s2_grid = np.linspace(0.0, length, int(math.ceil(length / grid_step)) + 1)
    points, tangents = path(s2_grid)
    _, hu, hv = surface.evaluate(points[:, 0], points[:, 1])
    slope = hu * tangents[:, 0] + hv * tangents[:, 1]
    s3_grid = cumulative_trapezoid(np.sqrt(1.0 + slope * slope), s2_grid, initial=0.0)

    n_samples = int(round(length / speed / dt)) + 1
    t = np.arange(n_samples) * dt
    s2 = np.interp(np.minimum(speed * t, length), s3_grid, s2_grid)

    points, tangents = path(s2)
    u, v = points[:, 0], points[:, 1]
    h, hu, hv = surface.evaluate(u, v)
    slope = hu * tangents[:, 0] + hv * tangents[:, 1]
    planar_rate = speed / np.sqrt(1.0 + slope * slope)

    # Orientation rate by central differences of the analytic tool orientation along the path
    delta = 1e-6
    ahead = np.minimum(s2 + delta, s2_grid[-1])
    behind = np.maximum(s2 - delta, 0.0)
    p_ahead, _ = path(ahead)
    p_behind, _ = path(behind)
    _, hu_a, hv_a = surface.evaluate(p_ahead[:, 0], p_ahead[:, 1])
    _, hu_b, hv_b = surface.evaluate(p_behind[:, 0], p_behind[:, 1])
    span = np.where(ahead - behind > 0, ahead - behind, 1.0)
    orientation_rate = (_tool_rotvec(hu_a, hv_a) - _tool_rotvec(hu_b, hv_b)) / span[:, None] * planar_rate[:, None]

    x_d = np.column_stack([u, v, h, _tool_rotvec(hu, hv)])
    x_dot_d = np.column_stack(
        [tangents[:, 0] * planar_rate, tangents[:, 1] * planar_rate, slope * planar_rate, orientation_rate]
    )

    u_min, u_max, v_min, v_max = surface.config.workspace
    outside = np.flatnonzero((u < u_min) | (u > u_max) | (v < v_min) | (v > v_max))
    truncated = outside.size > 0
    if truncated:
        keep = int(outside[0])
        logging.warning(
            f"{pattern.value} path from {start_uv} leaves the workspace of '{surface.name}' "
            f"after {keep} of {n_samples} samples; truncating"
        )
        t, x_d, x_dot_d = t[:keep], x_d[:keep], x_dot_d[:keep]

    skill = SkillProfile(
        t=t,
        x_d=x_d,
        x_dot_d=x_dot_d,
        f_d=np.asarray(f_d, dtype=float).copy(),
        surface_id=surface.name,
        start_uv=(float(x_d[0, 0]), float(x_d[0, 1])),
        pattern=pattern,
        truncated=truncated,
    )
    return append_dwell(skill, dwell) if dwell > 0 and len(skill) else skill


def append_dwell(skill: SkillProfile, dwell: float) -> SkillProfile:
    """Holds the final pose at rest for `dwell` seconds."""
    dt = skill.dt
    n = int(round(dwell / dt))
    if n == 0:
        return skill
    t = np.concatenate([skill.t, skill.t[-1] + dt * np.arange(1, n + 1)])
    x_d = np.concatenate([skill.x_d, np.tile(skill.x_d[-1], (n, 1))])
    x_dot_d = np.concatenate([skill.x_dot_d, np.zeros((n, 6))])
    return replace(skill, t=t, x_d=x_d, x_dot_d=x_dot_d)


def skill_to_frame(skill: SkillProfile) -> pd.DataFrame:
    data = np.column_stack([skill.t, skill.x_d, skill.x_dot_d, np.tile(skill.f_d, (len(skill), 1))])
    return pd.DataFrame(data.reshape(len(skill), len(SKILL_COLUMNS)), columns=SKILL_COLUMNS)


def skill_to_csv(skill: SkillProfile, path: Path) -> None:
    """Writes a skill as one row per control step with round-trip float formatting."""
    path.parent.mkdir(parents=True, exist_ok=True)
    skill_to_frame(skill).to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")


def csv_to_skill(path: Path, surface_id: str = "unknown", pattern: Pattern | None = None) -> SkillProfile:
    """Parses a skill CSV, reporting malformed content with its line number."""
    with path.open() as f:
        header = f.readline().strip()
    if not header:
        raise SkillParseError("file is empty, expected a header", line=1)
    if header.split(",") != SKILL_COLUMNS:
        raise SkillParseError(f"unexpected header '{header}'", line=1)

    try:
        frame = pd.read_csv(path, float_precision="round_trip", keep_default_na=False)
    except pd.errors.ParserError as e:
        match = re.search(r"line (\d+)", str(e))
        raise SkillParseError(f"wrong number of fields: {e}", line=int(match.group(1)) if match else 0) from e

    # Columns holding any non-numeric cell come back as text; numeric ones keep round-trip precision
    text_columns = [column for column in frame.columns if not pd.api.types.is_numeric_dtype(frame[column])]
    if text_columns and len(frame):
        invalid = frame[text_columns].apply(lambda column: pd.to_numeric(column, errors="coerce").isna())
        bad_rows = np.flatnonzero(invalid.any(axis=1).to_numpy())
        if bad_rows.size:
            raise SkillParseError("non-numeric value", line=int(bad_rows[0]) + 2)

    data = frame.to_numpy(dtype=float)
    t = data[:, 0]
    decreasing = np.flatnonzero(np.diff(t) <= 0)
    if decreasing.size:
        raise SkillParseError("timestamps must be strictly increasing", line=int(decreasing[0]) + 3)
    forces = data[:, 13:19]
    if forces.shape[0] and np.any(forces != forces[0]):
        row = int(np.flatnonzero(np.any(forces != forces[0], axis=1))[0])
        raise SkillParseError("desired force must be time-invariant", line=row + 2)

    x_d = data[:, 1:7].copy()
    return SkillProfile(
        t=t.copy(),
        x_d=x_d,
        x_dot_d=data[:, 7:13].copy(),
        f_d=forces[0].copy() if forces.shape[0] else np.zeros(6),
        surface_id=surface_id,
        start_uv=(float(x_d[0, 0]), float(x_d[0, 1])) if len(t) else (0.0, 0.0),
        pattern=pattern,
    )


def sample_skill(
    surface: SurfaceModel, config: SkillGenConfig, rng: np.random.Generator, dt: float = 1e-3
) -> SkillProfile:
    """Draws one skill: pattern, speed, duration, start and heading from the generation ranges."""
    pattern = config.patterns[int(rng.integers(len(config.patterns)))]
    speed = float(rng.uniform(*config.speed_range))
    duration = float(rng.uniform(*config.duration_range))
    u_min, u_max, v_min, v_max = config.start_region
    start = (float(rng.uniform(u_min, u_max)), float(rng.uniform(v_min, v_max)))
    heading = float(rng.uniform(-config.heading_spread, config.heading_spread))
    return generate_pattern(
        surface,
        pattern,
        start,
        speed,
        speed * duration,
        np.array(config.desired_force),
        seed=int(rng.integers(2**31)),
        heading=heading,
        dt=dt,
        dwell=config.dwell,
        shape=config.shape,
    )
