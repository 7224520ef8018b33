import math

import numpy as np
import pytest

from tactile.config_schema import SurfaceConfig, SurfaceKind
from tactile.dynamics import RobotBody, RobotState
from tactile.exceptions import SurfaceDomainError
from tactile.surface import SurfaceModel, contact_wrench, surface_eval

BODY = RobotBody.create(np.eye(6), np.zeros((6, 6)), np.zeros(6))


def _state(x: list[float], x_dot: list[float] | None = None) -> RobotState:
    return RobotState(np.array(x, dtype=float), np.array(x_dot or [0.0] * 6, dtype=float), BODY)


def test_planar_surface() -> None:
    h, normal = surface_eval(SurfaceModel(SurfaceConfig(kind=SurfaceKind.PLANAR)), 0.1, 0.2)
    assert h == 0.0
    np.testing.assert_allclose(normal, [0.0, 0.0, 1.0])


def test_inclined_surface() -> None:
    h, normal = surface_eval(SurfaceModel(SurfaceConfig(kind=SurfaceKind.INCLINED, incline_grade=0.2)), 0.0, 0.0)
    expected = np.array([-0.2, 0.0, 1.0]) / math.sqrt(1.04)
    assert h == 0.0
    np.testing.assert_allclose(normal, expected)


def test_curved_surface_matches_finite_differences() -> None:
    surface = SurfaceModel(SurfaceConfig(kind=SurfaceKind.CURVED))
    for u, v in [(0.0, 0.0), (0.07, -0.12), (-0.2, 0.31)]:
        step = 1e-6
        hu = (surface.height_and_gradient(u + step, v)[0] - surface.height_and_gradient(u - step, v)[0]) / (2 * step)
        hv = (surface.height_and_gradient(u, v + step)[0] - surface.height_and_gradient(u, v - step)[0]) / (2 * step)
        _, normal = surface_eval(surface, u, v)
        expected = np.array([-hu, -hv, 1.0]) / math.sqrt(1 + hu * hu + hv * hv)
        np.testing.assert_allclose(normal, expected, atol=1e-8)
    h, normal = surface_eval(surface, 0.0, 0.0)
    assert h == 0.0
    np.testing.assert_allclose(normal, np.array([-0.2, 0.0, 1.0]) / math.sqrt(1.04))


def test_heightfield_polynomial() -> None:
    # h = 0.1 u^2 - 0.1 v^2
    coefficients = [[0.0, 0.0, -0.1], [0.0, 0.0, 0.0], [0.1, 0.0, 0.0]]
    config = SurfaceConfig(kind=SurfaceKind.HEIGHTFIELD, coefficients=coefficients)
    surface = SurfaceModel(config)
    h, hu, hv = surface.height_and_gradient(0.2, 0.1)
    assert h == pytest.approx(0.1 * 0.04 - 0.1 * 0.01)
    assert hu == pytest.approx(0.04)
    assert hv == pytest.approx(-0.02)


def test_vectorized_evaluation_matches_scalar() -> None:
    surface = SurfaceModel(SurfaceConfig(kind=SurfaceKind.CURVED))
    u = np.array([-0.1, 0.0, 0.25])
    v = np.array([0.05, -0.3, 0.1])
    h, hu, hv = surface.evaluate(u, v)
    for k in range(3):
        np.testing.assert_allclose((h[k], hu[k], hv[k]), surface.height_and_gradient(u[k], v[k]))


def test_outside_workspace() -> None:
    surface = SurfaceModel(SurfaceConfig(workspace=[-0.1, 0.1, -0.1, 0.1]))
    with pytest.raises(SurfaceDomainError):
        surface_eval(surface, 0.5, 0.0)


def test_static_penetration() -> None:
    surface = SurfaceModel(SurfaceConfig(k_n=10_000.0, mu=0.4))
    contact = contact_wrench(surface, _state([0.0, 0.0, -0.001, 0.0, 0.0, 0.0]))
    assert contact.in_contact
    assert contact.normal_force == pytest.approx(10.0)
    assert contact.tangential_force == pytest.approx(0.0)


def test_separated_tool() -> None:
    surface = SurfaceModel(SurfaceConfig())
    contact = contact_wrench(surface, _state([0.0, 0.0, 0.005, 0.0, 0.0, 0.0]))
    assert not contact.in_contact
    np.testing.assert_array_equal(contact.wrench, np.zeros(6))


def test_sliding_friction_saturates() -> None:
    surface = SurfaceModel(SurfaceConfig(k_n=10_000.0, b_n=50.0, mu=0.4, v_reg=1e-3))
    contact = contact_wrench(surface, _state([0.0, 0.0, -0.001, 0.0, 0.0, 0.0], [0.5, 0.0, 0.0, 0.0, 0.0, 0.0]))
    assert contact.normal_force == pytest.approx(10.0)
    assert contact.wrench[0] == pytest.approx(-4.0)
    assert contact.tangential_force == pytest.approx(4.0)


def test_friction_never_adds_energy() -> None:
    surface = SurfaceModel(SurfaceConfig(kind=SurfaceKind.CURVED))
    rng = np.random.default_rng(0)
    for _ in range(50):
        u, v = rng.uniform(-0.3, 0.3, 2)
        h, _ = surface_eval(surface, u, v)
        velocity = np.concatenate([rng.normal(0.0, 0.1, 3), np.zeros(3)])
        contact = contact_wrench(surface, _state([u, v, h - 0.001, 0.0, 0.0, 0.0], velocity.tolist()))
        force = contact.wrench[:3]
        friction = force - (force @ contact.normal) * contact.normal
        assert friction @ velocity[:3] <= 1e-12


def test_gap_without_floor_loses_contact() -> None:
    surface = SurfaceModel(SurfaceConfig(gap_u_min=0.05))
    contact = contact_wrench(surface, _state([0.1, 0.0, -0.01, 0.0, 0.0, 0.0]))
    assert not contact.in_contact
    assert contact.over_gap


def test_gap_floor_catches_tool() -> None:
    surface = SurfaceModel(SurfaceConfig(gap_u_min=0.05, gap_depth=0.08))
    hovering = contact_wrench(surface, _state([0.1, 0.0, -0.05, 0.0, 0.0, 0.0]))
    assert not hovering.in_contact
    struck = contact_wrench(surface, _state([0.1, 0.0, -0.081, 0.0, 0.0, 0.0]))
    assert struck.in_contact
    assert struck.on_floor
    assert struck.normal_force == pytest.approx(10.0)
