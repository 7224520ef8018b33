import numpy as np
import pytest

from tactile.exceptions import ContractViolation
from tactile.power import PowerTrace, integrate_energy


def test_constant_power_integrates_linearly() -> None:
    trace = PowerTrace(np.linspace(0.0, 2.0, 2001), np.ones(2001))
    energy = integrate_energy(trace, 0.1)
    assert energy[0] == 0.1
    assert energy[-1] == pytest.approx(2.1)
    assert trace.total_energy() == pytest.approx(2.0)


def test_zero_power_keeps_epsilon() -> None:
    trace = PowerTrace(np.arange(10) * 1e-3, np.zeros(10))
    np.testing.assert_array_equal(integrate_energy(trace, 0.1), 0.1)


def test_non_uniform_grid_rejected() -> None:
    trace = PowerTrace(np.array([0.0, 0.001, 0.003]), np.ones(3))
    with pytest.raises(ContractViolation):
        integrate_energy(trace, 0.1)


def test_empty_and_single_sample_traces() -> None:
    assert integrate_energy(PowerTrace.empty(), 0.1).shape == (0,)
    single = PowerTrace(np.zeros(1), np.array([3.0]))
    np.testing.assert_array_equal(integrate_energy(single, 0.1), [0.1])
    assert single.total_energy() == 0.0


def test_mismatched_lengths() -> None:
    with pytest.raises(ContractViolation):
        PowerTrace(np.zeros(3), np.zeros(2))


def test_frame_carries_cumulative_energy() -> None:
    trace = PowerTrace(np.arange(4) * 0.5, np.array([0.0, 2.0, 2.0, 0.0]))
    frame = trace.to_frame(epsilon=0.1)
    assert list(frame.columns) == ["t", "power_W", "energy_J"]
    np.testing.assert_allclose(frame["energy_J"], [0.1, 0.6, 1.6, 2.1])
    restored = PowerTrace.from_frame(frame)
    np.testing.assert_array_equal(restored.power, trace.power)
    assert "energy_J" not in trace.to_frame().columns
