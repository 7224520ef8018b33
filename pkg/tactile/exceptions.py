from typing import Any


class TactileError(Exception):
    """Base exception for the tactile energy laboratory."""
    pass

class ConfigError(TactileError):
    """Raised when an experiment or surface configuration cannot be loaded or validated."""
    pass

class DomainError(TactileError):
    """Raised when an operation is called outside its mathematical domain."""
    pass

class SurfaceDomainError(DomainError):
    """Raised when a surface is queried outside its workspace bounds."""
    pass

class SimulationFault(TactileError):
    """Raised when the integrator produces a non-finite state."""

    def __init__(self, message: str, payload: dict[str, Any] | None = None):
        super().__init__(message)
        self.payload = payload or {}

class ScheduleExhausted(TactileError):
    """Raised by the tank when a scheduled skill over-runs its energy plan."""

    def __init__(self, step: int, schedule_length: int):
        super().__init__(f"Energy schedule exhausted at step {step} (plan has {schedule_length} steps)")
        self.step = step
        self.schedule_length = schedule_length

class SkillParseError(TactileError):
    """Raised when a skill CSV file is malformed."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line

class AlignmentError(TactileError):
    """Raised when a power trace does not line up with its skill."""
    pass

class ContractViolation(TactileError):
    """Raised when arrays handed to the estimator or metrics have the wrong shape."""
    pass

class TrainingFault(TactileError):
    """Raised when the loss becomes non-finite."""

    def __init__(self, message: str, sample_index: int | None = None):
        super().__init__(message)
        self.sample_index = sample_index

class DivergenceError(TactileError):
    """Raised when validation error grows beyond the configured factor of its initial value."""

    def __init__(self, message: str, history: Any = None):
        super().__init__(message)
        self.history = history

class CheckpointVersionError(TactileError):
    """Raised when a checkpoint was written with an incompatible format version."""
    pass

class ArtifactError(TactileError):
    """Raised when an output artifact cannot be written or a stored artifact fails its integrity check."""
    pass
