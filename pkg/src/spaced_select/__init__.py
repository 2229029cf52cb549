"""Spaced repetition scheduling with a retention-optimal review intensity.

Modules: ``memory`` (forgetting models), ``control`` (selection rule and
HJB checks), ``fitting`` (parameter estimation), ``policies``,
``simulator``, ``analysis`` (trial statistics), ``metrics`` and ``io``.
"""

from .control import ControlConfig, optimal_selection_probability
from .errors import DegenerateRateWarning, SpacedError
from .memory import MemoryState, ModelKind, ModelParams, ReviewEvent, StudySession

__all__ = [
    "ControlConfig",
    "DegenerateRateWarning",
    "MemoryState",
    "ModelKind",
    "ModelParams",
    "ReviewEvent",
    "SpacedError",
    "StudySession",
    "optimal_selection_probability",
]

__version__ = "0.1.0"
