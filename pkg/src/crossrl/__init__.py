"""Pedestrian-vehicle crossing simulator with hierarchical best-response
training and online gradient-buffer adaptation."""

__version__ = "0.1.0"

from .env import (  # noqa: F401
    ACTIONS,
    Action,
    EventKind,
    PedType,
    ScenarioConfig,
    State,
    StepEvent,
)
from .errors import (  # noqa: F401
    AdaptationError,
    ConfigError,
    CrossrlError,
    NumericError,
    UsageError,
)
from .net import ACTOR_SHAPE, CRITIC_SHAPE, Checkpoint, NetShape  # noqa: F401
