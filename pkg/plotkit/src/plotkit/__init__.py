"""Paper-style figures from the crossing harness's CSV outputs."""

__version__ = "0.1.0"

from .figures import (  # noqa: F401
    FigureSpec,
    PlotkitError,
    SchemaError,
    make_reward_collision_plot,
    make_speed_plot,
)
