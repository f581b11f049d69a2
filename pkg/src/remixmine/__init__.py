"""Remix-tree analytics: recurring-collaboration mining and count models of song reuse."""

__version__ = "0.1.0"

from .errors import RemixMineError  # noqa: E402,F401
from .model import (  # noqa: E402,F401
    Author, Event, EventKind, RecurringCollaboration, SongFlag, SongForest, SongNode, SongTree,
)
