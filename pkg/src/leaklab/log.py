from __future__ import annotations

import logging
import sys

LOG_FORMAT = "[%(name)s] %(message)s"


def configure(level: str | int = "INFO") -> logging.Logger:
    """Attach one stream handler to the package logger; repeated calls only update the level."""
    root = logging.getLogger("leaklab")
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
        if not isinstance(level, int):
            level = logging.INFO
    root.setLevel(level)
    if not any(getattr(h, "_leaklab", False) for h in root.handlers):
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler._leaklab = True  # type: ignore[attr-defined]
        root.addHandler(handler)
    root.propagate = False
    return root
