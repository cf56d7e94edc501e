"""Numerical tolerances shared by every engine.

Defaults can be overridden for a block of code with :func:`override`; the
override is stored in a context variable so concurrent callers do not see
each other's settings.
"""
from __future__ import annotations

import contextlib
import contextvars
import dataclasses
from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    rank_atol: float = 1e-12
    rank_rtol: float = 1e-10
    # singular values of frame_S^* frame_T at or above 1 - this are common directions
    intersect: float = 1e-8
    angle: float = 1e-8
    isometry: float = 1e-10
    unitary: float = 1e-10
    residual: float = 1e-9
    stabilize: float = 1e-10
    twist_soft: float = 1e-8
    orthogonality: float = 1e-9
    dim_cap: int = 20000


_current: contextvars.ContextVar[Tolerances] = contextvars.ContextVar(
    "twistwold_tolerances", default=Tolerances()
)


def tol() -> Tolerances:
    return _current.get()


@contextlib.contextmanager
def override(**changes):
    """Temporarily replace some tolerance fields, e.g. ``override(residual=1e-8)``."""
    for key, value in changes.items():
        if key not in {f.name for f in dataclasses.fields(Tolerances)}:
            raise KeyError(f"unknown tolerance {key!r}")
        if value <= 0:
            raise ValueError(f"tolerance {key} must be positive")
    token = _current.set(dataclasses.replace(_current.get(), **changes))
    try:
        yield _current.get()
    finally:
        _current.reset(token)
