"""Guard that keeps ground-truth labels out of the unsupervised trainers.

Stage-1 and stage-2 training run inside :func:`training_zone`.  Any read of a
label vector from a :class:`~idsframe.data.DataMatrix` while a zone is active
is recorded and raises :class:`LabelLeakError`.
"""
from __future__ import annotations

import contextlib
import contextvars
import threading

_zone: contextvars.ContextVar[str | None] = contextvars.ContextVar("idsframe_zone", default=None)
_lock = threading.Lock()
_violations: list[tuple[str, str]] = []


class LabelLeakError(RuntimeError):
    pass


@contextlib.contextmanager
def training_zone(name: str):
    token = _zone.set(name)
    try:
        yield
    finally:
        _zone.reset(token)


def current_zone() -> str | None:
    return _zone.get()


def record_label_access(field: str) -> None:
    zone = _zone.get()
    if zone is None:
        return
    with _lock:
        _violations.append((zone, field))
    raise LabelLeakError(f"label field {field!r} accessed inside training zone {zone!r}")


def violations() -> list[tuple[str, str]]:
    with _lock:
        return list(_violations)


def reset() -> None:
    with _lock:
        _violations.clear()
