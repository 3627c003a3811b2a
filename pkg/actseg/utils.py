from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from actseg.constants import UNDEFINED


def fmt_loss(value: float) -> str:
    """Format a loss with 9 significant digits."""
    return f"{value:.9g}"


def fmt_metric(value: float | None) -> str:
    """Exact decimal for CSV output, or the undefined marker."""
    if value is None:
        return UNDEFINED
    return repr(float(value))


def parse_metric(text: str) -> float | None:
    text = text.strip()
    if text == UNDEFINED:
        return None
    return float(text)


def fmt_percent(value: float | None) -> str:
    """Table cell: percentage with one decimal, '-' when undefined."""
    if value is None:
        return "-"
    return f"{100 * value:.1f}"


def file_digest(path: str | Path) -> str:
    """SHA-256 of a file's bytes."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def category_name(actor: str, action: str) -> str:
    return f"{actor}-{action}"


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape: tuple | None = None) -> np.ndarray:
    """Uniform in ±sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))
