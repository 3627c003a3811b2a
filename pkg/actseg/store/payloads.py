"""Raw binary payloads and JSON manifests.

Payloads are headerless, row-major, little-endian arrays; their shape and
dtype live in the manifest that references them. Every read checks the byte
count against the declared shape before touching the data.
"""

from __future__ import annotations

import functools
import json
import logging
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"

# dtype name in manifests -> on-disk layout
DTYPES = {
    "float32": np.dtype("<f4"),
    "uint16": np.dtype("<u2"),
    "float64": np.dtype("<f8"),
}


class DatasetError(ValueError):
    """Base for every on-disk format problem."""


class ManifestError(DatasetError):
    pass


class MissingPayloadError(DatasetError):
    pass


class PayloadShapeError(DatasetError):
    pass


class TruncatedPayloadError(PayloadShapeError):
    pass


def store_errors(func):
    """Turn OS and JSON failures inside a store call into DatasetErrors."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except DatasetError:
            raise
        except FileNotFoundError as e:
            raise MissingPayloadError(f"missing payload: {e.filename}") from e
        except json.JSONDecodeError as e:
            raise ManifestError(f"malformed manifest: {e}") from e
        except (KeyError, TypeError) as e:
            log.debug("%s failed on a malformed record", func.__name__, exc_info=True)
            raise ManifestError(f"malformed manifest: missing or invalid field {e}") from e

    return wrapper


def _dtype(name: str) -> np.dtype:
    if name not in DTYPES:
        raise ManifestError(f"unknown payload dtype {name!r}")
    return DTYPES[name]


def write_payload(path: Path, array: np.ndarray, dtype: str) -> None:
    data = np.ascontiguousarray(array, dtype=_dtype(dtype))
    path.write_bytes(data.tobytes())


def read_payload(path: Path, shape, dtype: str) -> np.ndarray:
    """Array of ``shape`` from a raw payload, in native byte order."""
    layout = _dtype(dtype)
    shape = tuple(int(d) for d in shape)
    if not path.is_file():
        raise MissingPayloadError(f"missing payload: {path}")
    raw = path.read_bytes()
    expected = layout.itemsize * int(np.prod(shape, dtype=np.int64))
    if len(raw) % layout.itemsize:
        raise TruncatedPayloadError(
            f"shape mismatch: {path.name} has {len(raw)} bytes, not a whole number of {dtype} values"
        )
    if len(raw) != expected:
        raise PayloadShapeError(
            f"shape mismatch: {path.name} has {len(raw)} bytes, shape {shape} needs {expected}"
        )
    return np.frombuffer(raw, dtype=layout).reshape(shape).astype(layout.newbyteorder("="))


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2) + "\n")


def read_json(path: Path) -> dict:
    if not path.is_file():
        raise ManifestError(f"no manifest at {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ManifestError(f"malformed manifest {path.name}: {e}") from e
    if not isinstance(data, dict):
        raise ManifestError(f"{path.name} must hold a JSON object")
    return data


def check_version(data: dict, expected: int, kind: str) -> None:
    version = data.get("format_version")
    if version != expected:
        raise ManifestError(f"{kind} format_version {version!r}, expected {expected}")
    if data.get("kind", kind) != kind:
        raise ManifestError(f"expected a {kind} manifest, found {data.get('kind')!r}")
