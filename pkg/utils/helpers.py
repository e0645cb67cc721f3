import hashlib
import math
import struct
from typing import Iterable, Sequence

import numpy as np

from config import PROBABILITY_DIGITS

ZERO_DIGEST = bytes(32)


def derive_seed(base_seed: int, *labels) -> int:
    """Derive an independent 64-bit seed from a base seed and a label path."""
    hasher = hashlib.sha256()
    hasher.update(struct.pack("<Q", base_seed & 0xFFFFFFFFFFFFFFFF))
    for label in labels:
        hasher.update(b"/")
        hasher.update(str(label).encode())
    return int.from_bytes(hasher.digest()[:8], "little")


def generate_digest(*chunks: bytes) -> bytes:
    """SHA-256 over the concatenation of chunks."""
    hasher = hashlib.sha256()
    for chunk in chunks:
        hasher.update(chunk)
    return hasher.digest()


def pack_uint64(*values: int) -> bytes:
    return struct.pack(f"<{len(values)}Q", *values)


def pack_float64_array(values: np.ndarray) -> bytes:
    """Little-endian float64 bytes, independent of host byte order."""
    return np.ascontiguousarray(values, dtype="<f8").tobytes()


def median_of(values: Sequence[float]) -> float:
    """Median with the even-count convention: mean of the two middle values."""
    if len(values) == 0:
        raise ValueError("median of an empty sequence")
    ordered = sorted(values)
    mid = len(ordered) // 2
    if len(ordered) % 2:
        return float(ordered[mid])
    return (ordered[mid - 1] + ordered[mid]) / 2.0


def nearest_odd(x: float) -> int:
    """Nearest odd integer to x (ties round up), never below 1."""
    return max(1, 2 * math.floor(x / 2) + 1)


def format_probability(value: float, digits: int = PROBABILITY_DIGITS) -> str:
    return f"{value:.{digits}g}"


def format_ids(ids: Iterable[int]) -> str:
    """Space-separated ascending node ids, as written to metrics CSVs."""
    return " ".join(str(i) for i in sorted(ids))


def find_key_line(text: str, key: str) -> int:
    """1-based line of the first `"key"` occurrence in a JSON document, or 1."""
    needle = f'"{key}"'
    for number, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return number
    return 1
