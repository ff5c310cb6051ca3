"""
Symbol alphabets with Gray labeling and unit average energy.

Point ordering is fixed: the index of a point, written in binary with the
most significant bit first, is its bit label. For the square constellations
the leading half of the label selects the in-phase level and the trailing
half the quadrature level, each through the per-axis Gray code.

    BPSK   label 0 -> +1, label 1 -> -1
    QPSK   (+-1 +-1j)/sqrt(2); bit 0 sets the sign of Re, bit 1 the sign of Im
    QAM16  {-3,-1,+1,+3}^2 / sqrt(10); per-axis Gray 00,01,11,10 -> -3,-1,+1,+3
"""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ShapeError


class Modulation(enum.Enum):
    BPSK = "bpsk"
    QPSK = "qpsk"
    QAM16 = "qam16"


# per-axis Gray code: label -> amplitude level
_AXIS_LEVELS = {
    1: {0: 1.0, 1: -1.0},
    2: {0b00: -3.0, 0b01: -1.0, 0b11: 1.0, 0b10: 3.0},
}


@dataclass(frozen=True, eq=False)
class Constellation:
    """A finite symbol alphabet.

    Attributes
    ----------
    kind : Modulation
    points : ndarray, complex, shape (M,)
        Unit average energy; ``points[i]`` carries label ``bit_labels[i]``.
    bit_labels : ndarray, uint8, shape (M, log2 M)
    s_min : float
        Minimum Euclidean distance between two distinct points.
    box_bound : float
        Half-width of the smallest axis-aligned box holding all points.
    """

    kind: Modulation
    points: np.ndarray
    bit_labels: np.ndarray
    s_min: float
    box_bound: float
    _hamming: np.ndarray = field(repr=False)

    @property
    def order(self) -> int:
        return len(self.points)

    @property
    def bits_per_symbol(self) -> int:
        return self.bit_labels.shape[1]

    def indices(self, symbols) -> np.ndarray:
        """Index of the nearest point for every entry (lowest index on ties)."""
        v = np.asarray(symbols, dtype=complex).ravel()
        d = (v.real[:, None] - self.points.real) ** 2 + (v.imag[:, None] - self.points.imag) ** 2
        return np.argmin(d, axis=1)

    def bit_distance(self, ia, ib) -> int:
        """Total Hamming distance between two index vectors."""
        return int(self._hamming[ia, ib].sum())

    def __repr__(self) -> str:
        return f"Constellation({self.kind.value})"


def _build(kind: Modulation) -> Constellation:
    if kind is Modulation.BPSK:
        k, per_axis = 1, None
        points = np.array([_AXIS_LEVELS[1][0], _AXIS_LEVELS[1][1]], dtype=complex)
    elif kind is Modulation.QPSK:
        k, per_axis = 2, 1
    elif kind is Modulation.QAM16:
        k, per_axis = 4, 2
    else:  # pragma: no cover
        raise ConfigurationError(f"unknown modulation {kind!r}")

    labels = (np.arange(2**k)[:, None] >> np.arange(k - 1, -1, -1)) & 1
    if per_axis is not None:
        levels = _AXIS_LEVELS[per_axis]
        weights = 1 << np.arange(per_axis - 1, -1, -1)
        re = np.array([levels[int(lab[:per_axis] @ weights)] for lab in labels])
        im = np.array([levels[int(lab[per_axis:] @ weights)] for lab in labels])
        points = re + 1j * im
    points = points / np.sqrt(np.mean(np.abs(points) ** 2))
    points.setflags(write=False)

    diff = np.abs(points[:, None] - points[None, :])
    s_min = float(diff[~np.eye(len(points), dtype=bool)].min())
    box_bound = float(np.max(np.maximum(np.abs(points.real), np.abs(points.imag))))
    hamming = (labels[:, None, :] != labels[None, :, :]).sum(axis=2)
    labels = labels.astype(np.uint8)
    labels.setflags(write=False)
    hamming.setflags(write=False)
    return Constellation(kind, points, labels, s_min, box_bound, hamming)


@functools.cache
def get_constellation(kind: Modulation | str) -> Constellation:
    """Return the shared, immutable constellation for ``kind`` (enum or CLI token)."""
    try:
        kind = Modulation(kind)
    except ValueError:
        raise ConfigurationError(f"unknown constellation {kind!r}; expected bpsk, qpsk or qam16") from None
    return _build(kind)


def modulate(bits, c: Constellation) -> np.ndarray:
    """Map a bit sequence to symbols, ``bits_per_symbol`` bits (MSB first) per symbol."""
    bits = np.asarray(bits, dtype=np.int64).ravel()
    k = c.bits_per_symbol
    if bits.size % k:
        raise ShapeError(f"{bits.size} bits is not a multiple of {k} bits per symbol")
    if np.any((bits != 0) & (bits != 1)):
        raise ValueError("bits must be 0 or 1")
    idx = bits.reshape(-1, k) @ (1 << np.arange(k - 1, -1, -1))
    return c.points[idx]


def detect(soft, c: Constellation) -> np.ndarray:
    """Nearest-point hard decision for every coefficient of ``soft``."""
    soft = np.asarray(soft)
    return c.points[c.indices(soft)].reshape(soft.shape)


def count_bit_errors(a, b, c: Constellation) -> int:
    """Hamming distance between the bit labels of two hard-decision vectors."""
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch: {a.size} vs {b.size}")
    return c.bit_distance(c.indices(a), c.indices(b))
