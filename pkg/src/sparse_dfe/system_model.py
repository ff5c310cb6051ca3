"""
Frequency-domain block model ``y = H U x + w``.

``H`` is diagonal (one complex Rayleigh gain per subcarrier) and ``U`` is the
spreading matrix. The CDMA variant uses a column-normalized real Gaussian
``U`` together with ``H = I``.

Noise convention: ``w`` is circular complex Gaussian with ``E|w_i|^2 = sigma2``
and every constellation has unit average symbol energy, so the SNR axis is
``Es / sigma2``.
"""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .constellation import Constellation
from .errors import ConfigurationError, ShapeError


class SpreadingKind(enum.Enum):
    DFT = "dft"
    HADAMARD = "hadamard"
    HAAR = "haar"
    GAUSSIAN = "gaussian"

    @property
    def unitary(self) -> bool:
        return self is not SpreadingKind.GAUSSIAN


class ChannelKind(enum.Enum):
    RAYLEIGH = "rayleigh"
    IDENTITY = "identity"


def default_channel(kind: SpreadingKind) -> ChannelKind:
    """Gaussian spreading models CDMA with perfect power control, i.e. no fading."""
    return ChannelKind.IDENTITY if kind is SpreadingKind.GAUSSIAN else ChannelKind.RAYLEIGH


@dataclass(frozen=True, eq=False)
class SystemInstance:
    """One realization of the equalization problem.

    ``h`` holds the diagonal of ``H``; the dense matrix is available as ``H``.
    ``x_index`` gives the alphabet index of every transmitted symbol.
    """

    h: np.ndarray
    U: np.ndarray
    A: np.ndarray
    x_true: np.ndarray
    x_index: np.ndarray
    y: np.ndarray
    sigma2: float
    constellation: Constellation

    @property
    def m(self) -> int:
        return self.A.shape[1]

    @property
    def H(self) -> np.ndarray:
        return np.diag(self.h)


def _check_len(m: int) -> None:
    if int(m) != m or m < 1:
        raise ShapeError(f"block length must be a positive integer, got {m!r}")


def complex_gaussian(rng: np.random.Generator, size, var: float = 1.0) -> np.ndarray:
    """Circular complex normal samples with ``E|z|^2 = var``."""
    return np.sqrt(var / 2) * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


def make_channel(m: int, rng: np.random.Generator) -> np.ndarray:
    """Diagonal of a Rayleigh channel, rescaled so that ``sum |h_k|^2 == m``."""
    _check_len(m)
    h = complex_gaussian(rng, m)
    return h * np.sqrt(m / np.vdot(h, h).real)


@functools.cache
def _fixed_spreading(kind: SpreadingKind, m: int) -> np.ndarray:
    if kind is SpreadingKind.DFT:
        U = np.fft.fft(np.eye(m)) / np.sqrt(m)
    else:
        U = scipy.linalg.hadamard(m).astype(complex) / np.sqrt(m)
    U.setflags(write=False)
    return U


def make_spreading(kind: SpreadingKind | str, m: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Build an ``m x m`` spreading matrix.

    DFT and Hadamard matrices are deterministic and returned read-only (they
    are cached). Haar and Gaussian matrices consume ``rng``.
    """
    kind = SpreadingKind(kind)
    _check_len(m)
    if kind is SpreadingKind.HADAMARD and m & (m - 1):
        raise ConfigurationError(f"hadamard spreading needs a power-of-two block length, got {m}")
    if kind in (SpreadingKind.DFT, SpreadingKind.HADAMARD):
        return _fixed_spreading(kind, m)
    if rng is None:
        raise ValueError(f"{kind.value} spreading needs a random generator")
    if kind is SpreadingKind.HAAR:
        Z = complex_gaussian(rng, (m, m))
        Q, R = np.linalg.qr(Z)
        d = np.diag(R)
        return Q * (d / np.abs(d))
    S = rng.standard_normal((m, m))
    return (S / np.linalg.norm(S, axis=0)).astype(complex)


def transmit(H, U, x_true, sigma2: float, rng: np.random.Generator,
             constellation: Constellation, x_index=None) -> SystemInstance:
    """Pass ``x_true`` through ``A = H U`` and add noise of variance ``sigma2``.

    ``H`` may be given as the diagonal vector or as the dense diagonal matrix.
    """
    H = np.asarray(H)
    h = np.diag(H).copy() if H.ndim == 2 else H.astype(complex)
    U = np.asarray(U)
    x_true = np.asarray(x_true, dtype=complex)
    if U.ndim != 2 or U.shape[0] != h.size or U.shape[1] != x_true.size:
        raise ShapeError(f"H {h.shape}, U {U.shape} and x {x_true.shape} do not agree")
    if sigma2 < 0:
        raise ValueError("sigma2 must be non-negative")
    A = h[:, None] * U
    # noise is always drawn so the stream position does not depend on sigma2
    y = A @ x_true + complex_gaussian(rng, h.size, sigma2)
    if x_index is None:
        x_index = constellation.indices(x_true)
    return SystemInstance(h, U, A, x_true, np.asarray(x_index), y, float(sigma2), constellation)


def snr_to_sigma2(snr_db: float, c: Constellation | None = None) -> float:
    """Noise variance for a symbol SNR of ``snr_db`` (unit symbol energy)."""
    return 1.0 / 10 ** (snr_db / 10)


def make_instance(m: int, c: Constellation, spreading: SpreadingKind | str, sigma2: float,
                  rng: np.random.Generator, channel: ChannelKind | str | None = None) -> SystemInstance:
    """Draw a complete instance: channel, spreading, symbols, then noise."""
    spreading = SpreadingKind(spreading)
    channel = default_channel(spreading) if channel is None else ChannelKind(channel)
    _check_len(m)
    if channel is ChannelKind.RAYLEIGH:
        h = make_channel(m, rng)
    else:
        h = np.ones(m, dtype=complex)
    U = make_spreading(spreading, m, rng)
    idx = rng.integers(0, c.order, m)
    return transmit(h, U, c.points[idx], sigma2, rng, c, x_index=idx)
