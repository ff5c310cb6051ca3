"""Linear (ZF, MMSE) and convex-relaxation equalizers behind one interface."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .constellation import Constellation, detect
from .errors import ShapeError, SingularityError
from .solvers import SolverConfig, box_ls, ridge_ls


class EqualizerKind(enum.Enum):
    ZF = "zf"
    MMSE = "mmse"
    CONVEX = "convex"

    @property
    def label(self) -> str:
        return {"zf": "ZF", "mmse": "MMSE", "convex": "inf"}[self.value]


@dataclass
class SoftEstimate:
    values: np.ndarray
    kind: EqualizerKind
    converged: bool = True


def equalize(kind: EqualizerKind | str, A, y, sigma2: float, c: Constellation,
             cfg: SolverConfig | None = None, *, gram=None) -> SoftEstimate:
    """Soft estimate of ``x`` from ``y = A x + w`` for a possibly tall ``A``.

    ZF and MMSE solve the regularized normal equations; the convex relaxation
    solves least squares over the constellation's bounding box, warm-started
    from the clipped MMSE solution. A convex solve that hits ``max_iters``
    is reported with ``converged=False``.
    """
    kind = EqualizerKind(kind)
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] < A.shape[1]:
        raise ShapeError(f"equalizers need rows >= cols, got {A.shape}")
    if gram is None:
        gram = (A.conj().T @ A, A.conj().T @ y)
    if kind is EqualizerKind.ZF:
        return SoftEstimate(ridge_ls(A, y, 0.0, gram=gram), kind)
    if kind is EqualizerKind.MMSE:
        return SoftEstimate(ridge_ls(A, y, sigma2, gram=gram), kind)
    try:
        x_mmse = ridge_ls(A, y, sigma2, gram=gram)
    except SingularityError:
        x_mmse = None
    res = box_ls(A, y, c.box_bound, cfg, x0=x_mmse, gram=gram)
    return SoftEstimate(res.x, kind, res.converged)


def equalize_and_detect(kind: EqualizerKind | str, A, y, sigma2: float, c: Constellation,
                        cfg: SolverConfig | None = None) -> np.ndarray:
    return detect(equalize(kind, A, y, sigma2, c, cfg).values, c)
