"""Data-derived baseline transforms: KLT and the sparse orthonormal transform.

Both baselines consume the same residual blocks the learned transform trains
on.  The KLT is the eigenbasis of the sample covariance, ordered by
decreasing eigenvalue with a fixed sign convention so runs are comparable.
The sparse orthonormal transform (SOT) alternates between hard-thresholded
coefficients and an orthogonal Procrustes update of the basis, minimizing

    J(G, C) = ||X - C G^T||_F^2 + lambda * ||C||_0

where the l0 term is the transform-domain stand-in for coding rate.  Each
half step is the exact minimizer given the other variable, so J can never
increase; the run asserts that after every half step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .transforms import (
    TransformMatrix,
    dct2_transform,
    dense_transform,
    to_dense,
    transform_defect,
)


def _as_block_matrix(blocks: np.ndarray) -> np.ndarray:
    x = np.asarray(blocks, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected (count, n^2) blocks, got shape {x.shape}")
    return x


def klt_from_blocks(blocks: np.ndarray, label: str = "klt") -> TransformMatrix:
    """Karhunen-Loeve transform of a block sample.

    Columns of the returned dense matrix are unit eigenvectors of the
    mean-removed sample covariance, eigenvalues descending, each column
    signed so its largest-magnitude entry is positive (first index wins
    ties).  Forward coefficients are then ordered by decreasing expected
    energy and their sample covariance is diagonal.
    """
    x = _as_block_matrix(blocks)
    if x.shape[0] < 2:
        raise ValueError(f"covariance needs at least 2 blocks, got {x.shape[0]}")
    centered = x - x.mean(axis=0)
    cov = (centered.T @ centered) / x.shape[0]
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    basis = eigvecs[:, order]
    anchor = np.argmax(np.abs(basis), axis=0)
    signs = np.where(basis[anchor, np.arange(basis.shape[1])] < 0, -1.0, 1.0)
    return dense_transform(basis * signs, label)


@dataclass
class SotConfig:
    iterations: int = 50
    # Rate proxy weight; the quantizer-matched default is 0.35 * Q^2 at Q=40.
    sparsity_lambda: float = 560.0

    def validate(self):
        if self.iterations < 1:
            raise ValueError("need at least one iteration")
        if not self.sparsity_lambda > 0:
            raise ValueError(f"sparsity lambda must be positive, got {self.sparsity_lambda}")


@dataclass
class SotResult:
    transform: TransformMatrix
    # J after every half step: coefficient update, then basis update, per iteration.
    objective: list = field(default_factory=list)
    nonzero_fraction: float = 0.0


def sot_train(blocks: np.ndarray, config: SotConfig, init: TransformMatrix | None = None,
              label: str = "sot") -> SotResult:
    """Alternating minimization for the sparse orthonormal transform.

    The coefficient step keeps y = x G entries with y^2 >= lambda (hard
    threshold at sqrt(lambda)); the basis step solves the orthogonal
    Procrustes problem via the SVD of X^T C.  Requires an orthonormal
    starting basis (2-D DCT-II when ``init`` is omitted).
    """
    config.validate()
    x = _as_block_matrix(blocks)
    num = x.shape[1]
    if init is None:
        n = math.isqrt(num)
        if n * n != num:
            raise ValueError(f"blocks of {num} samples are not square tiles")
        g = to_dense(dct2_transform(n)).coeffs.copy()
    else:
        if transform_defect(init) > 1e-6:
            raise ValueError("initial transform must be orthonormal")
        g = to_dense(init).coeffs.copy()
    if g.shape[0] != num:
        raise ValueError(f"initial transform size {g.shape[0]} does not match blocks ({num})")

    lam = config.sparsity_lambda
    threshold = np.sqrt(lam)
    objective = []
    coeffs = None
    for _ in range(config.iterations):
        y = x @ g
        coeffs = np.where(np.abs(y) >= threshold, y, 0.0)
        objective.append(_sot_objective(x, coeffs, g, lam))
        w = x.T @ coeffs
        u, _, vt = np.linalg.svd(w)
        g = u @ vt
        objective.append(_sot_objective(x, coeffs, g, lam))
        if len(objective) >= 2:
            prev, curr = objective[-2], objective[-1]
            slack = 1e-9 * max(1.0, abs(objective[0]))
            if curr > prev + slack:
                raise AssertionError(
                    f"objective increased across the basis update: {prev} -> {curr}"
                )
        if len(objective) >= 3:
            prev, curr = objective[-3], objective[-2]
            slack = 1e-9 * max(1.0, abs(objective[0]))
            if curr > prev + slack:
                raise AssertionError(
                    f"objective increased across the coefficient update: {prev} -> {curr}"
                )
    nnz = float(np.count_nonzero(coeffs)) / coeffs.size if coeffs is not None else 0.0
    return SotResult(dense_transform(g, label), objective, nnz)


def _sot_objective(x, coeffs, g, lam):
    resid = x - coeffs @ g.T
    return float((resid * resid).sum() + lam * np.count_nonzero(coeffs))
