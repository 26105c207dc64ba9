"""
Dense linear algebra and randomness substrate.

A Matrix is a 2-D float64 numpy array; rows are samples. Every public
operation validates finiteness and names itself in the error it raises.
The Rng wraps numpy's PCG64 and derives child streams from SeedSequence
spawn keys, so splitting never advances the parent stream.
"""

import hashlib
import logging
import warnings
from typing import Tuple

import numpy as np
import numpy.typing as npt
from sklearn.exceptions import ConvergenceWarning

from ucae.errors import DimensionError, NumericError

logger = logging.getLogger(__name__)

Matrix = npt.NDArray[np.float64]

# Written into every checkpoint header.
PRNG_ALGORITHM = "numpy-PCG64-seedsequence"

_SEED_MASK = (1 << 64) - 1


def check_finite(a: np.ndarray, operation: str) -> np.ndarray:
    """Raise NumericError if `a` holds NaN or Inf; return `a` otherwise."""
    if not np.all(np.isfinite(a)):
        bad = int(np.size(a) - np.count_nonzero(np.isfinite(a)))
        raise NumericError(operation, f"{bad} non-finite value(s) in result")
    return a


def as_matrix(a, operation: str = "as_matrix") -> Matrix:
    """
    Coerce input to a finite float64 2-D array.

    1-D input is treated as a single row.
    """
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise DimensionError(f"{operation}: expected a 2-D matrix, got {m.ndim}-D")
    return check_finite(m, operation)


def _tag_key(tag: str) -> int:
    # Stable across processes, unlike hash().
    return int.from_bytes(hashlib.sha256(tag.encode("utf-8")).digest()[:4], "little")


class Rng:
    """
    Deterministic splittable random stream.

    Identical seed plus identical call sequence gives identical output.
    `split(tag)` derives an independent child from (seed, path, tag) without
    touching this stream; splitting twice with the same tag gives the same
    child, so callers use distinct tags.
    """

    def __init__(self, seed: int, path: Tuple[int, ...] = ()):
        self.seed = int(seed) & _SEED_MASK
        self.path = tuple(path)
        sequence = np.random.SeedSequence(self.seed, spawn_key=self.path)
        self._gen = np.random.Generator(np.random.PCG64(sequence))

    def split(self, tag: str) -> "Rng":
        return Rng(self.seed, self.path + (_tag_key(tag),))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def normal(self, rows: int, cols: int) -> Matrix:
        return self._gen.standard_normal((rows, cols))

    def integers(self, high: int, size: int) -> np.ndarray:
        """Draw `size` integers uniformly from [0, high)."""
        return self._gen.integers(0, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def __repr__(self):
        return f"Rng(seed={self.seed}, path={self.path})"


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product with shape and finiteness checks."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return check_finite(a @ b, "matmul")


def gauss_sample(rng: Rng, rows: int, cols: int) -> Matrix:
    """I.i.d. standard-normal matrix of shape (rows, cols) drawn from `rng`."""
    if rows <= 0 or cols <= 0:
        raise DimensionError(f"gauss_sample: rows and cols must be positive, got ({rows}, {cols})")
    return rng.normal(rows, cols)


def spectral_norm(a: Matrix, iters: int = 10000, tol: float = 1e-13) -> float:
    """
    Largest singular value of `a` by power iteration on aᵀa.

    Args:
        a: Nonempty matrix.
        iters: Maximum number of iterations.
        tol: Converged once the relative change of the estimate drops below this.

    Returns:
        The estimate. If it has not converged after `iters` iterations the
        best estimate is returned and a ConvergenceWarning is emitted.
    """
    a = as_matrix(a, "spectral_norm")
    if a.size == 0:
        raise DimensionError("spectral_norm: empty matrix")
    if iters < 1:
        raise ValueError("spectral_norm: iters must be >= 1")

    gram = a.T @ a
    v = np.ones(gram.shape[0])
    if not np.any(gram @ v):
        # ones is in the null space; start from the heaviest column instead
        v = np.zeros(gram.shape[0])
        v[int(np.argmax(np.sum(a * a, axis=0)))] = 1.0
    norm = np.linalg.norm(v)
    if norm == 0.0:
        return 0.0
    v /= norm

    estimate = 0.0
    for _ in range(iters):
        w = gram @ v
        w_norm = np.linalg.norm(w)
        if w_norm == 0.0:
            return 0.0
        v = w / w_norm
        new_estimate = float(v @ gram @ v)
        if abs(new_estimate - estimate) <= tol * abs(new_estimate):
            return float(np.sqrt(new_estimate))
        estimate = new_estimate

    msg = f"spectral_norm: power iteration not converged after {iters} iterations"
    logger.warning(msg)
    warnings.warn(msg, ConvergenceWarning)
    return float(np.sqrt(max(estimate, 0.0)))
