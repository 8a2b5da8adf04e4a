"""Dense float64 linear algebra and deterministic random generation.

Everything downstream (data synthesis, the model, training, the gradient-flow
integrator) builds on the two primitives here: 2-D float64 arrays in row-major
order, and a counter-based random generator that can be split into independent
deterministic child streams.
"""

from __future__ import annotations

import numpy as np

# A Matrix is a 2-D, C-contiguous float64 ndarray.
Matrix = np.ndarray


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


def as_matrix(data, rows: int | None = None, cols: int | None = None) -> Matrix:
    """Coerce ``data`` to a 2-D float64 matrix, checking finiteness.

    If ``rows``/``cols`` are given the shape is enforced as well.
    """
    a = np.ascontiguousarray(data, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={a.ndim}")
    if rows is not None and a.shape[0] != rows:
        raise ShapeError(f"expected {rows} rows, got {a.shape[0]}")
    if cols is not None and a.shape[1] != cols:
        raise ShapeError(f"expected {cols} cols, got {a.shape[1]}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix entries must be finite")
    return a


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product with an explicit shape check.

    Raises ShapeError naming both shapes when ``a.cols != b.rows``.
    """
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul dimension mismatch: {a.shape[0]}x{a.shape[1]} times "
            f"{b.shape[0]}x{b.shape[1]}"
        )
    return a @ b


def frob_norm_sq(a: np.ndarray) -> float:
    """Squared Frobenius norm: sum of squared entries."""
    a = np.asarray(a, dtype=np.float64)
    return float(np.sum(a * a))


class Rng:
    """Deterministic random generator with splittable child streams.

    Backed by the Philox counter-based bit generator, so the value stream is a
    pure function of the seed (and spawn path), independent of platform. Each
    call to :meth:`split` derives a fresh child whose stream is independent of
    the parent's; the parent only advances a split counter, never its own
    stream, so a given (seed, sequence of splits/draws) always reproduces the
    same values.
    """

    def __init__(self, seed: int, _seq: np.random.SeedSequence | None = None):
        self.seed = int(seed)
        self._seq = _seq if _seq is not None else np.random.SeedSequence(self.seed)
        self._gen = np.random.Generator(np.random.Philox(self._seq))
        self._n_splits = 0

    def split(self) -> "Rng":
        """Return a new independent Rng derived from this one."""
        child_seq = self._seq.spawn(1)[0]
        self._n_splits += 1
        return Rng(self.seed, _seq=child_seq)

    def normal(self, rows: int, cols: int, stddev: float) -> Matrix:
        """Matrix of i.i.d. Gaussian entries with mean 0 and the given stddev."""
        if stddev <= 0:
            raise ValueError(f"stddev must be > 0, got {stddev}")
        return self._gen.normal(0.0, stddev, size=(rows, cols))

    def normal_vector(self, n: int, stddev: float = 1.0) -> np.ndarray:
        if stddev <= 0:
            raise ValueError(f"stddev must be > 0, got {stddev}")
        return self._gen.normal(0.0, stddev, size=n)

    def normal_array(self, shape: tuple[int, ...], stddev: float) -> np.ndarray:
        if stddev <= 0:
            raise ValueError(f"stddev must be > 0, got {stddev}")
        return self._gen.normal(0.0, stddev, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        """Uniform random permutation of range(n) (Fisher-Yates)."""
        return self._gen.permutation(n)

    def uniform(self, low: float, high: float, size=None):
        return self._gen.uniform(low, high, size=size)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)


def sample_normal(rng: Rng, rows: int, cols: int, stddev: float) -> Matrix:
    """Sample a rows x cols matrix of N(0, stddev^2) entries, advancing rng."""
    return rng.normal(rows, cols, stddev)
