"""Linear operators with matvec accounting.

Two backends are provided: a structured ``A = Sigma Pi F`` operator applied
in O(n log n) through a fast orthonormal transform, and a dense fallback
used mainly as a brute-force oracle.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import fft as sfft

from .errors import ConfigurationError, DimensionError

__all__ = [
    "MatvecCounter",
    "LinearOperator",
    "StructuredSpec",
    "StructuredOperator",
    "DenseOperator",
    "geometric_singulars",
    "build_structured",
    "build_dense",
    "apply_b",
]


class MatvecCounter:
    """Thread-safe monotone counter of operator applications."""

    def __init__(self):
        self._lock = threading.Lock()
        self._count = 0

    def increment(self, k=1):
        with self._lock:
            self._count += k

    @property
    def count(self):
        with self._lock:
            return self._count


class LinearOperator:
    """Abstract ``m x n`` operator with forward and adjoint application.

    Subclasses implement ``_forward`` and ``_adjoint``; the public
    ``apply``/``apply_adjoint`` validate lengths and bump the counter.
    """

    backend = "abstract"

    def __init__(self, m, n, field, counter=None):
        if m < 1 or n < 1:
            raise ConfigurationError(f"dimensions must be positive, got {m}x{n}")
        if field not in ("real", "complex"):
            raise ConfigurationError(f"unknown field {field!r}")
        self.m = int(m)
        self.n = int(n)
        self.field = field
        self.matvec_counter = counter if counter is not None else MatvecCounter()

    @property
    def dtype(self):
        return np.float64 if self.field == "real" else np.complex128

    @property
    def matvecs(self):
        return self.matvec_counter.count

    def apply(self, v):
        v = np.asarray(v)
        if v.shape != (self.n,):
            raise DimensionError(f"expected vector of length {self.n}, got shape {v.shape}")
        self.matvec_counter.increment()
        return self._forward(v)

    def apply_adjoint(self, u):
        u = np.asarray(u)
        if u.shape != (self.m,):
            raise DimensionError(f"expected vector of length {self.m}, got shape {u.shape}")
        self.matvec_counter.increment()
        return self._adjoint(u)

    def to_dense(self):
        """Materialize the matrix column by column (not counted)."""
        eye = np.eye(self.n, dtype=self.dtype)
        return np.stack([self._forward(eye[:, j]) for j in range(self.n)], axis=1)

    def _forward(self, v):
        raise NotImplementedError

    def _adjoint(self, u):
        raise NotImplementedError


def geometric_singulars(m, n, kappa):
    """Singular values with constant ratio ``kappa**(1/J)`` and ``sum(s**2) = n``."""
    if kappa < 1:
        raise ConfigurationError(f"kappa must be >= 1, got {kappa}")
    J = min(m, n)
    s = kappa ** (-np.arange(J) / J)
    s *= np.sqrt(n / np.sum(s**2))
    return s


@dataclass
class StructuredSpec:
    m: int
    n: int
    kappa: float
    transform: str = "dct"
    permutation_seed: int | None = 0
    singulars: np.ndarray | None = dc_field(default=None, repr=False)

    def __post_init__(self):
        self.transform = self.transform.lower()
        if self.singulars is None:
            self.singulars = geometric_singulars(self.m, self.n, self.kappa)
        self.singulars = np.asarray(self.singulars, dtype=np.float64)

    @property
    def field(self):
        return "real" if self.transform == "dct" else "complex"

    def eigenvalues(self):
        """Eigenvalues of ``A A^H`` (length m, zero-padded when m > n)."""
        lam = np.zeros(self.m)
        lam[: self.singulars.size] = self.singulars**2
        return lam


class StructuredOperator(LinearOperator):
    """``A = Sigma Pi F`` with F the orthonormal DCT-II (real) or unitary DFT."""

    backend = "structured"

    def __init__(self, spec, counter=None):
        if spec.transform not in ("dct", "dft"):
            raise ConfigurationError(f"unknown transform {spec.transform!r}")
        super().__init__(spec.m, spec.n, spec.field, counter)
        J = min(spec.m, spec.n)
        if spec.singulars.shape != (J,):
            raise ConfigurationError(f"expected {J} singular values, got {spec.singulars.shape}")
        self.spec = spec
        self.sigma = spec.singulars
        self._J = J
        if spec.permutation_seed is None:
            self.perm = np.arange(spec.n)
        else:
            self.perm = np.random.default_rng(spec.permutation_seed).permutation(spec.n)

    def _fwd_transform(self, v):
        if self.spec.transform == "dct":
            return sfft.dct(v, type=2, norm="ortho")
        return sfft.fft(v, norm="ortho")

    def _inv_transform(self, v):
        if self.spec.transform == "dct":
            return sfft.idct(v, type=2, norm="ortho")
        return sfft.ifft(v, norm="ortho")

    def _forward(self, v):
        w = self._fwd_transform(v)[self.perm]
        out = np.zeros(self.m, dtype=np.result_type(w.dtype, np.float64))
        out[: self._J] = self.sigma * w[: self._J]
        return out

    def _adjoint(self, u):
        w = np.zeros(self.n, dtype=np.result_type(u.dtype, np.float64))
        w[: self._J] = self.sigma * u[: self._J]
        v = np.empty_like(w)
        v[self.perm] = w
        return self._inv_transform(v)


class DenseOperator(LinearOperator):
    backend = "dense"

    def __init__(self, entries, counter=None):
        mat = np.asarray(entries)
        if mat.ndim != 2 or mat.size == 0:
            raise ConfigurationError("dense operator needs a non-empty 2-D matrix")
        field = "complex" if np.iscomplexobj(mat) else "real"
        super().__init__(mat.shape[0], mat.shape[1], field, counter)
        self.matrix = mat.astype(self.dtype)
        self._adj = self.matrix.conj().T

    def _forward(self, v):
        return self.matrix @ v

    def _adjoint(self, u):
        return self._adj @ u

    def to_dense(self):
        return self.matrix.copy()


def build_structured(spec, counter=None):
    if spec.m < 1 or spec.n < 1:
        raise ConfigurationError("dimensions must be positive")
    if spec.kappa < 1:
        raise ConfigurationError("kappa must be >= 1")
    return StructuredOperator(spec, counter)


def build_dense(entries, counter=None):
    try:
        mat = np.array(entries)
    except ValueError as exc:  # ragged nested sequences
        raise ConfigurationError(f"ragged matrix: {exc}") from None
    if mat.dtype == object:
        raise ConfigurationError("ragged matrix")
    return DenseOperator(mat, counter)


def apply_b(op, lambda_dag, v):
    """``(lambda_dag I - A A^H) v``; costs two matvecs."""
    v = np.asarray(v)
    if v.shape != (op.m,):
        raise DimensionError(f"expected vector of length {op.m}, got shape {v.shape}")
    return lambda_dag * v - op.apply(op.apply_adjoint(v))
