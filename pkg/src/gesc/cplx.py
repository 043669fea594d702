"""Complex vectors and matrices stored as paired real/imaginary float64 arrays.

Complex state is kept as two real arrays rather than ``complex128`` so that
every downstream consumer (gradient accumulation, serialization, verification
oracles) sees plain real numerics.  The operations here are the algebraic
bedrock of the network:

* conjugate-linear inner product  ``<u, v> = sum_k conj(u_k) v_k``
* global phase rotation           ``v -> e^{i phi} v``
* Tikhonov-regularized rank-1 projector onto an anchor ``a``::

      P_eps(a) x = (<a, x> / (||a||^2 + eps)) a

  whose single nonzero eigenvalue is ``lam = ||a||^2 / (||a||^2 + eps) < 1``,
  so ``P_eps`` is a strict contraction of the parallel component and the
  identity on the orthogonal complement.
* self-interference cancellation  ``x -> x - eta * P_eps(a) x`` which damps
  the component of ``x`` along ``a`` by the factor ``1 - eta * lam`` and
  leaves the orthogonal component untouched.

All functions validate dtype/shape eagerly and raise ``ValueError`` on
malformed input; nothing here silently casts or broadcasts across ranks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ComplexVector",
    "ComplexMatrix",
    "ProjectorHandle",
    "inner_product",
    "sqnorm",
    "norm2",
    "phase_rotate",
    "make_projector",
    "projector_eigenvalue",
    "project_parallel",
    "sic_apply",
    "to_complex",
    "from_complex",
]


def _check_pair(re: np.ndarray, im: np.ndarray, ndim: int, what: str) -> None:
    for name, arr in (("re", re), ("im", im)):
        if not isinstance(arr, np.ndarray):
            raise ValueError(f"{what}.{name} must be an ndarray, got {type(arr).__name__}")
        if arr.dtype != np.float64:
            raise ValueError(f"{what}.{name} must be float64, got {arr.dtype}")
        if arr.ndim != ndim:
            raise ValueError(f"{what}.{name} must have ndim {ndim}, got {arr.ndim}")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{what}.{name} contains non-finite entries")
    if re.shape != im.shape:
        raise ValueError(f"{what} re/im shapes differ: {re.shape} vs {im.shape}")


@dataclass(frozen=True)
class ComplexVector:
    """A length-d complex vector as paired real/imaginary float64 arrays."""

    re: np.ndarray
    im: np.ndarray

    def __post_init__(self) -> None:
        _check_pair(self.re, self.im, 1, "ComplexVector")

    @property
    def dim(self) -> int:
        return self.re.shape[0]

    def conj(self) -> "ComplexVector":
        return ComplexVector(self.re.copy(), -self.im)


@dataclass(frozen=True)
class ComplexMatrix:
    """A rows-by-cols complex matrix as paired real/imaginary float64 arrays."""

    re: np.ndarray
    im: np.ndarray

    def __post_init__(self) -> None:
        _check_pair(self.re, self.im, 2, "ComplexMatrix")

    @property
    def shape(self) -> tuple[int, int]:
        return self.re.shape


def to_complex(v: ComplexVector | ComplexMatrix) -> np.ndarray:
    """Interop/diagnostic helper: materialize as a complex128 array.

    Internal state never lives as complex128; this exists so tests and
    notebooks can lean on NumPy's complex algebra as an independent oracle.
    """
    return v.re + 1j * v.im


def from_complex(z: np.ndarray) -> ComplexVector | ComplexMatrix:
    """Split a complex128 (or real) array into the paired representation."""
    z = np.asarray(z)
    re = np.ascontiguousarray(np.real(z), dtype=np.float64)
    im = np.ascontiguousarray(np.imag(z), dtype=np.float64)
    if z.ndim == 1:
        return ComplexVector(re, im)
    if z.ndim == 2:
        return ComplexMatrix(re, im)
    raise ValueError(f"expected ndim 1 or 2, got {z.ndim}")


def inner_product(u: ComplexVector, v: ComplexVector) -> complex:
    """Conjugate-linear-in-the-first-argument inner product ``sum conj(u) v``."""
    if u.dim != v.dim:
        raise ValueError(f"dimension mismatch: {u.dim} vs {v.dim}")
    re = float(u.re @ v.re + u.im @ v.im)
    im = float(u.re @ v.im - u.im @ v.re)
    return complex(re, im)


def sqnorm(v: ComplexVector) -> float:
    """Squared Euclidean norm ``sum_k |v_k|^2``."""
    return float(v.re @ v.re + v.im @ v.im)


def norm2(v: ComplexVector) -> float:
    """Euclidean (l2) norm ``sqrt(sum_k |v_k|^2)``."""
    return float(np.sqrt(sqnorm(v)))


def phase_rotate(v: ComplexVector, phi: float) -> ComplexVector:
    """Rotate every entry by the global phase ``e^{i phi}``.

    Preserves the norm exactly up to float rounding: the map is an isometry.
    """
    c, s = float(np.cos(phi)), float(np.sin(phi))
    return ComplexVector(c * v.re - s * v.im, s * v.re + c * v.im)


@dataclass(frozen=True)
class ProjectorHandle:
    """Rank-1 Tikhonov projector ``P_eps(a) = a a^H / (||a||^2 + eps)``.

    Stores the anchor and its cached squared norm; ``apply`` cost is O(d) and
    the d-by-d matrix is never materialized.  ``epsilon`` must be positive so
    the handle is well defined even for a zero anchor (where it is the zero
    map).
    """

    anchor: ComplexVector
    epsilon: float
    sqnorm: float = field(init=False)

    def __post_init__(self) -> None:
        if not (self.epsilon > 0.0):
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        object.__setattr__(self, "sqnorm", sqnorm(self.anchor))


def make_projector(anchor: ComplexVector, epsilon: float) -> ProjectorHandle:
    return ProjectorHandle(anchor, float(epsilon))


def projector_eigenvalue(p: ProjectorHandle) -> float:
    """The single nonzero eigenvalue ``lam = ||a||^2 / (||a||^2 + eps)``.

    Always in ``[0, 1)``; applying the projector twice scales by ``lam``:
    ``P^2 = lam * P``.
    """
    return p.sqnorm / (p.sqnorm + p.epsilon)


def project_parallel(p: ProjectorHandle, x: ComplexVector) -> ComplexVector:
    """Apply ``P_eps(a)`` to ``x`` in O(d) via the inner-product form."""
    if x.dim != p.anchor.dim:
        raise ValueError(f"dimension mismatch: {x.dim} vs anchor {p.anchor.dim}")
    s = inner_product(p.anchor, x)
    coef = s / (p.sqnorm + p.epsilon)
    a = p.anchor
    return ComplexVector(
        coef.real * a.re - coef.imag * a.im,
        coef.real * a.im + coef.imag * a.re,
    )


def sic_apply(p: ProjectorHandle, eta: float, x: ComplexVector) -> ComplexVector:
    """Self-interference cancellation ``x - eta * P_eps(a) x``.

    For ``eta`` in [0, 1] the map is non-expansive: the parallel component is
    scaled by ``1 - eta * lam`` (a number in (0, 1]) and the orthogonal
    component passes through unchanged.
    """
    if not (0.0 <= eta <= 1.0):
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    par = project_parallel(p, x)
    return ComplexVector(x.re - eta * par.re, x.im - eta * par.im)
