"""Dense complex-matrix kernels used by every precoder.

Matrices and vectors are plain ``numpy.ndarray`` objects of dtype
``complex128``. ``as_cmatrix`` / ``as_cvector`` are the validating
constructors; everything else assumes its inputs went through them.

Besides the kernels themselves (Gram products, Hermitian positive-definite
inversion, trace and Frobenius reductions) the module exposes both sides of
the two algebraic identities the fast Wiener-filter path relies on, so they
can be checked against each other:

* the matrix inversion lemma,
  ``(H^H H + k I_B)^-1 H^H == H^H (H H^H + k I_U)^-1``
* the trace identity,
  ``tr(A^-1 G A^-1) == tr(A^-1) - k ||A^-1||_F^2`` for ``A = G + k I``.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .errors import InvalidInputError, NumericalError, SingularityError

CDTYPE = np.complex128


def as_cmatrix(a, name: str = "matrix") -> np.ndarray:
    """Return ``a`` as a finite, non-empty 2-D complex128 array."""
    m = np.asarray(a, dtype=CDTYPE)
    if m.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got shape {m.shape}")
    if m.size == 0:
        raise InvalidInputError(f"{name} has a zero dimension: {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidInputError(f"{name} contains NaN or Inf entries")
    return m


def as_cvector(v, name: str = "vector", length: int | None = None) -> np.ndarray:
    """Return ``v`` as a finite 1-D complex128 array, optionally of a fixed length."""
    x = np.asarray(v, dtype=CDTYPE)
    if x.ndim != 1:
        raise InvalidInputError(f"{name} must be 1-D, got shape {x.shape}")
    if length is not None and x.shape[0] != length:
        raise InvalidInputError(f"{name} has length {x.shape[0]}, expected {length}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError(f"{name} contains NaN or Inf entries")
    return x


def hermitian_part(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, -1, -2).conj())


def gram(H) -> np.ndarray:
    """Gram matrix ``G = H H^H``.

    Accepts a single ``U x B`` matrix or a stack ``(..., U, B)``. The result
    is symmetrized so that it is Hermitian to the last bit, which keeps the
    downstream Cholesky factorization well behaved.
    """
    H = np.asarray(H, dtype=CDTYPE)
    if H.ndim < 2 or H.shape[-1] == 0 or H.shape[-2] == 0:
        raise InvalidInputError(f"gram needs a non-empty matrix, got shape {H.shape}")
    if not np.all(np.isfinite(H)):
        raise InvalidInputError("channel contains NaN or Inf entries")
    G = H @ np.swapaxes(H, -1, -2).conj()
    return hermitian_part(G)


def regularize(G: np.ndarray, kappa: float) -> np.ndarray:
    """``G + kappa I`` for a square matrix or a stack of them."""
    n = G.shape[-1]
    return G + kappa * np.eye(n, dtype=CDTYPE)


def hpd_inverse(A) -> np.ndarray:
    """Explicit inverse of a Hermitian positive-definite matrix.

    Cholesky factorization followed by forward/backward substitution against
    the identity. The inverse is materialized (rather than kept as a factor)
    because callers need its trace and Frobenius norm.

    Raises
    ------
    SingularityError
        If ``A`` is not numerically positive definite.
    """
    A = as_cmatrix(A, "A")
    n, m = A.shape
    if n != m:
        raise InvalidInputError(f"hpd_inverse needs a square matrix, got {A.shape}")
    try:
        factor = scipy.linalg.cho_factor(A, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularityError(
            f"Cholesky factorization of {n}x{n} matrix failed ({exc}); "
            f"smallest diagonal entry {A.diagonal().real.min():.3e}"
        ) from exc
    inv = scipy.linalg.cho_solve(factor, np.eye(n, dtype=CDTYPE), check_finite=False)
    if not np.all(np.isfinite(inv)):
        raise NumericalError("inverse contains non-finite entries")
    return hermitian_part(inv)


def trace_and_frob(M) -> tuple[complex, float]:
    """Trace and squared Frobenius norm of a square matrix."""
    M = as_cmatrix(M, "matrix")
    if M.shape[0] != M.shape[1]:
        raise InvalidInputError(f"square matrix required, got {M.shape}")
    trace = complex(np.trace(M))
    frob_sq = float(np.sum(M.real**2 + M.imag**2))
    return trace, frob_sq


def q_by_inversion_lemma(H, kappa: float) -> np.ndarray:
    """``Q = H^H (H H^H + kappa I_U)^-1`` (the U x U inversion form)."""
    H = as_cmatrix(H, "H")
    if not kappa > 0:
        raise InvalidInputError(f"kappa must be > 0, got {kappa}")
    A_inv = hpd_inverse(regularize(gram(H), kappa))
    return H.conj().T @ A_inv


def q_direct(H, kappa: float) -> np.ndarray:
    """``Q = (H^H H + kappa I_B)^-1 H^H`` (the B x B inversion form)."""
    H = as_cmatrix(H, "H")
    if kappa < 0:
        raise InvalidInputError(f"kappa must be >= 0, got {kappa}")
    HhH = hermitian_part(H.conj().T @ H)
    return hpd_inverse(regularize(HhH, kappa)) @ H.conj().T


def searle_trace(A_inv, G, kappa: float) -> float:
    """``tr(A^-1) - kappa ||A^-1||_F^2``, equal to ``tr(A^-1 G A^-1)``.

    ``A_inv`` must be the inverse of ``G + kappa I``. ``G`` is not used in the
    arithmetic; it is accepted so the call mirrors the left-hand side.
    """
    A_inv = as_cmatrix(A_inv, "A_inv")
    G = as_cmatrix(G, "G")
    if G.shape != A_inv.shape:
        raise InvalidInputError(f"shape mismatch: G {G.shape} vs A_inv {A_inv.shape}")
    trace, frob_sq = trace_and_frob(A_inv)
    return trace.real - kappa * frob_sq


def searle_trace_direct(A_inv, G) -> float:
    """``tr(A^-1 G A^-1)`` by explicit multiplication."""
    A_inv = as_cmatrix(A_inv, "A_inv")
    G = as_cmatrix(G, "G")
    return float(np.trace(A_inv @ G @ A_inv).real)


def relative_frob_error(a: np.ndarray, b: np.ndarray) -> float:
    """``||a - b||_F / ||b||_F`` (absolute error when ``b`` is zero)."""
    denom = np.linalg.norm(b)
    err = np.linalg.norm(np.asarray(a) - np.asarray(b))
    return float(err / denom) if denom > 0 else float(err)
