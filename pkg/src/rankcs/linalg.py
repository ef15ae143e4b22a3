"""Dense complex-matrix kernels shared by the estimation pipeline.

All routines operate on 2-D complex128 ndarrays. Vectorisation is
column-major throughout the package: vec(A X B) = (B^T kron A) vec(X).
"""

import numpy as np

# Guard against accidentally materialising huge Kronecker products.
KRON_MAX_ENTRIES = 4096 * 4096


class SvdConvergenceError(RuntimeError):
    """SVD failed to converge; carries the backend's iteration diagnostic."""

    def __init__(self, iterations):
        self.iterations = iterations
        super().__init__(f"SVD did not converge (backend cap {iterations} iterations)")


class SvdFactors:
    """Thin SVD m = left @ diag(singulars) @ right.conj().T."""

    __slots__ = ("left", "singulars", "right")

    def __init__(self, left, singulars, right):
        self.left = left
        self.singulars = singulars
        self.right = right

    def reconstruct(self):
        return (self.left * self.singulars) @ self.right.conj().T


def as_matrix(m, name="matrix"):
    """Validate and return a 2-D finite complex128 array."""
    a = np.asarray(m, dtype=np.complex128)
    if a.ndim != 2 or a.size == 0:
        raise ValueError(f"{name} must be a nonempty 2-D array, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError(f"{name} contains non-finite entries")
    return a


def svd(m):
    """Thin SVD with singular values sorted descending."""
    a = as_matrix(m)
    try:
        u, s, vh = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK rarely fails
        raise SvdConvergenceError(iterations=30 * max(a.shape)) from exc
    return SvdFactors(u, s, vh.conj().T)


def least_squares(a, b):
    """Minimum-norm x minimising ||a @ x - b||_F."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"row mismatch: a has {a.shape[0]}, b has {b.shape[0]}")
    x, _, _, _ = np.linalg.lstsq(a, b, rcond=None)
    return x


def pseudo_inverse(m, tol=1e-12):
    """Moore-Penrose pseudo-inverse; singular values below tol*sigma_max are zeroed."""
    a = as_matrix(m)
    return np.linalg.pinv(a, rcond=tol)


def kron(a, b, max_entries=KRON_MAX_ENTRIES):
    """Kronecker product with an output-size guard."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    rows = a.shape[0] * b.shape[0]
    cols = a.shape[1] * b.shape[1]
    if rows * cols > max_entries:
        raise ValueError(f"kron output {rows}x{cols} exceeds cap of {max_entries} entries")
    return np.kron(a, b)


def vec(m):
    """Column-major vectorisation as a 1-D array."""
    return np.asarray(m).flatten(order="F")


def unvec(v, rows, cols):
    """Inverse of :func:`vec`."""
    return np.asarray(v).reshape((rows, cols), order="F")


def numerical_rank(m, rel_tol=1e-8):
    """Count singular values above rel_tol times the largest."""
    s = np.linalg.svd(as_matrix(m), compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > rel_tol * s[0]))
