"""Kernel regression and linearized training dynamics under a fixed NTK."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from .kernels import KernelMatrix, NumericalError

__all__ = [
    "SingularKernelError",
    "UnstableStepError",
    "SpectralSummary",
    "RegressionFit",
    "eig_sym",
    "krr_fit",
    "predict",
    "analytic_dynamics",
    "classify",
    "one_hot",
]


class SingularKernelError(NumericalError):
    pass


class UnstableStepError(NumericalError, ValueError):
    pass


@dataclass(frozen=True)
class SpectralSummary:
    lambda_min: float
    lambda_max: float

    @property
    def eta_max(self) -> float:
        """Step-size bound ``2 / (lambda_min + lambda_max)``."""
        return 2.0 / (self.lambda_min + self.lambda_max)


@dataclass
class RegressionFit:
    coefficients: np.ndarray        # (N,) or (N, n_outputs) dual weights
    lam: float
    train_ids: Sequence = field(default_factory=tuple)


def _values(H):
    return H.values if isinstance(H, KernelMatrix) else np.asarray(H, dtype=float)


def _check_symmetric(h):
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {h.shape}")
    scale = max(1.0, float(np.max(np.abs(h)))) if h.size else 1.0
    if np.max(np.abs(h - h.T), initial=0.0) > 1e-12 * scale:
        raise ValueError("matrix is not symmetric")


def eig_sym(H):
    """Ascending eigenvalues, eigenvectors and the step-size summary of a symmetric kernel.

    Returns ``(summary, eigenvalues, eigenvectors)``.
    """
    h = _values(H)
    _check_symmetric(h)
    evals, evecs = np.linalg.eigh(h)
    return SpectralSummary(float(evals[0]), float(evals[-1])), evals, evecs


def _eig_solve(h, rhs):
    evals, evecs = np.linalg.eigh(h)
    tol = np.finfo(float).eps * max(h.shape) * max(abs(evals[-1]), abs(evals[0]))
    if evals[0] <= tol:
        cond = np.inf if evals[0] <= 0 else evals[-1] / evals[0]
        raise SingularKernelError(
            f"kernel system is singular or indefinite (lambda_min={evals[0]:.3g}, "
            f"condition estimate {cond:.3g})"
        )
    return evecs @ ((evecs.T @ rhs) / (evals[:, None] if rhs.ndim == 2 else evals))


def krr_fit(H, y, lam: float = 1e-8, train_ids=()) -> RegressionFit:
    """Solve ``(H + lam I) c = y``.

    Cholesky factorization plus one round of iterative refinement; when the
    factorization fails the solve falls back to an eigendecomposition and
    raises ``SingularKernelError`` if the system has no positive spectrum.
    ``y`` may be a vector or an (N, K) matrix of targets.
    """
    if lam < 0:
        raise ValueError("ridge strength must be non-negative")
    h = _values(H)
    _check_symmetric(h)
    y = np.asarray(y, dtype=float)
    if y.shape[0] != h.shape[0]:
        raise ValueError(f"{y.shape[0]} targets for a {h.shape[0]}x{h.shape[0]} kernel")
    a = h + lam * np.eye(h.shape[0])
    try:
        factor = scipy.linalg.cho_factor(a, lower=True, check_finite=True)
        c = scipy.linalg.cho_solve(factor, y)
        c = c + scipy.linalg.cho_solve(factor, y - a @ c)
    except np.linalg.LinAlgError:
        c = _eig_solve(a, y)
    if not np.all(np.isfinite(c)):
        raise SingularKernelError("kernel solve produced non-finite coefficients")
    return RegressionFit(c, float(lam), tuple(train_ids) or tuple(range(h.shape[0])))


def predict(fit: RegressionFit, H_cross) -> np.ndarray:
    """``H_cross @ coefficients`` where ``H_cross`` is the (test x train) kernel block."""
    return np.asarray(H_cross, dtype=float) @ fit.coefficients


def analytic_dynamics(H_train, H_cross, y, eta: float, tau, discrete: bool = False) -> np.ndarray:
    """Outputs of kernel gradient descent started from zero.

    Continuous time (default)::

        f(tau) = H_cross H^-1 (I - exp(-eta H tau)) y

    With ``discrete=True`` the factor ``exp(-eta H tau)`` becomes
    ``(I - eta H)^tau``, the exact trajectory of ``tau`` discrete gradient
    steps on the linearized model.

    ``tau`` may be a scalar or a 1-D array of times; the result has shape
    ``(n_test,)`` or ``(len(tau), n_test)``.
    """
    h = _values(H_train)
    summary, evals, evecs = eig_sym(h)
    if eta <= 0:
        raise ValueError("learning rate must be positive")
    if eta * summary.lambda_max >= 2.0:
        raise UnstableStepError(
            f"eta={eta} is unstable: eta * lambda_max = {eta * summary.lambda_max:.3g} >= 2"
        )
    if summary.lambda_min <= 0:
        raise SingularKernelError(f"training kernel is not positive definite (lambda_min={summary.lambda_min:.3g})")
    taus = np.atleast_1d(np.asarray(tau, dtype=float))
    if np.any(taus < 0):
        raise ValueError("tau must be non-negative")
    y = np.asarray(y, dtype=float)
    proj = evecs.T @ y
    if discrete:
        if np.any(taus != np.round(taus)):
            raise ValueError("discrete dynamics need integer step counts")
        decay = 1.0 - np.power((1.0 - eta * evals)[None, :], taus[:, None])
    else:
        decay = -np.expm1(-eta * taus[:, None] * evals[None, :])
    coef = (decay / evals[None, :] * proj[None, :]) @ evecs.T
    out = coef @ np.asarray(H_cross, dtype=float).T
    return out[0] if np.ndim(tau) == 0 else out


def one_hot(labels, n_classes: int | None = None) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    k = int(labels.max()) + 1 if n_classes is None else n_classes
    out = np.zeros((labels.shape[0], k))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def classify(fit: RegressionFit, H_cross, n_classes: int) -> np.ndarray:
    """Argmax over per-class regression scores; ties go to the lowest class index."""
    coef = fit.coefficients
    if coef.ndim != 2 or coef.shape[1] != n_classes:
        raise ValueError(
            f"fit has {coef.shape[1] if coef.ndim == 2 else 1} score columns, expected {n_classes}"
        )
    scores = predict(fit, H_cross)
    return np.argmax(scores, axis=1)
