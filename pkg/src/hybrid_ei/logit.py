"""Additive log-ratio map between row simplexes and the stacked unconstrained vector.

Abstain (the last choice) is the reference category. For R rows and C choices
the stacked vector has length R*(C-1), race-major.
"""

from __future__ import annotations

import numpy as np


def to_omega(rows) -> np.ndarray:
    """Map an R x C array of row probabilities to the stacked log-ratio vector."""
    p = np.atleast_2d(np.asarray(rows, dtype=float))
    if (p <= 0).any() or not np.isfinite(p).all():
        raise ValueError("log-ratio transform needs strictly positive probabilities")
    if not np.allclose(p.sum(axis=1), 1.0, rtol=0, atol=1e-9):
        raise ValueError("each row must sum to 1")
    return np.log(p[:, :-1] / p[:, -1:]).ravel()


def to_theta(omega, n_choices: int) -> np.ndarray:
    """Inverse of :func:`to_omega`; returns an R x C array of row probabilities."""
    w = np.asarray(omega, dtype=float).reshape(-1, n_choices - 1)
    z = np.concatenate([w, np.zeros((w.shape[0], 1))], axis=1)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_theta(omega, n_choices: int) -> np.ndarray:
    """Row-wise log-probabilities, R x C, computed without forming theta."""
    w = np.asarray(omega, dtype=float).reshape(-1, n_choices - 1)
    z = np.concatenate([w, np.zeros((w.shape[0], 1))], axis=1)
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax + np.log(np.exp(z - zmax).sum(axis=1, keepdims=True))
    return z - lse


def log_target_omega(omega, cell_counts, mu, sigma_inv) -> float:
    """Unnormalized log density of one unit's log-ratio vector given its cell counts.

    Multinomial log-likelihood of the counts under theta(omega) plus the normal
    log-density of omega, both written directly in omega coordinates, so no
    Jacobian term appears.
    """
    n = np.asarray(cell_counts, dtype=float)
    if n.ndim != 2:
        raise ValueError("cell_counts must be an R x C matrix")
    omega = np.asarray(omega, dtype=float)
    R, C = n.shape
    if omega.shape != (R * (C - 1),) or np.shape(mu) != omega.shape:
        raise ValueError("omega, mu and the counts disagree on dimension")
    if np.shape(sigma_inv) != (omega.size, omega.size):
        raise ValueError("sigma_inv has the wrong shape")
    d = omega - np.asarray(mu, dtype=float)
    return float((n * log_theta(omega, C)).sum() - 0.5 * d @ np.asarray(sigma_inv) @ d)


def grad_log_target_omega(omega, cell_counts, mu, sigma_inv) -> np.ndarray:
    """Analytic gradient of :func:`log_target_omega` with respect to omega."""
    n = np.asarray(cell_counts, dtype=float)
    R, C = n.shape
    theta = to_theta(omega, C)
    # d/dw_rc of sum_c' n_rc' log theta_rc' = n_rc - N_r * theta_rc
    g = n[:, :-1] - n.sum(axis=1, keepdims=True) * theta[:, :-1]
    d = np.asarray(omega, dtype=float) - np.asarray(mu, dtype=float)
    return g.ravel() - np.asarray(sigma_inv) @ d
