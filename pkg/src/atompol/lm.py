"""Levenberg-Marquardt for small weighted least-squares problems."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class FitError(RuntimeError):
    def __init__(self, message, params=None):
        super().__init__(message)
        self.params = params


@dataclass
class LMResult:
    params: np.ndarray
    covariance: np.ndarray
    chi2: float
    dof: int
    jacobian: np.ndarray
    iterations: int
    at_bound: np.ndarray

    @property
    def chi2_per_dof(self):
        return self.chi2 / self.dof if self.dof > 0 else float("nan")


def numeric_jacobian(fun, p, rel_step=1e-6):
    """Central differences, step ``rel_step * |p_i|`` (``rel_step`` itself when p_i = 0)."""
    p = np.asarray(p, dtype=float)
    cols = []
    for i in range(p.size):
        step = rel_step * abs(p[i]) if p[i] != 0 else rel_step
        hi = p.copy()
        lo = p.copy()
        hi[i] += step
        lo[i] -= step
        cols.append((fun(hi) - fun(lo)) / (2.0 * step))
    return np.column_stack(cols)


def levenberg_marquardt(residuals, p0, jacobian=None, *, lower=None, upper=None,
                        rel_step=1e-6, max_iter=200, ftol=1e-13, xtol=1e-11,
                        lam0=1e-3) -> LMResult:
    """Minimize ``sum(residuals(p)**2)``.

    ``residuals`` must already be divided by the data sigmas so that the
    returned covariance ``inv(J^T J)`` is the 1-sigma parameter covariance.
    Parameters are clipped into ``[lower, upper]``; one sitting on a bound is
    held there while the gradient points outward.  ``at_bound`` flags those
    that end on a bound.
    """
    p = np.array(p0, dtype=float)
    n = p.size
    lower = np.full(n, -np.inf) if lower is None else np.asarray(lower, dtype=float)
    upper = np.full(n, np.inf) if upper is None else np.asarray(upper, dtype=float)
    p = np.clip(p, lower, upper)
    jac = jacobian if jacobian is not None else (lambda q: numeric_jacobian(residuals, q, rel_step))

    r = residuals(p)
    chi2 = float(r @ r)
    if not np.isfinite(chi2):
        raise FitError("non-finite residuals at the starting point", p)
    lam = lam0
    J = jac(p)
    for it in range(1, max_iter + 1):
        A = J.T @ J
        g = J.T @ r
        # parameters on a bound that the gradient pushes outward stay fixed
        free = ~(((p <= lower) & (g > 0)) | ((p >= upper) & (g < 0)))
        if not free.any():
            break
        Af, gf = A[np.ix_(free, free)], g[free]
        diag = np.where(np.diag(Af) > 0, np.diag(Af), 1.0)
        while True:
            try:
                step = np.zeros(n)
                step[free] = np.linalg.solve(Af + lam * np.diag(diag), -gf)
            except np.linalg.LinAlgError:
                lam *= 10.0
                if lam > 1e16:
                    raise FitError("singular normal equations", p) from None
                continue
            trial = np.clip(p + step, lower, upper)
            r_trial = residuals(trial)
            chi2_trial = float(r_trial @ r_trial)
            if np.isfinite(chi2_trial) and chi2_trial <= chi2:
                break
            lam *= 10.0
            if lam > 1e16:
                break
        if lam > 1e16:
            # no downhill step left: already at the minimum to machine precision
            break
        moved = np.abs(trial - p)
        small_step = np.all(moved <= xtol * (np.abs(p) + xtol))
        small_drop = (chi2 - chi2_trial) <= ftol * max(chi2, 1e-300)
        p, r, chi2 = trial, r_trial, chi2_trial
        J = jac(p)
        lam = max(lam / 10.0, 1e-12)
        if small_step or (small_drop and it > 1):
            break
    else:
        raise FitError(f"no convergence after {max_iter} iterations", p)

    try:
        cov = np.linalg.inv(J.T @ J)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(J.T @ J)
    at_bound = (p <= lower) | (p >= upper)
    return LMResult(params=p, covariance=cov, chi2=chi2, dof=r.size - n, jacobian=J,
                    iterations=it, at_bound=at_bound)
