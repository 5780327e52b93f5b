"""Damped Gauss-Newton (Levenberg-Marquardt) for weighted least squares.

Bounded parameters are handled by a smooth change of variables: the solver
works on unconstrained internal coordinates ``z`` and the model sees
``x = transform(z)``. Covariances are reported in the natural coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

_ZMAX = 300.0  # keeps squares of exp(z) finite


def _exp(z: float) -> float:
    return math.exp(min(max(z, -_ZMAX), _ZMAX))


class Transform(NamedTuple):
    to_internal: Callable[[float], float]
    from_internal: Callable[[float], float]
    derivative: Callable[[float], float]  # d from_internal / dz
    lower: float = -math.inf
    upper: float = math.inf


FREE = Transform(lambda x: x, lambda z: z, lambda z: 1.0)
POSITIVE = Transform(math.log, _exp, _exp, 0.0)
NONNEGATIVE = Transform(math.sqrt, lambda z: z * z, lambda z: 2.0 * z, 0.0)
UNIT = Transform(
    lambda x: math.asin(math.sqrt(min(max(x, 0.0), 1.0))),
    lambda z: math.sin(z) ** 2,
    lambda z: math.sin(2.0 * z),
    0.0,
    1.0,
)


def _snap(t: Transform, x: float, rel: float = 1e-6):
    """Internal coordinate of the bound that ``x`` is creeping toward, if it is closed and near."""
    span = t.upper - t.lower if math.isfinite(t.upper - t.lower) else max(abs(x), 1.0)
    for bound in (t.lower, t.upper):
        if math.isfinite(bound) and 0 < abs(x - bound) < rel * span:
            try:
                return t.to_internal(bound)
            except ValueError:  # open bound, e.g. log(0)
                return None
    return None


def projected_gradient(grad: np.ndarray, x: np.ndarray, transforms: Sequence[Transform], tol: float = 1e-9):
    """Zero the components that push against an active bound (first-order optimality on a box)."""
    g = np.array(grad, dtype=float)
    for i, t in enumerate(transforms):
        if x[i] <= t.lower + tol and g[i] > 0:
            g[i] = 0.0
        elif x[i] >= t.upper - tol and g[i] < 0:
            g[i] = 0.0
    return g


@dataclass
class LMResult:
    x: np.ndarray
    chi2: float
    jac: np.ndarray  # weighted Jacobian in natural coordinates at x
    grad_internal: np.ndarray
    n_iter: int
    converged: bool
    message: str


def levenberg_marquardt(
    residuals: Callable[[np.ndarray], np.ndarray],
    jacobian: Callable[[np.ndarray], np.ndarray],
    x0: Sequence[float],
    transforms: Sequence[Transform],
    max_iter: int = 200,
    xtol: float = 1e-9,
    gtol: float = 1e-9,
) -> LMResult:
    """Minimize ``sum(residuals(x)**2)``.

    ``residuals`` must already be weighted, i.e. (data - model) / sigma.
    ``jacobian`` returns d residuals / d x in natural coordinates.
    """
    to_int = [t.to_internal for t in transforms]
    from_int = [t.from_internal for t in transforms]
    d_int = [t.derivative for t in transforms]

    def natural(z):
        return np.array([f(v) for f, v in zip(from_int, z)])

    def internal_jac(z):
        x = natural(z)
        return jacobian(x) * np.array([f(v) for f, v in zip(d_int, z)])[None, :], x

    def nudge(i, x):
        # step a bounded coordinate off its bound so Gauss-Newton sees a slope again
        t = transforms[i]
        span = t.upper - t.lower if math.isfinite(t.upper - t.lower) else max(abs(x), 1.0)
        target = t.lower + 1e-4 * span if x <= t.lower + 1e-9 else t.upper - 1e-4 * span
        return to_int[i](target)

    z = np.array([f(v) for f, v in zip(to_int, x0)], dtype=float)
    r = residuals(natural(z))
    chi2 = float(r @ r)
    lam, nu = 1e-3, 2.0
    converged = False
    message = "maximum iterations reached"
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        J, x = internal_jac(z)
        g = J.T @ r
        # components resting on a bound: keep them there if the natural
        # gradient pushes outward, otherwise release them inward
        gx = jacobian(x).T @ r
        frozen = np.zeros(len(z), dtype=bool)
        for i, t in enumerate(transforms):
            snapped = _snap(t, x[i])
            if snapped is not None:
                z_try = z.copy()
                z_try[i] = snapped
                r_try = residuals(natural(z_try))
                if float(r_try @ r_try) <= chi2:
                    z, r, chi2 = z_try, r_try, float(r_try @ r_try)
                    J, x = internal_jac(z)
                    g = J.T @ r
                    gx = jacobian(x).T @ r
            at_lo = x[i] <= t.lower + 1e-9
            at_hi = x[i] >= t.upper - 1e-9
            if not (at_lo or at_hi):
                continue
            if (at_lo and gx[i] > 0) or (at_hi and gx[i] < 0):
                frozen[i] = True
            else:
                z_try = z.copy()
                z_try[i] = nudge(i, x[i])
                r_try = residuals(natural(z_try))
                if float(r_try @ r_try) <= chi2:
                    z, r, chi2 = z_try, r_try, float(r_try @ r_try)
                    J, x = internal_jac(z)
                    g = J.T @ r
                else:
                    frozen[i] = True
        free = ~frozen
        g_free = g[free]
        if np.max(np.abs(g_free), initial=0.0) <= gtol:
            converged, message = True, "gradient below tolerance"
            break
        A = J[:, free].T @ J[:, free]
        scale = np.maximum(np.diag(A), 1e-30)
        improved = False
        while lam < 1e16:
            try:
                step_free = np.linalg.solve(A + lam * np.diag(scale), -g_free)
            except np.linalg.LinAlgError:
                lam *= nu
                nu *= 2.0
                continue
            step = np.zeros_like(z)
            step[free] = step_free
            z_new = z + step
            with np.errstate(all="ignore"):
                r_new = residuals(natural(z_new))
                chi2_new = float(r_new @ r_new)
            # gain ratio: actual over predicted decrease of the linearized model
            predicted = float(step_free @ (lam * scale * step_free - g_free))
            if np.isfinite(chi2_new) and chi2_new <= chi2:
                rho = (chi2 - chi2_new) / predicted if predicted > 0 else 0.0
                lam *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
                lam = max(lam, 1e-15)
                nu = 2.0
                improved = True
                break
            lam *= nu
            nu *= 2.0
        if not improved:
            converged, message = True, "no further decrease possible"
            break
        small = np.all(np.abs(step) <= xtol * (np.abs(z) + xtol))
        z, r, chi2 = z_new, r_new, chi2_new
        if small:
            converged, message = True, "relative step below tolerance"
            break

    Jz, x = internal_jac(z)
    return LMResult(
        x=x,
        chi2=chi2,
        jac=jacobian(x),
        grad_internal=Jz.T @ r,
        n_iter=n_iter,
        converged=converged,
        message=message,
    )


def covariance(jac: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """Inverse curvature (J^T J)^-1, times ``scale``; singular directions get inf."""
    A = jac.T @ jac
    try:
        cov = np.linalg.inv(A)
        if not np.all(np.isfinite(cov)) or np.any(np.diag(cov) < 0):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(A)
        dead = np.abs(np.diag(A)) < 1e-300
        cov[dead, :] = cov[:, dead] = np.nan
        cov[dead, dead] = np.inf
    return cov * scale
