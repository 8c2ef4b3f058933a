"""MLE, curvature and sandwich matrices, and the limiting Gaussian."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.special import gamma as gamma_fn

from .errors import ConvergenceError, CurvatureError, NonUniqueMleError
from .model import ModelSpec, golden_section_max, log_likelihood_many, score_matrix
from .posterior import GridDensity, check_same_axes, gaussian_log_density, tabulate

HESSIAN_REL_STEP = 1e-4
MLE_AGREEMENT = 1e-6


@dataclass(frozen=True, eq=False)
class MleFit:
    theta_hat: np.ndarray
    log_lik_at_max: float
    delta: Optional[np.ndarray]
    converged: bool
    iterations: int
    method: str = "newton"


@dataclass(frozen=True, eq=False)
class CurvatureEstimates:
    """Per-observation curvature ``V``, score covariance ``M`` and sandwich ``V^-1 M V^-1``."""

    V: np.ndarray
    M: np.ndarray
    V_tilde: np.ndarray
    estimated_at: np.ndarray
    method: str

    def to_json(self) -> str:
        return json.dumps({
            "V": np.asarray(self.V).tolist(),
            "M": np.asarray(self.M).tolist(),
            "V_tilde": np.asarray(self.V_tilde).tolist(),
            "estimated_at": np.asarray(self.estimated_at).tolist(),
            "method": self.method,
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CurvatureEstimates":
        raw = json.loads(text)
        return cls(np.array(raw["V"]), np.array(raw["M"]), np.array(raw["V_tilde"]),
                   np.array(raw["estimated_at"]), raw["method"])


@dataclass(frozen=True, eq=False)
class LimitingGaussian:
    mean: np.ndarray
    covariance: np.ndarray
    frame: str
    theta_star: Optional[np.ndarray] = None
    n: Optional[int] = None

    def __post_init__(self):
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
            raise CurvatureError("limiting covariance is not symmetric")
        if np.linalg.eigvalsh(cov).min() <= 0:
            raise CurvatureError("limiting covariance is not positive definite")
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float).reshape(len(cov)))

    def tabulate(self, axes) -> GridDensity:
        return tabulate(axes, lambda pts: gaussian_log_density(pts, self.mean, self.covariance),
                        self.frame, self.theta_star, self.n, normalize=False)


# ---------------------------------------------------------------------------
# Derivatives
# ---------------------------------------------------------------------------


def total_gradient(model: ModelSpec, data, theta) -> np.ndarray:
    return score_matrix(model, data, theta).sum(axis=0)


def fd_hessian(model: ModelSpec, data, theta) -> np.ndarray:
    """Central-difference Hessian of the log likelihood, step ``1e-4 * max(1, |theta_j|)``.

    Differences the analytic score when the model has one, otherwise takes
    second differences of the log likelihood itself.  Near the box edge the
    step shrinks so every probe stays inside.
    """
    theta = np.asarray(theta, dtype=float).reshape(model.dim_p)
    p = model.dim_p
    room = np.minimum(theta - model.theta_box[:, 0], model.theta_box[:, 1] - theta)
    h = np.minimum(HESSIAN_REL_STEP * np.maximum(1.0, np.abs(theta)), 0.5 * room)
    H = np.empty((p, p))
    if model.score_one is not None:
        for j in range(p):
            e = np.zeros(p)
            e[j] = h[j]
            H[:, j] = (total_gradient(model, data, theta + e)
                       - total_gradient(model, data, theta - e)) / (2 * h[j])
        return 0.5 * (H + H.T)
    f0 = log_likelihood_many(model, theta, data)[0]
    for i in range(p):
        for j in range(i, p):
            ei = np.zeros(p)
            ej = np.zeros(p)
            ei[i] = h[i]
            ej[j] = h[j]
            if i == j:
                fp, fm = log_likelihood_many(model, np.stack([theta + ei, theta - ei]), data)
                H[i, i] = (fp - 2 * f0 + fm) / h[i] ** 2
            else:
                pts = np.stack([theta + ei + ej, theta + ei - ej, theta - ei + ej, theta - ei - ej])
                fpp, fpm, fmp, fmm = log_likelihood_many(model, pts, data)
                H[i, j] = H[j, i] = (fpp - fpm - fmp + fmm) / (4 * h[i] * h[j])
    return H


# ---------------------------------------------------------------------------
# MLE
# ---------------------------------------------------------------------------


def secant_hessian(model: ModelSpec, data, theta, step: float) -> np.ndarray:
    """Second differences of the log-likelihood with a wide step, for kinked likelihoods."""
    theta = np.asarray(theta, dtype=float).reshape(model.dim_p)
    p = model.dim_p
    eye = np.eye(p) * step
    probes = [theta]
    for i in range(p):
        probes += [theta + eye[i], theta - eye[i]]
        for j in range(i + 1, p):
            probes += [theta + eye[i] + eye[j], theta + eye[i] - eye[j],
                       theta - eye[i] + eye[j], theta - eye[i] - eye[j]]
    vals = iter(log_likelihood_many(model, np.array(probes), data))
    f0 = next(vals)
    H = np.zeros((p, p))
    for i in range(p):
        fp, fm = next(vals), next(vals)
        H[i, i] = (fp - 2 * f0 + fm) / step ** 2
        for j in range(i + 1, p):
            fpp, fpm, fmp, fmm = next(vals), next(vals), next(vals), next(vals)
            H[i, j] = H[j, i] = (fpp - fpm - fmp + fmm) / (4 * step ** 2)
    return H


class _NewtonFailure(Exception):
    pass


def _newton(model: ModelSpec, data, theta0: np.ndarray, max_iter: int):
    lo, hi = model.theta_box[:, 0], model.theta_box[:, 1]
    theta = theta0.copy()
    f = log_likelihood_many(model, theta, data)[0]
    for it in range(1, max_iter + 1):
        g = total_gradient(model, data, theta)
        H = fd_hessian(model, data, theta)
        if not np.all(np.isfinite(H)) or np.linalg.eigvalsh(H).max() >= 0:
            raise _NewtonFailure("Hessian is not negative definite")
        step = -np.linalg.solve(H, g)
        # stay strictly inside the box
        t = 1.0
        with np.errstate(divide="ignore", invalid="ignore"):
            room = np.where(step > 0, (hi - theta) / step, np.where(step < 0, (lo - theta) / step, np.inf))
        t = min(t, 0.99 * float(np.min(room)))
        while True:
            cand = theta + t * step
            fc = log_likelihood_many(model, cand, data)[0]
            if np.isfinite(fc) and fc >= f - 1e-12 * max(1.0, abs(f)):
                break
            t *= 0.5
            if t < 1e-12:
                raise _NewtonFailure("line search failed")
        moved = np.max(np.abs(cand - theta))
        theta, f = cand, fc
        if moved <= 1e-10 * max(1.0, float(np.max(np.abs(theta)))):
            g = total_gradient(model, data, theta)
            if np.linalg.norm(g) <= 1e-6 * max(1.0, abs(f)):
                return theta, f, it
            raise _NewtonFailure("stalled away from a stationary point")
    raise _NewtonFailure(f"no convergence in {max_iter} iterations")


def _golden_1d(model: ModelSpec, data, theta0: np.ndarray, tol: float = 1e-10):
    lo_box, hi_box = model.theta_box[0]

    def fun(v):
        return float(log_likelihood_many(model, np.array([v]), data)[0])

    x0 = float(theta0[0])
    d = 0.1 * max(1.0, abs(x0))
    f0 = fun(x0)
    right = min(x0 + d, hi_box)
    left = max(x0 - d, lo_box)
    fr, fl = fun(right), fun(left)
    evals = 3
    if fr <= f0 and fl <= f0:
        a, b = left, right
    else:
        direction = 1.0 if fr > fl else -1.0
        a, b, fb = x0, (right if direction > 0 else left), max(fr, fl)
        while True:
            d *= 2.0
            c = min(max(b + direction * d, lo_box), hi_box)
            fc = fun(c)
            evals += 1
            if fc < fb or c in (lo_box, hi_box):
                a, b = sorted((a, c))
                break
            a, b, fb = b, c, fc
    x = golden_section_max(fun, a, b, tol=tol)
    return np.array([x]), fun(x), evals


def fit_mle(model: ModelSpec, data, start=None, theta_star=None, n_starts: int = 5,
            max_iter: int = 200, seed: int = 0, allow_plateau: bool = False) -> MleFit:
    """Maximise the log likelihood from ``n_starts`` jittered starting points.

    Each start runs a safeguarded Newton iteration (finite-difference
    Hessian, box-respecting backtracking).  For one-parameter models a
    failed Newton run falls back to bracketing plus golden-section search.

    Raises:
        ConvergenceError: a start did not converge, or the optimum sits on
            the boundary of the parameter box (e.g. separable logistic data).
        NonUniqueMleError: the starts disagree by more than ``1e-6``.  With
            ``allow_plateau`` the midpoint is returned instead when all starts
            reach the same log-likelihood (Laplace location with even ``n``).
    """
    p = model.dim_p
    if start is None:
        start = np.clip(np.zeros(p), model.theta_box[:, 0], model.theta_box[:, 1])
    start = model.check_inside(start, strict=True)[0]
    rng = np.random.default_rng(seed)
    starts = [start]
    width = model.theta_box[:, 1] - model.theta_box[:, 0]
    for _ in range(n_starts - 1):
        jitter = rng.normal(0.0, 0.5 * np.maximum(1.0, np.abs(start)))
        starts.append(np.clip(start + jitter, model.theta_box[:, 0] + 0.01 * width,
                              model.theta_box[:, 1] - 0.01 * width))
    fits = []
    for s in starts:
        try:
            theta, f, it = _newton(model, data, s, max_iter)
            fits.append((theta, f, it, "newton"))
        except _NewtonFailure as exc:
            if p != 1:
                raise ConvergenceError(f"Newton failed for {model.name!r}: {exc}") from None
            theta, f, it = _golden_1d(model, data, s)
            fits.append((theta, f, it, "golden"))
    thetas = np.array([f[0] for f in fits])
    spread = float(np.max(np.abs(thetas - thetas[0])))
    best = max(fits, key=lambda f: f[1])
    theta_hat = best[0]
    margin = 1e-3 * width
    if np.any(theta_hat <= model.theta_box[:, 0] + margin) or np.any(theta_hat >= model.theta_box[:, 1] - margin):
        raise ConvergenceError(f"MLE for {model.name!r} runs to the parameter-box boundary "
                               f"({theta_hat.tolist()}); the maximiser is likely at infinity")
    if spread > MLE_AGREEMENT:
        values = np.array([f[1] for f in fits])
        flat = np.ptp(values) <= 1e-9 * max(1.0, abs(best[1]))
        if not (allow_plateau and flat):
            raise NonUniqueMleError(f"restarts disagree by {spread:.3g}: {thetas.ravel().tolist()}",
                                    candidates=thetas)
        # every start reached the same log-likelihood: a flat top, report its midpoint
        theta_hat = 0.5 * (thetas.min(axis=0) + thetas.max(axis=0))
        best = (theta_hat, float(log_likelihood_many(model, theta_hat, data)[0]), best[2], "plateau_midpoint")
    delta = None
    if theta_star is not None:
        delta = math.sqrt(len(data)) * (theta_hat - np.asarray(theta_star, dtype=float).reshape(p))
    return MleFit(theta_hat, float(best[1]), delta, True, int(sum(f[2] for f in fits)), best[3])


# ---------------------------------------------------------------------------
# Curvature and sandwich
# ---------------------------------------------------------------------------


def estimate_curvature(model: ModelSpec, data, at, method: str = "auto") -> CurvatureEstimates:
    """``V = -(1/n) d^2 log f_n``, ``M = (1/n) sum_i s_i s_i^T`` and ``V^-1 M V^-1`` at ``at``.

    ``method="auto"`` uses the model's analytic Hessian when it has one,
    ``"secant"`` (second differences of the log-likelihood with step
    ``n^{-1/2}``) for models flagged non-smooth, and central differences of
    the score otherwise.

    Raises:
        CurvatureError: ``V`` is not positive definite.
    """
    at = model.check_inside(at, strict=True)[0]
    n = len(data)
    if method == "auto":
        if model.hessian_one is not None:
            method = "analytic"
        else:
            method = "finite_difference" if model.smooth else "secant"
    if method == "analytic":
        if model.hessian_one is None:
            raise ValueError(f"model {model.name!r} has no analytic Hessian")
        H = np.asarray(model.hessian_one(data, at)).sum(axis=0)
    elif method == "finite_difference":
        H = fd_hessian(model, data, at)
    elif method == "secant":
        H = secant_hessian(model, data, at, 1.0 / math.sqrt(n))
    else:
        raise ValueError(f"unknown curvature method {method!r}")
    V = -0.5 * (H + H.T) / n
    eig = np.linalg.eigvalsh(V)
    if not np.all(np.isfinite(eig)) or eig.min() <= 0:
        raise CurvatureError(f"curvature of {model.name!r} at {at.tolist()} is not positive "
                             f"definite (eigenvalues {eig.tolist()})")
    S = score_matrix(model, data, at)
    M = S.T @ S / n
    V_inv = np.linalg.inv(V)
    V_tilde = V_inv @ M @ V_inv
    V_tilde = 0.5 * (V_tilde + V_tilde.T)
    return CurvatureEstimates(V, M, V_tilde, at, method)


def limiting_gaussian(fit: MleFit, curv: CurvatureEstimates, alpha: float, n: int,
                      frame: str = "theta", theta_star=None) -> LimitingGaussian:
    """Gaussian centred at the MLE with covariance ``V^-1 / (alpha n)``.

    In the ``"h"`` frame the mean is ``sqrt(n) (theta_hat - theta_star)``
    and the covariance ``V^-1 / alpha``.
    """
    if not alpha > 0 or n < 1:
        raise ValueError("alpha must be positive and n >= 1")
    V_inv = np.linalg.inv(curv.V)
    V_inv = 0.5 * (V_inv + V_inv.T)
    if frame == "theta":
        return LimitingGaussian(fit.theta_hat, V_inv / (alpha * n), "theta")
    if frame != "h":
        raise ValueError(f"unknown frame {frame!r}")
    if theta_star is None:
        if fit.delta is None:
            raise ValueError("h-frame limit needs theta_star")
        delta = fit.delta
        theta_star = fit.theta_hat - delta / math.sqrt(n)
    else:
        theta_star = np.asarray(theta_star, dtype=float).reshape(-1)
        delta = math.sqrt(n) * (fit.theta_hat - theta_star)
    return LimitingGaussian(delta, V_inv / alpha, "h", theta_star, int(n))


def gaussian_abs_moment(cov_diag, k: int, alpha: float) -> float:
    """``2^{3k/2-1} p^{k/2-1} Gamma((k+1)/2) / sqrt(pi) * sum_i (cov_diag_i / alpha)^{k/2}``.

    Equals ``2^{k-1} p^{k/2-1} sum_i E|Y_i|^k`` for ``Y ~ N(0, diag(cov_diag) / alpha)``.
    For ``k >= 2`` (or ``p = 1``) it bounds ``E ||Y||_2^k`` from above; for
    ``k = 1`` and ``p > 1`` it falls below ``E ||Y||_2``.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    d = np.asarray(cov_diag, dtype=float).reshape(-1)
    p = len(d)
    lead = 2.0 ** (1.5 * k - 1) * p ** (0.5 * k - 1) / math.sqrt(math.pi) * gamma_fn(0.5 * (k + 1))
    return float(lead * np.sum((d / alpha) ** (0.5 * k)))


def tensor_moment_distance_corollary(post: GridDensity, lim: Union[LimitingGaussian, GridDensity],
                                     k: int, n: int, theta_star) -> float:
    """``integral n^{k/2} ||theta - theta_star||_1^k |post - lim| dtheta`` on the posterior grid."""
    if k not in (1, 2):
        raise ValueError("k must be 1 or 2")
    if post.frame != "theta":
        raise ValueError("expected a theta-frame posterior")
    if isinstance(lim, LimitingGaussian):
        if lim.frame != "theta":
            raise ValueError("expected a theta-frame limiting Gaussian")
        lim = lim.tabulate(post.axes)
    check_same_axes(post, lim)
    theta_star = np.asarray(theta_star, dtype=float).reshape(post.p)
    l1 = np.sum(np.abs(post.points - theta_star), axis=1).reshape(post.shape)
    weight = n ** (0.5 * k) * l1 ** k
    return float(np.sum(post.weights * weight * np.abs(post.density - lim.density)))
