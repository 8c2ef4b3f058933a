"""Statistical models, data-generating processes and priors.

Every per-observation function is vectorised.  ``log_density_one(data,
thetas)`` takes a dataset of ``n`` observations and an ``(m, p)`` stack of
parameter values and returns the ``(m, n)`` table of log densities, so a
whole parameter grid is evaluated in one call.  Scores and Hessians are
evaluated at a single ``(p,)`` parameter and return ``(n, p)`` and
``(n, p, p)`` arrays.

Built-in families are looked up by name through :func:`make_model`,
:func:`make_process` and :func:`make_prior`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Union

import numpy as np
from scipy import special, stats
from scipy.stats import qmc

from .errors import ConfigError, DomainError, NumericalError

DEFAULT_BOX_HALFWIDTH = 20.0
ORACLE_SEED = 20240611
ORACLE_LOG2_DRAWS = 20  # 2**20 = 1,048,576 draws
_CHUNK_ELEMENTS = 4_000_000

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """A parametric family ``f(x | theta)`` for i.i.d. observations.

    Attributes:
        name: Registry name.
        dim_p: Parameter dimension.
        log_density_one: ``(data, thetas[m, p]) -> (m, n)`` log densities.
        score_one: Optional ``(data, theta[p]) -> (n, p)`` per-observation
            gradient.  Central finite differences are used when absent.
        hessian_one: Optional ``(data, theta[p]) -> (n, p, p)``.
        theta_box: ``(p, 2)`` array of closed coordinate bounds.
        log_likelihood_fast: Optional ``(data, thetas[m, p]) -> (m,)``
            shortcut (sufficient statistics) for the summed log density.
        obs_shape: Shape of one observation, ``()`` for scalars.
        smooth: False when the log density has kinks (Hessian zero almost
            everywhere); curvature then comes from wide second differences.
    """

    name: str
    dim_p: int
    log_density_one: Callable[[np.ndarray, np.ndarray], np.ndarray]
    score_one: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    hessian_one: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    theta_box: Optional[np.ndarray] = None
    log_likelihood_fast: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    obs_shape: tuple = ()
    smooth: bool = True

    def __post_init__(self):
        if self.dim_p < 1:
            raise ConfigError(f"dim_p must be positive, got {self.dim_p}")
        box = self.theta_box
        if box is None:
            box = np.tile([-DEFAULT_BOX_HALFWIDTH, DEFAULT_BOX_HALFWIDTH], (self.dim_p, 1))
        box = np.asarray(box, dtype=float).reshape(self.dim_p, 2)
        if np.any(box[:, 0] >= box[:, 1]):
            raise ConfigError(f"degenerate theta_box {box.tolist()}")
        box.setflags(write=False)
        object.__setattr__(self, "theta_box", box)

    def inside(self, theta, strict: bool = False) -> bool:
        theta = np.asarray(theta, dtype=float).reshape(-1, self.dim_p)
        lo, hi = self.theta_box[:, 0], self.theta_box[:, 1]
        if strict:
            return bool(np.all((theta > lo) & (theta < hi)))
        return bool(np.all((theta >= lo) & (theta <= hi)))

    def check_inside(self, theta, strict: bool = False) -> np.ndarray:
        """Return ``theta`` as an ``(m, p)`` array or raise :class:`DomainError`."""
        arr = np.asarray(theta, dtype=float).reshape(-1, self.dim_p)
        if not self.inside(arr, strict=strict):
            lo, hi = self.theta_box[:, 0], self.theta_box[:, 1]
            bad = arr[~np.all((arr >= lo) & (arr <= hi), axis=1)]
            where = bad[0].tolist() if len(bad) else arr[0].tolist()
            raise DomainError(f"theta={where} outside the parameter box of model {self.name!r}")
        return arr


@dataclass(frozen=True, eq=False)
class TrueProcess:
    """An i.i.d. data-generating law.

    ``pseudo_true`` is either a known ``(p,)`` vector or the string
    ``"oracle"``; in the latter case :func:`pseudo_true_parameter` computes it.
    ``from_uniform`` maps ``(N, uniform_dim)`` points of the unit cube to
    observations (inverse-CDF sampling) and lets the oracle integrate with
    low-discrepancy points.  ``reference_sandwich`` holds analytic
    asymptotic MLE covariances keyed by model name.
    """

    name: str
    sampler: Callable[[int, int], np.ndarray]
    pseudo_true: Union[np.ndarray, str] = "oracle"
    from_uniform: Optional[Callable[[np.ndarray], np.ndarray]] = None
    uniform_dim: int = 1
    obs_shape: tuple = ()
    reference_sandwich: Mapping[str, np.ndarray] = field(default_factory=dict)

    @property
    def has_known_pseudo_true(self) -> bool:
        return not isinstance(self.pseudo_true, str)


@dataclass(frozen=True, eq=False)
class Prior:
    """A prior density; ``log_density`` maps ``(m, p)`` to ``(m,)``."""

    name: str
    dim_p: int
    log_density: Callable[[np.ndarray], np.ndarray]

    def __call__(self, thetas) -> np.ndarray:
        thetas = np.asarray(thetas, dtype=float).reshape(-1, self.dim_p)
        return self.log_density(thetas)


# ---------------------------------------------------------------------------
# Likelihood evaluation
# ---------------------------------------------------------------------------


def sample_data(process: TrueProcess, n: int, seed: int) -> np.ndarray:
    """Draw ``n`` observations; identical output for identical ``(n, seed)``."""
    if int(n) != n or n < 1:
        raise ConfigError(f"sample size must be a positive integer, got {n!r}")
    return process.sampler(int(n), int(seed))


def _as_thetas(model: ModelSpec, thetas) -> np.ndarray:
    return np.asarray(thetas, dtype=float).reshape(-1, model.dim_p)


def log_likelihood_many(model: ModelSpec, thetas, data: np.ndarray) -> np.ndarray:
    """Summed log likelihood at each row of ``thetas``; returns shape ``(m,)``."""
    thetas = model.check_inside(thetas)
    if model.log_likelihood_fast is not None:
        return np.asarray(model.log_likelihood_fast(data, thetas), dtype=float)
    n = len(data)
    step = max(1, _CHUNK_ELEMENTS // max(n, 1))
    out = np.empty(len(thetas))
    for start in range(0, len(thetas), step):
        block = model.log_density_one(data, thetas[start:start + step])
        out[start:start + step] = block.sum(axis=1)
    return out


def log_likelihood(model: ModelSpec, theta, data: np.ndarray) -> float:
    """``sum_i log f(x_i | theta)`` for i.i.d. data.

    Raises:
        DomainError: ``theta`` lies outside the model's parameter box.
    """
    value = float(log_likelihood_many(model, theta, data)[0])
    return value


def score_matrix(model: ModelSpec, data: np.ndarray, theta) -> np.ndarray:
    """Per-observation scores ``(n, p)``; central differences when no analytic score."""
    theta = model.check_inside(theta)[0]
    if model.score_one is not None:
        return np.asarray(model.score_one(data, theta), dtype=float).reshape(len(data), model.dim_p)
    return fd_score(model, data, theta)


def fd_score(model: ModelSpec, data: np.ndarray, theta) -> np.ndarray:
    """Central finite-difference score with step ``1e-5 * max(1, |theta_j|)``."""
    theta = np.asarray(theta, dtype=float).reshape(model.dim_p)
    p = model.dim_p
    steps = 1e-5 * np.maximum(1.0, np.abs(theta))
    probes = np.empty((2 * p, p))
    for j in range(p):
        probes[2 * j] = theta
        probes[2 * j + 1] = theta
        probes[2 * j, j] += steps[j]
        probes[2 * j + 1, j] -= steps[j]
    table = model.log_density_one(data, probes)
    grads = np.empty((len(data), p))
    for j in range(p):
        grads[:, j] = (table[2 * j] - table[2 * j + 1]) / (2.0 * steps[j])
    return grads


def score_consistency_error(model: ModelSpec, process: TrueProcess, n_probes: int = 100,
                            seed: int = 0, spread: float = 2.0) -> float:
    """Largest relative gap between the analytic score and central differences.

    Probes pair one fresh observation with a parameter drawn uniformly within
    ``spread`` of the process's pseudo-true value.  The gap is measured as
    ``|analytic - fd| / max(1, |analytic|)``.
    """
    if model.score_one is None:
        return 0.0
    rng = np.random.default_rng(seed)
    centre = (np.asarray(process.pseudo_true, dtype=float).reshape(model.dim_p)
              if process.has_known_pseudo_true else np.zeros(model.dim_p))
    data = sample_data(process, n_probes, seed)
    worst = 0.0
    for i in range(n_probes):
        theta = centre + rng.uniform(-spread, spread, size=model.dim_p)
        theta = np.clip(theta, model.theta_box[:, 0], model.theta_box[:, 1])
        x = data[i:i + 1]
        exact = np.asarray(model.score_one(x, theta)).reshape(model.dim_p)
        approx = fd_score(model, x, theta).reshape(model.dim_p)
        err = np.max(np.abs(exact - approx) / np.maximum(1.0, np.abs(exact)))
        worst = max(worst, float(err))
    return worst


# ---------------------------------------------------------------------------
# Pseudo-true parameter oracle
# ---------------------------------------------------------------------------


def _oracle_draws(process: TrueProcess) -> np.ndarray:
    n_draws = 2 ** ORACLE_LOG2_DRAWS
    if process.from_uniform is None:
        return process.sampler(n_draws, ORACLE_SEED)
    sobol = qmc.Sobol(d=process.uniform_dim, scramble=True, seed=ORACLE_SEED)
    u = sobol.random_base2(m=ORACLE_LOG2_DRAWS)
    # Keep the unit-cube points away from 0 and 1 so inverse CDFs stay finite.
    u = np.clip(u, 1e-15, 1.0 - 1e-15)
    return process.from_uniform(u)


def _expected_log_density(model: ModelSpec, draws: np.ndarray, thetas: np.ndarray) -> np.ndarray:
    thetas = np.asarray(thetas, dtype=float).reshape(-1, model.dim_p)
    step = max(1, _CHUNK_ELEMENTS // len(draws))
    out = np.empty(len(thetas))
    for start in range(0, len(thetas), step):
        block = model.log_density_one(draws, thetas[start:start + step])
        out[start:start + step] = block.mean(axis=1)
    return out


def golden_section_max(fun: Callable[[float], float], lo: float, hi: float,
                       tol: float = 1e-10, max_iter: int = 500) -> float:
    """Maximise a unimodal scalar function on ``[lo, hi]``."""
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = float(lo), float(hi)
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = fun(d)
    return 0.5 * (a + b)


def pseudo_true_parameter(process: TrueProcess, model: ModelSpec,
                          grid_step: Optional[float] = None, tol: float = 1e-7) -> np.ndarray:
    """KL-closest parameter: argmax over the box of ``E_0[log f(x | theta)]``.

    The expectation is a sample average over ``2**20`` scrambled Sobol points
    pushed through the process's inverse CDF (plain draws with a fixed seed
    when no inverse CDF is available).  A dense grid over the box is scored
    on a balanced prefix of the points, then each coordinate is refined by
    golden-section search on the full set until the iterate moves less than
    ``tol``.

    Raises:
        NumericalError: the objective is non-finite somewhere on the grid.
    """
    draws = _oracle_draws(process)
    p = model.dim_p
    if grid_step is None:
        grid_step = 1e-2 if p == 1 else 0.5
    prefix = draws[: 2 ** (14 if p == 1 else 12)]
    axes = [np.arange(lo, hi + 0.5 * grid_step, grid_step) for lo, hi in model.theta_box]
    axes = [ax[ax <= hi] for ax, (lo, hi) in zip(axes, model.theta_box)]
    mesh = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=1)
    with np.errstate(all="ignore"):
        values = _expected_log_density(model, prefix, mesh)
    bad = ~np.isfinite(values)
    if bad.any():
        raise NumericalError(
            f"expected log density is not finite at theta={mesh[bad][0].tolist()} "
            f"({process.name!r} vs {model.name!r})")
    theta = mesh[int(np.argmax(values))].copy()

    def objective(t: np.ndarray) -> float:
        return float(_expected_log_density(model, draws, t)[0])

    width = np.full(p, 2.0 * grid_step)
    for _cycle in range(50):
        previous = theta.copy()
        for j in range(p):
            lo = max(theta[j] - width[j], model.theta_box[j, 0])
            hi = min(theta[j] + width[j], model.theta_box[j, 1])

            def along(v, j=j):
                t = theta.copy()
                t[j] = v
                return objective(t)

            theta[j] = golden_section_max(along, lo, hi, tol=tol / 10.0)
        moved = np.abs(theta - previous)
        if p == 1 or np.max(moved) < tol:
            break
        width = np.maximum(4.0 * moved, 10.0 * tol)
    return theta


# ---------------------------------------------------------------------------
# Built-in models
# ---------------------------------------------------------------------------


def _gaussian_location(sigma: float = 1.0) -> ModelSpec:
    s2 = float(sigma) ** 2
    const = -0.5 * LOG_2PI - math.log(sigma)

    def logpdf(x, thetas):
        x = np.asarray(x, dtype=float).reshape(-1)
        return const - 0.5 * (x[None, :] - thetas[:, 0:1]) ** 2 / s2

    def score(x, theta):
        x = np.asarray(x, dtype=float).reshape(-1)
        return ((x - theta[0]) / s2)[:, None]

    def hess(x, theta):
        return np.full((len(x), 1, 1), -1.0 / s2)

    def fast(x, thetas):
        x = np.asarray(x, dtype=float).reshape(-1)
        n = len(x)
        xbar = x.mean()
        ss = np.sum((x - xbar) ** 2)
        return n * const - 0.5 * (ss + n * (xbar - thetas[:, 0]) ** 2) / s2

    return ModelSpec("gaussian_location", 1, logpdf, score, hess,
                     log_likelihood_fast=fast)


def _gaussian_location_2d(sigma: float = 1.0) -> ModelSpec:
    s2 = float(sigma) ** 2
    const = 2 * (-0.5 * LOG_2PI - math.log(sigma))

    def logpdf(x, thetas):
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        diff = x[None, :, :] - thetas[:, None, :]
        return const - 0.5 * np.sum(diff ** 2, axis=2) / s2

    def score(x, theta):
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        return (x - theta[None, :]) / s2

    def hess(x, theta):
        return np.broadcast_to(-np.eye(2) / s2, (len(x), 2, 2)).copy()

    def fast(x, thetas):
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        n = len(x)
        xbar = x.mean(axis=0)
        ss = np.sum((x - xbar) ** 2)
        return n * const - 0.5 * (ss + n * np.sum((xbar[None, :] - thetas) ** 2, axis=1)) / s2

    return ModelSpec("gaussian_location_2d", 2, logpdf, score, hess,
                     log_likelihood_fast=fast, obs_shape=(2,))


def _laplace_location(scale: float = 1.0) -> ModelSpec:
    b = float(scale)
    const = -math.log(2.0 * b)

    def logpdf(x, thetas):
        x = np.asarray(x, dtype=float).reshape(-1)
        return const - np.abs(x[None, :] - thetas[:, 0:1]) / b

    def score(x, theta):
        x = np.asarray(x, dtype=float).reshape(-1)
        return (np.sign(x - theta[0]) / b)[:, None]

    return ModelSpec("laplace_location", 1, logpdf, score, smooth=False)


def _logistic_regression() -> ModelSpec:
    """Scalar-coefficient logistic regression; an observation is ``(x, y)``."""

    def logpdf(obs, thetas):
        obs = np.asarray(obs, dtype=float).reshape(-1, 2)
        eta = thetas[:, 0:1] * obs[None, :, 0]
        y = obs[None, :, 1]
        return y * eta - np.logaddexp(0.0, eta)

    def score(obs, theta):
        obs = np.asarray(obs, dtype=float).reshape(-1, 2)
        x, y = obs[:, 0], obs[:, 1]
        return (x * (y - special.expit(theta[0] * x)))[:, None]

    def hess(obs, theta):
        obs = np.asarray(obs, dtype=float).reshape(-1, 2)
        x = obs[:, 0]
        mu = special.expit(theta[0] * x)
        return (-(x ** 2) * mu * (1.0 - mu))[:, None, None]

    return ModelSpec("logistic_regression", 1, logpdf, score, hess, obs_shape=(2,))


MODELS: dict[str, Callable[..., ModelSpec]] = {
    "gaussian_location": _gaussian_location,
    "gaussian_location_2d": _gaussian_location_2d,
    "laplace_location": _laplace_location,
    "logistic_regression": _logistic_regression,
}


# ---------------------------------------------------------------------------
# Built-in processes
# ---------------------------------------------------------------------------


def _gaussian_process(loc: float = 0.0, scale: float = 1.0) -> TrueProcess:
    def sampler(n, seed):
        return np.random.default_rng(seed).normal(loc, scale, size=n)

    def inv(u):
        return loc + scale * special.ndtri(u[:, 0])

    return TrueProcess("gaussian", sampler, np.array([float(loc)]), inv, 1,
                       reference_sandwich={"gaussian_location": np.array([[scale ** 2]])})


def _laplace_process(loc: float = 0.0, scale: float = 1.0) -> TrueProcess:
    def sampler(n, seed):
        return np.random.default_rng(seed).laplace(loc, scale, size=n)

    def inv(u):
        return stats.laplace.ppf(u[:, 0], loc=loc, scale=scale)

    return TrueProcess("laplace", sampler, np.array([float(loc)]), inv, 1,
                       reference_sandwich={"gaussian_location": np.array([[2.0 * scale ** 2]])})


def _student_t_process(df: float = 5.0, loc: float = 0.0, scale: float = 1.0) -> TrueProcess:
    if df <= 1:
        raise ConfigError("student_t process needs df > 1 for a finite mean")

    def sampler(n, seed):
        return loc + scale * np.random.default_rng(seed).standard_t(df, size=n)

    def inv(u):
        return loc + scale * special.stdtrit(df, u[:, 0])

    reference = {}
    if df > 2:
        reference["gaussian_location"] = np.array([[scale ** 2 * df / (df - 2.0)]])
    return TrueProcess("student_t", sampler, np.array([float(loc)]), inv, 1,
                       reference_sandwich=reference)


def _logistic_process(beta: float = 1.0, covariate_scale: float = 1.0) -> TrueProcess:
    """Covariates ``x ~ N(0, covariate_scale^2)``, labels ``y ~ Bernoulli(expit(beta x))``."""

    def sampler(n, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(0.0, covariate_scale, size=n)
        y = (rng.random(n) < special.expit(beta * x)).astype(float)
        return np.column_stack([x, y])

    def inv(u):
        x = covariate_scale * special.ndtri(u[:, 0])
        y = (u[:, 1] < special.expit(beta * x)).astype(float)
        return np.column_stack([x, y])

    return TrueProcess("logistic", sampler, np.array([float(beta)]), inv, 2, obs_shape=(2,))


def _gaussian_2d_process(mean=(0.5, -0.3), scale: float = 1.0) -> TrueProcess:
    mean = np.asarray(mean, dtype=float).reshape(2)

    def sampler(n, seed):
        return mean + scale * np.random.default_rng(seed).standard_normal((n, 2))

    def inv(u):
        return mean + scale * special.ndtri(u)

    return TrueProcess("gaussian_2d", sampler, mean.copy(), inv, 2, obs_shape=(2,),
                       reference_sandwich={"gaussian_location_2d": scale ** 2 * np.eye(2)})


def _laplace_2d_process(mean=(0.5, -0.3), scale: float = 1.0) -> TrueProcess:
    mean = np.asarray(mean, dtype=float).reshape(2)

    def sampler(n, seed):
        return mean + np.random.default_rng(seed).laplace(0.0, scale, size=(n, 2))

    def inv(u):
        return mean + stats.laplace.ppf(u, scale=scale)

    return TrueProcess("laplace_2d", sampler, mean.copy(), inv, 2, obs_shape=(2,),
                       reference_sandwich={"gaussian_location_2d": 2.0 * scale ** 2 * np.eye(2)})


PROCESSES: dict[str, Callable[..., TrueProcess]] = {
    "gaussian": _gaussian_process,
    "laplace": _laplace_process,
    "student_t": _student_t_process,
    "logistic": _logistic_process,
    "gaussian_2d": _gaussian_2d_process,
    "laplace_2d": _laplace_2d_process,
}


# ---------------------------------------------------------------------------
# Built-in priors
# ---------------------------------------------------------------------------


def _normal_prior(dim_p: int, loc=0.0, scale=10.0) -> Prior:
    loc = np.broadcast_to(np.asarray(loc, dtype=float), (dim_p,)).copy()
    scale = np.broadcast_to(np.asarray(scale, dtype=float), (dim_p,)).copy()
    if np.any(scale <= 0):
        raise ConfigError("normal prior scale must be positive")
    const = float(np.sum(-0.5 * LOG_2PI - np.log(scale)))

    def logpdf(thetas):
        return const - 0.5 * np.sum(((thetas - loc) / scale) ** 2, axis=1)

    return Prior("normal", dim_p, logpdf)


def _student_t_prior(dim_p: int, df=1.0, loc=0.0, scale=1.0) -> Prior:
    loc = np.broadcast_to(np.asarray(loc, dtype=float), (dim_p,)).copy()
    scale = np.broadcast_to(np.asarray(scale, dtype=float), (dim_p,)).copy()

    def logpdf(thetas):
        return np.sum(stats.t.logpdf(thetas, df, loc=loc, scale=scale), axis=1)

    return Prior("student_t", dim_p, logpdf)


def _uniform_prior(dim_p: int, low=-DEFAULT_BOX_HALFWIDTH, high=DEFAULT_BOX_HALFWIDTH) -> Prior:
    low = np.broadcast_to(np.asarray(low, dtype=float), (dim_p,)).copy()
    high = np.broadcast_to(np.asarray(high, dtype=float), (dim_p,)).copy()
    if np.any(high <= low):
        raise ConfigError("uniform prior needs high > low")
    const = -float(np.sum(np.log(high - low)))

    def logpdf(thetas):
        inside = np.all((thetas >= low) & (thetas <= high), axis=1)
        return np.where(inside, const, -np.inf)

    return Prior("uniform", dim_p, logpdf)


PRIORS: dict[str, Callable[..., Prior]] = {
    "normal": _normal_prior,
    "student_t": _student_t_prior,
    "uniform": _uniform_prior,
}


def _build(registry, kind, name, *args, **params):
    try:
        factory = registry[name]
    except KeyError:
        known = ", ".join(sorted(registry))
        raise ConfigError(f"unknown {kind} {name!r}; known: {known}") from None
    try:
        return factory(*args, **params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {kind} {name!r}: {exc}") from None


def make_model(name: str, **params) -> ModelSpec:
    return _build(MODELS, "model", name, **params)


def make_process(name: str, **params) -> TrueProcess:
    return _build(PROCESSES, "process", name, **params)


def make_prior(name: str, dim_p: int = 1, **params) -> Prior:
    return _build(PRIORS, "prior", name, dim_p, **params)


def check_compatible(process: TrueProcess, model: ModelSpec) -> None:
    if tuple(process.obs_shape) != tuple(model.obs_shape):
        raise ConfigError(
            f"process {process.name!r} produces observations of shape {process.obs_shape}, "
            f"model {model.name!r} expects {model.obs_shape}")
    if process.has_known_pseudo_true:
        theta = np.asarray(process.pseudo_true, dtype=float)
        if theta.size != model.dim_p:
            raise ConfigError(f"pseudo-true value of {process.name!r} has dimension {theta.size}, "
                              f"model {model.name!r} has {model.dim_p}")
        if not model.inside(theta, strict=True):
            raise ConfigError(f"pseudo-true {theta.tolist()} is not interior to the box of {model.name!r}")


def prior_positivity_margin(prior: Prior, theta_star, delta: float = 0.5,
                            n_points: int = 1000, seed: int = 0) -> float:
    """Smallest prior density over random points of the ``delta``-ball around ``theta_star``."""
    theta_star = np.asarray(theta_star, dtype=float).reshape(prior.dim_p)
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal((n_points, prior.dim_p))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    radius = delta * rng.random(n_points) ** (1.0 / prior.dim_p)
    points = theta_star + direction * radius[:, None]
    points = np.vstack([theta_star[None, :], points])
    return float(np.min(np.exp(prior(points))))


# ---------------------------------------------------------------------------
# Dataset text format: one observation per line, whitespace separated.
# ---------------------------------------------------------------------------


def save_dataset(path, data: np.ndarray) -> None:
    data = np.asarray(data, dtype=float)
    rows = data.reshape(len(data), -1)
    lines = [" ".join(repr(float(v)) for v in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path, obs_shape: tuple = ()) -> np.ndarray:
    try:
        data = np.loadtxt(path, dtype=float, ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read dataset {path}: {exc}") from None
    if obs_shape == ():
        if data.shape[1] != 1:
            raise ConfigError(f"dataset {path} has {data.shape[1]} columns, expected 1")
        return data[:, 0].copy()
    return data.reshape((len(data),) + tuple(obs_shape))
