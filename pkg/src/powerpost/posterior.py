"""Power posteriors tabulated on rectangular grids.

The posterior ``pi(theta) ~ f_n(X | theta)^alpha * prior(theta)`` is stored as
log values on a tensor grid with trapezoid weights.  Grids live either in the
parameter frame (``"theta"``) or in local coordinates
``h = sqrt(n) (theta - theta_star)`` (``"h"``), where densities pick up the
Jacobian factor ``n^{-p/2}``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import (ConfigError, DomainError, GridTooNarrowError,
                     MixingError, NumericalError)
from .model import ModelSpec, Prior, log_likelihood_many

FRAMES = ("theta", "h")
EDGE_MASS_LIMIT = 1e-6


@dataclass(frozen=True)
class AlphaConfig:
    """Tempering power and grid layout.

    ``nodes_per_dim=None`` picks 4001 nodes for one parameter and 301 per
    axis for two.
    """

    alpha: float
    grid_halfwidth_se: float = 12.0
    nodes_per_dim: Optional[int] = None

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if not self.grid_halfwidth_se > 0:
            raise ConfigError("grid_halfwidth_se must be positive")
        if self.nodes_per_dim is not None and (self.nodes_per_dim < 3 or self.nodes_per_dim % 2 == 0):
            raise ConfigError(f"nodes_per_dim must be odd and >= 3, got {self.nodes_per_dim}")

    def nodes(self, p: int) -> int:
        if self.nodes_per_dim is not None:
            return self.nodes_per_dim
        return {1: 4001, 2: 301}.get(p, 61)


def trapezoid_weights(axis: np.ndarray) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    gaps = np.diff(axis)
    w = np.zeros_like(axis)
    w[:-1] += 0.5 * gaps
    w[1:] += 0.5 * gaps
    return w


@dataclass(frozen=True, eq=False)
class GridDensity:
    """Log density tabulated at the nodes of a tensor grid.

    ``log_values`` has shape ``tuple(len(a) for a in axes)`` with ``ij``
    indexing.  In the ``"h"`` frame ``theta_star`` and ``n`` record the
    change of variables.
    """

    axes: tuple
    log_values: np.ndarray
    frame: str = "theta"
    theta_star: Optional[np.ndarray] = None
    n: Optional[int] = None

    def __post_init__(self):
        axes = tuple(np.asarray(a, dtype=float).copy() for a in self.axes)
        for a in axes:
            if a.ndim != 1 or len(a) < 2 or np.any(np.diff(a) <= 0):
                raise ValueError("grid axes must be strictly increasing 1-d sequences")
            a.setflags(write=False)
        lv = np.asarray(self.log_values, dtype=float).copy()
        shape = tuple(len(a) for a in axes)
        if lv.shape != shape:
            lv = lv.reshape(shape)
        if not np.all(np.isfinite(lv)):
            raise NumericalError("log density is not finite at every grid node")
        lv.setflags(write=False)
        if self.frame not in FRAMES:
            raise ValueError(f"frame must be one of {FRAMES}, got {self.frame!r}")
        star = None if self.theta_star is None else np.asarray(self.theta_star, dtype=float).reshape(len(axes))
        if self.frame == "h" and (star is None or self.n is None):
            raise ValueError("h-frame grids need theta_star and n")
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "log_values", lv)
        object.__setattr__(self, "theta_star", star)

    @property
    def p(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple:
        return self.log_values.shape

    @cached_property
    def weights(self) -> np.ndarray:
        w = trapezoid_weights(self.axes[0])
        for a in self.axes[1:]:
            w = np.multiply.outer(w, trapezoid_weights(a))
        return w

    @cached_property
    def points(self) -> np.ndarray:
        """Grid nodes as an ``(N, p)`` array, in ``log_values.ravel()`` order."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @cached_property
    def density(self) -> np.ndarray:
        return np.exp(self.log_values)

    def mass(self) -> float:
        return float(np.sum(self.weights * self.density))

    def integrate(self, values) -> float:
        """Trapezoid integral of ``values * density``; ``values`` broadcast to the grid shape."""
        return float(np.sum(self.weights * self.density * np.asarray(values)))

    def norms(self, ord: float = 2) -> np.ndarray:
        return np.linalg.norm(self.points, ord=ord, axis=1).reshape(self.shape)

    def same_axes(self, other: "GridDensity", rtol: float = 1e-12) -> bool:
        if self.p != other.p or self.shape != other.shape:
            return False
        return all(np.allclose(a, b, rtol=rtol, atol=rtol) for a, b in zip(self.axes, other.axes))


def check_same_axes(a: GridDensity, b: GridDensity) -> None:
    if not a.same_axes(b):
        raise ValueError("grid densities are tabulated on different axes")


def tabulate(axes: Sequence[np.ndarray], log_fn: Callable[[np.ndarray], np.ndarray],
             frame: str = "theta", theta_star=None, n=None, normalize: bool = True) -> GridDensity:
    """Evaluate ``log_fn`` on ``(N, p)`` grid nodes and wrap it as a :class:`GridDensity`."""
    shape = tuple(len(a) for a in axes)
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    lv = np.asarray(log_fn(pts), dtype=float).reshape(shape)
    if normalize:
        w = trapezoid_weights(axes[0])
        for a in axes[1:]:
            w = np.multiply.outer(w, trapezoid_weights(a))
        lv = lv - logsumexp(lv, b=w)
    return GridDensity(tuple(axes), lv, frame, theta_star, n)


def gaussian_log_density(points: np.ndarray, mean, cov) -> np.ndarray:
    mean = np.asarray(mean, dtype=float).reshape(-1)
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    chol = np.linalg.cholesky(cov)
    z = np.linalg.solve(chol, (points - mean).T)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (len(mean) * math.log(2 * math.pi) + logdet) - 0.5 * np.sum(z ** 2, axis=0)


def tabulate_gaussian(axes, mean, cov, frame: str = "theta", theta_star=None, n=None) -> GridDensity:
    """Exact Gaussian density values at the nodes (no renormalisation on the grid)."""
    return tabulate(axes, lambda pts: gaussian_log_density(pts, mean, cov),
                    frame, theta_star, n, normalize=False)


# ---------------------------------------------------------------------------
# The alpha-posterior
# ---------------------------------------------------------------------------


def log_unnormalized_posterior_many(model: ModelSpec, prior: Prior, data, cfg: AlphaConfig,
                                    thetas) -> np.ndarray:
    thetas = model.check_inside(thetas)
    return cfg.alpha * log_likelihood_many(model, thetas, data) + prior(thetas)


def log_unnormalized_posterior(model: ModelSpec, prior: Prior, data, cfg: AlphaConfig, theta) -> float:
    """``alpha * log f_n(X | theta) + log prior(theta)``.

    Raises:
        DomainError: ``theta`` outside the model's parameter box.
    """
    return float(log_unnormalized_posterior_many(model, prior, data, cfg, theta)[0])


def curvature_scale(model: ModelSpec, data, center) -> np.ndarray:
    """Per-observation curvature used to size grids and proposals."""
    from .asymptotics import estimate_curvature

    return estimate_curvature(model, data, center).V


def posterior_axes(model: ModelSpec, data, cfg: AlphaConfig, center=None, V=None) -> tuple:
    """Grid axes centred at the MLE with halfwidth ``grid_halfwidth_se`` limiting standard errors.

    Axes are clipped to the parameter box; the edge-mass check in
    :func:`normalize_on_grid` catches posteriors that the clipping cuts off.
    """
    if center is None:
        from .asymptotics import fit_mle
        center = fit_mle(model, data, allow_plateau=True).theta_hat
    center = np.asarray(center, dtype=float).reshape(model.dim_p)
    if V is None:
        V = curvature_scale(model, data, center)
    n = len(data)
    se = np.sqrt(np.diag(np.linalg.inv(np.atleast_2d(V))) / (cfg.alpha * n))
    nodes = cfg.nodes(model.dim_p)
    axes = []
    for j in range(model.dim_p):
        half = cfg.grid_halfwidth_se * se[j]
        box_lo, box_hi = model.theta_box[j]
        if not box_lo < center[j] < box_hi:
            raise DomainError(f"grid centre {center[j]:.6g} for coordinate {j} is outside "
                              f"the parameter box of {model.name!r}")
        lo, hi = max(center[j] - half, box_lo), min(center[j] + half, box_hi)
        axes.append(np.linspace(lo, hi, nodes))
    return tuple(axes)


def edge_cell_mass(g: GridDensity) -> float:
    """Largest probability mass in a first or last cell along any axis."""
    dens = g.weights * g.density
    worst = 0.0
    for j, axis in enumerate(g.axes):
        other = tuple(i for i in range(g.p) if i != j)
        # marginal along axis j integrated over the others
        w_j = trapezoid_weights(axis)
        marginal = dens.sum(axis=other) / w_j if other else dens / w_j
        gaps = np.diff(axis)
        first = 0.5 * gaps[0] * (marginal[0] + marginal[1])
        last = 0.5 * gaps[-1] * (marginal[-1] + marginal[-2])
        worst = max(worst, float(first), float(last))
    return worst


def normalize_on_grid(model: ModelSpec, prior: Prior, data, cfg: AlphaConfig,
                      center=None, V=None) -> GridDensity:
    """Tabulate and normalise the alpha-posterior in the parameter frame.

    Args:
        center: grid centre; the MLE by default.
        V: per-observation curvature sizing the grid; estimated at ``center``
            by default.

    Raises:
        GridTooNarrowError: more than ``1e-6`` of the mass sits in an
            outermost grid cell.
    """
    axes = posterior_axes(model, data, cfg, center, V)
    with np.errstate(over="ignore", invalid="ignore"):
        g = tabulate(axes, lambda pts: log_unnormalized_posterior_many(model, prior, data, cfg, pts))
    edge = edge_cell_mass(g)
    if edge > EDGE_MASS_LIMIT:
        raise GridTooNarrowError(
            f"{edge:.3g} of the posterior mass lies in an outermost grid cell; "
            f"increase grid_halfwidth_se (currently {cfg.grid_halfwidth_se})")
    return g


def to_lan_frame(post: GridDensity, theta_star, n: int) -> GridDensity:
    """Rescale a parameter-frame density to ``h = sqrt(n) (theta - theta_star)``."""
    if post.frame != "theta":
        raise ValueError("to_lan_frame expects a theta-frame grid")
    theta_star = np.asarray(theta_star, dtype=float).reshape(post.p)
    root = math.sqrt(n)
    axes = tuple(root * (a - t) for a, t in zip(post.axes, theta_star))
    lv = post.log_values - 0.5 * post.p * math.log(n)
    return GridDensity(axes, lv, "h", theta_star, int(n))


def from_lan_frame(g: GridDensity) -> GridDensity:
    """Inverse of :func:`to_lan_frame`."""
    if g.frame != "h":
        raise ValueError("from_lan_frame expects an h-frame grid")
    root = math.sqrt(g.n)
    axes = tuple(a / root + t for a, t in zip(g.axes, g.theta_star))
    lv = g.log_values + 0.5 * g.p * math.log(g.n)
    return GridDensity(axes, lv, "theta")


def grid_moment(g: GridDensity, k: float, max_order: Optional[float] = None) -> float:
    """``integral ||x||_2^k g(x) dx`` over the tabulated coordinates.

    ``max_order`` guards against requesting orders beyond what the tail
    assumption covers (``2 k0 (1 + gamma)``).
    """
    if k < 0:
        raise ValueError(f"moment order must be non-negative, got {k}")
    if max_order is not None and k > max_order:
        raise ValueError(f"moment order {k} exceeds the configured maximum {max_order}")
    if k == 0:
        return g.mass()
    return g.integrate(g.norms(2) ** k)


def grid_mean(g: GridDensity) -> np.ndarray:
    dens = g.weights * g.density
    return np.array([np.sum(dens * g.points[:, j].reshape(g.shape)) for j in range(g.p)])


def grid_covariance(g: GridDensity) -> np.ndarray:
    """Central second moment (computed around the grid mean, not by ``E[x^2] - E[x]^2``)."""
    dens = (g.weights * g.density).ravel()
    centred = g.points - grid_mean(g)
    return (centred * dens[:, None]).T @ centred


# ---------------------------------------------------------------------------
# Random-walk Metropolis cross-check
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MetropolisChain:
    samples: np.ndarray
    acceptance_rate: float
    proposal_scale: np.ndarray
    burn_in: int

    def mean(self) -> np.ndarray:
        return self.samples.mean(axis=0)

    def standard_error(self, n_batches: int = 50) -> np.ndarray:
        """Batch-means standard error of the chain mean."""
        usable = len(self.samples) - len(self.samples) % n_batches
        batches = self.samples[:usable].reshape(n_batches, -1, self.samples.shape[1]).mean(axis=1)
        return batches.std(axis=0, ddof=1) / math.sqrt(n_batches)


def sample_posterior(model: ModelSpec, prior: Prior, data, cfg: AlphaConfig, chain_length: int,
                     seed: int, start=None, initial_scale=None, batch: int = 100) -> MetropolisChain:
    """Random-walk Metropolis on the alpha-posterior.

    The first 20% of the chain is burn-in: after every ``batch`` steps the
    proposal scale is multiplied by ``exp(2 (acc - 0.3))`` (clipped to
    ``[0.5, 2]``), steering acceptance into ``[0.2, 0.5]``.  The scale is then
    frozen and only post-burn-in draws are returned.

    Raises:
        MixingError: post-burn-in acceptance outside ``[0.05, 0.95]``.
    """
    if chain_length < 10_000:
        raise ConfigError(f"chain_length must be at least 10000, got {chain_length}")
    rng = np.random.default_rng(seed)
    p = model.dim_p
    n = len(data)
    if start is None:
        from .asymptotics import fit_mle
        start = fit_mle(model, data, allow_plateau=True).theta_hat
    theta = np.asarray(start, dtype=float).reshape(p).copy()
    if initial_scale is None:
        V = curvature_scale(model, data, theta)
        sd = np.sqrt(np.diag(np.linalg.inv(V)) / (cfg.alpha * n))
        initial_scale = 2.4 / math.sqrt(p) * sd
    scale = np.broadcast_to(np.asarray(initial_scale, dtype=float), (p,)).copy()
    lo, hi = model.theta_box[:, 0], model.theta_box[:, 1]

    def logpost(t):
        if np.any(t < lo) or np.any(t > hi):
            return -np.inf
        return log_unnormalized_posterior(model, prior, data, cfg, t)

    current = logpost(theta)
    if not np.isfinite(current):
        raise NumericalError(f"posterior density vanishes at the chain start {theta.tolist()}")
    burn = chain_length // 5
    kept = chain_length - burn
    out = np.empty((kept, p))
    steps = rng.standard_normal((chain_length, p))
    logu = np.log(rng.random(chain_length))
    accepted_batch = 0
    accepted_kept = 0
    for i in range(chain_length):
        proposal = theta + scale * steps[i]
        cand = logpost(proposal)
        if logu[i] < cand - current:
            theta, current = proposal, cand
            if i < burn:
                accepted_batch += 1
            else:
                accepted_kept += 1
        if i < burn:
            if (i + 1) % batch == 0:
                rate = accepted_batch / batch
                scale *= float(np.clip(math.exp(2.0 * (rate - 0.3)), 0.5, 2.0))
                accepted_batch = 0
        else:
            out[i - burn] = theta
    rate = accepted_kept / kept
    if not 0.05 <= rate <= 0.95:
        raise MixingError(f"acceptance rate {rate:.3f} after adaptation (scale {scale.tolist()})")
    return MetropolisChain(out, rate, scale, burn)


# ---------------------------------------------------------------------------
# CSV serialisation
# ---------------------------------------------------------------------------


def write_grid_csv(g: GridDensity, path) -> None:
    """One row per node: coordinates then ``log_value``, after a ``#``-prefixed JSON header."""
    meta = {"frame": g.frame, "shape": list(g.shape),
            "theta_star": None if g.theta_star is None else g.theta_star.tolist(), "n": g.n}
    prefix = "theta" if g.frame == "theta" else "h"
    cols = [f"{prefix}_{j}" for j in range(g.p)] + ["log_value"]
    lines = ["#" + json.dumps(meta, sort_keys=True), ",".join(cols)]
    for pt, lv in zip(g.points, g.log_values.ravel()):
        lines.append(",".join(repr(float(v)) for v in (*pt, lv)))
    Path(path).write_text("\n".join(lines) + "\n")


def read_grid_csv(path) -> GridDensity:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("#"):
        raise ConfigError(f"{path}: missing grid metadata header")
    meta = json.loads(text[0][1:])
    table = np.array([[float(v) for v in line.split(",")] for line in text[2:] if line])
    shape = tuple(meta["shape"])
    p = len(shape)
    coords = table[:, :p]
    axes = []
    for j in range(p):
        stride = int(np.prod(shape[j + 1:]))
        axes.append(coords[::stride, j][: shape[j]])
    return GridDensity(tuple(axes), table[:, p].reshape(shape), meta["frame"],
                       meta["theta_star"], meta["n"])
