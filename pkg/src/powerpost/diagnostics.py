"""Convergence diagnostics on grid densities in local coordinates.

Everything here is a deterministic functional of tabulated densities: weighted
L1 distances between the rescaled posterior and its Gaussian limit, total
variation, tail mass, the LAN remainder of the log likelihood, likelihood-ratio
suprema on a ball, and direct evaluations of both sides of the moment/ratio
inequality and the tail-moment inequality.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Optional, Union

import numpy as np

from .errors import ConfigError, DomainError, NumericalError, PropertyViolation
from .model import ModelSpec, log_likelihood_many
from .posterior import GridDensity, check_same_axes, trapezoid_weights

MAX_PAIRS = 4_000_000
IDENTITY_TOL = 1e-12


@dataclass(frozen=True)
class DiagnosticsConfig:
    """Orders, radii and thresholds for one diagnostics pass.

    ``r=None`` selects the slowly growing radius ``n ** (1/8)``.  ``eta``
    and ``epsilon`` are carried for reporting; no computation depends on them.
    """

    k: int = 1
    k0: int = 2
    gamma: float = 1.0
    r: Optional[float] = None
    eta: float = 0.1
    epsilon: float = 0.1
    lan_radius: float = 3.0
    lan_nodes: int = 61

    def __post_init__(self):
        if not (isinstance(self.k, (int, np.integer)) and 1 <= self.k <= self.k0):
            raise ConfigError(f"need integer 1 <= k <= k0, got k={self.k}, k0={self.k0}")
        if not self.gamma > 0:
            raise ConfigError("gamma must be positive")
        if self.r is not None and not self.r > 0:
            raise ConfigError("r must be positive")
        if not self.eta > 0:
            raise ConfigError("eta must be positive")
        if not self.lan_radius > 0 or self.lan_nodes < 2:
            raise ConfigError("lan_radius must be positive and lan_nodes >= 2")

    def radius(self, n: int) -> float:
        return float(self.r) if self.r is not None else n ** 0.125


@dataclass(frozen=True)
class DiagnosticsReport:
    model: str
    process: str
    prior: str
    n: int
    alpha: float
    seed: int
    k: int
    r: float
    z0: float
    z_upper: float
    tv: float
    sup_Rn: float
    tail_mass: float
    sup_fn_plus: float
    sup_fn_minus: float

    def __post_init__(self):
        values = (self.z0, self.z_upper, self.tv, self.sup_Rn, self.tail_mass,
                  self.sup_fn_plus, self.sup_fn_minus)
        if any(not (v >= 0) for v in values):
            raise PropertyViolation(f"negative or NaN diagnostic in {self}")
        if self.z0 > self.z_upper * (1 + 1e-12) + 1e-15:
            raise PropertyViolation(f"z0={self.z0} exceeds z_upper={self.z_upper}")
        if self.tv > 1.0:
            raise PropertyViolation(f"tv={self.tv} outside [0, 1]")

    @classmethod
    def columns(cls) -> tuple:
        return tuple(f.name for f in fields(cls))

    def as_row(self) -> dict:
        return asdict(self)


def tensor_norm_1(h, k: int) -> float:
    """Entrywise 1-norm of the k-fold outer product of ``h``, i.e. ``||h||_1 ** k``."""
    if k < 1:
        raise ValueError("k must be at least 1")
    return float(np.sum(np.abs(np.asarray(h, dtype=float)))) ** k


def _abs_diff(a: GridDensity, b: GridDensity) -> np.ndarray:
    check_same_axes(a, b)
    return np.abs(a.density - b.density)


def weighted_l1_distance(a: GridDensity, b: GridDensity, k: float) -> tuple:
    """``(z0, z_upper)``: the ``||h||_1^k``- and ``p^{k/2} ||h||_2^k``-weighted L1 distances."""
    diff = a.weights * _abs_diff(a, b)
    if k == 0:
        z = float(np.sum(diff))
        return z, z
    z0 = float(np.sum(diff * a.norms(1) ** k))
    z_upper = float(a.p ** (0.5 * k) * np.sum(diff * a.norms(2) ** k))
    return z0, z_upper


def tv_distance(a: GridDensity, b: GridDensity) -> float:
    tv = 0.5 * float(np.sum(a.weights * _abs_diff(a, b)))
    return min(max(tv, 0.0), 1.0)


def lan_grid(radius: float = 3.0, nodes: int = 61, p: int = 1) -> np.ndarray:
    """Nodes of the cube ``[-radius, radius]^p`` as an ``(m, p)`` array."""
    axis = np.linspace(-radius, radius, nodes)
    mesh = np.meshgrid(*([axis] * p), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def lan_remainder_values(model: ModelSpec, data, theta_star, V, h_grid, theta_hat) -> np.ndarray:
    n = len(data)
    p = model.dim_p
    theta_star = np.asarray(theta_star, dtype=float).reshape(p)
    theta_hat = np.asarray(theta_hat, dtype=float).reshape(p)
    V = np.atleast_2d(np.asarray(V, dtype=float))
    h = np.asarray(h_grid, dtype=float).reshape(-1, p)
    thetas = theta_star + h / math.sqrt(n)
    outside = ~np.all((thetas >= model.theta_box[:, 0]) & (thetas <= model.theta_box[:, 1]), axis=1)
    if outside.any():
        raise DomainError(f"theta_star + h/sqrt(n) leaves the parameter box at h={h[outside][0].tolist()}")
    base = log_likelihood_many(model, theta_star, data)[0]
    ratio = log_likelihood_many(model, thetas, data) - base
    delta = math.sqrt(n) * (theta_hat - theta_star)
    linear = h @ (V @ delta)
    quad = 0.5 * np.einsum("ij,jk,ik->i", h, V, h)
    return ratio - linear + quad


def lan_remainder(model: ModelSpec, data, theta_star, V, h_grid, theta_hat=None) -> float:
    """``sup_h |R_n(h)|`` over the points of ``h_grid``.

    ``R_n(h) = log f_n(theta* + h/sqrt(n)) - log f_n(theta*) - h^T V Delta
    + h^T V h / 2`` with ``Delta = sqrt(n) (theta_hat - theta*)``.  The MLE
    is fitted when ``theta_hat`` is not given.

    Raises:
        DomainError: some ``theta* + h/sqrt(n)`` leaves the parameter box.
    """
    if theta_hat is None:
        from .asymptotics import fit_mle
        theta_hat = fit_mle(model, data, allow_plateau=True).theta_hat
    values = lan_remainder_values(model, data, theta_star, V, h_grid, theta_hat)
    return float(np.max(np.abs(values)))


def outside_fraction(g: GridDensity, r: float) -> np.ndarray:
    """Fraction of each node's trapezoid cell lying outside the ball of radius ``r``.

    The cell is treated as a slab across the sphere, with radial thickness
    equal to the cell box projected on the radial direction.  A hard
    ``||h|| > r`` mask has an O(spacing) error at the cut; this is O(spacing^2)
    in one dimension.
    """
    norm = g.norms(2)
    widths = [trapezoid_weights(a) for a in g.axes]
    mesh = np.meshgrid(*widths, indexing="ij")
    thickness = np.zeros(g.shape)
    for j, wj in enumerate(mesh):
        coord = g.points[:, j].reshape(g.shape)
        thickness += np.abs(coord) * wj
    with np.errstate(invalid="ignore", divide="ignore"):
        thickness = np.where(norm > 0, thickness / norm, max(float(np.max(w)) for w in widths))
    return np.clip((norm - r) / thickness + 0.5, 0.0, 1.0)


def concentration_tail_mass(g: GridDensity, r: float) -> float:
    """Grid mass outside the Euclidean ball of radius ``r`` about the origin.

    Nodes whose cell straddles the sphere contribute the outside fraction of
    their cell (see :func:`outside_fraction`).
    """
    if not r > 0:
        raise ValueError("r must be positive")
    mass = g.integrate(outside_fraction(g, r))
    return min(max(mass, 0.0), 1.0)


def markov_tail_bound(g: GridDensity, r: float, k0: float) -> float:
    """``r^{-k0} * integral ||h||_2^{k0} g``: the Markov upper bound on the tail mass."""
    from .posterior import grid_moment
    return grid_moment(g, k0) / r ** k0


@dataclass(frozen=True)
class RatioSuprema:
    """Suprema of the ratio functionals over grid-node pairs in a ball.

    ``reduced`` marks that the pair table exceeded ``MAX_PAIRS`` and the
    suprema were taken from the extremes of the log ratio, which gives the
    same value as the full pair scan.  ``log_ratio_step`` is the largest jump
    of the log ratio between neighbouring nodes in the ball (grid-resolution
    indicator).
    """

    sup_plus: float
    sup_minus: float
    nodes: int
    pairs: int
    reduced: bool
    log_ratio_step: float


def fn_ratio_suprema(post: GridDensity, lim: GridDensity, r: float,
                     max_pairs: int = MAX_PAIRS) -> RatioSuprema:
    """Suprema of ``f+`` and ``f-`` over node pairs ``(g, h)`` in the ball of radius ``r``.

    ``f+(g, h) = {1 - lim(h) post(g) / (post(h) lim(g))}^+`` and
    ``f-(g, h) = {post(h) lim(g) / (lim(h) post(g)) - 1}^-``, computed from
    log ratios.  On the full pair table the identity ``f-(g, h) = f+(h, g)``
    is verified entrywise.

    Raises:
        NumericalError: a density is not strictly positive in the ball.
        PropertyViolation: the identity fails beyond ``1e-12``.
    """
    check_same_axes(post, lim)
    inside = post.norms(2) <= r
    lp, ll = post.log_values[inside], lim.log_values[inside]
    if not (np.all(np.isfinite(lp)) and np.all(np.isfinite(ll))):
        raise NumericalError("densities must be strictly positive on the ball")
    L = lp - ll
    m = L.size
    step = 0.0
    full_ratio = post.log_values - lim.log_values
    for j in range(post.p):
        jumps = np.abs(np.diff(full_ratio, axis=j))
        both = np.logical_and(np.take(inside, range(0, inside.shape[j] - 1), axis=j),
                              np.take(inside, range(1, inside.shape[j]), axis=j))
        if both.any():
            step = max(step, float(jumps[both].max()))
    if m == 0:
        return RatioSuprema(0.0, 0.0, 0, 0, False, step)
    if m * m <= max_pairs:
        D = L[:, None] - L[None, :]  # rows g, columns h
        f_plus = np.maximum(0.0, -np.expm1(D))
        f_minus = np.maximum(0.0, -np.expm1(-D))
        gap = float(np.max(np.abs(f_minus - f_plus.T)))
        if gap > IDENTITY_TOL:
            raise PropertyViolation(f"f-(g,h) = f+(h,g) fails by {gap:.3g}")
        return RatioSuprema(float(f_plus.max()), float(f_minus.max()), m, m * m, False, step)
    spread = float(L.min() - L.max())
    sup = max(0.0, -math.expm1(spread))
    return RatioSuprema(sup, sup, m, m * m, True, step)


@dataclass(frozen=True)
class BoundCheck:
    lhs: float
    rhs: float

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs * (1 + 1e-12) + 1e-15

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs


def lemma1_bound_check(phi: GridDensity, psi: GridDensity, k: float, K_radius: float) -> BoundCheck:
    """Both sides of the weighted-L1 / likelihood-ratio inequality with ``s(h) = ||h||_2^k``.

    ``lhs = integral s |phi - psi|`` and ``rhs = sup f+ * integral s psi +
    sup f- * integral s phi + integral_{||h|| > K} s (psi + phi)``, where the
    suprema run over node pairs in the ball ``||h|| <= K_radius`` with
    ``f+(g, h) = {1 - phi(h) psi(g) / (psi(h) phi(g))}^+``.
    """
    check_same_axes(phi, psi)
    s = phi.norms(2) ** k
    w = phi.weights
    lhs = float(np.sum(w * s * np.abs(phi.density - psi.density)))
    sup = fn_ratio_suprema(psi, phi, K_radius)
    outside = phi.norms(2) > K_radius
    tail = float(np.sum((w * s * (phi.density + psi.density))[outside]))
    rhs = (sup.sup_plus * float(np.sum(w * s * psi.density))
           + sup.sup_minus * float(np.sum(w * s * phi.density)) + tail)
    return BoundCheck(lhs, rhs)


def _check_moment_resolved(g: GridDensity, order: float, shell: float = 0.1, limit: float = 1e-3) -> None:
    weight = g.norms(2) ** order
    total = g.integrate(weight)
    if not np.isfinite(total):
        raise NumericalError(f"moment of order {order} is not finite")
    near_edge = np.zeros(g.shape, dtype=bool)
    for j, axis in enumerate(g.axes):
        width = axis[-1] - axis[0]
        coord = g.points[:, j].reshape(g.shape)
        near_edge |= (coord < axis[0] + shell * width) | (coord > axis[-1] - shell * width)
    edge = float(np.sum((g.weights * g.density * weight)[near_edge]))
    if total > 0 and edge > limit * total:
        raise NumericalError(f"moment of order {order} is not resolved on the grid "
                             f"({edge / total:.2g} of it sits in the outer shell); it may be infinite")


def lemma2_tail_bound(source: Union[GridDensity, np.ndarray], k: float, gamma: float, r: float) -> BoundCheck:
    """``E[||Z||^k 1{||Z|| > r}]`` against ``(gamma+1) / (gamma r^gamma) E||Z||^{k(1+gamma)}``.

    ``source`` is a grid density for ``Z``, a 1-d array of samples of
    ``||Z||_2`` or an ``(N, p)`` array of samples of ``Z``.  The inequality
    is guaranteed for ``r >= 1``; for ``r < 1`` and ``k > 1`` it can fail.

    Raises:
        NumericalError: the ``k(1+gamma)`` moment is infinite or unresolved.
    """
    if not gamma > 0 or not r > 0 or k <= 0:
        raise ValueError("need k > 0, gamma > 0 and r > 0")
    order = k * (1 + gamma)
    if isinstance(source, GridDensity):
        _check_moment_resolved(source, order)
        norm = source.norms(2)
        lhs = source.integrate(outside_fraction(source, r) * norm ** k)
        moment = source.integrate(norm ** order)
    else:
        arr = np.asarray(source, dtype=float)
        norm = np.abs(arr) if arr.ndim == 1 else np.linalg.norm(arr, axis=1)
        lhs = float(np.mean(np.where(norm > r, norm ** k, 0.0)))
        moment = float(np.mean(norm ** order))
        if not np.isfinite(moment):
            raise NumericalError(f"sample moment of order {order} is not finite")
    rhs = (gamma + 1) / (gamma * r ** gamma) * moment
    return BoundCheck(float(lhs), float(rhs))
