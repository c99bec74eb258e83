"""Target densities pi ~ exp(-V) with analytic gradients.

Every potential evaluates on a single point of shape ``(d,)`` or on a batch
of shape ``(n, d)``; the output drops the last axis accordingly.
"""

import math

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from . import _kernels

LOG_2PI = math.log(2.0 * math.pi)


def _as_batch(x, dimension):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    if xb.shape[-1] != dimension:
        raise ValueError(f"expected last axis of size {dimension}, got {x.shape}")
    return xb, single


class Potential:
    """Base class: subclasses implement ``_value`` and ``_grad`` on batches."""

    dimension = 1
    lipschitz_hint = None

    def value(self, x):
        xb, single = _as_batch(x, self.dimension)
        v = self._value(xb)
        return float(v[0]) if single else v

    def grad(self, x):
        xb, single = _as_batch(x, self.dimension)
        g = self._grad(xb)
        return g[0] if single else g

    # spec-style aliases
    def eval(self, x):
        return self.value(x)

    def __call__(self, x):
        return self.value(x)

    def _value(self, x):
        raise NotImplementedError

    def _grad(self, x):
        raise NotImplementedError


class QuadraticPotential(Potential):
    """V(x) = ||x - center||^2 / (2 * variance)."""

    def __init__(self, dimension, variance=1.0, center=None):
        self.dimension = int(dimension)
        self.variance = float(variance)
        self.center = np.zeros(self.dimension) if center is None else np.asarray(center, float)
        self.lipschitz_hint = 1.0 / self.variance

    def _value(self, x):
        return 0.5 * np.sum((x - self.center) ** 2, axis=1) / self.variance

    def _grad(self, x):
        return (x - self.center) / self.variance


class FunctionPotential(Potential):
    """Wrap batch callables ``value_fn(x) -> (n,)`` and ``grad_fn(x) -> (n, d)``."""

    def __init__(self, value_fn, grad_fn, dimension, lipschitz_hint=None):
        self.dimension = int(dimension)
        self._value_fn = value_fn
        self._grad_fn = grad_fn
        self.lipschitz_hint = lipschitz_hint

    def _value(self, x):
        return np.asarray(self._value_fn(x), dtype=np.float64)

    def _grad(self, x):
        return np.asarray(self._grad_fn(x), dtype=np.float64)


class DoubleWellPotential(Potential):
    """One-dimensional quartic well V(x) = depth * (x^2 - 1)^2."""

    dimension = 1

    def __init__(self, depth=1.0):
        self.depth = float(depth)

    def _value(self, x):
        return self.depth * (x[:, 0] ** 2 - 1.0) ** 2

    def _grad(self, x):
        return 4.0 * self.depth * x * (x**2 - 1.0)


class GaussianMixtureTarget(Potential):
    """Mixture sum_i w_i N(mu_i, Sigma) with one covariance shared by all components.

    Parameters
    ----------
    weights : array_like, shape (k,)
        Strictly positive, summing to one.
    means : array_like, shape (k, d)
    covariance : array_like, shape (d, d) or scalar
        A scalar ``s`` means ``s * I``.
    sigma_sq_floor : float, optional
        sigma^2 with Sigma > sigma^2 I. Defaults to the smallest eigenvalue.
    """

    def __init__(self, weights, means, covariance=1.0, sigma_sq_floor=None):
        w = np.asarray(weights, dtype=np.float64).ravel()
        mu = np.asarray(means, dtype=np.float64)
        if mu.ndim == 1:
            mu = mu[:, None]
        if mu.shape[0] != w.shape[0]:
            raise ValueError("weights and means disagree on component count")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")
        d = mu.shape[1]
        cov = np.asarray(covariance, dtype=np.float64)
        if cov.ndim == 0:
            cov = float(cov) * np.eye(d)
        if cov.shape != (d, d) or not np.allclose(cov, cov.T, rtol=0, atol=1e-12):
            raise ValueError("covariance must be a symmetric (d, d) matrix")
        evals, evecs = np.linalg.eigh(cov)
        if evals[0] <= 0:
            raise ValueError("covariance must be positive definite")
        if sigma_sq_floor is None:
            sigma_sq_floor = float(evals[0])
        elif evals[0] <= sigma_sq_floor - 1e-10:
            raise ValueError("covariance has an eigenvalue below sigma_sq_floor")

        self.dimension = d
        self.weights = w
        self.means = np.ascontiguousarray(mu)
        self.covariance = cov
        self.sigma_sq_floor = float(sigma_sq_floor)
        self.precision = np.ascontiguousarray(evecs @ np.diag(1.0 / evals) @ evecs.T)
        self.logdet = float(np.sum(np.log(evals)))
        self.sqrt_cov = evecs @ np.diag(np.sqrt(evals)) @ evecs.T
        self.inv_sqrt_cov = evecs @ np.diag(1.0 / np.sqrt(evals)) @ evecs.T
        self._log_coef = np.log(w) - 0.5 * (d * LOG_2PI + self.logdet)
        self.lipschitz_hint = gmm_hessian_bound(self)

    @property
    def n_components(self):
        return self.weights.shape[0]

    def log_density(self, x):
        xb, single = _as_batch(x, self.dimension)
        logp, _ = _kernels.gmm_eval_grad(xb, self.means, self.precision, self._log_coef)
        return float(logp[0]) if single else logp

    def responsibilities(self, x):
        xb, single = _as_batch(x, self.dimension)
        diff = xb[:, None, :] - self.means[None]
        quad = np.einsum("nkd,de,nke->nk", diff, self.precision, diff)
        logits = self._log_coef - 0.5 * quad
        r = np.exp(logits - logsumexp(logits, axis=1, keepdims=True))
        return r[0] if single else r

    def _value(self, x):
        logp, _ = _kernels.gmm_eval_grad(x, self.means, self.precision, self._log_coef)
        return -logp

    def _grad(self, x):
        _, g = _kernels.gmm_eval_grad(x, self.means, self.precision, self._log_coef)
        return g


def gmm_log_density(target, x):
    """log sum_i w_i N(x; mu_i, Sigma), computed by log-sum-exp."""
    return target.log_density(x)


def gmm_grad(target, x):
    """grad V(x) = Sigma^{-1} (x - sum_i r_i(x) mu_i)."""
    return target.grad(x)


def gmm_hessian_bound(target):
    """Upper bound on ||Hess V|| for a shared-covariance mixture.

    max_ij ||mu_i - mu_j||^2 / sigma^4 + 1 / sigma^2, with sigma^2 the
    target's ``sigma_sq_floor``.
    """
    mu = target.means
    gaps = np.sum((mu[:, None, :] - mu[None, :, :]) ** 2, axis=-1)
    s2 = target.sigma_sq_floor
    return float(gaps.max() / s2**2 + 1.0 / s2)


class PowerPosteriorTarget(Potential):
    """Tempered posterior over the location of a symmetric two-component mixture.

    V(theta) = -(beta / n) sum_i log(0.5 phi(theta - X_i) + 0.5 phi(theta + X_i))
    with a flat prior, so that exp(-V) is the posterior density.
    """

    def __init__(self, data, beta=1.0, theta0_norm=None):
        X = np.asarray(data, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[0] < 1 or not np.all(np.isfinite(X)):
            raise ValueError("data must hold at least one finite vector")
        if beta <= 0:
            raise ValueError("beta must be positive")
        self.data = X
        self.beta = float(beta)
        self.theta0_norm = theta0_norm
        self.dimension = X.shape[1]
        self._sq = np.sum(X**2, axis=1)
        # ||Hess V|| <= beta * max(1, lambda_max(X^T X / n) - 1)
        lam = np.linalg.eigvalsh(X.T @ X / X.shape[0])[-1]
        self.lipschitz_hint = self.beta * max(1.0, lam - 1.0)

    @property
    def n(self):
        return self.data.shape[0]

    def _value(self, theta):
        z = theta @ self.data.T
        # log(cosh z), overflow-free
        az = np.abs(z)
        logcosh = az + np.log1p(np.exp(-2.0 * az)) - math.log(2.0)
        sq = np.sum(theta**2, axis=1)
        per = 0.5 * self.dimension * LOG_2PI + 0.5 * (sq[:, None] + self._sq[None, :]) - logcosh
        return self.beta * per.mean(axis=1)

    def _grad(self, theta):
        s = np.tanh(theta @ self.data.T)
        return self.beta * (theta - s @ self.data / self.n)


def posterior_potential(target, theta):
    return target.value(theta)


def posterior_grad(target, theta):
    return target.grad(theta)


def sample_symmetric_mixture_data(n, dimension, theta0_norm, rng):
    """Draw n points from 0.5 N(theta0, I) + 0.5 N(-theta0, I), theta0 = ||theta0|| e_1."""
    theta0 = np.zeros(dimension)
    theta0[0] = theta0_norm
    signs = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    return signs[:, None] * theta0[None, :] + rng.standard_normal((n, dimension))


def dissipativity_estimate(p, radius, samples, rng_seed, margin=0.5, far_fraction=0.5, refine=5):
    """Certify constants with <grad V(x), x> >= m ||x||^2 - b on a ball.

    Points are drawn uniformly in the ball of the given radius. ``m`` is
    ``margin`` times the smallest ratio <grad V, x> / ||x||^2 among points
    with ||x|| >= far_fraction * radius; ``b`` is the largest violation of
    the inequality with that ``m`` over the whole sample (0 if none), after
    a local Nelder-Mead ascent from the ``refine`` worst sample points.

    Returns
    -------
    (m, b) : tuple of float
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    rng = np.random.default_rng(rng_seed)
    d = p.dimension
    direction = rng.standard_normal((samples, d))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    r = radius * rng.random(samples) ** (1.0 / d)
    x = direction * r[:, None]
    g = p.grad(x)
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite gradient during dissipativity estimate")
    inner = np.sum(g * x, axis=1)
    sq = r**2
    far = r >= far_fraction * radius
    if not far.any():
        raise ValueError("no sample points in the outer shell")
    m = margin * float(np.min(inner[far] / sq[far]))
    viol = m * sq - inner
    b = float(np.max(viol))
    # polish the worst sample points by local maximisation inside the ball
    for x0 in x[np.argsort(viol)[-refine:]]:
        b = max(b, _polish_violation(p, m, x0, radius))
    return m, max(0.0, b)


def _polish_violation(p, m, x0, radius):
    def neg_violation(y):
        n = np.linalg.norm(y)
        if n > radius:
            y = y * (radius / n)
        g = p.grad(y)
        return -(m * float(y @ y) - float(g @ y))

    res = minimize(neg_violation, x0, method="Nelder-Mead", options=dict(xatol=1e-10, fatol=1e-12, maxiter=2000))
    return -min(res.fun, neg_violation(x0))
