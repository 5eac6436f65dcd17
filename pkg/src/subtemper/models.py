"""Bayesian target models.

Two models are provided:

* :class:`MvnMeanModel` -- multivariate-normal mean estimation with known
  covariance.  Its posterior is conjugate (:func:`mvn_analytic_posterior`),
  which makes it the exactness oracle for every sampler in the library.
* :class:`GpRegressionModel` -- GP regression hyperparameter inference with
  a squared-exponential ARD kernel, log-normal priors on the length scales
  and gamma priors on the signal and noise scales.  Sampling runs in
  log-transformed coordinates; the prior density includes the Jacobian of
  the exp transform.

Both models satisfy the ``LogTarget`` contract: unnormalized log prior and
log likelihood (over an index subset of the bound dataset), their gradients,
the prior mean, and prior sampling.  MVN log likelihoods are additive over
disjoint subsets; the GP marginal likelihood couples observations through
the kernel matrix and factorizes only when cross-covariances vanish.
"""

from __future__ import annotations

import abc
import math

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.spatial.distance import cdist
from scipy.special import gammaln

from .core import Dataset, RngStream

__all__ = [
    "LogTarget",
    "MvnMeanModel",
    "GpRegressionModel",
    "GpNumericalError",
    "ard_kernel",
    "mvn_analytic_posterior",
    "simulate_mvn_data",
    "simulate_gp_data",
    "log_gamma_density",
    "log_lognormal_density",
]

LOG_2PI = math.log(2.0 * math.pi)


class GpNumericalError(RuntimeError):
    """Cholesky factorization failed even after jitter escalation.

    Carries the offending parameter vector and the last jitter factor tried,
    for post-mortem diagnostics.
    """

    def __init__(self, theta, jitter):
        self.theta = np.array(theta)
        self.jitter = float(jitter)
        super().__init__(
            f"kernel matrix not positive definite at theta={self.theta} "
            f"(jitter escalated to {self.jitter:g})"
        )


class LogTarget(abc.ABC):
    """Contract shared by all target models.

    Subsets are integer index arrays into the bound dataset; ``None`` selects
    the full dataset.  All evaluation methods are pure functions of
    ``(model, theta, subset)`` and models are immutable after construction,
    so instances are safe to share across concurrent chains.
    """

    data: Dataset | None

    @property
    @abc.abstractmethod
    def param_dim(self) -> int:
        """Length of the parameter vector in sampling coordinates."""

    @abc.abstractmethod
    def log_prior(self, theta) -> float: ...

    @abc.abstractmethod
    def grad_log_prior(self, theta) -> np.ndarray: ...

    @abc.abstractmethod
    def log_likelihood(self, theta, subset=None) -> float: ...

    @abc.abstractmethod
    def grad_log_likelihood(self, theta, subset=None) -> np.ndarray: ...

    @abc.abstractmethod
    def prior_mean(self) -> np.ndarray:
        """Expected parameter value under the prior, on the natural scale."""

    @abc.abstractmethod
    def sample_prior(self, rng) -> np.ndarray:
        """Draw a parameter vector from the prior, in sampling coordinates."""

    def to_sampling(self, theta_natural) -> np.ndarray:
        """Map natural-scale parameters to sampling coordinates."""
        return np.asarray(theta_natural, dtype=float)

    @property
    def n_obs(self) -> int:
        if self.data is None:
            raise ValueError("model has no dataset bound")
        return self.data.n

    def log_posterior(self, theta) -> float:
        return self.log_prior(theta) + self.log_likelihood(theta)


def _check_theta(theta, dim):
    if not (isinstance(theta, np.ndarray) and theta.ndim == 1 and theta.dtype == np.float64):
        theta = np.asarray(theta, dtype=float).ravel()
    if theta.shape[0] != dim:
        raise ValueError(f"theta has length {theta.shape[0]}, expected {dim}")
    # a single non-finite entry poisons the sum; the exact check only runs on
    # the rare non-finite-sum path (e.g. benign overflow of huge finite entries)
    if not math.isfinite(float(theta.sum())) and not np.all(np.isfinite(theta)):
        raise ValueError(f"theta contains non-finite entries: {theta}")
    return theta


class MvnMeanModel(LogTarget):
    """Gaussian observations with unknown mean and known covariance.

    Observations ``x_n ~ N(theta, Sigma)`` with a zero-mean isotropic normal
    prior ``theta_d ~ N(0, sigma0^2)``.  ``Sigma`` defaults to the identity;
    ``rho`` builds the equicorrelated alternative ``(1-rho) I + rho 11^T``
    for exercising correlated posteriors.
    """

    def __init__(self, dim, sigma=None, sigma0=1.0, rho=0.0, data: Dataset | None = None):
        self.dim = int(dim)
        self.sigma0 = float(sigma0)
        if self.sigma0 <= 0:
            raise ValueError("prior standard deviation must be positive")
        if sigma is None:
            sigma = (1.0 - rho) * np.eye(self.dim) + rho * np.ones((self.dim, self.dim))
        sigma = np.asarray(sigma, dtype=float)
        if sigma.shape != (self.dim, self.dim):
            raise ValueError(f"Sigma must be {self.dim}x{self.dim}")
        # Cholesky both validates positive definiteness and feeds simulation.
        self._chol = np.linalg.cholesky(sigma)
        self.sigma = sigma
        self._sigma_inv = cho_solve((self._chol, True), np.eye(self.dim))
        self._logdet = 2.0 * float(np.sum(np.log(np.diag(self._chol))))
        self._diag = None
        if np.count_nonzero(sigma - np.diag(np.diagonal(sigma))) == 0:
            self._diag = np.diagonal(sigma).copy()
        self.data = data
        if data is not None and data.dim != self.dim:
            raise ValueError(f"dataset dimension {data.dim} != model dimension {self.dim}")

    @property
    def param_dim(self) -> int:
        return self.dim

    def with_data(self, data: Dataset) -> "MvnMeanModel":
        return MvnMeanModel(self.dim, sigma=self.sigma, sigma0=self.sigma0, data=data)

    def _rows(self, subset):
        if self.data is None:
            raise ValueError("model has no dataset bound")
        if subset is None:
            return self.data.X
        return self.data.X[subset]

    def log_likelihood(self, theta, subset=None) -> float:
        theta = _check_theta(theta, self.dim)
        rows = self._rows(subset)
        n = rows.shape[0]
        if n == 0:
            return 0.0
        diff = rows - theta
        if self._diag is not None:
            quad = float(np.sum(diff * diff / self._diag))
        else:
            quad = float(np.einsum("ni,ij,nj->", diff, self._sigma_inv, diff))
        return -0.5 * (n * (self.dim * LOG_2PI + self._logdet) + quad)

    def grad_log_likelihood(self, theta, subset=None) -> np.ndarray:
        theta = _check_theta(theta, self.dim)
        rows = self._rows(subset)
        n = rows.shape[0]
        if n == 0:
            return np.zeros(self.dim)
        resid = rows.sum(axis=0) - n * theta
        if self._diag is not None:
            return resid / self._diag
        return self._sigma_inv @ resid

    def log_prior(self, theta) -> float:
        theta = _check_theta(theta, self.dim)
        quad = float(theta @ theta) / self.sigma0**2
        return -0.5 * (self.dim * (LOG_2PI + 2.0 * math.log(self.sigma0)) + quad)

    def grad_log_prior(self, theta) -> np.ndarray:
        theta = _check_theta(theta, self.dim)
        return -theta / self.sigma0**2

    def prior_mean(self) -> np.ndarray:
        return np.zeros(self.dim)

    def sample_prior(self, rng) -> np.ndarray:
        return self.sigma0 * rng.standard_normal(self.dim)


def mvn_analytic_posterior(model: MvnMeanModel, data: Dataset | None = None):
    """Exact conjugate posterior ``(mean, cov)`` of the MVN mean.

    ``cov = (sigma0^-2 I + N Sigma^-1)^-1`` and
    ``mean = cov @ Sigma^-1 @ sum_n x_n``; with no data this reduces to the
    prior ``(0, sigma0^2 I)``.
    """
    if data is None:
        data = model.data
    n = 0 if data is None else data.n
    prec = np.eye(model.dim) / model.sigma0**2
    if n > 0:
        prec = prec + n * model._sigma_inv
    cov = np.linalg.inv(prec)
    if n == 0:
        return np.zeros(model.dim), cov
    mean = cov @ (model._sigma_inv @ data.X.sum(axis=0))
    return mean, cov


def simulate_mvn_data(model: MvnMeanModel, theta_true, n: int, rng) -> Dataset:
    """Simulate ``n`` observations ``x ~ N(theta_true, Sigma)``.

    Rows are generated one random block per row (row-major), so with a fixed
    stream the first ``n'`` rows of an ``n``-row simulation equal the
    ``n'``-row simulation exactly.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    theta_true = _check_theta(theta_true, model.dim)
    z = rng.standard_normal((int(n), model.dim))
    return Dataset(X=theta_true + z @ model._chol.T)


def ard_kernel(x, x_other, lengthscales, sigma_f) -> float:
    """Squared-exponential ARD kernel value between two points.

    ``sigma_f^2 * exp(-sum_d (x_d - x'_d)^2 / (2 l_d^2))``.
    """
    x = np.asarray(x, dtype=float)
    x_other = np.asarray(x_other, dtype=float)
    lengthscales = np.asarray(lengthscales, dtype=float)
    d2 = np.sum((x - x_other) ** 2 / lengthscales**2)
    return float(sigma_f**2 * np.exp(-0.5 * d2))


def log_gamma_density(x, a, b) -> float:
    """Log density of the shape-rate gamma ``b^a / Gamma(a) x^(a-1) e^(-bx)``."""
    if x <= 0:
        return -np.inf
    return float(a * math.log(b) - gammaln(a) + (a - 1.0) * math.log(x) - b * x)


def log_lognormal_density(x, mu, sigma) -> float:
    """Log density of the log-normal with location ``mu`` and scale ``sigma``."""
    if x <= 0:
        return -np.inf
    return float(
        -math.log(x) - math.log(sigma) - 0.5 * LOG_2PI
        - (math.log(x) - mu) ** 2 / (2.0 * sigma**2)
    )


# Jitter escalation ladder for near-singular kernel matrices, as a fraction
# of the mean diagonal.  Escalation beyond the last entry is non-recoverable.
_JITTER_FACTORS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)


class GpRegressionModel(LogTarget):
    """GP regression hyperparameter target in log coordinates.

    Parameters are ``theta = (log l_1 .. log l_D, log sigma_f, log sigma_n)``
    so ``|theta| = D + 2``.  The likelihood of an index subset is the joint
    marginal ``y_s ~ N(0, K_s + sigma_n^2 I)`` over that subset's rows,
    evaluated through a Cholesky factorization with escalating jitter.
    """

    def __init__(self, dim, data: Dataset | None = None, mu0=0.5, sigma0=1.0,
                 a_f=4.0, b_f=1.0, a_n=2.0, b_n=2.0):
        self.dim = int(dim)
        self.mu0 = float(mu0)
        self.sigma0 = float(sigma0)
        self.a_f, self.b_f = float(a_f), float(b_f)
        self.a_n, self.b_n = float(a_n), float(b_n)
        if min(self.sigma0, self.a_f, self.b_f, self.a_n, self.b_n) <= 0:
            raise ValueError("prior hyperparameters must be positive")
        self.data = data
        if data is not None:
            if data.dim != self.dim:
                raise ValueError(f"dataset dimension {data.dim} != model dimension {self.dim}")
            if data.y is None:
                raise ValueError("GP regression requires a response column")

    @property
    def param_dim(self) -> int:
        return self.dim + 2

    def with_data(self, data: Dataset) -> "GpRegressionModel":
        return GpRegressionModel(self.dim, data=data, mu0=self.mu0, sigma0=self.sigma0,
                                 a_f=self.a_f, b_f=self.b_f, a_n=self.a_n, b_n=self.b_n)

    def _split(self, theta):
        theta = _check_theta(theta, self.param_dim)
        return theta[: self.dim], theta[self.dim], theta[self.dim + 1]

    def _subset(self, subset):
        if self.data is None:
            raise ValueError("model has no dataset bound")
        if subset is None:
            return self.data.X, self.data.y
        return self.data.X[subset], self.data.y[subset]

    def _noise_var(self, t_n):
        with np.errstate(over="ignore"):
            return math.exp(2.0 * t_n) if 2.0 * t_n < 700.0 else np.inf

    def _factor(self, cov, theta):
        """Cholesky of a prepared covariance, escalating diagonal jitter.

        Returns a ``cho_factor`` pair, or None when the matrix is non-finite
        (callers treat that as a zero-density point).  A finite matrix that
        stays non-PD through the whole jitter ladder is non-recoverable.
        """
        # entries are non-negative, so a finite sum certifies a finite matrix
        if not math.isfinite(float(cov.sum())):
            return None
        n = cov.shape[0]
        scale = float(np.trace(cov)) / n
        bumped = 0.0
        for factor in _JITTER_FACTORS:
            delta = factor * scale - bumped
            if delta > 0.0:
                cov.flat[:: n + 1] += delta
                bumped = factor * scale
            try:
                return cho_factor(cov, lower=True, check_finite=False)
            except np.linalg.LinAlgError:
                continue
        raise GpNumericalError(theta, _JITTER_FACTORS[-1])

    def log_likelihood(self, theta, subset=None) -> float:
        t_len, t_f, t_n = self._split(theta)
        coords, y = self._subset(subset)
        n = coords.shape[0]
        if n == 0:
            return 0.0
        noise_var = self._noise_var(t_n)
        if not np.isfinite(noise_var):
            return -np.inf
        with np.errstate(over="ignore", under="ignore"):
            lengthscales = np.exp(t_len)
            sigma_f2 = math.exp(2.0 * t_f) if 2.0 * t_f < 700.0 else np.inf
            if not (math.isfinite(float(lengthscales.sum())) and math.isfinite(sigma_f2)):
                return -np.inf
            scaled = coords / lengthscales
            cov = sigma_f2 * np.exp(-0.5 * cdist(scaled, scaled, "sqeuclidean"))
        cov.flat[:: n + 1] += noise_var
        factor = self._factor(cov, theta)
        if factor is None:
            return -np.inf
        chol = factor[0]
        alpha = solve_triangular(chol, y, lower=True, check_finite=False)
        logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
        return -0.5 * (float(alpha @ alpha) + logdet + n * LOG_2PI)

    def grad_log_likelihood(self, theta, subset=None) -> np.ndarray:
        """Gradient of the subset marginal likelihood in log coordinates.

        Uses ``d/dphi = 0.5 a^T (dC/dphi) a - 0.5 tr(C^-1 dC/dphi)`` with
        ``a = C^-1 y``, chained through the exp reparameterization.  Returns
        NaNs when the covariance is numerically unusable so HMC trajectories
        can flag divergence instead of crashing.
        """
        t_len, t_f, t_n = self._split(theta)
        coords, y = self._subset(subset)
        n = coords.shape[0]
        k = self.param_dim
        if n == 0:
            return np.zeros(k)
        noise_var = self._noise_var(t_n)
        with np.errstate(over="ignore", under="ignore"):
            inv_l2 = np.exp(-2.0 * t_len)
            sigma_f2 = math.exp(2.0 * t_f) if 2.0 * t_f < 700.0 else np.inf
            if not (np.isfinite(noise_var) and math.isfinite(sigma_f2)
                    and math.isfinite(float(inv_l2.sum()))):
                return np.full(k, np.nan)
            sq = coords[:, None, :] - coords[None, :, :]
            sq *= sq  # (n, n, D) per-dimension squared differences
            kernel = sigma_f2 * np.exp(-0.5 * (sq @ inv_l2))
        cov = kernel.copy()
        cov.flat[:: n + 1] += noise_var
        factor = self._factor(cov, theta)
        if factor is None:
            return np.full(k, np.nan)
        alpha = cho_solve(factor, y, check_finite=False)
        cov_inv = cho_solve(factor, np.eye(n), check_finite=False)
        # weight = alpha alpha^T - C^-1; grad wrt phi is 0.5 sum(weight * dC/dphi)
        weight = np.outer(alpha, alpha) - cov_inv
        wk = weight * kernel
        grad = np.empty(k)
        grad[: self.dim] = 0.5 * np.einsum("ij,ijd->d", wk, sq) * inv_l2
        grad[self.dim] = float(wk.sum())                           # dK/dlog sigma_f = 2K
        grad[self.dim + 1] = noise_var * float(np.trace(weight))   # dC/dlog sigma_n = 2 sn^2 I
        return grad

    def log_prior(self, theta) -> float:
        """Log prior in log coordinates, including the exp-transform Jacobian."""
        t_len, t_f, t_n = self._split(theta)
        lp = 0.0
        for t in t_len:
            lp += log_lognormal_density(math.exp(t), self.mu0, self.sigma0) + t
        with np.errstate(over="ignore"):
            sf = math.exp(t_f) if t_f < 700 else np.inf
            sn = math.exp(t_n) if t_n < 700 else np.inf
        if not (np.isfinite(sf) and np.isfinite(sn)):
            return -np.inf
        lp += log_gamma_density(sf, self.a_f, self.b_f) + t_f
        lp += log_gamma_density(sn, self.a_n, self.b_n) + t_n
        return float(lp)

    def grad_log_prior(self, theta) -> np.ndarray:
        t_len, t_f, t_n = self._split(theta)
        grad = np.empty(self.param_dim)
        grad[: self.dim] = -(t_len - self.mu0) / self.sigma0**2
        with np.errstate(over="ignore"):
            grad[self.dim] = self.a_f - self.b_f * math.exp(min(t_f, 700.0))
            grad[self.dim + 1] = self.a_n - self.b_n * math.exp(min(t_n, 700.0))
        return grad

    def prior_mean(self) -> np.ndarray:
        """Natural-scale prior expectation of ``(l_1..l_D, sigma_f, sigma_n)``."""
        mean = np.empty(self.param_dim)
        mean[: self.dim] = math.exp(self.mu0 + 0.5 * self.sigma0**2)
        mean[self.dim] = self.a_f / self.b_f
        mean[self.dim + 1] = self.a_n / self.b_n
        return mean

    def to_sampling(self, theta_natural) -> np.ndarray:
        theta_natural = np.asarray(theta_natural, dtype=float)
        if np.any(theta_natural <= 0):
            raise ValueError("natural-scale GP parameters must be positive")
        return np.log(theta_natural)

    def sample_prior(self, rng) -> np.ndarray:
        natural = np.empty(self.param_dim)
        natural[: self.dim] = rng.lognormal(self.mu0, self.sigma0, size=self.dim)
        natural[self.dim] = rng.gamma(self.a_f, 1.0 / self.b_f)
        natural[self.dim + 1] = rng.gamma(self.a_n, 1.0 / self.b_n)
        return np.log(natural)


def _prefix_stable_gaussian(cov, z):
    """Draw ``y = L z`` via a row-by-row (bordered) Cholesky.

    A blocked LAPACK factorization may reorder floating-point work when the
    matrix grows, which would break byte-exact prefix reproducibility.  The
    bordered form computes row ``i`` from the leading ``i x i`` principal
    block only, so the first rows of a larger simulation match the smaller
    one bit for bit.
    """
    n = cov.shape[0]
    chol = np.zeros_like(cov)
    y = np.empty(n)
    for i in range(n):
        if i > 0:
            row = solve_triangular(chol[:i, :i], cov[i, :i], lower=True)
            chol[i, :i] = row
            pivot = cov[i, i] - float(row @ row)
        else:
            pivot = cov[0, 0]
        if pivot <= 0.0:
            pivot = 1e-12 * cov[i, i]
        chol[i, i] = math.sqrt(pivot)
        y[i] = float(chol[i, : i + 1] @ z[: i + 1])
    return y


def simulate_gp_data(model: GpRegressionModel, n: int, rng: RngStream):
    """Simulate a GP regression dataset of ``n`` rows.

    Draws hyperparameters from the model prior, coordinates from an isotropic
    Gaussian whose per-axis standard deviation is the mean length scale
    ``sum_d l_d / D``, and responses jointly from the GP marginal.  Uses one
    substream per stage so the first ``n'`` rows of a larger simulation equal
    the ``n'``-row simulation byte-exactly.

    Returns ``(dataset, info)`` where ``info`` records the drawn
    hyperparameters.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not isinstance(rng, RngStream):
        raise TypeError("simulate_gp_data requires an RngStream for prefix stability")
    hyper_rng = rng.substream(0)
    coord_rng = rng.substream(1)
    resp_rng = rng.substream(2)

    lengthscales = hyper_rng.lognormal(model.mu0, model.sigma0, size=model.dim)
    sigma_f = hyper_rng.gamma(model.a_f, 1.0 / model.b_f)
    sigma_n = hyper_rng.gamma(model.a_n, 1.0 / model.b_n)

    spread = float(lengthscales.sum()) / model.dim
    coords = spread * coord_rng.standard_normal((int(n), model.dim))

    scaled = coords / lengthscales
    cov = sigma_f**2 * np.exp(-0.5 * cdist(scaled, scaled, "sqeuclidean"))
    cov[np.diag_indices_from(cov)] += sigma_n**2
    y = _prefix_stable_gaussian(cov, resp_rng.standard_normal(int(n)))

    info = {
        "lengthscales": [float(v) for v in lengthscales],
        "sigma_f": float(sigma_f),
        "sigma_n": float(sigma_n),
    }
    return Dataset(X=coords, y=y), info
