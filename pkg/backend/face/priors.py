"""
Gaussian-mixture identity prior
Evaluation, a dominant-component least-squares embedding for LM, and an EM
fitter used to build priors from synthetic identity libraries.
"""
import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np
import scipy.linalg
from scipy.cluster.vq import kmeans2
from scipy.special import logsumexp

from .errors import AssetError, ContractViolation, DegenerateComponentError
from .seeding import stream

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)
COVARIANCE_REGULARIZATION = 1e-6
MAX_RESEEDS_PER_COMPONENT = 5


@dataclass(frozen=True, eq=False)
class GmmPrior:
    """Mixture over identity space with precomputed Cholesky factors"""
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    cholesky: np.ndarray
    log_normalizers: np.ndarray

    @property
    def components(self) -> int:
        return self.weights.shape[0]

    @property
    def dims(self) -> int:
        return self.means.shape[1]

    @classmethod
    def create(cls, weights, means, covariances) -> "GmmPrior":
        weights = np.asarray(weights, dtype=np.float64)
        means = np.atleast_2d(np.asarray(means, dtype=np.float64))
        covariances = np.asarray(covariances, dtype=np.float64).reshape(len(weights), means.shape[1], means.shape[1])
        G, d = means.shape
        if weights.shape != (G,):
            raise AssetError(f"prior has {weights.shape} weights for {G} components")
        if np.any(weights <= 0) or not np.isclose(weights.sum(), 1.0, atol=1e-9):
            raise AssetError("mixture weights must be positive and sum to 1")
        chol = np.empty_like(covariances)
        for i in range(G):
            if not np.allclose(covariances[i], covariances[i].T, atol=1e-12 * max(1.0, np.abs(covariances[i]).max())):
                raise AssetError(f"covariance {i} is not symmetric")
            try:
                chol[i] = scipy.linalg.cholesky(covariances[i], lower=True)
            except np.linalg.LinAlgError as exc:
                raise AssetError(f"covariance {i} is not positive definite") from exc
        log_norm = np.log(weights) - 0.5 * d * LOG_2PI - np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
        return cls(weights, means, covariances, chol, log_norm)

    @classmethod
    def from_cholesky(cls, weights, means, cholesky) -> "GmmPrior":
        L = np.asarray(cholesky, dtype=np.float64)
        return cls.create(weights, means, L @ np.swapaxes(L, 1, 2))


def _check_beta(prior: GmmPrior, beta: np.ndarray) -> np.ndarray:
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (prior.dims,):
        raise ContractViolation(f"beta has shape {beta.shape}, prior expects ({prior.dims},)")
    return beta


def _whiten(prior: GmmPrior, beta: np.ndarray) -> np.ndarray:
    """L_i^-1 (beta - nu_i) for every component, (G, d)"""
    return np.stack([
        scipy.linalg.solve_triangular(prior.cholesky[i], beta - prior.means[i], lower=True)
        for i in range(prior.components)
    ])


def component_log_densities(prior: GmmPrior, beta: np.ndarray) -> np.ndarray:
    """log(gamma_i N(beta | nu_i, Sigma_i)) per component"""
    beta = _check_beta(prior, beta)
    z = _whiten(prior, beta)
    return prior.log_normalizers - 0.5 * np.sum(z ** 2, axis=1)


def gmm_log_prob(prior: GmmPrior, beta: np.ndarray) -> float:
    """log p(beta) via log-sum-exp; the identity energy is its negative"""
    return float(logsumexp(component_log_densities(prior, beta)))


def responsibilities(prior: GmmPrior, beta: np.ndarray) -> np.ndarray:
    log_dens = component_log_densities(prior, beta)
    return np.exp(log_dens - logsumexp(log_dens))


def gmm_log_prob_gradient(prior: GmmPrior, beta: np.ndarray) -> np.ndarray:
    """d log p / d beta = -sum_i r_i Sigma_i^-1 (beta - nu_i)"""
    beta = _check_beta(prior, beta)
    resp = responsibilities(prior, beta)
    grad = np.zeros(prior.dims)
    for i in range(prior.components):
        grad -= resp[i] * scipy.linalg.cho_solve((prior.cholesky[i], True), beta - prior.means[i])
    return grad


@dataclass(frozen=True)
class GmmResidual:
    residual: np.ndarray
    jacobian: np.ndarray
    component: int


def gmm_residualize(prior: GmmPrior, beta: np.ndarray, scale: float = 1.0) -> GmmResidual:
    """
    Whitened residual scale * L_i^-1 (beta - nu_i) of the most responsible
    component i, with its Jacobian scale * L_i^-1. The component's constant
    log-normalizer has no gradient and is left out.
    """
    beta = _check_beta(prior, beta)
    component = int(np.argmax(component_log_densities(prior, beta)))
    L = prior.cholesky[component]
    residual = scale * scipy.linalg.solve_triangular(L, beta - prior.means[component], lower=True)
    jacobian = scale * scipy.linalg.solve_triangular(L, np.eye(prior.dims), lower=True)
    return GmmResidual(residual, jacobian, component)


def sample_gmm(prior: GmmPrior, rng: np.random.Generator, count: int) -> np.ndarray:
    labels = rng.choice(prior.components, size=count, p=prior.weights)
    z = rng.normal(size=(count, prior.dims))
    return prior.means[labels] + np.einsum("nij,nj->ni", prior.cholesky[labels], z)


@dataclass
class EmResult:
    prior: GmmPrior
    log_likelihoods: List[float] = field(default_factory=list)
    iterations: int = 0
    reseeds: int = 0
    converged: bool = False


def _regularize(cov: np.ndarray) -> np.ndarray:
    cov = 0.5 * (cov + cov.T)
    d = cov.shape[0]
    eps = COVARIANCE_REGULARIZATION * np.trace(cov) / d
    return cov + eps * np.eye(d)


def _log_densities(X: np.ndarray, weights: np.ndarray, means: np.ndarray, covs: np.ndarray) -> np.ndarray:
    n, d = X.shape
    out = np.empty((n, len(weights)))
    for i in range(len(weights)):
        L = scipy.linalg.cholesky(covs[i], lower=True)
        z = scipy.linalg.solve_triangular(L, (X - means[i]).T, lower=True)
        out[:, i] = np.log(weights[i]) - 0.5 * d * LOG_2PI - np.log(np.diag(L)).sum() - 0.5 * np.sum(z ** 2, axis=0)
    return out


def run_em(samples: np.ndarray, components: int, seed: int, max_iters: int = 200, tol: float = 1e-10) -> EmResult:
    """
    EM for a full-covariance mixture, k-means++ initialized. Covariances get
    +eps I with eps = 1e-6 trace / d after every M-step. A component whose
    responsibility mass drops below one sample is re-seeded on a random sample.
    """
    X = np.asarray(samples, dtype=np.float64)
    n, d = X.shape
    G = components
    if G < 1 or n < G * (d + 1):
        raise ContractViolation(f"need at least {G * (d + 1)} samples for {G} components in {d} dims, got {n}")
    rng = stream(seed, "em")
    global_cov = _regularize(np.cov(X, rowvar=False).reshape(d, d))

    centroids, labels = kmeans2(X, G, minit="++", seed=rng)
    means = centroids.astype(np.float64)
    covs = np.empty((G, d, d))
    weights = np.empty(G)
    for i in range(G):
        members = X[labels == i]
        weights[i] = max(len(members), 1) / n
        covs[i] = _regularize(np.cov(members, rowvar=False).reshape(d, d)) if len(members) > d else global_cov
    weights /= weights.sum()

    result = EmResult(prior=None)
    max_reseeds = MAX_RESEEDS_PER_COMPONENT * G
    previous = -np.inf
    for iteration in range(max_iters):
        log_dens = _log_densities(X, weights, means, covs)
        log_norm = logsumexp(log_dens, axis=1)
        ll = float(log_norm.sum())
        result.log_likelihoods.append(ll)
        result.iterations = iteration + 1
        if ll - previous <= tol * abs(ll):
            result.converged = True
            break
        previous = ll

        resp = np.exp(log_dens - log_norm[:, None])
        mass = resp.sum(axis=0)
        for i in range(G):
            if mass[i] < 1.0:
                result.reseeds += 1
                if result.reseeds > max_reseeds:
                    raise DegenerateComponentError(f"component {i} collapsed {result.reseeds} times")
                logger.warning("EM component %d degenerate (mass %.3g), re-seeding", i, mass[i])
                means[i] = X[rng.integers(n)]
                covs[i] = global_cov
                weights[i] = 1.0 / G
                previous = -np.inf
                continue
            weights[i] = mass[i] / n
            means[i] = resp[:, i] @ X / mass[i]
            diff = X - means[i]
            covs[i] = _regularize((resp[:, i, None] * diff).T @ diff / mass[i])
        weights /= weights.sum()

    result.prior = GmmPrior.create(weights, means, covs)
    logger.info("EM finished after %d iterations (log-likelihood %.6g, %d reseeds)",
                result.iterations, result.log_likelihoods[-1], result.reseeds)
    return result


def gmm_fit_em(samples: np.ndarray, components: int, seed: int, max_iters: int = 200, tol: float = 1e-10) -> GmmPrior:
    """Fit a GmmPrior to identity samples"""
    return run_em(samples, components, seed, max_iters=max_iters, tol=tol).prior


def synth_identity_library(seed: int, dims: int, components: int = 4, samples_per_component: int = 200) -> np.ndarray:
    """Identity vectors drawn from a random ground-truth mixture"""
    rng = stream(seed, "identity-library")
    means = rng.normal(scale=0.6, size=(components, dims))
    covs = np.empty((components, dims, dims))
    for i in range(components):
        Q, _ = np.linalg.qr(rng.normal(size=(dims, dims)))
        scales = rng.uniform(0.3, 0.8, size=dims)
        covs[i] = (Q * scales ** 2) @ Q.T
        covs[i] = 0.5 * (covs[i] + covs[i].T)
    weights = rng.dirichlet(np.full(components, 5.0))
    truth = GmmPrior.create(weights, means, covs)
    return sample_gmm(truth, rng, components * samples_per_component)


def synth_identity_prior(seed: int, dims: int, components: int = 4, samples_per_component: int = 200) -> GmmPrior:
    """Prior fitted by EM to a synthetic identity library"""
    library = synth_identity_library(seed, dims, components, samples_per_component)
    return gmm_fit_em(library, components, seed)
