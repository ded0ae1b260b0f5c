"""Likelihoods, priors, and posterior diagnostics for Bayesian escapement models.

Two observation models link a reported composition ``p_hat_t`` to the latent
weekly composition ``pi_t``:

* reverse Dirichlet-multinomial (RDM): latent integer counts
  ``X_t ~ Multinomial(n_t, pi_t)`` and ``p_hat_t ~ Dirichlet(lambda_t X_t / n_t)``;
* moment-matched Dirichlet (MMD): the single-stage surrogate
  ``p_hat_t ~ Dirichlet(lambda_tilde_t pi_t)`` whose first two moments match
  the RDM marginal.

Weekly compositions are parameterized by unconstrained scores ``Z`` with
``pi_t = softmax(Z[:, t])``.  The scores carry either a flat-Dirichlet prior
(expressed in Z-space with the softmax Jacobian) or a stationary Gaussian
AR(1) prior across weeks.  Escapement follows from any composition draw as

    N = M / sum_t(w_t * sum_lake(pi_k_t))

Reported proportions are clamped into the box [1e-10, 1 - 1e-7] before any
density evaluation; likelihoods refuse values outside it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .errors import (
    BoundaryValueError,
    DegenerateChainsError,
    DegeneratePosteriorError,
    ZeroLakeProportionError,
)
from .estimators import Method, Prior

CLAMP_LO = 1e-10
CLAMP_HI = 1.0 - 1e-7

# Enforcement bounds leave room for the renormalization that follows clamping.
_BOX_LO = 0.99 * CLAMP_LO
_BOX_HI = 1.0 - 0.99e-7

DEFAULT_PSI = 2.0
RHAT_THRESHOLD = 1.1


def clamp_to_box(p, lo: float = CLAMP_LO, hi: float = CLAMP_HI) -> np.ndarray:
    """Move a composition into the clamp box, preserving unit sum.

    Entries are clipped into [lo, hi] and the tiny mass surplus or deficit is
    redistributed over entries with room to absorb it.  Rows already inside
    the box are returned unchanged up to the final renormalization.
    """
    p = np.asarray(p, dtype=float)
    out = np.clip(p, lo, hi)
    resid = 1.0 - out.sum(axis=-1, keepdims=True)
    room = np.where(resid >= 0, hi - out, out - lo)
    total = room.sum(axis=-1, keepdims=True)
    out = out + resid * room / np.where(total > 0, total, 1.0)
    return out / out.sum(axis=-1, keepdims=True)


def _check_box(p_hat: np.ndarray) -> None:
    if np.any(p_hat < _BOX_LO) or np.any(p_hat > _BOX_HI):
        raise BoundaryValueError(
            f"proportions outside clamp box [{CLAMP_LO:g}, {CLAMP_HI!r}]; clamp first"
        )


def softmax_rows(z) -> np.ndarray:
    """Row-wise softmax, stable under large scores."""
    z = np.asarray(z, dtype=float)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _dirichlet_logpdf_rows(p: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Dirichlet log density per row; inputs are (T, K) matrices."""
    return (
        gammaln(alpha.sum(axis=-1))
        - gammaln(alpha).sum(axis=-1)
        + ((alpha - 1.0) * np.log(p)).sum(axis=-1)
    )


def mmd_log_likelihood(p_hat_t, pi_t, lambda_tilde_t: float) -> float:
    """Log density of a reported composition under the moment-matched model.

    Parameters
    ----------
    p_hat_t : array_like
        Reported proportions, inside the clamp box.
    pi_t : array_like
        Latent composition, strictly interior.
    lambda_tilde_t : float
        Moment-matched concentration, positive.
    """
    p = np.asarray(p_hat_t, dtype=float)
    pi = np.asarray(pi_t, dtype=float)
    if lambda_tilde_t <= 0:
        raise ValueError(f"lambda_tilde must be positive, got {lambda_tilde_t}")
    if np.any(pi <= 0):
        raise ValueError("pi must be strictly interior")
    _check_box(p)
    return float(_dirichlet_logpdf_rows(p[None, :], lambda_tilde_t * pi[None, :])[0])


def rdm_log_likelihood(p_hat_t, x_t, lambda_t: float) -> float:
    """Log density of a reported composition given latent counts.

    The Dirichlet parameter is ``lambda_t * x_t / n_t``.  A zero count is
    only admissible where the reported proportion sits at the clamp floor;
    such components carry no density and are excluded.  A zero count against
    an interior proportion returns ``-inf`` as an explicit rejection value.
    """
    p = np.asarray(p_hat_t, dtype=float)
    x = np.asarray(x_t)
    if np.any(x < 0) or not np.all(np.equal(np.mod(x, 1), 0)):
        raise ValueError("counts must be nonnegative integers")
    if lambda_t <= 0:
        raise ValueError(f"lambda must be positive, got {lambda_t}")
    _check_box(p)
    n = float(x.sum())
    if n <= 0:
        raise ValueError("counts sum to zero")
    alpha = lambda_t * np.asarray(x, dtype=float) / n
    zero = alpha == 0.0
    if np.any(zero & (p > 2.0 * CLAMP_LO)):
        return float("-inf")
    keep = ~zero
    return float(_dirichlet_logpdf_rows(p[None, keep], alpha[None, keep])[0])


def multinomial_logpmf(x, n: int, pi) -> float:
    """Multinomial log mass of integer counts x under cell probabilities pi."""
    x = np.asarray(x, dtype=float)
    pi = np.asarray(pi, dtype=float)
    if x.sum() != n:
        raise ValueError(f"counts sum to {x.sum()}, expected {n}")
    if np.any((x > 0) & (pi <= 0)):
        return float("-inf")
    terms = np.where(x > 0, x * np.log(np.where(pi > 0, pi, 1.0)), 0.0)
    return float(gammaln(n + 1) - gammaln(x + 1).sum() + terms.sum())


def _normal_logpdf(x, mean, var):
    return -0.5 * (np.log(2.0 * np.pi * var) + (x - mean) ** 2 / var)


def ar1_log_prior(z, phi: float, psi: float) -> float:
    """Stationary Gaussian AR(1) log prior over weekly score paths.

    ``z`` is (T, K); each stock's score path starts at N(0, psi^2) and evolves
    with innovation variance ``(1 - phi^2) psi^2`` so the marginal variance is
    psi^2 at every week.
    """
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    if not -1.0 < phi < 1.0:
        raise ValueError(f"phi must be in (-1, 1), got {phi}")
    if psi <= 0:
        raise ValueError(f"psi must be positive, got {psi}")
    total = float(_normal_logpdf(z[0], 0.0, psi**2).sum())
    if z.shape[0] > 1:
        innov = (1.0 - phi**2) * psi**2
        total += float(_normal_logpdf(z[1:], phi * z[:-1], innov).sum())
    return total


def ar1_prior_draws(t: int, k: int, phi: float, psi: float, size: int, rng) -> np.ndarray:
    """Draw ``size`` score paths of shape (T, K) from the AR(1) prior."""
    if not -1.0 < phi < 1.0:
        raise ValueError(f"phi must be in (-1, 1), got {phi}")
    if psi <= 0:
        raise ValueError(f"psi must be positive, got {psi}")
    z = np.empty((size, t, k))
    z[:, 0, :] = psi * rng.standard_normal((size, k))
    scale = psi * np.sqrt(1.0 - phi**2)
    for j in range(1, t):
        z[:, j, :] = phi * z[:, j - 1, :] + scale * rng.standard_normal((size, k))
    return z


@dataclass(frozen=True)
class ModelSpec:
    """Which Bayesian model to run.

    Attributes
    ----------
    likelihood : Method
        ``Method.BAYES_RDM`` or ``Method.BAYES_MMD``.
    prior : Prior
        Flat Dirichlet per week, or the AR(1) score prior.
    lambda_per_week : numpy.ndarray
        Per-week concentration: the calibrated lambda_hat for RDM, the
        moment-matched lambda_tilde for MMD.  Strictly positive.
    psi : float
        Marginal score scale of the AR(1) prior.
    """

    likelihood: Method
    prior: Prior
    lambda_per_week: np.ndarray
    psi: float = DEFAULT_PSI

    def __post_init__(self):
        if self.likelihood not in (Method.BAYES_RDM, Method.BAYES_MMD):
            raise ValueError(f"likelihood must be a Bayesian method, got {self.likelihood}")
        lam = np.asarray(self.lambda_per_week, dtype=float).reshape(-1)
        if np.any(~np.isfinite(lam)) or np.any(lam <= 0):
            raise ValueError("lambda_per_week entries must be positive and finite")
        if self.psi <= 0:
            raise ValueError(f"psi must be positive, got {self.psi}")
        lam = lam.copy()
        lam.flags.writeable = False
        object.__setattr__(self, "lambda_per_week", lam)
        object.__setattr__(self, "prior", Prior(self.prior))

    @classmethod
    def from_calibrations(cls, likelihood, prior, calibrations, psi: float = DEFAULT_PSI):
        """Build a spec from per-week calibration results.

        RDM consumes the calibrated ``lambda_hat``; MMD consumes the
        moment-matched ``lambda_tilde``.
        """
        likelihood = Method(likelihood)
        if likelihood is Method.BAYES_RDM:
            lam = [c.lambda_hat for c in calibrations]
        else:
            lam = [c.lambda_tilde for c in calibrations]
        return cls(likelihood=likelihood, prior=Prior(prior), lambda_per_week=np.array(lam), psi=psi)


@dataclass
class LatentState:
    """Mutable sampler state: scores, AR(1) coefficient, latent counts.

    ``x`` is None for the MMD likelihood; ``phi`` is fixed at 0 under the
    flat prior.
    """

    z: np.ndarray
    phi: float = 0.0
    x: np.ndarray | None = None

    def pi(self) -> np.ndarray:
        return softmax_rows(self.z)


@dataclass(frozen=True)
class PosteriorChains:
    """Kept posterior draws from all chains.

    Attributes
    ----------
    pi : numpy.ndarray
        Composition draws, shape (chains, kept, T, K); every row on the
        simplex within 1e-9.
    escapement : numpy.ndarray
        Escapement draw per kept iteration, shape (chains, kept).
    seed : int
        Base seed; chain c used seed + c.
    thin : int
        Thinning stride applied after burn-in.
    rhat : float
        Convergence diagnostic of the escapement draws.
    converged : bool
        True when rhat fell below the threshold before the iteration cap.
    accept : dict
        Mean acceptance rates of the proposal families, for diagnostics.
    """

    pi: np.ndarray
    escapement: np.ndarray
    seed: int
    thin: int
    rhat: float
    converged: bool
    accept: dict = field(default_factory=dict)

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=float)
        n = np.asarray(self.escapement, dtype=float)
        if pi.ndim != 4:
            raise ValueError(f"pi draws must be (chains, kept, T, K), got {pi.shape}")
        if n.shape != pi.shape[:2]:
            raise ValueError(f"escapement shape {n.shape} does not match pi {pi.shape[:2]}")
        if pi.shape[0] < 1 or pi.shape[1] < 1:
            raise ValueError(f"empty chains: {pi.shape}")
        if np.any(np.abs(pi.sum(axis=-1) - 1.0) > 1e-9):
            raise ValueError("a composition draw is off the simplex")
        if np.any(~np.isfinite(n)) or np.any(n <= 0):
            raise ValueError("escapement draws must be positive and finite")
        if self.thin < 1:
            raise ValueError(f"thin must be >= 1, got {self.thin}")
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "escapement", n)

    @property
    def chains(self) -> int:
        return self.pi.shape[0]

    @property
    def kept(self) -> int:
        return self.pi.shape[1]

    def pooled_pi(self) -> np.ndarray:
        """All chains' composition draws stacked, shape (chains * kept, T, K)."""
        return self.pi.reshape(-1, *self.pi.shape[2:])

    def pooled_escapement(self) -> np.ndarray:
        return self.escapement.reshape(-1)


def gelman_rubin(chains) -> float:
    """Potential scale reduction factor over post-burn-in chain segments.

    ``chains`` is (C, m) or a list of equal-length 1-D arrays, C >= 2 and
    m >= 10.  Returns sqrt(((m - 1)/m W + B/m) / W).
    """
    arr = np.asarray(chains, dtype=float)
    if arr.ndim != 2:
        raise ValueError(f"chains must be a (C, m) array, got shape {arr.shape}")
    c, m = arr.shape
    if c < 2:
        raise ValueError(f"need at least 2 chains, got {c}")
    if m < 10:
        raise ValueError(f"need at least 10 draws per chain, got {m}")
    w = float(arr.var(axis=1, ddof=1).mean())
    if w == 0.0:
        raise DegenerateChainsError("within-chain variance is zero")
    b = m * float(arr.mean(axis=1).var(ddof=1))
    return float(np.sqrt(((m - 1.0) / m * w + b / m) / w))


def escapement_value(pi: np.ndarray, weights: np.ndarray, marked: float, lake_mask) -> float:
    """Escapement implied by one composition draw: M over the weighted lake share."""
    lake = pi[:, lake_mask].sum(axis=1)
    denom = float(np.sum(weights * lake))
    if denom <= 1e-12:
        raise ZeroLakeProportionError(f"weighted lake share {denom:.3g} is numerically zero")
    return marked / denom


def escapement_from_draws(pi_draws, weights, marked: float, lake_mask) -> np.ndarray:
    """Escapement value for every composition draw in a (m, T, K) stack.

    Draws whose weighted lake share is numerically zero are dropped; more
    than 1% of them aborts with :class:`DegeneratePosteriorError`.
    """
    pi_draws = np.asarray(pi_draws, dtype=float)
    if pi_draws.ndim != 3:
        raise ValueError(f"pi draws must be (m, T, K), got shape {pi_draws.shape}")
    weights = np.asarray(weights, dtype=float)
    out = np.empty(pi_draws.shape[0])
    rejected = 0
    kept = 0
    for draw in pi_draws:
        try:
            out[kept] = escapement_value(draw, weights, marked, lake_mask)
            kept += 1
        except ZeroLakeProportionError:
            rejected += 1
    if rejected > 0.01 * pi_draws.shape[0]:
        raise DegeneratePosteriorError(
            f"{rejected} of {pi_draws.shape[0]} draws have a zero lake share"
        )
    return out[:kept]


@dataclass(frozen=True)
class PosteriorSummary:
    """Location and spread of a scalar posterior sample."""

    mean: float
    sd: float
    median: float
    ci_low: float
    ci_high: float


def posterior_summary(draws, level: float = 0.95) -> PosteriorSummary:
    """Mean, sd, median, and equal-tailed interval of a scalar sample.

    Quantiles use linear interpolation.  A constant sample yields sd 0 and a
    zero-width interval.
    """
    draws = np.asarray(draws, dtype=float).reshape(-1)
    if draws.size < 1:
        raise ValueError("no draws to summarize")
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must be in (0, 1), got {level}")
    tail = (1.0 - level) / 2.0
    lo, mid, hi = np.quantile(draws, [tail, 0.5, 1.0 - tail])
    sd = float(draws.std(ddof=1)) if draws.size > 1 else 0.0
    return PosteriorSummary(
        mean=float(draws.mean()), sd=sd, median=float(mid), ci_low=float(lo), ci_high=float(hi)
    )


def batch_means_se(draws, batches: int = 30) -> float:
    """Monte Carlo standard error of a mean from correlated draws.

    Splits the sample into ``batches`` contiguous batches and uses the
    spread of batch means; conservative for well-mixed chains.
    """
    draws = np.asarray(draws, dtype=float).reshape(-1)
    if draws.size < 2 * batches:
        raise ValueError(f"need at least {2 * batches} draws, got {draws.size}")
    size = draws.size // batches
    means = draws[: size * batches].reshape(batches, size).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(batches))
