"""Method-of-moments escapement estimation with population-level variances.

Total escapement past the marking sites is estimated from the marked count M
and the season-weighted lake-type composition:

    N_hat = M / sum_t(w_t * p_lake_t)

The delta-method variance of that ratio needs a per-week variance for the
lake-type proportion, and three choices are implemented:

* ``plugin``: the population-level model variance beta_tilde * p * (1 - p);
* ``alt``: the reported (pooled) squared SE inflated by 1 + lambda / n;
* ``naive``: the reported squared SE as-is, which understates uncertainty
  and is retained as a negative control.

When the lake-type aggregate has no reported SE of its own, one is pooled
from the per-stock SEs using the model's negative within-simplex covariance,
with a same-sign fallback bound; negative radicands are clamped to zero.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .calibration import CalibrationResult
from .core import CompositionEstimate, GmrDataset
from .errors import ZeroLakeProportionError

logger = logging.getLogger(__name__)

ZERO_PROPORTION_FLOOR = 1e-12


class Method(str, enum.Enum):
    """Escapement estimation methods reported by the package."""

    MOM = "mom"
    MOM_ALT = "mom-alt"
    MOM_NAIVE = "mom-naive"
    BAYES_RDM = "rdm"
    BAYES_MMD = "mmd"


class Prior(str, enum.Enum):
    """Prior families for the Bayesian samplers."""

    DIRICHLET_FLAT = "dir"
    AR1 = "ar1"


class Variant(str, enum.Enum):
    """Variance flavors for the method-of-moments interval."""

    PLUGIN = "plugin"
    ALT = "alt"
    NAIVE = "naive"


_VARIANT_METHOD = {
    Variant.PLUGIN: Method.MOM,
    Variant.ALT: Method.MOM_ALT,
    Variant.NAIVE: Method.MOM_NAIVE,
}


def sigma2_plugin(p_lake, beta_tilde):
    """Population-level variance beta_tilde * p * (1 - p) of a proportion."""
    p = np.asarray(p_lake, dtype=float)
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("proportions must lie in [0, 1]")
    out = beta_tilde * p * (1.0 - p)
    return float(out) if np.isscalar(p_lake) else out


def sigma2_alt(s2, lam, n):
    """Reported squared SE inflated to population level by 1 + lambda / n."""
    s2 = np.asarray(s2, dtype=float)
    if np.any(s2 < 0):
        raise ValueError("squared standard errors must be nonnegative")
    if lam < 0:
        raise ValueError(f"lambda must be nonnegative, got {lam}")
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    out = (1.0 + lam / n) * s2
    return float(out) if np.isscalar(s2) or s2.ndim == 0 else out


def pooled_lake_se(week: CompositionEstimate, beta_tilde: float, lake_mask) -> float:
    """Standard error of the summed lake-type proportion for one week.

    Combines per-stock variances with the model's negative within-simplex
    covariance ``-beta_tilde * p_k * p_l``, and with the perfectly
    negatively correlated bound ``-s_k * s_l``; returns the larger of the
    two roots.  Radicands are clamped at zero (logged) so the result is
    always a real number.
    """
    mask = np.asarray(lake_mask, dtype=bool)
    if mask.size != week.k:
        raise ValueError(f"mask length {mask.size} does not match {week.k} stocks")
    if not mask.any():
        raise ValueError("no lake-type stock in mask")
    p = week.p_hat.p[mask]
    s = week.se[mask]
    if p.size == 1:
        return float(s[0])
    var_sum = float(np.sum(s * s))
    # sum over unordered pairs k < l: (sum(v)^2 - sum(v^2)) / 2
    cross_p = (float(np.sum(p)) ** 2 - float(np.sum(p * p))) / 2.0
    cross_s = (float(np.sum(s)) ** 2 - var_sum) / 2.0
    rad_model = var_sum - 2.0 * beta_tilde * cross_p
    rad_bound = var_sum - 2.0 * cross_s
    if rad_model < 0 or rad_bound < 0:
        logger.debug(
            "pooled lake SE radicand clamped to 0 (model %.3g, bound %.3g)",
            rad_model, rad_bound,
        )
    return float(max(np.sqrt(max(rad_model, 0.0)), np.sqrt(max(rad_bound, 0.0))))


def lake_proportions(dataset: GmrDataset) -> np.ndarray:
    """Weekly summed lake-type proportions as a length-T vector."""
    return dataset.p_hat_matrix()[:, dataset.lake_mask].sum(axis=1)


def mom_escapement(marked: float, weights, p_lake) -> float:
    """Moment estimator M / sum(w * p_lake) of total escapement.

    Raises
    ------
    ZeroLakeProportionError
        If the weighted lake-type proportion is at or below 1e-12.
    """
    w = np.asarray(weights, dtype=float)
    p = np.asarray(p_lake, dtype=float)
    if w.shape != p.shape:
        raise ValueError(f"weights {w.shape} and proportions {p.shape} differ in shape")
    if marked <= 0:
        raise ValueError(f"marked count must be positive, got {marked}")
    denom = float(np.sum(w * p))
    if denom <= ZERO_PROPORTION_FLOOR:
        raise ZeroLakeProportionError(
            f"weighted lake-type proportion {denom:.3g} is numerically zero"
        )
    return marked / denom


def mom_variance(n_hat: float, weights, p_lake, sigma2_lake) -> float:
    """Delta-method variance of the moment estimator.

    ``sigma2_lake`` holds the selected per-week variance of the lake-type
    proportion (see :class:`Variant` and :func:`weekly_lake_sigma2`).
    """
    w = np.asarray(weights, dtype=float)
    p = np.asarray(p_lake, dtype=float)
    v = np.asarray(sigma2_lake, dtype=float)
    if not (w.shape == p.shape == v.shape):
        raise ValueError("weights, proportions, and variances must share one shape")
    if np.any(v < 0):
        raise ValueError("variances must be nonnegative")
    denom = float(np.sum(w * p))
    if denom <= ZERO_PROPORTION_FLOOR:
        raise ZeroLakeProportionError(
            f"weighted lake-type proportion {denom:.3g} is numerically zero"
        )
    return (n_hat / denom) ** 2 * float(np.sum(w * w * v))


def wald_interval(n_hat: float, variance: float, level: float = 0.95, paper_z: bool = False):
    """Symmetric normal-theory interval around the moment estimate.

    ``paper_z`` swaps the 0.95 multiplier 1.959964 for the conventional
    two-digit 1.96.
    """
    if variance < 0:
        raise ValueError(f"variance must be nonnegative, got {variance}")
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must be in (0, 1), got {level}")
    if paper_z and level == 0.95:
        z = 1.96
    else:
        z = float(norm.ppf(0.5 + level / 2.0))
    half = z * float(np.sqrt(variance))
    return n_hat - half, n_hat + half


def weekly_lake_sigma2(dataset: GmrDataset, calibrations, variant: Variant) -> np.ndarray:
    """Variant-selected per-week variance of the lake-type proportion.

    ``calibrations`` is the per-week list from ``calibrate_dataset`` (strict
    mode).  The reported lake-type SE is reconstructed by
    :func:`pooled_lake_se` for the ``alt`` and ``naive`` variants.
    """
    variant = Variant(variant)
    if len(calibrations) != dataset.t:
        raise ValueError(f"{len(calibrations)} calibrations for {dataset.t} weeks")
    p_lake = lake_proportions(dataset)
    out = np.empty(dataset.t)
    for i, (week, calib) in enumerate(zip(dataset.weeks, calibrations)):
        if not isinstance(calib, CalibrationResult):
            raise TypeError(f"week {dataset.week_labels[i]} has no calibration result")
        if variant is Variant.PLUGIN:
            out[i] = sigma2_plugin(p_lake[i], calib.beta_tilde)
        else:
            s_lake = pooled_lake_se(week, calib.beta_tilde, dataset.lake_mask)
            if variant is Variant.ALT:
                out[i] = sigma2_alt(s_lake**2, calib.lambda_hat, calib.n)
            else:
                out[i] = s_lake**2
    return out


@dataclass(frozen=True)
class EscapementEstimate:
    """A single escapement estimate with its uncertainty interval.

    Attributes
    ----------
    n_hat : float
        Point estimate of total escapement.
    sd : float
        Standard deviation (frequentist SE or posterior SD).
    ci_low, ci_high : float
        Interval bounds, ordered.
    method : Method
    prior : Prior or None
        Set for Bayesian methods only.
    rhat : float or None
        Convergence diagnostic for the monitored escapement draw.
    converged : bool or None
        False when any monitored diagnostic stayed at or above threshold.
    elapsed : float or None
        Wall-clock seconds spent producing the estimate.
    """

    n_hat: float
    sd: float
    ci_low: float
    ci_high: float
    method: Method
    prior: Prior | None = None
    rhat: float | None = None
    converged: bool | None = None
    elapsed: float | None = None

    def __post_init__(self):
        if not np.isfinite(self.n_hat) or self.n_hat <= 0:
            raise ValueError(f"escapement estimate must be positive and finite, got {self.n_hat}")
        if not np.isfinite(self.sd) or self.sd < 0:
            raise ValueError(f"sd must be nonnegative and finite, got {self.sd}")
        if self.ci_low > self.ci_high:
            raise ValueError(f"interval ({self.ci_low}, {self.ci_high}) is not ordered")


def mom_estimate(
    dataset: GmrDataset,
    calibrations,
    variant: Variant = Variant.PLUGIN,
    level: float = 0.95,
    paper_z: bool = False,
) -> EscapementEstimate:
    """Full method-of-moments estimate for one dataset and variance variant."""
    variant = Variant(variant)
    p_lake = lake_proportions(dataset)
    n_hat = mom_escapement(dataset.marked, dataset.weights, p_lake)
    sigma2 = weekly_lake_sigma2(dataset, calibrations, variant)
    variance = mom_variance(n_hat, dataset.weights, p_lake, sigma2)
    low, high = wald_interval(n_hat, variance, level=level, paper_z=paper_z)
    return EscapementEstimate(
        n_hat=n_hat,
        sd=float(np.sqrt(variance)),
        ci_low=low,
        ci_high=high,
        method=_VARIANT_METHOD[variant],
    )
