"""Calibrating composition-uncertainty dispersion from reported standard errors.

The reverse Dirichlet-multinomial model says the conditional variance of a
reported proportion is ``beta * p * (1 - p)`` with ``beta = 1 / (lambda + 1)``.
Each week's dispersion is therefore recovered by regressing reported squared
standard errors on ``q = p_hat * (1 - p_hat)`` through the origin:

    beta_hat = sum(q * s^2) / sum(q^2)

Marginally (after mixing over the genotyped sample) the variance scale becomes

    beta_tilde = ((n - 1) / n) * beta + 1 / n

which exceeds ``beta`` by the factor ``1 + lambda / n``; that factor is how
much population-level uncertainty is understated when reported standard
errors are used as-is.  ``lambda_tilde = 1 / beta_tilde - 1`` is the
concentration of the single-stage Dirichlet that matches those marginal
moments.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import CompositionEstimate, GmrDataset
from .errors import DegenerateFitError, ZeroVarianceError

R2_WARN_THRESHOLD = 0.8


def estimate_beta(p_hat, se) -> float:
    """Least-squares dispersion scale from one week's proportions and SEs.

    Parameters
    ----------
    p_hat : array_like
        Estimated proportions in [0, 1].
    se : array_like
        Reported standard errors, same length.

    Returns
    -------
    float
        beta_hat in (0, 1].  Fits above 1 are clamped to 1 with a warning.

    Raises
    ------
    DegenerateFitError
        If every proportion sits at 0 or 1, leaving no regressor signal.
    ZeroVarianceError
        If the weighted squared SEs vanish, which would send lambda to
        infinity.
    """
    p = np.asarray(p_hat, dtype=float)
    s = np.asarray(se, dtype=float)
    if p.shape != s.shape or p.ndim != 1:
        raise ValueError(f"p_hat and se must be matching vectors, got {p.shape} and {s.shape}")
    q = p * (1.0 - p)
    denom = float(np.sum(q * q))
    if denom == 0.0:
        raise DegenerateFitError("all proportions are 0 or 1; cannot fit a dispersion scale")
    numer = float(np.sum(q * s * s))
    if numer == 0.0:
        raise ZeroVarianceError(
            "reported standard errors carry no variance signal; lambda would be infinite"
        )
    beta = numer / denom
    if beta > 1.0:
        warnings.warn(
            f"fitted dispersion beta_hat={beta:.6g} exceeds 1; clamping to 1",
            stacklevel=2,
        )
        beta = 1.0
    return beta


def estimate_lambda(beta: float) -> float:
    """Dirichlet concentration implied by a dispersion scale: 1/beta - 1."""
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must be in (0, 1], got {beta}")
    return 1.0 / beta - 1.0


def beta_tilde(beta: float, n: int) -> float:
    """Marginal dispersion scale ((n - 1) * beta + 1) / n."""
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must be in (0, 1], got {beta}")
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    return ((n - 1.0) / n) * beta + 1.0 / n


def inflation_factor(lam: float, n: int) -> float:
    """Variance inflation 1 + lambda / n relating sample to population level."""
    if lam < 0:
        raise ValueError(f"lambda must be nonnegative, got {lam}")
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    return 1.0 + lam / n


@dataclass(frozen=True)
class CalibrationResult:
    """Fitted dispersion quantities for one week.

    Attributes
    ----------
    week : int
        Week label the fit belongs to.
    n : int
        Genotyped sample size used for the sample-to-population step.
    beta_hat : float
        Fitted conditional dispersion scale, in (0, 1].
    lambda_hat : float
        Implied concentration 1 / beta_hat - 1.
    beta_tilde : float
        Marginal dispersion scale ((n - 1) beta_hat + 1) / n.
    lambda_tilde : float
        Moment-matched single-stage concentration 1 / beta_tilde - 1.
    inflation : float
        Variance inflation factor 1 + lambda_hat / n, always >= 1.
    fit_points : tuple
        The (q, s^2) pairs behind the fit, one per stock.
    """

    week: int
    n: int
    beta_hat: float
    lambda_hat: float
    beta_tilde: float
    lambda_tilde: float
    inflation: float
    fit_points: tuple

    def __post_init__(self):
        if not 0.0 < self.beta_hat <= 1.0:
            raise ValueError(f"beta_hat out of (0, 1]: {self.beta_hat}")
        if self.lambda_hat != 1.0 / self.beta_hat - 1.0:
            raise ValueError("lambda_hat inconsistent with beta_hat")
        lo = max(self.beta_hat, 1.0 / self.n)
        if not lo <= self.beta_tilde <= 1.0 + 1e-15:
            raise ValueError(f"beta_tilde {self.beta_tilde} outside [{lo}, 1]")
        if self.inflation < 1.0:
            raise ValueError(f"inflation factor below 1: {self.inflation}")


def calibrate_week(week: CompositionEstimate, label: int = 0, beta: float | None = None) -> CalibrationResult:
    """Fit one week's dispersion and derive all dependent scales.

    ``beta`` overrides the per-week fit (used by pooled calibration).
    """
    p = week.p_hat.p
    q = p * (1.0 - p)
    if beta is None:
        beta = estimate_beta(p, week.se)
    lam = estimate_lambda(beta)
    btil = beta_tilde(beta, week.n)
    return CalibrationResult(
        week=label,
        n=week.n,
        beta_hat=beta,
        lambda_hat=lam,
        beta_tilde=btil,
        lambda_tilde=estimate_lambda(btil),
        inflation=inflation_factor(lam, week.n),
        fit_points=tuple(zip(q.tolist(), (week.se**2).tolist())),
    )


def pooled_beta(dataset: GmrDataset) -> float:
    """Single dispersion scale fitted to all weeks' (q, s^2) points jointly."""
    p = dataset.p_hat_matrix().ravel()
    s = dataset.se_matrix().ravel()
    return estimate_beta(p, s)


def calibrate_dataset(dataset: GmrDataset, pooled: bool = False, strict: bool = True) -> list:
    """Calibrate every week of a dataset.

    Parameters
    ----------
    dataset : GmrDataset
    pooled : bool
        Fit one shared beta_hat across weeks instead of per-week fits.
    strict : bool
        When True, degenerate weeks raise with week context.  When False,
        they yield ``(label, error_message)`` entries instead of results so
        reporting code can mark the row and continue.

    Returns
    -------
    list
        One CalibrationResult per week (strict), or a mix of results and
        ``(label, message)`` tuples (non-strict).
    """
    shared = pooled_beta(dataset) if pooled else None
    out = []
    for label, week in zip(dataset.week_labels, dataset.weeks):
        try:
            out.append(calibrate_week(week, label=label, beta=shared))
        except (DegenerateFitError, ZeroVarianceError) as exc:
            if strict:
                raise type(exc)(f"week {label}: {exc}") from None
            out.append((label, f"{type(exc).__name__}: {exc}"))
    return out


@dataclass(frozen=True)
class DiagnosticRow:
    """Mean-variance fit diagnostics for one week.

    Attributes
    ----------
    week : int
    slope : float
        Fitted beta_hat, or NaN when the fit is degenerate.
    r2 : float
        Coefficient of determination of the no-intercept fit (uncentered),
        or NaN when undefined.
    warn : bool
        True when r2 falls below the threshold or the fit is degenerate.
    points : tuple
        The (q, s^2) pairs entering the fit.
    note : str
        Empty, or the reason the week was flagged.
    """

    week: int
    slope: float
    r2: float
    warn: bool
    points: tuple
    note: str = ""


def mean_variance_diagnostic(dataset: GmrDataset, r2_threshold: float = R2_WARN_THRESHOLD) -> list:
    """Check the proportionality of squared SEs to q = p_hat (1 - p_hat).

    The dispersion model assumes s^2 is proportional to q within each week.
    For every week this returns the fitted slope, the uncentered R^2 of the
    no-intercept fit, and a WARN flag when R^2 drops below ``r2_threshold``
    (default 0.8) or the fit is degenerate.
    """
    rows = []
    for label, week in zip(dataset.week_labels, dataset.weeks):
        p = week.p_hat.p
        q = p * (1.0 - p)
        y = week.se**2
        points = tuple(zip(q.tolist(), y.tolist()))
        try:
            slope = estimate_beta(p, week.se)
        except (DegenerateFitError, ZeroVarianceError) as exc:
            rows.append(
                DiagnosticRow(
                    week=label, slope=float("nan"), r2=float("nan"),
                    warn=True, points=points, note=f"{type(exc).__name__}: {exc}",
                )
            )
            continue
        ss_tot = float(np.sum(y * y))
        ss_res = float(np.sum((y - slope * q) ** 2))
        r2 = 1.0 - ss_res / ss_tot
        warn = bool(r2 < r2_threshold)
        note = f"R^2 {r2:.3f} below threshold {r2_threshold}" if warn else ""
        rows.append(DiagnosticRow(week=label, slope=slope, r2=r2, warn=warn, points=points, note=note))
    return rows
