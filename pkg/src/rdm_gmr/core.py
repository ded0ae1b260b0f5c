"""Domain types for weekly stock-composition data in mark-recapture studies.

The objects here are deliberately thin: immutable containers with validated
invariants, plus the closure operation that puts raw proportion vectors on
the simplex.  All model math lives in the calibration, estimator, and
inference modules.

Conventions used throughout the package:

* ``K`` is the number of stocks (simplex dimension), ``T`` the number of
  strata ("weeks").
* Proportion vectors are one-dimensional ``float64`` arrays summing to 1.
* The lake mask is a boolean vector of length ``K``; ``True`` marks stocks
  that return to marking sites ("lake-type").
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvariantError, MaskError, NegativeEntryError, ZeroSumError

MAX_STOCKS = 64
MAX_WEEKS = 128

# Deviations of sum(p) from 1 at or below this are repaired silently by
# re-closure; anything larger is an input error, not float rounding.
CLOSE_TOLERANCE = 1e-6

# Inputs already within this of unit sum are returned unchanged so that
# closure is idempotent at the bit level.
_EXACT_SUM_TOLERANCE = 1e-12

_SUM_INVARIANT = 1e-9


def _as_float_vector(values, name: str, min_size: int = 2) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise InvariantError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size < min_size:
        raise InvariantError(f"{name} needs at least {min_size} entries, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise InvariantError(f"{name} contains non-finite entries")
    return arr


def close_composition(values) -> "Composition":
    """Project a nonnegative vector onto the simplex by dividing by its sum.

    Parameters
    ----------
    values : array_like
        Nonnegative entries, any positive total.

    Returns
    -------
    Composition

    Raises
    ------
    NegativeEntryError
        If any entry is negative.
    ZeroSumError
        If the entries sum to zero.
    """
    arr = _as_float_vector(values, "composition")
    if np.any(arr < 0):
        raise NegativeEntryError("composition entries must be nonnegative")
    total = arr.sum()
    if total <= 0:
        raise ZeroSumError("composition entries sum to zero")
    if abs(total - 1.0) > _EXACT_SUM_TOLERANCE:
        arr = arr / total
    return Composition(arr)


@dataclass(frozen=True)
class Composition:
    """A point on the K-simplex.

    Attributes
    ----------
    p : numpy.ndarray
        Proportions, nonnegative, summing to 1 within 1e-9.
    """

    p: np.ndarray

    def __post_init__(self):
        arr = _as_float_vector(self.p, "composition")
        if arr.size > MAX_STOCKS:
            raise InvariantError(f"composition has {arr.size} entries, limit is {MAX_STOCKS}")
        if np.any(arr < 0):
            raise NegativeEntryError("composition entries must be nonnegative")
        if abs(arr.sum() - 1.0) > _SUM_INVARIANT:
            raise InvariantError(
                f"composition sums to {arr.sum():.12g}; use close_composition first"
            )
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "p", arr)

    @property
    def k(self) -> int:
        return self.p.size


@dataclass(frozen=True)
class CompositionEstimate:
    """One week's estimated stock composition with reported uncertainty.

    Attributes
    ----------
    p_hat : Composition
        Point estimate of the composition.
    se : numpy.ndarray
        Reported standard error for each stock, nonnegative, same length.
    n : int
        Number of genotyped individuals behind the estimate.
    """

    p_hat: Composition
    se: np.ndarray
    n: int

    def __post_init__(self):
        se = _as_float_vector(self.se, "standard errors")
        if se.size != self.p_hat.k:
            raise InvariantError(
                f"{se.size} standard errors for {self.p_hat.k} stocks"
            )
        if np.any(se < 0):
            raise NegativeEntryError("standard errors must be nonnegative")
        if not isinstance(self.n, (int, np.integer)) or isinstance(self.n, bool):
            raise InvariantError("sample size n must be an integer")
        if self.n < 1:
            raise InvariantError(f"sample size n must be positive, got {self.n}")
        se = se.copy()
        se.flags.writeable = False
        object.__setattr__(self, "se", se)
        object.__setattr__(self, "n", int(self.n))

    @property
    def k(self) -> int:
        return self.p_hat.k


@dataclass(frozen=True)
class LatentCounts:
    """Latent integer stock counts for one week's genotyped sample.

    Attributes
    ----------
    x : numpy.ndarray
        Nonnegative integer counts, one per stock.
    """

    x: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.x)
        if arr.ndim != 1 or arr.size < 2:
            raise InvariantError(f"counts must be a vector of length >= 2, got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.integer):
            if not np.all(np.equal(np.mod(arr, 1), 0)):
                raise InvariantError("counts must be integers")
            arr = arr.astype(np.int64)
        if np.any(arr < 0):
            raise NegativeEntryError("counts must be nonnegative")
        arr = arr.astype(np.int64, copy=True)
        arr.flags.writeable = False
        object.__setattr__(self, "x", arr)

    @property
    def n(self) -> int:
        return int(self.x.sum())

    def rho(self) -> np.ndarray:
        """Latent sample proportions x / n."""
        n = self.n
        if n == 0:
            raise ZeroSumError("counts sum to zero")
        return self.x / n


@dataclass(frozen=True)
class GmrDataset:
    """A complete mark-recapture dataset over T weeks and K stocks.

    Attributes
    ----------
    weeks : tuple of CompositionEstimate
        Weekly composition estimates, one per stratum, shared stock order.
    weights : numpy.ndarray
        Relative escapement weight of each week; nonnegative, sums to 1.
    lake_mask : numpy.ndarray
        Boolean, ``True`` for lake-type stocks.  Both sides nonempty.
    marked : float
        Total number of marked fish released at the marking sites (M).
    stocks : tuple of str
        Stock names in column order.
    week_labels : tuple of int
        Original week identifiers in row order.
    """

    weeks: tuple
    weights: np.ndarray
    lake_mask: np.ndarray
    marked: float
    stocks: tuple
    week_labels: tuple

    def __post_init__(self):
        weeks = tuple(self.weeks)
        if not weeks:
            raise InvariantError("dataset has no weeks")
        if len(weeks) > MAX_WEEKS:
            raise InvariantError(f"dataset has {len(weeks)} weeks, limit is {MAX_WEEKS}")
        k = weeks[0].k
        for w in weeks:
            if w.k != k:
                raise InvariantError("all weeks must share the same number of stocks")
        stocks = tuple(str(s) for s in self.stocks)
        if len(stocks) != k:
            raise InvariantError(f"{len(stocks)} stock names for {k} stocks")
        if len(set(stocks)) != k:
            raise InvariantError("stock names must be unique")
        labels = tuple(int(x) for x in self.week_labels)
        if len(labels) != len(weeks):
            raise InvariantError(f"{len(labels)} week labels for {len(weeks)} weeks")
        if len(set(labels)) != len(labels):
            raise InvariantError("week labels must be unique")

        weights = _as_float_vector(self.weights, "weights", min_size=1)
        if weights.size != len(weeks):
            raise InvariantError(f"{weights.size} weights for {len(weeks)} weeks")
        if np.any(weights < 0):
            raise NegativeEntryError("weights must be nonnegative")
        if abs(weights.sum() - 1.0) > _SUM_INVARIANT:
            raise InvariantError(f"weights sum to {weights.sum():.12g}, expected 1")

        mask = np.asarray(self.lake_mask, dtype=bool).reshape(-1)
        if mask.size != k:
            raise MaskError(f"lake mask length {mask.size} does not match {k} stocks")
        if not mask.any():
            raise MaskError("no lake-type stock in mask")
        if mask.all():
            raise MaskError("no river-type stock in mask")

        marked = float(self.marked)
        if not np.isfinite(marked) or marked <= 0:
            raise InvariantError(f"marked count M must be positive, got {marked}")

        weights = weights.copy()
        weights.flags.writeable = False
        mask = mask.copy()
        mask.flags.writeable = False
        object.__setattr__(self, "weeks", weeks)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "lake_mask", mask)
        object.__setattr__(self, "marked", marked)
        object.__setattr__(self, "stocks", stocks)
        object.__setattr__(self, "week_labels", labels)

    @property
    def t(self) -> int:
        return len(self.weeks)

    @property
    def k(self) -> int:
        return self.weeks[0].k

    def p_hat_matrix(self) -> np.ndarray:
        """Weekly composition estimates stacked into a (T, K) matrix."""
        return np.vstack([w.p_hat.p for w in self.weeks])

    def se_matrix(self) -> np.ndarray:
        """Weekly standard errors stacked into a (T, K) matrix."""
        return np.vstack([w.se for w in self.weeks])

    def sample_sizes(self) -> np.ndarray:
        """Weekly genotyped sample sizes as an integer vector."""
        return np.array([w.n for w in self.weeks], dtype=np.int64)
