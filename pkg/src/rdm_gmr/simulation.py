"""Synthetic GSI datasets and the estimator comparison study.

Datasets are generated under the two-stage composition model: latent counts
``X_t ~ Multinomial(n_t, pi_t)``, reported proportions
``p_hat_t ~ Dirichlet(lambda_t X_t / n_t)``.  Two rejection constraints keep
downstream arithmetic nondegenerate: every latent proportion must exceed
1e-10 and every reported proportion must stay inside [1e-10, 1 - 1e-7].  A
rejected reported composition discards its latent counts too, so emitted
pairs follow the jointly truncated law.

Reported standard errors carry no published formula, so they are synthetic.
The default rule evaluates the conditional Dirichlet standard deviation at
the reported proportion, s = sqrt(beta_t * p_hat (1 - p_hat)) with
beta_t = 1/(lambda_t + 1), which reproduces exactly the proportionality the
dispersion calibration assumes; "rho" evaluates it at the latent proportion
instead, leaving calibration approximately unbiased rather than exact.

The study harness replays the full estimation protocol per replicate:
simulate, recalibrate the dispersion from the synthetic data, run every
requested method, and score against the known escapement.  Replicate r of a
study seeded s draws from ``numpy.random.default_rng((s, r))``, so studies
are reproducible and replicates independent.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace

import numpy as np

from .calibration import calibrate_dataset
from .core import Composition, CompositionEstimate, GmrDataset, LatentCounts, close_composition
from .errors import RdmGmrError, RejectionBudgetExceededError, StudyFailureError
from .estimators import EscapementEstimate, Method, Prior, Variant, mom_estimate
from .inference import ModelSpec, softmax_rows
from .sampler import McmcConfig, bayes_estimate

logger = logging.getLogger(__name__)

P_HAT_LO = 1e-10
P_HAT_HI = 1.0 - 1e-7
RHO_FLOOR = 1e-10
DEFAULT_BUDGET = 10**6
SE_RULES = ("phat", "rho")
MAX_FAILURE_RATE = 0.05

MOM_METHODS = ("mom", "mom-alt", "mom-naive")
BAYES_METHODS = ("rdm-dir", "rdm-ar1", "mmd-dir", "mmd-ar1")
STUDY_METHODS = BAYES_METHODS + MOM_METHODS

_MOM_VARIANTS = {
    "mom": Variant.PLUGIN,
    "mom-alt": Variant.ALT,
    "mom-naive": Variant.NAIVE,
}
_BAYES_SPECS = {
    "rdm-dir": (Method.BAYES_RDM, Prior.DIRICHLET_FLAT),
    "rdm-ar1": (Method.BAYES_RDM, Prior.AR1),
    "mmd-dir": (Method.BAYES_MMD, Prior.DIRICHLET_FLAT),
    "mmd-ar1": (Method.BAYES_MMD, Prior.AR1),
}


@dataclass(frozen=True)
class SimulationTruth:
    """Generating configuration for a synthetic season.

    Attributes
    ----------
    pi : numpy.ndarray
        True weekly compositions, (T, K), rows on the simplex.
    n_true : float
        True total escapement.
    weights : numpy.ndarray
        Run weights, length T, nonnegative, summing to 1.
    n : numpy.ndarray
        Weekly GSI sample sizes, integers >= 1.
    lam : numpy.ndarray
        Weekly dispersion parameters, strictly positive.
    lake_mask : numpy.ndarray
        Boolean length K; both lake and river sides nonempty.
    """

    pi: np.ndarray
    n_true: float
    weights: np.ndarray
    n: np.ndarray
    lam: np.ndarray
    lake_mask: np.ndarray
    stocks: tuple = ()
    week_labels: tuple = ()

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=float)
        if pi.ndim != 2 or pi.shape[0] < 1 or pi.shape[1] < 2:
            raise ValueError(f"pi must be (T, K) with K >= 2, got shape {pi.shape}")
        if np.any(pi <= 0) or np.any(np.abs(pi.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("pi rows must be strictly positive and sum to 1")
        t, k = pi.shape
        weights = np.asarray(self.weights, dtype=float)
        n = np.asarray(self.n, dtype=np.int64)
        lam = np.asarray(self.lam, dtype=float)
        mask = np.asarray(self.lake_mask, dtype=bool)
        if weights.shape != (t,) or n.shape != (t,) or lam.shape != (t,):
            raise ValueError("weights, n, and lam must all have length T")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be nonnegative and sum to 1")
        if np.any(n < 1):
            raise ValueError("sample sizes must be >= 1")
        if np.any(~np.isfinite(lam)) or np.any(lam <= 0):
            raise ValueError("lam entries must be positive and finite")
        if mask.shape != (k,) or not mask.any() or mask.all():
            raise ValueError("lake mask must split the stocks into two nonempty groups")
        if not np.isfinite(self.n_true) or self.n_true <= 0:
            raise ValueError(f"n_true must be positive, got {self.n_true}")
        stocks = tuple(self.stocks) or tuple(f"stock{i+1}" for i in range(k))
        labels = tuple(self.week_labels) or tuple(range(1, t + 1))
        if len(stocks) != k or len(labels) != t:
            raise ValueError("stocks and week_labels must match pi's shape")
        pi, weights, n, lam, mask = (a.copy() for a in (pi, weights, n, lam, mask))
        for arr in (pi, weights, n, lam, mask):
            arr.flags.writeable = False
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "lake_mask", mask)
        object.__setattr__(self, "n_true", float(self.n_true))
        object.__setattr__(self, "stocks", stocks)
        object.__setattr__(self, "week_labels", labels)

    @property
    def t(self) -> int:
        return self.pi.shape[0]

    @property
    def k(self) -> int:
        return self.pi.shape[1]

    def lake_share(self) -> np.ndarray:
        """True weekly lake-type proportion, length T."""
        return self.pi[:, self.lake_mask].sum(axis=1)

    @property
    def marked(self) -> float:
        """Lake-type escapement count implied by the truth."""
        return self.n_true * float(np.sum(self.weights * self.lake_share()))


def draw_multinomial(n: int, pi: Composition, rng) -> LatentCounts:
    """Latent stock counts for one week's sample."""
    if n < 1:
        raise ValueError(f"sample size must be >= 1, got {n}")
    p = pi.p if isinstance(pi, Composition) else np.asarray(pi, dtype=float)
    return LatentCounts(x=rng.multinomial(n, p))


def draw_dirichlet(alpha, rng) -> Composition:
    """Strictly interior Dirichlet draw via normalized gamma variates."""
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha <= 0):
        raise ValueError("alpha entries must be positive")
    # A tiny shape can underflow its gamma variate to exactly 0; redraw.
    for _ in range(100):
        g = rng.standard_gamma(alpha)
        if np.all(g > 0):
            return Composition(p=g / g.sum())
    raise RejectionBudgetExceededError(
        f"gamma variates underflow persistently at alpha min {alpha.min():.3g}"
    )


def _synthetic_se(p_hat: np.ndarray, rho: np.ndarray, lam: float, rule: str) -> np.ndarray:
    beta = 1.0 / (lam + 1.0)
    base = p_hat if rule == "phat" else rho
    return np.sqrt(beta * base * (1.0 - base))


def simulate_dataset(
    truth: SimulationTruth,
    rng,
    se_rule: str = "phat",
    budget: int = DEFAULT_BUDGET,
) -> GmrDataset:
    """One synthetic season drawn under the two-stage model.

    Each week repeats until both rejection constraints pass: a zeroed latent
    proportion redraws the counts, and an out-of-box reported proportion
    redraws the week from the counts up.  ``budget`` caps the total number
    of rejected draws per week.
    """
    if se_rule not in SE_RULES:
        raise ValueError(f"se_rule must be one of {SE_RULES}, got {se_rule!r}")
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    weeks = []
    for t in range(truth.t):
        n = int(truth.n[t])
        lam = float(truth.lam[t])
        pi_row = truth.pi[t]
        attempts = 0
        while True:
            attempts += 1
            if attempts > budget:
                raise RejectionBudgetExceededError(
                    f"week {truth.week_labels[t]} exceeded {budget} draw attempts"
                )
            counts = rng.multinomial(n, pi_row)
            rho = counts / n
            if np.any(rho <= RHO_FLOOR):
                continue
            p_hat = rng.standard_gamma(lam * rho)
            total = p_hat.sum()
            if total <= 0 or np.any(p_hat <= 0):
                continue
            p_hat = p_hat / total
            if np.any(p_hat < P_HAT_LO) or np.any(p_hat > P_HAT_HI):
                continue
            break
        se = _synthetic_se(p_hat, rho, lam, se_rule)
        weeks.append(CompositionEstimate(p_hat=close_composition(p_hat), se=se, n=n))
    return GmrDataset(
        weeks=tuple(weeks),
        weights=truth.weights,
        lake_mask=truth.lake_mask,
        marked=truth.marked,
        stocks=truth.stocks,
        week_labels=truth.week_labels,
    )


# Default study season: 12 weeks, 4 stocks (2 lake-type, 2 river-type),
# weights, sample sizes, and dispersion levels at realistic sockeye scale.
# A season-long four-stock program: two lake-type stocks (one dominant, one
# minor) against two river-type stocks, twelve weekly strata.  The first four
# weeks lean river with a looser mixture; the remaining weeks hold a higher
# lake share solved so the weighted season lake share is exactly 41,326/60,000,
# i.e. the implied weir count M is 41,326 fish at a true run of 60,000.
_STUDY_WEIGHTS = np.array(
    [0.02, 0.01, 0.04, 0.03, 0.18, 0.18, 0.11, 0.11, 0.09, 0.16, 0.04, 0.04]
) / 1.01
_STUDY_N = np.array([17, 13, 38, 26, 172, 178, 112, 105, 84, 146, 43, 42])
_STUDY_INFLATION = np.array(
    [1.88, 1.76, 1.89, 1.89, 1.92, 1.91, 2.01, 1.94, 1.94, 1.93, 1.97, 1.83]
)
_STUDY_N_TRUE = 60_000.0
_STUDY_MARKED = 41_326.0
_STUDY_EARLY = 4
_STUDY_EARLY_SHARE = 0.45
_STUDY_EARLY_MINOR = 0.045
_STUDY_LATE_MINOR = 0.022


def default_study_truth() -> SimulationTruth:
    """The season configuration used by the default comparison study."""
    early = np.arange(_STUDY_N.size) < _STUDY_EARLY
    w_early = _STUDY_WEIGHTS[early].sum()
    late_share = (_STUDY_MARKED / _STUDY_N_TRUE - _STUDY_EARLY_SHARE * w_early) / (
        1.0 - w_early
    )
    share = np.where(early, _STUDY_EARLY_SHARE, late_share)
    minor = np.where(early, _STUDY_EARLY_MINOR, _STUDY_LATE_MINOR)
    pi = np.column_stack([share - minor, minor, 1.0 - share - minor, minor])
    return SimulationTruth(
        pi=pi,
        n_true=_STUDY_N_TRUE,
        weights=_STUDY_WEIGHTS,
        n=_STUDY_N,
        lam=(_STUDY_INFLATION - 1.0) * _STUDY_N,
        lake_mask=np.array([True, True, False, False]),
        stocks=("lake_major", "lake_minor", "river_major", "river_minor"),
    )


@dataclass(frozen=True)
class StudyMetrics:
    """Scores for one estimation method over the successful replicates.

    ``cp`` counts strict coverage: an interval covers only when it contains
    the truth in its interior, so a zero-width interval never covers.
    """

    rbias: float
    rrmse: float
    cp: float
    lci: float
    mean_time: float
    replicates: int
    failures: int = 0

    def __post_init__(self):
        if not 0.0 <= self.cp <= 1.0:
            raise ValueError(f"cp must be in [0, 1], got {self.cp}")
        if self.rbias**2 > self.rrmse**2 * (1.0 + 1e-9) + 1e-30:
            raise ValueError(f"rrmse {self.rrmse} below |rbias| {self.rbias}")
        if self.lci < 0:
            raise ValueError(f"lci must be nonnegative, got {self.lci}")
        if self.replicates < 0 or self.failures < 0:
            raise ValueError("replicate and failure counts must be nonnegative")


def _study_estimator(name, mcmc: McmcConfig, level: float, paper_z: bool):
    """Map a method name to callable(dataset, calibrations, seed) -> estimate."""
    if callable(name):
        return getattr(name, "__name__", "custom"), name
    key = str(name).lower()
    if key in _MOM_VARIANTS:
        variant = _MOM_VARIANTS[key]

        def run_mom(dataset, calibrations, seed, variant=variant):
            return mom_estimate(dataset, calibrations, variant=variant, level=level, paper_z=paper_z)

        return key, run_mom
    if key in _BAYES_SPECS:
        likelihood, prior = _BAYES_SPECS[key]

        def run_bayes(dataset, calibrations, seed, likelihood=likelihood, prior=prior):
            spec = ModelSpec.from_calibrations(likelihood, prior, calibrations)
            estimate, _ = bayes_estimate(dataset, spec, replace(mcmc, seed=seed), level=level)
            return estimate

        return key, run_bayes
    raise ValueError(f"unknown method {name!r}; expected one of {STUDY_METHODS} or a callable")


DEFAULT_STUDY_MCMC = McmcConfig(chains=2, iters=2000, max_iters=8000, keep=1000)


def run_study(
    truth: SimulationTruth,
    methods,
    replicates: int,
    seed: int,
    mcmc: McmcConfig | None = None,
    level: float = 0.95,
    paper_z: bool = False,
    se_rule: str = "phat",
    budget: int = DEFAULT_BUDGET,
) -> dict:
    """Replicate the full estimation protocol and score each method.

    Returns an ordered mapping from method name to :class:`StudyMetrics`.
    Replicate r uses the RNG stream seeded (seed, r); Bayesian runs inside
    replicate r derive their chain seeds from the same pair, so the study is
    reproducible end to end.  A method failing on a replicate is excluded
    from that method's scores; more than 5% failures for any single method
    raises :class:`StudyFailureError`.
    """
    if replicates < 1:
        raise ValueError(f"replicates must be >= 1, got {replicates}")
    mcmc = mcmc or DEFAULT_STUDY_MCMC
    resolved = [_study_estimator(m, mcmc, level, paper_z) for m in methods]
    names = [name for name, _ in resolved]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate method names in {names}")

    results = {name: [] for name in names}
    failures = dict.fromkeys(names, 0)
    for r in range(replicates):
        rng = np.random.default_rng((seed, r))
        dataset = simulate_dataset(truth, rng, se_rule=se_rule, budget=budget)
        try:
            calibrations = calibrate_dataset(dataset)
        except RdmGmrError as exc:
            logger.warning("replicate %d: calibration failed (%s)", r, exc)
            for name in names:
                failures[name] += 1
            continue
        for index, (name, estimator) in enumerate(resolved):
            chain_seed = int(np.random.SeedSequence((seed, r, index)).generate_state(1)[0])
            start = time.perf_counter()
            try:
                estimate = estimator(dataset, calibrations, chain_seed)
            except RdmGmrError as exc:
                logger.warning("replicate %d: method %s failed (%s)", r, name, exc)
                failures[name] += 1
                continue
            results[name].append(
                (estimate.n_hat, estimate.ci_low, estimate.ci_high, time.perf_counter() - start)
            )

    for name in names:
        if failures[name] > MAX_FAILURE_RATE * replicates:
            raise StudyFailureError(
                f"method {name} failed {failures[name]} of {replicates} replicates"
            )

    n_true = truth.n_true
    metrics = {}
    for name in names:
        rows = np.array(results[name], dtype=float).reshape(-1, 4)
        rel_err = (rows[:, 0] - n_true) / n_true
        covered = (rows[:, 1] < n_true) & (n_true < rows[:, 2])
        metrics[name] = StudyMetrics(
            rbias=float(rel_err.mean()),
            rrmse=float(np.sqrt(np.mean(rel_err**2))),
            cp=float(covered.mean()),
            lci=float(np.mean(rows[:, 2] - rows[:, 1])),
            mean_time=float(rows[:, 3].mean()),
            replicates=rows.shape[0],
            failures=failures[name],
        )
    return metrics


@dataclass(frozen=True)
class PsiPredictive:
    """Prior predictive distribution of one first-week stock proportion.

    ``density`` holds the normalized histogram over 100 equal bins of [0, 1];
    quantiles are equal-tailed at the probabilities in ``quantile_probs``.
    """

    psi: float
    k: int
    draws: int
    bin_edges: np.ndarray
    density: np.ndarray
    quantile_probs: np.ndarray
    quantiles: np.ndarray
    mean: float

    def mass(self, lo: float, hi: float) -> float:
        """Probability assigned to [lo, hi) by the histogram."""
        width = self.bin_edges[1] - self.bin_edges[0]
        inside = (self.bin_edges[:-1] >= lo) & (self.bin_edges[:-1] < hi)
        return float(self.density[inside].sum() * width)


def psi_prior_predictive(k: int, psi: float, draws: int = 10_000, rng=None) -> PsiPredictive:
    """Sample the first-week proportion implied by the autoregressive prior.

    At the first week the prior reduces to iid N(0, psi^2) scores pushed
    through softmax; the spread of the resulting proportion is how psi is
    chosen.
    """
    if k < 2:
        raise ValueError(f"need at least 2 stocks, got {k}")
    if draws < 1000:
        raise ValueError(f"need at least 1000 draws, got {draws}")
    if psi <= 0:
        raise ValueError(f"psi must be positive, got {psi}")
    rng = rng if rng is not None else np.random.default_rng()
    z = psi * rng.standard_normal((draws, k))
    samples = softmax_rows(z)[:, 0]
    edges = np.linspace(0.0, 1.0, 101)
    density, _ = np.histogram(samples, bins=edges, density=True)
    probs = np.array([0.025, 0.25, 0.5, 0.75, 0.975])
    return PsiPredictive(
        psi=float(psi),
        k=int(k),
        draws=int(draws),
        bin_edges=edges,
        density=density,
        quantile_probs=probs,
        quantiles=np.quantile(samples, probs),
        mean=float(samples.mean()),
    )
