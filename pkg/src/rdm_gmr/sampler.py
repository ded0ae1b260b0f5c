"""Metropolis-within-Gibbs sampling for the Bayesian escapement models.

One sweep updates, in order:

* the weekly score blocks ``Z[t, :]`` with adaptive Gaussian random-walk
  proposals, even-indexed weeks first and odd-indexed weeks second so the
  AR(1) prior factors touched by simultaneous updates never overlap;
* the AR(1) coefficient ``phi`` by a random walk on atanh(phi) with the
  change-of-variables Jacobian (AR(1) prior only);
* the latent counts ``X[t, :]`` by integer transfers of 1 or 2 between two
  stocks, respecting the floor of one count wherever the reported proportion
  is off the clamp floor (RDM likelihood only).

Proposal scales adapt toward a target acceptance rate during the first half
of the initial run and are frozen afterwards, so every kept draw comes from
a fixed kernel.  Burn-in is the first half of the total run; the remainder
is thinned to the configured budget.  When the escapement diagnostic has not
converged the run is extended by doubling until an iteration cap.

Chain c draws from its own generator seeded ``seed + c``, which makes runs
reproducible for a fixed configuration.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .core import GmrDataset
from .errors import DegenerateChainsError, InitializationError
from .estimators import EscapementEstimate, Method, Prior
from .inference import (
    CLAMP_LO,
    DEFAULT_PSI,
    RHAT_THRESHOLD,
    LatentState,
    ModelSpec,
    PosteriorChains,
    clamp_to_box,
    escapement_value,
    gelman_rubin,
    posterior_summary,
    softmax_rows,
)

logger = logging.getLogger(__name__)

_INIT_STEP = 0.5
_ADAPT_RATE = 0.66


@dataclass(frozen=True)
class McmcConfig:
    """Run-length and tuning knobs for :func:`run_mcmc`.

    Attributes
    ----------
    chains : int
        Number of independent chains.
    iters : int
        Initial iterations per chain; the first half is burn-in and also the
        adaptation window.
    max_iters : int
        Cap for convergence-driven doubling; set equal to ``iters`` to
        disable extension.
    keep : int
        Maximum kept draws per chain after burn-in and thinning.
    seed : int
        Base seed; chain c uses seed + c.
    target_accept : float
        Adaptation target for the random-walk acceptance rate.
    x_sweeps : int
        Latent-count proposals per week per iteration (RDM only).
    rhat_threshold : float
        Convergence bound for the escapement diagnostic.
    prior_only : bool
        Drop the likelihood term; used to check prior implementations.
    """

    chains: int = 3
    iters: int = 4000
    max_iters: int = 32000
    keep: int = 10000
    seed: int = 0
    target_accept: float = 0.38
    x_sweeps: int = 4
    rhat_threshold: float = RHAT_THRESHOLD
    prior_only: bool = False

    def __post_init__(self):
        if self.chains < 1:
            raise ValueError(f"chains must be >= 1, got {self.chains}")
        if self.iters < 20:
            raise ValueError(f"iters must be >= 20, got {self.iters}")
        if self.max_iters < self.iters:
            raise ValueError("max_iters must be >= iters")
        if self.keep < 1:
            raise ValueError(f"keep must be >= 1, got {self.keep}")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError(f"target_accept must be in (0, 1), got {self.target_accept}")
        if self.x_sweeps < 1:
            raise ValueError(f"x_sweeps must be >= 1, got {self.x_sweeps}")


def _initial_counts(p_hat: np.ndarray, n: int, floor: np.ndarray) -> np.ndarray:
    """Integer counts near n * p_hat with the required row sum and floor."""
    if int(floor.sum()) > n:
        raise InitializationError(
            f"sample size {n} cannot give every observed stock one count"
        )
    x = np.floor(n * p_hat).astype(np.int64)
    remainder = n * p_hat - x
    while x.sum() < n:
        j = int(np.argmax(remainder))
        x[j] += 1
        remainder[j] = -1.0
    while x.sum() > n:
        j = int(np.argmax(np.where(x > floor, x, -1)))
        x[j] -= 1
    for k in np.nonzero((x == 0) & (floor == 1))[0]:
        j = int(np.argmax(x - floor))
        x[j] -= 1
        x[k] += 1
    if np.any(x < floor) or x.sum() != n:
        raise InitializationError("could not build valid starting counts")
    return x


class _Chain:
    """State and update kernels for one chain."""

    def __init__(self, model: "_Model", seed: int):
        self.model = model
        self.rng = np.random.default_rng(seed)
        m = model

        z = np.log(m.p_clamped)
        if m.flat:
            z = z - z[:, -1:]
        else:
            z = z - z.mean(axis=1, keepdims=True)
            np.clip(z, -2.5 * m.psi, 2.5 * m.psi, out=z)
        x = None
        if m.rdm:
            x = np.vstack(
                [
                    _initial_counts(m.p_clamped[t], int(m.n[t]), m.count_floor[t])
                    for t in range(m.t_weeks)
                ]
            )
        self.state = LatentState(z=z, phi=0.0, x=x)
        self.pi = softmax_rows(z)
        self.log_pi = np.log(self.pi)

        self.z_step = np.full(m.t_weeks, _INIT_STEP)
        self.phi_step = _INIT_STEP
        self.done = 0
        self.z_prop = 0
        self.z_acc = 0
        self.phi_prop = 0
        self.phi_acc = 0
        self.x_prop = 0
        self.x_acc = 0
        self.pi_trace: list = []
        self.n_trace: list = []

    # -- log-density pieces ------------------------------------------------

    def _loglik_rows(self, rows: np.ndarray, pi_rows: np.ndarray, log_pi_rows: np.ndarray) -> np.ndarray:
        """Per-week log-likelihood terms that depend on pi (constants dropped)."""
        m = self.model
        if m.prior_only:
            return np.zeros(rows.size)
        if m.rdm:
            return (self.state.x[rows] * log_pi_rows).sum(axis=1)
        alpha = m.lam[rows, None] * pi_rows
        return (-gammaln(alpha) + (alpha - 1.0) * m.log_p[rows]).sum(axis=1)

    def _logprior_rows(self, rows: np.ndarray, z_rows: np.ndarray, log_pi_rows: np.ndarray) -> np.ndarray:
        """Per-week prior terms touched by updating the given (non-adjacent) rows."""
        m = self.model
        if m.flat:
            return log_pi_rows.sum(axis=1)
        z = self.state.z
        phi = self.state.phi
        innov = (1.0 - phi**2) * m.psi**2
        out = np.zeros(rows.size)
        first = rows == 0
        if first.any():
            out[first] = -0.5 * (z_rows[first] ** 2).sum(axis=1) / m.psi**2
        later = ~first
        if later.any():
            prev = z[rows[later] - 1]
            out[later] = -0.5 * ((z_rows[later] - phi * prev) ** 2).sum(axis=1) / innov
        has_next = rows < m.t_weeks - 1
        if has_next.any():
            nxt = z[rows[has_next] + 1]
            out[has_next] += -0.5 * ((nxt - phi * z_rows[has_next]) ** 2).sum(axis=1) / innov
        return out

    # -- update kernels ----------------------------------------------------

    def _update_z_half(self, rows: np.ndarray, adapting: bool) -> None:
        m = self.model
        z_old = self.state.z[rows]
        noise = self.rng.standard_normal((rows.size, m.n_free))
        z_new = z_old.copy()
        z_new[:, : m.n_free] += self.z_step[rows, None] * noise

        pi_old = self.pi[rows]
        log_pi_old = self.log_pi[rows]
        pi_new = softmax_rows(z_new)
        log_pi_new = np.log(pi_new)

        delta = self._loglik_rows(rows, pi_new, log_pi_new) - self._loglik_rows(
            rows, pi_old, log_pi_old
        )
        delta += self._logprior_rows(rows, z_new, log_pi_new) - self._logprior_rows(
            rows, z_old, log_pi_old
        )
        accept = np.log(self.rng.random(rows.size)) < delta
        idx = rows[accept]
        self.state.z[idx] = z_new[accept]
        self.pi[idx] = pi_new[accept]
        self.log_pi[idx] = log_pi_new[accept]

        self.z_prop += rows.size
        self.z_acc += int(accept.sum())
        if adapting:
            gamma = 2.0 / (1.0 + self.done) ** _ADAPT_RATE
            self.z_step[rows] *= np.exp(gamma * (accept - m.target_accept))

    def _phi_terms(self, phi: float) -> float:
        m = self.model
        z = self.state.z
        innov = (1.0 - phi**2) * m.psi**2
        resid = z[1:] - phi * z[:-1]
        count = resid.size
        return -0.5 * (count * np.log(innov) + (resid**2).sum() / innov)

    def _update_phi(self, adapting: bool) -> None:
        m = self.model
        eta = np.arctanh(self.state.phi)
        eta_new = eta + self.phi_step * self.rng.standard_normal()
        phi_new = np.tanh(eta_new)
        # Uniform(-1, 1) prior on phi maps to a (1 - phi^2) density on eta.
        delta = (
            self._phi_terms(phi_new)
            - self._phi_terms(self.state.phi)
            + np.log1p(-phi_new**2)
            - np.log1p(-self.state.phi**2)
        )
        accept = np.log(self.rng.random()) < delta
        if accept:
            self.state.phi = float(phi_new)
        self.phi_prop += 1
        self.phi_acc += int(accept)
        if adapting:
            gamma = 2.0 / (1.0 + self.done) ** _ADAPT_RATE
            self.phi_step *= np.exp(gamma * (float(accept) - m.target_accept))

    def _update_x(self) -> None:
        m = self.model
        x = self.state.x
        t = m.t_weeks
        donors = self.rng.integers(0, m.k, size=t)
        shift = self.rng.integers(1, m.k, size=t)
        receivers = (donors + shift) % m.k
        delta_n = self.rng.integers(1, 3, size=t)
        weeks = np.arange(t)

        floor_d = m.count_floor[weeks, donors]
        feasible = x[weeks, donors] - delta_n >= floor_d

        xd_old = x[weeks, donors].astype(float)
        xr_old = x[weeks, receivers].astype(float)
        xd_new = xd_old - delta_n
        xr_new = xr_old + delta_n

        scale = m.lam / m.n
        ad_old = scale * xd_old
        ar_old = scale * xr_old
        ad_new = scale * xd_new
        ar_new = scale * xr_new

        log_pd = m.log_p[weeks, donors]
        log_pr = m.log_p[weeks, receivers]
        if m.prior_only:
            d_lik = np.zeros(t)
        else:
            d_lik = (
                self._alpha_term(ad_new, log_pd)
                + self._alpha_term(ar_new, log_pr)
                - self._alpha_term(ad_old, log_pd)
                - self._alpha_term(ar_old, log_pr)
            )
        d_mult = (
            gammaln(xd_old + 1.0)
            + gammaln(xr_old + 1.0)
            - gammaln(xd_new + 1.0)
            - gammaln(xr_new + 1.0)
            + delta_n * (self.log_pi[weeks, receivers] - self.log_pi[weeks, donors])
        )
        accept = feasible & (np.log(self.rng.random(t)) < d_lik + d_mult)
        idx = weeks[accept]
        x[idx, donors[accept]] -= delta_n[accept]
        x[idx, receivers[accept]] += delta_n[accept]
        self.x_prop += t
        self.x_acc += int(accept.sum())

    @staticmethod
    def _alpha_term(alpha: np.ndarray, log_p: np.ndarray) -> np.ndarray:
        """Component contribution -gammaln(a) + (a - 1) log p, zero for a = 0."""
        safe = np.where(alpha > 0, alpha, 1.0)
        return np.where(alpha > 0, -gammaln(safe) + (safe - 1.0) * log_p, 0.0)

    # -- driver ------------------------------------------------------------

    def advance(self, n_iters: int, adapt_limit: int) -> None:
        m = self.model
        for _ in range(n_iters):
            adapting = self.done < adapt_limit
            self._update_z_half(m.even_rows, adapting)
            if m.odd_rows.size:
                self._update_z_half(m.odd_rows, adapting)
            if not m.flat and m.t_weeks > 1:
                self._update_phi(adapting)
            if m.rdm:
                for _ in range(m.x_sweeps):
                    self._update_x()
            self.done += 1
            self.pi_trace.append(self.pi.copy())
            self.n_trace.append(
                escapement_value(self.pi, m.weights, m.marked, m.lake_mask)
            )


class _Model:
    """Immutable per-run quantities shared by all chains."""

    def __init__(self, dataset: GmrDataset, spec: ModelSpec, config: McmcConfig):
        self.t_weeks = dataset.t
        self.k = dataset.k
        self.p_clamped = clamp_to_box(dataset.p_hat_matrix())
        self.log_p = np.log(self.p_clamped)
        self.n = dataset.sample_sizes().astype(float)
        self.weights = dataset.weights
        self.lake_mask = dataset.lake_mask
        self.marked = dataset.marked
        lam = np.asarray(spec.lambda_per_week, dtype=float)
        if lam.size != self.t_weeks:
            raise ValueError(f"{lam.size} lambda values for {self.t_weeks} weeks")
        self.lam = lam
        self.psi = spec.psi
        self.rdm = spec.likelihood is Method.BAYES_RDM
        self.flat = spec.prior is Prior.DIRICHLET_FLAT
        self.prior_only = config.prior_only
        self.target_accept = config.target_accept
        self.x_sweeps = config.x_sweeps
        # The flat prior fixes the last score column as the softmax reference.
        self.n_free = self.k - 1 if self.flat else self.k
        self.even_rows = np.arange(0, self.t_weeks, 2)
        self.odd_rows = np.arange(1, self.t_weeks, 2)
        self.count_floor = (self.p_clamped > 2.0 * CLAMP_LO).astype(np.int64)


def run_mcmc(dataset: GmrDataset, spec: ModelSpec, config: McmcConfig | None = None) -> PosteriorChains:
    """Sample the posterior of the weekly compositions and escapement.

    Returns kept draws from every chain after burn-in (the first half of the
    run) and thinning.  When the escapement diagnostic stays at or above the
    threshold the run doubles up to ``config.max_iters``; a run that ends
    unconverged is flagged, not failed.
    """
    config = config or McmcConfig()
    model = _Model(dataset, spec, config)
    if spec.prior is Prior.AR1 and spec.psi == DEFAULT_PSI and dataset.k != 4:
        warnings.warn(
            f"default psi={DEFAULT_PSI} was calibrated for 4 stocks, dataset has {dataset.k}",
            stacklevel=2,
        )

    chains = [_Chain(model, config.seed + c) for c in range(config.chains)]
    adapt_limit = config.iters // 2
    total = config.iters
    for chain in chains:
        chain.advance(total, adapt_limit)

    while True:
        burn = total // 2
        thin = max(1, int(np.ceil((total - burn) / config.keep)))
        kept_n = np.array([c.n_trace[burn::thin] for c in chains])
        if config.chains >= 2:
            try:
                rhat = gelman_rubin(kept_n)
            except DegenerateChainsError:
                rhat = float("inf")
        else:
            rhat = float("nan")
        converged = not rhat >= config.rhat_threshold
        if converged or total >= config.max_iters:
            break
        grow = min(total, config.max_iters - total)
        logger.debug("rhat %.3f at %d iterations, extending by %d", rhat, total, grow)
        for chain in chains:
            chain.advance(grow, adapt_limit)
        total += grow

    kept_pi = np.array(
        [np.stack(c.pi_trace[burn::thin]) for c in chains]
    )
    accept = {
        "z": float(np.mean([c.z_acc / max(c.z_prop, 1) for c in chains])),
    }
    if not model.flat and model.t_weeks > 1:
        accept["phi"] = float(np.mean([c.phi_acc / max(c.phi_prop, 1) for c in chains]))
    if model.rdm:
        accept["x"] = float(np.mean([c.x_acc / max(c.x_prop, 1) for c in chains]))

    return PosteriorChains(
        pi=kept_pi,
        escapement=kept_n,
        seed=config.seed,
        thin=thin,
        rhat=float(rhat),
        converged=bool(converged),
        accept=accept,
    )


def bayes_estimate(
    dataset: GmrDataset,
    spec: ModelSpec,
    config: McmcConfig | None = None,
    level: float = 0.95,
) -> tuple[EscapementEstimate, PosteriorChains]:
    """Posterior escapement estimate plus the chains behind it."""
    start = time.perf_counter()
    chains = run_mcmc(dataset, spec, config)
    summary = posterior_summary(chains.pooled_escapement(), level=level)
    estimate = EscapementEstimate(
        n_hat=summary.mean,
        sd=summary.sd,
        ci_low=summary.ci_low,
        ci_high=summary.ci_high,
        method=spec.likelihood,
        prior=spec.prior,
        rhat=chains.rhat,
        converged=chains.converged,
        elapsed=time.perf_counter() - start,
    )
    return estimate, chains
