import numpy as np
import numpy.testing as npt
import pytest
from scipy.stats import ks_2samp

from rdm_gmr.errors import (
    BoundaryValueError,
    DegenerateChainsError,
    DegeneratePosteriorError,
    ZeroLakeProportionError,
)
from rdm_gmr.estimators import Method, Prior
from rdm_gmr.inference import (
    ModelSpec,
    ar1_log_prior,
    ar1_prior_draws,
    batch_means_se,
    clamp_to_box,
    escapement_from_draws,
    escapement_value,
    gelman_rubin,
    mmd_log_likelihood,
    multinomial_logpmf,
    posterior_summary,
    rdm_log_likelihood,
    softmax_rows,
)
from rdm_gmr.calibration import calibrate_dataset


def test_softmax_symmetry():
    npt.assert_allclose(softmax_rows(np.zeros((1, 4))), np.full((1, 4), 0.25))


def test_softmax_exact_ratio():
    npt.assert_allclose(
        softmax_rows(np.array([[np.log(2.0), 0.0]])), [[2.0 / 3.0, 1.0 / 3.0]], rtol=1e-14
    )


def test_softmax_overflow_safe():
    out = softmax_rows(np.array([[1000.0, 0.0]]))
    assert np.all(np.isfinite(out))
    npt.assert_allclose(out, [[1.0, 0.0]], atol=1e-300)


def test_softmax_shift_invariant():
    rng = np.random.default_rng(2)
    z = rng.normal(size=(5, 4))
    shifted = z + rng.normal(size=(5, 1))
    npt.assert_allclose(softmax_rows(z), softmax_rows(shifted), rtol=1e-12)


def test_mmd_uniform_density():
    # lambda_tilde * pi = (1, 1) makes the density flat at 0
    assert mmd_log_likelihood([0.3, 0.7], [0.5, 0.5], 2.0) == pytest.approx(0.0, abs=1e-12)


def test_mmd_beta22_oracle():
    got = mmd_log_likelihood([0.5, 0.5], [0.5, 0.5], 4.0)
    npt.assert_allclose(got, np.log(1.5), rtol=1e-12)


def test_mmd_integrates_to_one():
    # importance sampling with a flattened copy of the target as proposal:
    # the weight f/g is bounded at the corners because g keeps more mass
    # there, and scipy supplies the proposal density independently
    from scipy.stats import dirichlet as scipy_dirichlet

    rng = np.random.default_rng(42)
    for k in (2, 3, 4):
        while True:
            pi = rng.dirichlet(np.full(k, 5.0))
            lam = float(rng.uniform(8.0, 30.0))
            if np.min(lam * pi) >= 1.2:
                break
        alpha_g = 1.0 + 0.5 * (lam * pi - 1.0)
        draws = rng.dirichlet(alpha_g, size=20_000)
        draws = clamp_to_box(draws)
        log_w = np.array(
            [
                mmd_log_likelihood(p, pi, lam) - scipy_dirichlet.logpdf(p / p.sum(), alpha_g)
                for p in draws
            ]
        )
        integral = np.exp(log_w).mean()
        assert abs(integral - 1.0) < 0.02


def test_mmd_boundary_rejected():
    with pytest.raises(BoundaryValueError):
        mmd_log_likelihood([0.0, 1.0], [0.5, 0.5], 4.0)


def test_mmd_validates_params():
    with pytest.raises(ValueError):
        mmd_log_likelihood([0.5, 0.5], [0.5, 0.5], 0.0)
    with pytest.raises(ValueError):
        mmd_log_likelihood([0.5, 0.5], [0.0, 1.0], 4.0)


def test_rdm_uniform_case():
    assert rdm_log_likelihood([0.4, 0.6], np.array([1, 1]), 2.0) == pytest.approx(
        0.0, abs=1e-12
    )


def test_rdm_beta22_oracle():
    got = rdm_log_likelihood([0.5, 0.5], np.array([2, 2]), 4.0)
    npt.assert_allclose(got, np.log(1.5), rtol=1e-12)


def test_rdm_zero_count_interior_is_minus_inf():
    assert rdm_log_likelihood([0.4, 0.6], np.array([0, 4]), 4.0) == float("-inf")


def test_rdm_matches_mmd_on_equal_parameters():
    # lambda * x / n == lambda_tilde * pi makes the two densities identical
    rng = np.random.default_rng(6)
    for _ in range(20):
        k = int(rng.integers(2, 6))
        x = rng.integers(1, 30, size=k)
        n = int(x.sum())
        lam = float(rng.uniform(1.0, 40.0))
        pi = x / n
        p_hat = clamp_to_box(rng.dirichlet(np.ones(k)))
        npt.assert_allclose(
            rdm_log_likelihood(p_hat, x, lam),
            mmd_log_likelihood(p_hat, pi, lam),
            rtol=1e-10,
        )


def test_multinomial_logpmf_binomial_check():
    # Binomial(4, 0.5) at x=2: 6 / 16
    got = multinomial_logpmf(np.array([2, 2]), 4, [0.5, 0.5])
    npt.assert_allclose(got, np.log(6.0 / 16.0), rtol=1e-12)


def test_ar1_phi_zero_factorizes():
    rng = np.random.default_rng(3)
    z = rng.normal(size=(4, 3))
    psi = 1.7
    got = ar1_log_prior(z, 0.0, psi)
    iid = -0.5 * (np.log(2 * np.pi * psi**2) + z**2 / psi**2).sum()
    npt.assert_allclose(got, iid, rtol=1e-12)


def test_ar1_zeros_oracle():
    got = ar1_log_prior(np.zeros((2, 1)), 0.0, 2.0)
    npt.assert_allclose(got, -np.log(8.0 * np.pi), rtol=1e-12)
    npt.assert_allclose(got, -3.224171427529236, rtol=1e-12)


def test_ar1_validates():
    with pytest.raises(ValueError):
        ar1_log_prior(np.zeros((2, 2)), 1.0, 2.0)
    with pytest.raises(ValueError):
        ar1_log_prior(np.zeros((2, 2)), 0.0, 0.0)


@pytest.mark.parametrize("phi", [-0.9, 0.0, 0.9])
def test_ar1_marginal_variance(phi):
    rng = np.random.default_rng(99)
    psi = 2.0
    z = ar1_prior_draws(t=6, k=2, phi=phi, psi=psi, size=100_000, rng=rng)
    for t in (0, 5):
        var = z[:, t, :].var(axis=0)
        npt.assert_allclose(var, psi**2, rtol=0.02)


def test_ar1_phi_zero_matches_iid_construction():
    rng = np.random.default_rng(31)
    z = ar1_prior_draws(t=3, k=2, phi=0.0, psi=2.0, size=10_000, rng=rng)
    iid = 2.0 * np.random.default_rng(77).standard_normal((10_000, 3, 2))
    stat = ks_2samp(z.ravel(), iid.ravel())
    assert stat.pvalue > 0.01


def test_gelman_rubin_identical_chains():
    rng = np.random.default_rng(1)
    trace = rng.normal(size=200)
    m = trace.size
    got = gelman_rubin(np.stack([trace, trace]))
    npt.assert_allclose(got, np.sqrt((m - 1.0) / m), rtol=1e-12)
    assert got < 1.0


def test_gelman_rubin_iid_chains_near_one():
    rng = np.random.default_rng(14)
    chains = rng.normal(size=(4, 1000))
    got = gelman_rubin(chains)
    assert 0.99 <= got <= 1.02


def test_gelman_rubin_offset_chains_flagged():
    rng = np.random.default_rng(15)
    chains = rng.normal(size=(2, 500))
    chains[1] += 10.0
    assert gelman_rubin(chains) > 1.1


def test_gelman_rubin_degenerate():
    with pytest.raises(DegenerateChainsError):
        gelman_rubin(np.ones((2, 100)))


def test_gelman_rubin_validates_shape():
    with pytest.raises(ValueError):
        gelman_rubin(np.ones(100))
    with pytest.raises(ValueError):
        gelman_rubin(np.ones((1, 100)))
    with pytest.raises(ValueError):
        gelman_rubin(np.ones((2, 5)))


def test_escapement_value_single_week():
    pi = np.array([[0.5, 0.5]])
    got = escapement_value(pi, np.array([1.0]), 100.0, np.array([True, False]))
    assert got == 200.0


def test_escapement_all_lake_returns_marked():
    pi = np.array([[0.6, 0.4], [0.3, 0.7]])
    got = escapement_value(pi, np.array([0.5, 0.5]), 123.0, np.array([True, True]))
    npt.assert_allclose(got, 123.0, rtol=1e-12)


def test_escapement_zero_share_raises():
    pi = np.array([[0.0, 1.0]])
    with pytest.raises(ZeroLakeProportionError):
        escapement_value(pi, np.array([1.0]), 100.0, np.array([True, False]))


def test_escapement_from_draws_matches_scalar():
    rng = np.random.default_rng(4)
    draws = rng.dirichlet(np.ones(3), size=(50, 2)).reshape(50, 2, 3)
    weights = np.array([0.5, 0.5])
    mask = np.array([True, False, False])
    out = escapement_from_draws(draws, weights, 90.0, mask)
    assert out.shape == (50,)
    for i in range(50):
        npt.assert_allclose(
            out[i], escapement_value(draws[i], weights, 90.0, mask), rtol=1e-14
        )


def test_escapement_from_draws_rejects_degenerate():
    draws = np.zeros((100, 1, 2))
    draws[:, :, 1] = 1.0
    with pytest.raises(DegeneratePosteriorError):
        escapement_from_draws(draws, np.array([1.0]), 100.0, np.array([True, False]))


def test_posterior_summary_constant():
    s = posterior_summary(np.full(500, 7.0))
    assert (s.mean, s.sd, s.ci_low, s.ci_high) == (7.0, 0.0, 7.0, 7.0)


def test_posterior_summary_grid_oracle():
    s = posterior_summary(np.arange(1.0, 10_001.0))
    npt.assert_allclose(s.median, 5000.5, rtol=1e-12)
    npt.assert_allclose(s.ci_low, 250.975, rtol=1e-12)
    npt.assert_allclose(s.ci_high, 9750.025, rtol=1e-12)


def test_batch_means_se_iid_scale():
    rng = np.random.default_rng(8)
    draws = rng.normal(size=30_000)
    se = batch_means_se(draws)
    expected = draws.std(ddof=1) / np.sqrt(draws.size)
    assert 0.5 * expected < se < 2.0 * expected


def test_batch_means_se_needs_enough_draws():
    with pytest.raises(ValueError):
        batch_means_se(np.arange(10.0))


def test_model_spec_validation():
    with pytest.raises(ValueError):
        ModelSpec(likelihood=Method.MOM, prior=Prior.AR1, lambda_per_week=np.array([1.0]))
    with pytest.raises(ValueError):
        ModelSpec(
            likelihood=Method.BAYES_MMD, prior=Prior.AR1, lambda_per_week=np.array([0.0])
        )
    with pytest.raises(ValueError):
        ModelSpec(
            likelihood=Method.BAYES_MMD,
            prior=Prior.AR1,
            lambda_per_week=np.array([1.0]),
            psi=0.0,
        )


def test_model_spec_from_calibrations(two_lake_dataset):
    calibs = calibrate_dataset(two_lake_dataset)
    rdm = ModelSpec.from_calibrations(Method.BAYES_RDM, Prior.DIRICHLET_FLAT, calibs)
    mmd = ModelSpec.from_calibrations(Method.BAYES_MMD, Prior.AR1, calibs, psi=3.0)
    npt.assert_allclose(rdm.lambda_per_week, [c.lambda_hat for c in calibs])
    npt.assert_allclose(mmd.lambda_per_week, [c.lambda_tilde for c in calibs])
    assert mmd.psi == 3.0


def test_clamp_to_box_preserves_sum():
    rng = np.random.default_rng(10)
    p = rng.dirichlet(np.full(3, 0.05), size=200)  # pushes mass to corners
    out = clamp_to_box(p)
    npt.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(out > 0)
    assert np.all(out < 1)
