//! Decoding error probabilities for one slot, conditioned on the estimated
//! SNR: the exact outage through the Marcum Q-function, the
//! normal-approximation integral treated as the ground-truth error
//! probability, and closed-form Gaussian-SNR upper bounds that are invertible
//! from a target error probability to a rate.
//!
//! The Gaussian bounds rest on two variance terms: estimation error mapped
//! into the SNR domain (`sigma_icsi_sq = 2 sigma_n_sq avg_snr snr_hat`) and
//! the finite-blocklength rate penalty mapped into the SNR domain
//! (`sigma_fbl = (1+snr_hat)/log2(e) * sqrt(V(snr_hat)/n)`). The two effects
//! are independent, so their variances add. Both conversions discard a
//! non-negative remainder, which is what makes the results upper bounds;
//! those remainders exist only in the derivation and never appear at
//! runtime.

use crate::channel::{self, EstimationModel, LinkConfig};
use crate::specfun::{self, Probability};
use crate::{quad, Error, Result};

const LOG2_E: f64 = std::f64::consts::LOG2_E;
const LN_2: f64 = std::f64::consts::LN_2;

/// SNR-domain standard deviations entering the combined error bound.
#[derive(Debug, Clone, Copy)]
pub struct VarianceTerms {
    /// Estimation-error variance in the SNR domain.
    pub sigma_icsi_sq: f64,
    /// Finite-blocklength penalty mapped to an SNR standard deviation.
    pub sigma_fbl: f64,
    /// Combined variance, always the sum of the two terms above.
    pub sigma_icf_sq: f64,
}

impl VarianceTerms {
    pub fn new(model: &EstimationModel, snr_hat: f64, n: u32) -> Result<Self> {
        if snr_hat.is_nan() || snr_hat < 0.0 {
            return Err(Error::Domain(format!("snr_hat must be >= 0, got {snr_hat}")));
        }
        if n == 0 {
            return Err(Error::Domain("blocklength n must be >= 1".into()));
        }
        let sigma_icsi_sq = 2.0 * model.sigma_n_sq() * model.avg_snr() * snr_hat;
        let sigma_fbl =
            (1.0 + snr_hat) / LOG2_E * (specfun::dispersion_raw(snr_hat) / n as f64).sqrt();
        Ok(VarianceTerms {
            sigma_icsi_sq,
            sigma_fbl,
            sigma_icf_sq: sigma_icsi_sq + sigma_fbl * sigma_fbl,
        })
    }

    pub fn sigma_icsi(&self) -> f64 {
        self.sigma_icsi_sq.sqrt()
    }

    pub fn sigma_icf(&self) -> f64 {
        self.sigma_icf_sq.sqrt()
    }
}

#[inline]
fn rate_threshold(rate: f64) -> f64 {
    // 2^r - 1, accurate for small rates
    (rate * LN_2).exp_m1()
}

fn check_rate(rate: f64) -> Result<()> {
    if rate.is_nan() || rate < 0.0 {
        return Err(Error::Domain(format!("rate must be >= 0, got {rate}")));
    }
    Ok(())
}

/// Exact outage probability: the conditional CDF at the rate threshold
/// `2^r - 1`.
pub fn outage_exact(model: &EstimationModel, snr_hat: f64, rate: f64) -> Result<Probability> {
    check_rate(rate)?;
    channel::conditional_snr_cdf(model, snr_hat, rate_threshold(rate))
}

/// Gaussian tail bound `Q((snr_hat - (2^r-1)) / sigma)` with the degenerate
/// `sigma = 0` convention: 0 for zero rate, 1 otherwise.
fn gaussian_snr_bound(snr_hat: f64, rate: f64, sigma: f64) -> Probability {
    if sigma <= 0.0 {
        return if rate == 0.0 { Probability::ZERO } else { Probability::ONE };
    }
    Probability::new(specfun::q_raw((snr_hat - rate_threshold(rate)) / sigma))
        .expect("Q value is a probability")
}

/// Invert a Gaussian SNR bound for the rate achieving target `eps`.
fn gaussian_snr_rate(snr_hat: f64, sigma: f64, eps: f64, what: &str) -> Result<f64> {
    if sigma <= 0.0 {
        return Err(Error::Precondition(format!(
            "{what}: degenerate sigma = 0 at snr_hat={snr_hat}"
        )));
    }
    let floor = specfun::q_raw(snr_hat / sigma);
    if !(eps > floor && eps < 0.5) {
        return Err(Error::Precondition(format!(
            "{what}: target must satisfy Q(snr_hat/sigma) = {floor:.6e} < eps < 1/2, got {eps:.6e}"
        )));
    }
    Ok((1.0 + snr_hat - sigma * specfun::inverse_q_raw(eps)).log2())
}

/// Outage upper bound from the Gaussian approximation of the estimation
/// error: `Q((snr_hat - (2^r-1)) / sigma_icsi)`.
pub fn outage_bound_icsi(model: &EstimationModel, snr_hat: f64, rate: f64) -> Result<Probability> {
    check_rate(rate)?;
    let vt = VarianceTerms::new(model, snr_hat, model.config().n().max(1))?;
    Ok(gaussian_snr_bound(snr_hat, rate, vt.sigma_icsi()))
}

/// Rate whose [`outage_bound_icsi`] equals `eps_out`; requires
/// `Q(snr_hat/sigma_icsi) < eps_out < 1/2`.
pub fn rate_icsi(model: &EstimationModel, snr_hat: f64, eps_out: Probability) -> Result<f64> {
    let vt = VarianceTerms::new(model, snr_hat, model.config().n().max(1))?;
    gaussian_snr_rate(snr_hat, vt.sigma_icsi(), eps_out.value(), "rate_icsi")
}

/// Error probability of a known-SNR channel at blocklength `n` and rate `r`:
/// `Q((log2(1+snr) - r) / sqrt(V(snr)/n))`.
pub fn eps_fbl_perfect_csi(snr: f64, n: u32, rate: f64) -> Result<Probability> {
    check_rate(rate)?;
    if !(snr > 0.0) || n == 0 {
        return Err(Error::Domain(format!("need snr > 0 and n >= 1, got snr={snr}, n={n}")));
    }
    let capacity = snr.ln_1p() * LOG2_E;
    let spread = (specfun::dispersion_raw(snr) / n as f64).sqrt();
    Probability::new(specfun::q_raw((capacity - rate) / spread))
}

/// Rate achieving error probability `eps` on a known-SNR channel:
/// `log2(1+snr) - sqrt(V(snr)/n) Q^{-1}(eps)`.
pub fn rate_fbl(snr: f64, n: u32, eps: Probability) -> Result<f64> {
    if !(snr > 0.0) || n == 0 {
        return Err(Error::Domain(format!("need snr > 0 and n >= 1, got snr={snr}, n={n}")));
    }
    let eps = eps.value();
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::Precondition(format!("rate_fbl needs 0 < eps < 1/2, got {eps}")));
    }
    let capacity = snr.ln_1p() * LOG2_E;
    let spread = (specfun::dispersion_raw(snr) / n as f64).sqrt();
    let rate = capacity - spread * specfun::inverse_q_raw(eps);
    if rate <= 0.0 {
        return Err(Error::Precondition(format!(
            "rate_fbl: parameters give nonpositive rate {rate:.6e} (snr={snr}, n={n}, eps={eps})"
        )));
    }
    Ok(rate)
}

// Truncating the conditional law at (sqrt(snr_hat) + TAIL_SIGMAS*sqrt(scale))^2
// leaves mass below exp(-TAIL_SIGMAS^2), by the Chernoff bound on Q1.
const TAIL_SIGMAS: f64 = 8.5;
const TAIL_MASS_BOUND: f64 = 2.0e-32; // exp(-72.25)

pub(crate) fn eps_normal_approx_raw(
    model: &EstimationModel,
    snr_hat: f64,
    n: u32,
    rate: f64,
    abs_tol: f64,
) -> Result<f64> {
    if rate == 0.0 {
        // zero rate transmits nothing and cannot fail
        return Ok(0.0);
    }
    let scale = model.cond_scale();
    if scale <= 0.0 {
        // perfect CSI: the integral collapses onto the estimate
        return Ok(eps_fbl_perfect_csi(snr_hat, n, rate)?.value());
    }
    let nf = n as f64;
    let sqrt_gh = snr_hat.sqrt();
    let sqrt_s = scale.sqrt();
    let hi = (sqrt_gh + TAIL_SIGMAS * sqrt_s).powi(2);
    let threshold = rate_threshold(rate);

    // Bracket both integrand features with explicit split points: the
    // density bump, and the Q transition above the rate threshold (its
    // width in the SNR domain is sqrt(V/n) (1+x) ln 2). A feature squeezed
    // between the nodes of one huge segment would otherwise defeat the
    // error estimate.
    let q_width =
        (specfun::dispersion_raw(threshold) / nf).sqrt() * (1.0 + threshold) * LN_2;
    let mut points = vec![
        0.0,
        (sqrt_gh - TAIL_SIGMAS * sqrt_s).max(0.0).powi(2),
        (sqrt_gh - 3.0 * sqrt_s).max(0.0).powi(2),
        (sqrt_gh + 3.0 * sqrt_s).powi(2).min(hi),
        threshold.min(hi),
        (threshold + 4.0 * q_width).min(hi),
        (threshold + 16.0 * q_width).min(hi),
        (threshold + 64.0 * q_width).min(hi),
        hi,
    ];
    points.sort_by(f64::total_cmp);
    points.dedup();

    let integrand = |x: f64| {
        if x <= 0.0 {
            return 0.0;
        }
        let v = specfun::dispersion_raw(x);
        let density = channel::conditional_snr_pdf_raw(scale, snr_hat, x);
        if v <= 0.0 {
            return density; // capacity below any positive rate
        }
        let arg = (x.ln_1p() * LOG2_E - rate) / (v / nf).sqrt();
        specfun::q_raw(arg) * density
    };

    let (value, err) = quad::integrate_segments(integrand, &points, abs_tol - TAIL_MASS_BOUND, 400)?;
    debug_assert!(err + TAIL_MASS_BOUND <= abs_tol);
    Ok(value.clamp(0.0, 1.0))
}

/// Ground-truth error probability at blocklength `n` and rate `r` given the
/// estimate: the known-SNR error expression averaged over the conditional
/// SNR law. Absolute quadrature error below 1e-8; the truncated tail is part
/// of that budget.
pub fn eps_normal_approx(
    model: &EstimationModel,
    snr_hat: f64,
    n: u32,
    rate: f64,
) -> Result<Probability> {
    check_rate(rate)?;
    if snr_hat.is_nan() || snr_hat < 0.0 {
        return Err(Error::Domain(format!("snr_hat must be >= 0, got {snr_hat}")));
    }
    if n == 0 {
        return Err(Error::Domain("blocklength n must be >= 1".into()));
    }
    Probability::new(eps_normal_approx_raw(model, snr_hat, n, rate, 1e-8)?)
}

/// Combined closed-form error bound `Q((snr_hat - (2^r-1)) / sigma_icf)`.
///
/// Numerically verified (not assumed) to dominate [`eps_normal_approx`]
/// across the tested parameter grids.
pub fn eps_bound_combined(
    model: &EstimationModel,
    snr_hat: f64,
    n: u32,
    rate: f64,
) -> Result<Probability> {
    check_rate(rate)?;
    let vt = VarianceTerms::new(model, snr_hat, n)?;
    Ok(gaussian_snr_bound(snr_hat, rate, vt.sigma_icf()))
}

/// Rate whose [`eps_bound_combined`] equals `eps`; requires
/// `Q(snr_hat/sigma_icf) < eps < 1/2`.
pub fn rate_combined(
    model: &EstimationModel,
    snr_hat: f64,
    n: u32,
    eps: Probability,
) -> Result<f64> {
    let vt = VarianceTerms::new(model, snr_hat, n)?;
    gaussian_snr_rate(snr_hat, vt.sigma_icf(), eps.value(), "rate_combined")
}

/// Error bound when the data phase is transmitted at power scale `phi`:
/// `Q((phi snr_hat - (2^r-1)) / sigma_pa)` with
/// `sigma_pa^2 = phi^2 sigma_icsi_sq + sigma_fbl^2(phi snr_hat)`.
pub fn eps_bound_power(
    model: &EstimationModel,
    snr_hat: f64,
    n: u32,
    rate: f64,
    phi: f64,
) -> Result<Probability> {
    check_rate(rate)?;
    if !(phi > 0.0) || !phi.is_finite() {
        return Err(Error::Domain(format!("power scale phi must be positive, got {phi}")));
    }
    let vt = VarianceTerms::new(model, snr_hat, n)?;
    let scaled = phi * snr_hat;
    let fbl_scaled = (1.0 + scaled) / LOG2_E * (specfun::dispersion_raw(scaled) / n as f64).sqrt();
    let sigma_pa = (phi * phi * vt.sigma_icsi_sq + fbl_scaled * fbl_scaled).sqrt();
    if sigma_pa <= 0.0 {
        return Ok(if rate == 0.0 { Probability::ZERO } else { Probability::ONE });
    }
    Probability::new(specfun::q_raw((scaled - rate_threshold(rate)) / sigma_pa))
}

/// Smallest power scale in `(0, phi_max]` whose [`eps_bound_power`] meets
/// `eps_target`, to absolute tolerance 1e-4; `None` when even `phi_max` is
/// infeasible.
pub fn min_power(
    model: &EstimationModel,
    snr_hat: f64,
    n: u32,
    rate: f64,
    eps_target: Probability,
    phi_max: f64,
) -> Result<Option<f64>> {
    if !(phi_max > 0.0) {
        return Err(Error::Domain(format!("phi_max must be positive, got {phi_max}")));
    }
    let target = eps_target.value();
    let feasible = |phi: f64| -> Result<bool> {
        Ok(eps_bound_power(model, snr_hat, n, rate, phi)?.value() <= target)
    };
    if !feasible(phi_max)? {
        return Ok(None);
    }
    let mut lo = 1e-6_f64.min(phi_max);
    if feasible(lo)? {
        return Ok(Some(lo));
    }
    let mut hi = phi_max;
    while hi - lo > 1e-4 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}

/// Estimation model for an outdated channel observation with correlation
/// `rho` to the current fading state: `rho_sq = rho^2`,
/// `sigma_n_sq = 1 - rho^2`, independent of any training length.
pub fn outdated_csi_model(cfg: &LinkConfig, rho: f64) -> Result<EstimationModel> {
    if rho.is_nan() || !(0.0..1.0).contains(&rho) {
        return Err(Error::Domain(format!("correlation must lie in [0, 1), got {rho}")));
    }
    Ok(EstimationModel::from_parts(rho * rho, 1.0 - rho * rho, *cfg))
}

/// Error probability of a fixed-rate transmitter without channel knowledge:
/// the known-SNR error expression averaged over the unconditional
/// exponential SNR law with mean `avg_snr`, using all `n_slot` symbols.
pub fn eps_fixed_rate_nocsi(avg_snr: f64, n_slot: u32, rate: f64) -> Result<Probability> {
    check_rate(rate)?;
    if !(avg_snr > 0.0) || n_slot == 0 {
        return Err(Error::Domain(format!(
            "need avg_snr > 0 and n_slot >= 1, got {avg_snr}, {n_slot}"
        )));
    }
    if rate == 0.0 {
        return Ok(Probability::ZERO);
    }
    let nf = n_slot as f64;
    let threshold = rate_threshold(rate);
    let hi = avg_snr * 32.0 + threshold;
    let integrand = |x: f64| {
        if x <= 0.0 {
            return 0.0;
        }
        let v = specfun::dispersion_raw(x);
        let density = (-x / avg_snr).exp() / avg_snr;
        if v <= 0.0 {
            return density;
        }
        let arg = (x.ln_1p() * LOG2_E - rate) / (v / nf).sqrt();
        specfun::q_raw(arg) * density
    };
    // bracket the Q transition above the threshold and the exponential scale
    let q_width = (specfun::dispersion_raw(threshold) / nf).sqrt() * (1.0 + threshold) * LN_2;
    let mut points = vec![
        0.0,
        threshold.min(hi),
        (threshold + 4.0 * q_width).min(hi),
        (threshold + 16.0 * q_width).min(hi),
        (threshold + 64.0 * q_width).min(hi),
        avg_snr.min(hi),
        (4.0 * avg_snr).min(hi),
        hi,
    ];
    points.sort_by(f64::total_cmp);
    points.dedup();
    let (value, _) = quad::integrate_segments(integrand, &points, 1e-9, 400)?;
    Probability::new(value.clamp(0.0, 1.0))
}
