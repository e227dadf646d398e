//! Rayleigh block fading with MMSE channel estimation.
//!
//! Each slot carries `n_slot` symbols; the first `m` train the estimator and
//! the remaining `n = n_slot - m` carry data. The fading coefficient is
//! complex Gaussian, so the instantaneous SNR is exponential with mean
//! `avg_snr`, the estimated SNR is exponential with mean `rho_sq * avg_snr`,
//! and the true SNR conditioned on the estimate follows a noncentral
//! chi-square law with two degrees of freedom.

use crate::specfun::{self, Probability};
use crate::{Error, Result};
use rand_core::RngCore;

/// Physical-layer parameters of one slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkConfig {
    avg_snr: f64,
    n_slot: u32,
    m: u32,
}

impl LinkConfig {
    /// `avg_snr` is a linear power ratio; `m` training symbols must leave at
    /// least one data symbol.
    pub fn new(avg_snr: f64, n_slot: u32, m: u32) -> Result<Self> {
        if !(avg_snr > 0.0) || !avg_snr.is_finite() {
            return Err(Error::Domain(format!("avg_snr must be positive, got {avg_snr}")));
        }
        if n_slot == 0 || m >= n_slot {
            return Err(Error::Domain(format!(
                "need 0 <= m < n_slot with n_slot >= 1, got m={m}, n_slot={n_slot}"
            )));
        }
        Ok(LinkConfig { avg_snr, n_slot, m })
    }

    /// Convenience constructor taking the average SNR in dB.
    pub fn from_snr_db(snr_db: f64, n_slot: u32, m: u32) -> Result<Self> {
        Self::new(10f64.powf(snr_db / 10.0), n_slot, m)
    }

    pub fn avg_snr(&self) -> f64 {
        self.avg_snr
    }

    pub fn n_slot(&self) -> u32 {
        self.n_slot
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    /// Data symbols per slot.
    pub fn n(&self) -> u32 {
        self.n_slot - self.m
    }
}

/// Estimation statistics derived from a [`LinkConfig`]: the estimate
/// variance `rho_sq` and the estimation-noise variance `sigma_n_sq`,
/// which always sum to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimationModel {
    rho_sq: f64,
    sigma_n_sq: f64,
    cfg: LinkConfig,
}

/// MMSE estimation statistics for `m` training symbols:
/// `rho_sq = avg_snr*m / (1 + avg_snr*m)`, `sigma_n_sq = 1 / (1 + avg_snr*m)`.
pub fn build_estimation_model(cfg: LinkConfig) -> EstimationModel {
    let gm = cfg.avg_snr * cfg.m as f64;
    EstimationModel {
        rho_sq: gm / (1.0 + gm),
        sigma_n_sq: 1.0 / (1.0 + gm),
        cfg,
    }
}

impl EstimationModel {
    /// Model with externally supplied statistics (e.g. an outdated
    /// observation with known correlation), bypassing the training formula.
    pub(crate) fn from_parts(rho_sq: f64, sigma_n_sq: f64, cfg: LinkConfig) -> Self {
        EstimationModel { rho_sq, sigma_n_sq, cfg }
    }

    pub fn rho_sq(&self) -> f64 {
        self.rho_sq
    }

    pub fn sigma_n_sq(&self) -> f64 {
        self.sigma_n_sq
    }

    pub fn config(&self) -> &LinkConfig {
        &self.cfg
    }

    pub fn avg_snr(&self) -> f64 {
        self.cfg.avg_snr
    }

    /// Mean of the estimated SNR, `rho_sq * avg_snr`.
    pub fn estimate_mean(&self) -> f64 {
        self.rho_sq * self.cfg.avg_snr
    }

    /// Scale `avg_snr * sigma_n_sq` of the conditional SNR law.
    pub(crate) fn cond_scale(&self) -> f64 {
        self.cfg.avg_snr * self.sigma_n_sq
    }
}

/// Density of the estimated SNR: exponential with mean `rho_sq * avg_snr`.
pub fn estimated_snr_pdf(model: &EstimationModel, snr_hat: f64) -> Result<f64> {
    if snr_hat.is_nan() || snr_hat < 0.0 {
        return Err(Error::Domain(format!("snr_hat must be >= 0, got {snr_hat}")));
    }
    let mean = model.estimate_mean();
    if mean <= 0.0 {
        return Err(Error::Domain(
            "estimate carries no information (m = 0): the estimated SNR is degenerate at 0"
                .into(),
        ));
    }
    Ok((-snr_hat / mean).exp() / mean)
}

/// CDF of the true SNR given the estimate, `1 - Q1(a, b)` with
/// `a = sqrt(2 snr_hat / scale)`, `b = sqrt(2 x / scale)`.
pub fn conditional_snr_cdf(model: &EstimationModel, snr_hat: f64, x: f64) -> Result<Probability> {
    if snr_hat.is_nan() || snr_hat < 0.0 || x.is_nan() || x < 0.0 {
        return Err(Error::Domain(format!(
            "conditional_snr_cdf requires snr_hat, x >= 0, got ({snr_hat}, {x})"
        )));
    }
    let scale = model.cond_scale();
    if scale <= 0.0 {
        // perfect knowledge: the conditional law is a step at the estimate
        return Ok(if x < snr_hat { Probability::ZERO } else { Probability::ONE });
    }
    let a = (2.0 * snr_hat / scale).sqrt();
    let b = (2.0 * x / scale).sqrt();
    let q = specfun::marcum_q1(a, b)?;
    Probability::new(1.0 - q.value())
}

/// Conditional density without domain checks, in overflow-free form
/// `exp(-(sqrt(x) - sqrt(snr_hat))^2 / scale) * i0e(2 sqrt(x snr_hat)/scale) / scale`.
#[inline]
pub(crate) fn conditional_snr_pdf_raw(scale: f64, snr_hat: f64, x: f64) -> f64 {
    let d = x.sqrt() - snr_hat.sqrt();
    let bessel_arg = 2.0 * (x * snr_hat).sqrt() / scale;
    (-d * d / scale).exp() * specfun::i0e_raw(bessel_arg) / scale
}

/// Density of the true SNR given the estimate: noncentral chi-square with
/// two degrees of freedom, evaluated through the scaled Bessel function so
/// that large `snr_hat / scale` cannot overflow.
pub fn conditional_snr_pdf(model: &EstimationModel, snr_hat: f64, x: f64) -> Result<f64> {
    if snr_hat.is_nan() || snr_hat < 0.0 || x.is_nan() || x < 0.0 {
        return Err(Error::Domain(format!(
            "conditional_snr_pdf requires snr_hat, x >= 0, got ({snr_hat}, {x})"
        )));
    }
    let scale = model.cond_scale();
    if scale <= 0.0 {
        return Err(Error::Domain("conditional density degenerate: sigma_n_sq = 0".into()));
    }
    Ok(conditional_snr_pdf_raw(scale, snr_hat, x))
}

#[inline]
fn uniform_open01<R: RngCore>(rng: &mut R) -> f64 {
    // 53-bit uniform in (0, 1]
    (((rng.next_u64() >> 11) + 1) as f64) * (1.0 / 9_007_199_254_740_992.0)
}

/// One pair of independent standard normals (Box–Muller).
fn standard_normal_pair<R: RngCore>(rng: &mut R) -> (f64, f64) {
    let u1 = uniform_open01(rng);
    let u2 = uniform_open01(rng);
    let radius = (-2.0 * u1.ln()).sqrt();
    let angle = 2.0 * std::f64::consts::PI * u2;
    (radius * angle.cos(), radius * angle.sin())
}

/// Draw one slot: returns `(estimated SNR, true SNR)`.
///
/// The estimate and the estimation noise are sampled as independent complex
/// Gaussians (two real Gaussians of half variance each), so repeated calls
/// with the same generator state reproduce bit-exactly.
pub fn sample_slot<R: RngCore>(model: &EstimationModel, rng: &mut R) -> (f64, f64) {
    let (h1, h2) = standard_normal_pair(rng);
    let (z1, z2) = standard_normal_pair(rng);
    let est_sd = (0.5 * model.rho_sq).sqrt();
    let noise_sd = (0.5 * model.sigma_n_sq).sqrt();
    let (er, ei) = (est_sd * h1, est_sd * h2);
    let (nr, ni) = (noise_sd * z1, noise_sd * z2);
    let snr_hat = model.avg_snr() * (er * er + ei * ei);
    let hr = er + nr;
    let hi = ei + ni;
    let snr = model.avg_snr() * (hr * hr + hi * hi);
    (snr_hat, snr)
}

/// Draw the estimated SNR alone from its exponential marginal.
pub fn sample_estimated_snr<R: RngCore>(model: &EstimationModel, rng: &mut R) -> f64 {
    -model.estimate_mean() * uniform_open01(rng).ln()
}

/// Draw the true SNR conditioned on a fixed estimate.
///
/// Uses the circular symmetry of the estimation noise: the estimate can be
/// rotated onto the real axis without changing the conditional law.
pub fn sample_conditional_snr<R: RngCore>(
    model: &EstimationModel,
    snr_hat: f64,
    rng: &mut R,
) -> f64 {
    let (z1, z2) = standard_normal_pair(rng);
    let noise_sd = (0.5 * model.sigma_n_sq).sqrt();
    let hr = (snr_hat / model.avg_snr()).sqrt() + noise_sd * z1;
    let hi = noise_sd * z2;
    model.avg_snr() * (hr * hr + hi * hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fig_model() -> EstimationModel {
        build_estimation_model(LinkConfig::from_snr_db(15.0, 225, 25).unwrap())
    }

    fn simpson<F: Fn(f64) -> f64 + Copy>(f: F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        fn rule<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
            (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
        }
        let whole = rule(&f, a, b);
        let mid = 0.5 * (a + b);
        let left = rule(&f, a, mid);
        let right = rule(&f, mid, b);
        if depth == 0 || (left + right - whole).abs() < 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            simpson(f, a, mid, tol / 2.0, depth - 1) + simpson(f, mid, b, tol / 2.0, depth - 1)
        }
    }

    #[test]
    fn config_validation() {
        assert!(LinkConfig::new(0.0, 100, 10).is_err());
        assert!(LinkConfig::new(10.0, 100, 100).is_err());
        assert!(LinkConfig::new(10.0, 0, 0).is_err());
        let cfg = LinkConfig::from_snr_db(15.0, 250, 50).unwrap();
        assert_eq!(cfg.n(), 200);
        assert_relative_eq!(cfg.avg_snr(), 31.6227766, max_relative = 1e-8);
    }

    #[test]
    fn model_without_training() {
        let cfg = LinkConfig::new(31.6228, 100, 0).unwrap();
        let model = build_estimation_model(cfg);
        assert_eq!(model.rho_sq(), 0.0);
        assert_eq!(model.sigma_n_sq(), 1.0);
    }

    #[test]
    fn model_fig_config() {
        let model = fig_model();
        let gbar = model.avg_snr();
        assert_relative_eq!(model.sigma_n_sq(), 1.0 / (1.0 + gbar * 25.0), max_relative = 1e-14);
        assert_abs_diff_eq!(model.rho_sq() + model.sigma_n_sq(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn model_perfect_csi_limit() {
        let cfg = LinkConfig::new(31.6228, 2_000_000, 1_000_000).unwrap();
        let model = build_estimation_model(cfg);
        assert!(model.sigma_n_sq() < 1e-7);
    }

    #[test]
    fn estimate_pdf_basics() {
        let model = fig_model();
        let mean = model.estimate_mean();
        assert_relative_eq!(
            estimated_snr_pdf(&model, 0.0).unwrap(),
            1.0 / mean,
            max_relative = 1e-14
        );
        assert!(estimated_snr_pdf(&model, -1.0).is_err());
        // quadrature oracle: total mass
        let f = |x: f64| estimated_snr_pdf(&model, x).unwrap();
        let mass = simpson(f, 0.0, mean * 40.0, 1e-12, 40);
        assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-9);
        // median of the exponential law
        let median = mean * std::f64::consts::LN_2;
        let below = simpson(f, 0.0, median, 1e-12, 40);
        assert_abs_diff_eq!(below, 0.5, epsilon = 1e-9);
    }

    #[test]
    fn conditional_cdf_limits() {
        let model = fig_model();
        let gh = model.avg_snr();
        assert_eq!(conditional_snr_cdf(&model, gh, 0.0).unwrap().value(), 0.0);
        let far = (gh.sqrt() + 60.0 * model.cond_scale().sqrt()).powi(2);
        assert_abs_diff_eq!(
            conditional_snr_cdf(&model, gh, far).unwrap().value(),
            1.0,
            epsilon = 1e-12
        );
        assert!(conditional_snr_cdf(&model, -1.0, 1.0).is_err());
    }

    #[test]
    fn conditional_cdf_matches_density_quadrature() {
        let model = fig_model();
        let gh = model.avg_snr();
        let cdf = conditional_snr_cdf(&model, gh, 25.0).unwrap().value();
        let pdf = |x: f64| conditional_snr_pdf(&model, gh, x).unwrap();
        let oracle = simpson(pdf, 0.0, 25.0, 1e-12, 44);
        assert_abs_diff_eq!(cdf, oracle, epsilon = 1e-6);
    }

    #[test]
    fn conditional_pdf_central_case() {
        let model = fig_model();
        let scale = model.cond_scale();
        // estimate zero: plain exponential with mean `scale`
        for &x in &[0.0, 0.01, 0.1] {
            assert_relative_eq!(
                conditional_snr_pdf(&model, 0.0, x).unwrap(),
                (-x / scale).exp() / scale,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn conditional_pdf_normalizes() {
        let model = fig_model();
        let gh = model.avg_snr();
        let pdf = |x: f64| conditional_snr_pdf(&model, gh, x).unwrap();
        let hi = (gh.sqrt() + 9.0 * model.cond_scale().sqrt()).powi(2);
        let mass = simpson(pdf, 0.0, hi, 1e-12, 44);
        assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn cdf_derivative_matches_pdf() {
        let model = fig_model();
        let gh = model.avg_snr();
        for &x in &[1.0f64, 10.0, 30.0] {
            let h = 1e-4 * x.max(1.0);
            let up = conditional_snr_cdf(&model, gh, x + h).unwrap().value();
            let dn = conditional_snr_cdf(&model, gh, x - h).unwrap().value();
            let fd = (up - dn) / (2.0 * h);
            let pdf = conditional_snr_pdf(&model, gh, x).unwrap();
            assert_abs_diff_eq!(fd, pdf, epsilon = 1e-6);
        }
    }

    #[test]
    fn stochastic_dominance_in_estimate() {
        let model = fig_model();
        let xs: Vec<f64> = (1..40).map(|i| i as f64 * 2.0).collect();
        let estimates = [1.0, 5.0, 15.0, 31.6, 60.0];
        for pair in estimates.windows(2) {
            for &x in &xs {
                let lo = conditional_snr_cdf(&model, pair[0], x).unwrap().value();
                let hi = conditional_snr_cdf(&model, pair[1], x).unwrap().value();
                assert!(
                    lo >= hi - 1e-12,
                    "dominance violated at estimate pair {pair:?}, x={x}: {lo} < {hi}"
                );
            }
        }
    }

    #[test]
    fn conditional_concentrates_with_long_training() {
        let cfg = LinkConfig::new(31.6228, 200_000, 100_000).unwrap();
        let model = build_estimation_model(cfg);
        let gh = 31.6228;
        let inside = conditional_snr_cdf(&model, gh, 1.1 * gh).unwrap().value()
            - conditional_snr_cdf(&model, gh, 0.9 * gh).unwrap().value();
        assert!(inside > 0.999, "mass inside +-10% was {inside}");
    }

    #[test]
    fn sampling_moments() {
        let model = fig_model();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000usize;
        let (mut sum_hat, mut sum) = (0.0, 0.0);
        for _ in 0..n {
            let (gh, g) = sample_slot(&model, &mut rng);
            sum_hat += gh;
            sum += g;
        }
        let mean_hat = sum_hat / n as f64;
        let mean = sum / n as f64;
        // exponential: sd = mean, so 3 standard errors = 3 mean / sqrt(n)
        let tol_hat = 3.0 * model.estimate_mean() / (n as f64).sqrt();
        let tol = 3.0 * model.avg_snr() / (n as f64).sqrt();
        assert!((mean_hat - model.estimate_mean()).abs() < tol_hat);
        assert!((mean - model.avg_snr()).abs() < tol);
    }

    #[test]
    fn perfect_csi_sampling_degenerates() {
        let cfg = LinkConfig::new(10.0, 100, 1).unwrap();
        let model = EstimationModel::from_parts(1.0, 0.0, cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let (gh, g) = sample_slot(&model, &mut rng);
            assert_abs_diff_eq!(gh, g, epsilon = 1e-12);
        }
    }

    #[test]
    fn conditional_sampling_ks_against_cdf() {
        let model = fig_model();
        let gh = model.avg_snr();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000usize;
        let mut draws: Vec<f64> =
            (0..n).map(|_| sample_conditional_snr(&model, gh, &mut rng)).collect();
        draws.sort_by(f64::total_cmp);
        let mut ks: f64 = 0.0;
        for (i, &x) in draws.iter().enumerate().step_by(37) {
            let f = conditional_snr_cdf(&model, gh, x).unwrap().value();
            let lo = i as f64 / n as f64;
            let hi = (i + 1) as f64 / n as f64;
            ks = ks.max((f - lo).abs()).max((f - hi).abs());
        }
        assert!(ks < 0.01, "KS distance {ks}");
    }

    #[test]
    fn binned_slot_sampling_matches_mixture_cdf() {
        // joint check on sample_slot: condition on the estimate falling in a
        // bin, compare against the bin-averaged conditional CDF
        let model = fig_model();
        let (bin_lo, bin_hi) = (30.0, 33.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut draws: Vec<f64> = Vec::new();
        for _ in 0..3_000_000u32 {
            let (gh, g) = sample_slot(&model, &mut rng);
            if gh >= bin_lo && gh < bin_hi {
                draws.push(g);
            }
        }
        assert!(draws.len() > 50_000, "thin bin: {}", draws.len());
        draws.sort_by(f64::total_cmp);
        // 5-node Gauss-Legendre average of the conditional CDF over the bin,
        // weighted by the exponential law of the estimate
        let nodes =
            [-0.906179845938664, -0.538469310105683, 0.0, 0.538469310105683, 0.906179845938664];
        let weights =
            [0.236926885056189, 0.478628670499366, 0.568888888888889, 0.478628670499366, 0.236926885056189];
        let mixture_cdf = |x: f64| {
            let (mut num, mut den) = (0.0, 0.0);
            for (t, w) in nodes.iter().zip(weights) {
                let gh = 0.5 * (bin_hi - bin_lo) * t + 0.5 * (bin_hi + bin_lo);
                let pdf = estimated_snr_pdf(&model, gh).unwrap();
                num += w * pdf * conditional_snr_cdf(&model, gh, x).unwrap().value();
                den += w * pdf;
            }
            num / den
        };
        let n = draws.len();
        let mut ks: f64 = 0.0;
        for i in (0..n).step_by(97) {
            let f = mixture_cdf(draws[i]);
            let emp = (i + 1) as f64 / n as f64;
            ks = ks.max((f - emp).abs());
        }
        assert!(ks < 0.01, "KS distance {ks}");
    }
}
