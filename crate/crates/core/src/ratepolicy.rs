//! Rate adaptation policies on a discretised estimated-SNR grid.
//!
//! A policy maps each gridpoint to a code rate, a target error probability
//! (where the scheme has one) and the resulting true error probability. The
//! reference scheme minimises, per gridpoint, the service contribution
//! `g(snr_hat, eps') = (1 - eps') e^{n r (theta-1)} + eps'` over the target
//! error probability `eps'`, where the rate follows from the invertible
//! combined error bound; `g` is convex in `eps'` on its admissible interval
//! for `theta < 1`, so a golden-section search finds the unique minimiser.

use crate::channel::{EstimationModel, LinkConfig};
use crate::errmodel;
use crate::specfun::{self, Probability};
use crate::{quad, Error, Result};
use rayon::prelude::*;

const LOG2_E: f64 = std::f64::consts::LOG2_E;
const LN_2: f64 = std::f64::consts::LN_2;

/// Default number of gridpoints for [`SnrGrid::log_spaced`].
pub const DEFAULT_GRID_POINTS: usize = 2000;
/// Default quantile cutoff for [`SnrGrid::log_spaced`].
pub const DEFAULT_GRID_QUANTILE: f64 = 1e-12;

const GOLDEN_RATIO_STEP: f64 = 0.381_966_011_250_105_1; // 2 - phi
const QUAD_TOL: f64 = 1e-8;

/// Scheme tags carried by built policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    ApproxRa,
    PerfectRa,
    FixedEps,
    MaxGoodput,
    FractionCapacity,
    FixedRateNoCsi,
}

impl Scheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::ApproxRa => "approxRA",
            Scheme::PerfectRa => "perfectRA",
            Scheme::FixedEps => "fixedEps",
            Scheme::MaxGoodput => "maxGoodput",
            Scheme::FractionCapacity => "fractionCapacity",
            Scheme::FixedRateNoCsi => "fixedRateNoCSI",
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "approxRA" => Ok(Scheme::ApproxRa),
            "perfectRA" => Ok(Scheme::PerfectRa),
            "fixedEps" => Ok(Scheme::FixedEps),
            "maxGoodput" => Ok(Scheme::MaxGoodput),
            "fractionCapacity" => Ok(Scheme::FractionCapacity),
            "fixedRateNoCSI" => Ok(Scheme::FixedRateNoCsi),
            other => Err(Error::Domain(format!("unknown scheme tag: {other}"))),
        }
    }
}

/// Scheme plus the parameters needed to build it.
#[derive(Debug, Clone, PartialEq)]
pub enum SchemeSpec {
    ApproxRa { eps_min: f64 },
    PerfectRa { eps_floor: f64 },
    FixedEps { eps: f64 },
    MaxGoodput,
    FractionCapacity { kappa: f64 },
    /// Fixed-rate transmission without channel estimation; `rate = None`
    /// picks the goodput-maximising rate.
    FixedRateNoCsi { rate: Option<f64> },
}

impl SchemeSpec {
    pub fn tag(&self) -> Scheme {
        match self {
            SchemeSpec::ApproxRa { .. } => Scheme::ApproxRa,
            SchemeSpec::PerfectRa { .. } => Scheme::PerfectRa,
            SchemeSpec::FixedEps { .. } => Scheme::FixedEps,
            SchemeSpec::MaxGoodput => Scheme::MaxGoodput,
            SchemeSpec::FractionCapacity { .. } => Scheme::FractionCapacity,
            SchemeSpec::FixedRateNoCsi { .. } => Scheme::FixedRateNoCsi,
        }
    }

    /// Whether the built policy depends on the transform parameter.
    pub fn theta_dependent(&self) -> bool {
        matches!(self, SchemeSpec::ApproxRa { .. } | SchemeSpec::PerfectRa { .. })
    }
}

/// Discretised law of the estimated SNR: ascending points, per-interval
/// probability mass, and the mass below the first / above the last point.
#[derive(Debug, Clone, PartialEq)]
pub struct SnrGrid {
    points: Vec<f64>,
    probabilities: Vec<f64>,
    head_mass: f64,
    tail_mass: f64,
}

impl SnrGrid {
    /// Log-spaced points between the `quantile` and `1 - quantile` quantiles
    /// of the exponential law of the estimate. Interval masses come from
    /// exact CDF differences; evaluating each interval at its lower endpoint
    /// then keeps the service Mellin transform an upper bound.
    pub fn log_spaced(model: &EstimationModel, count: usize, quantile: f64) -> Result<Self> {
        let mean = model.estimate_mean();
        if mean <= 0.0 {
            return Err(Error::Domain(
                "estimate law is degenerate (m = 0); use SnrGrid::degenerate".into(),
            ));
        }
        if count < 2 || !(quantile > 0.0 && quantile < 0.5) {
            return Err(Error::Domain(format!(
                "need count >= 2 and 0 < quantile < 1/2, got {count}, {quantile}"
            )));
        }
        let lo = -mean * (-quantile).ln_1p();
        let hi = -mean * quantile.ln();
        let ratio = (hi / lo).ln() / (count - 1) as f64;
        let points: Vec<f64> = (0..count).map(|i| lo * (ratio * i as f64).exp()).collect();
        let cdf = |x: f64| -(-x / mean).exp_m1();
        let probabilities: Vec<f64> =
            points.windows(2).map(|w| cdf(w[1]) - cdf(w[0])).collect();
        Ok(SnrGrid {
            head_mass: cdf(points[0]),
            tail_mass: 1.0 - cdf(points[count - 1]),
            points,
            probabilities,
        })
    }

    /// Grid for a transmitter that never estimates the channel: a single
    /// point at zero holding all of the mass in its tail.
    pub fn degenerate() -> Self {
        SnrGrid { points: vec![0.0], probabilities: vec![], head_mass: 0.0, tail_mass: 1.0 }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn head_mass(&self) -> f64 {
        self.head_mass
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    /// Index of the greatest point `<= snr_hat`, or `None` below the grid.
    pub fn lookup(&self, snr_hat: f64) -> Option<usize> {
        if snr_hat < self.points[0] {
            return None;
        }
        Some(self.points.partition_point(|&p| p <= snr_hat) - 1)
    }
}

/// A rate adaptation policy over an [`SnrGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct RatePolicy {
    grid: SnrGrid,
    rate: Vec<f64>,
    eps_target: Vec<f64>,
    eps_true: Vec<f64>,
    scheme: Scheme,
}

impl RatePolicy {
    fn new(
        grid: SnrGrid,
        rate: Vec<f64>,
        eps_target: Vec<f64>,
        eps_true: Vec<f64>,
        scheme: Scheme,
    ) -> Self {
        debug_assert_eq!(grid.len(), rate.len());
        debug_assert_eq!(grid.len(), eps_target.len());
        debug_assert_eq!(grid.len(), eps_true.len());
        RatePolicy { grid, rate, eps_target, eps_true, scheme }
    }

    pub fn grid(&self) -> &SnrGrid {
        &self.grid
    }

    pub fn rates(&self) -> &[f64] {
        &self.rate
    }

    pub fn eps_target(&self) -> &[f64] {
        &self.eps_target
    }

    pub fn eps_true(&self) -> &[f64] {
        &self.eps_true
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Serialise as CSV (`gamma_hat,rate,eps_target,eps_true`) with the
    /// scheme recorded in a leading comment.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * self.len());
        out.push_str(&format!("# scheme = {}\n", self.scheme));
        out.push_str("gamma_hat,rate,eps_target,eps_true\n");
        for i in 0..self.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                fmt_csv_float(self.grid.points[i]),
                fmt_csv_float(self.rate[i]),
                fmt_csv_float(self.eps_target[i]),
                fmt_csv_float(self.eps_true[i]),
            ));
        }
        out
    }

    /// Rebuild a policy from [`RatePolicy::to_csv`] output. Interval masses
    /// are recomputed from the estimate law of `model`.
    pub fn from_csv(text: &str, model: &EstimationModel) -> Result<Self> {
        let mut scheme = Scheme::ApproxRa;
        let mut points = Vec::new();
        let mut rate = Vec::new();
        let mut eps_target = Vec::new();
        let mut eps_true = Vec::new();
        let mut saw_header = false;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(tag) = rest.trim().strip_prefix("scheme =") {
                    scheme = tag.trim().parse()?;
                }
                continue;
            }
            if !saw_header {
                if line != "gamma_hat,rate,eps_target,eps_true" {
                    return Err(Error::Domain(format!("unexpected policy CSV header: {line}")));
                }
                saw_header = true;
                continue;
            }
            let mut fields = line.split(',');
            let mut next = || -> Result<f64> {
                fields
                    .next()
                    .ok_or_else(|| Error::Domain(format!("short policy CSV row: {line}")))?
                    .parse::<f64>()
                    .map_err(|e| Error::Domain(format!("bad number in policy CSV: {e}")))
            };
            points.push(next()?);
            rate.push(next()?);
            eps_target.push(next()?);
            eps_true.push(next()?);
        }
        if points.is_empty() {
            return Err(Error::Domain("policy CSV holds no gridpoints".into()));
        }
        if !points.windows(2).all(|w| w[0] < w[1]) && points.len() > 1 {
            return Err(Error::Domain("policy CSV gridpoints must be ascending".into()));
        }
        let grid = if points.len() == 1 && points[0] == 0.0 {
            SnrGrid::degenerate()
        } else {
            let mean = model.estimate_mean();
            if mean <= 0.0 {
                return Err(Error::Domain("cannot rebuild interval masses: m = 0 model".into()));
            }
            let cdf = |x: f64| -(-x / mean).exp_m1();
            let probabilities: Vec<f64> =
                points.windows(2).map(|w| cdf(w[1]) - cdf(w[0])).collect();
            SnrGrid {
                head_mass: cdf(points[0]),
                tail_mass: 1.0 - cdf(points[points.len() - 1]),
                points,
                probabilities,
            }
        };
        Ok(RatePolicy::new(grid, rate, eps_target, eps_true, scheme))
    }
}

pub(crate) fn fmt_csv_float(x: f64) -> String {
    if x != 0.0 && x.abs() < 1e-3 {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

/// Per-grid constants of the combined error bound (independent of theta).
pub(crate) struct ApproxContext {
    pub sigma_icf: Vec<f64>,
    pub q_floor: Vec<f64>,
}

pub(crate) fn approx_context(model: &EstimationModel, grid: &SnrGrid, n: u32) -> ApproxContext {
    let mut sigma_icf = Vec::with_capacity(grid.len());
    let mut q_floor = Vec::with_capacity(grid.len());
    for &gh in grid.points() {
        let vt = errmodel::VarianceTerms::new(model, gh, n).expect("grid points are valid");
        let sigma = vt.sigma_icf();
        sigma_icf.push(sigma);
        q_floor.push(if sigma > 0.0 { specfun::q_raw(gh / sigma) } else { 1.0 });
    }
    ApproxContext { sigma_icf, q_floor }
}

#[inline]
fn g_from_rate(rate: f64, eps: f64, n: f64, theta: f64) -> f64 {
    (1.0 - eps) * (n * rate * (theta - 1.0)).exp() + eps
}

/// Service contribution `g(snr_hat, eps') = (1-eps') e^{n r(eps') (theta-1)}
/// + eps'` with the rate taken from the combined bound inversion.
///
/// Requires `Q(snr_hat/sigma_icf) < eps' < 1/2`; `theta = 1` degenerates to
/// `g = 1` and larger `theta` is rejected.
pub fn g_objective(
    model: &EstimationModel,
    snr_hat: f64,
    n: u32,
    theta: f64,
    eps_target: Probability,
) -> Result<f64> {
    if theta > 1.0 {
        return Err(Error::Precondition(format!("g_objective needs theta <= 1, got {theta}")));
    }
    let vt = errmodel::VarianceTerms::new(model, snr_hat, n)?;
    let sigma = vt.sigma_icf();
    let eps = eps_target.value();
    if sigma <= 0.0 || !(eps > specfun::q_raw(snr_hat / sigma) && eps < 0.5) {
        return Err(Error::Precondition(format!(
            "g_objective: eps' must lie in (Q(snr_hat/sigma_icf), 1/2) = \
             ({:.6e}, 0.5), got {eps:.6e}",
            if sigma > 0.0 { specfun::q_raw(snr_hat / sigma) } else { 1.0 }
        )));
    }
    let rate = (1.0 + snr_hat - sigma * specfun::inverse_q_raw(eps)).log2();
    Ok(g_from_rate(rate.max(0.0), eps, n as f64, theta))
}

/// g as a function of eps' with precomputed sigma, written in log space:
/// exponent (n/ln2)(theta-1) ln(1 + snr_hat - sigma Q^{-1}(eps')).
#[inline]
fn g_eval(snr_hat: f64, sigma: f64, exponent_scale: f64, eps: f64) -> f64 {
    let shifted = snr_hat - sigma * specfun::inverse_q_raw(eps);
    if shifted <= 0.0 {
        // numerically outside the admissible interval; no positive rate
        return 1.0;
    }
    (1.0 - eps) * (exponent_scale * shifted.ln_1p()).exp() + eps
}

fn golden_min<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let mut x1 = a + GOLDEN_RATIO_STEP * (b - a);
    let mut x2 = b - GOLDEN_RATIO_STEP * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while b - a > tol {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = a + GOLDEN_RATIO_STEP * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = b - GOLDEN_RATIO_STEP * (b - a);
            f2 = f(x2);
        }
    }
    if f1 < f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Minimise `g` over the admissible target error probabilities at one
/// gridpoint. Returns `(eps', rate)`; an empty admissible interval yields
/// `(None, 0.0)` — the point transmits nothing.
pub fn optimize_gridpoint(
    model: &EstimationModel,
    snr_hat: f64,
    n: u32,
    theta: f64,
    eps_min: f64,
) -> Result<(Option<f64>, f64)> {
    if theta > 1.0 {
        return Err(Error::Precondition(format!("theta must be <= 1, got {theta}")));
    }
    if !(0.0..0.5).contains(&eps_min) {
        return Err(Error::Domain(format!("eps_min must lie in [0, 1/2), got {eps_min}")));
    }
    let vt = errmodel::VarianceTerms::new(model, snr_hat, n)?;
    let sigma = vt.sigma_icf();
    let q_floor = if sigma > 0.0 { specfun::q_raw(snr_hat / sigma) } else { 1.0 };
    Ok(optimize_point_inner(snr_hat, sigma, q_floor, n as f64, theta, eps_min))
}

fn optimize_point_inner(
    snr_hat: f64,
    sigma: f64,
    q_floor: f64,
    n: f64,
    theta: f64,
    eps_min: f64,
) -> (Option<f64>, f64) {
    const EPS_HI: f64 = 0.5 - 1e-12;
    let lo = (q_floor * (1.0 + 1e-12)).max(eps_min).max(1e-300);
    if !(lo < EPS_HI) || sigma <= 0.0 {
        return (None, 0.0);
    }
    let rate_at = |eps: f64| (1.0 + snr_hat - sigma * specfun::inverse_q_raw(eps)).log2().max(0.0);
    if theta == 1.0 {
        // degenerate: g = 1 everywhere; settle on the interval midpoint
        let eps = 0.5 * (lo + EPS_HI);
        return (Some(eps), rate_at(eps));
    }
    let exponent_scale = n / LN_2 * (theta - 1.0);
    let (eps_star, _) = golden_min(|e| g_eval(snr_hat, sigma, exponent_scale, e), lo, EPS_HI, 1e-10);
    (Some(eps_star), rate_at(eps_star))
}

/// Rates and target error probabilities of the convex-optimised scheme,
/// without the (expensive) true error probabilities.
pub(crate) fn approx_rates_with_ctx(
    ctx: &ApproxContext,
    grid: &SnrGrid,
    n: u32,
    theta: f64,
    eps_min: f64,
) -> (Vec<f64>, Vec<f64>) {
    let nf = n as f64;
    let pairs: Vec<(f64, f64)> = grid
        .points()
        .par_iter()
        .enumerate()
        .map(|(i, &gh)| {
            let (eps, rate) =
                optimize_point_inner(gh, ctx.sigma_icf[i], ctx.q_floor[i], nf, theta, eps_min);
            (rate, eps.unwrap_or(0.0))
        })
        .collect();
    pairs.into_iter().unzip()
}

/// True error probabilities for a vector of chosen rates.
pub(crate) fn fill_eps_true(
    model: &EstimationModel,
    grid: &SnrGrid,
    n: u32,
    rates: &[f64],
) -> Result<Vec<f64>> {
    grid.points()
        .par_iter()
        .zip(rates)
        .map(|(&gh, &r)| errmodel::eps_normal_approx_raw(model, gh, n, r, QUAD_TOL))
        .collect()
}

/// Convex-optimised rate adaptation: per gridpoint the target error
/// probability minimising `g`, the corresponding rate from the combined
/// bound, and the true error probability at that rate.
pub fn build_policy_approx(
    model: &EstimationModel,
    n: u32,
    theta: f64,
    grid: &SnrGrid,
    eps_min: f64,
) -> Result<RatePolicy> {
    if theta > 1.0 {
        return Err(Error::Precondition(format!("theta must be <= 1, got {theta}")));
    }
    if !(0.0..0.5).contains(&eps_min) {
        return Err(Error::Domain(format!("eps_min must lie in [0, 1/2), got {eps_min}")));
    }
    let ctx = approx_context(model, grid, n);
    let (rate, eps_target) = approx_rates_with_ctx(&ctx, grid, n, theta, eps_min);
    let eps_true = fill_eps_true(model, grid, n, &rate)?;
    Ok(RatePolicy::new(grid.clone(), rate, eps_target, eps_true, Scheme::ApproxRa))
}

/// Scan-plus-refine minimisation of a scalar objective on `[0, hi]`; the
/// objective is evaluated coarsely first, then golden-section refined on the
/// bracketing interval down to `res`.
fn scan_refine<F: Fn(f64) -> Result<f64>>(
    objective: F,
    hi: f64,
    coarse: usize,
    res: f64,
) -> Result<(f64, f64)> {
    let mut best = (0usize, f64::INFINITY);
    let mut values = Vec::with_capacity(coarse + 1);
    for i in 0..=coarse {
        let r = hi * i as f64 / coarse as f64;
        let v = objective(r)?;
        values.push(v);
        if v < best.1 {
            best = (i, v);
        }
    }
    let lo_r = hi * best.0.saturating_sub(1) as f64 / coarse as f64;
    let hi_r = hi * (best.0 + 1).min(coarse) as f64 / coarse as f64;
    let mut failure = None;
    let (r_star, v_star) = golden_min(
        |r| match objective(r) {
            Ok(v) => v,
            Err(e) => {
                failure = Some(e);
                f64::INFINITY
            }
        },
        lo_r,
        hi_r,
        res,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    if v_star < best.1 {
        Ok((r_star, v_star))
    } else {
        Ok((hi * best.0 as f64 / coarse as f64, best.1))
    }
}

const PERFECT_COARSE: usize = 24;
const RATE_RESOLUTION: f64 = 1e-4;

/// Numerically optimal rate adaptation: per gridpoint a coarse-to-fine scan
/// of `(1-eps) e^{n r (theta-1)} + eps` with the true error probability,
/// refined to 1e-4 bits/symbol. `eps_floor > 0` restricts the scan to rates
/// whose error probability is at least the floor.
pub fn build_policy_perfect(
    model: &EstimationModel,
    n: u32,
    theta: f64,
    grid: &SnrGrid,
    eps_floor: f64,
) -> Result<RatePolicy> {
    if theta > 1.0 {
        return Err(Error::Precondition(format!("theta must be <= 1, got {theta}")));
    }
    let nf = n as f64;
    let rows: Result<Vec<(f64, f64)>> = grid
        .points()
        .par_iter()
        .map(|&gh| {
            let cap = (1.0 + gh).log2();
            if cap <= 0.0 {
                return Ok((0.0, 0.0));
            }
            let eps_at = |r: f64| errmodel::eps_normal_approx_raw(model, gh, n, r, QUAD_TOL);
            let objective = |r: f64| -> Result<f64> {
                let eps = eps_at(r)?;
                if eps < eps_floor {
                    return Ok(f64::INFINITY);
                }
                Ok(g_from_rate(r, eps, nf, theta))
            };
            let (r_star, _) = scan_refine(objective, cap, PERFECT_COARSE, RATE_RESOLUTION)?;
            Ok((r_star, eps_at(r_star)?))
        })
        .collect();
    let (rate, eps_true): (Vec<f64>, Vec<f64>) = rows?.into_iter().unzip();
    Ok(RatePolicy::new(grid.clone(), rate, eps_true.clone(), eps_true, Scheme::PerfectRa))
}

/// Rate adaptation holding the true error probability at `eps_fix`
/// (bisection per gridpoint, tolerance 1e-6 in the error probability);
/// gridpoints that cannot attain it transmit nothing.
pub fn build_policy_fixed_eps(
    model: &EstimationModel,
    n: u32,
    grid: &SnrGrid,
    eps_fix: f64,
) -> Result<RatePolicy> {
    if !(eps_fix > 0.0 && eps_fix < 0.5) {
        return Err(Error::Domain(format!("eps_fix must lie in (0, 1/2), got {eps_fix}")));
    }
    let rows: Result<Vec<(f64, f64, f64)>> = grid
        .points()
        .par_iter()
        .map(|&gh| {
            let eps_at = |r: f64| errmodel::eps_normal_approx_raw(model, gh, n, r, QUAD_TOL);
            // the error probability jumps from 0 at r = 0 to a positive
            // limit as r -> 0+; unattainable when that limit already
            // exceeds the target
            if eps_at(1e-9)? > eps_fix {
                return Ok((0.0, 0.0, 0.0));
            }
            let mut hi = (1.0 + gh).log2().max(1e-6);
            let mut guard = 0;
            while eps_at(hi)? < eps_fix {
                hi *= 1.5;
                guard += 1;
                if guard > 60 {
                    return Err(Error::Numeric(format!(
                        "fixed-eps bisection found no upper bracket at snr_hat={gh}"
                    )));
                }
            }
            let mut lo = 0.0;
            loop {
                let mid = 0.5 * (lo + hi);
                let e = eps_at(mid)?;
                if (e - eps_fix).abs() <= 1e-6 || hi - lo < 1e-12 {
                    return Ok((mid, eps_fix, e));
                }
                if e < eps_fix {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        })
        .collect();
    let mut rate = Vec::with_capacity(grid.len());
    let mut eps_target = Vec::with_capacity(grid.len());
    let mut eps_true = Vec::with_capacity(grid.len());
    for (r, et, e) in rows? {
        rate.push(r);
        eps_target.push(et);
        eps_true.push(e);
    }
    Ok(RatePolicy::new(grid.clone(), rate, eps_target, eps_true, Scheme::FixedEps))
}

/// Rate adaptation maximising the per-point goodput `r (1 - eps(r))`.
///
/// The `n/n_slot` normalisation scales all points alike, so it does not
/// move the maximiser; `n_slot` is carried for interface symmetry.
pub fn build_policy_max_goodput(
    model: &EstimationModel,
    n: u32,
    _n_slot: u32,
    grid: &SnrGrid,
) -> Result<RatePolicy> {
    let rows: Result<Vec<(f64, f64)>> = grid
        .points()
        .par_iter()
        .map(|&gh| {
            let cap = (1.0 + gh).log2();
            if cap <= 0.0 {
                return Ok((0.0, 0.0));
            }
            let eps_at = |r: f64| errmodel::eps_normal_approx_raw(model, gh, n, r, QUAD_TOL);
            let objective = |r: f64| -> Result<f64> { Ok(-(r * (1.0 - eps_at(r)?))) };
            let (r_star, _) = scan_refine(objective, cap, PERFECT_COARSE, RATE_RESOLUTION)?;
            Ok((r_star, eps_at(r_star)?))
        })
        .collect();
    let (rate, eps_true): (Vec<f64>, Vec<f64>) = rows?.into_iter().unzip();
    Ok(RatePolicy::new(grid.clone(), rate, eps_true.clone(), eps_true, Scheme::MaxGoodput))
}

/// Fixed fraction of the estimated capacity: `r = kappa log2(1 + snr_hat)`.
pub fn build_policy_fraction(
    model: &EstimationModel,
    grid: &SnrGrid,
    kappa: f64,
) -> Result<RatePolicy> {
    if !(0.0..=1.0).contains(&kappa) {
        return Err(Error::Domain(format!("kappa must lie in [0, 1], got {kappa}")));
    }
    let n = model.config().n();
    let rate: Vec<f64> = grid.points().iter().map(|&gh| kappa * (1.0 + gh).log2()).collect();
    let eps_true = fill_eps_true(model, grid, n, &rate)?;
    Ok(RatePolicy::new(grid.clone(), rate, eps_true.clone(), eps_true, Scheme::FractionCapacity))
}

/// Fixed-rate transmission without channel estimation (`m = 0`): a
/// degenerate single-point policy whose error probability averages over the
/// unconditional SNR law.
pub fn build_policy_fixed_rate(cfg: &LinkConfig, rate: f64) -> Result<RatePolicy> {
    if cfg.m() != 0 {
        return Err(Error::Domain(format!(
            "fixed-rate scheme forgoes training, got m = {}",
            cfg.m()
        )));
    }
    if rate.is_nan() || rate < 0.0 {
        return Err(Error::Domain(format!("rate must be >= 0, got {rate}")));
    }
    let eps = errmodel::eps_fixed_rate_nocsi(cfg.avg_snr(), cfg.n_slot(), rate)?.value();
    Ok(RatePolicy::new(SnrGrid::degenerate(), vec![rate], vec![eps], vec![eps], Scheme::FixedRateNoCsi))
}

/// Goodput-maximising fixed rate for a transmitter without estimation.
pub fn best_fixed_rate_nocsi(cfg: &LinkConfig) -> Result<f64> {
    if cfg.m() != 0 {
        return Err(Error::Domain(format!(
            "fixed-rate scheme forgoes training, got m = {}",
            cfg.m()
        )));
    }
    let cap = (1.0 + 10.0 * cfg.avg_snr()).log2();
    let objective = |r: f64| -> Result<f64> {
        Ok(-(r * (1.0 - errmodel::eps_fixed_rate_nocsi(cfg.avg_snr(), cfg.n_slot(), r)?.value())))
    };
    let (r_star, _) = scan_refine(objective, cap, 48, 1e-4)?;
    Ok(r_star)
}

/// Build the policy described by `spec` at transform parameter
/// `mellin_theta` (ignored by schemes that do not depend on it).
pub fn build_policy(
    model: &EstimationModel,
    spec: &SchemeSpec,
    n: u32,
    n_slot: u32,
    mellin_theta: f64,
    grid: &SnrGrid,
) -> Result<RatePolicy> {
    match spec {
        SchemeSpec::ApproxRa { eps_min } => {
            build_policy_approx(model, n, mellin_theta, grid, *eps_min)
        }
        SchemeSpec::PerfectRa { eps_floor } => {
            build_policy_perfect(model, n, mellin_theta, grid, *eps_floor)
        }
        SchemeSpec::FixedEps { eps } => build_policy_fixed_eps(model, n, grid, *eps),
        SchemeSpec::MaxGoodput => build_policy_max_goodput(model, n, n_slot, grid),
        SchemeSpec::FractionCapacity { kappa } => build_policy_fraction(model, grid, *kappa),
        SchemeSpec::FixedRateNoCsi { rate } => {
            let r = match rate {
                Some(r) => *r,
                None => best_fixed_rate_nocsi(model.config())?,
            };
            build_policy_fixed_rate(model.config(), r)
        }
    }
}

/// Normalised expected goodput of a policy: `(n / n_slot) E[r (1 - eps)]`
/// under the discretised estimate law, the tail evaluated at the last
/// gridpoint.
pub fn expected_goodput(policy: &RatePolicy, n: u32, n_slot: u32) -> f64 {
    let grid = policy.grid();
    let last = policy.len() - 1;
    let mut sum = grid.tail_mass() * policy.rate[last] * (1.0 - policy.eps_true[last]);
    for (i, &mass) in grid.probabilities().iter().enumerate() {
        sum += mass * policy.rate[i] * (1.0 - policy.eps_true[i]);
    }
    n as f64 / n_slot as f64 * sum
}

/// Expected capacity `E[log2(1 + snr)]` of the exponential SNR law: the
/// goodput of error-free capacity transmission with perfect knowledge and
/// no training overhead.
pub fn goodput_pcsi_ibl(avg_snr: f64) -> Result<f64> {
    if !(avg_snr > 0.0) {
        return Err(Error::Domain(format!("avg_snr must be positive, got {avg_snr}")));
    }
    let f = |x: f64| x.ln_1p() * LOG2_E * (-x / avg_snr).exp() / avg_snr;
    let hi = avg_snr * 40.0;
    let (v, _) = quad::integrate_segments(f, &[0.0, avg_snr, hi], 1e-9, 400)?;
    Ok(v)
}

/// Goodput of a perfectly informed transmitter at blocklength `n_slot`:
/// `E[max_r r (1 - eps_fbl(snr, r))]` under the exponential SNR law.
pub fn goodput_pcsi_fbl(avg_snr: f64, n_slot: u32) -> Result<f64> {
    if !(avg_snr > 0.0) || n_slot == 0 {
        return Err(Error::Domain(format!(
            "need avg_snr > 0 and n_slot >= 1, got {avg_snr}, {n_slot}"
        )));
    }
    let nf = n_slot as f64;
    let inner = |snr: f64| -> f64 {
        if snr <= 0.0 {
            return 0.0;
        }
        let cap = (1.0 + snr).log2();
        let spread = (specfun::dispersion_raw(snr) / nf).sqrt();
        let util = |r: f64| -r * (1.0 - specfun::q_raw((cap - r) / spread));
        let (_, neg) = golden_min(util, 0.0, cap, 1e-6 * cap.max(1e-9));
        -neg
    };
    let f = |x: f64| inner(x) * (-x / avg_snr).exp() / avg_snr;
    let hi = avg_snr * 40.0;
    let (v, _) = quad::integrate_segments(f, &[0.0, avg_snr, hi], 1e-7, 400)?;
    Ok(v)
}
