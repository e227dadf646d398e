//! Outer-loop optimisers over the delay bound: training-length selection,
//! maximum supportable arrival rate under a QoS target, and the combined
//! sweep of both against the target delay.

use crate::channel::{build_estimation_model, LinkConfig};
use crate::ratepolicy::{self, RatePolicy, SchemeSpec, SnrGrid};
use crate::snc::{self, ArrivalSpec, DelayBoundResult, ServicePolicy, ThetaSearch};
use crate::{Error, Result};
use rayon::prelude::*;

/// Target delay and the admissible violation probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QoSTarget {
    pub w: u32,
    pub p_target: f64,
}

impl QoSTarget {
    pub fn new(w: u32, p_target: f64) -> Result<Self> {
        if w < 1 {
            return Err(Error::Domain("target delay w must be >= 1 slot".into()));
        }
        if !(p_target > 0.0 && p_target < 1.0) {
            return Err(Error::Domain(format!("p_target must lie in (0, 1), got {p_target}")));
        }
        Ok(QoSTarget { w, p_target })
    }
}

/// Discretisation and search settings shared by the sweeps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisOptions {
    pub grid_points: usize,
    pub grid_quantile: f64,
    pub theta: ThetaSearch,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            grid_points: ratepolicy::DEFAULT_GRID_POINTS,
            grid_quantile: ratepolicy::DEFAULT_GRID_QUANTILE,
            theta: ThetaSearch::default(),
        }
    }
}

/// Training lengths examined by [`optimize_training`]: every value up to
/// `FINE_LIMIT`, then strides of `COARSE_STRIDE`.
const FINE_LIMIT: u32 = 100;
const COARSE_STRIDE: u32 = 5;

pub fn training_candidates(n_slot: u32) -> Vec<u32> {
    let mut ms = Vec::new();
    let mut m = 1u32;
    while m < n_slot {
        ms.push(m);
        m += if m < FINE_LIMIT { 1 } else { COARSE_STRIDE };
    }
    ms
}

/// Delay bound for one training length under the given scheme; policies
/// that depend on the transform parameter are rebuilt per probe, the rest
/// are built once.
fn bound_for_m(
    avg_snr: f64,
    n_slot: u32,
    m: u32,
    arrival: &ArrivalSpec,
    w: u32,
    scheme: &SchemeSpec,
    opts: &AnalysisOptions,
    cache: &snc::MellinCache,
) -> Result<DelayBoundResult> {
    let cfg = LinkConfig::new(avg_snr, n_slot, m)?;
    let model = build_estimation_model(cfg);
    let n = cfg.n();
    let grid = SnrGrid::log_spaced(&model, opts.grid_points, opts.grid_quantile)?;
    match scheme {
        SchemeSpec::ApproxRa { eps_min } => {
            let source = ServicePolicy::ApproxPerTheta { model: &model, grid: &grid, eps_min: *eps_min };
            snc::delay_bound_cached(arrival, &source, n, w, &opts.theta, cache)
        }
        SchemeSpec::PerfectRa { eps_floor } => {
            let source =
                ServicePolicy::PerfectPerTheta { model: &model, grid: &grid, eps_floor: *eps_floor };
            snc::delay_bound_cached(arrival, &source, n, w, &opts.theta, cache)
        }
        other => {
            let policy = ratepolicy::build_policy(&model, other, n, n_slot, 0.99, &grid)?;
            snc::delay_bound_cached(arrival, &ServicePolicy::Fixed(&policy), n, w, &opts.theta, cache)
        }
    }
}

/// One row of a training sweep.
#[derive(Debug, Clone)]
pub struct TrainingRow {
    pub m: u32,
    pub result: DelayBoundResult,
}

/// Full table of delay bounds against the training length, plus the argmin.
#[derive(Debug, Clone)]
pub struct TrainingSweep {
    pub rows: Vec<TrainingRow>,
    pub best_index: usize,
}

impl TrainingSweep {
    pub fn best(&self) -> &TrainingRow {
        &self.rows[self.best_index]
    }
}

/// Evaluate the delay bound for every candidate training length and return
/// the full table with the minimising `m`.
pub fn optimize_training(
    avg_snr: f64,
    n_slot: u32,
    arrival: &ArrivalSpec,
    w: u32,
    scheme: &SchemeSpec,
    opts: &AnalysisOptions,
) -> Result<TrainingSweep> {
    if n_slot < 2 {
        return Err(Error::Domain("n_slot must be >= 2 to leave room for training".into()));
    }
    if arrival.n_slot() != n_slot {
        return Err(Error::Domain(format!(
            "arrival spec is for n_slot={}, sweep got {n_slot}",
            arrival.n_slot()
        )));
    }
    let rows: Result<Vec<TrainingRow>> = training_candidates(n_slot)
        .into_par_iter()
        .map(|m| {
            let cache = snc::MellinCache::new();
            let result = bound_for_m(avg_snr, n_slot, m, arrival, w, scheme, opts, &cache)?;
            Ok(TrainingRow { m, result })
        })
        .collect();
    let rows = rows?;
    let mut best_index = 0;
    for (i, row) in rows.iter().enumerate() {
        if row.result.raw_bound < rows[best_index].result.raw_bound {
            best_index = i;
        }
    }
    Ok(TrainingSweep { rows, best_index })
}

/// Largest arrival rate (bits/symbol, tolerance 1e-3) whose delay bound
/// meets the QoS target at training length `m`; zero when even a vanishing
/// arrival rate is infeasible.
pub fn max_arrival_rate(
    avg_snr: f64,
    n_slot: u32,
    m: u32,
    target: &QoSTarget,
    scheme: &SchemeSpec,
    opts: &AnalysisOptions,
) -> Result<f64> {
    const ALPHA_TOL: f64 = 1e-3;
    let cfg = LinkConfig::new(avg_snr, n_slot, m)?;
    let model = build_estimation_model(cfg);
    let n = cfg.n();
    let grid = SnrGrid::log_spaced(&model, opts.grid_points, opts.grid_quantile)?;
    // policies do not depend on the arrival rate: share one Mellin cache
    // across all bisection probes, and build theta-independent policies once
    let cache = snc::MellinCache::new();
    let prebuilt: Option<RatePolicy> = if scheme.theta_dependent() {
        None
    } else {
        Some(ratepolicy::build_policy(&model, scheme, n, n_slot, 0.99, &grid)?)
    };
    let source = match (&prebuilt, scheme) {
        (Some(policy), _) => ServicePolicy::Fixed(policy),
        (None, SchemeSpec::ApproxRa { eps_min }) => {
            ServicePolicy::ApproxPerTheta { model: &model, grid: &grid, eps_min: *eps_min }
        }
        (None, SchemeSpec::PerfectRa { eps_floor }) => {
            ServicePolicy::PerfectPerTheta { model: &model, grid: &grid, eps_floor: *eps_floor }
        }
        _ => unreachable!("theta-independent schemes are prebuilt"),
    };
    let feasible = |alpha: f64| -> Result<bool> {
        let arrival = ArrivalSpec::new(alpha, n_slot)?;
        let res = snc::delay_bound_cached(&arrival, &source, n, target.w, &opts.theta, &cache)?;
        Ok(res.stable && res.raw_bound <= target.p_target)
    };
    let mut lo = 0.0;
    let mut hi = n as f64 / n_slot as f64 * (1.0 + 10.0 * avg_snr).log2();
    if !feasible(ALPHA_TOL.min(1e-4))? {
        return Ok(0.0);
    }
    if feasible(hi)? {
        return Ok(hi);
    }
    while hi - lo > ALPHA_TOL {
        let mid = 0.5 * (lo + hi);
        if feasible(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// One cell of the training-versus-delay sweep.
#[derive(Debug, Clone, Copy)]
pub struct OptimalTrainingRow {
    pub avg_snr: f64,
    pub w: u32,
    pub m_star: u32,
    pub alpha_star: f64,
}

/// For each `(avg_snr, w)` pair, the training length maximising the
/// supportable arrival rate under `p_target`, scanning `m` with the given
/// stride.
pub fn optimal_training_vs_delay(
    avg_snrs: &[f64],
    n_slot: u32,
    p_target: f64,
    ws: &[u32],
    scheme: &SchemeSpec,
    opts: &AnalysisOptions,
    m_stride: u32,
) -> Result<Vec<OptimalTrainingRow>> {
    if m_stride == 0 {
        return Err(Error::Domain("m_stride must be >= 1".into()));
    }
    let mut rows = Vec::with_capacity(avg_snrs.len() * ws.len());
    for &avg_snr in avg_snrs {
        for &w in ws {
            let target = QoSTarget::new(w, p_target)?;
            let ms: Vec<u32> = (1..n_slot).step_by(m_stride as usize).collect();
            let cells: Result<Vec<(u32, f64)>> = ms
                .into_par_iter()
                .map(|m| Ok((m, max_arrival_rate(avg_snr, n_slot, m, &target, scheme, opts)?)))
                .collect();
            let cells = cells?;
            let (m_star, alpha_star) = cells
                .iter()
                .copied()
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .expect("nonempty training scan");
            rows.push(OptimalTrainingRow { avg_snr, w, m_star, alpha_star });
        }
    }
    Ok(rows)
}

/// Expected goodput of the scheme at the given training length, normalised
/// by the full slot.
pub fn goodput_for_scheme(
    avg_snr: f64,
    n_slot: u32,
    m: u32,
    scheme: &SchemeSpec,
    opts: &AnalysisOptions,
) -> Result<f64> {
    let cfg = LinkConfig::new(avg_snr, n_slot, m)?;
    let model = build_estimation_model(cfg);
    let n = cfg.n();
    let grid = if matches!(scheme, SchemeSpec::FixedRateNoCsi { .. }) {
        SnrGrid::degenerate()
    } else {
        SnrGrid::log_spaced(&model, opts.grid_points, opts.grid_quantile)?
    };
    let policy = ratepolicy::build_policy(&model, scheme, n, n_slot, 0.99, &grid)?;
    Ok(ratepolicy::expected_goodput(&policy, n, n_slot))
}
