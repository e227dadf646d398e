//! Monte Carlo validation of the analytic delay bounds: a slotted FIFO
//! queue driven by random channel estimates, policy-chosen rates and
//! Bernoulli decoding failures.
//!
//! Per slot, the arrival batch joins the queue, then the slot's service
//! drains it: `n * r` bits with probability `1 - eps`, nothing otherwise.
//! The delay of the batch arriving in slot `t-1` is the number of further
//! slots until cumulative departures cover the first `t` arrival batches.
//! Parallel runs split the slots across independent generator streams of
//! one counter-based generator, so results are reproducible bit-for-bit for
//! a fixed `(seed, streams)` and the single-stream run equals `run` exactly.

use crate::channel::EstimationModel;
use crate::ratepolicy::RatePolicy;
use crate::snc::ArrivalSpec;
use crate::{Error, Result};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Queue simulation parameters.
#[derive(Clone, Copy)]
pub struct SimConfig<'a> {
    pub slots: u64,
    pub seed: u64,
    /// Largest delay (slots) tracked by the violation counters.
    pub w_max: u32,
    pub arrival: &'a ArrivalSpec,
    pub policy: &'a RatePolicy,
    pub model: &'a EstimationModel,
    /// Data symbols per slot.
    pub n: u32,
    /// Backlog cap (bits); exceeding it stops the run early and flags it.
    pub backlog_cap_bits: f64,
}

/// Empirical delay-violation counts and frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    /// `violations[w]` counts measured slots whose delay exceeded `w`, for
    /// `w` in `0..=w_max`.
    pub violations: Vec<u64>,
    pub measured_slots: u64,
    /// `violations[w] / measured_slots`.
    pub p_v_hat: Vec<f64>,
    pub mean_queue_bits: f64,
    pub seed: u64,
    pub slots: u64,
    /// Set when a stream hit the backlog cap and stopped early.
    pub unstable_run: bool,
}

impl SimOutcome {
    /// Binomial standard error of `p_v_hat[w]`.
    pub fn standard_error(&self, w: usize) -> f64 {
        let p = self.p_v_hat[w];
        (p * (1.0 - p) / self.measured_slots as f64).sqrt()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("w,violations,p_v_hat\n");
        for (w, (&v, &p)) in self.violations.iter().zip(&self.p_v_hat).enumerate() {
            out.push_str(&format!("{w},{v},{}\n", crate::ratepolicy::fmt_csv_float(p)));
        }
        out
    }
}

struct StreamResult {
    /// `hist[v]` counts measured slots with delay exactly `v`; the last bin
    /// collects everything beyond `w_max`.
    hist: Vec<u64>,
    measured: u64,
    queue_bits_sum: f64,
    slots_done: u64,
    unstable: bool,
}

#[inline]
fn uniform_open01(rng: &mut ChaCha8Rng) -> f64 {
    use rand_chacha::rand_core::RngCore;
    (((rng.next_u64() >> 11) + 1) as f64) * (1.0 / 9_007_199_254_740_992.0)
}

fn run_stream(cfg: &SimConfig<'_>, stream: u64, slots: u64) -> StreamResult {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);

    let estimate_mean = cfg.model.estimate_mean();
    let arrival_bits = cfg.arrival.bits_per_slot();
    let grid = cfg.policy.grid();
    let rates = cfg.policy.rates();
    let eps = cfg.policy.eps_true();
    let n = cfg.n as f64;
    let w_max = cfg.w_max as u64;
    let measured_limit = slots.saturating_sub(w_max);

    let mut hist = vec![0u64; cfg.w_max as usize + 2];
    let mut backlog = 0.0f64;
    let mut departed = 0.0f64;
    let mut departed_comp = 0.0f64; // Kahan compensation
    let mut queue_bits_sum = 0.0f64;
    let mut next_batch: u64 = 1; // first arrival batch not yet fully departed
    let mut unstable = false;
    let mut slots_done = 0u64;

    for slot in 0..slots {
        let estimate = if estimate_mean > 0.0 {
            -estimate_mean * uniform_open01(&mut rng).ln()
        } else {
            0.0
        };
        let (rate, eps_slot) = match grid.lookup(estimate) {
            Some(i) => (rates[i], eps[i]),
            None => (0.0, 0.0),
        };

        backlog += arrival_bits;
        if rate > 0.0 {
            let failure = uniform_open01(&mut rng) <= eps_slot;
            if !failure {
                let served = (n * rate).min(backlog);
                backlog -= served;
                // Kahan-compensated cumulative departures
                let y = served - departed_comp;
                let t = departed + y;
                departed_comp = (t - departed) - y;
                departed = t;
            }
        }
        debug_assert!(backlog >= 0.0);
        queue_bits_sum += backlog;
        slots_done = slot + 1;

        // batches covered by the departures so far determine their delay
        let coverage_slack = 64.0 * f64::EPSILON * (arrival_bits * next_batch as f64).max(1.0);
        while next_batch <= slots_done
            && arrival_bits * next_batch as f64 <= departed + coverage_slack
        {
            if next_batch <= measured_limit {
                let delay = slots_done - next_batch;
                hist[delay.min(w_max + 1) as usize] += 1;
            }
            next_batch += 1;
        }

        if backlog > cfg.backlog_cap_bits {
            unstable = true;
            break;
        }
    }

    // batches never covered within the run exceeded every tracked delay
    let censor_limit = slots_done.saturating_sub(w_max);
    while next_batch <= censor_limit {
        hist[w_max as usize + 1] += 1;
        next_batch += 1;
    }

    let measured = censor_limit.min(measured_limit);
    StreamResult { hist, measured, queue_bits_sum, slots_done, unstable }
}

fn merge(cfg: &SimConfig<'_>, parts: Vec<StreamResult>) -> SimOutcome {
    let bins = cfg.w_max as usize + 2;
    let mut hist = vec![0u64; bins];
    let mut measured = 0u64;
    let mut queue_sum = 0.0;
    let mut slots_done = 0u64;
    let mut unstable = false;
    for part in parts {
        for (h, p) in hist.iter_mut().zip(&part.hist) {
            *h += p;
        }
        measured += part.measured;
        queue_sum += part.queue_bits_sum;
        slots_done += part.slots_done;
        unstable |= part.unstable;
    }
    // violations[w] = number of measured slots with delay > w
    let mut violations = vec![0u64; cfg.w_max as usize + 1];
    let mut acc = hist[bins - 1];
    for w in (0..=cfg.w_max as usize).rev() {
        violations[w] = acc;
        acc += hist[w];
    }
    let p_v_hat = violations
        .iter()
        .map(|&v| if measured > 0 { v as f64 / measured as f64 } else { 0.0 })
        .collect();
    SimOutcome {
        violations,
        measured_slots: measured,
        p_v_hat,
        mean_queue_bits: if slots_done > 0 { queue_sum / slots_done as f64 } else { 0.0 },
        seed: cfg.seed,
        slots: cfg.slots,
        unstable_run: unstable,
    }
}

fn validate(cfg: &SimConfig<'_>) -> Result<()> {
    if cfg.slots == 0 || cfg.w_max == 0 {
        return Err(Error::Domain("need slots >= 1 and w_max >= 1".into()));
    }
    if cfg.slots <= cfg.w_max as u64 {
        return Err(Error::Domain(format!(
            "need slots > w_max to measure anything, got {} <= {}",
            cfg.slots, cfg.w_max
        )));
    }
    if !(cfg.backlog_cap_bits > 0.0) {
        return Err(Error::Domain("backlog cap must be positive".into()));
    }
    Ok(())
}

/// Simulate the queue on a single generator stream.
pub fn run(cfg: &SimConfig<'_>) -> Result<SimOutcome> {
    validate(cfg)?;
    Ok(merge(cfg, vec![run_stream(cfg, 0, cfg.slots)]))
}

/// Simulate across `streams` independent generator streams in parallel and
/// merge the counts. `streams = 1` reproduces [`run`] bit-for-bit.
pub fn run_parallel(cfg: &SimConfig<'_>, streams: u32) -> Result<SimOutcome> {
    validate(cfg)?;
    if streams == 0 {
        return Err(Error::Domain("need at least one stream".into()));
    }
    let base = cfg.slots / streams as u64;
    let extra = cfg.slots % streams as u64;
    let lengths: Vec<u64> =
        (0..streams as u64).map(|k| base + if k < extra { 1 } else { 0 }).collect();
    if lengths.iter().any(|&l| l <= cfg.w_max as u64) {
        return Err(Error::Domain(format!(
            "each stream needs more than w_max={} slots; lower the stream count",
            cfg.w_max
        )));
    }
    let parts: Vec<StreamResult> = lengths
        .into_par_iter()
        .enumerate()
        .map(|(k, len)| run_stream(cfg, k as u64, len))
        .collect();
    Ok(merge(cfg, parts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{build_estimation_model, LinkConfig};
    use crate::ratepolicy::{build_policy_fixed_eps, RatePolicy, SnrGrid};

    fn fig_model() -> EstimationModel {
        build_estimation_model(LinkConfig::from_snr_db(15.0, 225, 25).unwrap())
    }

    fn constant_policy(model: &EstimationModel, rate: f64, eps: f64) -> RatePolicy {
        let grid = SnrGrid::log_spaced(model, 8, 1e-6).unwrap();
        let mut csv = String::from("# scheme = fractionCapacity\ngamma_hat,rate,eps_target,eps_true\n");
        for &p in grid.points() {
            csv.push_str(&format!("{p},{rate},{eps},{eps}\n"));
        }
        RatePolicy::from_csv(&csv, model).unwrap()
    }

    fn base_cfg<'a>(
        arrival: &'a ArrivalSpec,
        policy: &'a RatePolicy,
        model: &'a EstimationModel,
        slots: u64,
    ) -> SimConfig<'a> {
        SimConfig {
            slots,
            seed: 42,
            w_max: 8,
            arrival,
            policy,
            model,
            n: 200,
            backlog_cap_bits: 1e12,
        }
    }

    #[test]
    fn empty_system_never_violates() {
        let model = fig_model();
        let arrival = ArrivalSpec::new(0.0, 225).unwrap();
        let policy = constant_policy(&model, 1.0, 0.1);
        let out = run(&base_cfg(&arrival, &policy, &model, 20_000)).unwrap();
        for w in 1..=8usize {
            assert_eq!(out.violations[w], 0, "violation at w={w}");
        }
        assert_eq!(out.mean_queue_bits, 0.0);
    }

    #[test]
    fn ample_service_clears_within_one_slot() {
        let model = fig_model();
        let arrival = ArrivalSpec::new(1.0, 225).unwrap();
        // n*r = 400 >= 225 arriving bits, never failing
        let policy = constant_policy(&model, 2.0, 0.0);
        let out = run(&base_cfg(&arrival, &policy, &model, 50_000)).unwrap();
        assert_eq!(out.violations[1], 0);
        assert!(out.p_v_hat[0] <= 1.0);
    }

    #[test]
    fn deterministic_and_single_stream_equivalence() {
        let model = fig_model();
        let arrival = ArrivalSpec::new(1.4, 225).unwrap();
        let grid = SnrGrid::log_spaced(&model, 200, 1e-9).unwrap();
        let policy = build_policy_fixed_eps(&model, 200, &grid, 0.003).unwrap();
        let cfg = base_cfg(&arrival, &policy, &model, 30_000);
        let a = run(&cfg).unwrap();
        let b = run(&cfg).unwrap();
        assert_eq!(a, b);
        let c = run_parallel(&cfg, 1).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn violation_counts_are_suffix_sums() {
        let model = fig_model();
        let arrival = ArrivalSpec::new(1.4, 225).unwrap();
        let grid = SnrGrid::log_spaced(&model, 200, 1e-9).unwrap();
        let policy = build_policy_fixed_eps(&model, 200, &grid, 0.003).unwrap();
        let out = run(&base_cfg(&arrival, &policy, &model, 100_000)).unwrap();
        for w in 1..out.p_v_hat.len() {
            assert!(out.p_v_hat[w] <= out.p_v_hat[w - 1]);
            assert!(out.violations[w] <= out.violations[w - 1]);
        }
        assert_eq!(out.measured_slots, 100_000 - 8);
        let csv = out.to_csv();
        assert!(csv.starts_with("w,violations,p_v_hat\n"));
        assert_eq!(csv.lines().count(), 10);
    }

    #[test]
    fn parallel_streams_agree_statistically() {
        let model = fig_model();
        let arrival = ArrivalSpec::new(1.5, 225).unwrap();
        let grid = SnrGrid::log_spaced(&model, 200, 1e-9).unwrap();
        let policy = build_policy_fixed_eps(&model, 200, &grid, 0.003).unwrap();
        let cfg = base_cfg(&arrival, &policy, &model, 400_000);
        let single = run(&cfg).unwrap();
        let multi = run_parallel(&cfg, 8).unwrap();
        let total: u64 = multi.violations.iter().sum();
        assert!(total > 0 || single.violations.iter().sum::<u64>() == 0);
        for w in 0..=2usize {
            let se = single.standard_error(w).max(multi.standard_error(w)).max(1e-9);
            assert!(
                (single.p_v_hat[w] - multi.p_v_hat[w]).abs() <= 3.0 * se + 1e-12,
                "w={w}: single {} vs multi {}",
                single.p_v_hat[w],
                multi.p_v_hat[w]
            );
        }
    }

    #[test]
    fn overload_flags_unstable() {
        let model = fig_model();
        let arrival = ArrivalSpec::new(50.0, 225).unwrap(); // far beyond service
        let policy = constant_policy(&model, 1.0, 0.2);
        let mut cfg = base_cfg(&arrival, &policy, &model, 1_000_000);
        cfg.backlog_cap_bits = 1e6;
        let out = run(&cfg).unwrap();
        assert!(out.unstable_run);
        assert!(out.slots < 1_000_000 || out.p_v_hat[8] > 0.0);
    }

    #[test]
    fn config_validation() {
        let model = fig_model();
        let arrival = ArrivalSpec::new(1.0, 225).unwrap();
        let policy = constant_policy(&model, 1.0, 0.0);
        let mut cfg = base_cfg(&arrival, &policy, &model, 5);
        assert!(run(&cfg).is_err()); // slots <= w_max
        cfg.slots = 100;
        assert!(run_parallel(&cfg, 50).is_err()); // streams too short
    }
}
