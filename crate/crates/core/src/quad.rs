//! Adaptive Gauss–Kronrod quadrature (21-point rule) for the smooth,
//! piecewise-monotone integrands produced by the error and channel models.

use crate::{Error, Result};

// Nodes and weights of the 21-point Kronrod rule with embedded 10-point
// Gauss rule, on [-1, 1] (positive abscissae; the rule is symmetric).
const XGK: [f64; 11] = [
    0.995_657_163_025_808_1,
    0.973_906_528_517_171_7,
    0.930_157_491_355_708_2,
    0.865_063_366_688_984_5,
    0.780_817_726_586_416_9,
    0.679_409_568_299_024_4,
    0.562_757_134_668_604_7,
    0.433_395_394_129_247_2,
    0.294_392_862_701_460_2,
    0.148_874_338_981_631_21,
    0.0,
];
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874,
    0.032_558_162_307_964_73,
    0.054_755_896_574_351_996,
    0.075_039_674_810_919_95,
    0.093_125_454_583_697_6,
    0.109_387_158_802_297_64,
    0.123_491_976_262_065_85,
    0.134_709_217_311_473_33,
    0.142_775_938_577_060_08,
    0.147_739_104_901_338_49,
    0.149_445_554_002_916_9,
];
const WG: [f64; 5] = [
    0.066_671_344_308_688_14,
    0.149_451_349_150_580_6,
    0.219_086_362_515_982_04,
    0.269_266_719_309_996_35,
    0.295_524_224_714_752_87,
];

/// One Gauss–Kronrod pass over `[a, b]`; returns (integral, error estimate).
fn kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);

    let fc = f(center);
    let mut kronrod_sum = WGK[10] * fc;
    let mut gauss_sum = 0.0;

    for (i, &x) in XGK.iter().take(10).enumerate() {
        let dx = half * x;
        let fsum = f(center - dx) + f(center + dx);
        kronrod_sum += WGK[i] * fsum;
        if i % 2 == 1 {
            gauss_sum += WG[i / 2] * fsum;
        }
    }

    let integral = kronrod_sum * half;
    let err = ((kronrod_sum - gauss_sum) * half).abs();
    (integral, err)
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

/// Adaptively integrate `f` over the union of `[points[i], points[i+1]]`,
/// bisecting the segment with the largest error estimate until the summed
/// estimate drops below `abs_tol`.
///
/// `points` must be finite and nondecreasing. Returns (integral, error
/// estimate); fails with a diagnostic when `max_splits` bisections are not
/// enough.
pub(crate) fn integrate_segments<F: Fn(f64) -> f64>(
    f: F,
    points: &[f64],
    abs_tol: f64,
    max_splits: usize,
) -> Result<(f64, f64)> {
    assert!(points.len() >= 2, "need at least one segment");
    let mut segs: Vec<Segment> = Vec::with_capacity(points.len() + max_splits);
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let (value, err) = kronrod(&f, a, b);
        segs.push(Segment { a, b, value, err });
    }

    for _ in 0..max_splits {
        let total_err: f64 = segs.iter().map(|s| s.err).sum();
        if total_err <= abs_tol {
            break;
        }
        let worst = segs
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.err.total_cmp(&y.1.err))
            .map(|(i, _)| i)
            .expect("nonempty segment list");
        let Segment { a, b, .. } = segs[worst];
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            // interval no longer splittable in f64; accept its estimate
            segs[worst].err = 0.0;
            continue;
        }
        let left = kronrod(&f, a, mid);
        let right = kronrod(&f, mid, b);
        segs[worst] = Segment { a, b: mid, value: left.0, err: left.1 };
        segs.push(Segment { a: mid, b, value: right.0, err: right.1 });
    }

    let total_err: f64 = segs.iter().map(|s| s.err).sum();
    let total: f64 = segs.iter().map(|s| s.value).sum();
    if total_err > abs_tol {
        return Err(Error::Numeric(format!(
            "quadrature did not converge: err={total_err:.3e} > tol={abs_tol:.3e} \
             after {max_splits} splits on [{:.6e}, {:.6e}]",
            points[0],
            points[points.len() - 1]
        )));
    }
    Ok((total, total_err))
}

/// Adaptive integration over a single interval.
pub(crate) fn integrate<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    max_splits: usize,
) -> Result<(f64, f64)> {
    integrate_segments(f, &[a, b], abs_tol, max_splits)
}
