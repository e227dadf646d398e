//! Scalar special functions shared by every other module: the Gaussian
//! Q-function and its inverse, the modified Bessel function I0, the first
//! order Marcum Q-function and the channel dispersion.
//!
//! All functions operate on `f64`; the downstream tolerances (>= 1e-8) do
//! not call for extended precision.

use crate::{quad, Error, Result};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const SQRT_2PI: f64 = 2.506_628_274_631_000_5;
const LOG2_E: f64 = std::f64::consts::LOG2_E;

/// Squared base-2 logarithm of e, the high-SNR limit of [`dispersion`].
pub const DISPERSION_LIMIT: f64 = LOG2_E * LOG2_E;

/// A probability in `[0, 1]`.
///
/// Construction clamps values within 1e-9 of the unit interval (numerical
/// slack from quadrature and series truncation) and rejects anything else.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Probability(f64);

impl Probability {
    pub const ZERO: Probability = Probability(0.0);
    pub const ONE: Probability = Probability(1.0);

    pub fn new(value: f64) -> Result<Self> {
        if !value.is_finite() || !(-1e-9..=1.0 + 1e-9).contains(&value) {
            return Err(Error::Domain(format!("probability out of [0,1]: {value}")));
        }
        Ok(Probability(value.clamp(0.0, 1.0)))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl From<Probability> for f64 {
    fn from(p: Probability) -> f64 {
        p.0
    }
}

impl std::fmt::Display for Probability {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Gaussian tail probability without the domain check: callers guarantee a
/// finite argument.
#[inline]
pub(crate) fn q_raw(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

/// Standard normal density.
#[inline]
pub(crate) fn phi_raw(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

/// Gaussian Q-function, the upper tail of the standard normal law.
pub fn gaussian_q(x: f64) -> Result<Probability> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("gaussian_q argument must be finite, got {x}")));
    }
    Probability::new(q_raw(x))
}

// Rational approximation of the standard normal quantile (Acklam's
// coefficients), accurate to ~1.15e-9 relative before refinement.
const ACK_A: [f64; 6] = [
    -3.969_683_028_665_376e1,
    2.209_460_984_245_205e2,
    -2.759_285_104_469_687e2,
    1.383_577_518_672_69e2,
    -3.066_479_806_614_716e1,
    2.506_628_277_459_239,
];
const ACK_B: [f64; 5] = [
    -5.447_609_879_822_406e1,
    1.615_858_368_580_409e2,
    -1.556_989_798_598_866e2,
    6.680_131_188_771_972e1,
    -1.328_068_155_288_572e1,
];
const ACK_C: [f64; 6] = [
    -7.784_894_002_430_293e-3,
    -3.223_964_580_411_365e-1,
    -2.400_758_277_161_838,
    -2.549_732_539_343_734,
    4.374_664_141_464_968,
    2.938_163_982_698_783,
];
const ACK_D: [f64; 4] = [
    7.784_695_709_041_462e-3,
    3.224_671_290_700_398e-1,
    2.445_134_137_142_996,
    3.754_408_661_907_416,
];

fn norm_quantile_approx(p: f64) -> f64 {
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((ACK_C[0] * q + ACK_C[1]) * q + ACK_C[2]) * q + ACK_C[3]) * q + ACK_C[4]) * q
            + ACK_C[5])
            / ((((ACK_D[0] * q + ACK_D[1]) * q + ACK_D[2]) * q + ACK_D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((ACK_A[0] * r + ACK_A[1]) * r + ACK_A[2]) * r + ACK_A[3]) * r + ACK_A[4]) * r
            + ACK_A[5])
            * q
            / (((((ACK_B[0] * r + ACK_B[1]) * r + ACK_B[2]) * r + ACK_B[3]) * r + ACK_B[4]) * r
                + 1.0)
    } else {
        -norm_quantile_approx(1.0 - p)
    }
}

/// Inverse Q without domain checks; callers guarantee `0 < p < 1`.
#[inline]
pub(crate) fn inverse_q_raw(p: f64) -> f64 {
    // Q^{-1}(p) = -Phi^{-1}(p)
    let mut x = -norm_quantile_approx(p);
    // Newton steps on Q(x) - p pin the roundtrip to ~1e-15 relative.
    for _ in 0..2 {
        let f = q_raw(x) - p;
        let d = phi_raw(x);
        if d > 0.0 && d.is_finite() {
            x += f / d;
        }
    }
    x
}

/// Inverse of [`gaussian_q`] on the open unit interval.
pub fn inverse_q(p: Probability) -> Result<f64> {
    let p = p.value();
    if p <= 0.0 || p >= 1.0 {
        return Err(Error::Domain(format!("inverse_q requires 0 < p < 1, got {p}")));
    }
    Ok(inverse_q_raw(p))
}

// Chebyshev expansions for I0 (Cephes): interval [0, 8] in terms of
// chbevl(x/2 - 2), and (8, inf) in terms of chbevl(32/x - 2)/sqrt(x).
const I0_COEFFS_A: [f64; 30] = [
    -4.415_341_646_479_339_5e-18,
    3.330_794_518_822_238_4e-17,
    -2.431_279_846_547_955e-16,
    1.715_391_285_555_133e-15,
    -1.168_533_287_799_345_1e-14,
    7.676_185_498_604_936e-14,
    -4.856_446_783_111_929e-13,
    2.955_052_663_129_64e-12,
    -1.726_826_291_441_556e-11,
    9.675_809_035_373_237e-11,
    -5.189_795_601_635_263e-10,
    2.659_823_724_682_386_6e-9,
    -1.300_025_009_986_248e-8,
    6.046_995_022_541_919e-8,
    -2.670_793_853_940_612e-7,
    1.117_387_539_120_103_7e-6,
    -4.416_738_358_458_750_5e-6,
    1.644_844_807_072_889_6e-5,
    -5.754_195_010_082_104e-5,
    1.885_028_850_958_416_5e-4,
    -5.763_755_745_385_824e-4,
    1.639_475_616_941_335_7e-3,
    -4.324_309_995_050_576e-3,
    1.054_646_039_459_499_8e-2,
    -2.373_741_480_589_947e-2,
    4.930_528_423_967_071e-2,
    -9.490_109_704_804_764e-2,
    1.716_209_015_222_087_7e-1,
    -3.046_826_723_431_984e-1,
    6.767_952_744_094_761e-1,
];
const I0_COEFFS_B: [f64; 25] = [
    -7.233_180_487_874_754e-18,
    -4.830_504_485_944_182e-18,
    4.465_621_420_296_76e-17,
    3.461_222_867_697_461e-17,
    -2.827_623_980_516_583_6e-16,
    -3.425_485_619_677_219e-16,
    1.772_560_133_056_526_3e-15,
    3.811_680_669_352_622_4e-15,
    -9.554_846_698_828_307e-15,
    -4.150_569_347_287_222e-14,
    1.540_086_217_521_41e-14,
    3.852_778_382_742_142_6e-13,
    7.180_124_451_383_666e-13,
    -1.794_178_531_506_806_2e-12,
    -1.321_581_184_044_771_3e-11,
    -3.149_916_527_963_241_6e-11,
    1.188_914_710_784_643_9e-11,
    4.940_602_388_224_97e-10,
    3.396_232_025_708_386_5e-9,
    2.266_668_990_498_178e-8,
    2.048_918_589_469_063_8e-7,
    2.891_370_520_834_756_7e-6,
    6.889_758_346_916_825e-5,
    3.369_116_478_255_694_3e-3,
    8.044_904_110_141_088e-1,
];

fn chbevl(x: f64, coeffs: &[f64]) -> f64 {
    let mut b0 = coeffs[0];
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for &c in &coeffs[1..] {
        b2 = b1;
        b1 = b0;
        b0 = x * b1 - b2 + c;
    }
    0.5 * (b0 - b2)
}

/// Exponentially scaled modified Bessel function `e^{-x} I0(x)` for `x >= 0`.
pub fn bessel_i0e(x: f64) -> Result<f64> {
    if x.is_nan() || x < 0.0 {
        return Err(Error::Domain(format!("bessel_i0e requires x >= 0, got {x}")));
    }
    Ok(i0e_raw(x))
}

#[inline]
pub(crate) fn i0e_raw(x: f64) -> f64 {
    if x <= 8.0 {
        let y = x / 2.0 - 2.0;
        (-x).exp() * x.exp() * chbevl(y, &I0_COEFFS_A)
    } else {
        chbevl(32.0 / x - 2.0, &I0_COEFFS_B) / x.sqrt()
    }
}

/// Modified Bessel function of the first kind, order zero.
///
/// Overflows to infinity for `x` beyond ~709; use [`bessel_i0e`] there.
pub fn bessel_i0(x: f64) -> Result<f64> {
    if x.is_nan() || x < 0.0 {
        return Err(Error::Domain(format!("bessel_i0 requires x >= 0, got {x}")));
    }
    if x <= 8.0 {
        Ok(x.exp() * chbevl(x / 2.0 - 2.0, &I0_COEFFS_A))
    } else {
        Ok(x.exp() * i0e_raw(x))
    }
}

// The Poisson/Erlang series for Q1 keeps every term positive; both tail
// weights must stay representable, which bounds the usable a^2/2, b^2/2.
const MARCUM_SERIES_LIMIT: f64 = 300.0;

fn marcum_q1_series(a: f64, b: f64) -> f64 {
    let u = 0.5 * a * a;
    let v = 0.5 * b * b;
    // Q1(a,b) = sum_k Pois(k; u) * P{Pois(v) <= k}
    let mut poisson_u = (-u).exp();
    let mut cumulative_u = 0.0;
    let mut erlang_term = (-v).exp();
    let mut erlang_tail = erlang_term;
    let mut total = 0.0;
    let max_k = (u + 10.0 * u.sqrt() + 40.0) as usize;
    for k in 0..=max_k {
        total += poisson_u * erlang_tail.min(1.0);
        cumulative_u += poisson_u;
        if 1.0 - cumulative_u < 1e-16 {
            break;
        }
        let kf = (k + 1) as f64;
        poisson_u *= u / kf;
        erlang_term *= v / kf;
        erlang_tail += erlang_term;
    }
    total
}

fn marcum_q1_quad(a: f64, b: f64) -> Result<f64> {
    // density of the radial variable, in overflow-free form:
    //   x * exp(-(x-a)^2/2) * i0e(a x)
    let density = |x: f64| x * (-0.5 * (x - a) * (x - a)).exp() * i0e_raw(a * x);
    let hi = a.max(b) + 9.0;
    if b >= a {
        // far beyond the bump the integrand decays on a scale ~1/(b-a);
        // bracket that edge so it cannot hide between quadrature nodes
        let mut points = vec![b, hi];
        if b - a > 3.0 {
            points.insert(1, (b + 6.0 / (b - a)).min(hi));
        }
        let (tail, _) = quad::integrate_segments(density, &points, 1e-12, 400)?;
        Ok(tail)
    } else {
        let points = if a - 9.0 > 0.0 && a - 9.0 < b {
            vec![0.0, a - 9.0, b]
        } else {
            vec![0.0, b]
        };
        let (head, _) = quad::integrate_segments(density, &points, 1e-12, 400)?;
        Ok(1.0 - head)
    }
}

/// First order Marcum Q-function `Q1(a, b)`, the tail of the noncentral
/// chi-square law with two degrees of freedom.
///
/// Absolute error below 1e-10: a positive-term series for moderate
/// arguments, a guarded quadrature of the radial density otherwise.
pub fn marcum_q1(a: f64, b: f64) -> Result<Probability> {
    if a.is_nan() || b.is_nan() || a < 0.0 || b < 0.0 {
        return Err(Error::Domain(format!("marcum_q1 requires a, b >= 0, got ({a}, {b})")));
    }
    if b == 0.0 {
        return Ok(Probability::ONE);
    }
    if a == 0.0 {
        return Probability::new((-0.5 * b * b).exp());
    }
    let (u, v) = (0.5 * a * a, 0.5 * b * b);
    if u <= MARCUM_SERIES_LIMIT && v <= MARCUM_SERIES_LIMIT {
        Probability::new(marcum_q1_series(a, b))
    } else {
        Probability::new(marcum_q1_quad(a, b)?)
    }
}

/// Channel dispersion `log2^2(e) * (1 - 1/(1+snr)^2)` of the AWGN channel
/// at the given linear SNR.
pub fn dispersion(snr: f64) -> Result<f64> {
    if snr.is_nan() || snr < 0.0 {
        return Err(Error::Domain(format!("dispersion requires snr >= 0, got {snr}")));
    }
    Ok(dispersion_raw(snr))
}

#[inline]
pub(crate) fn dispersion_raw(snr: f64) -> f64 {
    // (1 - 1/(1+g)^2) written cancellation-free as g(g+2)/(1+g)^2; the
    // ratio can round one ulp above 1, so pin the upper limit
    let one_plus = 1.0 + snr;
    (DISPERSION_LIMIT * (snr * (snr + 2.0)) / (one_plus * one_plus)).min(DISPERSION_LIMIT)
}
