//! Scalar standard-normal functions with stable tail behavior.
//!
//! The threshold search and the truncated-moment recursion standardize cell
//! bounds that can land 30+ standard deviations into a tail, where naive
//! `Phi(b) - Phi(a)` is 0.0. Everything here keeps a usable log-domain value
//! in that regime.

use libm::erfc;

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const SQRT_2: f64 = std::f64::consts::SQRT_2;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
#[inline]
pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() * FRAC_1_SQRT_2PI
}

/// Log of the standard normal density; `-inf` at infinite arguments.
#[inline]
pub fn ln_pdf(x: f64) -> f64 {
    if x.is_infinite() {
        return f64::NEG_INFINITY;
    }
    -0.5 * x * x - LN_SQRT_2PI
}

/// Standard normal CDF via the complementary error function.
#[inline]
pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Survival function `1 - Phi(x)`.
#[inline]
pub fn sf(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

/// Log survival function, finite for all finite `x`.
///
/// erfc underflows near x = 38; past that an asymptotic expansion of the
/// Mills ratio takes over.
pub fn ln_sf(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    if x == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    if x < 30.0 {
        let s = sf(x);
        if s > 0.0 {
            return s.ln();
        }
    }
    // 1 - Phi(x) = phi(x)/x * (1 - 1/x^2 + 3/x^4 - 15/x^6 + 105/x^8 - ...)
    let inv2 = 1.0 / (x * x);
    let series = 1.0 + inv2 * (-1.0 + inv2 * (3.0 + inv2 * (-15.0 + inv2 * 105.0)));
    ln_pdf(x) - x.ln() + series.ln()
}

/// Log CDF, finite for all finite `x`.
#[inline]
pub fn ln_cdf(x: f64) -> f64 {
    ln_sf(-x)
}

/// `ln(Phi(b) - Phi(a))` for `a < b`, stable in both tails.
pub fn ln_cdf_interval(a: f64, b: f64) -> f64 {
    debug_assert!(a < b);
    if a >= 0.0 {
        // Right tail: work with survival functions.
        let la = ln_sf(a);
        let lb = ln_sf(b);
        la + ln_1m_exp(lb - la)
    } else if b <= 0.0 {
        // Left tail: mirror.
        let lb = ln_cdf(b);
        let la = ln_cdf(a);
        lb + ln_1m_exp(la - lb)
    } else {
        // Straddles the mode; the difference is well conditioned.
        (cdf(b) - cdf(a)).max(f64::MIN_POSITIVE).ln()
    }
}

/// Stable `ln(1 - exp(x))` for `x <= 0`.
#[inline]
pub fn ln_1m_exp(x: f64) -> f64 {
    const LN_HALF: f64 = -std::f64::consts::LN_2;
    if x >= 0.0 {
        return f64::NEG_INFINITY;
    }
    if x < LN_HALF {
        (-x.exp()).ln_1p()
    } else {
        (-x.exp_m1()).ln()
    }
}

/// `Phi(b) - Phi(a)` using the complementary form on whichever side avoids
/// cancellation. May underflow to 0 deep in a tail.
#[inline]
pub fn cdf_interval(a: f64, b: f64) -> f64 {
    debug_assert!(a < b);
    if a >= 0.0 {
        sf(a) - sf(b)
    } else if b <= 0.0 {
        cdf(b) - cdf(a)
    } else {
        cdf(b) - cdf(a)
    }
}

/// Coefficients of the truncated-normal moment formulas on the standardized
/// cell `[a, b]`:
///
/// `a_coef = (phi(a) - phi(b)) / Z`, `b_coef = (a phi(a) - b phi(b)) / Z`,
/// with `Z = Phi(b) - Phi(a)`. Falls back to the log domain when `Z`
/// underflows; returns `None` when even that degenerates.
pub fn trunc_std_coeffs(a: f64, b: f64) -> Option<(f64, f64)> {
    debug_assert!(a < b);
    let z = cdf_interval(a, b);
    let (t_a, t_b) = if z > 1e-280 {
        (pdf(a) / z, pdf(b) / z)
    } else {
        let ln_z = ln_cdf_interval(a, b);
        if !ln_z.is_finite() {
            return None;
        }
        (safe_exp(ln_pdf(a) - ln_z), safe_exp(ln_pdf(b) - ln_z))
    };
    let a_coef = t_a - t_b;
    let b_coef = mul_or_zero(a, t_a) - mul_or_zero(b, t_b);
    if !a_coef.is_finite() || !b_coef.is_finite() {
        return None;
    }
    Some((a_coef, b_coef))
}

#[inline]
fn safe_exp(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        0.0
    } else {
        x.exp()
    }
}

// `a * t` where `t == 0.0` wins even against an infinite `a`.
#[inline]
fn mul_or_zero(a: f64, t: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        a * t
    }
}

/// Inverse standard normal CDF (Acklam's rational approximation plus one
/// Halley refinement; ~1e-15 relative accuracy on (0, 1)).
pub fn inv_cdf(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "inv_cdf domain: p in (0,1), got {p}");
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_690e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };

    // Halley refinement on Phi(x) - p = 0.
    let e = cdf(x) - p;
    let u = e * (0.5 * x * x).exp() / FRAC_1_SQRT_2PI;
    x - u / (1.0 + x * u / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cdf_known_values() {
        assert_abs_diff_eq!(cdf(0.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(cdf(1.0), 0.841_344_746_068_542_9, epsilon = 1e-14);
        assert_abs_diff_eq!(cdf(-1.96), 0.024_997_895_148_220_43, epsilon = 1e-12);
    }

    #[test]
    fn ln_sf_matches_direct_in_bulk() {
        for x in [-5.0, -1.0, 0.0, 0.5, 2.0, 8.0, 25.0] {
            assert_abs_diff_eq!(ln_sf(x), sf(x).ln(), epsilon = 1e-11);
        }
    }

    #[test]
    fn ln_sf_finite_deep_in_tail() {
        let v = ln_sf(50.0);
        assert!(v.is_finite());
        // 1 - Phi(50) ~ phi(50)/50
        assert_abs_diff_eq!(v, ln_pdf(50.0) - 50.0_f64.ln(), epsilon = 1e-3);
    }

    #[test]
    fn interval_probability_consistency() {
        let direct = (cdf(1.3) - cdf(0.2)).ln();
        assert_abs_diff_eq!(ln_cdf_interval(0.2, 1.3), direct, epsilon = 1e-12);
        let sym = ln_cdf_interval(-0.7, 0.7);
        assert_abs_diff_eq!(sym, (cdf(0.7) - cdf(-0.7)).ln(), epsilon = 1e-12);
        // Deep tail cell still yields a finite log probability.
        assert!(ln_cdf_interval(35.0, 36.0).is_finite());
        assert!(ln_cdf_interval(-36.0, -35.0).is_finite());
    }

    #[test]
    fn inv_cdf_round_trip() {
        for &p in &[1e-12, 1e-6, 0.01, 0.3, 0.5, 0.77, 0.99, 1.0 - 1e-9] {
            let x = inv_cdf(p);
            assert_abs_diff_eq!(cdf(x), p, epsilon = 1e-13 * p.max(1e-3));
        }
        assert_abs_diff_eq!(inv_cdf(0.841_344_746_068_542_9), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn trunc_coeffs_half_normal() {
        // [0, inf): a_coef = phi(0)/0.5 = sqrt(2/pi), b_coef = 0.
        let (a, b) = trunc_std_coeffs(0.0, f64::INFINITY).unwrap();
        assert_abs_diff_eq!(a, (2.0 / std::f64::consts::PI).sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(b, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn trunc_coeffs_tail_cell_mean_inside() {
        // mean of truncated standard normal on [a, b] is a_coef and must land
        // inside the cell, even 30 sigma out.
        let (a_coef, _) = trunc_std_coeffs(30.0, 31.0).unwrap();
        assert!(a_coef > 30.0 && a_coef < 31.0, "got {a_coef}");
    }
}
