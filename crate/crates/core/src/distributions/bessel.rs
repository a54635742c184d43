//! Modified Bessel functions of the first kind in log space, and the vMF
//! quantities built on them.
//!
//! `log I_ν(x)` uses the power series below `SERIES_CUTOFF` and an
//! asymptotic expansion above it: the uniform (Debye) expansion in ν for
//! large orders, Hankel's large-argument expansion for small orders, and the
//! log-space series in between where neither expansion is accurate.

use crate::error::{Error, Result};

/// Crossover from the power series to asymptotic expansions.
pub const SERIES_CUTOFF: f64 = 50.0;

const DEBYE_MIN_ORDER: f64 = 30.0;
const MAX_SERIES_TERMS: usize = 20_000;

fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

fn check_args(nu: f64, x: f64) -> Result<()> {
    if !(nu >= 0.0 && nu.is_finite()) || !(x >= 0.0 && x.is_finite()) {
        return Err(Error::contract(format!(
            "Bessel I needs finite nu >= 0 and x >= 0, got nu={nu}, x={x}"
        )));
    }
    Ok(())
}

/// `ln S` where `I_ν(x) = (x/2)^ν / Γ(ν+1) · S` and
/// `S = Σ_j (x²/4)^j Γ(ν+1) / (j! Γ(ν+j+1))`.
pub(crate) fn log_series_sum(nu: f64, x: f64) -> f64 {
    let q = 0.25 * x * x;
    if x < SERIES_CUTOFF {
        // Terms stay below e^x, safe in linear space.
        let mut term = 1.0;
        let mut sum = 1.0;
        for j in 0..MAX_SERIES_TERMS {
            let jf = j as f64;
            term *= q / ((jf + 1.0) * (jf + 1.0 + nu));
            sum += term;
            if term < 1e-17 * sum && (jf + 1.0) * (jf + 1.0 + nu) > q {
                break;
            }
        }
        return sum.ln();
    }
    let ln_q = q.ln();
    let mut log_term = 0.0_f64;
    let mut log_sum = 0.0_f64;
    for j in 0..MAX_SERIES_TERMS {
        let jf = j as f64;
        log_term += ln_q - ((jf + 1.0) * (jf + 1.0 + nu)).ln();
        let (hi, lo) = if log_sum > log_term {
            (log_sum, log_term)
        } else {
            (log_term, log_sum)
        };
        log_sum = hi + (lo - hi).exp().ln_1p();
        if log_term < log_sum - 40.0 && (jf + 1.0) * (jf + 1.0 + nu) > q {
            break;
        }
    }
    log_sum
}

fn log_series(nu: f64, x: f64) -> f64 {
    nu * (0.5 * x).ln() - ln_gamma(nu + 1.0) + log_series_sum(nu, x)
}

fn debye_u(p: f64) -> [f64; 6] {
    let p2 = p * p;
    let p3 = p2 * p;
    let p4 = p2 * p2;
    let p5 = p4 * p;
    let p6 = p4 * p2;
    let p7 = p6 * p;
    let p8 = p4 * p4;
    let p9 = p8 * p;
    let p10 = p8 * p2;
    let p11 = p10 * p;
    let p12 = p6 * p6;
    let p13 = p12 * p;
    let p15 = p13 * p2;
    [
        1.0,
        (3.0 * p - 5.0 * p3) / 24.0,
        (81.0 * p2 - 462.0 * p4 + 385.0 * p6) / 1152.0,
        (30375.0 * p3 - 369603.0 * p5 + 765765.0 * p7 - 425425.0 * p9) / 414720.0,
        (4465125.0 * p4 - 94121676.0 * p6 + 349922430.0 * p8 - 446185740.0 * p10
            + 185910725.0 * p12)
            / 39813120.0,
        (1519035525.0 * p5 - 49286948607.0 * p7 + 284499769554.0 * p9 - 614135872350.0 * p11
            + 566098157625.0 * p13
            - 188699385875.0 * p15)
            / 6688604160.0,
    ]
}

/// Uniform asymptotic expansion, `I_ν(νz)`.
fn log_debye(nu: f64, x: f64) -> f64 {
    let z = x / nu;
    let root = (1.0 + z * z).sqrt();
    let p = 1.0 / root;
    let eta = root + (z / (1.0 + root)).ln();
    let u = debye_u(p);
    let mut series = 0.0;
    let mut pow = 1.0;
    for uk in u {
        series += uk / pow;
        pow *= nu;
    }
    nu * eta - 0.5 * (2.0 * std::f64::consts::PI * nu).ln() - 0.5 * root.ln() + series.ln()
}

/// Hankel expansion for large x, or `None` when its terms stop shrinking
/// before reaching double precision.
fn log_hankel(nu: f64, x: f64) -> Option<f64> {
    let mu = 4.0 * nu * nu;
    let mut term = 1.0_f64;
    let mut sum = 1.0_f64;
    for k in 1..200 {
        let kf = k as f64;
        let next = -term * (mu - (2.0 * kf - 1.0).powi(2)) / (8.0 * kf * x);
        if next.abs() > term.abs() {
            return None;
        }
        term = next;
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            return Some(x - 0.5 * (2.0 * std::f64::consts::PI * x).ln() + sum.ln());
        }
    }
    None
}

/// `ln I_ν(x)` for `ν ≥ 0`, `x ≥ 0`. Returns `-∞` for `x = 0, ν > 0`.
pub fn log_bessel_i(nu: f64, x: f64) -> Result<f64> {
    check_args(nu, x)?;
    if x == 0.0 {
        return Ok(if nu == 0.0 { 0.0 } else { f64::NEG_INFINITY });
    }
    let value = if x < SERIES_CUTOFF {
        log_series(nu, x)
    } else if nu >= DEBYE_MIN_ORDER {
        log_debye(nu, x)
    } else {
        match log_hankel(nu, x) {
            Some(v) => v,
            None => log_series(nu, x),
        }
    };
    if !value.is_finite() {
        return Err(Error::numeric(
            "log_bessel_i",
            format!("non-finite result for nu={nu}, x={x}"),
        ));
    }
    Ok(value)
}

/// `I_{ν+1}(x) / I_ν(x)`.
pub fn bessel_ratio(nu: f64, x: f64) -> Result<f64> {
    check_args(nu, x)?;
    if x == 0.0 {
        return Ok(0.0);
    }
    let r = if x < SERIES_CUTOFF {
        x / (2.0 * (nu + 1.0)) * (log_series_sum(nu + 1.0, x) - log_series_sum(nu, x)).exp()
    } else {
        (log_bessel_i(nu + 1.0, x)? - log_bessel_i(nu, x)?).exp()
    };
    if !r.is_finite() {
        return Err(Error::numeric("bessel_ratio", format!("nu={nu}, x={x}")));
    }
    Ok(r)
}

/// Mean resultant length `A_d(κ) = I_{d/2}(κ) / I_{d/2-1}(κ)` of vMF on S^{d-1}.
pub fn mean_resultant_length(dim: usize, kappa: f64) -> Result<f64> {
    bessel_ratio(dim as f64 / 2.0 - 1.0, kappa)
}

/// `ln C_d(κ)`, the log normalizer of vMF on S^{d-1}.
pub fn vmf_log_normalizer(dim: usize, kappa: f64) -> Result<f64> {
    let nu = dim as f64 / 2.0 - 1.0;
    let d = dim as f64;
    if kappa == 0.0 {
        // Inverse surface area of the sphere.
        return Ok(ln_gamma(d / 2.0)
            - std::f64::consts::LN_2
            - 0.5 * d * std::f64::consts::PI.ln());
    }
    Ok(nu * kappa.ln() - (nu + 1.0) * (2.0 * std::f64::consts::PI).ln() - log_bessel_i(nu, kappa)?)
}

/// `KL(vMF(μ, κ) || vMF(·, 0))` and its derivative with respect to κ.
pub fn kl_vmf_uniform_with_grad(dim: usize, kappa: f64) -> Result<(f64, f64)> {
    if dim < 2 {
        return Err(Error::contract(format!("vMF needs dim >= 2, got {dim}")));
    }
    if !(kappa >= 0.0) {
        return Err(Error::contract(format!("kappa must be >= 0, got {kappa}")));
    }
    if kappa == 0.0 {
        return Ok((0.0, 0.0));
    }
    let nu = dim as f64 / 2.0 - 1.0;
    let a = bessel_ratio(nu, kappa)?;
    let kl = if kappa < SERIES_CUTOFF {
        // ν ln κ − ln I_ν(κ) − [ν ln 2 + ln Γ(ν+1)] collapses to −ln S.
        kappa * a - log_series_sum(nu, kappa)
    } else {
        kappa * a + vmf_log_normalizer(dim, kappa)? - vmf_log_normalizer(dim, 0.0)?
    };
    let grad = kappa * (1.0 - a * a) - (dim as f64 - 1.0) * a;
    if !kl.is_finite() || !grad.is_finite() {
        return Err(Error::numeric(
            "kl_vmf_uniform",
            format!("non-finite KL for dim={dim}, kappa={kappa}"),
        ));
    }
    Ok((kl.max(0.0), grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    // ln I_ν(x) from mpmath at 40 digits.
    const XS: [f64; 8] = [1e-3, 0.5, 5.0, 49.9, 50.0, 50.1, 120.0, 1000.0];
    const REFERENCE: [(f64, [f64; 8]); 8] = [
        (
            0.0,
            [
                2.49999984375001745e-07,
                6.15497191854813067e-02,
                3.30468177582253331e+00,
                4.70285816168033719e+01,
                4.71275755018718030e+01,
                4.72265714075707095e+01,
                1.16688361640523169e+02,
                9.95627308889869482e+02,
            ],
        ),
        (
            0.5,
            [
                -3.67966882546913476e+00,
                -5.31040088311781955e-01,
                3.27629710961790677e+00,
                4.70260509654165872e+01,
                4.71250499640812563e+01,
                4.72240509627499208e+01,
                1.16687315595404300e+02,
                9.95627183827304293e+02,
            ],
        ),
        (
            1.5,
            [
                -1.16860364597860436e+01,
                -2.33921304239232430e+00,
                3.05326705684001842e+00,
                4.70058073591399435e+01,
                4.71048472567637333e+01,
                4.72038889894595783e+01,
                1.16678947345733789e+02,
                9.95626183326970704e+02,
            ],
        ),
        (
            4.0,
            [
                -3.35816636185162736e+01,
                -8.71074426475239605e+00,
                1.63085389710689577e+00,
                4.68667096375765126e+01,
                4.69660302450432283e+01,
                4.70653515574958874e+01,
                1.16621420982776542e+02,
                9.95619304896227845e+02,
            ],
        ),
        (
            9.5,
            [
                -8.61491985612440203e+01,
                -2.71044708085843489e+01,
                -4.65512691222558406e+00,
                4.61178805767766207e+01,
                4.62187030931929357e+01,
                4.63195203241185851e+01,
                1.16310939834915445e+02,
                9.95582161643276663e+02,
            ],
        ),
        (
            24.0,
            [
                -2.37206388417122298e+02,
                -8.80532941851671609e+01,
                -3.25449391631523284e+01,
                4.13082832083540126e+01,
                4.14184139848614734e+01,
                4.15285042247972385e+01,
                1.14286375317089053e+02,
                9.95339178596804345e+02,
            ],
        ),
        (
            99.0,
            [
                -1.11162354886174148e+03,
                -4.96376722122378339e+02,
                -2.68358942236124392e+02,
                -3.46164624300968171e+01,
                -3.43946674370452357e+01,
                -3.41732261626208924e+01,
                7.76694443727876376e+01,
                9.90728358711020860e+02,
            ],
        ),
        (
            255.5,
            [
                -3.10651477997172833e+03,
                -1.51868216716123084e+03,
                -9.30347554246838513e+02,
                -3.40157325641353964e+02,
                -3.39636167379168228e+02,
                -3.39116012162390064e+02,
                -1.04701391561124808e+02,
                9.63145541560249512e+02,
            ],
        ),
    ];

    #[test]
    fn log_bessel_matches_high_precision_reference() {
        for (nu, row) in REFERENCE {
            for (x, want) in XS.iter().zip(row) {
                let got = log_bessel_i(nu, *x).unwrap();
                let err = (got - want).abs() / want.abs().max(1.0);
                assert!(
                    err < 1e-12,
                    "nu={nu} x={x}: got {got}, want {want}, err {err:e}"
                );
            }
        }
    }

    #[test]
    fn bessel_ratio_reference_values() {
        // I_5(κ)/I_4(κ) from mpmath.
        for (k, want) in [
            (0.5, 0.049896203861781466),
            (5.0, 0.4224501510153021),
            (50.0, 0.9132095998737405),
        ] {
            let got = mean_resultant_length(10, k).unwrap();
            assert!((got - want).abs() < 1e-12, "kappa={k}: {got} vs {want}");
        }
    }

    #[test]
    fn stable_and_monotone_over_working_range() {
        for nu in [0.0, 0.5, 3.0, 17.5, 64.0, 128.0, 256.0] {
            let mut prev = f64::NEG_INFINITY;
            let mut k = 0.0;
            while k <= 1000.0 {
                let v = log_bessel_i(nu, k).unwrap();
                assert!(!v.is_nan() && v < f64::INFINITY, "nu={nu} k={k}");
                assert!(v >= prev, "not monotone at nu={nu}, k={k}: {prev} -> {v}");
                prev = v;
                k += if k < 60.0 { 0.25 } else { 7.0 };
            }
        }
    }

    #[test]
    fn kl_derivative_matches_central_difference() {
        for dim in [3usize, 10, 200] {
            for kappa in [0.01, 0.7, 12.0, 49.0, 51.0, 300.0] {
                let (_, g) = kl_vmf_uniform_with_grad(dim, kappa).unwrap();
                let h = 1e-5 * kappa.max(1.0);
                let f = |k: f64| kl_vmf_uniform_with_grad(dim, k).unwrap().0;
                let fd = (f(kappa + h) - f(kappa - h)) / (2.0 * h);
                let rel = (g - fd).abs() / (g.abs() + fd.abs() + 1e-12);
                assert!(rel < 1e-4, "dim={dim} kappa={kappa}: {g} vs {fd}");
            }
        }
    }

    #[test]
    fn kl_is_zero_at_prior_and_grows_with_kappa() {
        assert_eq!(kl_vmf_uniform_with_grad(7, 0.0).unwrap().0, 0.0);
        let k1 = kl_vmf_uniform_with_grad(7, 1.0).unwrap().0;
        let k5 = kl_vmf_uniform_with_grad(7, 5.0).unwrap().0;
        assert!(k5 > k1 && k1 > 0.0);
    }

    #[test]
    fn series_and_asymptotic_agree_at_crossover() {
        for nu in [0.0, 2.0, 31.0, 99.0] {
            let below = log_series(nu, SERIES_CUTOFF);
            let above = log_bessel_i(nu, SERIES_CUTOFF).unwrap();
            assert!(
                (below - above).abs() < 1e-10 * below.abs().max(1.0),
                "nu={nu}"
            );
        }
    }

    #[test]
    fn rejects_negative_arguments() {
        assert!(matches!(log_bessel_i(-1.0, 2.0), Err(Error::Contract(_))));
        assert!(matches!(
            kl_vmf_uniform_with_grad(5, -0.1),
            Err(Error::Contract(_))
        ));
    }
}
