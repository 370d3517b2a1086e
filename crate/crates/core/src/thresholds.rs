//! Extinction band through the real Lambert W branches, the effective mean
//! `mu~`, and the Bernstein-type concentration bounds.

use std::f64::consts::E;
use std::io::Write;

use serde::Serialize;

use crate::cml::phi;
use crate::error::{Error, Result};
use crate::lattice::ball_volume;

const BRANCH_POINT: f64 = -1.0 / E;

fn branch_series(p: f64) -> f64 {
    -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p - 43.0 / 540.0 * p.powi(4)
}

fn near_branch(x: f64) -> Result<Option<f64>> {
    if x < BRANCH_POINT {
        if BRANCH_POINT - x <= 4.0 * f64::EPSILON {
            return Ok(Some(0.0));
        }
        return Err(Error::invalid(format!("Lambert W undefined at {x} < -1/e")));
    }
    Ok(None)
}

fn halley(x: f64, mut w: f64) -> f64 {
    for _ in 0..100 {
        let ew = w.exp();
        let f = w * ew - x;
        if f == 0.0 {
            break;
        }
        let wp1 = w + 1.0;
        if wp1 == 0.0 {
            break;
        }
        let dw = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1));
        if !dw.is_finite() {
            break;
        }
        w -= dw;
        if dw.abs() <= 1e-16 * (1.0 + w.abs()) {
            break;
        }
    }
    w
}

fn residual_ok(x: f64, w: f64) -> bool {
    w.is_finite() && (w * w.exp() - x).abs() <= 1e-12 * x.abs()
}

/// Bisection for `w e^w = x` on `[lo, hi]`, with `w e^w` monotone there.
fn bisect(x: f64, mut lo: f64, mut hi: f64) -> f64 {
    let g = |w: f64| w * w.exp() - x;
    let increasing = g(hi) > g(lo);
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if (g(mid) < 0.0) == increasing {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Principal branch, `W_0(x) >= -1` for `x >= -1/e`.
pub fn lambert_w0(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::invalid("Lambert W of a non-finite value"));
    }
    if near_branch(x)?.is_some() || x == BRANCH_POINT {
        return Ok(-1.0);
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    let p = (2.0 * (E * x + 1.0)).max(0.0).sqrt();
    if p < 1e-4 {
        return Ok(branch_series(p));
    }
    let guess = if x < -0.25 {
        branch_series(p)
    } else if x.abs() <= 0.25 {
        x - x * x + 1.5 * x * x * x
    } else if x < 3.0 {
        x.ln_1p() * 0.8
    } else {
        let l1 = x.ln();
        let l2 = l1.ln();
        l1 - l2 + l2 / l1
    };
    let w = halley(x, guess);
    if residual_ok(x, w) && w >= -1.0 {
        return Ok(w);
    }
    let hi = if x > 1.0 { x.ln() + 1.0 } else { 1.0 };
    let w = bisect(x, -1.0, hi);
    if residual_ok(x, w) {
        Ok(w)
    } else {
        Err(Error::Numerical(format!("W0({x}) did not converge")))
    }
}

/// Lower branch, `W_{-1}(x) <= -1` for `-1/e <= x < 0`.
pub fn lambert_wm1(x: f64) -> Result<f64> {
    if !x.is_finite() || x >= 0.0 {
        return Err(Error::invalid(format!("W_-1 needs x in [-1/e, 0), got {x}")));
    }
    if near_branch(x)?.is_some() || x == BRANCH_POINT {
        return Ok(-1.0);
    }
    let p = -(2.0 * (E * x + 1.0)).max(0.0).sqrt();
    if p > -1e-4 {
        return Ok(branch_series(p));
    }
    let guess = if x < -0.25 {
        branch_series(p)
    } else {
        let l1 = (-x).ln();
        let l2 = (-l1).ln();
        l1 - l2 + l2 / l1
    };
    let w = halley(x, guess);
    if residual_ok(x, w) && w <= -1.0 {
        return Ok(w);
    }
    let u = -(-x).ln() - 1.0;
    let lo = -2.0 - (2.0 * u).sqrt() - 2.0 * u;
    let w = bisect(x, lo, -1.0);
    if residual_ok(x, w) {
        Ok(w)
    } else {
        Err(Error::Numerical(format!("W_-1({x}) did not converge")))
    }
}

/// Sandwich `-1 - sqrt(2u) - u < W_{-1}(-e^{-u-1}) < -1 - sqrt(2u) - 2u/3`.
pub fn wm1_bounds(u: f64) -> Result<(f64, f64)> {
    if !(u > 0.0) {
        return Err(Error::invalid("u must be positive"));
    }
    let s = (2.0 * u).sqrt();
    Ok((-1.0 - s - u, -1.0 - s - 2.0 * u / 3.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ExtinctionBand {
    pub radius: u32,
    pub dim: usize,
    /// `V_R^d`.
    pub volume: u64,
    pub mu1: f64,
    pub mu2: f64,
}

impl ExtinctionBand {
    pub fn contains(&self, mu: f64) -> bool {
        self.mu1 <= mu && mu <= self.mu2
    }
}

fn substitution_residual(mu: f64, vol: f64) -> f64 {
    (mu * (-mu / vol).exp() - 1.0).abs()
}

/// Offspring means `mu1 < mu2` solving `mu e^{-mu / V^d} = 1`.
pub fn extinction_band(radius: u32, dim: usize) -> Result<ExtinctionBand> {
    if radius == 0 {
        return Err(Error::AlwaysExtinct);
    }
    let volume = ball_volume(radius, dim)?;
    let vol = volume as f64;
    let x = -1.0 / vol;
    let mu1 = -vol * lambert_w0(x)?;
    let mu2 = -vol * lambert_wm1(x)?;
    for mu in [mu1, mu2] {
        let r = substitution_residual(mu, vol);
        if r > 1e-10 {
            return Err(Error::Invariant(format!("band root {mu} has residual {r}")));
        }
    }
    Ok(ExtinctionBand { radius, dim, volume, mu1, mu2 })
}

/// `mu1 - 1` by Newton on `ln(1+t) = v (1+t)`, `v = V^{-d}`; accurate to
/// relative round-off in `t`, unlike `mu1` itself near 1.
pub fn mu1_minus_one(radius: u32, dim: usize) -> Result<f64> {
    if radius == 0 {
        return Err(Error::AlwaysExtinct);
    }
    let v = 1.0 / ball_volume(radius, dim)? as f64;
    let mut t = v + 1.5 * v * v;
    for _ in 0..100 {
        let g = t.ln_1p() - v * (1.0 + t);
        let dg = 1.0 / (1.0 + t) - v;
        let step = g / dg;
        t -= step;
        if step.abs() <= 1e-17 * t.abs() {
            break;
        }
    }
    Ok(t)
}

/// `mu1 - (1 + V^{-d} + 1.5 V^{-2d})`.
pub fn mu1_series_error(radius: u32, dim: usize) -> Result<f64> {
    let v = 1.0 / ball_volume(radius, dim)? as f64;
    Ok(mu1_minus_one(radius, dim)? - v - 1.5 * v * v)
}

/// Bracket for `mu2` obtained from the `W_{-1}` sandwich with `u = d ln V - 1`.
pub fn mu2_bracket(radius: u32, dim: usize) -> Result<(f64, f64)> {
    let vol = ball_volume(radius, dim)? as f64;
    let side = (2 * radius + 1) as f64;
    let dl = dim as f64 * side.ln();
    if dl <= 1.0 {
        return Err(Error::invalid("bracket needs d ln V > 1"));
    }
    let s = (2.0 * dl - 2.0).sqrt();
    Ok((vol * (1.0 / 3.0 + s + 2.0 * dl / 3.0), vol * (s + dl)))
}

/// `mu~ = mu e^{-mu V^{-d}}`.
pub fn mutilde(mu: f64, radius: u32, dim: usize) -> Result<f64> {
    let vol = ball_volume(radius, dim)? as f64;
    Ok(mu * (-mu / vol).exp())
}

/// `mu~ = V^d phi_mu(V^{-d})`, the same quantity by its defining formula.
pub fn mutilde_via_phi(mu: f64, radius: u32, dim: usize) -> Result<f64> {
    let vol = ball_volume(radius, dim)? as f64;
    Ok(vol * phi(mu, 1.0 / vol))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BernsteinParams {
    pub sigma2: f64,
    pub m: f64,
    pub w: f64,
}

/// `exp(-w^2 / (2 sigma^2 + (2/3) m w))`.
pub fn bernstein_bound(p: BernsteinParams) -> Result<f64> {
    if !(p.w >= 0.0) || !(p.sigma2 >= 0.0) || !(p.m > 0.0) {
        return Err(Error::invalid("Bernstein bound needs w >= 0, sigma2 >= 0, m > 0"));
    }
    if p.w == 0.0 {
        return Ok(1.0);
    }
    Ok((-p.w * p.w / (2.0 * p.sigma2 + 2.0 / 3.0 * p.m * p.w)).exp())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Concentration {
    pub c: f64,
    /// `2 exp(-c V^d)`; may exceed 1, in which case it says nothing.
    pub bound: f64,
}

pub fn density_concentration(delta: f64, eps: f64, radius: u32, dim: usize) -> Result<Concentration> {
    if !(delta > 0.0 && eps > 0.0) {
        return Err(Error::invalid("delta and eps must be positive"));
    }
    let de = delta * eps;
    let c = de / (1.0 / (2.0 * de) + 2.0 / 3.0);
    let vol = ball_volume(radius, dim)? as f64;
    Ok(Concentration { c, bound: 2.0 * (-c * vol).exp() })
}

#[derive(Clone, Debug, Serialize)]
pub struct ThresholdRow {
    pub radius: u32,
    pub dim: usize,
    pub volume: u64,
    pub mu1: f64,
    pub mu2: f64,
    pub mu1_series_err: f64,
}

pub fn threshold_table(radii: std::ops::RangeInclusive<u32>, dim: usize) -> Result<Vec<ThresholdRow>> {
    radii
        .map(|r| {
            let band = extinction_band(r, dim)?;
            Ok(ThresholdRow {
                radius: r,
                dim,
                volume: band.volume,
                mu1: band.mu1,
                mu2: band.mu2,
                mu1_series_err: mu1_series_error(r, dim)?,
            })
        })
        .collect()
}

pub fn write_threshold_csv<W: Write>(rows: &[ThresholdRow], mut w: W) -> Result<()> {
    writeln!(w, "R,d,V,mu1,mu2,mu1_series_err")?;
    for r in rows {
        writeln!(w, "{},{},{},{:.17e},{:.17e},{:.6e}", r.radius, r.dim, r.volume, r.mu1, r.mu2, r.mu1_series_err)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn branch_point_and_zero() {
        assert_eq!(lambert_w0(0.0).unwrap(), 0.0);
        assert_eq!(lambert_w0(-1.0 / E).unwrap(), -1.0);
        assert_eq!(lambert_wm1(-1.0 / E).unwrap(), -1.0);
        assert!(lambert_w0(-0.5).is_err());
        assert!(lambert_wm1(0.0).is_err());
        assert!(lambert_wm1(0.1).is_err());
        assert!((lambert_w0(E).unwrap() - 1.0).abs() < 1e-15);
        assert!((lambert_wm1(-2.0 * (-2f64).exp()).unwrap() + 2.0).abs() < 1e-13);
    }

    #[test]
    fn residuals_on_log_grid() {
        for k in 0..400 {
            let mag = 10f64.powf(-15.0 + 0.05 * k as f64);
            for x in [mag, -mag.min(1.0 / E)] {
                let w = lambert_w0(x).unwrap();
                assert!((w * w.exp() - x).abs() <= 1e-12 * x.abs(), "W0({x})");
                assert!(w >= -1.0);
                if x < 0.0 {
                    let w = lambert_wm1(x).unwrap();
                    assert!((w * w.exp() - x).abs() <= 1e-12 * x.abs(), "W-1({x})");
                    assert!(w <= -1.0);
                }
            }
        }
    }

    #[test]
    fn band_for_r1() {
        let b = extinction_band(1, 1).unwrap();
        assert!((b.mu1 - 1.857_184).abs() < 1e-5, "{}", b.mu1);
        assert!((b.mu2 - 4.536_403).abs() < 1e-5, "{}", b.mu2);
        assert!(matches!(extinction_band(0, 1), Err(Error::AlwaysExtinct)));
    }

    #[test]
    fn two_routes_to_mu1_agree() {
        for d in 1..=3 {
            for r in 1..=50 {
                let b = extinction_band(r, d).unwrap();
                let t = mu1_minus_one(r, d).unwrap();
                assert!((b.mu1 - 1.0 - t).abs() < 2e-15, "R={r} d={d}");
            }
        }
    }

    #[test]
    fn mutilde_forms_agree() {
        for r in 1..10 {
            for mu in [0.5, 2.0, 5.0, 30.0] {
                let a = mutilde(mu, r, 2).unwrap();
                let b = mutilde_via_phi(mu, r, 2).unwrap();
                assert!((a - b).abs() <= 1e-14 * a.abs());
            }
        }
        assert!((mutilde(5.0, 1, 1).unwrap() - 5.0 * (-5.0f64 / 3.0).exp()).abs() < 1e-15);
    }

    #[test]
    fn bernstein_edges() {
        let p = |w| BernsteinParams { sigma2: 2.0, m: 1.0, w };
        assert_eq!(bernstein_bound(p(0.0)).unwrap(), 1.0);
        assert!(bernstein_bound(p(1.0)).unwrap() > bernstein_bound(p(2.0)).unwrap());
        assert!(bernstein_bound(p(-1.0)).is_err());
        let c = density_concentration(0.1, 0.1, 10, 1).unwrap();
        assert!((c.c - 0.01 / (50.0 + 2.0 / 3.0)).abs() < 1e-18);
    }
}
