//! Oriented site percolation on a shared uniform field (exploratory).
//!
//! A site is open at time `n + 1` iff its coin `U(x, n + 1) <= p` is open and
//! it has an open parent within sup-distance `R` at time `n`. The space window
//! is a zero-padded box of side `window`, run for `window` steps from a fully
//! open bottom row. Because every `p` reads the same field, crossing is
//! monotone in `p` replica by replica.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{window_counts, Boundary, Configuration, LatticeShape};
use crate::rng::{derive_seed, SiteUniforms, UniformField};

use super::survival::SurvivalEstimate;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PercolationSpec {
    pub dim: usize,
    pub radius: u32,
    pub ps: Vec<f64>,
    pub windows: Vec<usize>,
    pub replicas: usize,
    pub seed: u64,
}

impl Default for PercolationSpec {
    fn default() -> Self {
        PercolationSpec {
            dim: 1,
            radius: 1,
            ps: super::survival::grid(0.0, 1.0, 0.05),
            windows: vec![50, 100, 200],
            replicas: 100,
            seed: 1,
        }
    }
}

/// Whether the open cluster of the bottom row reaches height `window`.
pub fn crosses(dim: usize, radius: u32, window: usize, p: f64, field: &UniformField) -> Result<bool> {
    let shape = LatticeShape::cube(dim, window, Boundary::ZeroPadded)?;
    let mut cfg = Configuration::all_ones(shape.clone());
    for n in 0..window as u64 {
        let counts = window_counts(&cfg, radius)?;
        let mut row = field.row(n + 1, shape.len());
        row.expect(counts.iter().filter(|&&c| c > 0).count());
        let bits = counts.iter().enumerate().map(|(i, &c)| (c > 0 && row.uniform(i) <= p) as u8).collect();
        cfg = Configuration::from_bits(shape.clone(), bits)?;
        if cfg.is_extinct() {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Clone, Debug, Serialize)]
pub struct CrossingCurve {
    pub window: usize,
    pub ps: Vec<f64>,
    pub estimates: Vec<SurvivalEstimate>,
    pub p_c: Option<f64>,
    /// Crossings of the Wilson upper and lower curves through 1/2.
    pub p_c_lo: Option<f64>,
    pub p_c_hi: Option<f64>,
    /// `V^d p_c`.
    pub scaled: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PercolationReport {
    pub spec: PercolationSpec,
    pub curves: Vec<CrossingCurve>,
}

impl PercolationReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "window,p,crossed,replicas,proportion,wilson_lo,wilson_hi")?;
        for c in &self.curves {
            for (p, e) in c.ps.iter().zip(&c.estimates) {
                writeln!(
                    w,
                    "{},{p},{},{},{},{},{}",
                    c.window, e.survived, e.replicas, e.proportion, e.wilson_lo, e.wilson_hi
                )?;
            }
        }
        Ok(())
    }

    pub fn write_estimates_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "d,R,window,p_c,p_c_lo,p_c_hi,scaled")?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for c in &self.curves {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                self.spec.dim,
                self.spec.radius,
                c.window,
                opt(c.p_c),
                opt(c.p_c_lo),
                opt(c.p_c_hi),
                opt(c.scaled)
            )?;
        }
        Ok(())
    }
}

/// First upward crossing of `level` by the piecewise-linear curve.
pub fn interpolate_crossing(xs: &[f64], ys: &[f64], level: f64) -> Option<f64> {
    if ys.first().is_some_and(|&y| y >= level) {
        return xs.first().copied();
    }
    for i in 1..xs.len() {
        let (y0, y1) = (ys[i - 1], ys[i]);
        if y0 < level && y1 >= level {
            return Some(xs[i - 1] + (level - y0) / (y1 - y0) * (xs[i] - xs[i - 1]));
        }
    }
    None
}

pub fn percolation_threshold(spec: &PercolationSpec) -> Result<PercolationReport> {
    if spec.ps.is_empty() || spec.windows.is_empty() || spec.replicas == 0 {
        return Err(Error::invalid("percolation needs p values, windows and replicas"));
    }
    if spec.ps.windows(2).any(|w| w[0] >= w[1]) || spec.ps.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::invalid("p grid must be strictly increasing within [0, 1]"));
    }
    let vol = (2.0 * spec.radius as f64 + 1.0).powi(spec.dim as i32);
    let mut curves = Vec::new();
    for &window in &spec.windows {
        let hits: Vec<Vec<bool>> = (0..spec.replicas)
            .into_par_iter()
            .map(|r| {
                let field = UniformField::new(derive_seed(spec.seed, &[spec.radius as u64, window as u64, r as u64]));
                spec.ps.iter().map(|&p| crosses(spec.dim, spec.radius, window, p, &field)).collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let estimates: Vec<SurvivalEstimate> = (0..spec.ps.len())
            .map(|k| SurvivalEstimate::from_counts(hits.iter().filter(|h| h[k]).count(), spec.replicas))
            .collect();
        let prop: Vec<f64> = estimates.iter().map(|e| e.proportion).collect();
        let lo: Vec<f64> = estimates.iter().map(|e| e.wilson_lo).collect();
        let hi: Vec<f64> = estimates.iter().map(|e| e.wilson_hi).collect();
        let p_c = interpolate_crossing(&spec.ps, &prop, 0.5);
        curves.push(CrossingCurve {
            window,
            ps: spec.ps.clone(),
            p_c,
            p_c_lo: interpolate_crossing(&spec.ps, &hi, 0.5),
            p_c_hi: interpolate_crossing(&spec.ps, &lo, 0.5),
            scaled: p_c.map(|p| p * vol),
            estimates,
        });
    }
    Ok(PercolationReport { spec: spec.clone(), curves })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_p() {
        let f = UniformField::new(3);
        assert!(crosses(1, 1, 40, 1.0, &f).unwrap());
        assert!(!crosses(1, 1, 40, 0.0, &f).unwrap());
    }

    #[test]
    fn monotone_in_p() {
        let spec = PercolationSpec {
            ps: super::super::survival::grid(0.0, 1.0, 0.1),
            windows: vec![30],
            replicas: 20,
            ..Default::default()
        };
        let rep = percolation_threshold(&spec).unwrap();
        let e = &rep.curves[0].estimates;
        assert!(e.windows(2).all(|w| w[0].survived <= w[1].survived));
        assert_eq!(e[0].survived, 0);
        assert_eq!(e.last().unwrap().survived, 20);
        let pc = rep.curves[0].p_c.unwrap();
        assert!(pc > 0.2 && pc < 1.0);
    }

    #[test]
    fn interpolation() {
        let xs = [0.0, 0.5, 1.0];
        assert_eq!(interpolate_crossing(&xs, &[0.0, 0.25, 0.75], 0.5), Some(0.75));
        assert_eq!(interpolate_crossing(&xs, &[0.0, 0.1, 0.2], 0.5), None);
    }
}
