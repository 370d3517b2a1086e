use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{step_with, ModelParams};
use crate::error::{Error, Result};
use crate::lattice::{Boundary, InitialCondition, LatticeShape};
use crate::rng::{derive_seed, StreamRng, UniformField};
use crate::thresholds::{extinction_band, ExtinctionBand};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalSpec {
    pub dim: usize,
    pub side: usize,
    pub boundary: Boundary,
    pub generations: usize,
    pub replicas: usize,
    pub init: InitialCondition,
    pub seed: u64,
}

impl Default for SurvivalSpec {
    fn default() -> Self {
        SurvivalSpec {
            dim: 1,
            side: 1000,
            boundary: Boundary::Periodic,
            generations: 250,
            replicas: 200,
            init: InitialCondition::SingleSite,
            seed: 1,
        }
    }
}

impl SurvivalSpec {
    fn validate(&self) -> Result<()> {
        if self.generations == 0 || self.replicas == 0 {
            return Err(Error::invalid("generations and replicas must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalEstimate {
    pub survived: usize,
    pub replicas: usize,
    pub proportion: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
}

impl SurvivalEstimate {
    pub fn from_counts(survived: usize, replicas: usize) -> Self {
        let (wilson_lo, wilson_hi) = wilson_interval(survived, replicas);
        SurvivalEstimate { survived, replicas, proportion: survived as f64 / replicas as f64, wilson_lo, wilson_hi }
    }
}

/// Wilson score interval at 95%.
pub fn wilson_interval(k: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054;
    let n = n as f64;
    let p = k as f64 / n;
    let denom = 1.0 + z * z / n;
    let center = (p + z * z / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt();
    let lo = if k == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if k as f64 == n { 1.0 } else { (center + half).min(1.0) };
    (lo.min(p), hi.max(p))
}

/// Seed of the uniform field used by one replica of one `(mu, R)` cell.
pub fn replica_seed(seed: u64, mu: f64, radius: u32, replica: usize) -> u64 {
    derive_seed(seed, &[mu.to_bits(), radius as u64, replica as u64])
}

/// Runs one replica to the horizon (or extinction); returns the final
/// particle count.
pub fn run_replica(mu: f64, radius: u32, spec: &SurvivalSpec, replica: usize) -> Result<usize> {
    let shape = LatticeShape::cube(spec.dim, spec.side, spec.boundary)?;
    let params = ModelParams::new(mu, radius, shape.clone())?;
    let table = params.phi_table();
    let seed = replica_seed(spec.seed, mu, radius, replica);
    let field = UniformField::new(seed);
    let mut cfg = spec.init.build(&shape, &mut StreamRng::new(seed, 1))?;
    for n in 0..spec.generations as u64 {
        if cfg.is_extinct() {
            return Ok(0);
        }
        cfg = step_with(&cfg, radius, &table, &mut field.row(n + 1, shape.len()))?;
    }
    Ok(cfg.count())
}

/// Fraction of replicas still alive at generation `spec.generations`.
pub fn estimate_survival(mu: f64, radius: u32, spec: &SurvivalSpec) -> Result<SurvivalEstimate> {
    spec.validate()?;
    let alive: Vec<bool> = (0..spec.replicas)
        .into_par_iter()
        .map(|r| run_replica(mu, radius, spec, r).map(|c| c > 0))
        .collect::<Result<_>>()?;
    Ok(SurvivalEstimate::from_counts(alive.iter().filter(|&&a| a).count(), spec.replicas))
}

/// Inclusive arithmetic grid, rounded to 12 decimals to avoid drift.
pub fn grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseDiagramSpec {
    pub mus: Vec<f64>,
    pub radii: Vec<u32>,
    #[serde(flatten)]
    pub run: SurvivalSpec,
}

impl PhaseDiagramSpec {
    /// The full desk-scale grid: `mu` in `[1, 8]` step 0.25, `R` in `1..=16`.
    pub fn full() -> Self {
        PhaseDiagramSpec { mus: grid(1.0, 8.0, 0.25), radii: (1..=16).collect(), run: SurvivalSpec::default() }
    }

    /// Reduced grid: `mu` step 1, `R` in `{1, 2, 8, 16}`, 50 replicas.
    pub fn smoke() -> Self {
        PhaseDiagramSpec {
            mus: grid(1.0, 8.0, 1.0),
            radii: vec![1, 2, 8, 16],
            run: SurvivalSpec { replicas: 50, ..SurvivalSpec::default() },
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PhaseDiagram {
    pub mus: Vec<f64>,
    pub radii: Vec<u32>,
    /// `cells[i][j]` is radius `radii[i]`, mean `mus[j]`.
    pub cells: Vec<Vec<SurvivalEstimate>>,
    pub bands: Vec<ExtinctionBand>,
}

pub fn phase_diagram(spec: &PhaseDiagramSpec) -> Result<PhaseDiagram> {
    if spec.mus.is_empty() || spec.radii.is_empty() {
        return Err(Error::invalid("phase diagram grids must be nonempty"));
    }
    if spec.radii.contains(&0) {
        return Err(Error::invalid("phase diagram radii must be positive"));
    }
    let mut cells = Vec::with_capacity(spec.radii.len());
    let mut bands = Vec::with_capacity(spec.radii.len());
    for &r in &spec.radii {
        bands.push(extinction_band(r, spec.run.dim)?);
        let row = spec.mus.iter().map(|&mu| estimate_survival(mu, r, &spec.run)).collect::<Result<_>>()?;
        cells.push(row);
    }
    Ok(PhaseDiagram { mus: spec.mus.clone(), radii: spec.radii.clone(), cells, bands })
}

impl PhaseDiagram {
    pub fn proportion(&self, i: usize, j: usize) -> f64 {
        self.cells[i][j].proportion
    }

    /// Largest survival proportion among cells whose mean lies outside the band.
    pub fn max_outside_band(&self) -> f64 {
        let mut best = 0.0f64;
        for (i, band) in self.bands.iter().enumerate() {
            for (j, &mu) in self.mus.iter().enumerate() {
                if !band.contains(mu) {
                    best = best.max(self.proportion(i, j));
                }
            }
        }
        best
    }

    pub fn max_in_rows(&self, rows: &[u32]) -> f64 {
        let mut best = 0.0f64;
        for (i, r) in self.radii.iter().enumerate() {
            if rows.contains(r) {
                for j in 0..self.mus.len() {
                    best = best.max(self.proportion(i, j));
                }
            }
        }
        best
    }

    /// Rows with `R >= r_min` each have a nonempty, contiguous run of
    /// majority-surviving cells, and consecutive rows' runs overlap.
    pub fn surviving_region_contiguous(&self, r_min: u32) -> bool {
        let mut prev: Option<(usize, usize)> = None;
        let mut any = false;
        for (i, &r) in self.radii.iter().enumerate() {
            if r < r_min {
                continue;
            }
            any = true;
            let alive: Vec<usize> = (0..self.mus.len()).filter(|&j| self.proportion(i, j) >= 0.5).collect();
            let (Some(&lo), Some(&hi)) = (alive.first(), alive.last()) else {
                return false;
            };
            if hi - lo + 1 != alive.len() {
                return false;
            }
            if let Some((plo, phi)) = prev {
                if hi < plo || lo > phi {
                    return false;
                }
            }
            prev = Some((lo, hi));
        }
        any
    }

    pub fn write_matrix_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let head: Vec<String> = self.mus.iter().map(|m| format!("mu={m}")).collect();
        writeln!(w, "R,{}", head.join(","))?;
        for (i, r) in self.radii.iter().enumerate() {
            let row: Vec<String> = self.cells[i].iter().map(|c| format!("{}", c.proportion)).collect();
            writeln!(w, "{r},{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn write_cells_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "R,mu,survived,replicas,proportion,wilson_lo,wilson_hi,in_band")?;
        for (i, r) in self.radii.iter().enumerate() {
            for (j, mu) in self.mus.iter().enumerate() {
                let c = &self.cells[i][j];
                writeln!(
                    w,
                    "{r},{mu},{},{},{},{},{},{}",
                    c.survived,
                    c.replicas,
                    c.proportion,
                    c.wilson_lo,
                    c.wilson_hi,
                    self.bands[i].contains(*mu) as u8
                )?;
            }
        }
        Ok(())
    }

    pub fn write_band_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "R,d,mu1,mu2")?;
        for b in &self.bands {
            writeln!(w, "{},{},{},{}", b.radius, b.dim, b.mu1, b.mu2)?;
        }
        Ok(())
    }

    /// Grey-scale heat map: one pixel per cell, largest `R` on top.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> Result<()> {
        let (wd, ht) = (self.mus.len(), self.radii.len());
        write!(w, "P5\n# barw phase diagram: rows R descending, columns mu ascending\n{wd} {ht}\n255\n")?;
        let mut bytes = Vec::with_capacity(wd * ht);
        for i in (0..ht).rev() {
            for j in 0..wd {
                bytes.push((self.proportion(i, j) * 255.0).round() as u8);
            }
        }
        w.write_all(&bytes)?;
        Ok(())
    }
}
