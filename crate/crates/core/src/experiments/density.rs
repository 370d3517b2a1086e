use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cml::theta;
use crate::dynamics::{step_with, ModelParams};
use crate::error::{Error, Result};
use crate::lattice::{window_counts, Boundary, InitialCondition, LatticeShape};
use crate::rng::{StreamRng, UniformField};

use super::survival::replica_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensitySpec {
    pub dim: usize,
    pub side: usize,
    pub boundary: Boundary,
    pub horizon: usize,
    pub replicas: usize,
    pub seed: u64,
    pub init: InitialCondition,
    /// Probe coordinates (centered).
    pub probes: Vec<Vec<i64>>,
    pub eps: f64,
}

impl Default for DensitySpec {
    fn default() -> Self {
        DensitySpec {
            dim: 1,
            side: 1000,
            boundary: Boundary::Periodic,
            horizon: 500,
            replicas: 1,
            seed: 1,
            init: InitialCondition::AllOnes,
            probes: vec![vec![0]],
            eps: 0.1,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeSummary {
    pub replica: usize,
    pub probe: Vec<i64>,
    pub survived: bool,
    /// Mean of `delta_R` over `t in [horizon/2, horizon]`.
    pub time_average: f64,
    /// Fraction of those steps with `|delta_R - theta| < eps`.
    pub close_fraction: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DensitySeries {
    pub mu: f64,
    pub radius: u32,
    pub theta: f64,
    pub spec: DensitySpec,
    /// `values[replica][probe][t]`, `t = 0..=horizon`.
    pub values: Vec<Vec<Vec<f64>>>,
    pub summaries: Vec<ProbeSummary>,
}

impl DensitySeries {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "replica,probe,t,density")?;
        for (r, per) in self.values.iter().enumerate() {
            for (p, ts) in per.iter().enumerate() {
                for (t, v) in ts.iter().enumerate() {
                    writeln!(w, "{r},{p},{t},{v}")?;
                }
            }
        }
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "replica,probe,survived,time_average,close_fraction")?;
        for s in &self.summaries {
            let coords: Vec<String> = s.probe.iter().map(|c| c.to_string()).collect();
            writeln!(
                w,
                "{},{},{},{},{}",
                s.replica,
                coords.join(" "),
                s.survived as u8,
                s.time_average,
                s.close_fraction
            )?;
        }
        Ok(())
    }

    pub fn write_ndjson<W: Write>(&self, mut w: W) -> Result<()> {
        for s in &self.summaries {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn run_one(mu: f64, radius: u32, spec: &DensitySpec, sites: &[usize], replica: usize) -> Result<(Vec<Vec<f64>>, bool)> {
    let shape = LatticeShape::cube(spec.dim, spec.side, spec.boundary)?;
    let params = ModelParams::new(mu, radius, shape.clone())?;
    let table = params.phi_table();
    let vol = params.volume() as f64;
    let seed = replica_seed(spec.seed, mu, radius, replica);
    let field = UniformField::new(seed);
    let mut cfg = spec.init.build(&shape, &mut StreamRng::new(seed, 1))?;
    let mut out = vec![Vec::with_capacity(spec.horizon + 1); sites.len()];
    for n in 0..=spec.horizon as u64 {
        if cfg.is_extinct() {
            for s in out.iter_mut() {
                s.push(0.0);
            }
        } else {
            let counts = window_counts(&cfg, radius)?;
            for (s, &i) in out.iter_mut().zip(sites) {
                s.push(counts[i] as f64 / vol);
            }
        }
        if n < spec.horizon as u64 && !cfg.is_extinct() {
            cfg = step_with(&cfg, radius, &table, &mut field.row(n + 1, shape.len()))?;
        }
    }
    Ok((out, !cfg.is_extinct()))
}

pub fn density_timeseries(mu: f64, radius: u32, spec: &DensitySpec) -> Result<DensitySeries> {
    if spec.horizon == 0 || spec.replicas == 0 || spec.probes.is_empty() {
        return Err(Error::invalid("density run needs a positive horizon, replicas and at least one probe"));
    }
    let shape = LatticeShape::cube(spec.dim, spec.side, spec.boundary)?;
    let sites: Vec<usize> = spec
        .probes
        .iter()
        .map(|p| {
            if p.len() != spec.dim {
                return Err(Error::invalid(format!("probe {p:?} has the wrong dimension")));
            }
            shape.index(p).ok_or_else(|| Error::invalid(format!("probe {p:?} outside the lattice")))
        })
        .collect::<Result<_>>()?;
    let th = theta(mu).unwrap_or(0.0);
    let runs: Vec<(Vec<Vec<f64>>, bool)> =
        (0..spec.replicas).into_par_iter().map(|r| run_one(mu, radius, spec, &sites, r)).collect::<Result<_>>()?;
    let start = spec.horizon / 2;
    let mut summaries = Vec::new();
    for (r, (per, survived)) in runs.iter().enumerate() {
        for (p, ts) in per.iter().enumerate() {
            let tail = &ts[start..];
            let n = tail.len() as f64;
            summaries.push(ProbeSummary {
                replica: r,
                probe: spec.probes[p].clone(),
                survived: *survived,
                time_average: tail.iter().sum::<f64>() / n,
                close_fraction: tail.iter().filter(|&&v| (v - th).abs() < spec.eps).count() as f64 / n,
            });
        }
    }
    Ok(DensitySeries {
        mu,
        radius,
        theta: th,
        spec: spec.clone(),
        values: runs.into_iter().map(|r| r.0).collect(),
        summaries,
    })
}
