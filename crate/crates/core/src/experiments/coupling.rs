use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cml::fit_slope;
use crate::dynamics::{coupled_run, CoupledEnsemble, ModelParams, Observers, UpdateRule};
use crate::error::{Error, Result};
use crate::lattice::{Boundary, InitialCondition, LatticeShape};
use crate::rng::{StreamRng, UniformField};

use super::survival::replica_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingSpec {
    pub dim: usize,
    pub side: usize,
    pub boundary: Boundary,
    pub horizon: usize,
    pub replicas: usize,
    pub seed: u64,
    pub first: InitialCondition,
    pub second: InitialCondition,
    /// Radius of the centered window whose coupling time is reported.
    pub window: i64,
}

impl Default for CouplingSpec {
    fn default() -> Self {
        CouplingSpec {
            dim: 1,
            side: 1000,
            boundary: Boundary::Periodic,
            horizon: 500,
            replicas: 100,
            seed: 1,
            first: InitialCondition::SingleSite,
            second: InitialCondition::AllOnes,
            window: 50,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ReplicaCoupling {
    pub replica: usize,
    pub both_survive: bool,
    /// First time from which the pair agrees on the window up to the
    /// horizon; `None` if they still disagree there.
    pub coupling_time: Option<u64>,
    pub final_agree_fraction: f64,
    /// Least-squares slope of the agreed radius, fitted up to saturation.
    pub slope: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CouplingStats {
    pub mu: f64,
    pub radius: u32,
    pub spec: CouplingSpec,
    pub warning: Option<String>,
    pub replicas: Vec<ReplicaCoupling>,
    pub doubly_surviving: usize,
    pub coupled: usize,
    /// Coupled fraction among doubly-surviving replicas.
    pub coupled_fraction: f64,
    pub median_coupling_time: Option<f64>,
    pub positive_slope_fraction: f64,
    pub mean_slope: Option<f64>,
}

impl CouplingStats {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "replica,both_survive,coupling_time,final_agree_fraction,slope")?;
        for r in &self.replicas {
            let ct = r.coupling_time.map_or(String::new(), |t| t.to_string());
            let sl = r.slope.map_or(String::new(), |s| s.to_string());
            writeln!(w, "{},{},{ct},{},{sl}", r.replica, r.both_survive as u8, r.final_agree_fraction)?;
        }
        Ok(())
    }

    pub fn write_ndjson<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.replicas {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Fit over the prefix before the agreed radius first reaches `cap`.
fn cone_slope(agreed: &[i64], cap: i64) -> Option<f64> {
    let end = agreed.iter().position(|&r| r >= cap).map_or(agreed.len(), |k| k + 1);
    let xs: Vec<f64> = (0..end).map(|t| t as f64).collect();
    let ys: Vec<f64> = agreed[..end].iter().map(|&r| r as f64).collect();
    if xs.len() < 3 {
        return None;
    }
    fit_slope(&xs, &ys)
}

pub fn run_coupling_replica(mu: f64, radius: u32, spec: &CouplingSpec, replica: usize) -> Result<ReplicaCoupling> {
    let shape = LatticeShape::cube(spec.dim, spec.side, spec.boundary)?;
    let params = ModelParams::new(mu, radius, shape.clone())?;
    let seed = replica_seed(spec.seed, mu, radius, replica);
    let a = spec.first.build(&shape, &mut StreamRng::new(seed, 1))?;
    let b = spec.second.build(&shape, &mut StreamRng::new(seed, 2))?;
    let mut ens = CoupledEnsemble::new(params, UniformField::new(seed));
    ens.add_member("first", a, UpdateRule::Phi)?;
    ens.add_member("second", b, UpdateRule::Phi)?;
    let obs = Observers { pairs: vec![(0, 1)], windows: vec![spec.window], ..Observers::default() };
    let rep = coupled_run(&mut ens, spec.horizon, &obs)?;
    let agree: Vec<f64> = rep.records.iter().map(|r| r.agreement[0].agree_fraction).collect();
    let last_bad = agree.iter().rposition(|&f| f < 1.0);
    let coupling_time = match last_bad {
        None => Some(0),
        Some(k) if k + 1 == agree.len() => None,
        Some(k) => Some(rep.records[k + 1].t),
    };
    let agreed: Vec<i64> = rep.records.iter().map(|r| r.agreed_radius[0]).collect();
    let last = rep.records.last().unwrap();
    Ok(ReplicaCoupling {
        replica,
        both_survive: last.members.iter().all(|m| m.count > 0),
        coupling_time,
        final_agree_fraction: *agree.last().unwrap(),
        slope: cone_slope(&agreed, shape.max_centered_radius()),
    })
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

pub fn coupling_experiment(mu: f64, radius: u32, spec: &CouplingSpec) -> Result<CouplingStats> {
    if spec.horizon == 0 || spec.replicas == 0 {
        return Err(Error::invalid("horizon and replicas must be positive"));
    }
    let warning = (!(mu > 1.0 && mu < std::f64::consts::E.powi(2)))
        .then(|| format!("mu = {mu} is outside (1, e^2); coupling is not expected"));
    let replicas: Vec<ReplicaCoupling> =
        (0..spec.replicas).into_par_iter().map(|r| run_coupling_replica(mu, radius, spec, r)).collect::<Result<_>>()?;
    let surv: Vec<&ReplicaCoupling> = replicas.iter().filter(|r| r.both_survive).collect();
    let coupled = surv.iter().filter(|r| r.coupling_time.is_some()).count();
    let times: Vec<f64> = surv.iter().filter_map(|r| r.coupling_time.map(|t| t as f64)).collect();
    let slopes: Vec<f64> = surv.iter().filter_map(|r| r.slope).collect();
    let n = surv.len();
    Ok(CouplingStats {
        mu,
        radius,
        spec: spec.clone(),
        warning,
        doubly_surviving: n,
        coupled,
        coupled_fraction: if n == 0 { 0.0 } else { coupled as f64 / n as f64 },
        median_coupling_time: median(times),
        positive_slope_fraction: if n == 0 {
            0.0
        } else {
            slopes.iter().filter(|&&s| s > 0.0).count() as f64 / n as f64
        },
        mean_slope: (!slopes.is_empty()).then(|| slopes.iter().sum::<f64>() / slopes.len() as f64),
        replicas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_pair_couples_at_zero() {
        let spec = CouplingSpec {
            side: 200,
            horizon: 30,
            replicas: 4,
            second: InitialCondition::SingleSite,
            ..CouplingSpec::default()
        };
        let st = coupling_experiment(2.0, 5, &spec).unwrap();
        assert!(st.replicas.iter().all(|r| r.coupling_time == Some(0)));
    }

    #[test]
    fn median_and_slope_helpers() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(vec![4.0, 1.0]), Some(2.5));
        let agreed: Vec<i64> = (0..10).map(|t| 2 * t).chain([20; 5]).collect();
        assert!((cone_slope(&agreed, 20).unwrap() - 2.0).abs() < 1e-12);
    }
}
