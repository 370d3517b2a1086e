use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::blocks::SurvivalBlockGeometry;
use crate::cml::{cml_run, fit_slope, theta, CmlOptions, CmlReport};
use crate::error::{Error, Result};
use crate::lattice::{Boundary, DensityField, LatticeShape};
use crate::profiles::build_wave_shape;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CmlStart {
    /// `value` at the origin, zero elsewhere.
    Point {
        value: f64,
    },
    Constant {
        value: f64,
    },
    /// The fixpoint `theta_mu` everywhere.
    Fixpoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CmlFrontSpec {
    pub dim: usize,
    /// Half-width of the periodic window; the side is `2 window + 1`.
    pub window: usize,
    pub steps: usize,
    pub tol: f64,
    pub start: CmlStart,
    /// Radii of the centered balls on which sup-distances are tracked.
    pub probes: Vec<i64>,
    /// Growth factor of the wave shape used for the comparison speed.
    pub wave_a: f64,
}

impl Default for CmlFrontSpec {
    fn default() -> Self {
        CmlFrontSpec {
            dim: 1,
            window: 200,
            steps: 10_000,
            tol: 1e-6,
            start: CmlStart::Point { value: 0.01 },
            probes: vec![50],
            wave_a: 1.1,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CmlFrontReport {
    pub mu: f64,
    pub radius: u32,
    pub spec: CmlFrontSpec,
    pub report: CmlReport,
    /// Per probe radius: first `n` with sup-distance below `tol`.
    pub first_within: Vec<Option<usize>>,
    /// Sites per step, fitted while `0 <= front < window`.
    pub speed: Option<f64>,
    /// `ceil(sR) / T_block` of the wave-shape construction.
    pub profile_speed: f64,
}

impl CmlFrontReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let heads: Vec<String> = self.spec.probes.iter().map(|r| format!("sup_dist_r{r}")).collect();
        writeln!(w, "n,front,{}", heads.join(","))?;
        for (n, (f, d)) in self.report.front.iter().zip(&self.report.sup_dist).enumerate() {
            let ds: Vec<String> = d.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{n},{f},{}", ds.join(","))?;
        }
        Ok(())
    }
}

pub fn cml_front_experiment(mu: f64, radius: u32, spec: &CmlFrontSpec) -> Result<CmlFrontReport> {
    let th = theta(mu)?;
    if mu >= std::f64::consts::E.powi(2) {
        return Err(Error::invalid(format!("mu = {mu} outside (1, e^2)")));
    }
    if spec.window == 0 || spec.steps == 0 {
        return Err(Error::invalid("window and steps must be positive"));
    }
    let shape = LatticeShape::cube(spec.dim, 2 * spec.window + 1, Boundary::Periodic)?;
    let xi0 = match spec.start {
        CmlStart::Point { value } => {
            let mut f = DensityField::constant(shape.clone(), 0.0);
            f.values_mut()[shape.origin()] = value;
            f
        }
        CmlStart::Constant { value } => DensityField::constant(shape.clone(), value),
        CmlStart::Fixpoint => DensityField::constant(shape.clone(), th),
    };
    let opts =
        CmlOptions { mu, radius, steps: spec.steps, tol: spec.tol, windows: spec.probes.clone(), record_every: 0 };
    let run = cml_run(&xi0, &opts)?;
    let report = run.report;
    let first_within = (0..spec.probes.len()).map(|k| report.sup_dist.iter().position(|d| d[k] < spec.tol)).collect();
    let cap = shape.max_centered_radius();
    let (xs, ys): (Vec<f64>, Vec<f64>) =
        report.front.iter().enumerate().filter(|(_, &f)| f >= 0 && f < cap).map(|(n, &f)| (n as f64, f as f64)).unzip();
    let wave = build_wave_shape(spec.wave_a, radius)?;
    let geom = SurvivalBlockGeometry::new(&wave);
    Ok(CmlFrontReport {
        mu,
        radius,
        spec: spec.clone(),
        first_within,
        speed: fit_slope(&xs, &ys),
        profile_speed: wave.shift as f64 / geom.t_block as f64,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixpoint_start_is_settled() {
        let spec =
            CmlFrontSpec { window: 30, steps: 5, start: CmlStart::Fixpoint, probes: vec![10], ..Default::default() };
        let r = cml_front_experiment(2.0, 3, &spec).unwrap();
        assert_eq!(r.report.front[0], 30);
        assert_eq!(r.first_within, vec![Some(0)]);
    }

    #[test]
    fn point_mass_spreads() {
        let spec = CmlFrontSpec { window: 60, steps: 400, probes: vec![10], ..Default::default() };
        let r = cml_front_experiment(2.0, 3, &spec).unwrap();
        assert!(r.speed.unwrap() > 0.0);
        assert!(r.first_within[0].is_some());
        assert!(r.profile_speed > 0.0);
    }
}
