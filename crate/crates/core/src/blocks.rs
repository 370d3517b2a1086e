//! Space-time block geometry and detectors for well-started and good blocks,
//! pyramid events, and the block census with oriented-path reachability.
//!
//! Logarithms in the complete-convergence geometry are natural.

use std::io::Write;

use serde::Serialize;

use crate::cml::contraction_constant;
use crate::error::{Error, Result};
use crate::lattice::{window_counts, Boundary, Configuration, LatticeShape};
use crate::profiles::{ceil_int, Profile, RingProfile, WaveShape, XiMinusProfile};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SurvivalBlockGeometry {
    pub radius: u32,
    pub w: f64,
    pub s: f64,
    pub width: i64,
    pub shift: i64,
    pub r_prime_block: i64,
    pub l_prime_block: i64,
    pub l_block: i64,
    pub r_block: i64,
    pub t_block: i64,
    pub r_init: i64,
}

impl SurvivalBlockGeometry {
    pub fn new(wave: &WaveShape) -> Self {
        let half = ceil_int(wave.w * wave.radius as f64 / 2.0);
        let l_prime = 2 * half;
        let l_block = 5 * l_prime;
        SurvivalBlockGeometry {
            radius: wave.radius,
            w: wave.w,
            s: wave.s,
            width: wave.width,
            shift: wave.shift,
            r_prime_block: half,
            l_prime_block: l_prime,
            l_block,
            r_block: l_block / 2,
            t_block: (wave.width + wave.shift - 1) / wave.shift,
            r_init: half,
        }
    }

    /// Spatial reach of the detector's input around its anchor.
    pub fn footprint(&self) -> i64 {
        self.r_block + self.t_block * self.radius as i64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CcBlockGeometry {
    pub radius: u32,
    pub dim: usize,
    pub mu: f64,
    pub eps: f64,
    pub kappa: f64,
    pub c_time: i64,
    pub c_space: i64,
    pub c_dens: i64,
    pub l_prime_block: i64,
    pub l_block: i64,
    pub t_block: i64,
    pub r_prime_block: i64,
    pub r_block: i64,
    pub r_dens: i64,
    pub m0: usize,
    pub r_init: i64,
    pub shift: i64,
    pub log_base: &'static str,
}

impl CcBlockGeometry {
    pub fn new(dim: usize, mu: f64, eps: f64, wave: &WaveShape, m0: usize) -> Result<Self> {
        let radius = wave.radius;
        if radius < 2 {
            return Err(Error::invalid("complete-convergence blocks need R >= 2"));
        }
        let kappa = contraction_constant(mu, eps)?;
        let bound = if kappa > 0.0 { -((dim + 1) as f64) / kappa.ln() } else { 0.0 };
        let c_time = bound.floor() as i64 + 1;
        let c_space = 4 * (1 + c_time);
        let c_dens = 1 + 2 * c_time;
        let r = radius as f64;
        let l_prime = 2 * ceil_int(r * r.ln());
        let r_prime = l_prime / 2;
        let l_block = c_space * l_prime;
        let t_block = c_time * ceil_int(r.ln());
        let r_dens = 2 * c_dens * r_prime;
        let geom = CcBlockGeometry {
            radius,
            dim,
            mu,
            eps,
            kappa,
            c_time,
            c_space,
            c_dens,
            l_prime_block: l_prime,
            l_block,
            t_block,
            r_prime_block: r_prime,
            r_block: l_block / 2,
            r_dens,
            m0,
            r_init: r_dens + m0 as i64 * radius as i64,
            shift: wave.shift,
            log_base: "natural",
        };
        let need = r_prime + t_block * wave.shift + t_block * radius as i64;
        if geom.r_dens <= need {
            return Err(Error::Invariant(format!("R_dens = {} must exceed {need}", geom.r_dens)));
        }
        Ok(geom)
    }

    /// `R'(k) = R'_block + k ceil(sR)`.
    pub fn r_prime_of(&self, k: i64) -> i64 {
        self.r_prime_block + k * self.shift
    }
}

/// `kappa^{T_block} V_{R'(T_block)}^d`.
pub fn contraction_bound(geom: &CcBlockGeometry) -> f64 {
    let side = (2 * geom.r_prime_of(geom.t_block) + 1) as f64;
    geom.kappa.powi(geom.t_block as i32) * side.powi(geom.dim as i32)
}

/// A run stored with its window counts, indexed by absolute time.
#[derive(Clone, Debug)]
pub struct StoredTrajectory {
    shape: LatticeShape,
    radius: u32,
    start: u64,
    vol: f64,
    configs: Vec<Configuration>,
    counts: Vec<Vec<u32>>,
}

impl StoredTrajectory {
    pub fn new(configs: Vec<Configuration>, radius: u32, start: u64) -> Result<Self> {
        let first = configs.first().ok_or_else(|| Error::invalid("empty trajectory"))?;
        let shape = first.shape().clone();
        if configs.iter().any(|c| c.shape() != &shape) {
            return Err(Error::GeometryMismatch("trajectory mixes window shapes".into()));
        }
        let vol = crate::lattice::ball_volume(radius, shape.dim())? as f64;
        let counts = configs.iter().map(|c| window_counts(c, radius)).collect::<Result<_>>()?;
        Ok(StoredTrajectory { shape, radius, start, vol, configs, counts })
    }

    pub fn shape(&self) -> &LatticeShape {
        &self.shape
    }

    pub fn radius(&self) -> u32 {
        self.radius
    }

    pub fn start(&self) -> u64 {
        self.start
    }

    /// Last stored time.
    pub fn end(&self) -> u64 {
        self.start + self.configs.len() as u64 - 1
    }

    pub fn config(&self, t: u64) -> &Configuration {
        &self.configs[(t - self.start) as usize]
    }

    pub fn density(&self, t: u64, site: usize) -> f64 {
        self.counts[(t - self.start) as usize][site] as f64 / self.vol
    }

    fn require_span(&self, t: u64, len: i64) -> Result<()> {
        if t < self.start || t + len as u64 > self.end() {
            return Err(Error::GeometryMismatch(format!(
                "trajectory [{}, {}] does not span [{t}, {}]",
                self.start,
                self.end(),
                t + len as u64
            )));
        }
        Ok(())
    }
}

/// Sites `z + o` for all offsets `o` with `|o| <= r`, failing if the ball
/// does not fit in the window without overlapping itself.
fn anchored_ball(shape: &LatticeShape, z: &[i64], r: i64) -> Result<Vec<(usize, Vec<i64>)>> {
    if z.len() != shape.dim() {
        return Err(Error::GeometryMismatch("anchor dimension differs from the window".into()));
    }
    for (axis, &side) in shape.sides().iter().enumerate() {
        match shape.boundary() {
            Boundary::Periodic => {
                if 2 * r + 1 > side as i64 {
                    return Err(Error::GeometryMismatch(format!(
                        "ball of radius {r} wraps around a torus of side {side}"
                    )));
                }
            }
            Boundary::ZeroPadded => {
                let lo = -((side / 2) as i64);
                let hi = side as i64 - 1 + lo;
                if z[axis] - r < lo || z[axis] + r > hi {
                    return Err(Error::GeometryMismatch(format!("ball of radius {r} at {z:?} leaves the window")));
                }
            }
        }
    }
    let d = shape.dim();
    let mut out = Vec::new();
    let mut o = vec![-r; d];
    let mut y = vec![0i64; d];
    loop {
        for a in 0..d {
            y[a] = z[a] + o[a];
        }
        out.push((shape.index(&y).expect("ball fits"), o.clone()));
        let mut a = d;
        loop {
            if a == 0 {
                return Ok(out);
            }
            a -= 1;
            o[a] += 1;
            if o[a] <= r {
                break;
            }
            o[a] = -r;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailedCondition {
    /// Density leaves the profile band at the anchor time.
    DensityBand,
    /// The two members differ on `B_{R'_block}(z)` at the anchor time.
    CenterAgreement,
    /// The two members differ on `B_{3 R'_block}(z)` at the top of the block.
    TopAgreement,
    /// A neighbour anchor at the top of the block is not well-started.
    NeighbourWellStarted,
    /// The density falls below the propagated profile inside the block.
    Propagation,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockVerdict {
    pub z: Vec<i64>,
    pub t: u64,
    pub well_started: bool,
    pub good: bool,
    /// Offset from `z` and generation within the block of the first violation.
    pub first_violation: Option<(Vec<i64>, i64)>,
    pub failed: Option<FailedCondition>,
}

/// Well-started: `delta_R(x; eta_t) >= xi_0(x - z)` on `|x - z| <= R_block`.
/// Good: the same with `xi_n` at time `t + n` for `n = 0..=T_block`.
pub fn survival_block_check(
    traj: &StoredTrajectory,
    geom: &SurvivalBlockGeometry,
    xi: &XiMinusProfile,
    z: &[i64],
    t: u64,
) -> Result<BlockVerdict> {
    traj.require_span(t, geom.t_block)?;
    if traj.radius() != geom.radius {
        return Err(Error::GeometryMismatch("trajectory and geometry use different R".into()));
    }
    let ball = anchored_ball(traj.shape(), z, geom.r_block)?;
    for n in 0..=geom.t_block {
        let prof = xi.at_generation(n);
        for (site, o) in &ball {
            if traj.density(t + n as u64, *site) < prof.value(o) {
                return Ok(BlockVerdict {
                    z: z.to_vec(),
                    t,
                    well_started: n > 0,
                    good: false,
                    first_violation: Some((o.clone(), n)),
                    failed: Some(if n == 0 { FailedCondition::DensityBand } else { FailedCondition::Propagation }),
                });
            }
        }
    }
    Ok(BlockVerdict { z: z.to_vec(), t, well_started: true, good: true, first_violation: None, failed: None })
}

fn in_band(traj: &StoredTrajectory, zeta: &RingProfile, z: &[i64], t: u64) -> Result<Option<Vec<i64>>> {
    let ball = anchored_ball(traj.shape(), z, zeta.tail.outer_radius())?;
    for (site, o) in &ball {
        let v = traj.density(t, *site);
        if v < zeta.lower(o) || v > zeta.upper(o) {
            return Ok(Some(o.clone()));
        }
    }
    Ok(None)
}

fn agree_on(a: &StoredTrajectory, b: &StoredTrajectory, z: &[i64], r: i64, t: u64) -> Result<Option<Vec<i64>>> {
    let (ca, cb) = (a.config(t), b.config(t));
    for (site, o) in anchored_ball(a.shape(), z, r)? {
        if ca.get(site) != cb.get(site) {
            return Ok(Some(o));
        }
    }
    Ok(None)
}

fn cc_well_started(
    a: &StoredTrajectory,
    b: &StoredTrajectory,
    geom: &CcBlockGeometry,
    zeta: &RingProfile,
    z: &[i64],
    t: u64,
) -> Result<Option<(FailedCondition, Vec<i64>)>> {
    for traj in [a, b] {
        if let Some(o) = in_band(traj, zeta, z, t)? {
            return Ok(Some((FailedCondition::DensityBand, o)));
        }
    }
    if let Some(o) = agree_on(a, b, z, geom.r_prime_block, t)? {
        return Ok(Some((FailedCondition::CenterAgreement, o)));
    }
    Ok(None)
}

fn unit_offsets(dim: usize) -> Vec<Vec<i64>> {
    let mut out = vec![vec![]];
    for _ in 0..dim {
        out = out
            .into_iter()
            .flat_map(|p| {
                (-1..=1).map(move |e| {
                    let mut q = p.clone();
                    q.push(e);
                    q
                })
            })
            .collect();
    }
    out
}

/// Complete-convergence block: well-started at `(z, t)`, agreement on
/// `B_{3R'}(z)` at `t + T`, and well-started at every `z + L' e`, `|e| <= 1`.
pub fn cc_block_check(
    a: &StoredTrajectory,
    b: &StoredTrajectory,
    geom: &CcBlockGeometry,
    zeta: &RingProfile,
    z: &[i64],
    t: u64,
) -> Result<BlockVerdict> {
    if a.shape() != b.shape() || a.radius() != b.radius() {
        return Err(Error::GeometryMismatch("pair members differ in geometry".into()));
    }
    a.require_span(t, geom.t_block)?;
    b.require_span(t, geom.t_block)?;
    let verdict = |well, good, fail: Option<(FailedCondition, Vec<i64>, i64)>| BlockVerdict {
        z: z.to_vec(),
        t,
        well_started: well,
        good,
        first_violation: fail.as_ref().map(|f| (f.1.clone(), f.2)),
        failed: fail.map(|f| f.0),
    };
    if let Some((c, o)) = cc_well_started(a, b, geom, zeta, z, t)? {
        return Ok(verdict(false, false, Some((c, o, 0))));
    }
    let top = t + geom.t_block as u64;
    if let Some(o) = agree_on(a, b, z, 3 * geom.r_prime_block, top)? {
        return Ok(verdict(true, false, Some((FailedCondition::TopAgreement, o, geom.t_block))));
    }
    for e in unit_offsets(z.len()) {
        let zn: Vec<i64> = z.iter().zip(&e).map(|(zi, ei)| zi + geom.l_prime_block * ei).collect();
        if let Some((_, o)) = cc_well_started(a, b, geom, zeta, &zn, top)? {
            let off: Vec<i64> = o.iter().zip(&e).map(|(oi, ei)| oi + geom.l_prime_block * ei).collect();
            return Ok(verdict(true, false, Some((FailedCondition::NeighbourWellStarted, off, geom.t_block))));
        }
    }
    Ok(verdict(true, true, None))
}

/// `|delta_R(x; eta_j) - theta| < eps` for both members, `j = 1..=n`, on
/// `|x - z| <= R'(n) + (n - j) R`.
#[allow(clippy::too_many_arguments)]
pub fn pyramid_check(
    a: &StoredTrajectory,
    b: &StoredTrajectory,
    geom: &CcBlockGeometry,
    eps: f64,
    theta: f64,
    z: &[i64],
    t: u64,
    n: i64,
) -> Result<bool> {
    a.require_span(t, n)?;
    b.require_span(t, n)?;
    let r = geom.radius as i64;
    for j in 1..=n {
        let reach = geom.r_prime_of(n) + (n - j) * r;
        for (site, _) in anchored_ball(a.shape(), z, reach)? {
            for traj in [a, b] {
                if (traj.density(t + j as u64, site) - theta).abs() >= eps {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

pub enum Detector<'a> {
    Survival {
        traj: &'a StoredTrajectory,
        geom: &'a SurvivalBlockGeometry,
        xi: &'a XiMinusProfile,
    },
    CompleteConvergence {
        a: &'a StoredTrajectory,
        b: &'a StoredTrajectory,
        geom: &'a CcBlockGeometry,
        zeta: &'a RingProfile,
    },
}

impl Detector<'_> {
    fn spacing(&self) -> (i64, i64) {
        match self {
            Detector::Survival { geom, .. } => (geom.l_prime_block, geom.t_block),
            Detector::CompleteConvergence { geom, .. } => (geom.l_prime_block, geom.t_block),
        }
    }

    fn shape(&self) -> &LatticeShape {
        match self {
            Detector::Survival { traj, .. } => traj.shape(),
            Detector::CompleteConvergence { a, .. } => a.shape(),
        }
    }

    fn check(&self, z: &[i64], t: u64) -> Result<BlockVerdict> {
        match self {
            Detector::Survival { traj, geom, xi } => survival_block_check(traj, geom, xi, z, t),
            Detector::CompleteConvergence { a, b, geom, zeta } => cc_block_check(a, b, geom, zeta, z, t),
        }
    }
}

/// Anchors `z in spacing Z^d` inside the centered window.
pub fn lattice_anchors(shape: &LatticeShape, spacing: i64) -> Vec<Vec<i64>> {
    let mut out = vec![vec![]];
    for &side in shape.sides() {
        let lo = -((side / 2) as i64);
        let hi = side as i64 - 1 + lo;
        let mut ks = Vec::new();
        let mut k = lo.div_euclid(spacing) * spacing;
        while k <= hi {
            if k >= lo {
                ks.push(k);
            }
            k += spacing;
        }
        out = out
            .into_iter()
            .flat_map(|p| {
                ks.iter().map(move |&c| {
                    let mut q = p.clone();
                    q.push(c);
                    q
                })
            })
            .collect();
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct CensusLayer {
    pub t: u64,
    pub verdicts: Vec<BlockVerdict>,
    pub good_fraction: f64,
    pub well_started_fraction: f64,
    /// Good anchors reachable by an open oriented path from the first layer.
    pub reachable: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct CensusReport {
    pub layers: Vec<CensusLayer>,
    pub path_exists: bool,
}

impl CensusReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let dim = self.layers.first().and_then(|l| l.verdicts.first()).map_or(1, |v| v.z.len());
        let cols: Vec<String> = (1..=dim).map(|i| format!("z{i}")).collect();
        writeln!(w, "t_layer,{},well_started,good", cols.join(","))?;
        for layer in &self.layers {
            for v in &layer.verdicts {
                let zs: Vec<String> = v.z.iter().map(|c| c.to_string()).collect();
                writeln!(w, "{},{},{},{}", layer.t, zs.join(","), v.well_started as u8, v.good as u8)?;
            }
        }
        Ok(())
    }
}

/// Runs the detector on `anchors` at layers `t0 + i T_block`, `i < layers`,
/// and follows open paths with steps of at most `L'_block`.
pub fn block_census(detector: &Detector<'_>, anchors: &[Vec<i64>], t0: u64, layers: usize) -> Result<CensusReport> {
    let (spacing, t_block) = detector.spacing();
    let shape = detector.shape().clone();
    let idx: Vec<usize> = anchors
        .iter()
        .map(|z| shape.index(z).ok_or_else(|| Error::GeometryMismatch(format!("anchor {z:?} outside the window"))))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(layers);
    let mut reach: Vec<bool> = Vec::new();
    for i in 0..layers {
        let t = t0 + (i as i64 * t_block) as u64;
        let verdicts: Vec<BlockVerdict> = anchors.iter().map(|z| detector.check(z, t)).collect::<Result<_>>()?;
        let good: Vec<bool> = verdicts.iter().map(|v| v.good).collect();
        let next_reach: Vec<bool> = if i == 0 {
            good.clone()
        } else {
            (0..anchors.len())
                .map(|k| good[k] && (0..anchors.len()).any(|j| reach[j] && shape.distance(idx[j], idx[k]) <= spacing))
                .collect()
        };
        let n = verdicts.len().max(1) as f64;
        out.push(CensusLayer {
            t,
            good_fraction: good.iter().filter(|&&g| g).count() as f64 / n,
            well_started_fraction: verdicts.iter().filter(|v| v.well_started).count() as f64 / n,
            reachable: next_reach.iter().filter(|&&r| r).count(),
            verdicts,
        });
        reach = next_reach;
    }
    let path_exists = !out.is_empty() && out.last().unwrap().reachable > 0;
    Ok(CensusReport { layers: out, path_exists })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::{build_wave_shape, build_xi_minus};

    #[test]
    fn survival_geometry_numbers() {
        let wave = build_wave_shape(1.1, 16).unwrap();
        let g = SurvivalBlockGeometry::new(&wave);
        assert_eq!(g.r_prime_block, 80);
        assert_eq!(g.l_block, 5 * g.l_prime_block);
        assert_eq!(g.t_block, (160 + g.shift - 1) / g.shift);
    }

    #[test]
    fn cc_geometry_invariant() {
        let wave = build_wave_shape(1.1, 10).unwrap();
        let g = CcBlockGeometry::new(1, 2.0, 0.01, &wave, 5).unwrap();
        assert!(g.c_time as f64 > -2.0 / g.kappa.ln());
        assert!(g.r_dens > g.r_prime_block + g.t_block * (g.shift + 10));
        assert!(contraction_bound(&g) > 0.0);
        assert!(CcBlockGeometry::new(1, 2.0, 0.01, &build_wave_shape(1.1, 1).unwrap(), 5).is_err());
    }

    #[test]
    fn empty_trajectory_is_not_well_started() {
        let wave = build_wave_shape(1.1, 4).unwrap();
        let g = SurvivalBlockGeometry::new(&wave);
        let xi = build_xi_minus(1, &wave, g.r_init.max(9), 0.14, 0).unwrap();
        let shape = LatticeShape::cube(1, 400, Boundary::Periodic).unwrap();
        let configs = vec![Configuration::empty(shape); g.t_block as usize + 1];
        let traj = StoredTrajectory::new(configs, 4, 0).unwrap();
        let v = survival_block_check(&traj, &g, &xi, &[0], 0).unwrap();
        assert!(!v.well_started && !v.good);
    }

    #[test]
    fn anchors_cover_window() {
        let shape = LatticeShape::cube(1, 100, Boundary::Periodic).unwrap();
        let a = lattice_anchors(&shape, 20);
        assert_eq!(a, vec![vec![-40], vec![-20], vec![0], vec![20], vec![40]]);
        assert_eq!(unit_offsets(2).len(), 9);
    }
}
