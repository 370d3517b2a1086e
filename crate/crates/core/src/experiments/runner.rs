//! Experiment configs, the run manifest and reruns from a manifest.
//!
//! `run_experiment` writes `manifest.json` before any output, then the
//! outputs, then rewrites the manifest with their SHA-256 digests. Outputs are
//! a pure function of the config, so a rerun must reproduce the digests.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::blocks::{
    block_census, lattice_anchors, CcBlockGeometry, Detector, StoredTrajectory, SurvivalBlockGeometry,
};
use crate::cml::{bracket_sequences, default_contraction_eps};
use crate::dynamics::{particle_step, pca_step, ModelParams, PsiSpec};
use crate::error::{Error, Result};
use crate::lattice::{Boundary, Configuration, InitialCondition, LatticeShape};
use crate::profiles::{
    build_wave_shape, build_xi_minus, build_zeta_profiles, verify_density_domination, verify_profile_pair,
    verify_xi_growth, write_profile_csv, Arithmetic, ConstantProfile, ProfileMap, ProfilePair, UpperCheck,
};
use crate::rng::{StreamRng, UniformField, GENERATOR_FAMILY, GENERATOR_VERSION, KEY_LAYOUT_VERSION};
use crate::thresholds::{threshold_table, write_threshold_csv};

use super::cml_front::{cml_front_experiment, CmlFrontSpec};
use super::coupling::{coupling_experiment, CouplingSpec};
use super::density::{density_timeseries, DensitySpec};
use super::percolation::{percolation_threshold, PercolationSpec};
use super::survival::{estimate_survival, phase_diagram, replica_seed, PhaseDiagramSpec, SurvivalSpec};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Ndjson,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dynamics {
    #[default]
    Pca,
    Particle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulateSpec {
    pub mu: f64,
    pub radius: u32,
    pub dim: usize,
    pub side: usize,
    pub boundary: Boundary,
    pub generations: usize,
    pub seed: u64,
    pub init: InitialCondition,
    #[serde(default)]
    pub dynamics: Dynamics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalTransition {
    pub a_tilde: f64,
    pub b: f64,
    pub generation: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZetaTransition {
    pub mu: f64,
    pub alpha1: f64,
    pub beta1: f64,
    pub bracket_eps: f64,
    pub k: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfilesVerifySpec {
    pub a: f64,
    pub radius: u32,
    pub dim: usize,
    pub arithmetic: Arithmetic,
    pub survival: Option<SurvivalTransition>,
    pub zeta: Option<ZetaTransition>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CensusKind {
    /// Survival blocks against `xi_0` with plateau height `b`.
    Survival { b: f64 },
    /// Complete-convergence blocks for the pair `(init, second)`.
    CompleteConvergence { second: InitialCondition, alpha1: f64, beta1: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlocksCensusSpec {
    pub mu: f64,
    pub radius: u32,
    pub dim: usize,
    pub side: usize,
    pub boundary: Boundary,
    pub seed: u64,
    pub init: InitialCondition,
    pub a: f64,
    pub t0: u64,
    pub layers: usize,
    pub detector: CensusKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "kebab-case")]
pub enum Experiment {
    Simulate(SimulateSpec),
    PhaseDiagram(PhaseDiagramSpec),
    Survival { mu: f64, radius: u32, spec: SurvivalSpec },
    Couple { mu: f64, radius: u32, spec: CouplingSpec },
    Density { mu: f64, radius: u32, spec: DensitySpec },
    Cml { mu: f64, radius: u32, spec: CmlFrontSpec },
    Thresholds { dim: usize, r_min: u32, r_max: u32 },
    ProfilesVerify(ProfilesVerifySpec),
    BlocksCensus(BlocksCensusSpec),
    Percolation(PercolationSpec),
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Simulate(_) => "simulate",
            Experiment::PhaseDiagram(_) => "phase-diagram",
            Experiment::Survival { .. } => "survival",
            Experiment::Couple { .. } => "couple",
            Experiment::Density { .. } => "density",
            Experiment::Cml { .. } => "cml",
            Experiment::Thresholds { .. } => "thresholds",
            Experiment::ProfilesVerify(_) => "profiles-verify",
            Experiment::BlocksCensus(_) => "blocks-census",
            Experiment::Percolation(_) => "percolation",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Experiment::Simulate(s) => Some(s.seed),
            Experiment::PhaseDiagram(s) => Some(s.run.seed),
            Experiment::Survival { spec, .. } => Some(spec.seed),
            Experiment::Couple { spec, .. } => Some(spec.seed),
            Experiment::Density { spec, .. } => Some(spec.seed),
            Experiment::BlocksCensus(s) => Some(s.seed),
            Experiment::Percolation(s) => Some(s.seed),
            Experiment::Cml { .. } | Experiment::Thresholds { .. } | Experiment::ProfilesVerify(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub format: OutputFormat,
    pub experiment: Experiment,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorInfo {
    pub family: String,
    pub version: String,
    pub key_layout: String,
}

impl GeneratorInfo {
    pub fn current() -> Self {
        GeneratorInfo {
            family: GENERATOR_FAMILY.into(),
            version: GENERATOR_VERSION.into(),
            key_layout: KEY_LAYOUT_VERSION.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputDigest {
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: String,
    pub config: RunConfig,
    pub seed: Option<u64>,
    pub generator: GeneratorInfo,
    pub code_version: String,
    pub log_base: String,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub outputs: Vec<OutputDigest>,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        fs::write(dir.join("manifest.json"), bytes)?;
        Ok(())
    }
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Named output buffers, written after the run in insertion order.
#[derive(Default)]
struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    fn add(&mut self, name: impl Into<String>, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.files.push((name.into(), buf));
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, v: &T) -> Result<()> {
        self.add(name, |b| {
            serde_json::to_writer_pretty(&mut *b, v)?;
            b.push(b'\n');
            Ok(())
        })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Runs `cfg`, writing `manifest.json` and the outputs into `out_dir`.
pub fn run_experiment(cfg: &RunConfig, out_dir: &Path) -> Result<RunManifest> {
    fs::create_dir_all(out_dir)?;
    let mut manifest = RunManifest {
        experiment: cfg.experiment.name().into(),
        config: cfg.clone(),
        seed: cfg.experiment.seed(),
        generator: GeneratorInfo::current(),
        code_version: format!("barw {}", env!("CARGO_PKG_VERSION")),
        log_base: "natural".into(),
        started_unix: now_unix(),
        finished_unix: None,
        outputs: Vec::new(),
    };
    manifest.write(out_dir)?;
    let outputs = produce(cfg)?;
    for (name, bytes) in &outputs.files {
        fs::write(out_dir.join(name), bytes)?;
        manifest.outputs.push(OutputDigest { file: name.clone(), sha256: sha256_hex(bytes) });
    }
    manifest.finished_unix = Some(now_unix());
    manifest.write(out_dir)?;
    Ok(manifest)
}

#[derive(Clone, Debug, Serialize)]
pub struct RerunCheck {
    pub original: Vec<OutputDigest>,
    pub rerun: Vec<OutputDigest>,
    pub identical: bool,
}

/// Reruns the config stored in a manifest into `out_dir` and compares digests.
pub fn rerun_from_manifest(manifest_path: &Path, out_dir: &Path) -> Result<RerunCheck> {
    let original = RunManifest::read(manifest_path)?;
    if original.generator != GeneratorInfo::current() {
        return Err(Error::invalid(format!(
            "manifest was written with generator {:?}; this build uses {:?}",
            original.generator,
            GeneratorInfo::current()
        )));
    }
    let rerun = run_experiment(&original.config, out_dir)?;
    let identical = original.outputs == rerun.outputs;
    Ok(RerunCheck { original: original.outputs, rerun: rerun.outputs, identical })
}

fn produce(cfg: &RunConfig) -> Result<Outputs> {
    let mut out = Outputs::default();
    let ndjson = cfg.format == OutputFormat::Ndjson;
    match &cfg.experiment {
        Experiment::Simulate(s) => simulate(s, ndjson, &mut out)?,
        Experiment::PhaseDiagram(spec) => {
            let pd = phase_diagram(spec)?;
            out.add("phase_matrix.csv", |b| pd.write_matrix_csv(b))?;
            out.add("phase_cells.csv", |b| pd.write_cells_csv(b))?;
            out.add("extinction_band.csv", |b| pd.write_band_csv(b))?;
            out.add("phase_diagram.pgm", |b| pd.write_pgm(b))?;
        }
        Experiment::Survival { mu, radius, spec } => {
            let est = estimate_survival(*mu, *radius, spec)?;
            if ndjson {
                out.add("survival.ndjson", |b| {
                    serde_json::to_writer(&mut *b, &est)?;
                    b.push(b'\n');
                    Ok(())
                })?;
            } else {
                out.add("survival.csv", |b| {
                    writeln!(b, "mu,R,survived,replicas,proportion,wilson_lo,wilson_hi")?;
                    writeln!(
                        b,
                        "{mu},{radius},{},{},{},{},{}",
                        est.survived, est.replicas, est.proportion, est.wilson_lo, est.wilson_hi
                    )?;
                    Ok(())
                })?;
            }
        }
        Experiment::Couple { mu, radius, spec } => {
            let st = coupling_experiment(*mu, *radius, spec)?;
            if ndjson {
                out.add("coupling.ndjson", |b| st.write_ndjson(b))?;
            } else {
                out.add("coupling.csv", |b| st.write_csv(b))?;
            }
            let mut summary = serde_json::to_value(&st)?;
            summary.as_object_mut().map(|o| o.remove("replicas"));
            out.json("coupling_summary.json", &summary)?;
        }
        Experiment::Density { mu, radius, spec } => {
            let ds = density_timeseries(*mu, *radius, spec)?;
            out.add("density.csv", |b| ds.write_csv(b))?;
            if ndjson {
                out.add("density_summary.ndjson", |b| ds.write_ndjson(b))?;
            } else {
                out.add("density_summary.csv", |b| ds.write_summary_csv(b))?;
            }
        }
        Experiment::Cml { mu, radius, spec } => {
            let rep = cml_front_experiment(*mu, *radius, spec)?;
            out.add("cml_front.csv", |b| rep.write_csv(b))?;
            out.json(
                "cml_summary.json",
                &serde_json::json!({
                    "mu": rep.mu,
                    "R": rep.radius,
                    "regime": rep.report.regime,
                    "target": rep.report.target,
                    "probes": rep.spec.probes,
                    "first_within": rep.first_within,
                    "speed": rep.speed,
                    "profile_speed": rep.profile_speed,
                }),
            )?;
        }
        Experiment::Thresholds { dim, r_min, r_max } => {
            if r_min > r_max || *r_min == 0 {
                return Err(Error::invalid("need 1 <= r_min <= r_max"));
            }
            let rows = threshold_table(*r_min..=*r_max, *dim)?;
            if ndjson {
                out.add("thresholds.ndjson", |b| {
                    for r in &rows {
                        serde_json::to_writer(&mut *b, r)?;
                        b.push(b'\n');
                    }
                    Ok(())
                })?;
            } else {
                out.add("thresholds.csv", |b| write_threshold_csv(&rows, b))?;
            }
        }
        Experiment::ProfilesVerify(s) => profiles_verify(s, &mut out)?,
        Experiment::BlocksCensus(s) => blocks(s, &mut out)?,
        Experiment::Percolation(spec) => {
            let rep = percolation_threshold(spec)?;
            out.add("percolation.csv", |b| rep.write_csv(b))?;
            out.add("percolation_pc.csv", |b| rep.write_estimates_csv(b))?;
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn trajectory(
    mu: f64,
    radius: u32,
    shape: &LatticeShape,
    seed: u64,
    init: &InitialCondition,
    stream: u64,
    steps: usize,
    dynamics: Dynamics,
) -> Result<Vec<Configuration>> {
    let params = ModelParams::new(mu, radius, shape.clone())?;
    let field = UniformField::new(seed);
    let mut cfg = init.build(shape, &mut StreamRng::new(seed, stream))?;
    let mut particle_rng = StreamRng::new(seed, 3);
    let mut out = Vec::with_capacity(steps + 1);
    out.push(cfg.clone());
    for n in 0..steps as u64 {
        cfg = match dynamics {
            Dynamics::Pca => pca_step(&cfg, &params, &field, n)?,
            Dynamics::Particle => particle_step(&cfg, &params, &mut particle_rng)?,
        };
        out.push(cfg.clone());
    }
    Ok(out)
}

fn simulate(s: &SimulateSpec, ndjson: bool, out: &mut Outputs) -> Result<()> {
    let shape = LatticeShape::cube(s.dim, s.side, s.boundary)?;
    let seed = replica_seed(s.seed, s.mu, s.radius, 0);
    let traj = trajectory(s.mu, s.radius, &shape, seed, &s.init, 1, s.generations, s.dynamics)?;
    let n = shape.len() as f64;
    if ndjson {
        out.add("counts.ndjson", |b| {
            for (t, c) in traj.iter().enumerate() {
                serde_json::to_writer(
                    &mut *b,
                    &serde_json::json!({"t": t, "count": c.count(), "density": c.count() as f64 / n}),
                )?;
                b.push(b'\n');
            }
            Ok(())
        })?;
    } else {
        out.add("counts.csv", |b| {
            writeln!(b, "t,count,density")?;
            for (t, c) in traj.iter().enumerate() {
                writeln!(b, "{t},{},{}", c.count(), c.count() as f64 / n)?;
            }
            Ok(())
        })?;
    }
    let last = traj.last().unwrap();
    out.add("final.txt", |b| last.write_text(b))?;
    if s.dim <= 2 {
        out.add("final.pgm", |b| last.write_pgm(b))?;
    }
    if s.dim == 1 {
        out.add("spacetime.pgm", |b| {
            write!(b, "P5\n# barw space-time: rows are generations\n{} {}\n1\n", s.side, traj.len())?;
            for c in &traj {
                b.extend_from_slice(c.bits());
            }
            Ok(())
        })?;
    }
    Ok(())
}

fn profiles_verify(s: &ProfilesVerifySpec, out: &mut Outputs) -> Result<()> {
    let wave = build_wave_shape(s.a, s.radius)?;
    let dom = verify_density_domination(&wave, s.arithmetic);
    let mut summary = serde_json::json!({ "wave": wave, "domination": dom });
    let one = ConstantProfile { dim: s.dim, value: 1.0 };
    if let Some(t) = &s.survival {
        let r_init = SurvivalBlockGeometry::new(&wave).r_init.max(2 * s.radius as i64 + 1);
        let xi = build_xi_minus(s.dim, &wave, r_init, t.b, t.generation)?;
        let growth = verify_xi_growth(&xi)?;
        let next = xi.next();
        let map = ProfileMap::Psi { spec: PsiSpec::CapLinear { a_tilde: t.a_tilde, b: t.b } };
        let v = verify_profile_pair(
            &ProfilePair { lower: &xi, upper: &one },
            map,
            s.radius,
            &ProfilePair { lower: &next, upper: &one },
            UpperCheck::LowerOnly,
            true,
        )?;
        let target = t.a_tilde / wave.a.powi(s.dim as i32) - 1.0;
        summary["survival"] = serde_json::json!({
            "xi_growth_margin": growth,
            "delta": v.delta,
            "target_delta": target,
            "certified": v.certifies(target),
            "worst_x": v.worst_x,
            "points": v.points,
        });
        out.add("survival_margins.ndjson", |b| v.write_ndjson(b))?;
        out.add("survival_profile.csv", |b| {
            write_profile_csv(&ProfilePair { lower: &xi, upper: &one }, xi.outer_radius(), b)
        })?;
    }
    if let Some(z) = &s.zeta {
        let br = bracket_sequences(z.mu, z.alpha1, z.beta1, z.bracket_eps)?;
        let m0 = br.switch_index.unwrap_or(br.m_star);
        let eps = default_contraction_eps(z.mu)?;
        let geom = CcBlockGeometry::new(s.dim, z.mu, eps, &wave, m0)?;
        let zeta = build_zeta_profiles(s.dim, &wave, geom.r_dens, m0, &br, z.k)?;
        let next = build_zeta_profiles(s.dim, &wave, geom.r_dens, m0, &br, z.k + 1)?;
        let (lo, hi) = (zeta.lower_profile(), zeta.upper_profile());
        let (nlo, nhi) = (next.lower_profile(), next.upper_profile());
        let v = verify_profile_pair(
            &ProfilePair { lower: &lo, upper: &hi },
            ProfileMap::Phi { mu: z.mu },
            s.radius,
            &ProfilePair { lower: &nlo, upper: &nhi },
            UpperCheck::Full,
            true,
        )?;
        summary["zeta"] = serde_json::json!({
            "m0": m0,
            "r_dens": geom.r_dens,
            "delta": v.delta,
            "certified": v.delta > 0.0,
            "worst_x": v.worst_x,
            "points": v.points,
        });
        out.add("zeta_margins.ndjson", |b| v.write_ndjson(b))?;
        out.add("zeta_profile.csv", |b| {
            write_profile_csv(&ProfilePair { lower: &lo, upper: &hi }, zeta.tail.outer_radius(), b)
        })?;
    }
    out.json("profiles_verify.json", &summary)
}

fn blocks(s: &BlocksCensusSpec, out: &mut Outputs) -> Result<()> {
    let shape = LatticeShape::cube(s.dim, s.side, s.boundary)?;
    let wave = build_wave_shape(s.a, s.radius)?;
    let seed = replica_seed(s.seed, s.mu, s.radius, 0);
    let report = match &s.detector {
        CensusKind::Survival { b } => {
            let geom = SurvivalBlockGeometry::new(&wave);
            let steps = s.t0 as usize + s.layers * geom.t_block as usize;
            let configs = trajectory(s.mu, s.radius, &shape, seed, &s.init, 1, steps, Dynamics::Pca)?;
            let traj = StoredTrajectory::new(configs, s.radius, 0)?;
            let xi = build_xi_minus(s.dim, &wave, geom.r_init, *b, 0)?;
            let anchors = fitting_anchors(&shape, geom.l_prime_block, geom.r_block);
            out.json("block_geometry.json", &geom)?;
            block_census(&Detector::Survival { traj: &traj, geom: &geom, xi: &xi }, &anchors, s.t0, s.layers)?
        }
        CensusKind::CompleteConvergence { second, alpha1, beta1 } => {
            let eps = default_contraction_eps(s.mu)?;
            let br = bracket_sequences(s.mu, *alpha1, *beta1, eps)?;
            let m0 = br.switch_index.unwrap_or(br.m_star);
            let geom = CcBlockGeometry::new(s.dim, s.mu, eps, &wave, m0)?;
            let zeta = build_zeta_profiles(s.dim, &wave, geom.r_dens, m0, &br, 0)?;
            let steps = s.t0 as usize + s.layers * geom.t_block as usize;
            let a = trajectory(s.mu, s.radius, &shape, seed, &s.init, 1, steps, Dynamics::Pca)?;
            let b = trajectory(s.mu, s.radius, &shape, seed, second, 2, steps, Dynamics::Pca)?;
            let (ta, tb) = (StoredTrajectory::new(a, s.radius, 0)?, StoredTrajectory::new(b, s.radius, 0)?);
            let reach = zeta.tail.outer_radius().max(3 * geom.r_prime_block) + geom.l_prime_block;
            let anchors = fitting_anchors(&shape, geom.l_prime_block, reach);
            out.json("block_geometry.json", &geom)?;
            block_census(
                &Detector::CompleteConvergence { a: &ta, b: &tb, geom: &geom, zeta: &zeta },
                &anchors,
                s.t0,
                s.layers,
            )?
        }
    };
    if anchors_empty(&report) {
        return Err(Error::GeometryMismatch("no block anchor fits inside the window".into()));
    }
    out.add("blocks_census.csv", |b| report.write_csv(b))?;
    out.json(
        "blocks_summary.json",
        &serde_json::json!({
            "path_exists": report.path_exists,
            "layers": report.layers.iter().map(|l| serde_json::json!({
                "t": l.t,
                "good_fraction": l.good_fraction,
                "well_started_fraction": l.well_started_fraction,
                "reachable": l.reachable,
            })).collect::<Vec<_>>(),
        }),
    )
}

fn anchors_empty(report: &crate::blocks::CensusReport) -> bool {
    report.layers.first().is_none_or(|l| l.verdicts.is_empty())
}

/// Anchors on the `spacing` lattice whose radius-`reach` ball fits the window
/// without wrapping.
fn fitting_anchors(shape: &LatticeShape, spacing: i64, reach: i64) -> Vec<Vec<i64>> {
    lattice_anchors(shape, spacing)
        .into_iter()
        .filter(|z| {
            shape.sides().iter().zip(z).all(|(&side, &c)| {
                let lo = -((side / 2) as i64);
                let hi = side as i64 - 1 + lo;
                match shape.boundary() {
                    Boundary::Periodic => 2 * reach < side as i64,
                    Boundary::ZeroPadded => c - reach >= lo && c + reach <= hi,
                }
            })
        })
        .collect()
}
