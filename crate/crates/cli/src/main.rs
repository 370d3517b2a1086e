use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use barw::experiments::cml_front::{CmlFrontSpec, CmlStart};
use barw::experiments::coupling::CouplingSpec;
use barw::experiments::density::DensitySpec;
use barw::experiments::percolation::PercolationSpec;
use barw::experiments::runner::{
    BlocksCensusSpec, CensusKind, Dynamics, ProfilesVerifySpec, SimulateSpec, SurvivalTransition, ZetaTransition,
};
use barw::experiments::survival::{grid, PhaseDiagramSpec, SurvivalSpec};
use barw::experiments::{rerun_from_manifest, run_experiment, Experiment, OutputFormat, RunConfig};
use barw::lattice::{Boundary, InitialCondition};
use barw::profiles::Arithmetic;

#[derive(Parser)]
#[command(name = "barw", version, about = "Branching annihilating random walk experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand)]
enum Cmd {
    /// One trajectory: particle counts, final snapshot, space-time image in d = 1.
    Simulate,
    /// Survival proportions over a (mu, R) grid with the extinction band overlay.
    PhaseDiagram,
    /// Survival proportion of one (mu, R) cell.
    Survival,
    /// A pair of initial conditions on a shared field: coupling times and cone slope.
    Couple,
    /// Local-density time series at probe sites.
    Density,
    /// Coupled map lattice front from a seed mass.
    Cml,
    /// Extinction band table.
    Thresholds,
    /// Wave-shape domination and profile transitions.
    ProfilesVerify,
    /// Block census with oriented-path reachability.
    BlocksCensus,
    /// Oriented site percolation crossing curves (exploratory).
    Percolation,
    /// Rerun the config stored in a manifest and compare output digests.
    Rerun {
        /// Path to a manifest.json.
        manifest: PathBuf,
    },
}

/// Every flag is optional; unset flags fall back to `--config`, then to the
/// experiment defaults.
#[derive(Args, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct Flags {
    /// JSON file with flag values; explicit flags override it.
    #[arg(long, global = true)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    mu: Option<f64>,
    #[arg(long, global = true)]
    radius: Option<u32>,
    #[arg(long, global = true)]
    dim: Option<usize>,
    #[arg(long, global = true)]
    side: Option<usize>,
    #[arg(long, global = true)]
    generations: Option<usize>,
    #[arg(long, global = true)]
    replicas: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// single | ones | bernoulli:p
    #[arg(long, global = true)]
    init: Option<String>,
    /// torus | zero
    #[arg(long, global = true)]
    boundary: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// csv | ndjson
    #[arg(long, global = true)]
    format: Option<String>,
    /// Mean grid `start:stop:step` (phase-diagram).
    #[arg(long, global = true)]
    mu_grid: Option<String>,
    /// Radius list, e.g. `1,2,8` or `1-16` (phase-diagram, percolation sweep).
    #[arg(long, global = true)]
    radii: Option<String>,
    /// Use the reduced smoke grid (phase-diagram).
    #[arg(long, global = true)]
    #[serde(default)]
    smoke: bool,
    /// Second initial condition (couple, blocks-census cc).
    #[arg(long, global = true)]
    second: Option<String>,
    /// Half-width of the observation window (couple, cml).
    #[arg(long, global = true)]
    window: Option<usize>,
    /// Probe sites separated by `;`, coordinates by `,` (density).
    #[arg(long, global = true)]
    probes: Option<String>,
    /// Closeness threshold (density).
    #[arg(long, global = true)]
    eps: Option<f64>,
    /// Convergence tolerance (cml).
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Wave growth factor (profiles-verify, blocks-census, cml).
    #[arg(long, global = true)]
    a: Option<f64>,
    /// float | exact (profiles-verify)
    #[arg(long, global = true)]
    arithmetic: Option<String>,
    /// Comparison slope (profiles-verify).
    #[arg(long, global = true)]
    a_tilde: Option<f64>,
    /// Comparison cap (profiles-verify, blocks-census survival).
    #[arg(long, global = true)]
    b: Option<f64>,
    /// Bracket start values (profiles-verify, blocks-census cc).
    #[arg(long, global = true)]
    alpha1: Option<f64>,
    #[arg(long, global = true)]
    beta1: Option<f64>,
    /// survival | cc (blocks-census)
    #[arg(long, global = true)]
    detector: Option<String>,
    #[arg(long, global = true)]
    t0: Option<u64>,
    #[arg(long, global = true)]
    layers: Option<usize>,
    /// pca | particle (simulate)
    #[arg(long, global = true)]
    dynamics: Option<String>,
    /// Radius range for thresholds, `min-max`.
    #[arg(long, global = true)]
    r_range: Option<String>,
    /// p grid `start:stop:step` (percolation).
    #[arg(long, global = true)]
    p_grid: Option<String>,
    /// Percolation window sides, comma separated.
    #[arg(long, global = true)]
    windows: Option<String>,
}

macro_rules! merge {
    ($dst:ident, $src:ident, $($f:ident),*) => {
        $( if $dst.$f.is_none() { $dst.$f = $src.$f.take(); } )*
    };
}

impl Flags {
    fn merge_file(&mut self) -> Result<(), CliError> {
        let Some(path) = &self.config else { return Ok(()) };
        let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
        let mut file: Flags =
            serde_json::from_str(&text).map_err(|e| usage(format!("bad config {}: {e}", path.display())))?;
        merge!(
            self,
            file,
            mu,
            radius,
            dim,
            side,
            generations,
            replicas,
            seed,
            init,
            boundary,
            out,
            format,
            mu_grid,
            radii,
            second,
            window,
            probes,
            eps,
            tol,
            a,
            arithmetic,
            a_tilde,
            b,
            alpha1,
            beta1,
            detector,
            t0,
            layers,
            dynamics,
            r_range,
            p_grid,
            windows
        );
        self.smoke |= file.smoke;
        Ok(())
    }
}

enum CliError {
    Usage(String),
    Run(barw::Error),
}

impl From<barw::Error> for CliError {
    fn from(e: barw::Error) -> Self {
        CliError::Run(e)
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse<T: std::str::FromStr<Err = barw::Error>>(v: &Option<String>, default: T) -> Result<T, CliError> {
    v.as_deref().map_or(Ok(default), |s| s.parse().map_err(CliError::Run))
}

fn parse_grid(s: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| usage(format!("bad grid '{s}', expected start:stop:step"))))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [start, stop, step] if step > 0.0 && stop >= start => Ok(grid(start, stop, step)),
        [single] => Ok(vec![single]),
        _ => Err(usage(format!("bad grid '{s}', expected start:stop:step"))),
    }
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, CliError> {
    s.split(',').map(|p| p.trim().parse().map_err(|_| usage(format!("bad list entry '{p}'")))).collect()
}

fn parse_range(s: &str) -> Result<(u32, u32), CliError> {
    let bad = || usage(format!("bad range '{s}', expected lo-hi"));
    let (lo, hi) = s.split_once('-').ok_or_else(bad)?;
    Ok((lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?))
}

fn parse_radii(s: &str) -> Result<Vec<u32>, CliError> {
    if let Some((lo, hi)) = s.split_once('-') {
        let (lo, hi) = parse_range(&format!("{lo}-{hi}"))?;
        return Ok((lo..=hi).collect());
    }
    parse_list(s)
}

fn parse_format(v: &Option<String>) -> Result<OutputFormat, CliError> {
    match v.as_deref() {
        None | Some("csv") => Ok(OutputFormat::Csv),
        Some("ndjson") => Ok(OutputFormat::Ndjson),
        Some(o) => Err(usage(format!("unknown format '{o}', expected csv or ndjson"))),
    }
}

fn survival_spec(f: &Flags) -> Result<SurvivalSpec, CliError> {
    let d = SurvivalSpec::default();
    Ok(SurvivalSpec {
        dim: f.dim.unwrap_or(d.dim),
        side: f.side.unwrap_or(d.side),
        boundary: parse(&f.boundary, d.boundary)?,
        generations: f.generations.unwrap_or(d.generations),
        replicas: f.replicas.unwrap_or(d.replicas),
        init: parse(&f.init, d.init)?,
        seed: f.seed.unwrap_or(d.seed),
    })
}

fn build(cmd: &Cmd, f: &Flags) -> Result<Experiment, CliError> {
    let mu = f.mu.unwrap_or(2.0);
    let radius = f.radius.unwrap_or(10);
    Ok(match cmd {
        Cmd::Simulate => Experiment::Simulate(SimulateSpec {
            mu,
            radius,
            dim: f.dim.unwrap_or(1),
            side: f.side.unwrap_or(1000),
            boundary: parse(&f.boundary, Boundary::Periodic)?,
            generations: f.generations.unwrap_or(250),
            seed: f.seed.unwrap_or(1),
            init: parse(&f.init, InitialCondition::SingleSite)?,
            dynamics: match f.dynamics.as_deref() {
                None | Some("pca") => Dynamics::Pca,
                Some("particle") => Dynamics::Particle,
                Some(o) => return Err(usage(format!("unknown dynamics '{o}'"))),
            },
        }),
        Cmd::PhaseDiagram => {
            let base = if f.smoke { PhaseDiagramSpec::smoke() } else { PhaseDiagramSpec::full() };
            let mut run = survival_spec(f)?;
            if f.replicas.is_none() {
                run.replicas = base.run.replicas;
            }
            Experiment::PhaseDiagram(PhaseDiagramSpec {
                mus: f.mu_grid.as_deref().map_or(Ok(base.mus), parse_grid)?,
                radii: f.radii.as_deref().map_or(Ok(base.radii), parse_radii)?,
                run,
            })
        }
        Cmd::Survival => Experiment::Survival { mu, radius, spec: survival_spec(f)? },
        Cmd::Couple => {
            let d = CouplingSpec::default();
            Experiment::Couple {
                mu,
                radius,
                spec: CouplingSpec {
                    dim: f.dim.unwrap_or(d.dim),
                    side: f.side.unwrap_or(d.side),
                    boundary: parse(&f.boundary, d.boundary)?,
                    horizon: f.generations.unwrap_or(d.horizon),
                    replicas: f.replicas.unwrap_or(d.replicas),
                    seed: f.seed.unwrap_or(d.seed),
                    first: parse(&f.init, d.first)?,
                    second: parse(&f.second, d.second)?,
                    window: f.window.map_or(d.window, |w| w as i64),
                },
            }
        }
        Cmd::Density => {
            let d = DensitySpec::default();
            let dim = f.dim.unwrap_or(d.dim);
            let probes = match &f.probes {
                None => vec![vec![0; dim]],
                Some(s) => s.split(';').map(parse_list::<i64>).collect::<Result<_, _>>()?,
            };
            Experiment::Density {
                mu,
                radius,
                spec: DensitySpec {
                    dim,
                    side: f.side.unwrap_or(d.side),
                    boundary: parse(&f.boundary, d.boundary)?,
                    horizon: f.generations.unwrap_or(d.horizon),
                    replicas: f.replicas.unwrap_or(d.replicas),
                    seed: f.seed.unwrap_or(d.seed),
                    init: parse(&f.init, d.init)?,
                    probes,
                    eps: f.eps.unwrap_or(d.eps),
                },
            }
        }
        Cmd::Cml => {
            let d = CmlFrontSpec::default();
            Experiment::Cml {
                mu,
                radius: f.radius.unwrap_or(5),
                spec: CmlFrontSpec {
                    dim: f.dim.unwrap_or(d.dim),
                    window: f.window.unwrap_or(d.window),
                    steps: f.generations.unwrap_or(d.steps),
                    tol: f.tol.unwrap_or(d.tol),
                    start: CmlStart::Point { value: 0.01 },
                    probes: d.probes,
                    wave_a: f.a.unwrap_or(d.wave_a),
                },
            }
        }
        Cmd::Thresholds => {
            let (r_min, r_max) = f.r_range.as_deref().map_or(Ok((1, 50)), parse_range)?;
            Experiment::Thresholds { dim: f.dim.unwrap_or(1), r_min, r_max }
        }
        Cmd::ProfilesVerify => Experiment::ProfilesVerify(ProfilesVerifySpec {
            a: f.a.unwrap_or(1.1),
            radius: f.radius.unwrap_or(113),
            dim: f.dim.unwrap_or(1),
            arithmetic: match f.arithmetic.as_deref() {
                None | Some("float") => Arithmetic::Float,
                Some("exact") => Arithmetic::Exact,
                Some(o) => return Err(usage(format!("unknown arithmetic '{o}'"))),
            },
            survival: Some(SurvivalTransition {
                a_tilde: f.a_tilde.unwrap_or(1.5),
                b: f.b.unwrap_or(0.14),
                generation: 0,
            }),
            zeta: f.mu.map(|mu| ZetaTransition {
                mu,
                alpha1: f.alpha1.unwrap_or(0.1),
                beta1: f.beta1.unwrap_or(0.6),
                bracket_eps: 1e-3,
                k: 0,
            }),
        }),
        Cmd::BlocksCensus => {
            let detector = match f.detector.as_deref() {
                None | Some("survival") => CensusKind::Survival { b: f.b.unwrap_or(0.14) },
                Some("cc") => CensusKind::CompleteConvergence {
                    second: parse(&f.second, InitialCondition::ProductBernoulli { p: 0.5 })?,
                    alpha1: f.alpha1.unwrap_or(0.1),
                    beta1: f.beta1.unwrap_or(0.6),
                },
                Some(o) => return Err(usage(format!("unknown detector '{o}', expected survival or cc"))),
            };
            Experiment::BlocksCensus(BlocksCensusSpec {
                mu,
                radius,
                dim: f.dim.unwrap_or(1),
                side: f.side.unwrap_or(2000),
                boundary: parse(&f.boundary, Boundary::Periodic)?,
                seed: f.seed.unwrap_or(1),
                init: parse(&f.init, InitialCondition::AllOnes)?,
                a: f.a.unwrap_or(1.1),
                t0: f.t0.unwrap_or(0),
                layers: f.layers.unwrap_or(3),
                detector,
            })
        }
        Cmd::Percolation => {
            let d = PercolationSpec::default();
            Experiment::Percolation(PercolationSpec {
                dim: f.dim.unwrap_or(d.dim),
                radius: f.radius.unwrap_or(d.radius),
                ps: f.p_grid.as_deref().map_or(Ok(d.ps), parse_grid)?,
                windows: f.windows.as_deref().map_or(Ok(d.windows), parse_list)?,
                replicas: f.replicas.unwrap_or(d.replicas),
                seed: f.seed.unwrap_or(d.seed),
            })
        }
        Cmd::Rerun { .. } => unreachable!("handled before building a config"),
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut flags = cli.flags;
    flags.merge_file()?;
    let out = flags.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    if let Cmd::Rerun { manifest } = &cli.cmd {
        let check = rerun_from_manifest(manifest, &out)?;
        for (a, b) in check.original.iter().zip(&check.rerun) {
            let mark = if a == b { "same" } else { "DIFFERS" };
            println!("{mark} {} {}", b.file, b.sha256);
        }
        if !check.identical {
            return Err(CliError::Run(barw::Error::Invariant("rerun digests differ from the manifest".into())));
        }
        println!("rerun reproduces all {} outputs", check.rerun.len());
        return Ok(());
    }
    let cfg = RunConfig { format: parse_format(&flags.format)?, experiment: build(&cli.cmd, &flags)? };
    let manifest = run_experiment(&cfg, &out)?;
    report(&out, &manifest.outputs.iter().map(|o| o.file.as_str()).collect::<Vec<_>>());
    Ok(())
}

fn report(dir: &Path, files: &[&str]) {
    println!("wrote {}", dir.join("manifest.json").display());
    for f in files {
        println!("wrote {}", dir.join(f).display());
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() { 1 } else { 2 })
        }
    }
}
