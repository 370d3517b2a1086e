use barw::experiments::coupling::{coupling_experiment, CouplingSpec};
use barw::experiments::density::{density_timeseries, DensitySpec};
use barw::experiments::percolation::{percolation_threshold, PercolationSpec};
use barw::experiments::survival::{
    estimate_survival, grid, phase_diagram, wilson_interval, PhaseDiagramSpec, SurvivalSpec,
};
use barw::experiments::{rerun_from_manifest, run_experiment, Experiment, OutputFormat, RunConfig};
use barw::thresholds::extinction_band;

#[test]
fn survival_is_reproducible() {
    let spec = SurvivalSpec { side: 300, replicas: 40, generations: 100, ..Default::default() };
    let a = estimate_survival(2.5, 6, &spec).unwrap();
    let b = estimate_survival(2.5, 6, &spec).unwrap();
    assert_eq!(a, b);
    assert!(a.wilson_lo <= a.proportion && a.proportion <= a.wilson_hi);
}

#[test]
fn wilson_edges() {
    assert_eq!(wilson_interval(0, 50).0, 0.0);
    assert_eq!(wilson_interval(50, 50).1, 1.0);
    let (lo, hi) = wilson_interval(25, 50);
    assert!(lo < 0.5 && hi > 0.5 && (0.5 - lo - (hi - 0.5)).abs() < 1e-12);
}

#[test]
fn small_phase_diagram_dies_outside_band() {
    let spec = PhaseDiagramSpec {
        mus: grid(1.0, 8.0, 1.0),
        radii: vec![1, 6],
        run: SurvivalSpec { side: 300, replicas: 20, generations: 120, ..Default::default() },
    };
    let pd = phase_diagram(&spec).unwrap();
    assert_eq!(pd.max_outside_band(), 0.0);
    // 2 is inside the R = 6 band, and a single particle survives there often.
    let band = extinction_band(6, 1).unwrap();
    assert!(band.contains(2.0));
    assert!(pd.proportion(1, 1) > 0.3);
}

#[test]
fn density_settles_near_theta() {
    // Large R so ball fluctuations (order V^{-1/2}) sit well inside eps.
    let spec = DensitySpec { side: 1000, horizon: 200, eps: 0.1, ..Default::default() };
    let s = density_timeseries(2.0, 40, &spec).unwrap();
    let sum = &s.summaries[0];
    assert!(sum.survived);
    assert!((sum.time_average - s.theta).abs() < 0.05, "{} vs {}", sum.time_average, s.theta);
    assert!(sum.close_fraction > 0.5);
    assert_eq!(s.values[0][0].len(), 201);
}

#[test]
fn coupling_small_run() {
    let spec = CouplingSpec { side: 400, horizon: 200, replicas: 12, window: 20, ..Default::default() };
    let st = coupling_experiment(2.0, 8, &spec).unwrap();
    assert_eq!(st.replicas.len(), 12);
    assert!(st.doubly_surviving > 0);
    assert!(st.coupled_fraction > 0.5);
}

#[test]
fn percolation_scaled_threshold_is_order_one() {
    let spec =
        PercolationSpec { radius: 2, ps: grid(0.0, 1.0, 0.05), windows: vec![40], replicas: 30, ..Default::default() };
    let rep = percolation_threshold(&spec).unwrap();
    let c = &rep.curves[0];
    let pc = c.p_c.unwrap();
    assert!(c.p_c_lo.unwrap() <= pc && pc <= c.p_c_hi.unwrap());
    let scaled = c.scaled.unwrap();
    assert!(scaled > 1.0 && scaled < 5.0, "{scaled}");
}

#[test]
fn manifest_reruns_match_and_tampering_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        format: OutputFormat::Ndjson,
        experiment: Experiment::Survival {
            mu: 2.0,
            radius: 3,
            spec: SurvivalSpec { side: 200, replicas: 10, ..Default::default() },
        },
    };
    let m = run_experiment(&cfg, &dir.path().join("a")).unwrap();
    assert_eq!(m.experiment, "survival");
    assert_eq!(m.seed, Some(1));
    let ok = rerun_from_manifest(&dir.path().join("a/manifest.json"), &dir.path().join("b")).unwrap();
    assert!(ok.identical);
    // A manifest whose recorded digest no longer matches the inputs must fail.
    let path = dir.path().join("a/manifest.json");
    let text = std::fs::read_to_string(&path).unwrap();
    let digest = &m.outputs[0].sha256;
    std::fs::write(&path, text.replace(digest.as_str(), &"0".repeat(64))).unwrap();
    let bad = rerun_from_manifest(&path, &dir.path().join("c")).unwrap();
    assert!(!bad.identical);
}
