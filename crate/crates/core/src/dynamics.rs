//! One-step evolutions of the walk: the probabilistic cellular automaton,
//! the particle-level oracle, monotone comparison processes, and ensembles
//! advanced in lockstep on a shared uniform field.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cml::phi;
use crate::error::{Error, Result};
use crate::lattice::{ball_volume, compute_density, window_counts, Configuration, LatticeShape};
use crate::rng::{poisson_sample, SiteUniforms, UniformField};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub mu: f64,
    pub radius: u32,
    pub shape: LatticeShape,
}

impl ModelParams {
    pub fn new(mu: f64, radius: u32, shape: LatticeShape) -> Result<Self> {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(Error::invalid(format!("mu must be positive and finite, got {mu}")));
        }
        let vol = ball_volume(radius, shape.dim())?;
        if vol > u32::MAX as u64 / 2 {
            return Err(Error::invalid("ball volume too large"));
        }
        Ok(ModelParams { mu, radius, shape })
    }

    pub fn volume(&self) -> u64 {
        ball_volume(self.radius, self.shape.dim()).expect("checked at construction")
    }

    /// `phi_mu(k / V^d)` for `k = 0..=V^d`.
    pub fn phi_table(&self) -> Vec<f64> {
        let vol = self.volume();
        (0..=vol).map(|k| phi(self.mu, k as f64 / vol as f64)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PsiSpec {
    /// `psi(w) = a~ min(w, b)`.
    CapLinear { a_tilde: f64, b: f64 },
    /// `psi(w) = mu~ w`.
    Linear { mu_tilde: f64 },
}

impl PsiSpec {
    pub fn eval(&self, w: f64) -> f64 {
        match *self {
            PsiSpec::CapLinear { a_tilde, b } => a_tilde * w.min(b),
            PsiSpec::Linear { mu_tilde } => mu_tilde * w,
        }
    }

    fn check_ranges(&self) -> Result<()> {
        match *self {
            PsiSpec::CapLinear { a_tilde, b } => {
                if !(a_tilde > 1.0) || !(b > 0.0 && b <= 1.0) {
                    return Err(Error::invalid(format!(
                        "cap-linear psi needs a~ > 1 and b in (0,1], got a~ = {a_tilde}, b = {b}"
                    )));
                }
            }
            PsiSpec::Linear { mu_tilde } => {
                if !(mu_tilde > 0.0 && mu_tilde < 1.0) {
                    return Err(Error::invalid(format!("linear psi needs mu~ in (0,1), got {mu_tilde}")));
                }
            }
        }
        Ok(())
    }
}

/// Which side of `phi_mu` the comparison rate must stay on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Comparison {
    /// `psi <= phi`: the comparison process is dominated by the walk.
    Below,
    /// `psi >= phi`: the comparison process dominates the walk.
    Above,
}

/// A comparison rate checked against `phi_mu` at every grid density.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidatedPsi {
    spec: PsiSpec,
    comparison: Comparison,
    table: Vec<f64>,
}

/// Relative slack with which grid values may cross `phi_mu` by round-off.
const GRID_SLACK: f64 = 1e-12;

impl ValidatedPsi {
    pub fn new(spec: PsiSpec, comparison: Comparison, params: &ModelParams) -> Result<Self> {
        spec.check_ranges()?;
        let vol = params.volume();
        let phis = params.phi_table();
        let mut table = Vec::with_capacity(phis.len());
        for (k, &p) in phis.iter().enumerate() {
            let w = k as f64 / vol as f64;
            let q = spec.eval(w);
            if q > 1.0 {
                return Err(Error::PsiNotDominated(format!("psi({w}) = {q} exceeds 1")));
            }
            let slack = GRID_SLACK * p.max(q) + 1e-300;
            let snapped = match comparison {
                Comparison::Below => {
                    if q > p + slack {
                        return Err(Error::PsiNotDominated(format!("psi({k}/{vol}) = {q} > phi = {p}")));
                    }
                    q.min(p)
                }
                Comparison::Above => {
                    if q < p - slack {
                        return Err(Error::PsiNotDominated(format!("psi({k}/{vol}) = {q} < phi = {p}")));
                    }
                    q.max(p)
                }
            };
            table.push(snapped);
        }
        if table.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Invariant("psi is not non-decreasing on the grid".into()));
        }
        Ok(ValidatedPsi { spec, comparison, table })
    }

    pub fn spec(&self) -> PsiSpec {
        self.spec
    }

    pub fn comparison(&self) -> Comparison {
        self.comparison
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum UpdateRule {
    Phi,
    Psi(ValidatedPsi),
}

impl UpdateRule {
    fn table(&self, params: &ModelParams) -> Vec<f64> {
        match self {
            UpdateRule::Phi => params.phi_table(),
            UpdateRule::Psi(p) => p.table.clone(),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            UpdateRule::Phi => "phi",
            UpdateRule::Psi(_) => "psi",
        }
    }
}

fn check_shape(cfg: &Configuration, params: &ModelParams) -> Result<()> {
    if cfg.shape() != &params.shape {
        return Err(Error::GeometryMismatch("configuration shape differs from the model".into()));
    }
    Ok(())
}

fn update_from_counts<U: SiteUniforms>(
    shape: &LatticeShape,
    counts: &[u32],
    table: &[f64],
    uniforms: &mut U,
) -> Configuration {
    let occ: Vec<u8> = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| if c == 0 { 0 } else { u8::from(uniforms.uniform(i) <= table[c as usize]) })
        .collect();
    Configuration::from_bits(shape.clone(), occ).expect("bits are 0/1")
}

/// Update with rates `table[count]` and uniforms from `uniforms`.
pub fn step_with<U: SiteUniforms>(
    cfg: &Configuration,
    radius: u32,
    table: &[f64],
    uniforms: &mut U,
) -> Result<Configuration> {
    if cfg.is_extinct() {
        return Ok(cfg.clone());
    }
    let counts = window_counts(cfg, radius)?;
    uniforms.expect(counts.iter().filter(|&&c| c > 0).count());
    Ok(update_from_counts(cfg.shape(), &counts, table, uniforms))
}

/// `eta_{n+1}(x) = 1` iff `U(x, n+1) <= phi_mu(delta_R(x; eta_n))`.
pub fn pca_step(cfg: &Configuration, params: &ModelParams, field: &UniformField, n: u64) -> Result<Configuration> {
    check_shape(cfg, params)?;
    let table = params.phi_table();
    step_with(cfg, params.radius, &table, &mut field.row(n + 1, cfg.shape().len()))
}

/// `eta~_{n+1}(x) = 1` iff `U(x, n+1) <= psi(delta_R(x; eta~_n))`.
pub fn psi_step(
    cfg: &Configuration,
    psi: &ValidatedPsi,
    params: &ModelParams,
    field: &UniformField,
    n: u64,
) -> Result<Configuration> {
    check_shape(cfg, params)?;
    step_with(cfg, params.radius, &psi.table, &mut field.row(n + 1, cfg.shape().len()))
}

/// Every particle has Poisson(mu) children placed uniformly in the ball
/// around it; sites hit exactly once are occupied next.
pub fn particle_step<R: Rng + ?Sized>(cfg: &Configuration, params: &ModelParams, rng: &mut R) -> Result<Configuration> {
    check_shape(cfg, params)?;
    let shape = cfg.shape();
    let r = params.radius as i64;
    let d = shape.dim();
    let mut arrivals = vec![0u8; shape.len()];
    let mut y = vec![0i64; d];
    for site in cfg.occupied() {
        let x = shape.coords(site);
        let k = poisson_sample(params.mu, rng)?;
        for _ in 0..k {
            for a in 0..d {
                y[a] = x[a] + rng.random_range(-r..=r);
            }
            if let Some(j) = shape.index(&y) {
                arrivals[j] = arrivals[j].saturating_add(1);
            }
        }
    }
    let occ = arrivals.into_iter().map(|c| u8::from(c == 1)).collect();
    Configuration::from_bits(shape.clone(), occ)
}

#[derive(Clone, Debug)]
pub struct Member {
    pub label: String,
    pub config: Configuration,
    pub rule: UpdateRule,
    table: Vec<f64>,
}

/// Processes sharing one model, one field and one clock.
#[derive(Clone, Debug)]
pub struct CoupledEnsemble {
    pub params: ModelParams,
    pub field: UniformField,
    members: Vec<Member>,
    time: u64,
}

impl CoupledEnsemble {
    pub fn new(params: ModelParams, field: UniformField) -> Self {
        CoupledEnsemble { params, field, members: Vec::new(), time: 0 }
    }

    pub fn add_member(&mut self, label: impl Into<String>, config: Configuration, rule: UpdateRule) -> Result<usize> {
        check_shape(&config, &self.params)?;
        if self.time != 0 {
            return Err(Error::invalid("members must be added before the first step"));
        }
        let table = rule.table(&self.params);
        self.members.push(Member { label: label.into(), config, rule, table });
        Ok(self.members.len() - 1)
    }

    pub fn members(&self) -> &[Member] {
        &self.members
    }

    pub fn time(&self) -> u64 {
        self.time
    }

    /// Advances every member from `time` to `time + 1` using `U(., time + 1)`.
    pub fn step(&mut self) -> Result<()> {
        let shape = self.params.shape.clone();
        let mut counts = Vec::with_capacity(self.members.len());
        let mut active = 0;
        for m in &self.members {
            if m.config.is_extinct() {
                counts.push(None);
            } else {
                let c = window_counts(&m.config, self.params.radius)?;
                active = active.max(c.iter().filter(|&&v| v > 0).count());
                counts.push(Some(c));
            }
        }
        let mut row = self.field.row(self.time + 1, shape.len());
        row.expect(active);
        for (m, c) in self.members.iter_mut().zip(counts) {
            if let Some(c) = c {
                m.config = update_from_counts(&shape, &c, &m.table, &mut row);
            }
        }
        self.time += 1;
        Ok(())
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Probe {
    pub member: usize,
    pub sites: Vec<usize>,
}

#[derive(Clone, Debug, Default)]
pub struct Observers {
    pub pairs: Vec<(usize, usize)>,
    /// Radii of centered windows for the agreement statistics.
    pub windows: Vec<i64>,
    pub probes: Vec<Probe>,
    pub keep_masks: bool,
    pub keep_configs: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct MemberCount {
    pub label: String,
    pub count: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct WindowAgreement {
    pub pair: String,
    pub window: i64,
    pub agree_fraction: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct StepRecord {
    pub t: u64,
    pub members: Vec<MemberCount>,
    pub agreement: Vec<WindowAgreement>,
    /// Per pair: largest `r` with full agreement on the centered ball `B_r`,
    /// -1 when the center disagrees.
    #[serde(skip)]
    pub agreed_radius: Vec<i64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeSample {
    pub t: u64,
    pub member: usize,
    pub site: usize,
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct TrajectoryReport {
    pub labels: Vec<String>,
    pub pairs: Vec<(usize, usize)>,
    pub windows: Vec<i64>,
    pub records: Vec<StepRecord>,
    /// `first_agreement[p][w]`: first time pair `p` agrees on window `w`.
    pub first_agreement: Vec<Vec<Option<u64>>>,
    pub probes: Vec<ProbeSample>,
    /// `masks[t][p]`: sitewise agreement of pair `p` at record `t`.
    pub masks: Vec<Vec<Vec<bool>>>,
    /// `configs[m][t]`: member `m` at record `t`.
    pub configs: Vec<Vec<Configuration>>,
}

impl TrajectoryReport {
    pub fn pair_label(&self, p: usize) -> String {
        let (a, b) = self.pairs[p];
        format!("{}~{}", self.labels[a], self.labels[b])
    }

    pub fn write_ndjson<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write_probe_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,site,value,member")?;
        for s in &self.probes {
            writeln!(w, "{},{},{},{}", s.t, s.site, s.value, self.labels[s.member])?;
        }
        Ok(())
    }
}

fn observe(
    ens: &CoupledEnsemble,
    obs: &Observers,
    radii: &[i64],
    cap: i64,
    report: &mut TrajectoryReport,
) -> Result<()> {
    let t = ens.time();
    let members = ens.members();
    let mut agreement = Vec::new();
    let mut agreed_radius = Vec::new();
    let mut masks = Vec::new();
    for (p, &(a, b)) in obs.pairs.iter().enumerate() {
        let (x, y) = (members[a].config.bits(), members[b].config.bits());
        let mut first_bad = cap + 1;
        let mut per_window = vec![0usize; obs.windows.len()];
        let mut sizes = vec![0usize; obs.windows.len()];
        for i in 0..x.len() {
            let eq = x[i] == y[i];
            if !eq {
                first_bad = first_bad.min(radii[i]);
            }
            for (k, &r) in obs.windows.iter().enumerate() {
                if radii[i] <= r {
                    sizes[k] += 1;
                    per_window[k] += eq as usize;
                }
            }
        }
        for (k, &r) in obs.windows.iter().enumerate() {
            let frac = if sizes[k] == 0 { 1.0 } else { per_window[k] as f64 / sizes[k] as f64 };
            if frac == 1.0 && report.first_agreement[p][k].is_none() {
                report.first_agreement[p][k] = Some(t);
            }
            agreement.push(WindowAgreement { pair: report.pair_label(p), window: r, agree_fraction: frac });
        }
        agreed_radius.push(first_bad - 1);
        if obs.keep_masks {
            masks.push(x.iter().zip(y).map(|(u, v)| u == v).collect());
        }
    }
    for probe in &obs.probes {
        let dens = compute_density(&members[probe.member].config, ens.params.radius)?;
        for &s in &probe.sites {
            report.probes.push(ProbeSample { t, member: probe.member, site: s, value: dens.get(s) });
        }
    }
    if obs.keep_masks {
        report.masks.push(masks);
    }
    if obs.keep_configs {
        for (m, member) in members.iter().enumerate() {
            report.configs[m].push(member.config.clone());
        }
    }
    report.records.push(StepRecord {
        t,
        members: members.iter().map(|m| MemberCount { label: m.label.clone(), count: m.config.count() }).collect(),
        agreement,
        agreed_radius,
    });
    Ok(())
}

/// Advances the ensemble `steps` times, recording the initial state and
/// every step.
pub fn coupled_run(ens: &mut CoupledEnsemble, steps: usize, obs: &Observers) -> Result<TrajectoryReport> {
    if steps == 0 {
        return Err(Error::invalid("coupled_run needs at least one step"));
    }
    let n = ens.members().len();
    for &(a, b) in &obs.pairs {
        if a >= n || b >= n {
            return Err(Error::invalid("pair refers to a missing member"));
        }
    }
    for p in &obs.probes {
        if p.member >= n || p.sites.iter().any(|&s| s >= ens.params.shape.len()) {
            return Err(Error::invalid("probe refers to a missing member or site"));
        }
    }
    let shape = ens.params.shape.clone();
    let radii: Vec<i64> = (0..shape.len()).map(|i| shape.radius_of(i)).collect();
    let cap = shape.max_centered_radius();
    let mut report = TrajectoryReport {
        labels: ens.members().iter().map(|m| m.label.clone()).collect(),
        pairs: obs.pairs.clone(),
        windows: obs.windows.clone(),
        records: Vec::with_capacity(steps + 1),
        first_agreement: vec![vec![None; obs.windows.len()]; obs.pairs.len()],
        probes: Vec::new(),
        masks: Vec::new(),
        configs: vec![Vec::new(); if obs.keep_configs { n } else { 0 }],
    };
    observe(ens, obs, &radii, cap, &mut report)?;
    for _ in 0..steps {
        ens.step()?;
        observe(ens, obs, &radii, cap, &mut report)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Boundary;
    use crate::rng::StreamRng;

    fn line(l: usize) -> LatticeShape {
        LatticeShape::cube(1, l, Boundary::Periodic).unwrap()
    }

    #[test]
    fn empty_stays_empty() {
        let p = ModelParams::new(2.0, 3, line(50)).unwrap();
        let f = UniformField::new(1);
        let e = Configuration::empty(p.shape.clone());
        assert!(pca_step(&e, &p, &f, 0).unwrap().is_extinct());
        assert!(particle_step(&e, &p, &mut StreamRng::new(1, 1)).unwrap().is_extinct());
    }

    #[test]
    fn psi_validation() {
        let p = ModelParams::new(2.0, 8, line(100)).unwrap();
        assert!(ValidatedPsi::new(PsiSpec::CapLinear { a_tilde: 1.5, b: 0.14 }, Comparison::Below, &p).is_ok());
        assert!(matches!(
            ValidatedPsi::new(PsiSpec::CapLinear { a_tilde: 1.9, b: 0.3 }, Comparison::Below, &p),
            Err(Error::PsiNotDominated(_))
        ));
        assert!(ValidatedPsi::new(PsiSpec::CapLinear { a_tilde: 0.9, b: 0.3 }, Comparison::Below, &p).is_err());
        let q = ModelParams::new(6.0, 1, line(100)).unwrap();
        let mt = 6.0 * (-2.0f64).exp();
        assert!(ValidatedPsi::new(PsiSpec::Linear { mu_tilde: mt }, Comparison::Above, &q).is_ok());
        assert!(ValidatedPsi::new(PsiSpec::Linear { mu_tilde: 0.5 }, Comparison::Above, &q).is_err());
    }

    #[test]
    fn ensemble_of_identical_members_agrees() {
        let p = ModelParams::new(2.0, 2, line(80)).unwrap();
        let mut ens = CoupledEnsemble::new(p.clone(), UniformField::new(5));
        let c = Configuration::all_ones(p.shape.clone());
        ens.add_member("a", c.clone(), UpdateRule::Phi).unwrap();
        ens.add_member("b", c, UpdateRule::Phi).unwrap();
        let obs = Observers { pairs: vec![(0, 1)], windows: vec![5, 39], ..Default::default() };
        let rep = coupled_run(&mut ens, 30, &obs).unwrap();
        assert!(rep.records.iter().all(|r| r.agreement.iter().all(|a| a.agree_fraction == 1.0)));
        assert_eq!(rep.first_agreement[0], vec![Some(0), Some(0)]);
    }

    #[test]
    fn ensemble_matches_single_steps() {
        let p = ModelParams::new(2.5, 3, line(120)).unwrap();
        let f = UniformField::new(77);
        let c0 = Configuration::all_ones(p.shape.clone());
        let mut ens = CoupledEnsemble::new(p.clone(), f.clone());
        ens.add_member("x", c0.clone(), UpdateRule::Phi).unwrap();
        let mut c = c0;
        for n in 0..20 {
            ens.step().unwrap();
            c = pca_step(&c, &p, &f, n).unwrap();
            assert_eq!(ens.members()[0].config, c);
        }
    }
}
