//! The map `phi_mu(w) = mu w e^{-mu w}`, its fixpoint, bracket sequences
//! squeezing the fixpoint, and the deterministic coupled map lattice.

use std::f64::consts::E;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{box_average, random_walk_kernel, DensityField};

const INV_E: f64 = 1.0 / E;

#[inline]
pub fn phi(mu: f64, w: f64) -> f64 {
    mu * w * (-mu * w).exp()
}

pub fn theta(mu: f64) -> Result<f64> {
    if !(mu > 1.0) || !mu.is_finite() {
        return Err(Error::invalid(format!("no nontrivial fixpoint for mu = {mu} <= 1")));
    }
    Ok(mu.ln() / mu)
}

#[inline]
pub fn phi_derivative(mu: f64, w: f64) -> f64 {
    mu * (-mu * w).exp() * (1.0 - mu * w)
}

/// Range of `phi_mu` over `[lo, hi]`, using that it increases up to `1/mu`
/// and decreases after.
pub fn phi_interval(mu: f64, lo: f64, hi: f64) -> (f64, f64) {
    let (a, b) = (phi(mu, lo), phi(mu, hi));
    let peak = 1.0 / mu;
    let max = if lo <= peak && peak <= hi { INV_E } else { a.max(b) };
    (a.min(b), max)
}

/// `sup |phi'|` over `[theta - eps, theta + eps]`; fails unless below 1.
pub fn contraction_constant(mu: f64, eps: f64) -> Result<f64> {
    let th = theta(mu)?;
    if !(eps > 0.0) {
        return Err(Error::invalid("eps must be positive"));
    }
    let (lo, hi) = (th - eps, th + eps);
    if lo <= 0.0 {
        return Err(Error::invalid(format!("interval [{lo}, {hi}] leaves (0, inf)")));
    }
    let mut kappa = phi_derivative(mu, lo).abs().max(phi_derivative(mu, hi).abs());
    for c in [1.0 / mu, 2.0 / mu] {
        if lo < c && c < hi {
            kappa = kappa.max(phi_derivative(mu, c).abs());
        }
    }
    if kappa >= 1.0 {
        return Err(Error::ContractionFails { eps, kappa });
    }
    Ok(kappa)
}

/// Largest `eps` of the form `2^-k` (capped at `theta/2`) whose contraction
/// constant is at most `(1 + |1 - ln mu|) / 2`.
pub fn default_contraction_eps(mu: f64) -> Result<f64> {
    let th = theta(mu)?;
    let target = (1.0 + (1.0 - mu.ln()).abs()) / 2.0;
    let mut eps = (th / 2.0).min(0.25);
    for _ in 0..60 {
        if let Ok(k) = contraction_constant(mu, eps) {
            if k <= target {
                return Ok(eps);
            }
        }
        eps /= 2.0;
    }
    Err(Error::Numerical(format!("no contracting neighbourhood found for mu = {mu}")))
}

/// Largest `x >= 1/mu` with `phi(x) = y`, for `0 < y <= 1/e`, by bisection.
pub fn phi_upper_preimage(mu: f64, y: f64) -> Result<f64> {
    if !(y > 0.0 && y <= INV_E) {
        return Err(Error::invalid(format!("no preimage of {y} under phi")));
    }
    let mut lo = 1.0 / mu;
    let mut hi = 2.0 / mu;
    while phi(mu, hi) > y {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::Numerical("preimage search diverged".into()));
        }
    }
    while hi - lo > 1e-12 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if phi(mu, mid) > y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BracketCase {
    /// `mu < e`: the fixpoint sits left of the peak.
    Increasing,
    /// `mu = e`: the fixpoint is the peak.
    Peak,
    /// `e < mu < e^2`: the fixpoint sits right of the peak.
    Decreasing,
}

#[derive(Clone, Debug, Serialize)]
pub struct BracketSequences {
    pub mu: f64,
    pub eps: f64,
    pub case: BracketCase,
    pub theta: f64,
    /// `alphas[m - 1]` is `alpha_m`.
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    /// First index with `beta_m - alpha_m < eps` (1-based).
    pub m_star: usize,
    /// Decreasing case only: first index with `alpha_m > 1/mu` (1-based).
    pub switch_index: Option<usize>,
}

impl BracketSequences {
    pub fn alpha(&self, m: usize) -> f64 {
        self.alphas[m - 1]
    }

    pub fn beta(&self, m: usize) -> f64 {
        self.betas[m - 1]
    }

    /// Largest slack of the containment `phi([a_m, b_m]) in (a_{m+1}, b_{m+1})`
    /// over all steps, as `(min over m of lower slack, min of upper slack)`.
    pub fn containment_slack(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::INFINITY;
        for m in 0..self.alphas.len() - 1 {
            let (mn, mx) = phi_interval(self.mu, self.alphas[m], self.betas[m]);
            lo = lo.min(mn - self.alphas[m + 1]);
            hi = hi.min(self.betas[m + 1] - mx);
        }
        (lo, hi)
    }
}

const MAX_BRACKET_STEPS: usize = 1_000_000;

/// Builds `alpha_m` increasing and `beta_m` decreasing to `theta_mu` with
/// `phi([alpha_m, beta_m])` strictly inside `(alpha_{m+1}, beta_{m+1})`.
pub fn bracket_sequences(mu: f64, alpha1: f64, beta1: f64, eps: f64) -> Result<BracketSequences> {
    let e2 = E * E;
    if !(mu > 1.0 && mu < e2) {
        return Err(Error::invalid(format!("mu = {mu} outside (1, e^2)")));
    }
    if !(eps > 0.0) {
        return Err(Error::invalid("eps must be positive"));
    }
    let th = theta(mu)?;
    let peak = 1.0 / mu;
    if !(alpha1 > 0.0 && alpha1 < th.min(peak)) {
        return Err(Error::invalid(format!(
            "alpha1 = {alpha1} must lie in (0, min(theta, 1/mu)) = (0, {})",
            th.min(peak)
        )));
    }
    if !(beta1 > INV_E) {
        return Err(Error::invalid(format!("beta1 = {beta1} must exceed 1/e")));
    }
    let case = if (mu - E).abs() <= 1e-12 {
        BracketCase::Peak
    } else if mu < E {
        BracketCase::Increasing
    } else {
        BracketCase::Decreasing
    };
    let avg = |x: f64| 0.5 * (x + phi(mu, x));
    let mut alphas = vec![alpha1];
    let mut betas = vec![beta1];
    let mut switch_index = None;

    match case {
        BracketCase::Increasing => {
            if phi(mu, beta1) < phi(mu, alpha1) {
                return Err(Error::invalid("need phi(beta1) >= phi(alpha1)"));
            }
            while betas.last().unwrap() - alphas.last().unwrap() >= eps {
                let m = alphas.len();
                let a = avg(alphas[m - 1]);
                let b = if m == 1 && beta1 > peak { 0.5 * (INV_E + peak) } else { avg(betas[m - 1]) };
                alphas.push(a);
                betas.push(b);
                guard(alphas.len())?;
            }
        }
        BracketCase::Peak => {
            let a2 = avg(alpha1);
            if phi(mu, beta1) <= a2 {
                return Err(Error::invalid("need phi(beta1) > alpha_2"));
            }
            if phi_upper_preimage(mu, phi(mu, a2))? >= beta1 {
                return Err(Error::invalid(
                    "beta1 must exceed the upper preimage of phi(alpha_2); raise alpha1 or beta1",
                ));
            }
            while betas.last().unwrap() - alphas.last().unwrap() >= eps {
                let a = avg(*alphas.last().unwrap());
                let b = phi_upper_preimage(mu, phi(mu, a))?;
                alphas.push(a);
                betas.push(b);
                guard(alphas.len())?;
            }
        }
        BracketCase::Decreasing => {
            let lambda = 0.5 * (th - peak) * E;
            let mut a = alpha1;
            while a <= peak {
                a = lambda * phi(mu, a) + (1.0 - lambda) * a;
                alphas.push(a);
                guard(alphas.len())?;
            }
            let m0 = alphas.len();
            switch_index = Some(m0);
            if m0 >= 2 {
                if phi(mu, beta1) <= alphas[1] {
                    return Err(Error::invalid("need phi(beta1) > alpha_2"));
                }
                let a_sw = alphas[m0 - 1];
                if a_sw >= phi(mu, INV_E) {
                    return Err(Error::invalid("alpha at the switch index exceeds phi(1/e)"));
                }
                // Keep beta_m in (1/e, x*) with phi(x*) = alpha_{m0}, so that
                // phi(beta_m) stays above every alpha up to the switch.
                let hi = beta1.min(phi_upper_preimage(mu, a_sw)?);
                for m in 2..=m0 {
                    let t = (m0 + 1 - m) as f64 / (m0 + 1) as f64;
                    betas.push(INV_E + (hi - INV_E) * t);
                }
            }
            while betas.last().unwrap() - alphas.last().unwrap() >= eps {
                let (a, b) = (*alphas.last().unwrap(), *betas.last().unwrap());
                alphas.push(0.5 * (phi(mu, b) + a));
                betas.push(0.5 * (phi(mu, a) + b));
                guard(alphas.len())?;
            }
        }
    }

    let m_star = alphas.len();
    let seq = BracketSequences { mu, eps, case, theta: th, alphas, betas, m_star, switch_index };
    check_brackets(&seq)?;
    Ok(seq)
}

fn guard(len: usize) -> Result<()> {
    if len > MAX_BRACKET_STEPS {
        return Err(Error::Numerical("bracket sequences failed to converge".into()));
    }
    Ok(())
}

fn check_brackets(s: &BracketSequences) -> Result<()> {
    for m in 0..s.alphas.len() {
        if !(s.alphas[m] < s.theta && s.theta < s.betas[m]) {
            return Err(Error::Invariant(format!("bracket {} does not contain theta", m + 1)));
        }
        if m + 1 < s.alphas.len() {
            if !(s.alphas[m + 1] > s.alphas[m] && s.betas[m + 1] < s.betas[m]) {
                return Err(Error::Invariant(format!("monotonicity fails at m = {}", m + 1)));
            }
            let (mn, mx) = phi_interval(s.mu, s.alphas[m], s.betas[m]);
            if !(mn > s.alphas[m + 1] && mx < s.betas[m + 1]) {
                return Err(Error::Invariant(format!("containment fails at m = {}", m + 1)));
            }
        }
    }
    Ok(())
}

/// Regime label attached to CML convergence reports.
pub fn cml_regime(mu: f64) -> &'static str {
    if mu <= 1.0 {
        "no nontrivial fixpoint"
    } else if mu < E * E {
        "attractive fixpoint"
    } else {
        "no attractive fixpoint - diagnostics only"
    }
}

#[derive(Clone, Debug)]
pub struct CmlOptions {
    pub mu: f64,
    pub radius: u32,
    pub steps: usize,
    pub tol: f64,
    /// Radii of the nested centered windows on which sup-distances are reported.
    pub windows: Vec<i64>,
    /// Keep every `record_every`-th state (0 keeps only the final one).
    pub record_every: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct CmlReport {
    pub regime: &'static str,
    /// Fixpoint the distances refer to (0 when there is none).
    pub target: f64,
    pub windows: Vec<i64>,
    /// `sup_dist[n][k]`: distance to the target on window `k` after `n` steps.
    pub sup_dist: Vec<Vec<f64>>,
    /// `front[n]`: largest centered radius within `tol` of the target, -1 if none.
    pub front: Vec<i64>,
}

pub struct CmlRun {
    pub recorded: Vec<(usize, DensityField)>,
    pub last: DensityField,
    pub report: CmlReport,
}

fn front_radius(field: &DensityField, target: f64, tol: f64) -> i64 {
    let shape = field.shape();
    let cap = shape.max_centered_radius();
    let mut bad = cap + 1;
    for (i, &v) in field.values().iter().enumerate() {
        if (v - target).abs() >= tol {
            bad = bad.min(shape.radius_of(i));
        }
    }
    bad - 1
}

/// Iterates `Xi_{n+1}(x) = phi(delta_R(x; Xi_n))`.
pub fn cml_run(xi0: &DensityField, opts: &CmlOptions) -> Result<CmlRun> {
    if xi0.values().iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::invalid("CML initial values must be finite and >= 0"));
    }
    let target = theta(opts.mu).unwrap_or(0.0);
    let mut cur = xi0.clone();
    let mut report = CmlReport {
        regime: cml_regime(opts.mu),
        target,
        windows: opts.windows.clone(),
        sup_dist: Vec::with_capacity(opts.steps + 1),
        front: Vec::with_capacity(opts.steps + 1),
    };
    let mut recorded = Vec::new();
    let observe = |f: &DensityField, rep: &mut CmlReport| {
        rep.sup_dist.push(opts.windows.iter().map(|&r| f.sup_distance_on_ball(target, r)).collect());
        rep.front.push(front_radius(f, target, opts.tol));
    };
    observe(&cur, &mut report);
    if opts.record_every > 0 {
        recorded.push((0, cur.clone()));
    }
    for n in 1..=opts.steps {
        let mu = opts.mu;
        cur = box_average(&cur, opts.radius).map(|w| phi(mu, w));
        observe(&cur, &mut report);
        if opts.record_every > 0 && n % opts.record_every == 0 {
            recorded.push((n, cur.clone()));
        }
    }
    Ok(CmlRun { recorded, last: cur, report })
}

/// Whether `psi(w) = a w ^ b` lies below `phi_mu` on `[0, 1]`: the analytic
/// conditions plus a dense grid scan.
pub fn cap_linear_below_phi(mu: f64, a: f64, b: f64) -> bool {
    if !(a > 0.0 && b > 0.0 && a < mu) {
        return false;
    }
    // a w <= phi(w) iff w <= ln(mu/a)/mu; the cap must be reached before that,
    // and past the cap phi stays above b until w = 1 by unimodality.
    if b / a > (mu / a).ln() / mu || phi(mu, 1.0) < b {
        return false;
    }
    let n = 20_000;
    (0..=n).all(|i| {
        let w = i as f64 / n as f64;
        (a * w).min(b) <= phi(mu, w) + 1e-15
    })
}

/// `z -> sum_y p^(n)(z, y) min(a^n Xi_0(y), b)`.
pub fn cml_lower_bound(xi0: &DensityField, mu: f64, a: f64, b: f64, n: u32, radius: u32) -> Result<DensityField> {
    if !(a > 1.0) {
        return Err(Error::invalid("lower bound needs a > 1"));
    }
    if !cap_linear_below_phi(mu, a, b) {
        return Err(Error::PsiNotDominated(format!("a w ^ b with a = {a}, b = {b} exceeds phi_{mu}")));
    }
    // Validates the kernel support against the window.
    random_walk_kernel(xi0.shape(), radius, n)?;
    let grow = a.powi(n as i32);
    let mut field = xi0.map(|v| (grow * v).min(b));
    for _ in 0..n {
        field = box_average(&field, radius);
    }
    Ok(field)
}

/// Least-squares slope of `ys` against `xs`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 || n != ys.len() {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Some(sxy / sxx)
}
