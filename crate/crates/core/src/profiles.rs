//! Comparison density profiles: the one-dimensional wave shape `f`, the
//! product profiles `xi_n`, the ring profiles `zeta_k`, and an interval
//! verifier for one-step propagation of a profile band.

use std::io::Write;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::cml::{phi_interval, BracketSequences};
use crate::dynamics::PsiSpec;
use crate::error::{Error, Result};
use crate::lattice::{box_average, Boundary, DensityField, LatticeShape};

/// Ceiling that treats values within `1e-9` (relative) of an integer as that
/// integer, so that `w R` with `w = 1/sqrt(eps0)` does not round up by
/// representation error.
pub fn ceil_int(x: f64) -> i64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r as i64
    } else {
        x.ceil() as i64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveShape {
    /// Growth factor requested by the caller.
    pub a_input: f64,
    /// Growth factor actually used (reduced to `1 + sqrt(eps0)` when `a >= 1.1`).
    pub a: f64,
    pub eps0: f64,
    pub w: f64,
    pub s: f64,
    pub radius: u32,
    /// `ceil(w R)`.
    pub width: i64,
    /// `ceil(s R)`.
    pub shift: i64,
    /// First `y` with `f(y) = 1`.
    ramp_end: i64,
}

impl WaveShape {
    /// Shape with caller-chosen parameters; used for negative controls.
    pub fn with_params(a: f64, eps0: f64, w: f64, s: f64, radius: u32) -> Result<Self> {
        if !(a > 1.0 && eps0 > 0.0 && eps0 < 1.0 && w > 0.0 && s > 0.0 && s <= 1.0) || radius == 0 {
            return Err(Error::invalid("wave shape needs a > 1, eps0 in (0,1), w > 0, s in (0,1], R >= 1"));
        }
        let width = ceil_int(w * radius as f64).max(1);
        let shift = ceil_int(s * radius as f64).max(1);
        let mut y = ceil_int((1.0 - eps0) * width as f64).max(0);
        while y > 0 && eps0 + (y - 1) as f64 / width as f64 >= 1.0 {
            y -= 1;
        }
        while eps0 + (y as f64) / (width as f64) < 1.0 {
            y += 1;
        }
        Ok(WaveShape { a_input: a, a, eps0, w, s, radius, width, shift, ramp_end: y })
    }

    /// `f(x) = min((eps0 + x / ceil(wR)) 1{x >= 0}, 1)`.
    pub fn value(&self, x: i64) -> f64 {
        if x < 0 {
            0.0
        } else if x >= self.ramp_end {
            1.0
        } else {
            self.eps0 + x as f64 / self.width as f64
        }
    }

    /// `sum_{y = lo}^{hi} f(y)`.
    pub fn window_sum(&self, lo: i64, hi: i64) -> f64 {
        let lo = lo.max(0);
        if hi < lo {
            return 0.0;
        }
        let mut total = 0.0;
        let ramp_hi = hi.min(self.ramp_end - 1);
        if ramp_hi >= lo {
            let n = (ramp_hi - lo + 1) as f64;
            total += n * self.eps0 + (lo + ramp_hi) as f64 * n / (2.0 * self.width as f64);
        }
        let flat_lo = lo.max(self.ramp_end);
        if hi >= flat_lo {
            total += (hi - flat_lo + 1) as f64;
        }
        total
    }

    /// Range of `x` outside which the domination inequality is trivial.
    pub fn critical_range(&self) -> (i64, i64) {
        let r = self.radius as i64;
        (-r - self.shift - 1, self.width + r + 1)
    }
}

pub fn build_wave_shape(a: f64, radius: u32) -> Result<WaveShape> {
    if !(a > 1.0) || !a.is_finite() {
        return Err(Error::invalid(format!("growth factor must exceed 1, got {a}")));
    }
    let eps0 = ((a - 1.0) * (a - 1.0)).min(0.01);
    let root = if a >= 1.1 { 0.1 } else { a - 1.0 };
    let a_used = if a >= 1.1 { 1.0 + root } else { a };
    let w = 1.0 / root;
    let s = root / (1.0 + root) - eps0;
    let mut shape = WaveShape::with_params(a_used, eps0, w, s, radius)?;
    shape.a_input = a;
    Ok(shape)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arithmetic {
    /// Floating point with `1e-12` slack.
    Float,
    /// Exact rationals built from the binary values of `a` and `eps0`.
    Exact,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DominationReport {
    pub holds: bool,
    pub first_failure: Option<i64>,
    /// `min_x (a delta_R(x; f) - f(x + shift))` in floating point.
    pub min_margin: f64,
    pub range: (i64, i64),
}

fn rational(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

fn exact_window_sum(shape: &WaveShape, eps0: &BigRational, lo: i64, hi: i64) -> BigRational {
    let lo = lo.max(0);
    let mut total = BigRational::zero();
    if hi < lo {
        return total;
    }
    let width = BigRational::from_integer(BigInt::from(shape.width));
    let ramp_hi = hi.min(shape.ramp_end - 1);
    if ramp_hi >= lo {
        let n = BigRational::from_integer(BigInt::from(ramp_hi - lo + 1));
        let ends = BigRational::from_integer(BigInt::from(lo + ramp_hi));
        let two = BigRational::from_integer(BigInt::from(2));
        total += &n * eps0 + ends * n / (two * &width);
    }
    let flat_lo = lo.max(shape.ramp_end);
    if hi >= flat_lo {
        total += BigRational::from_integer(BigInt::from(hi - flat_lo + 1));
    }
    total
}

fn exact_value(shape: &WaveShape, eps0: &BigRational, x: i64) -> BigRational {
    if x < 0 {
        BigRational::zero()
    } else {
        let v = eps0 + BigRational::new(BigInt::from(x), BigInt::from(shape.width));
        if v >= BigRational::one() {
            BigRational::one()
        } else {
            v
        }
    }
}

/// Checks `a delta_R(x; f) >= f(x + ceil(sR))` over the critical range.
pub fn verify_density_domination(shape: &WaveShape, arithmetic: Arithmetic) -> DominationReport {
    let r = shape.radius as i64;
    let vol = (2 * r + 1) as f64;
    let range = shape.critical_range();
    let mut first_failure = None;
    let mut min_margin = f64::INFINITY;
    let exact = (arithmetic == Arithmetic::Exact).then(|| (rational(shape.a), rational(shape.eps0)));
    for x in range.0..=range.1 {
        let lhs = shape.a * shape.window_sum(x - r, x + r) / vol;
        let rhs = shape.value(x + shape.shift);
        let margin = lhs - rhs;
        min_margin = min_margin.min(margin);
        let ok = match &exact {
            None => margin >= -1e-12,
            Some((a, eps0)) => {
                let v = BigRational::from_integer(BigInt::from(2 * r + 1));
                a * exact_window_sum(shape, eps0, x - r, x + r) >= v * exact_value(shape, eps0, x + shape.shift)
            }
        };
        if !ok && first_failure.is_none() {
            first_failure = Some(x);
        }
    }
    DominationReport { holds: first_failure.is_none(), first_failure, min_margin, range }
}

/// Smallest `R0 <= r_max` such that the domination inequality holds for every
/// `R` in `[R0, r_max]`, by a descending scan; `None` if it fails at `r_max`.
///
/// The predicate is not monotone in `R`: the rounding in `ceil(sR)` opens
/// periodic failure bands below the asymptotic threshold, so the first
/// passing radius is not an `R0` in the "for all larger R" sense.
pub fn find_empirical_r0(a: f64, r_max: u32) -> Result<Option<u32>> {
    if r_max == 0 {
        return Err(Error::invalid("r_max must be positive"));
    }
    let holds =
        |r: u32| -> Result<bool> { Ok(verify_density_domination(&build_wave_shape(a, r)?, Arithmetic::Float).holds) };
    let mut r0 = None;
    for r in (1..=r_max).rev() {
        if !holds(r)? {
            break;
        }
        r0 = Some(r);
    }
    Ok(r0)
}

/// A deterministic function on `Z^d` used as a density bound.
pub trait Profile: Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[i64]) -> f64;
    /// Sup-norm radius of a centered ball containing the support, `None`
    /// when the support is unbounded.
    fn support_radius(&self) -> Option<i64>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstantProfile {
    pub dim: usize,
    pub value: f64,
}

impl Profile for ConstantProfile {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, _x: &[i64]) -> f64 {
        self.value
    }

    fn support_radius(&self) -> Option<i64> {
        if self.value == 0.0 {
            Some(-1)
        } else {
            None
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct XiMinusProfile {
    pub dim: usize,
    pub wave: WaveShape,
    pub r_init: i64,
    pub b: f64,
    pub n: i64,
}

impl XiMinusProfile {
    pub fn plateau_radius(&self) -> i64 {
        self.r_init + self.n * self.wave.shift
    }

    pub fn outer_radius(&self) -> i64 {
        self.plateau_radius() + self.wave.width
    }

    pub fn floor(&self) -> f64 {
        self.b * self.wave.eps0.powi(self.dim as i32)
    }

    pub fn next(&self) -> XiMinusProfile {
        XiMinusProfile { n: self.n + 1, ..self.clone() }
    }

    pub fn at_generation(&self, n: i64) -> XiMinusProfile {
        XiMinusProfile { n, ..self.clone() }
    }

    fn check_invariants(&self) -> Result<()> {
        let d = self.dim;
        let axis = |t: i64| {
            let mut x = vec![0i64; d];
            x[0] = t;
            x
        };
        if self.value(&axis(self.plateau_radius())) != self.b || self.value(&vec![0; d]) != self.b {
            return Err(Error::Invariant("xi plateau value differs from b".into()));
        }
        if self.value(&axis(self.outer_radius() + 1)) != 0.0 || !(self.value(&axis(self.outer_radius())) > 0.0) {
            return Err(Error::Invariant("xi support radius is wrong".into()));
        }
        let corner = vec![self.outer_radius(); d];
        if (self.value(&corner) - self.floor()).abs() > 1e-15 * self.b {
            return Err(Error::Invariant("xi floor differs from b eps0^d".into()));
        }
        Ok(())
    }
}

impl Profile for XiMinusProfile {
    fn dim(&self) -> usize {
        self.dim
    }

    /// `b prod_i f(R_init + n ceil(sR) + ceil(wR) - |x_i|)`.
    fn value(&self, x: &[i64]) -> f64 {
        let top = self.outer_radius();
        x.iter().fold(self.b, |acc, &xi| acc * self.wave.value(top - xi.abs()))
    }

    fn support_radius(&self) -> Option<i64> {
        Some(self.outer_radius())
    }
}

pub fn build_xi_minus(dim: usize, wave: &WaveShape, r_init: i64, b: f64, n: i64) -> Result<XiMinusProfile> {
    if r_init <= 2 * wave.radius as i64 {
        return Err(Error::invalid(format!("R_init = {r_init} must exceed 2R = {}", 2 * wave.radius)));
    }
    if !(b > 0.0 && b <= 1.0) {
        return Err(Error::invalid("b must lie in (0, 1]"));
    }
    if dim == 0 || dim > crate::lattice::MAX_DIM || n < 0 {
        return Err(Error::invalid("bad dimension or generation"));
    }
    let xi = XiMinusProfile { dim, wave: wave.clone(), r_init, b, n };
    xi.check_invariants()?;
    Ok(xi)
}

/// Centered zero-padded box covering `[-half, half]^d`.
fn covering_shape(dim: usize, half: i64) -> Result<LatticeShape> {
    LatticeShape::cube(dim, (2 * half + 1) as usize, Boundary::ZeroPadded)
}

fn tabulate(shape: &LatticeShape, f: impl Fn(&[i64]) -> f64) -> DensityField {
    let values = (0..shape.len()).map(|i| f(&shape.coords(i))).collect();
    DensityField::new(shape.clone(), values).expect("length matches")
}

/// Checks `a^d delta_R(x; xi_n) >= xi_{n+1}(x)` on the support of
/// `xi_{n+1}`, summing the ball directly. Returns the smallest margin.
pub fn verify_xi_growth(xi: &XiMinusProfile) -> Result<f64> {
    let next = xi.next();
    let r = xi.wave.radius;
    let half = next.outer_radius() + r as i64;
    let shape = covering_shape(xi.dim, half)?;
    let dens = box_average(&tabulate(&shape, |x| xi.value(x)), r);
    let ad = xi.wave.a.powi(xi.dim as i32);
    let mut worst = f64::INFINITY;
    for i in 0..shape.len() {
        if shape.radius_of(i) <= next.outer_radius() {
            let x = shape.coords(i);
            worst = worst.min(ad * dens.get(i) - next.value(&x));
        }
    }
    Ok(worst)
}

/// The piecewise-constant ring profiles around a plateau, with the product
/// profile as outer lower tail.
#[derive(Clone, Debug, Serialize)]
pub struct RingProfile {
    pub radius: u32,
    pub k: i64,
    pub m0: usize,
    /// `R_dens(k) = R_dens + k ceil(sR)`.
    pub plateau_radius: i64,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub tail: XiMinusProfile,
    pub upper_tail: f64,
}

impl RingProfile {
    /// 0 on the plateau, `j` on the `j`-th ring, `m0 + 1` beyond.
    fn ring(&self, x: &[i64]) -> usize {
        let r = x.iter().map(|c| c.abs()).max().unwrap_or(0);
        if r <= self.plateau_radius {
            return 0;
        }
        let j = (r - self.plateau_radius + self.radius as i64 - 1) / self.radius as i64;
        (j as usize).min(self.m0 + 1)
    }

    pub fn lower(&self, x: &[i64]) -> f64 {
        match self.ring(x) {
            0 => self.alphas[self.m0 - 1],
            j if j <= self.m0 => self.alphas[self.m0 - j],
            _ => self.tail.value(x),
        }
    }

    pub fn upper(&self, x: &[i64]) -> f64 {
        match self.ring(x) {
            0 => self.betas[self.m0 - 1],
            j if j <= self.m0 => self.betas[self.m0 - j],
            _ => self.upper_tail,
        }
    }

    pub fn lower_profile(&self) -> RingSide<'_> {
        RingSide { ring: self, upper: false }
    }

    pub fn upper_profile(&self) -> RingSide<'_> {
        RingSide { ring: self, upper: true }
    }
}

pub struct RingSide<'a> {
    ring: &'a RingProfile,
    upper: bool,
}

impl Profile for RingSide<'_> {
    fn dim(&self) -> usize {
        self.ring.tail.dim
    }

    fn value(&self, x: &[i64]) -> f64 {
        if self.upper {
            self.ring.upper(x)
        } else {
            self.ring.lower(x)
        }
    }

    fn support_radius(&self) -> Option<i64> {
        if self.upper {
            None
        } else {
            Some(self.ring.tail.outer_radius())
        }
    }
}

/// Ring profiles `zeta_k`: plateau `[alpha_m0, beta_m0]` inside
/// `R_dens + k ceil(sR)`, then `m0` shells of thickness `R`, then the
/// product tail with `R_init = R_dens + m0 R` and `b = alpha_1`.
pub fn build_zeta_profiles(
    dim: usize,
    wave: &WaveShape,
    r_dens: i64,
    m0: usize,
    brackets: &BracketSequences,
    k: i64,
) -> Result<RingProfile> {
    if m0 == 0 || brackets.alphas.len() < m0 {
        return Err(Error::invalid(format!("bracket sequences have {} terms, need m0 = {m0}", brackets.alphas.len())));
    }
    let radius = wave.radius;
    let tail = build_xi_minus(dim, wave, r_dens + m0 as i64 * radius as i64, brackets.alpha(1), k)?;
    Ok(RingProfile {
        radius,
        k,
        m0,
        plateau_radius: r_dens + k * wave.shift,
        alphas: brackets.alphas[..m0].to_vec(),
        betas: brackets.betas[..m0].to_vec(),
        tail,
        upper_tail: brackets.beta(1).max(1.0),
    })
}

pub struct ProfilePair<'a> {
    pub lower: &'a dyn Profile,
    pub upper: &'a dyn Profile,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProfileMap {
    Phi { mu: f64 },
    Psi { spec: PsiSpec },
}

impl ProfileMap {
    /// `(min, max)` of the map over `[lo, hi]`.
    pub fn range(&self, lo: f64, hi: f64) -> (f64, f64) {
        match self {
            ProfileMap::Phi { mu } => phi_interval(*mu, lo, hi),
            ProfileMap::Psi { spec } => (spec.eval(lo), spec.eval(hi)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpperCheck {
    Full,
    /// The next upper profile is trivial; only the lower inequality is checked.
    LowerOnly,
}

#[derive(Clone, Debug, Serialize)]
pub struct PointMargin {
    pub x: Vec<i64>,
    pub lower_margin: f64,
    pub upper_margin: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ProfileVerdict {
    /// Largest `delta` for which both inequalities hold at every point.
    pub delta: f64,
    pub worst_x: Vec<i64>,
    pub points: usize,
    #[serde(skip)]
    pub margins: Vec<PointMargin>,
}

impl ProfileVerdict {
    pub fn certifies(&self, delta: f64) -> bool {
        self.delta > 0.0 && self.delta >= delta - 1e-12
    }

    pub fn write_ndjson<W: Write>(&self, mut w: W) -> Result<()> {
        for m in &self.margins {
            serde_json::to_writer(&mut w, m)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Certifies `(1 + delta) next.lower(x) <= V^{-d} sum_{y in B_R(x)} F(zeta(y))
/// <= (1 - delta) next.upper(x)` for every `zeta` between `pair.lower` and
/// `pair.upper`, at every `x` in the support of `next.lower`.
pub fn verify_profile_pair(
    pair: &ProfilePair<'_>,
    map: ProfileMap,
    radius: u32,
    next: &ProfilePair<'_>,
    upper: UpperCheck,
    keep_margins: bool,
) -> Result<ProfileVerdict> {
    let dim = next.lower.dim();
    if pair.lower.dim() != dim || pair.upper.dim() != dim || next.upper.dim() != dim {
        return Err(Error::GeometryMismatch("profiles have different dimensions".into()));
    }
    let support =
        next.lower.support_radius().ok_or_else(|| Error::invalid("next lower profile must have bounded support"))?;
    if support < 0 {
        return Ok(ProfileVerdict { delta: f64::INFINITY, worst_x: vec![], points: 0, margins: vec![] });
    }
    let half = support + radius as i64;
    let shape = covering_shape(dim, half)?;
    let mut mins = Vec::with_capacity(shape.len());
    let mut maxs = Vec::with_capacity(shape.len());
    for i in 0..shape.len() {
        let y = shape.coords(i);
        let (lo, hi) = (pair.lower.value(&y), pair.upper.value(&y));
        if lo > hi {
            return Err(Error::invalid(format!("lower exceeds upper at {y:?}")));
        }
        let (mn, mx) = map.range(lo, hi);
        mins.push(mn);
        maxs.push(mx);
    }
    let lo_sum = box_average(&DensityField::new(shape.clone(), mins)?, radius);
    let hi_sum = box_average(&DensityField::new(shape.clone(), maxs)?, radius);
    let mut delta = f64::INFINITY;
    let mut worst_x = Vec::new();
    let mut points = 0;
    let mut margins = Vec::new();
    for i in 0..shape.len() {
        if shape.radius_of(i) > support {
            continue;
        }
        let x = shape.coords(i);
        let nl = next.lower.value(&x);
        if nl <= 0.0 {
            continue;
        }
        points += 1;
        let lm = lo_sum.get(i) / nl - 1.0;
        let um = match upper {
            UpperCheck::Full => Some(1.0 - hi_sum.get(i) / next.upper.value(&x)),
            UpperCheck::LowerOnly => None,
        };
        let m = um.map_or(lm, |u| lm.min(u));
        if m < delta {
            delta = m;
            worst_x = x.clone();
        }
        if keep_margins {
            margins.push(PointMargin { x, lower_margin: lm, upper_margin: um });
        }
    }
    Ok(ProfileVerdict { delta, worst_x, points, margins })
}

/// CSV dump `x1..xd, lower, upper` over the centered box of radius `half`.
pub fn write_profile_csv<W: Write>(pair: &ProfilePair<'_>, half: i64, mut w: W) -> Result<()> {
    let dim = pair.lower.dim();
    let shape = covering_shape(dim, half)?;
    let cols: Vec<String> = (1..=dim).map(|i| format!("x{i}")).collect();
    writeln!(w, "{},lower,upper", cols.join(","))?;
    for i in 0..shape.len() {
        let x = shape.coords(i);
        let xs: Vec<String> = x.iter().map(|c| c.to_string()).collect();
        writeln!(w, "{},{},{}", xs.join(","), pair.lower.value(&x), pair.upper.value(&x))?;
    }
    Ok(())
}
