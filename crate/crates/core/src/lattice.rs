//! Finite windows of Z^d, occupancy configurations and local density fields.
//!
//! Sites are stored row-major (last axis fastest). Coordinates are centered:
//! along an axis of side `L` they run over `-(L/2) ..= L - 1 - L/2`, so the
//! site with all-zero coordinates is the middle of the window.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    Periodic,
    ZeroPadded,
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Boundary::Periodic => "periodic",
            Boundary::ZeroPadded => "zero-padded",
        })
    }
}

impl FromStr for Boundary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "periodic" | "torus" => Ok(Boundary::Periodic),
            "zero-padded" | "zero" | "open" => Ok(Boundary::ZeroPadded),
            other => Err(Error::invalid(format!("unknown boundary '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeShape {
    sides: Vec<usize>,
    boundary: Boundary,
}

impl LatticeShape {
    pub fn new(sides: Vec<usize>, boundary: Boundary) -> Result<Self> {
        if sides.is_empty() || sides.len() > MAX_DIM {
            return Err(Error::invalid(format!("dimension must be in 1..={MAX_DIM}, got {}", sides.len())));
        }
        if sides.contains(&0) {
            return Err(Error::invalid("window sides must be positive"));
        }
        let mut total: usize = 1;
        for &s in &sides {
            total = total.checked_mul(s).ok_or_else(|| Error::invalid("window has too many sites"))?;
        }
        if total > u32::MAX as usize {
            return Err(Error::invalid("window has too many sites"));
        }
        Ok(LatticeShape { sides, boundary })
    }

    pub fn cube(dim: usize, side: usize, boundary: Boundary) -> Result<Self> {
        Self::new(vec![side; dim], boundary)
    }

    pub fn dim(&self) -> usize {
        self.sides.len()
    }

    pub fn sides(&self) -> &[usize] {
        &self.sides
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn len(&self) -> usize {
        self.sides.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn offset(&self, axis: usize) -> i64 {
        (self.sides[axis] / 2) as i64
    }

    /// Centered coordinates of a site index.
    pub fn coords(&self, index: usize) -> Vec<i64> {
        let mut out = vec![0i64; self.dim()];
        let mut rest = index;
        for axis in (0..self.dim()).rev() {
            let side = self.sides[axis];
            out[axis] = (rest % side) as i64 - self.offset(axis);
            rest /= side;
        }
        out
    }

    /// Index of the site with the given centered coordinates. Periodic windows
    /// wrap; zero-padded windows return `None` outside.
    pub fn index(&self, coords: &[i64]) -> Option<usize> {
        debug_assert_eq!(coords.len(), self.dim());
        let mut idx = 0usize;
        for (axis, &c) in coords.iter().enumerate() {
            let side = self.sides[axis] as i64;
            let mut p = c + self.offset(axis);
            match self.boundary {
                Boundary::Periodic => p = p.rem_euclid(side),
                Boundary::ZeroPadded => {
                    if p < 0 || p >= side {
                        return None;
                    }
                }
            }
            idx = idx * self.sides[axis] + p as usize;
        }
        Some(idx)
    }

    pub fn origin(&self) -> usize {
        self.index(&vec![0; self.dim()]).expect("origin lies in every window")
    }

    /// Sup-norm of the centered coordinates of a site.
    pub fn radius_of(&self, index: usize) -> i64 {
        self.coords(index).iter().map(|c| c.abs()).max().unwrap_or(0)
    }

    /// Largest `r` such that the centered sup-norm ball of radius `r` fits in
    /// the window without wrapping.
    pub fn max_centered_radius(&self) -> i64 {
        (0..self.dim())
            .map(|a| {
                let off = self.offset(a);
                off.min(self.sides[a] as i64 - 1 - off)
            })
            .min()
            .unwrap_or(0)
    }

    /// Sup-norm distance between two sites, measured on the torus when periodic.
    pub fn distance(&self, a: usize, b: usize) -> i64 {
        let ca = self.coords(a);
        let cb = self.coords(b);
        let mut best = 0;
        for axis in 0..self.dim() {
            let mut d = (ca[axis] - cb[axis]).abs();
            if self.boundary == Boundary::Periodic {
                d = d.min(self.sides[axis] as i64 - d);
            }
            best = best.max(d);
        }
        best
    }

    /// Indices of all sites whose centered sup-norm radius is at most `r`.
    pub fn ball_indices(&self, center: &[i64], r: i64) -> Vec<usize> {
        let d = self.dim();
        let mut out = Vec::new();
        let mut offs = vec![-r; d];
        let mut pt = vec![0i64; d];
        loop {
            for axis in 0..d {
                pt[axis] = center[axis] + offs[axis];
            }
            if let Some(i) = self.index(&pt) {
                out.push(i);
            }
            let mut axis = d;
            loop {
                if axis == 0 {
                    out.sort_unstable();
                    out.dedup();
                    return out;
                }
                axis -= 1;
                offs[axis] += 1;
                if offs[axis] <= r {
                    break;
                }
                offs[axis] = -r;
            }
        }
    }

    fn header(&self) -> String {
        let sides: Vec<String> = self.sides.iter().map(|s| s.to_string()).collect();
        format!("dim={} sides={} boundary={}", self.dim(), sides.join(","), self.boundary)
    }

    fn parse_header(text: &str) -> Result<Self> {
        let mut dim = None;
        let mut sides = None;
        let mut boundary = None;
        for tok in text.split_whitespace() {
            if let Some(v) = tok.strip_prefix("dim=") {
                dim = v.parse::<usize>().ok();
            } else if let Some(v) = tok.strip_prefix("sides=") {
                sides = v.split(',').map(|s| s.parse::<usize>()).collect::<std::result::Result<Vec<_>, _>>().ok();
            } else if let Some(v) = tok.strip_prefix("boundary=") {
                boundary = Some(v.parse::<Boundary>()?);
            }
        }
        let (Some(dim), Some(sides), Some(boundary)) = (dim, sides, boundary) else {
            return Err(Error::Snapshot(format!("bad header '{text}'")));
        };
        if sides.len() != dim {
            return Err(Error::Snapshot("header dim does not match sides".into()));
        }
        LatticeShape::new(sides, boundary)
    }
}

/// Number of sites in a sup-norm ball of radius `r` in `d` dimensions.
pub fn ball_volume(r: u32, d: usize) -> Result<u64> {
    let side = 2 * r as u64 + 1;
    side.checked_pow(d as u32).ok_or_else(|| Error::invalid(format!("ball volume overflows for R={r}, d={d}")))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Configuration {
    shape: LatticeShape,
    occ: Vec<u8>,
}

impl Configuration {
    pub fn empty(shape: LatticeShape) -> Self {
        let n = shape.len();
        Configuration { shape, occ: vec![0; n] }
    }

    pub fn all_ones(shape: LatticeShape) -> Self {
        let n = shape.len();
        Configuration { shape, occ: vec![1; n] }
    }

    pub fn single_site(shape: LatticeShape, coords: &[i64]) -> Result<Self> {
        if coords.len() != shape.dim() {
            return Err(Error::invalid("coordinate dimension mismatch"));
        }
        let idx = shape.index(coords).ok_or_else(|| Error::invalid("site outside the window"))?;
        let mut c = Self::empty(shape);
        c.occ[idx] = 1;
        Ok(c)
    }

    pub fn product_bernoulli<R: Rng + ?Sized>(shape: LatticeShape, p: f64, rng: &mut R) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!("Bernoulli density {p} outside [0,1]")));
        }
        let occ = (0..shape.len()).map(|_| u8::from(rng.random::<f64>() < p)).collect();
        Ok(Configuration { shape, occ })
    }

    pub fn from_bits(shape: LatticeShape, occ: Vec<u8>) -> Result<Self> {
        if occ.len() != shape.len() {
            return Err(Error::invalid(format!("expected {} sites, got {}", shape.len(), occ.len())));
        }
        if occ.iter().any(|&b| b > 1) {
            return Err(Error::invalid("occupancy values must be 0 or 1"));
        }
        Ok(Configuration { shape, occ })
    }

    pub fn shape(&self) -> &LatticeShape {
        &self.shape
    }

    pub fn bits(&self) -> &[u8] {
        &self.occ
    }

    pub fn get(&self, index: usize) -> bool {
        self.occ[index] != 0
    }

    pub fn set(&mut self, index: usize, value: bool) {
        self.occ[index] = u8::from(value);
    }

    pub fn count(&self) -> usize {
        self.occ.iter().map(|&b| b as usize).sum()
    }

    pub fn is_extinct(&self) -> bool {
        self.occ.iter().all(|&b| b == 0)
    }

    pub fn occupied(&self) -> impl Iterator<Item = usize> + '_ {
        self.occ.iter().enumerate().filter(|(_, &b)| b != 0).map(|(i, _)| i)
    }

    /// `self <= other` sitewise.
    pub fn dominated_by(&self, other: &Configuration) -> bool {
        self.occ.iter().zip(&other.occ).all(|(&a, &b)| a <= b)
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# barw snapshot {}", self.shape.header())?;
        let width = *self.shape.sides.last().unwrap();
        for row in self.occ.chunks(width) {
            let line: String = row.iter().map(|&b| if b != 0 { '1' } else { '0' }).collect();
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Snapshot("empty snapshot".into()))??;
        let header =
            header.strip_prefix("# barw snapshot").ok_or_else(|| Error::Snapshot("missing snapshot header".into()))?;
        let shape = LatticeShape::parse_header(header)?;
        let mut occ = Vec::with_capacity(shape.len());
        for line in lines {
            for ch in line?.trim().chars() {
                match ch {
                    '0' => occ.push(0),
                    '1' => occ.push(1),
                    other => return Err(Error::Snapshot(format!("unexpected character '{other}'"))),
                }
            }
        }
        Configuration::from_bits(shape, occ).map_err(|e| Error::Snapshot(e.to_string()))
    }

    /// Binary PGM (maxval 1) for windows of dimension at most 2.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> Result<()> {
        if self.shape.dim() > 2 {
            return Err(Error::invalid("PGM snapshots need dimension 1 or 2"));
        }
        let width = *self.shape.sides.last().unwrap();
        let height = self.shape.len() / width;
        write!(w, "P5\n# barw {}\n{width} {height}\n1\n", self.shape.header())?;
        w.write_all(&self.occ)?;
        Ok(())
    }

    pub fn read_pgm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut next_line = || -> Result<String> {
            let start = pos;
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            if pos >= bytes.len() {
                return Err(Error::Snapshot("truncated PGM header".into()));
            }
            pos += 1;
            Ok(String::from_utf8_lossy(&bytes[start..pos - 1]).into_owned())
        };
        if next_line()? != "P5" {
            return Err(Error::Snapshot("not a P5 PGM".into()));
        }
        let comment = next_line()?;
        let header =
            comment.strip_prefix("# barw").ok_or_else(|| Error::Snapshot("missing barw header comment".into()))?;
        let shape = LatticeShape::parse_header(header)?;
        let _dims = next_line()?;
        let _maxval = next_line()?;
        let body = bytes[pos..].to_vec();
        Configuration::from_bits(shape, body).map_err(|e| Error::Snapshot(e.to_string()))
    }
}

/// Ways of building the time-0 configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialCondition {
    SingleSite,
    AllOnes,
    ProductBernoulli { p: f64 },
}

impl InitialCondition {
    pub fn build<R: Rng + ?Sized>(&self, shape: &LatticeShape, rng: &mut R) -> Result<Configuration> {
        match self {
            InitialCondition::SingleSite => Configuration::single_site(shape.clone(), &vec![0; shape.dim()]),
            InitialCondition::AllOnes => Ok(Configuration::all_ones(shape.clone())),
            InitialCondition::ProductBernoulli { p } => Configuration::product_bernoulli(shape.clone(), *p, rng),
        }
    }
}

impl FromStr for InitialCondition {
    type Err = Error;

    /// Accepts `single`, `ones` or `bernoulli:p`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" | "single-site" => Ok(InitialCondition::SingleSite),
            "ones" | "all-ones" => Ok(InitialCondition::AllOnes),
            _ => {
                let p = s
                    .strip_prefix("bernoulli:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| Error::invalid(format!("unknown initial condition '{s}'")))?;
                Ok(InitialCondition::ProductBernoulli { p })
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityField {
    shape: LatticeShape,
    values: Vec<f64>,
}

impl DensityField {
    pub fn new(shape: LatticeShape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::invalid("field length does not match the window"));
        }
        Ok(DensityField { shape, values })
    }

    pub fn constant(shape: LatticeShape, value: f64) -> Self {
        let n = shape.len();
        DensityField { shape, values: vec![value; n] }
    }

    pub fn shape(&self) -> &LatticeShape {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, index: usize) -> f64 {
        self.values[index]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> DensityField {
        DensityField { shape: self.shape.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// `sup |self - target|` over the centered ball of radius `r`.
    pub fn sup_distance_on_ball(&self, target: f64, r: i64) -> f64 {
        let mut best = 0.0f64;
        for (i, &v) in self.values.iter().enumerate() {
            if self.shape.radius_of(i) <= r {
                best = best.max((v - target).abs());
            }
        }
        best
    }
}

fn check_volume(r: u32, d: usize) -> Result<u64> {
    let vol = ball_volume(r, d)?;
    if vol > u32::MAX as u64 {
        return Err(Error::invalid(format!("ball volume {vol} too large")));
    }
    Ok(vol)
}

/// Iterates over the lines of the window along `axis`, handing each line's
/// base index and stride to `f`.
fn for_each_line(shape: &LatticeShape, axis: usize, mut f: impl FnMut(usize, usize)) {
    let sides = shape.sides();
    let stride: usize = sides[axis + 1..].iter().product();
    let outer: usize = sides[..axis].iter().product();
    let len = sides[axis];
    for o in 0..outer {
        for i in 0..stride {
            f(o * len * stride + i, stride);
        }
    }
}

/// Sup-norm window sums `sum_{y in B_R(x)} data(y)` computed one axis at a
/// time with prefix sums.
pub fn window_sums(shape: &LatticeShape, data: &[u32], r: u32) -> Vec<u32> {
    let mut cur = data.to_vec();
    let mut next = vec![0u32; cur.len()];
    let r = r as usize;
    let width = 2 * r + 1;
    let mut line = Vec::new();
    let mut prefix = Vec::new();
    for axis in 0..shape.dim() {
        let len = shape.sides()[axis];
        for_each_line(shape, axis, |base, stride| {
            line.clear();
            line.extend((0..len).map(|j| cur[base + j * stride]));
            prefix.clear();
            prefix.push(0u64);
            let mut acc = 0u64;
            for &v in &line {
                acc += v as u64;
                prefix.push(acc);
            }
            let total = acc;
            for j in 0..len {
                let s = match shape.boundary() {
                    Boundary::ZeroPadded => {
                        let lo = j.saturating_sub(r);
                        let hi = (j + r).min(len - 1);
                        prefix[hi + 1] - prefix[lo]
                    }
                    Boundary::Periodic => {
                        let full = (width / len) as u64;
                        let rem = width % len;
                        let start = (j as i64 - r as i64).rem_euclid(len as i64) as usize;
                        let partial = if start + rem <= len {
                            prefix[start + rem] - prefix[start]
                        } else {
                            total - prefix[start] + prefix[start + rem - len]
                        };
                        full * total + partial
                    }
                };
                next[base + j * stride] = s as u32;
            }
        });
        std::mem::swap(&mut cur, &mut next);
    }
    cur
}

/// Occupied counts `sum_{y in B_R(x)} eta(y)` for every site.
pub fn window_counts(config: &Configuration, r: u32) -> Result<Vec<u32>> {
    check_volume(r, config.shape().dim())?;
    let data: Vec<u32> = config.bits().iter().map(|&b| b as u32).collect();
    Ok(window_sums(config.shape(), &data, r))
}

/// Local density `V^{-d} * sum_{y in B_R(x)} eta(y)`.
pub fn compute_density(config: &Configuration, r: u32) -> Result<DensityField> {
    let vol = check_volume(r, config.shape().dim())? as f64;
    let counts = window_counts(config, r)?;
    Ok(DensityField { shape: config.shape().clone(), values: counts.into_iter().map(|c| c as f64 / vol).collect() })
}

/// Ball average of a real field, summed directly along each axis.
pub fn box_average(field: &DensityField, r: u32) -> DensityField {
    let shape = field.shape();
    let r = r as i64;
    let width = (2 * r + 1) as f64;
    let mut cur = field.values.clone();
    let mut next = vec![0.0; cur.len()];
    let mut line = Vec::new();
    for axis in 0..shape.dim() {
        let len = shape.sides()[axis] as i64;
        for_each_line(shape, axis, |base, stride| {
            line.clear();
            line.extend((0..len as usize).map(|j| cur[base + j * stride]));
            for j in 0..len {
                let mut s = 0.0;
                for k in j - r..=j + r {
                    match shape.boundary() {
                        Boundary::Periodic => s += line[k.rem_euclid(len) as usize],
                        Boundary::ZeroPadded => {
                            if (0..len).contains(&k) {
                                s += line[k as usize];
                            }
                        }
                    }
                }
                next[base + j as usize * stride] = s / width;
            }
        });
        std::mem::swap(&mut cur, &mut next);
    }
    DensityField { shape: shape.clone(), values: cur }
}

/// n-step transition probabilities `p^(n)(0, .)` of the walk that jumps
/// uniformly into `B_R`.
pub fn random_walk_kernel(shape: &LatticeShape, r: u32, n: u32) -> Result<DensityField> {
    let support = r as i64 * n as i64;
    let half = shape.max_centered_radius();
    if shape.boundary() == Boundary::ZeroPadded && support > half {
        return Err(Error::KernelExceedsWindow { support, half_width: half });
    }
    let mut values = vec![0.0; shape.len()];
    values[shape.origin()] = 1.0;
    let mut field = DensityField { shape: shape.clone(), values };
    for _ in 0..n {
        field = box_average(&field, r);
    }
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_counts(c: &Configuration, r: i64) -> Vec<u32> {
        let shape = c.shape();
        let d = shape.dim();
        (0..shape.len())
            .map(|i| {
                let x = shape.coords(i);
                let mut total = 0;
                let mut offs = vec![-r; d];
                'outer: loop {
                    let y: Vec<i64> = (0..d).map(|a| x[a] + offs[a]).collect();
                    if let Some(j) = shape.index(&y) {
                        total += c.bits()[j] as u32;
                    }
                    let mut a = d;
                    loop {
                        if a == 0 {
                            break 'outer;
                        }
                        a -= 1;
                        offs[a] += 1;
                        if offs[a] <= r {
                            break;
                        }
                        offs[a] = -r;
                    }
                }
                total
            })
            .collect()
    }

    #[test]
    fn coords_roundtrip_and_origin() {
        let s = LatticeShape::new(vec![4, 5, 3], Boundary::Periodic).unwrap();
        for i in 0..s.len() {
            assert_eq!(s.index(&s.coords(i)), Some(i));
        }
        assert_eq!(s.coords(s.origin()), vec![0, 0, 0]);
        let line = LatticeShape::cube(1, 1000, Boundary::Periodic).unwrap();
        assert_eq!(line.origin(), 500);
        assert_eq!(line.max_centered_radius(), 499);
    }

    #[test]
    fn counts_match_naive_on_small_windows() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for boundary in [Boundary::Periodic, Boundary::ZeroPadded] {
            for sides in [vec![7], vec![5, 6], vec![3, 4, 5], vec![2]] {
                let shape = LatticeShape::new(sides, boundary).unwrap();
                let c = Configuration::product_bernoulli(shape, 0.4, &mut rng).unwrap();
                for r in 0..4 {
                    assert_eq!(window_counts(&c, r).unwrap(), naive_counts(&c, r as i64));
                }
            }
        }
    }

    #[test]
    fn ball_volume_values() {
        assert_eq!(ball_volume(10, 1).unwrap(), 21);
        assert_eq!(ball_volume(3, 3).unwrap(), 343);
        assert!(ball_volume(u32::MAX, 3).is_err());
    }

    #[test]
    fn kernel_sums_to_one_and_is_uniform_after_one_step() {
        let shape = LatticeShape::cube(1, 41, Boundary::ZeroPadded).unwrap();
        let k = random_walk_kernel(&shape, 2, 1).unwrap();
        assert!((k.sum() - 1.0).abs() < 1e-14);
        let o = shape.origin();
        for j in o - 2..=o + 2 {
            assert!((k.get(j) - 0.2).abs() < 1e-15);
        }
        let k5 = random_walk_kernel(&shape, 2, 10).unwrap();
        assert!((k5.sum() - 1.0).abs() < 1e-13);
        assert!(matches!(random_walk_kernel(&shape, 2, 11), Err(Error::KernelExceedsWindow { .. })));
    }

    #[test]
    fn snapshot_roundtrips() {
        let shape = LatticeShape::new(vec![3, 4], Boundary::ZeroPadded).unwrap();
        let c = Configuration::from_bits(shape, vec![1, 0, 0, 1, 0, 1, 1, 0, 0, 0, 0, 1]).unwrap();
        let mut buf = Vec::new();
        c.write_text(&mut buf).unwrap();
        assert_eq!(Configuration::read_text(&buf[..]).unwrap(), c);
        let mut pgm = Vec::new();
        c.write_pgm(&mut pgm).unwrap();
        assert_eq!(Configuration::read_pgm(&pgm).unwrap(), c);
    }

    #[test]
    fn parses_initial_conditions() {
        assert_eq!("single".parse::<InitialCondition>().unwrap(), InitialCondition::SingleSite);
        assert_eq!(
            "bernoulli:0.25".parse::<InitialCondition>().unwrap(),
            InitialCondition::ProductBernoulli { p: 0.25 }
        );
        assert!("bogus".parse::<InitialCondition>().is_err());
    }
}
