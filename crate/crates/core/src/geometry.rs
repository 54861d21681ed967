//! Points, cubes, balls and finite atomic measures.
//!
//! Balls are open unless marked closed. Cubes are closed on the left and open
//! on the right in every coordinate, which keeps dyadic children disjoint.

use std::ops::Deref;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hard cap on generated atom counts.
pub const MAX_ATOMS: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Point(pub Vec<f64>);

impl Point {
    pub fn new(coords: impl Into<Vec<f64>>) -> Self {
        Point(coords.into())
    }

    pub fn origin(dim: usize) -> Self {
        Point(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl Deref for Point {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<&[f64]> for Point {
    fn from(s: &[f64]) -> Self {
        Point(s.to_vec())
    }
}

#[inline]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s.sqrt()
}

#[inline]
pub fn dist_inf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Closure {
    #[default]
    HalfOpen,
    Closed,
    Open,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cube {
    pub center: Point,
    pub halfside: f64,
    #[serde(default)]
    pub closure: Closure,
}

impl Cube {
    pub fn new(center: impl Into<Vec<f64>>, halfside: f64) -> Self {
        Cube { center: Point(center.into()), halfside, closure: Closure::HalfOpen }
    }

    /// Cube `[lo, lo + side)^n`.
    pub fn from_corner(lo: &[f64], side: f64) -> Self {
        let h = side / 2.0;
        Cube::new(lo.iter().map(|v| v + h).collect::<Vec<_>>(), h)
    }

    pub fn with_closure(mut self, closure: Closure) -> Self {
        self.closure = closure;
        self
    }

    pub fn dim(&self) -> usize {
        self.center.dim()
    }

    pub fn side(&self) -> f64 {
        2.0 * self.halfside
    }

    pub fn lower(&self, i: usize) -> f64 {
        self.center[i] - self.halfside
    }

    pub fn upper(&self, i: usize) -> f64 {
        self.center[i] + self.halfside
    }

    /// Concentric dilate by `factor`.
    pub fn scaled(&self, factor: f64) -> Cube {
        Cube { center: self.center.clone(), halfside: self.halfside * factor, closure: self.closure }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let h = self.halfside;
        x.iter().zip(self.center.iter()).all(|(&xi, &ci)| {
            let lo = ci - h;
            let hi = ci + h;
            match self.closure {
                Closure::HalfOpen => lo <= xi && xi < hi,
                Closure::Closed => lo <= xi && xi <= hi,
                Closure::Open => lo < xi && xi < hi,
            }
        })
    }

    /// Euclidean distance from `x` to the boundary of the cube.
    pub fn dist_to_boundary(&self, x: &[f64]) -> f64 {
        let mut inside = true;
        let mut inner = f64::INFINITY;
        let mut outer = 0.0;
        for (&xi, &ci) in x.iter().zip(self.center.iter()) {
            let d = (xi - ci).abs() - self.halfside;
            if d > 0.0 {
                inside = false;
                outer += d * d;
            } else {
                inner = inner.min(-d);
            }
        }
        if inside {
            inner
        } else {
            outer.sqrt()
        }
    }

    /// Euclidean distance from `x` to the closed cube.
    pub fn dist_to_point(&self, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for (&xi, &ci) in x.iter().zip(self.center.iter()) {
            let d = ((xi - ci).abs() - self.halfside).max(0.0);
            s += d * d;
        }
        s.sqrt()
    }

    /// Distance between the closures of two cubes.
    pub fn dist_to_cube(&self, other: &Cube) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim() {
            let gap = ((self.center[i] - other.center[i]).abs() - self.halfside - other.halfside).max(0.0);
            s += gap * gap;
        }
        s.sqrt()
    }

    /// Distance from this cube to the boundary of `outer`: zero if the cube
    /// straddles the boundary.
    pub fn dist_to_boundary_of(&self, outer: &Cube) -> f64 {
        let mut inside = true;
        let mut overlap = true;
        let mut inner = f64::INFINITY;
        for i in 0..self.dim() {
            let (a0, a1) = (self.lower(i), self.upper(i));
            let (b0, b1) = (outer.lower(i), outer.upper(i));
            if a0 < b0 || a1 > b1 {
                inside = false;
            } else {
                inner = inner.min((a0 - b0).min(b1 - a1));
            }
            if a1 < b0 || a0 > b1 {
                overlap = false;
            }
        }
        if inside {
            inner
        } else if overlap {
            0.0
        } else {
            self.dist_to_cube(outer)
        }
    }

    /// True when the closure of `inner` lies in the closure of `self`.
    pub fn contains_cube(&self, inner: &Cube) -> bool {
        (0..self.dim()).all(|i| self.lower(i) <= inner.lower(i) && inner.upper(i) <= self.upper(i))
    }

    pub fn diameter(&self) -> f64 {
        self.side() * (self.dim() as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Point,
    pub radius: f64,
    #[serde(default)]
    pub closed: bool,
}

impl Ball {
    pub fn open(center: impl Into<Vec<f64>>, radius: f64) -> Self {
        Ball { center: Point(center.into()), radius, closed: false }
    }

    pub fn closed(center: impl Into<Vec<f64>>, radius: f64) -> Self {
        Ball { center: Point(center.into()), radius, closed: true }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let d = dist(&self.center, x);
        if self.closed {
            d <= self.radius
        } else {
            d < self.radius
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Region {
    All,
    Empty,
    Ball(Ball),
    Cube(Cube),
    /// Points of `2Q` within `lambda * side(Q)` of the boundary of `Q`.
    Strip { cube: Cube, lambda: f64 },
    Union(Vec<Region>),
    Intersection(Vec<Region>),
    Complement(Box<Region>),
}

impl Region {
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Region::All => true,
            Region::Empty => false,
            Region::Ball(b) => b.contains(x),
            Region::Cube(q) => q.contains(x),
            Region::Strip { cube, lambda } => {
                cube.scaled(2.0).contains(x) && cube.dist_to_boundary(x) <= lambda * cube.side()
            }
            Region::Union(rs) => rs.iter().any(|r| r.contains(x)),
            Region::Intersection(rs) => rs.iter().all(|r| r.contains(x)),
            Region::Complement(r) => !r.contains(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureJson", into = "MeasureJson")]
pub struct AtomicMeasure {
    dim: usize,
    coords: Vec<f64>,
    weights: Vec<C64>,
    resolution: f64,
}

#[derive(Serialize, Deserialize)]
struct AtomJson {
    x: Vec<f64>,
    re: f64,
    #[serde(default)]
    im: f64,
}

#[derive(Serialize, Deserialize)]
struct MeasureJson {
    dim: usize,
    resolution: f64,
    atoms: Vec<AtomJson>,
}

impl TryFrom<MeasureJson> for AtomicMeasure {
    type Error = Error;
    fn try_from(j: MeasureJson) -> Result<Self> {
        let mut m = AtomicMeasure::empty(j.dim, j.resolution)?;
        for a in j.atoms {
            m.push(&a.x, C64::new(a.re, a.im))?;
        }
        Ok(m)
    }
}

impl From<AtomicMeasure> for MeasureJson {
    fn from(m: AtomicMeasure) -> Self {
        let atoms = (0..m.len())
            .map(|i| AtomJson { x: m.point(i).to_vec(), re: m.weights[i].re, im: m.weights[i].im })
            .collect();
        MeasureJson { dim: m.dim, resolution: m.resolution, atoms }
    }
}

impl AtomicMeasure {
    pub fn empty(dim: usize, resolution: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        if !(resolution.is_finite() && resolution > 0.0) {
            return Err(Error::InvalidParameter(format!("resolution must be positive, got {resolution}")));
        }
        Ok(AtomicMeasure { dim, coords: Vec::new(), weights: Vec::new(), resolution })
    }

    pub fn from_atoms<P: AsRef<[f64]>>(dim: usize, resolution: f64, atoms: &[(P, C64)]) -> Result<Self> {
        let mut m = Self::empty(dim, resolution)?;
        for (p, w) in atoms {
            m.push(p.as_ref(), *w)?;
        }
        Ok(m)
    }

    /// Nonnegative measure with real weights.
    pub fn from_real<P: AsRef<[f64]>>(dim: usize, resolution: f64, atoms: &[(P, f64)]) -> Result<Self> {
        let mut m = Self::empty(dim, resolution)?;
        for (p, w) in atoms {
            m.push(p.as_ref(), C64::new(*w, 0.0))?;
        }
        Ok(m)
    }

    pub fn push(&mut self, x: &[f64], w: C64) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Dimension { expected: self.dim, got: x.len() });
        }
        if !x.iter().all(|v| v.is_finite()) || !w.re.is_finite() || !w.im.is_finite() {
            return Err(Error::NonFinite("atom"));
        }
        self.coords.extend_from_slice(x);
        self.weights.push(w);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn set_resolution(&mut self, r: f64) {
        self.resolution = r;
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn weight(&self, i: usize) -> C64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[C64] {
        &self.weights
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.weights.iter().all(|w| w.im == 0.0 && w.re >= 0.0)
    }

    pub fn require_nonnegative(&self, what: &'static str) -> Result<()> {
        if self.is_nonnegative() {
            Ok(())
        } else {
            Err(Error::NotNonnegative(what))
        }
    }

    /// Same support, new weights.
    pub fn with_weights(&self, weights: Vec<C64>) -> Result<Self> {
        if weights.len() != self.len() {
            return Err(Error::Dimension { expected: self.len(), got: weights.len() });
        }
        Ok(AtomicMeasure { dim: self.dim, coords: self.coords.clone(), weights, resolution: self.resolution })
    }

    /// The measure `f dμ` for a function given by its values on the atoms.
    pub fn times(&self, f: &[C64]) -> Result<Self> {
        if f.len() != self.len() {
            return Err(Error::Dimension { expected: self.len(), got: f.len() });
        }
        self.with_weights(self.weights.iter().zip(f).map(|(w, v)| w * v).collect())
    }

    /// The variation measure `|ν|`.
    pub fn variation(&self) -> Self {
        let w = self.weights.iter().map(|w| C64::new(w.norm(), 0.0)).collect();
        AtomicMeasure { dim: self.dim, coords: self.coords.clone(), weights: w, resolution: self.resolution }
    }

    pub fn scale(&self, c: f64) -> Self {
        let w = self.weights.iter().map(|w| w * c).collect();
        AtomicMeasure { dim: self.dim, coords: self.coords.clone(), weights: w, resolution: self.resolution }
    }

    /// Keep only atoms in `region`.
    pub fn restrict(&self, region: &Region) -> Self {
        let mut out = AtomicMeasure { dim: self.dim, coords: Vec::new(), weights: Vec::new(), resolution: self.resolution };
        for i in 0..self.len() {
            if region.contains(self.point(i)) {
                out.coords.extend_from_slice(self.point(i));
                out.weights.push(self.weights[i]);
            }
        }
        out
    }

    /// `|ν|(ℝⁿ)`.
    pub fn total_variation(&self) -> f64 {
        self.weights.iter().map(|w| w.norm()).sum()
    }

    /// `|ν|(A)`; equals `ν(A)` for nonnegative measures.
    pub fn mass(&self, region: &Region) -> f64 {
        (0..self.len()).filter(|&i| region.contains(self.point(i))).map(|i| self.weights[i].norm()).sum()
    }

    /// `ν(A)` as a complex number.
    pub fn value(&self, region: &Region) -> C64 {
        (0..self.len()).filter(|&i| region.contains(self.point(i))).map(|i| self.weights[i]).sum()
    }

    pub fn cube_mass(&self, q: &Cube) -> f64 {
        (0..self.len()).filter(|&i| q.contains(self.point(i))).map(|i| self.weights[i].norm()).sum()
    }

    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                d = d.max(dist(self.point(i), self.point(j)));
            }
        }
        d
    }

    /// Smallest half-open cube containing every atom, padded by the resolution.
    pub fn bounding_cube(&self) -> Option<Cube> {
        if self.is_empty() {
            return None;
        }
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for p in self.points() {
            for i in 0..self.dim {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        let h = (0..self.dim).map(|i| hi[i] - lo[i]).fold(0.0, f64::max) / 2.0 + self.resolution;
        let c: Vec<f64> = (0..self.dim).map(|i| (lo[i] + hi[i]) / 2.0).collect();
        Some(Cube::new(c, h))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("measure serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthCertificate {
    pub m: f64,
    pub r_min: f64,
    pub constant: f64,
    pub center: Option<Point>,
    pub radius: f64,
}

/// `sup μ(B(x,r)) / r^m` over `r ≥ r_min` and centers at the atoms plus
/// `extra_centers`. At each breakpoint distance the right-limit mass is used.
pub fn growth_constant(
    mu: &AtomicMeasure,
    m: f64,
    r_min: f64,
    extra_centers: &[Point],
) -> Result<GrowthCertificate> {
    if r_min < mu.resolution() {
        return Err(Error::BelowResolution { scale: r_min, resolution: mu.resolution() });
    }
    let mut best = GrowthCertificate { m, r_min, constant: 0.0, center: None, radius: r_min };
    let centers: Vec<&[f64]> = mu.points().chain(extra_centers.iter().map(|p| &p[..])).collect();
    let mut buf: Vec<(f64, f64)> = Vec::with_capacity(mu.len());
    for c in centers {
        buf.clear();
        buf.extend((0..mu.len()).map(|i| (dist(c, mu.point(i)), mu.weight(i).norm())));
        buf.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut acc = 0.0;
        let mut k = 0;
        while k < buf.len() {
            let d = buf[k].0;
            while k < buf.len() && buf[k].0 == d {
                acc += buf[k].1;
                k += 1;
            }
            let r = d.max(r_min);
            let v = acc / r.powf(m);
            if v > best.constant {
                best.constant = v;
                best.center = Some(Point::from(c));
                best.radius = r;
            }
        }
    }
    Ok(best)
}

/// `μ(αQ) ≤ β μ(Q)`.
pub fn is_doubling(mu: &AtomicMeasure, q: &Cube, alpha: f64, beta: f64) -> bool {
    mu.cube_mass(&q.scaled(alpha)) <= beta * mu.cube_mass(q)
}

/// Smallest `t` for which `Q` has `t`-small boundary: the largest value of
/// `μ(strip(λ)) / (λ μ(2Q))` over the breakpoints `λ`. Infinite when an atom
/// of positive mass sits on the boundary.
pub fn boundary_ratio(mu: &AtomicMeasure, q: &Cube) -> f64 {
    let big = q.scaled(2.0);
    let mut lam: Vec<(f64, f64)> = (0..mu.len())
        .filter(|&i| big.contains(mu.point(i)))
        .map(|i| (q.dist_to_boundary(mu.point(i)) / q.side(), mu.weight(i).norm()))
        .filter(|&(_, w)| w > 0.0)
        .collect();
    if lam.is_empty() {
        return 0.0;
    }
    let total: f64 = lam.iter().map(|p| p.1).sum();
    lam.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut worst: f64 = 0.0;
    let mut acc = 0.0;
    let mut k = 0;
    while k < lam.len() {
        let l = lam[k].0;
        while k < lam.len() && lam[k].0 == l {
            acc += lam[k].1;
            k += 1;
        }
        if l == 0.0 {
            return f64::INFINITY;
        }
        worst = worst.max(acc / (l * total));
    }
    worst
}

/// `μ({x ∈ 2Q : d(x,∂Q) ≤ λℓ(Q)}) ≤ tλμ(2Q)` for every `λ > 0`.
pub fn has_small_boundary(mu: &AtomicMeasure, q: &Cube, t: f64) -> bool {
    boundary_ratio(mu, q) <= t
}

/// Geometric family of half-sides scanned by [`find_small_boundary_cube`]:
/// from `eps` up to (but excluding) `c_n eps / √n`.
pub fn halfside_candidates(eps: f64, c_n: f64, dim: usize, count: usize) -> Vec<f64> {
    let hmax = c_n * eps / (dim as f64).sqrt();
    let ratio = (hmax / eps).powf(1.0 / count as f64);
    (0..count).map(|k| eps * ratio.powi(k as i32)).collect()
}

/// A cube centred at `x` with `B(x,ε) ⊂ R ⊂ B(x, c_n ε)` and `t`-small boundary.
pub fn find_small_boundary_cube(
    mu: &AtomicMeasure,
    x: &[f64],
    eps: f64,
    c_n: f64,
    t: f64,
    count: usize,
) -> Result<Cube> {
    let n = x.len();
    if c_n <= (n as f64).sqrt() {
        return Err(Error::InvalidParameter(format!("c_n = {c_n} leaves no room between the balls")));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter("eps must be positive".into()));
    }
    let cands = halfside_candidates(eps, c_n, n, count.max(1));
    for &h in &cands {
        let q = Cube::new(x.to_vec(), h);
        if has_small_boundary(mu, &q, t) {
            return Ok(q);
        }
    }
    Err(Error::NoAdmissibleCube { tried: cands.len() })
}

/// Least `k` with `μ(6^{k+1}Q) ≤ 6^{m+1} μ(6^k Q)`; returns `(6^k Q, k)`.
pub fn smallest_big_doubling_ancestor(mu: &AtomicMeasure, q: &Cube, m: f64) -> Result<(Cube, u32)> {
    let beta = 6f64.powf(m + 1.0);
    let mut cur = q.clone();
    for k in 0..256u32 {
        let next = cur.scaled(6.0);
        if mu.cube_mass(&next) <= beta * mu.cube_mass(&cur) {
            return Ok((cur, k));
        }
        cur = next;
    }
    Err(Error::Budget("doubling ancestor search did not terminate".into()))
}

/// `d(Q,R) + ℓ(Q) + ℓ(R)`.
pub fn long_distance(q: &Cube, r: &Cube) -> f64 {
    q.dist_to_cube(r) + q.side() + r.side()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Generator {
    /// Planar four-corner Cantor set: keep the four corner squares of side 1/4.
    Cantor4 { level: u32 },
    /// Middle-thirds Cantor set on the line.
    Cantor1d { level: u32 },
    /// Lattice of `count = k^dim` equal atoms at cell centres of `[0,1)^dim`.
    Uniform { dim: usize, count: usize },
    /// `count` equal atoms uniform in `[0,1)^dim`.
    Random { dim: usize, count: usize, seed: u64 },
}

impl Generator {
    /// The growth order `m` under which the family is uniformly order-`m`.
    pub fn natural_order(&self) -> f64 {
        match self {
            Generator::Cantor4 { .. } => 1.0,
            Generator::Cantor1d { .. } => 2f64.ln() / 3f64.ln(),
            Generator::Uniform { dim, .. } | Generator::Random { dim, .. } => *dim as f64,
        }
    }
}

fn check_count(count: usize) -> Result<()> {
    if count > MAX_ATOMS {
        Err(Error::Budget(format!("{count} atoms exceeds the cap of {MAX_ATOMS}")))
    } else {
        Ok(())
    }
}

pub fn generate(g: &Generator) -> Result<AtomicMeasure> {
    match *g {
        Generator::Cantor4 { level } => {
            check_count(4usize.checked_pow(level).unwrap_or(usize::MAX))?;
            let side = 0.25f64.powi(level as i32);
            let mut corners = vec![vec![0.0, 0.0]];
            for l in 0..level {
                let s = 0.25f64.powi(l as i32);
                let mut next = Vec::with_capacity(corners.len() * 4);
                for c in &corners {
                    for (a, b) in [(0.0, 0.0), (0.75, 0.0), (0.0, 0.75), (0.75, 0.75)] {
                        next.push(vec![c[0] + a * s, c[1] + b * s]);
                    }
                }
                corners = next;
            }
            let w = 1.0 / corners.len() as f64;
            let atoms: Vec<(Vec<f64>, f64)> =
                corners.into_iter().map(|c| (vec![c[0] + side / 2.0, c[1] + side / 2.0], w)).collect();
            AtomicMeasure::from_real(2, side, &atoms)
        }
        Generator::Cantor1d { level } => {
            check_count(2usize.checked_pow(level).unwrap_or(usize::MAX))?;
            let len = 3f64.powi(-(level as i32));
            let mut lefts = vec![0.0];
            for l in 0..level {
                let s = 3f64.powi(-(l as i32));
                lefts = lefts.iter().flat_map(|&a| [a, a + 2.0 * s / 3.0]).collect();
            }
            let w = 1.0 / lefts.len() as f64;
            let atoms: Vec<(Vec<f64>, f64)> = lefts.into_iter().map(|a| (vec![a + len / 2.0], w)).collect();
            AtomicMeasure::from_real(1, len, &atoms)
        }
        Generator::Uniform { dim, count } => {
            check_count(count)?;
            if dim == 0 || count == 0 {
                return Err(Error::InvalidParameter("uniform lattice needs dim, count > 0".into()));
            }
            let k = (count as f64).powf(1.0 / dim as f64).round() as usize;
            if k.pow(dim as u32) != count {
                return Err(Error::InvalidParameter(format!("{count} is not a perfect {dim}-th power")));
            }
            let side = 1.0 / k as f64;
            let w = 1.0 / count as f64;
            let mut atoms = Vec::with_capacity(count);
            for idx in 0..count {
                let mut r = idx;
                let mut p = vec![0.0; dim];
                for c in p.iter_mut() {
                    *c = ((r % k) as f64 + 0.5) * side;
                    r /= k;
                }
                atoms.push((p, w));
            }
            AtomicMeasure::from_real(dim, side, &atoms)
        }
        Generator::Random { dim, count, seed } => {
            check_count(count)?;
            if dim == 0 || count == 0 {
                return Err(Error::InvalidParameter("random cloud needs dim, count > 0".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = 1.0 / count as f64;
            let atoms: Vec<(Vec<f64>, f64)> =
                (0..count).map(|_| ((0..dim).map(|_| rng.gen::<f64>()).collect(), w)).collect();
            AtomicMeasure::from_real(dim, (count as f64).powf(-1.0 / dim as f64), &atoms)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn total_variation_examples() {
        let e = AtomicMeasure::empty(1, 0.1).unwrap();
        assert_eq!(e.total_variation(), 0.0);
        let m = AtomicMeasure::from_atoms(1, 0.1, &[([0.0], c(3.0, -4.0))]).unwrap();
        assert_eq!(m.total_variation(), 5.0);
        let m = AtomicMeasure::from_atoms(1, 0.1, &[([0.0], c(1.0, 0.0)), ([1.0], c(-1.0, 0.0))]).unwrap();
        assert_eq!(m.total_variation(), 2.0);
    }

    #[test]
    fn ball_is_open() {
        let m = AtomicMeasure::from_real(1, 0.1, &[([2.0], 1.0)]).unwrap();
        assert_eq!(m.mass(&Region::Ball(Ball::open([0.0], 2.0))), 0.0);
        assert_eq!(m.mass(&Region::Ball(Ball::open([0.0], 2.1))), 1.0);
        let m = AtomicMeasure::from_real(1, 0.1, &[([0.0], 1.0), ([1.0], 1.0)]).unwrap();
        assert_eq!(m.mass(&Region::Cube(Cube::new([0.5], 1.0))), 2.0);
    }

    #[test]
    fn non_finite_rejected() {
        let mut m = AtomicMeasure::empty(1, 0.1).unwrap();
        assert!(m.push(&[f64::NAN], c(1.0, 0.0)).is_err());
        assert!(m.push(&[0.0, 0.0], c(1.0, 0.0)).is_err());
    }

    #[test]
    fn growth_examples() {
        let m = AtomicMeasure::from_real(1, 0.1, &[([0.0], 1.0), ([1.0], 1.0)]).unwrap();
        assert_eq!(growth_constant(&m, 1.0, 0.5, &[]).unwrap().constant, 2.0);
        let m = AtomicMeasure::from_real(2, 0.1, &[([0.3, 0.2], 0.7)]).unwrap();
        assert_eq!(growth_constant(&m, 1.0, 1.0, &[]).unwrap().constant, 0.7);
        let e = AtomicMeasure::empty(2, 0.1).unwrap();
        assert_eq!(growth_constant(&e, 1.0, 1.0, &[]).unwrap().constant, 0.0);
        assert!(growth_constant(&m, 1.0, 0.01, &[]).is_err());
    }

    #[test]
    fn small_boundary_examples() {
        let q = Cube::new([0.0, 0.0], 1.0);
        let m = AtomicMeasure::from_real(2, 0.01, &[([0.0, 0.0], 1.0)]).unwrap();
        assert!(has_small_boundary(&m, &q, 4.0));
        let m = AtomicMeasure::from_real(2, 0.01, &[([1.0, 0.0], 1.0)]).unwrap();
        assert!(!has_small_boundary(&m, &q, 1e9));
        let m = AtomicMeasure::from_real(2, 0.01, &[([5.0, 0.0], 1.0)]).unwrap();
        assert!(has_small_boundary(&m, &q, 0.0));
    }

    #[test]
    fn scan_skips_cube_with_atom_on_face() {
        let eps = 0.1;
        let cands = halfside_candidates(eps, 4.0, 2, 16);
        let x = [0.0, 0.0];
        let mut atoms = vec![([0.0, 0.0], 1.0)];
        atoms.push(([cands[0], 0.0], 1.0));
        atoms.push(([0.0, -cands[1]], 1.0));
        let m = AtomicMeasure::from_real(2, 1e-3, &atoms).unwrap();
        let q = find_small_boundary_cube(&m, &x, eps, 4.0, 64.0, 16).unwrap();
        assert_eq!(q.halfside, cands[2]);
        assert!(q.halfside >= eps && q.halfside * 2f64.sqrt() < 4.0 * eps);
    }

    #[test]
    fn long_distance_examples() {
        let q = Cube::new([0.5], 0.5);
        assert_eq!(long_distance(&q, &q), 2.0);
        let r = Cube::new([4.5], 0.5);
        assert_eq!(long_distance(&q, &r), 5.0);
        let r = Cube::new([2.0], 1.0);
        assert_eq!(long_distance(&q, &r), 3.0);
    }

    #[test]
    fn cantor_level_one() {
        let m = generate(&Generator::Cantor4 { level: 1 }).unwrap();
        assert_eq!(m.len(), 4);
        assert_eq!(m.resolution(), 0.25);
        assert!(m.weights().iter().all(|w| *w == c(0.25, 0.0)));
        let u = generate(&Generator::Uniform { dim: 2, count: 1 }).unwrap();
        assert_eq!(u.point(0), &[0.5, 0.5]);
        assert!(generate(&Generator::Uniform { dim: 2, count: 5 }).is_err());
        assert!(generate(&Generator::Cantor4 { level: 20 }).is_err());
    }

    #[test]
    fn json_round_trip() {
        let m = AtomicMeasure::from_atoms(2, 0.5, &[([0.0, 1.0], c(1.0, -2.0))]).unwrap();
        let s = m.to_json();
        assert_eq!(s, r#"{"dim":2,"resolution":0.5,"atoms":[{"x":[0.0,1.0],"re":1.0,"im":-2.0}]}"#);
        assert_eq!(AtomicMeasure::from_json(&s).unwrap(), m);
        assert!(AtomicMeasure::from_json(r#"{"dim":2,"resolution":0.5,"atoms":[{"x":[0.0],"re":1}]}"#).is_err());
    }

    #[test]
    fn doubling_ancestor_terminates() {
        let m = generate(&Generator::Cantor4 { level: 3 }).unwrap();
        let q = Cube::new(m.point(0).to_vec(), m.resolution());
        let (r, k) = smallest_big_doubling_ancestor(&m, &q, 1.0).unwrap();
        assert!(m.cube_mass(&r.scaled(6.0)) <= 36.0 * m.cube_mass(&r));
        assert_eq!(r.halfside, q.halfside * 6f64.powi(k as i32));
    }
}
