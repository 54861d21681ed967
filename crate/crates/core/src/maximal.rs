//! Maximal functions over a finite atomic measure.
//!
//! Suprema over radii are taken over the breakpoint family: closed balls (or
//! cubes) whose radius is the distance to some atom, floored at `r_floor`.
//! A closed ball is the right limit of the open balls of slightly larger
//! radius, so this is exactly the supremum over `r ≥ r_floor`. Averages over
//! zero-mass sets count as zero.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::dyadic::DyadicGrid;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::{dist, dist_inf, AtomicMeasure, Point};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MaximalKind {
    /// `sup_r r^{−m} ∫_{B(x,r)} |f| dμ`.
    RadialM { m: f64 },
    /// Centred open balls.
    CenteredBall,
    /// Centred open cubes `Q(x,r)` of side `2r`.
    CenteredCube,
    /// `sup_{B ∋ x} μ(5B)^{−1} ∫_B |f| dμ`.
    NoncenteredFive,
    /// Dyadic cubes of a grid.
    Dyadic,
}

#[derive(Debug, Clone, Copy)]
pub struct MaximalSpec<'a> {
    pub kind: MaximalKind,
    /// `M_s f = M(|f|^s)^{1/s}`.
    pub s: f64,
    /// Smallest admissible radius; defaults to the measure resolution.
    pub r_floor: Option<f64>,
    pub grid: Option<&'a DyadicGrid>,
}

impl<'a> MaximalSpec<'a> {
    pub fn new(kind: MaximalKind) -> Self {
        MaximalSpec { kind, s: 1.0, r_floor: None, grid: None }
    }

    pub fn radial(m: f64) -> Self {
        Self::new(MaximalKind::RadialM { m })
    }

    pub fn with_s(mut self, s: f64) -> Self {
        self.s = s;
        self
    }

    pub fn with_floor(mut self, r: f64) -> Self {
        self.r_floor = Some(r);
        self
    }

    pub fn with_grid(mut self, g: &'a DyadicGrid) -> Self {
        self.grid = Some(g);
        self
    }
}

/// What is being averaged: a function on the atoms of `μ`, or a measure.
#[derive(Debug, Clone, Copy)]
pub enum Integrand<'a> {
    Function(&'a [C64]),
    Measure(&'a AtomicMeasure),
}

/// Nonnegative point masses in the numerator.
struct Masses {
    dim: usize,
    coords: Vec<f64>,
    mass: Vec<f64>,
}

impl Masses {
    fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }
    fn len(&self) -> usize {
        self.mass.len()
    }
}

fn masses(mu: &AtomicMeasure, f: Integrand, s: f64) -> Result<Masses> {
    match f {
        Integrand::Function(v) => {
            if v.len() != mu.len() {
                return Err(Error::Dimension { expected: mu.len(), got: v.len() });
            }
            let mut coords = Vec::with_capacity(mu.len() * mu.dim());
            for p in mu.points() {
                coords.extend_from_slice(p);
            }
            let mass = (0..mu.len()).map(|i| v[i].norm().powf(s) * mu.weight(i).norm()).collect();
            Ok(Masses { dim: mu.dim(), coords, mass })
        }
        Integrand::Measure(nu) => {
            if nu.dim() != mu.dim() {
                return Err(Error::Dimension { expected: mu.dim(), got: nu.dim() });
            }
            if s != 1.0 {
                return Err(Error::InvalidParameter("s-adapted maximal functions take functions, not measures".into()));
            }
            let mut coords = Vec::with_capacity(nu.len() * nu.dim());
            for p in nu.points() {
                coords.extend_from_slice(p);
            }
            Ok(Masses { dim: nu.dim(), coords, mass: nu.weights().iter().map(|w| w.norm()).collect() })
        }
    }
}

fn denominators(mu: &AtomicMeasure) -> Masses {
    let mut coords = Vec::with_capacity(mu.len() * mu.dim());
    for p in mu.points() {
        coords.extend_from_slice(p);
    }
    Masses { dim: mu.dim(), coords, mass: mu.weights().iter().map(|w| w.norm()).collect() }
}

#[inline]
fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

/// Event list for centred sweeps: `(distance, slot, mass)`.
fn centred_events(x: &[f64], parts: &[&Masses], cube: bool) -> Vec<(f64, usize, f64)> {
    let mut ev = Vec::new();
    for (slot, p) in parts.iter().enumerate() {
        for i in 0..p.len() {
            let d = if cube { dist_inf(x, p.point(i)) } else { dist(x, p.point(i)) };
            ev.push((d, slot, p.mass[i]));
        }
    }
    ev.sort_by(|a, b| a.0.total_cmp(&b.0));
    ev
}

/// Sweep closed centred balls; `score` maps (radius, running sums) to a value.
fn centred_sweep(x: &[f64], parts: &[&Masses], cube: bool, floor: f64, score: impl Fn(f64, &[f64]) -> f64) -> f64 {
    let ev = centred_events(x, parts, cube);
    let mut sums = vec![0.0; parts.len()];
    let mut best: f64 = 0.0;
    let mut k = 0;
    // Atoms within the floor are all inside the smallest admissible ball.
    while k < ev.len() && ev[k].0 <= floor {
        sums[ev[k].1] += ev[k].2;
        k += 1;
    }
    best = best.max(score(floor, &sums));
    while k < ev.len() {
        let d = ev[k].0;
        while k < ev.len() && ev[k].0 == d {
            sums[ev[k].1] += ev[k].2;
            k += 1;
        }
        best = best.max(score(d, &sums));
    }
    best
}

fn floor_of(mu: &AtomicMeasure, spec: &MaximalSpec) -> Result<f64> {
    let r = spec.r_floor.unwrap_or(mu.resolution());
    if !(r >= 0.0) {
        return Err(Error::InvalidParameter("negative radius floor".into()));
    }
    if matches!(spec.kind, MaximalKind::RadialM { .. }) && r == 0.0 {
        return Err(Error::InvalidParameter("radial maximal function needs a positive floor".into()));
    }
    Ok(r)
}

/// Noncentred family: for each centre, the closed balls through every atom,
/// with the ratio `num(B) / μ(5B)` and a suffix maximum over radii.
pub struct NoncenteredTable {
    centers: Vec<Point>,
    radii: Vec<Vec<f64>>,
    suffix_best: Vec<Vec<f64>>,
}

impl NoncenteredTable {
    fn build(parts: &[&Masses], den: &Masses, floor: f64, bilinear: bool) -> Self {
        let mut centers: Vec<Point> = Vec::new();
        for p in parts.iter().chain(std::iter::once(&den)) {
            for i in 0..p.len() {
                centers.push(Point::from(p.point(i)));
            }
        }
        centers.sort_by(|a, b| a.0.iter().zip(&b.0).map(|(u, v)| u.total_cmp(v)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
        centers.dedup();
        let mut radii = Vec::with_capacity(centers.len());
        let mut suffix_best = Vec::with_capacity(centers.len());
        for c in &centers {
            let mut rs: Vec<f64> = parts
                .iter()
                .chain(std::iter::once(&den))
                .flat_map(|p| (0..p.len()).map(move |i| dist(c, p.point(i)).max(floor)))
                .collect();
            rs.sort_by(|a, b| a.total_cmp(b));
            rs.dedup();
            let mut evs: Vec<Vec<(f64, f64)>> = parts
                .iter()
                .map(|p| {
                    let mut v: Vec<(f64, f64)> = (0..p.len()).map(|i| (dist(c, p.point(i)), p.mass[i])).collect();
                    v.sort_by(|a, b| a.0.total_cmp(&b.0));
                    v
                })
                .collect();
            let mut dv: Vec<(f64, f64)> = (0..den.len()).map(|i| (dist(c, den.point(i)), den.mass[i])).collect();
            dv.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut ptr = vec![0usize; parts.len()];
            let mut sums = vec![0.0; parts.len()];
            let mut dptr = 0;
            let mut dsum = 0.0;
            let mut vals = Vec::with_capacity(rs.len());
            for &r in &rs {
                for (s, ev) in evs.iter_mut().enumerate() {
                    while ptr[s] < ev.len() && ev[ptr[s]].0 <= r {
                        sums[s] += ev[ptr[s]].1;
                        ptr[s] += 1;
                    }
                }
                while dptr < dv.len() && dv[dptr].0 <= 5.0 * r {
                    dsum += dv[dptr].1;
                    dptr += 1;
                }
                let v = if bilinear { ratio(sums[0], dsum) * ratio(sums[1], dsum) } else { ratio(sums[0], dsum) };
                vals.push(v);
            }
            let mut best = vec![0.0; vals.len()];
            let mut acc: f64 = 0.0;
            for i in (0..vals.len()).rev() {
                acc = acc.max(vals[i]);
                best[i] = acc;
            }
            radii.push(rs);
            suffix_best.push(best);
        }
        NoncenteredTable { centers, radii, suffix_best }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut best: f64 = 0.0;
        for (c, (rs, sb)) in self.centers.iter().zip(self.radii.iter().zip(&self.suffix_best)) {
            let d = dist(c, x);
            let k = rs.partition_point(|&r| r < d);
            if k < rs.len() {
                best = best.max(sb[k]);
            }
        }
        best
    }
}

fn dyadic_value(x: &[f64], parts: &[&Masses], den: &Masses, grid: &DyadicGrid, bilinear: bool) -> f64 {
    let (kmin, kmax) = grid.window();
    let mut best: f64 = 0.0;
    for k in kmin..=kmax {
        let q = grid.cube_geometry(&grid.cube_containing(x, k));
        let dsum: f64 = (0..den.len()).filter(|&i| q.contains(den.point(i))).map(|i| den.mass[i]).sum();
        let avg = |p: &Masses| ratio((0..p.len()).filter(|&i| q.contains(p.point(i))).map(|i| p.mass[i]).sum(), dsum);
        let v = if bilinear { avg(parts[0]) * avg(parts[1]) } else { avg(parts[0]) };
        best = best.max(v);
    }
    best
}

fn evaluate_many(
    mu: &AtomicMeasure,
    parts: &[&Masses],
    xs: &[Point],
    spec: &MaximalSpec,
    exec: Execution,
) -> Result<Vec<f64>> {
    let floor = floor_of(mu, spec)?;
    let bilinear = parts.len() == 2;
    let den = denominators(mu);
    let raw: Vec<f64> = match spec.kind {
        MaximalKind::RadialM { m } => exec.map_slice(xs, |x| {
            centred_sweep(x, parts, false, floor, |r, s| {
                let mm = r.powf(m);
                if bilinear {
                    s[0] * s[1] / (mm * mm)
                } else {
                    s[0] / mm
                }
            })
        }),
        MaximalKind::CenteredBall | MaximalKind::CenteredCube => {
            let cube = spec.kind == MaximalKind::CenteredCube;
            let mut all: Vec<&Masses> = parts.to_vec();
            all.push(&den);
            exec.map_slice(xs, |x| {
                centred_sweep(x, &all, cube, floor, |_, s| {
                    let d = s[s.len() - 1];
                    if bilinear {
                        ratio(s[0], d) * ratio(s[1], d)
                    } else {
                        ratio(s[0], d)
                    }
                })
            })
        }
        MaximalKind::NoncenteredFive => {
            let table = NoncenteredTable::build(parts, &den, floor, bilinear);
            exec.map_slice(xs, |x| table.eval(x))
        }
        MaximalKind::Dyadic => {
            let grid = spec.grid.ok_or_else(|| Error::InvalidParameter("dyadic maximal function needs a grid".into()))?;
            exec.map_slice(xs, |x| dyadic_value(x, parts, &den, grid, bilinear))
        }
    };
    let s = spec.s;
    // The bilinear value is a product of two averages, each raised to 1/s.
    Ok(raw.into_iter().map(|v| if s == 1.0 { v } else { v.powf(1.0 / s) }).collect())
}

/// `M f(x)` for each query point.
pub fn maximal_at(mu: &AtomicMeasure, f: Integrand, xs: &[Point], spec: &MaximalSpec, exec: Execution) -> Result<Vec<f64>> {
    let a = masses(mu, f, spec.s)?;
    evaluate_many(mu, &[&a], xs, spec, exec)
}

pub fn maximal(mu: &AtomicMeasure, f: Integrand, x: &[f64], spec: &MaximalSpec) -> Result<f64> {
    Ok(maximal_at(mu, f, &[Point::from(x)], spec, Execution::Sequential)?[0])
}

/// Bilinear variant: both averages over the same ball. For the radial kind
/// this is `sup_r r^{−2m} ∫_B|f| ∫_B|g|`.
pub fn maximal_bilinear_at(
    mu: &AtomicMeasure,
    f: Integrand,
    g: Integrand,
    xs: &[Point],
    spec: &MaximalSpec,
    exec: Execution,
) -> Result<Vec<f64>> {
    let a = masses(mu, f, spec.s)?;
    let b = masses(mu, g, spec.s)?;
    evaluate_many(mu, &[&a, &b], xs, spec, exec)
}

pub fn maximal_bilinear(mu: &AtomicMeasure, f: Integrand, g: Integrand, x: &[f64], spec: &MaximalSpec) -> Result<f64> {
    Ok(maximal_bilinear_at(mu, f, g, &[Point::from(x)], spec, Execution::Sequential)?[0])
}

/// Both sides of `∬ d|ν₁|d|ν₂| / (t + |x−y| + |x−z|)^{2m+α} ≤ C t^{−α} M_m(ν₁,ν₂)(x)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IntegralBound {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

pub fn basic_integral_bound(
    nu1: &AtomicMeasure,
    nu2: &AtomicMeasure,
    x: &[f64],
    t: f64,
    m: f64,
    alpha: f64,
    r_floor: f64,
) -> Result<IntegralBound> {
    let mut lhs = 0.0;
    for j in 0..nu1.len() {
        let dy = dist(x, nu1.point(j));
        let wj = nu1.weight(j).norm();
        for k in 0..nu2.len() {
            lhs += wj * nu2.weight(k).norm() / (t + dy + dist(x, nu2.point(k))).powf(2.0 * m + alpha);
        }
    }
    let a = masses(nu1, Integrand::Measure(nu1), 1.0)?;
    let b = masses(nu2, Integrand::Measure(nu2), 1.0)?;
    let mm = centred_sweep(x, &[&a, &b], false, r_floor, |r, s| s[0] * s[1] / r.powf(2.0 * m));
    let rhs = t.powf(-alpha) * mm;
    Ok(IntegralBound { lhs, rhs, ratio: ratio(lhs, rhs) })
}

pub fn lp_norm(mu: &AtomicMeasure, f: &[f64], p: f64) -> f64 {
    if p.is_infinite() {
        return (0..mu.len()).filter(|&i| mu.weight(i).norm() > 0.0).map(|i| f[i].abs()).fold(0.0, f64::max);
    }
    (0..mu.len()).map(|i| f[i].abs().powf(p) * mu.weight(i).norm()).sum::<f64>().powf(1.0 / p)
}

pub fn lp_norm_c(mu: &AtomicMeasure, f: &[C64], p: f64) -> f64 {
    let a: Vec<f64> = f.iter().map(|v| v.norm()).collect();
    lp_norm(mu, &a, p)
}

/// `‖M f‖_p / ‖f‖_p` for the given kind, evaluated at the atoms of `μ`.
pub fn strong_type_ratio(mu: &AtomicMeasure, f: &[C64], spec: &MaximalSpec, p: f64, exec: Execution) -> Result<f64> {
    let xs: Vec<Point> = mu.points().map(Point::from).collect();
    let mf = maximal_at(mu, Integrand::Function(f), &xs, spec, exec)?;
    Ok(ratio(lp_norm(mu, &mf, p), lp_norm_c(mu, f, p)))
}

/// Largest value of `λ μ({Nν > λ}) / |ν|({Nν > λ})` over all `λ`, with the
/// level sets evaluated on the atoms of `μ` and `ν`. The sharpened weak type
/// inequality says this never exceeds one.
pub fn sharpened_weak_ratio(mu: &AtomicMeasure, nu: &AtomicMeasure, exec: Execution) -> Result<f64> {
    let spec = MaximalSpec::new(MaximalKind::NoncenteredFive);
    let mut pts: Vec<Point> = mu.points().map(Point::from).collect();
    pts.extend(nu.points().map(Point::from));
    let vals = maximal_at(mu, Integrand::Measure(nu), &pts, &spec, exec)?;
    let n_mu = mu.len();
    let mut order: Vec<usize> = (0..pts.len()).collect();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
    let mut lhs_mass = 0.0;
    let mut rhs_mass = 0.0;
    let mut worst: f64 = 0.0;
    let mut k = 0;
    while k < order.len() {
        let v = vals[order[k]];
        if v <= 0.0 {
            break;
        }
        while k < order.len() && vals[order[k]] == v {
            let i = order[k];
            if i < n_mu {
                lhs_mass += mu.weight(i).norm();
            } else {
                rhs_mass += nu.weight(i - n_mu).norm();
            }
            k += 1;
        }
        let lam = if v.is_finite() { v } else { f64::MAX };
        worst = worst.max(ratio(lam * lhs_mass, rhs_mass));
    }
    Ok(worst)
}
