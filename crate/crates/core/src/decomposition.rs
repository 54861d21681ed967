//! Calderón–Zygmund decomposition of measures and the Whitney covering with
//! small-boundary refinement. Both come with a verifier that re-checks every
//! property from the raw inputs.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::{boundary_ratio, dist, dist_inf, AtomicMeasure, Closure, Cube};

fn closed(center: &[f64], halfside: f64) -> Cube {
    Cube::new(center.to_vec(), halfside).with_closure(Closure::Closed)
}

fn cmass(nu: &AtomicMeasure, q: &Cube) -> f64 {
    nu.cube_mass(q)
}

/// `|ν|(Q_s)` and `μ(2Q_s)` for closed cubes centred at `p`, as step
/// functions of the half-side `s`.
struct RadialMasses {
    nu: Vec<(f64, f64)>,
    mu: Vec<(f64, f64)>,
}

impl RadialMasses {
    fn new(nu: &AtomicMeasure, mu: &AtomicMeasure, p: &[f64]) -> Self {
        let cum = |m: &AtomicMeasure, scale: f64| {
            let mut v: Vec<(f64, f64)> = (0..m.len()).map(|i| (dist_inf(p, m.point(i)) / scale, m.weight(i).norm())).collect();
            v.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut acc = 0.0;
            for e in v.iter_mut() {
                acc += e.1;
                e.1 = acc;
            }
            v
        };
        RadialMasses { nu: cum(nu, 1.0), mu: cum(mu, 2.0) }
    }

    fn at(table: &[(f64, f64)], s: f64) -> f64 {
        let k = table.partition_point(|e| e.0 <= s);
        if k == 0 {
            0.0
        } else {
            table[k - 1].1
        }
    }

    fn excess(&self, s: f64, c: f64) -> f64 {
        Self::at(&self.nu, s) - c * Self::at(&self.mu, s)
    }

    fn breakpoints(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self.nu.iter().chain(&self.mu).map(|e| e.0).filter(|&s| s > 0.0).collect();
        b.sort_by(|a, b| a.total_cmp(b));
        b.dedup();
        b
    }
}

/// Largest admissible half-side at `p`: `s` with `|ν|(Q_s) > c μ(2Q_s)`
/// such that every concentric cube of half-side `> 2s` violates it. The
/// half-side is a midpoint between breakpoints, so no atom lies on `∂Q` or
/// `∂(2Q)`.
fn admissible_halfside(rm: &RadialMasses, c: f64) -> Option<f64> {
    let b = rm.breakpoints();
    let mut edges = vec![0.0];
    edges.extend(b);
    // Interval k is [edges[k], edges[k+1]); the last one is unbounded and
    // never admissible once λ exceeds the threshold.
    for k in (0..edges.len().saturating_sub(1)).rev() {
        let mid = 0.5 * (edges[k] + edges[k + 1]);
        if rm.excess(mid, c) > 0.0 {
            return Some(mid);
        }
    }
    None
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CzDecomposition {
    pub lambda: f64,
    /// Closed cubes `Q_i`.
    pub cubes: Vec<Cube>,
    /// Doubling cubes `R_i = 6^{k_i} Q_i`, `k_i ≥ 1`.
    pub doubling: Vec<Cube>,
    /// `α_i`, with `φ_i = α_i 1_{R_i}`.
    pub alpha: Vec<C64>,
    /// `f` on the atoms of `μ`; zero inside `∪Q_i`.
    pub f: Vec<C64>,
    /// `(atom of ν, w_i(atom))` for each cube.
    pub weights: Vec<Vec<(usize, f64)>>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CzOptions {
    /// Growth order used for the doubling constant `β₀ = 6^{m+1}`.
    pub m: f64,
    /// Ceiling on the measured `B` in `Σ|φ_i| ≤ Bλ`.
    pub b_ceiling: Option<f64>,
}

impl CzOptions {
    pub fn new(m: f64) -> Self {
        CzOptions { m, b_ceiling: None }
    }
    pub fn beta0(&self) -> f64 {
        6f64.powf(self.m + 1.0)
    }
    /// Default ceiling `β₀ 2^n`.
    pub fn ceiling(&self, dim: usize) -> f64 {
        self.b_ceiling.unwrap_or(self.beta0() * 2f64.powi(dim as i32))
    }
}

/// Overlap bound for the greedy selection: a point lies in at most one
/// selected cube per closed orthant around it.
pub fn overlap_bound(dim: usize) -> usize {
    1 << dim
}

/// Least `k ≥ 1` with `μ(6^k Q) > 0` and `μ(6^{k+1}Q) ≤ β₀ μ(6^k Q)`.
fn doubling_cube(mu: &AtomicMeasure, q: &Cube, beta0: f64) -> Result<Cube> {
    let mut cur = q.scaled(6.0);
    for _ in 0..256 {
        let here = cmass(mu, &cur);
        if here > 0.0 && cmass(mu, &cur.scaled(6.0)) <= beta0 * here {
            return Ok(cur);
        }
        cur = cur.scaled(6.0);
    }
    Err(Error::Budget("no doubling dilate found".into()))
}

pub fn cz_decompose(
    nu: &AtomicMeasure,
    mu: &AtomicMeasure,
    lambda: f64,
    opts: &CzOptions,
    exec: Execution,
) -> Result<CzDecomposition> {
    mu.require_nonnegative("reference measure")?;
    if nu.dim() != mu.dim() {
        return Err(Error::Dimension { expected: mu.dim(), got: nu.dim() });
    }
    let n = mu.dim();
    let two_n1 = 2f64.powi(n as i32 + 1);
    let total_mu = mu.total_variation();
    let threshold = two_n1 * nu.total_variation() / total_mu;
    if !(total_mu > 0.0) || !(lambda > threshold) {
        return Err(Error::InvalidParameter(format!("λ = {lambda} must exceed 2^(n+1)‖ν‖/‖μ‖ = {threshold}")));
    }
    let c = lambda / two_n1;
    let pts: Vec<usize> = (0..nu.len()).filter(|&i| nu.weight(i).norm() > 0.0).collect();
    let sides = exec.map_slice(&pts, |&i| admissible_halfside(&RadialMasses::new(nu, mu, nu.point(i)), c));
    let mut cands: Vec<(f64, usize)> = pts.iter().zip(&sides).filter_map(|(&i, s)| s.map(|s| (s, i))).collect();
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut cubes: Vec<Cube> = Vec::new();
    for (s, i) in cands {
        let p = nu.point(i);
        if cubes.iter().any(|q| q.contains(p)) {
            continue;
        }
        cubes.push(closed(p, s));
    }

    let count = |x: &[f64]| cubes.iter().filter(|q| q.contains(x)).count();
    let weights: Vec<Vec<(usize, f64)>> = cubes
        .iter()
        .map(|q| {
            (0..nu.len())
                .filter(|&a| q.contains(nu.point(a)))
                .map(|a| (a, 1.0 / count(nu.point(a)) as f64))
                .collect()
        })
        .collect();
    let beta0 = opts.beta0();
    let doubling: Vec<Cube> = cubes.iter().map(|q| doubling_cube(mu, q, beta0)).collect::<Result<_>>()?;
    let alpha: Vec<C64> = weights
        .iter()
        .zip(&doubling)
        .map(|(ws, r)| ws.iter().map(|&(a, w)| nu.weight(a) * w).sum::<C64>() / cmass(mu, r))
        .collect();
    let f = (0..mu.len())
        .map(|i| {
            let x = mu.point(i);
            if count(x) > 0 || mu.weight(i).re == 0.0 {
                return C64::new(0.0, 0.0);
            }
            let v: C64 = (0..nu.len()).filter(|&a| nu.point(a) == x).map(|a| nu.weight(a)).sum();
            v / mu.weight(i).re
        })
        .collect();
    Ok(CzDecomposition { lambda, cubes, doubling, alpha, f, weights })
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CzReport {
    pub cd1: Vec<usize>,
    /// `(cube, η)` with `|ν|(ηQ) > λ 2^{−n−1} μ(2ηQ)`, `η > 2`.
    pub cd2: Vec<(usize, f64)>,
    /// Atoms of `ν` off `∪Q_i` that are not absolutely continuous or exceed `λ`.
    pub cd3: Vec<usize>,
    pub overlap: usize,
    pub overlap_ok: bool,
    pub cd4: Vec<usize>,
    /// Largest `|∫φ_i dμ − ∫w_i dν| / max(|∫w_i dν|, tiny)`.
    pub cd5_error: f64,
    /// Measured `B = max Σ|φ_i| / λ`.
    pub b: f64,
    pub b_ceiling: f64,
    pub cd7: Vec<usize>,
    /// Largest `|β_i(R_i)| / |ν|(Q_i)`.
    pub bad_mass: f64,
    /// Largest `∫_{R_i∖Q_i} |x − c_i|^{−m} dμ`.
    pub ancestor_integral: f64,
}

impl CzReport {
    pub fn pass(&self) -> bool {
        self.cd1.is_empty()
            && self.cd2.is_empty()
            && self.cd3.is_empty()
            && self.overlap_ok
            && self.cd4.is_empty()
            && self.cd5_error <= 1e-12
            && self.b <= self.b_ceiling
            && self.cd7.is_empty()
            && self.bad_mass <= 1e-12
    }
}

/// Dilation factors `η > 2` at which `|ν|(ηQ)` or `μ(2ηQ)` jumps, the value
/// just above 2, and the dyadic grid `2^j`.
fn cd2_factors(q: &Cube, nu: &AtomicMeasure, mu: &AtomicMeasure) -> Vec<f64> {
    let h = q.halfside;
    let mut etas: Vec<f64> = nu
        .points()
        .map(|x| dist_inf(&q.center, x) / h)
        .chain(mu.points().map(|x| dist_inf(&q.center, x) / (2.0 * h)))
        .filter(|&e| e > 2.0)
        .collect();
    etas.sort_by(|a, b| a.total_cmp(b));
    etas.dedup();
    let next = etas.first().copied().unwrap_or(4.0);
    let mut out = vec![0.5 * (2.0 + next)];
    let reach = etas.last().copied().unwrap_or(4.0);
    let mut g = 4.0;
    while g <= 2.0 * reach {
        out.push(g);
        g *= 2.0;
    }
    out.extend(etas);
    out
}

pub fn verify_cz(d: &CzDecomposition, nu: &AtomicMeasure, mu: &AtomicMeasure, opts: &CzOptions) -> CzReport {
    let n = mu.dim();
    let c = d.lambda / 2f64.powi(n as i32 + 1);
    let mut rep = CzReport { b_ceiling: opts.ceiling(n), ..Default::default() };
    for (i, q) in d.cubes.iter().enumerate() {
        if !(cmass(nu, q) > c * cmass(mu, &q.scaled(2.0))) {
            rep.cd1.push(i);
        }
        for eta in cd2_factors(q, nu, mu) {
            let big = q.scaled(eta);
            if cmass(nu, &big) > c * cmass(mu, &big.scaled(2.0)) {
                rep.cd2.push((i, eta));
            }
        }
    }
    let count = |x: &[f64]| d.cubes.iter().filter(|q| q.contains(x)).count();
    for a in 0..nu.len() {
        let x = nu.point(a);
        if nu.weight(a).norm() == 0.0 || count(x) > 0 {
            continue;
        }
        let at: Vec<usize> = (0..mu.len()).filter(|&i| mu.point(i) == x).collect();
        let ok = match at.as_slice() {
            [] => false,
            idx => {
                let muw: f64 = idx.iter().map(|&i| mu.weight(i).re).sum();
                let nuw: C64 = (0..nu.len()).filter(|&b| nu.point(b) == x).map(|b| nu.weight(b)).sum();
                let fx = d.f[idx[0]];
                muw > 0.0 && (fx * muw - nuw).norm() <= 1e-12 * nuw.norm() && fx.norm() <= d.lambda
            }
        };
        if !ok {
            rep.cd3.push(a);
        }
    }
    rep.overlap = nu.points().chain(mu.points()).map(count).max().unwrap_or(0);
    rep.overlap_ok = rep.overlap <= overlap_bound(n);
    for (i, (q, r)) in d.cubes.iter().zip(&d.doubling).enumerate() {
        let ws: C64 = d.weights[i].iter().map(|&(a, w)| nu.weight(a) * w).sum();
        let phi_int = d.alpha[i] * cmass(mu, r);
        let scale = ws.norm().max(f64::MIN_POSITIVE);
        rep.cd5_error = rep.cd5_error.max((phi_int - ws).norm() / scale);
        // φ_i = α_i 1_{R_i}: supported in R_i by definition; R_i must contain Q_i.
        if !r.contains_cube(q) || (r.center.0 != q.center.0) {
            rep.cd4.push(i);
        }
        let nq = cmass(nu, q);
        if d.alpha[i].norm() * cmass(mu, r) > 2.0 * nq * (1.0 + 1e-12) {
            rep.cd7.push(i);
        }
        if nq > 0.0 {
            rep.bad_mass = rep.bad_mass.max((ws - phi_int).norm() / nq);
        }
        let m = opts.m;
        let integral: f64 = (0..mu.len())
            .filter(|&a| r.contains(mu.point(a)) && !q.contains(mu.point(a)))
            .map(|a| mu.weight(a).re * dist(mu.point(a), &q.center).powf(-m))
            .sum();
        rep.ancestor_integral = rep.ancestor_integral.max(integral);
    }
    for x in mu.points() {
        let s: f64 = d.doubling.iter().zip(&d.alpha).filter(|(r, _)| r.contains(x)).map(|(_, a)| a.norm()).sum();
        rep.b = rep.b.max(s / d.lambda);
    }
    rep
}

/// A bounded open set: a finite union of open cubes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenSet {
    pub dim: usize,
    pub boxes: Vec<Cube>,
}

impl OpenSet {
    pub fn new(dim: usize, boxes: Vec<Cube>) -> Result<Self> {
        for b in &boxes {
            if b.dim() != dim {
                return Err(Error::Dimension { expected: dim, got: b.dim() });
            }
            if !(b.halfside > 0.0) || !b.halfside.is_finite() {
                return Err(Error::InvalidParameter("open boxes need a positive finite side".into()));
            }
        }
        let boxes = boxes.into_iter().map(|b| b.with_closure(Closure::Open)).collect();
        Ok(OpenSet { dim, boxes })
    }

    /// `{v > λ}` for a function on the atoms, thickened to open cubes of side
    /// equal to the resolution.
    pub fn level_set(mu: &AtomicMeasure, values: &[f64], lambda: f64) -> Result<Self> {
        let h = mu.resolution() / 2.0;
        let boxes = (0..mu.len()).filter(|&i| values[i] > lambda).map(|i| Cube::new(mu.point(i).to_vec(), h)).collect();
        OpenSet::new(mu.dim(), boxes)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.boxes.iter().any(|b| b.contains(x))
    }

    /// Whether the closed cube `q` lies in the set. Exact: the faces of the
    /// relevant boxes cut `q` into cells (points and open intervals per
    /// axis), each of which is inside or outside every open box.
    pub fn contains_closed(&self, q: &Cube) -> bool {
        let n = self.dim;
        let lo: Vec<f64> = (0..n).map(|i| q.lower(i)).collect();
        let hi: Vec<f64> = (0..n).map(|i| q.upper(i)).collect();
        let near: Vec<&Cube> = self
            .boxes
            .iter()
            .filter(|b| (0..n).all(|i| b.lower(i) <= hi[i] && b.upper(i) >= lo[i]))
            .collect();
        if near.is_empty() {
            return false;
        }
        // Cell representatives per axis: cut points and interval midpoints.
        let mut reps: Vec<Vec<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let mut cuts: Vec<f64> = vec![lo[i], hi[i]];
            for b in &near {
                for v in [b.lower(i), b.upper(i)] {
                    if v > lo[i] && v < hi[i] {
                        cuts.push(v);
                    }
                }
            }
            cuts.sort_by(|a, b| a.total_cmp(b));
            cuts.dedup();
            let mut r = Vec::with_capacity(2 * cuts.len());
            for k in 0..cuts.len() {
                r.push(cuts[k]);
                if k + 1 < cuts.len() {
                    r.push(0.5 * (cuts[k] + cuts[k + 1]));
                }
            }
            reps.push(r);
        }
        let mut idx = vec![0usize; n];
        let mut x = vec![0.0; n];
        loop {
            for i in 0..n {
                x[i] = reps[i][idx[i]];
            }
            if !near.iter().any(|b| b.contains(&x)) {
                return false;
            }
            let mut i = 0;
            loop {
                if i == n {
                    return true;
                }
                idx[i] += 1;
                if idx[i] < reps[i].len() {
                    break;
                }
                idx[i] = 0;
                i += 1;
            }
        }
    }
}

/// Standard dyadic cube of side `2^{−level}` containing `x`.
pub fn standard_dyadic(x: &[f64], level: i32) -> Cube {
    let side = 2f64.powi(-level);
    let lo: Vec<f64> = x.iter().map(|v| (v / side).floor() * side).collect();
    Cube::from_corner(&lo, side)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WhitneyOptions {
    /// Small-boundary parameter `t`.
    pub t: f64,
    /// Dilations scanned in `[1, 1.1]`.
    pub dilations: usize,
    /// Finest dyadic level searched.
    pub max_level: i32,
}

impl Default for WhitneyOptions {
    fn default() -> Self {
        WhitneyOptions { t: 64.0, dilations: 33, max_level: 48 }
    }
}

/// Expansion factor: the parent `P` of a maximal cube has `10P ⊂ 21Q`.
pub const WHITNEY_R: f64 = 21.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WhitneyCover {
    /// Maximal standard dyadic cubes with `10Q ⊂ Ω` that contain an atom.
    pub cubes: Vec<Cube>,
    pub levels: Vec<i32>,
    /// Atoms of `μ` in `Ω`, by cube.
    pub atoms: Vec<Vec<usize>>,
    /// Realised overlap constant.
    pub d0: usize,
    /// `(index into cubes, Q̃)`.
    pub refined: Vec<(usize, Cube)>,
    pub omega_mass: f64,
    pub refined_mass: f64,
}

pub fn whitney(omega: &OpenSet, mu: &AtomicMeasure, opts: &WhitneyOptions) -> Result<WhitneyCover> {
    mu.require_nonnegative("reference measure")?;
    if omega.dim != mu.dim() {
        return Err(Error::Dimension { expected: mu.dim(), got: omega.dim });
    }
    let mut by_level: Vec<(i32, Cube, Vec<usize>)> = Vec::new();
    let extent = omega.boxes.iter().map(|b| b.side()).fold(0.0, f64::max);
    let coarse = if extent > 0.0 { -(extent.log2().ceil() as i32) - 4 } else { 0 };
    for a in 0..mu.len() {
        let x = mu.point(a);
        if !omega.contains(x) {
            continue;
        }
        let mut found = None;
        for level in coarse..=opts.max_level {
            let q = standard_dyadic(x, level);
            if omega.contains_closed(&closed(&q.center, 10.0 * q.halfside)) {
                found = Some((level, q));
                break;
            }
        }
        let (level, q) = found.ok_or_else(|| Error::Budget(format!("atom {a} needs cubes finer than level {}", opts.max_level)))?;
        match by_level.iter_mut().find(|e| e.0 == level && e.1 == q) {
            Some(e) => e.2.push(a),
            None => by_level.push((level, q, vec![a])),
        }
    }
    let levels: Vec<i32> = by_level.iter().map(|e| e.0).collect();
    let cubes: Vec<Cube> = by_level.iter().map(|e| e.1.clone()).collect();
    let atoms: Vec<Vec<usize>> = by_level.into_iter().map(|e| e.2).collect();
    let d0 = overlap_count(&cubes).0.max(1);
    let omega_mass: f64 = atoms.iter().flatten().map(|&a| mu.weight(a).re).sum();

    let mut order: Vec<usize> = (0..cubes.len()).collect();
    let mass = |i: usize| atoms[i].iter().map(|&a| mu.weight(a).re).sum::<f64>();
    order.sort_by(|&a, &b| mass(b).total_cmp(&mass(a)).then(a.cmp(&b)));
    let mut refined: Vec<(usize, Cube)> = Vec::new();
    let k = opts.dilations.max(2);
    for i in order {
        let q = &cubes[i];
        for s in 0..k {
            let a = 1.0 + 0.1 * s as f64 / (k - 1) as f64;
            let cand = q.scaled(a);
            let m = cmass(mu, &cand);
            if m == 0.0 {
                break;
            }
            if cmass(mu, &cand.scaled(9.0)) <= 2.0 * d0 as f64 * m
                && boundary_ratio(mu, &cand) <= opts.t
                && refined.iter().all(|(_, r)| half_open_disjoint(r, &cand))
            {
                refined.push((i, cand));
                break;
            }
        }
    }
    let refined_mass = refined.iter().map(|(_, r)| cmass(mu, r)).sum();
    Ok(WhitneyCover { cubes, levels, atoms, d0, refined, omega_mass, refined_mass })
}

fn half_open_disjoint(a: &Cube, b: &Cube) -> bool {
    (0..a.dim()).any(|i| a.upper(i) <= b.lower(i) || b.upper(i) <= a.lower(i))
}

/// `(max_i #{j : 10Q_i ∩ 10Q_j ≠ ∅}, max side ratio among such pairs)`.
fn overlap_count(cubes: &[Cube]) -> (usize, f64) {
    let mut worst = 0;
    let mut ratio: f64 = 1.0;
    for a in cubes {
        let big = a.scaled(10.0);
        let mut c = 0;
        for b in cubes {
            if big.dist_to_cube(&b.scaled(10.0)) == 0.0 {
                c += 1;
                ratio = ratio.max(a.side() / b.side());
            }
        }
        worst = worst.max(c);
    }
    (worst, ratio)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct WhitneyReport {
    pub contained: Vec<usize>,
    pub reaches_complement: Vec<usize>,
    pub overlap: usize,
    pub side_ratio: f64,
    /// Atoms of `μ` in `Ω` outside every cube, or in two of them.
    pub uncovered: Vec<usize>,
    pub not_doubling: Vec<usize>,
    pub boundary_ratio: f64,
    pub overlapping_refined: Vec<(usize, usize)>,
    pub outside_range: Vec<usize>,
    pub mass_ratio: f64,
    pub mass_ok: bool,
}

impl WhitneyReport {
    pub fn pass(&self, d0: usize, t: f64) -> bool {
        self.contained.is_empty()
            && self.reaches_complement.is_empty()
            && self.overlap <= d0
            && self.uncovered.is_empty()
            && self.not_doubling.is_empty()
            && self.boundary_ratio <= t
            && self.overlapping_refined.is_empty()
            && self.outside_range.is_empty()
            && self.mass_ok
    }
}

pub fn verify_whitney(cov: &WhitneyCover, omega: &OpenSet, mu: &AtomicMeasure) -> WhitneyReport {
    let mut rep = WhitneyReport::default();
    for (i, q) in cov.cubes.iter().enumerate() {
        if !omega.contains_closed(&closed(&q.center, 10.0 * q.halfside)) {
            rep.contained.push(i);
        }
        if omega.contains_closed(&closed(&q.center, WHITNEY_R * q.halfside)) {
            rep.reaches_complement.push(i);
        }
    }
    let (ov, ratio) = overlap_count(&cov.cubes);
    rep.overlap = ov;
    rep.side_ratio = ratio;
    for a in 0..mu.len() {
        let x = mu.point(a);
        if omega.contains(x) && cov.cubes.iter().filter(|q| q.contains(x)).count() != 1 {
            rep.uncovered.push(a);
        }
    }
    for (j, (i, r)) in cov.refined.iter().enumerate() {
        let m = cmass(mu, r);
        if !(cmass(mu, &r.scaled(9.0)) <= 2.0 * cov.d0 as f64 * m) {
            rep.not_doubling.push(j);
        }
        rep.boundary_ratio = rep.boundary_ratio.max(boundary_ratio(mu, r));
        let q = &cov.cubes[*i];
        if !(r.contains_cube(q) && q.scaled(1.1).contains_cube(r)) {
            rep.outside_range.push(j);
        }
        for (k, (_, other)) in cov.refined.iter().enumerate().skip(j + 1) {
            if !half_open_disjoint(r, other) {
                rep.overlapping_refined.push((j, k));
            }
        }
    }
    let covered: f64 = cov.refined.iter().map(|(_, r)| cmass(mu, r)).sum();
    let om: f64 = (0..mu.len()).filter(|&a| omega.contains(mu.point(a))).map(|a| mu.weight(a).re).sum();
    rep.mass_ratio = if om > 0.0 { covered / om } else { f64::INFINITY };
    rep.mass_ok = om == 0.0 || covered >= om / (8.0 * cov.d0 as f64);
    rep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{generate, Generator};

    #[test]
    fn nu_equal_mu_has_no_cubes() {
        let mu = generate(&Generator::Cantor4 { level: 2 }).unwrap();
        let d = cz_decompose(&mu, &mu, 9.0, &CzOptions::new(1.0), Execution::Sequential).unwrap();
        assert!(d.cubes.is_empty());
        assert!(d.f.iter().all(|v| (v.re - 1.0).abs() < 1e-15 && v.im == 0.0));
        assert!(verify_cz(&d, &mu, &mu, &CzOptions::new(1.0)).pass());
    }

    #[test]
    fn spike_gets_a_cube() {
        let mu = generate(&Generator::Uniform { dim: 1, count: 64 }).unwrap();
        let mut nu = mu.scale(0.1);
        nu.push(&[0.5001], C64::new(0.5, 0.0)).unwrap();
        let lambda = 4.0 * 2.0 * nu.total_variation() / mu.total_variation();
        let opts = CzOptions::new(1.0);
        let d = cz_decompose(&nu, &mu, lambda, &opts, Execution::Sequential).unwrap();
        assert!(!d.cubes.is_empty());
        assert!(d.cubes.iter().any(|q| q.contains(&[0.5001])));
        let rep = verify_cz(&d, &nu, &mu, &opts);
        assert!(rep.cd1.is_empty() && rep.cd2.is_empty() && rep.cd3.is_empty(), "{rep:?}");
        assert!(rep.cd7.is_empty() && rep.bad_mass < 1e-12 && rep.cd5_error < 1e-12);
    }

    #[test]
    fn threshold_rejected() {
        let mu = generate(&Generator::Cantor4 { level: 1 }).unwrap();
        assert!(cz_decompose(&mu, &mu, 8.0, &CzOptions::new(1.0), Execution::Sequential).is_err());
    }

    #[test]
    fn closed_containment_is_exact() {
        let om = OpenSet::new(1, vec![Cube::new(vec![0.25], 0.25), Cube::new(vec![0.75], 0.25)]).unwrap();
        // The shared face 0.5 is in neither open box.
        assert!(!om.contains_closed(&closed(&[0.5], 0.1)));
        assert!(om.contains_closed(&closed(&[0.3], 0.1)));
        let om = OpenSet::new(1, vec![Cube::new(vec![0.25], 0.25), Cube::new(vec![0.7], 0.25)]).unwrap();
        assert!(om.contains_closed(&closed(&[0.5], 0.04)));
    }

    #[test]
    fn unit_cube_whitney() {
        let mu = generate(&Generator::Uniform { dim: 2, count: 256 }).unwrap();
        let om = OpenSet::new(2, vec![Cube::new(vec![0.5, 0.5], 0.5)]).unwrap();
        let opts = WhitneyOptions::default();
        let cov = whitney(&om, &mu, &opts).unwrap();
        let rep = verify_whitney(&cov, &om, &mu);
        assert!(rep.contained.is_empty() && rep.reaches_complement.is_empty() && rep.uncovered.is_empty(), "{rep:?}");
        assert!(rep.overlapping_refined.is_empty() && rep.mass_ok);
    }

    #[test]
    fn empty_mass_whitney() {
        let mu = AtomicMeasure::from_real(1, 0.01, &[([5.0], 1.0)]).unwrap();
        let om = OpenSet::new(1, vec![Cube::new(vec![0.5], 0.5)]).unwrap();
        let cov = whitney(&om, &mu, &WhitneyOptions::default()).unwrap();
        assert!(cov.cubes.is_empty() && cov.refined.is_empty());
        assert!(verify_whitney(&cov, &om, &mu).mass_ok);
    }
}
