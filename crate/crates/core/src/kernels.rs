//! Bilinear kernels, their adjoints, and the Lipschitz suppression.

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dist, Cube, Point};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub dim: usize,
    /// Growth order of the underlying measure.
    pub m: f64,
    /// Hölder exponent.
    pub alpha: f64,
    /// Claimed constant in the size and smoothness conditions.
    pub c_k: f64,
}

/// A point with a per-point auxiliary value cached by the kernel (the
/// profile value for suppressed kernels, zero otherwise).
#[derive(Clone, Copy, Debug)]
pub struct Site<'a> {
    pub x: &'a [f64],
    pub aux: f64,
}

pub trait Kernel: Send + Sync {
    fn params(&self) -> KernelParams;

    fn aux(&self, _p: &[f64]) -> f64 {
        0.0
    }

    /// Value off the diagonal `x = y = z`; callers guarantee that.
    fn eval_sites(&self, x: Site, y: Site, z: Site) -> C64;

    fn eval(&self, x: &[f64], y: &[f64], z: &[f64]) -> Result<C64> {
        let n = self.params().dim;
        for p in [x, y, z] {
            if p.len() != n {
                return Err(Error::Dimension { expected: n, got: p.len() });
            }
        }
        if x == y && x == z {
            return Err(Error::OnDiagonal);
        }
        let s = |p| Site { x: p, aux: self.aux(p) };
        Ok(self.eval_sites(s(x), s(y), s(z)))
    }
}

impl<K: Kernel + ?Sized> Kernel for &K {
    fn params(&self) -> KernelParams {
        (**self).params()
    }
    fn aux(&self, p: &[f64]) -> f64 {
        (**self).aux(p)
    }
    fn eval_sites(&self, x: Site, y: Site, z: Site) -> C64 {
        (**self).eval_sites(x, y, z)
    }
}

impl<K: Kernel + ?Sized> Kernel for Box<K> {
    fn params(&self) -> KernelParams {
        (**self).params()
    }
    fn aux(&self, p: &[f64]) -> f64 {
        (**self).aux(p)
    }
    fn eval_sites(&self, x: Site, y: Site, z: Site) -> C64 {
        (**self).eval_sites(x, y, z)
    }
}

/// `c (|x−y| + |x−z|)^{−2m}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarModel {
    pub dim: usize,
    pub m: f64,
    pub scale: f64,
}

impl ScalarModel {
    pub fn new(dim: usize, m: f64) -> Self {
        ScalarModel { dim, m, scale: 1.0 }
    }
}

impl Kernel for ScalarModel {
    fn params(&self) -> KernelParams {
        KernelParams { dim: self.dim, m: self.m, alpha: 1.0, c_k: self.scale }
    }

    #[inline]
    fn eval_sites(&self, x: Site, y: Site, z: Site) -> C64 {
        let d = dist(x.x, y.x) + dist(x.x, z.x);
        C64::new(self.scale * d.powf(-2.0 * self.m), 0.0)
    }
}

/// `((y − x)·e) / (|x−y| + |x−z|)^{2m+1}`, odd under `y − x ↦ x − y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OddModel {
    pub m: f64,
    pub direction: Vec<f64>,
}

impl OddModel {
    pub fn new(dim: usize, m: f64) -> Self {
        let mut e = vec![0.0; dim];
        e[0] = 1.0;
        OddModel { m, direction: e }
    }
}

impl Kernel for OddModel {
    fn params(&self) -> KernelParams {
        KernelParams { dim: self.direction.len(), m: self.m, alpha: 1.0, c_k: 1.0 }
    }

    #[inline]
    fn eval_sites(&self, x: Site, y: Site, z: Site) -> C64 {
        let d = dist(x.x, y.x) + dist(x.x, z.x);
        let proj: f64 = self.direction.iter().zip(y.x.iter().zip(x.x)).map(|(e, (a, b))| e * (a - b)).sum();
        C64::new(proj * d.powf(-2.0 * self.m - 1.0), 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjointSlot {
    /// `K^{1*}(x,y,z) = K(y,x,z)`.
    First,
    /// `K^{2*}(x,y,z) = K(z,y,x)`.
    Second,
}

#[derive(Debug, Clone)]
pub struct Adjoint<K> {
    pub inner: K,
    pub slot: AdjointSlot,
}

pub fn adjoint_kernel<K: Kernel>(inner: K, slot: AdjointSlot) -> Adjoint<K> {
    Adjoint { inner, slot }
}

impl<K: Kernel> Kernel for Adjoint<K> {
    fn params(&self) -> KernelParams {
        self.inner.params()
    }
    fn aux(&self, p: &[f64]) -> f64 {
        self.inner.aux(p)
    }
    #[inline]
    fn eval_sites(&self, x: Site, y: Site, z: Site) -> C64 {
        match self.slot {
            AdjointSlot::First => self.inner.eval_sites(y, x, z),
            AdjointSlot::Second => self.inner.eval_sites(z, y, x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cone {
    pub apex: Point,
    pub height: f64,
}

/// `max(λ₀ ℓ(Q₀) − d(x, ∂Q₀), 0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryTerm {
    pub cube: Cube,
    pub level: f64,
}

impl BoundaryTerm {
    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.level * self.cube.side() - self.cube.dist_to_boundary(x)).max(0.0)
    }
}

/// `Φ(x) = max(floor, max_i (h_i − |x − a_i|)₊, boundary(x))`: a maximum of
/// 1-Lipschitz functions, hence 1-Lipschitz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct LipschitzProfile {
    pub cones: Vec<Cone>,
    #[serde(default)]
    pub floor: f64,
    #[serde(default)]
    pub boundary: Option<BoundaryTerm>,
}

impl LipschitzProfile {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut v = self.floor.max(0.0);
        for c in &self.cones {
            v = v.max(c.height - dist(x, &c.apex));
        }
        if let Some(b) = &self.boundary {
            v = v.max(b.eval(x));
        }
        v
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self
    }

    pub fn with_boundary(mut self, b: BoundaryTerm) -> Self {
        self.boundary = Some(b);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("profile serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Largest difference quotient of `Φ` over all pairs of `points`.
pub fn lipschitz_audit(profile: &LipschitzProfile, points: &[Point]) -> f64 {
    let vals: Vec<f64> = points.iter().map(|p| profile.eval(p)).collect();
    let mut worst: f64 = 0.0;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d = dist(&points[i], &points[j]);
            if d > 0.0 {
                worst = worst.max((vals[i] - vals[j]).abs() / d);
            }
        }
    }
    worst
}

pub fn suppression_exponent(m: f64) -> f64 {
    f64::max(1.0, 2.0 * m / 3.0)
}

#[inline]
fn suppression_factor(d: f64, px: f64, py: f64, pz: f64, beta: f64) -> f64 {
    let prod = (px * py * pz).powf(beta);
    if prod == 0.0 {
        return 1.0;
    }
    let lead = d.powf(3.0 * beta);
    lead / (lead + prod)
}

/// `A_Φ(x,y,z) = d^{3β} / (d^{3β} + Φ(x)^β Φ(y)^β Φ(z)^β)` with
/// `d = |x−y| + |x−z|` and `β = max(1, 2m/3)`.
pub fn eval_a_phi(x: &[f64], y: &[f64], z: &[f64], profile: &LipschitzProfile, m: f64) -> f64 {
    let d = dist(x, y) + dist(x, z);
    suppression_factor(d, profile.eval(x), profile.eval(y), profile.eval(z), suppression_exponent(m))
}

/// `K_Φ = A_Φ K`.
#[derive(Debug, Clone)]
pub struct Suppressed<K> {
    pub inner: K,
    pub profile: LipschitzProfile,
    beta: f64,
}

impl<K: Kernel> Suppressed<K> {
    pub fn new(inner: K, profile: LipschitzProfile) -> Self {
        let beta = suppression_exponent(inner.params().m);
        Suppressed { inner, profile, beta }
    }
}

pub fn eval_suppressed<K: Kernel>(k: &Suppressed<K>, x: &[f64], y: &[f64], z: &[f64]) -> Result<C64> {
    k.eval(x, y, z)
}

impl<K: Kernel> Kernel for Suppressed<K> {
    fn params(&self) -> KernelParams {
        self.inner.params()
    }

    fn aux(&self, p: &[f64]) -> f64 {
        self.profile.eval(p)
    }

    #[inline]
    fn eval_sites(&self, x: Site, y: Site, z: Site) -> C64 {
        let d = dist(x.x, y.x) + dist(x.x, z.x);
        let a = suppression_factor(d, x.aux, y.aux, z.aux, self.beta);
        fn strip(s: Site) -> Site {
            Site { x: s.x, aux: 0.0 }
        }
        self.inner.eval_sites(strip(x), strip(y), strip(z)) * a
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub samples: usize,
    pub seed: u64,
    pub r_min: f64,
    pub r_max: f64,
    /// Fraction of smoothness samples placed exactly at the admissibility
    /// threshold `|x − x'| = max(|x−y|, |x−z|)/2`.
    pub threshold_fraction: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { samples: 4000, seed: 0, r_min: 1e-3, r_max: 1.0, threshold_fraction: 0.1 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ConditionReport {
    pub size: f64,
    pub holder_x: f64,
    pub holder_y: f64,
    pub holder_z: f64,
    /// Worst smoothness ratio among samples at the threshold.
    pub at_threshold: f64,
    pub threshold_samples: usize,
    pub samples: usize,
}

impl ConditionReport {
    pub fn worst(&self) -> f64 {
        self.size.max(self.holder_x).max(self.holder_y).max(self.holder_z)
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if r > 1e-3 && r <= 1.0 {
            return v.into_iter().map(|a| a / r).collect();
        }
    }
}

struct Triple {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    dir: Vec<f64>,
    u: f64,
    at_threshold: bool,
}

fn draw_triple(rng: &mut ChaCha8Rng, n: usize, cfg: &SamplerConfig) -> Triple {
    let lr = cfg.r_min.ln() + rng.gen::<f64>() * (cfg.r_max / cfg.r_min).ln();
    let s = lr.exp();
    let x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * cfg.r_max).collect();
    let mode = rng.gen_range(0..10);
    let off = |zero: bool, rng: &mut ChaCha8Rng| -> Vec<f64> {
        if zero {
            return x.clone();
        }
        let r = s * rng.gen_range(0.05..1.0);
        let u = unit_vector(rng, n);
        x.iter().zip(u).map(|(a, b)| a + r * b).collect()
    };
    let y = off(mode == 0, rng);
    let z = off(mode == 1, rng);
    let at_threshold = rng.gen::<f64>() < cfg.threshold_fraction;
    let u = if at_threshold { 1.0 } else { rng.gen_range(1e-3..1.0) };
    Triple { x, y, z, dir: unit_vector(rng, n), u, at_threshold }
}

/// Worst observed ratios in the size and the three smoothness conditions,
/// normalised so that a kernel meeting them with constant `C` reports `C`.
pub fn verify_kernel_conditions<K: Kernel>(k: &K, cfg: &SamplerConfig) -> ConditionReport {
    let p = k.params();
    let n = p.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rep = ConditionReport { samples: cfg.samples, ..Default::default() };
    let ev = |a: &[f64], b: &[f64], c: &[f64]| k.eval(a, b, c).map(|v| v.norm()).unwrap_or(0.0);
    let evc = |a: &[f64], b: &[f64], c: &[f64]| k.eval(a, b, c).unwrap_or_default();
    for _ in 0..cfg.samples {
        let t = draw_triple(&mut rng, n, cfg);
        let dxy = dist(&t.x, &t.y);
        let dxz = dist(&t.x, &t.z);
        let d = dxy + dxz;
        if d == 0.0 {
            continue;
        }
        rep.size = rep.size.max(ev(&t.x, &t.y, &t.z) * d.powf(2.0 * p.m));
        let h = t.u * dxy.max(dxz) / 2.0;
        let shift = |a: &[f64]| -> Vec<f64> { a.iter().zip(&t.dir).map(|(v, e)| v + h * e).collect() };
        let norm = h.powf(p.alpha) / d.powf(2.0 * p.m + p.alpha);
        let k0 = evc(&t.x, &t.y, &t.z);
        let rx = (k0 - evc(&shift(&t.x), &t.y, &t.z)).norm() / norm;
        let ry = (k0 - evc(&t.x, &shift(&t.y), &t.z)).norm() / norm;
        // Same draw with the roles of y and z exchanged.
        let k1 = evc(&t.x, &t.z, &t.y);
        let rz = (k1 - evc(&t.x, &t.z, &shift(&t.y))).norm() / norm;
        rep.holder_x = rep.holder_x.max(rx);
        rep.holder_y = rep.holder_y.max(ry);
        rep.holder_z = rep.holder_z.max(rz);
        if t.at_threshold {
            rep.threshold_samples += 1;
            rep.at_threshold = rep.at_threshold.max(rx.max(ry).max(rz));
        }
    }
    rep
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SuppressionReport {
    /// Worst `|K_Φ| (d + Φx + Φy + Φz)^{2m}`.
    pub improved_size: f64,
    /// Smallest `(d^{3β} + ΦxβΦyβΦzβ) / (d^{3β} + Φx^{3β} + Φy^{3β} + Φz^{3β})`.
    pub comparison_min: f64,
    pub a_phi_min: f64,
    pub a_phi_max: f64,
    pub samples: usize,
}

/// Samples triples and random 1-Lipschitz profiles and reports the improved
/// size bound of the suppressed kernel together with the comparison of the
/// product `ΦxβΦyβΦzβ` against the sum of cubes.
pub fn verify_suppressed_size<K: Kernel + Clone>(k: &K, cfg: &SamplerConfig, cones: usize) -> SuppressionReport {
    let p = k.params();
    let n = p.dim;
    let beta = suppression_exponent(p.m);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut rep = SuppressionReport { comparison_min: f64::INFINITY, a_phi_min: 1.0, a_phi_max: 0.0, samples: cfg.samples, ..Default::default() };
    let per_profile = 64;
    let mut i = 0;
    while i < cfg.samples {
        let profile = LipschitzProfile {
            cones: (0..cones)
                .map(|_| Cone {
                    apex: Point((0..n).map(|_| rng.gen::<f64>() * cfg.r_max).collect()),
                    height: cfg.r_max * rng.gen::<f64>().powi(2),
                })
                .collect(),
            floor: if rng.gen::<f64>() < 0.3 { cfg.r_min * rng.gen::<f64>() } else { 0.0 },
            boundary: None,
        };
        let sk = Suppressed::new(k.clone(), profile.clone());
        for _ in 0..per_profile.min(cfg.samples - i) {
            i += 1;
            let t = draw_triple(&mut rng, n, cfg);
            let d = dist(&t.x, &t.y) + dist(&t.x, &t.z);
            if d == 0.0 {
                continue;
            }
            let (fx, fy, fz) = (profile.eval(&t.x), profile.eval(&t.y), profile.eval(&t.z));
            let v = sk.eval(&t.x, &t.y, &t.z).map(|v| v.norm()).unwrap_or(0.0);
            rep.improved_size = rep.improved_size.max(v * (d + fx + fy + fz).powf(2.0 * p.m));
            let lead = d.powf(3.0 * beta);
            let num = lead + (fx * fy * fz).powf(beta);
            let den = lead + fx.powf(3.0 * beta) + fy.powf(3.0 * beta) + fz.powf(3.0 * beta);
            rep.comparison_min = rep.comparison_min.min(num / den);
            let a = eval_a_phi(&t.x, &t.y, &t.z, &profile, p.m);
            rep.a_phi_min = rep.a_phi_min.min(a);
            rep.a_phi_max = rep.a_phi_max.max(a);
        }
    }
    rep
}
