//! Bilinear vertical square functions `BV(ν₁,ν₂)(x) = (∫₀^∞ |θ_t(ν₁,ν₂)(x)|² dt/t)^{1/2}`.

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::{dist, has_small_boundary, is_doubling, AtomicMeasure, Cube, Point, Region};
use crate::kernels::{ConditionReport, SamplerConfig};
use crate::suppression::weak_type_sup;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyParams {
    pub dim: usize,
    pub m: f64,
    pub alpha: f64,
}

pub trait SquareFamily: Send + Sync {
    fn params(&self) -> FamilyParams;

    fn eval(&self, t: f64, x: &[f64], y: &[f64], z: &[f64]) -> C64;

    /// `θ_t(ν₁,ν₂)(x) = Σ_{j,k} s_t(x, y_j, z_k) w_j v_k`.
    fn theta(&self, t: f64, nu1: &AtomicMeasure, nu2: &AtomicMeasure, x: &[f64]) -> C64 {
        let mut s = C64::new(0.0, 0.0);
        for j in 0..nu1.len() {
            let y = nu1.point(j);
            let mut inner = C64::new(0.0, 0.0);
            for k in 0..nu2.len() {
                inner += self.eval(t, x, y, nu2.point(k)) * nu2.weight(k);
            }
            s += inner * nu1.weight(j);
        }
        s
    }
}

/// `s_t = t^{2α} / ((t+|x−y|)^{m+α} (t+|x−z|)^{m+α})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShippedFamily {
    pub dim: usize,
    pub m: f64,
    pub alpha: f64,
}

impl ShippedFamily {
    pub fn new(dim: usize, m: f64, alpha: f64) -> Self {
        ShippedFamily { dim, m, alpha }
    }
}

impl SquareFamily for ShippedFamily {
    fn params(&self) -> FamilyParams {
        FamilyParams { dim: self.dim, m: self.m, alpha: self.alpha }
    }

    fn eval(&self, t: f64, x: &[f64], y: &[f64], z: &[f64]) -> C64 {
        let e = self.m + self.alpha;
        // The product of the two factors is formed first so the value is
        // exactly symmetric in y and z.
        let pair = (t + dist(x, y)).powf(-e) * (t + dist(x, z)).powf(-e);
        C64::new(t.powf(2.0 * self.alpha) * pair, 0.0)
    }

    // The kernel factors, so the double sum is a product of two single sums.
    fn theta(&self, t: f64, nu1: &AtomicMeasure, nu2: &AtomicMeasure, x: &[f64]) -> C64 {
        let e = self.m + self.alpha;
        let side = |nu: &AtomicMeasure| -> C64 {
            (0..nu.len()).map(|j| nu.weight(j) * (t + dist(x, nu.point(j))).powf(-e)).sum()
        };
        side(nu1) * side(nu2) * t.powf(2.0 * self.alpha)
    }
}

/// The shipped family times `1 + min(|x−y|/t, 1)^γ`: Hölder of order `γ`
/// only in `y`, so with `γ < α` the `y`-condition fails at small scales.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoughFamily {
    pub base: ShippedFamily,
    pub gamma: f64,
}

impl SquareFamily for RoughFamily {
    fn params(&self) -> FamilyParams {
        self.base.params()
    }

    fn eval(&self, t: f64, x: &[f64], y: &[f64], z: &[f64]) -> C64 {
        self.base.eval(t, x, y, z) * (1.0 + (dist(x, y) / t).min(1.0).powf(self.gamma))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleQuadrature {
    pub t_min: f64,
    /// Upper end of the grid; `None` means `4 · max(diam, reach of x)`.
    pub t_max: Option<f64>,
    pub per_octave: usize,
    /// Upper cutoff `A` of `BV^A`.
    pub cutoff: Option<f64>,
}

impl ScaleQuadrature {
    pub fn new(t_min: f64) -> Self {
        ScaleQuadrature { t_min, t_max: None, per_octave: 16, cutoff: None }
    }

    pub fn with_cutoff(mut self, a: f64) -> Self {
        self.cutoff = Some(a);
        self
    }

    pub fn with_density(mut self, per_octave: usize) -> Self {
        self.per_octave = per_octave;
        self
    }

    fn validate(&self, resolution: f64) -> Result<()> {
        if self.per_octave < 4 {
            return Err(Error::InvalidParameter(format!("density {} below 4 per octave", self.per_octave)));
        }
        if !(self.t_min > 0.0) || self.t_min < resolution {
            return Err(Error::BelowResolution { scale: self.t_min, resolution });
        }
        Ok(())
    }
}

fn reach(nu: &AtomicMeasure, x: &[f64]) -> f64 {
    nu.points().map(|p| dist(x, p)).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BvValue {
    pub value: f64,
    /// Analytic tail `∫_{t_max}^{A} |θ_t|² dt/t`, included in `value`.
    pub tail: f64,
}

/// Midpoint rule in `log t` on `[t_min, t_max]` plus the tail beyond
/// `t_max`, where `|θ_t| ∝ t^{−2m}` once every atom is within `t_max/4`.
pub fn bv_detailed<F: SquareFamily + ?Sized>(
    fam: &F,
    nu1: &AtomicMeasure,
    nu2: &AtomicMeasure,
    x: &[f64],
    quad: &ScaleQuadrature,
) -> Result<BvValue> {
    quad.validate(nu1.resolution().min(nu2.resolution()))?;
    let m = fam.params().m;
    let t_max = quad.t_max.unwrap_or_else(|| 4.0 * reach(nu1, x).max(reach(nu2, x)).max(quad.t_min));
    let upper = quad.cutoff.unwrap_or(f64::INFINITY);
    let d = quad.per_octave as f64;
    let h = std::f64::consts::LN_2 / d;
    let cells = ((t_max / quad.t_min).log2() * d).ceil().max(1.0) as usize;
    let mut sum = 0.0;
    for i in 0..cells {
        let lo = quad.t_min * 2f64.powf(i as f64 / d);
        if lo >= upper {
            break;
        }
        let hi = quad.t_min * 2f64.powf((i + 1) as f64 / d);
        let w = if hi <= upper { h } else { (upper / lo).ln() };
        let t = (lo * hi).sqrt();
        sum += fam.theta(t, nu1, nu2, x).norm_sqr() * w;
    }
    let t_end = quad.t_min * 2f64.powf(cells as f64 / d);
    let mut tail = 0.0;
    if upper > t_end {
        let a = fam.theta(t_end, nu1, nu2, x).norm();
        let b = fam.theta(2.0 * t_end, nu1, nu2, x).norm();
        if a > 0.0 && b > a * 2f64.powf(-m) {
            return Err(Error::NonConvergentTail);
        }
        let frac = if upper.is_finite() { 1.0 - (t_end / upper).powf(4.0 * m) } else { 1.0 };
        tail = a * a * frac / (4.0 * m);
    }
    Ok(BvValue { value: (sum + tail).sqrt(), tail })
}

pub fn bv<F: SquareFamily + ?Sized>(
    fam: &F,
    nu1: &AtomicMeasure,
    nu2: &AtomicMeasure,
    x: &[f64],
    quad: &ScaleQuadrature,
) -> Result<f64> {
    bv_detailed(fam, nu1, nu2, x, quad).map(|v| v.value)
}

pub fn bv_at<F: SquareFamily + ?Sized>(
    fam: &F,
    nu1: &AtomicMeasure,
    nu2: &AtomicMeasure,
    xs: &[Point],
    quad: &ScaleQuadrature,
    exec: Execution,
) -> Result<Vec<f64>> {
    exec.map_slice(xs, |x| bv(fam, nu1, nu2, x, quad)).into_iter().collect()
}

/// Worst ratios in the size condition and the three Hölder conditions, each
/// normalised by `t^{2α}/((t+|x−y|)^{m+α}(t+|x−z|)^{m+α})` and, for the
/// Hölder ones, by `(|x−x'|/t)^α` with `|x−x'| < t/2`.
pub fn verify_sq_kernel<F: SquareFamily + ?Sized>(fam: &F, cfg: &SamplerConfig) -> ConditionReport {
    let p = fam.params();
    let n = p.dim;
    let reference = ShippedFamily::new(n, p.m, p.alpha);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rep = ConditionReport { samples: cfg.samples, ..Default::default() };
    let unit = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let r = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if r > 1e-3 && r <= 1.0 {
                return v.into_iter().map(|a| a / r).collect();
            }
        }
    };
    for _ in 0..cfg.samples {
        let t = (cfg.r_min.ln() + rng.gen::<f64>() * (cfg.r_max / cfg.r_min).ln()).exp();
        let x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let mode = rng.gen_range(0..8);
        let place = |at_x: bool, rng: &mut ChaCha8Rng| -> Vec<f64> {
            if at_x {
                return x.clone();
            }
            let r = t * 10f64.powf(rng.gen_range(-3.0..2.0));
            let u = unit(rng);
            x.iter().zip(u).map(|(a, b)| a + r * b).collect()
        };
        let y = place(mode == 0, &mut rng);
        let z = place(mode == 1, &mut rng);
        let at_threshold = rng.gen::<f64>() < cfg.threshold_fraction;
        let u = if at_threshold { 1.0 } else { 10f64.powf(rng.gen_range(-6.0..0.0)) };
        let hstep = u * t / 2.0;
        let dir = unit(&mut rng);
        let shift = |a: &[f64]| -> Vec<f64> { a.iter().zip(&dir).map(|(v, e)| v + hstep * e).collect() };
        let size = reference.eval(t, &x, &y, &z).re;
        let s0 = fam.eval(t, &x, &y, &z);
        rep.size = rep.size.max(s0.norm() / size);
        let norm = (hstep / t).powf(p.alpha) * size;
        let rx = (s0 - fam.eval(t, &shift(&x), &y, &z)).norm() / norm;
        let ry = (s0 - fam.eval(t, &x, &shift(&y), &z)).norm() / norm;
        // Same draw with the roles of y and z exchanged.
        let s1 = fam.eval(t, &x, &z, &y);
        let rz = (s1 - fam.eval(t, &x, &z, &shift(&y))).norm() / norm;
        rep.holder_x = rep.holder_x.max(rx);
        rep.holder_y = rep.holder_y.max(ry);
        rep.holder_z = rep.holder_z.max(rz);
        if at_threshold {
            rep.threshold_samples += 1;
            rep.at_threshold = rep.at_threshold.max(rx.max(ry).max(rz));
        }
    }
    rep
}

/// Whether `Q` is `(2, β)`-doubling with `t`-small boundary.
pub fn qualifies(mu: &AtomicMeasure, q: &Cube, beta: f64, t: f64) -> bool {
    is_doubling(mu, q, 2.0, beta) && has_small_boundary(mu, q, t)
}

/// `sup_λ λ^l μ({x ∈ Q∖H_Q : BV^{ℓ(Q)}(1_Q μ, 1_Q μ)(x) > λ}) / μ(Q)`, or
/// `None` when `μ(Q) = 0`.
pub fn t1_testing_statistic<F: SquareFamily + ?Sized>(
    fam: &F,
    mu: &AtomicMeasure,
    q: &Cube,
    h_q: &Region,
    l: f64,
    per_octave: usize,
    exec: Execution,
) -> Result<Option<f64>> {
    let mq = mu.cube_mass(q);
    if mq == 0.0 {
        return Ok(None);
    }
    let local = mu.restrict(&Region::Cube(q.clone()));
    let quad = ScaleQuadrature::new(mu.resolution()).with_density(per_octave).with_cutoff(q.side());
    let idx: Vec<usize> = (0..local.len()).filter(|&i| !h_q.contains(local.point(i))).collect();
    let pts: Vec<Point> = idx.iter().map(|&i| Point::from(local.point(i))).collect();
    let vals = bv_at(fam, &local, &local, &pts, &quad, exec)?;
    let sub = AtomicMeasure::from_atoms(
        mu.dim(),
        mu.resolution(),
        &idx.iter().map(|&i| (local.point(i), local.weight(i))).collect::<Vec<_>>(),
    )?;
    Ok(Some(weak_type_sup(&sub, &vals, l) / mq))
}
