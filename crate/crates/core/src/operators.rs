//! Truncated bilinear singular integrals over atomic measures.
//!
//! For a fixed `x` every pair of atoms `(y,z)` has a key: `max(|x−y|,|x−z|)`
//! for the cube-type truncation, `(|x−y|² + |x−z|²)^{1/2}` for the ball-type
//! one. `T_ε` keeps the pairs whose key exceeds `ε`, so `ε ↦ T_ε(x)` is a step
//! function with jumps at the distinct keys and the maximal truncation is a
//! maximum over suffix sums.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::{dist, AtomicMeasure, Point, Region};
use crate::kernels::{Kernel, Site};
use crate::maximal::{lp_norm_c, maximal_bilinear, Integrand, MaximalSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TruncationMode {
    /// `max(|x−y|, |x−z|) > ε`.
    #[default]
    Max,
    /// `|x−y|² + |x−z|² > ε²`.
    Ball,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub mode: TruncationMode,
    pub eps: f64,
}

impl Truncation {
    pub fn max(eps: f64) -> Self {
        Truncation { mode: TruncationMode::Max, eps }
    }
    pub fn ball(eps: f64) -> Self {
        Truncation { mode: TruncationMode::Ball, eps }
    }
    /// No truncation beyond removing the diagonal.
    pub fn none() -> Self {
        Truncation::max(0.0)
    }
}

#[inline]
fn key(mode: TruncationMode, dy: f64, dz: f64) -> f64 {
    match mode {
        TruncationMode::Max => dy.max(dz),
        TruncationMode::Ball => (dy * dy + dz * dz).sqrt(),
    }
}

/// Kernel auxiliaries cached for the atoms of a measure.
fn aux_of<K: Kernel + ?Sized>(k: &K, nu: &AtomicMeasure) -> Vec<f64> {
    nu.points().map(|p| k.aux(p)).collect()
}

/// A bilinear evaluation problem with cached per-atom data.
pub struct Bilinear<'a, K: Kernel + ?Sized> {
    pub kernel: &'a K,
    pub nu1: &'a AtomicMeasure,
    pub nu2: &'a AtomicMeasure,
    aux1: Vec<f64>,
    aux2: Vec<f64>,
}

impl<'a, K: Kernel + ?Sized> Bilinear<'a, K> {
    pub fn new(kernel: &'a K, nu1: &'a AtomicMeasure, nu2: &'a AtomicMeasure) -> Result<Self> {
        let n = kernel.params().dim;
        for nu in [nu1, nu2] {
            if nu.dim() != n {
                return Err(Error::Dimension { expected: n, got: nu.dim() });
            }
        }
        Ok(Bilinear { kernel, nu1, nu2, aux1: aux_of(kernel, nu1), aux2: aux_of(kernel, nu2) })
    }

    /// Visit every off-diagonal pair with its key and `K(x,y,z) dν₁ dν₂`,
    /// in index order.
    #[inline]
    fn for_pairs(&self, x: &[f64], mode: TruncationMode, mut visit: impl FnMut(f64, C64)) {
        let sx = Site { x, aux: self.kernel.aux(x) };
        let dz: Vec<f64> = self.nu2.points().map(|z| dist(x, z)).collect();
        for j in 0..self.nu1.len() {
            let y = self.nu1.point(j);
            let dy = dist(x, y);
            let wy = self.nu1.weight(j);
            let sy = Site { x: y, aux: self.aux1[j] };
            for k in 0..self.nu2.len() {
                let kk = key(mode, dy, dz[k]);
                if kk == 0.0 {
                    continue;
                }
                let sz = Site { x: self.nu2.point(k), aux: self.aux2[k] };
                visit(kk, self.kernel.eval_sites(sx, sy, sz) * wy * self.nu2.weight(k));
            }
        }
    }

    pub fn apply(&self, x: &[f64], t: Truncation) -> C64 {
        let mut s = C64::new(0.0, 0.0);
        self.for_pairs(x, t.mode, |kk, v| {
            if kk > t.eps {
                s += v;
            }
        });
        s
    }

    /// `∬_{key > ε} |K| d|ν₁| d|ν₂|`.
    pub fn apply_abs(&self, x: &[f64], t: Truncation) -> f64 {
        let mut s = 0.0;
        self.for_pairs(x, t.mode, |kk, v| {
            if kk > t.eps {
                s += v.norm();
            }
        });
        s
    }

    /// The step function `ε ↦ T_ε(x)`: entries `(κ, S)` with keys `κ`
    /// strictly decreasing, where `S = T_ε(x)` for `ε` just below `κ`.
    /// Pairs sharing a key are summed in index order before accumulation.
    pub fn profile(&self, x: &[f64], mode: TruncationMode) -> Vec<(f64, C64)> {
        let mut pairs: Vec<(f64, C64)> = Vec::with_capacity(self.nu1.len() * self.nu2.len());
        self.for_pairs(x, mode, |kk, v| pairs.push((kk, v)));
        // Stable: equal keys keep index order.
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut out = Vec::new();
        let mut acc = C64::new(0.0, 0.0);
        let mut i = 0;
        while i < pairs.len() {
            let kk = pairs[i].0;
            let mut g = C64::new(0.0, 0.0);
            while i < pairs.len() && pairs[i].0 == kk {
                g += pairs[i].1;
                i += 1;
            }
            acc += g;
            out.push((kk, acc));
        }
        out
    }

    pub fn maximal_exact(&self, x: &[f64], delta: f64, mode: TruncationMode) -> MaximalTruncation {
        sup_of_profile(&self.profile(x, mode), delta)
    }

    /// `T_ε(x)` on an increasing grid of `ε`, from bucketed sums. Agrees
    /// bit for bit with the exact profile at every grid point when the grid
    /// contains all keys.
    pub fn on_grid(&self, x: &[f64], grid: &[f64], mode: TruncationMode) -> Vec<C64> {
        let g = grid.len();
        let mut buckets = vec![C64::new(0.0, 0.0); g + 1];
        let mut used = vec![false; g + 1];
        self.for_pairs(x, mode, |kk, v| {
            // Bucket b holds keys in (grid[b−1], grid[b]].
            let b = grid.partition_point(|&e| e < kk);
            buckets[b] += v;
            used[b] = true;
        });
        let mut out = vec![C64::new(0.0, 0.0); g];
        let mut acc = C64::new(0.0, 0.0);
        for b in (1..=g).rev() {
            if used[b] {
                acc += buckets[b];
            }
            out[b - 1] = acc;
        }
        out
    }

    pub fn maximal_grid(&self, x: &[f64], delta: f64, grid: &[f64], mode: TruncationMode) -> f64 {
        let vals = self.on_grid(x, grid, mode);
        grid.iter().zip(vals).filter(|(e, _)| **e > delta).map(|(_, v)| v.norm()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaximalTruncation {
    pub value: f64,
    /// Key `κ` at which the supremum is attained: `ε ↑ κ`.
    pub breakpoint: Option<f64>,
}

pub fn sup_of_profile(profile: &[(f64, C64)], delta: f64) -> MaximalTruncation {
    let mut best = MaximalTruncation { value: 0.0, breakpoint: None };
    for &(kk, s) in profile {
        if kk <= delta {
            break;
        }
        if s.norm() > best.value {
            best = MaximalTruncation { value: s.norm(), breakpoint: Some(kk) };
        }
    }
    best
}

/// `T_ε` from a profile: the sum over keys `> ε`.
pub fn value_from_profile(profile: &[(f64, C64)], eps: f64) -> C64 {
    let mut v = C64::new(0.0, 0.0);
    for &(kk, s) in profile {
        if kk > eps {
            v = s;
        } else {
            break;
        }
    }
    v
}

pub fn apply_truncated<K: Kernel + ?Sized>(
    k: &K,
    nu1: &AtomicMeasure,
    nu2: &AtomicMeasure,
    x: &[f64],
    t: Truncation,
) -> Result<C64> {
    if x.len() != nu1.dim() {
        return Err(Error::Dimension { expected: nu1.dim(), got: x.len() });
    }
    Ok(Bilinear::new(k, nu1, nu2)?.apply(x, t))
}

pub fn maximal_truncation_exact<K: Kernel + ?Sized>(
    k: &K,
    nu1: &AtomicMeasure,
    nu2: &AtomicMeasure,
    x: &[f64],
    delta: f64,
) -> Result<MaximalTruncation> {
    Ok(Bilinear::new(k, nu1, nu2)?.maximal_exact(x, delta.max(0.0), TruncationMode::Max))
}

/// `T_{♯,δ}` at each point.
pub fn maximal_truncation_at<K: Kernel + ?Sized>(
    k: &K,
    nu1: &AtomicMeasure,
    nu2: &AtomicMeasure,
    xs: &[Point],
    delta: f64,
    exec: Execution,
) -> Result<Vec<f64>> {
    let b = Bilinear::new(k, nu1, nu2)?;
    Ok(exec.map_slice(xs, |x| b.maximal_exact(x, delta.max(0.0), TruncationMode::Max).value))
}

/// `T_ε` at each point.
pub fn truncated_at<K: Kernel + ?Sized>(
    k: &K,
    nu1: &AtomicMeasure,
    nu2: &AtomicMeasure,
    xs: &[Point],
    t: Truncation,
    exec: Execution,
) -> Result<Vec<C64>> {
    let b = Bilinear::new(k, nu1, nu2)?;
    Ok(exec.map_slice(xs, |x| b.apply(x, t)))
}

pub fn atoms_of(mu: &AtomicMeasure) -> Vec<Point> {
    mu.points().map(Point::from).collect()
}

/// `Σ_x h(x) T(f dμ, g dμ)(x) μ({x})`.
pub fn trilinear_form<K: Kernel + ?Sized>(
    k: &K,
    mu: &AtomicMeasure,
    f: &[C64],
    g: &[C64],
    h: &[C64],
    t: Truncation,
    exec: Execution,
) -> Result<C64> {
    let fm = mu.times(f)?;
    let gm = mu.times(g)?;
    if h.len() != mu.len() {
        return Err(Error::Dimension { expected: mu.len(), got: h.len() });
    }
    let vals = truncated_at(k, &fm, &gm, &atoms_of(mu), t, exec)?;
    Ok((0..mu.len()).map(|i| h[i] * mu.weight(i) * vals[i]).sum())
}

/// Region of pairs `(y,z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PairPredicate {
    All,
    Product { y: Region, z: Region },
    /// `inf_{a ∈ A} max(|a−y|, |a−z|) ≥ threshold`.
    FarFrom { set: Vec<Point>, threshold: f64 },
    Not(Box<PairPredicate>),
    And(Vec<PairPredicate>),
    Or(Vec<PairPredicate>),
}

impl PairPredicate {
    pub fn contains(&self, y: &[f64], z: &[f64]) -> bool {
        match self {
            PairPredicate::All => true,
            PairPredicate::Product { y: ry, z: rz } => ry.contains(y) && rz.contains(z),
            PairPredicate::FarFrom { set, threshold } => {
                set.iter().all(|a| dist(a, y).max(dist(a, z)) >= *threshold)
            }
            PairPredicate::Not(p) => !p.contains(y, z),
            PairPredicate::And(ps) => ps.iter().all(|p| p.contains(y, z)),
            PairPredicate::Or(ps) => ps.iter().any(|p| p.contains(y, z)),
        }
    }
}

/// `⟨T(1_B f⊗g), h⟩`: the untruncated form restricted to pairs in `B`.
pub fn pair_restricted_form<K: Kernel + ?Sized>(
    k: &K,
    mu: &AtomicMeasure,
    pred: &PairPredicate,
    f: &[C64],
    g: &[C64],
    h: &[C64],
    exec: Execution,
) -> Result<C64> {
    for v in [f, g, h] {
        if v.len() != mu.len() {
            return Err(Error::Dimension { expected: mu.len(), got: v.len() });
        }
    }
    let aux: Vec<f64> = aux_of(k, mu);
    let n = mu.len();
    let inside: Vec<bool> = (0..n * n).map(|p| pred.contains(mu.point(p / n), mu.point(p % n))).collect();
    let per_x = exec.map(n, |i| {
        if h[i] == C64::new(0.0, 0.0) {
            return C64::new(0.0, 0.0);
        }
        let x = mu.point(i);
        let sx = Site { x, aux: aux[i] };
        let mut s = C64::new(0.0, 0.0);
        for j in 0..n {
            let fy = f[j] * mu.weight(j);
            if fy == C64::new(0.0, 0.0) {
                continue;
            }
            let sy = Site { x: mu.point(j), aux: aux[j] };
            for l in 0..n {
                if !inside[j * n + l] || (i == j && j == l) || (x == sy.x && x == mu.point(l)) {
                    continue;
                }
                let sz = Site { x: mu.point(l), aux: aux[l] };
                s += k.eval_sites(sx, sy, sz) * fy * g[l] * mu.weight(l);
            }
        }
        s * h[i] * mu.weight(i)
    });
    Ok(per_x.into_iter().sum())
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TruncationComparison {
    pub difference: f64,
    pub maximal_product: f64,
    pub ratio: f64,
}

/// `|T_ε − T̃_ε|(x) / (M_m ν₁(x) M_m ν₂(x))`.
pub fn compare_truncations<K: Kernel + ?Sized>(
    k: &K,
    nu1: &AtomicMeasure,
    nu2: &AtomicMeasure,
    x: &[f64],
    eps: f64,
    r_floor: f64,
) -> Result<TruncationComparison> {
    let b = Bilinear::new(k, nu1, nu2)?;
    let diff = (b.apply(x, Truncation::max(eps)) - b.apply(x, Truncation::ball(eps))).norm();
    let m = k.params().m;
    let spec = MaximalSpec::radial(m).with_floor(r_floor);
    let m1 = crate::maximal::maximal(nu1, Integrand::Measure(nu1), x, &spec)?;
    let m2 = crate::maximal::maximal(nu2, Integrand::Measure(nu2), x, &spec)?;
    let prod = m1 * m2;
    let ratio = if diff == 0.0 { 0.0 } else { diff / prod };
    Ok(TruncationComparison { difference: diff, maximal_product: prod, ratio })
}

/// `∬_{max > ε} |K f g| dμ dμ / (ε^{−m(1/p₁+1/p₂)} ‖f‖_{p₁} ‖g‖_{p₂})`.
#[allow(clippy::too_many_arguments)]
pub fn basic_bound_ratio<K: Kernel + ?Sized>(
    k: &K,
    mu: &AtomicMeasure,
    f: &[C64],
    g: &[C64],
    x: &[f64],
    eps: f64,
    p1: f64,
    p2: f64,
) -> Result<f64> {
    let fm = mu.times(f)?;
    let gm = mu.times(g)?;
    let lhs = Bilinear::new(k, &fm, &gm)?.apply_abs(x, Truncation::max(eps));
    let m = k.params().m;
    let rhs = eps.powf(-m * (1.0 / p1 + 1.0 / p2)) * lp_norm_c(mu, f, p1) * lp_norm_c(mu, g, p2);
    Ok(if lhs == 0.0 { 0.0 } else { lhs / rhs })
}

/// `T_{Φ,♯}(f,g)(x) ≤ T_{♯,Φ(x)}(f,g)(x) + C M_μ f(x) M_μ g(x)`: the smallest
/// admissible `C` at `x`, for a suppressed kernel and its base kernel.
pub fn suppression_comparison<K: Kernel + ?Sized, B: Kernel + ?Sized>(
    suppressed: &K,
    base: &B,
    phi_x: f64,
    mu: &AtomicMeasure,
    f: &[C64],
    g: &[C64],
    x: &[f64],
) -> Result<f64> {
    let fm = mu.times(f)?;
    let gm = mu.times(g)?;
    let lhs = Bilinear::new(suppressed, &fm, &gm)?.maximal_exact(x, 0.0, TruncationMode::Max).value;
    let rhs0 = Bilinear::new(base, &fm, &gm)?.maximal_exact(x, phi_x, TruncationMode::Max).value;
    comparison_ratio(lhs, rhs0, mu, f, g, x)
}

/// `(lhs − rhs₀)₊ / (M_μ f · M_μ g)(x)` for already computed maximal
/// truncations.
pub fn comparison_ratio(lhs: f64, rhs0: f64, mu: &AtomicMeasure, f: &[C64], g: &[C64], x: &[f64]) -> Result<f64> {
    let excess = (lhs - rhs0).max(0.0);
    if excess == 0.0 {
        return Ok(0.0);
    }
    let spec = MaximalSpec::new(crate::maximal::MaximalKind::CenteredBall);
    Ok(excess / maximal_bilinear(mu, Integrand::Function(f), Integrand::Function(g), x, &spec)?)
}

/// Dense kernel tensor `K(x_i, x_j, x_l)` over the atoms of `μ`, zero on the
/// diagonal.
pub struct DenseForm {
    n: usize,
    w: Vec<f64>,
    tensor: Vec<C64>,
}

impl DenseForm {
    pub fn new<K: Kernel + ?Sized>(k: &K, mu: &AtomicMeasure) -> Result<Self> {
        let n = mu.len();
        if n > 96 {
            return Err(Error::Budget(format!("dense tensor on {n} atoms")));
        }
        let aux = aux_of(k, mu);
        let mut tensor = vec![C64::new(0.0, 0.0); n * n * n];
        for i in 0..n {
            for j in 0..n {
                for l in 0..n {
                    let (x, y, z) = (mu.point(i), mu.point(j), mu.point(l));
                    if x == y && x == z {
                        continue;
                    }
                    tensor[(i * n + j) * n + l] = k.eval_sites(
                        Site { x, aux: aux[i] },
                        Site { x: y, aux: aux[j] },
                        Site { x: z, aux: aux[l] },
                    );
                }
            }
        }
        Ok(DenseForm { n, w: mu.weights().iter().map(|w| w.re).collect(), tensor })
    }

    pub fn form(&self, f: &[C64], g: &[C64], h: &[C64]) -> C64 {
        let n = self.n;
        let mut s = C64::new(0.0, 0.0);
        for i in 0..n {
            let mut inner = C64::new(0.0, 0.0);
            for j in 0..n {
                let fy = f[j] * self.w[j];
                let row = &self.tensor[(i * n + j) * n..(i * n + j + 1) * n];
                for l in 0..n {
                    inner += row[l] * fy * g[l] * self.w[l];
                }
            }
            s += inner * h[i] * self.w[i];
        }
        s
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RandomizationReport {
    pub lhs: f64,
    /// Largest `|⟨T(F,G),H⟩| / (‖F‖_p ‖G‖_q ‖H‖_{r'})` over the sign patterns.
    pub norm_estimate: f64,
    /// `∏ ‖(Σ|·_i|²)^{1/2}‖`.
    pub square_norms: f64,
    pub constant: f64,
}

/// `|Σ_i ⟨T(f_i,g_i),h_i⟩| ≤ C ‖T‖ ‖(Σ|f_i|²)^{1/2}‖_p ‖(Σ|g_i|²)^{1/2}‖_q ‖(Σ|h_i|²)^{1/2}‖_{r'}`.
/// Enumerates all sign patterns `ε, ε'`; the family size is capped at six.
pub fn randomization_check(
    form: &DenseForm,
    mu: &AtomicMeasure,
    fs: &[Vec<C64>],
    gs: &[Vec<C64>],
    hs: &[Vec<C64>],
    p: f64,
    q: f64,
    r: f64,
) -> Result<RandomizationReport> {
    let k = fs.len();
    if gs.len() != k || hs.len() != k || k == 0 || k > 6 {
        return Err(Error::InvalidParameter("families must share a length in 1..=6".into()));
    }
    let rp = if r <= 1.0 { f64::INFINITY } else { r / (r - 1.0) };
    let lhs: C64 = (0..k).map(|i| form.form(&fs[i], &gs[i], &hs[i])).sum();
    let n = mu.len();
    let mut norm_est: f64 = 0.0;
    for e in 0..1u32 << k {
        for e2 in 0..1u32 << k {
            let sg = |m: u32, i: usize| if m >> i & 1 == 1 { -1.0 } else { 1.0 };
            let mut ff = vec![C64::new(0.0, 0.0); n];
            let mut gg = ff.clone();
            let mut hh = ff.clone();
            for i in 0..k {
                for a in 0..n {
                    ff[a] += fs[i][a] * sg(e, i);
                    gg[a] += gs[i][a] * sg(e2, i);
                    hh[a] += hs[i][a] * sg(e, i) * sg(e2, i);
                }
            }
            let den = lp_norm_c(mu, &ff, p) * lp_norm_c(mu, &gg, q) * lp_norm_c(mu, &hh, rp);
            if den > 0.0 {
                norm_est = norm_est.max(form.form(&ff, &gg, &hh).norm() / den);
            }
        }
    }
    let sq = |fam: &[Vec<C64>], p: f64| {
        let v: Vec<f64> = (0..n).map(|a| fam.iter().map(|f| f[a].norm_sqr()).sum::<f64>().sqrt()).collect();
        crate::maximal::lp_norm(mu, &v, p)
    };
    let square_norms = sq(fs, p) * sq(gs, q) * sq(hs, rp);
    let den = norm_est * square_norms;
    let constant = if lhs.norm() == 0.0 { 0.0 } else { lhs.norm() / den };
    Ok(RandomizationReport { lhs: lhs.norm(), norm_estimate: norm_est, square_norms, constant })
}
