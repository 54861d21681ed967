//! Randomly shifted dyadic grids and the martingale machinery on them.
//!
//! A grid is determined by one bit vector `ω_j ∈ {0,1}^n` per scale. The
//! level-`k` cubes are `2^{−k}([0,1)^n + ℓ) + x_k` with
//! `x_k = Σ_{j>k} ω_j 2^{−j}`. Only the scales inside a window are stored;
//! the shift series is truncated a fixed number of bits below the finest
//! level. Cube coordinates stay exact dyadic rationals.

use std::collections::HashMap;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::{boundary_ratio, AtomicMeasure, Cube};

/// Bits of the shift series kept below the finest level of the window.
pub const SHIFT_GUARD_BITS: i32 = 16;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CubeRef {
    pub level: i32,
    pub idx: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridJson", into = "GridJson")]
pub struct DyadicGrid {
    dim: usize,
    kmin: i32,
    kmax: i32,
    /// `bits[j − kmin − 1]` is the mask `ω_j`.
    bits: Vec<u8>,
    /// `shifts[k − kmin]` is `x_k`.
    shifts: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct GridJson {
    dim: usize,
    kmin: i32,
    kmax: i32,
    seed: String,
}

impl TryFrom<GridJson> for DyadicGrid {
    type Error = Error;
    fn try_from(j: GridJson) -> Result<Self> {
        DyadicGrid::from_hex(j.dim, j.kmin, j.kmax, &j.seed)
    }
}

impl From<DyadicGrid> for GridJson {
    fn from(g: DyadicGrid) -> Self {
        GridJson { dim: g.dim, kmin: g.kmin, kmax: g.kmax, seed: g.to_hex() }
    }
}

fn floor_div2(v: i64) -> i64 {
    v.div_euclid(2)
}

impl DyadicGrid {
    fn bit_count(kmin: i32, kmax: i32) -> usize {
        (kmax + SHIFT_GUARD_BITS - kmin) as usize
    }

    fn from_bits(dim: usize, kmin: i32, kmax: i32, bits: Vec<u8>) -> Result<Self> {
        if dim == 0 || dim > 8 {
            return Err(Error::InvalidParameter(format!("grid dimension {dim} not in 1..=8")));
        }
        if kmax < kmin {
            return Err(Error::InvalidParameter("empty grid window".into()));
        }
        // Keep every shift an exact double.
        if kmax + SHIFT_GUARD_BITS - kmin > 52 {
            return Err(Error::InvalidParameter(format!("grid window [{kmin}, {kmax}] too wide")));
        }
        if bits.len() != Self::bit_count(kmin, kmax) {
            return Err(Error::InvalidParameter("seed length does not match the window".into()));
        }
        let mask = if dim == 8 { 0xff } else { (1u16 << dim) as u8 - 1 };
        if bits.iter().any(|b| b & !mask != 0) {
            return Err(Error::InvalidParameter("seed has bits beyond the dimension".into()));
        }
        let mut g = DyadicGrid { dim, kmin, kmax, bits, shifts: Vec::new() };
        let finest = kmax + SHIFT_GUARD_BITS;
        let mut x = vec![0.0; dim];
        let mut shifts = vec![Vec::new(); (kmax - kmin + 1) as usize];
        for k in (kmin..finest).rev() {
            let w = g.omega(k + 1);
            let step = 2f64.powi(-(k + 1));
            for (i, xi) in x.iter_mut().enumerate() {
                if w >> i & 1 == 1 {
                    *xi += step;
                }
            }
            if k <= kmax {
                shifts[(k - kmin) as usize] = x.clone();
            }
        }
        g.shifts = shifts;
        Ok(g)
    }

    /// The unshifted grid.
    pub fn standard(dim: usize, kmin: i32, kmax: i32) -> Result<Self> {
        Self::from_bits(dim, kmin, kmax, vec![0; Self::bit_count(kmin, kmax)])
    }

    pub fn random<R: Rng>(dim: usize, kmin: i32, kmax: i32, rng: &mut R) -> Result<Self> {
        let n = Self::bit_count(kmin, kmax);
        let bits = (0..n).map(|_| rng.gen_range(0..(1u16 << dim)) as u8).collect();
        Self::from_bits(dim, kmin, kmax, bits)
    }

    pub fn from_seed(dim: usize, kmin: i32, kmax: i32, seed: u64) -> Result<Self> {
        Self::random(dim, kmin, kmax, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn from_hex(dim: usize, kmin: i32, kmax: i32, hex_seed: &str) -> Result<Self> {
        let bits = hex::decode(hex_seed).map_err(|e| Error::Parse(format!("grid seed: {e}")))?;
        Self::from_bits(dim, kmin, kmax, bits)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.bits)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn window(&self) -> (i32, i32) {
        (self.kmin, self.kmax)
    }

    /// `ω_j` as a bit mask.
    pub fn omega(&self, j: i32) -> u8 {
        self.bits[(j - self.kmin - 1) as usize]
    }

    pub fn shift(&self, k: i32) -> &[f64] {
        &self.shifts[(k - self.kmin) as usize]
    }

    fn check_level(&self, k: i32) -> Result<()> {
        if k < self.kmin || k > self.kmax {
            Err(Error::OutsideWindow(k))
        } else {
            Ok(())
        }
    }

    pub fn try_cube_containing(&self, x: &[f64], k: i32) -> Result<CubeRef> {
        self.check_level(k)?;
        if x.len() != self.dim {
            return Err(Error::Dimension { expected: self.dim, got: x.len() });
        }
        Ok(self.cube_containing(x, k))
    }

    /// Panics if `k` is outside the window.
    pub fn cube_containing(&self, x: &[f64], k: i32) -> CubeRef {
        let s = self.shift(k);
        let scale = 2f64.powi(k);
        let idx = x.iter().zip(s).map(|(xi, si)| ((xi - si) * scale).floor() as i64).collect();
        CubeRef { level: k, idx }
    }

    pub fn parent(&self, q: &CubeRef) -> Result<CubeRef> {
        self.check_level(q.level - 1)?;
        let w = self.omega(q.level);
        let idx = q.idx.iter().enumerate().map(|(i, &l)| floor_div2(l - (w >> i & 1) as i64)).collect();
        Ok(CubeRef { level: q.level - 1, idx })
    }

    pub fn ancestor(&self, q: &CubeRef, generations: u32) -> Result<CubeRef> {
        let mut c = q.clone();
        for _ in 0..generations {
            c = self.parent(&c)?;
        }
        Ok(c)
    }

    pub fn children(&self, q: &CubeRef) -> Result<Vec<CubeRef>> {
        self.check_level(q.level + 1)?;
        let w = self.omega(q.level + 1);
        Ok((0..1usize << self.dim)
            .map(|c| CubeRef {
                level: q.level + 1,
                idx: q.idx.iter().enumerate().map(|(i, &p)| 2 * p + (c >> i & 1) as i64 + (w >> i & 1) as i64).collect(),
            })
            .collect())
    }

    pub fn side(level: i32) -> f64 {
        2f64.powi(-level)
    }

    pub fn cube_geometry(&self, q: &CubeRef) -> Cube {
        let side = Self::side(q.level);
        let s = self.shift(q.level);
        let lo: Vec<f64> = q.idx.iter().zip(s).map(|(&l, si)| l as f64 * side + si).collect();
        Cube::from_corner(&lo, side)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("grid serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Goodness {
    Good,
    Bad,
    /// No scale of the other grid inside its window is coarse enough to test.
    Indeterminate,
}

/// `Q` is good with respect to `other` if every cube `R` of `other` with
/// `ℓ(R) ≥ 2^σ ℓ(Q)` either contains `Q` or satisfies
/// `d(Q,R) > ℓ(Q)^γ ℓ(R)^{1−γ}`. Scales coarser than the window are not part
/// of the grid.
pub fn is_good(q: &Cube, other: &DyadicGrid, gamma: f64, sigma: u32) -> Goodness {
    let lq = q.side();
    let kq = -lq.log2().round() as i32;
    let top = kq - sigma as i32;
    let (kmin, kmax) = other.window();
    if top < kmin {
        return Goodness::Indeterminate;
    }
    let n = q.dim();
    let lo: Vec<f64> = (0..n).map(|i| q.lower(i)).collect();
    for level in kmin..=top.min(kmax) {
        let lr = DyadicGrid::side(level);
        let thr = lq.powf(gamma) * lr.powf(1.0 - gamma);
        let r = other.cube_geometry(&other.cube_containing(&lo, level));
        for i in 0..n {
            let below = lo[i] - r.lower(i);
            let above = r.upper(i) - (lo[i] + lq);
            if above < 0.0 || below <= thr || above <= thr {
                return Goodness::Bad;
            }
        }
    }
    Goodness::Good
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub p: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub trials: usize,
    pub indeterminate: usize,
}

/// Wilson score interval at 95%.
pub fn wilson(hits: usize, trials: usize) -> (f64, f64, f64) {
    if trials == 0 {
        return (0.0, 0.0, 1.0);
    }
    let z = 1.959963984540054;
    let n = trials as f64;
    let p = hits as f64 / n;
    let den = 1.0 + z * z / n;
    let mid = (p + z * z / (2.0 * n)) / den;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / den;
    (p, (mid - half).max(0.0), (mid + half).min(1.0))
}

/// Seeded generator for trial `i`: one ChaCha stream per trial, so results do
/// not depend on how trials are scheduled.
pub fn trial_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(i as u64);
    r
}

/// Probability that the unit cube `[0,1)^n` is bad for an independent random
/// grid, estimated over `trials` grids spanning `depth` scales above `2^σ`.
pub fn bad_probability_mc(dim: usize, gamma: f64, sigma: u32, trials: usize, seed: u64, depth: u32, exec: Execution) -> Result<McEstimate> {
    let q = Cube::from_corner(&vec![0.0; dim], 1.0);
    let kmin = -((sigma + depth) as i32);
    let outcomes = exec.map(trials, |i| {
        let g = DyadicGrid::random(dim, kmin, 0, &mut trial_rng(seed, i)).expect("window fits");
        is_good(&q, &g, gamma, sigma)
    });
    let bad = outcomes.iter().filter(|o| **o == Goodness::Bad).count();
    let ind = outcomes.iter().filter(|o| **o == Goodness::Indeterminate).count();
    let (p, lo, hi) = wilson(bad, trials);
    Ok(McEstimate { p, ci_lo: lo, ci_hi: hi, trials, indeterminate: ind })
}

/// The testbed cube `Q₀` with its top scale `2^{u₀}`, chosen so that
/// `2^{u₀} < λ₀ℓ(Q₀)/4 ≤ 2^{u₀+1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Testbed {
    pub q0: Cube,
    pub lambda0: f64,
    pub u0: i32,
}

impl Testbed {
    pub fn new(q0: Cube, lambda0: f64) -> Result<Self> {
        if !(lambda0 > 0.0) {
            return Err(Error::InvalidParameter("lambda0 must be positive".into()));
        }
        let v = lambda0 * q0.side() / 4.0;
        let mut u0 = v.log2().ceil() as i32 - 1;
        while 2f64.powi(u0) >= v {
            u0 -= 1;
        }
        while 2f64.powi(u0 + 1) < v {
            u0 += 1;
        }
        Ok(Testbed { q0, lambda0, u0 })
    }

    /// Grid level of the top cubes.
    pub fn top_level(&self) -> i32 {
        -self.u0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeNode {
    pub cube: CubeRef,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub atoms: Vec<usize>,
    pub mass: f64,
}

/// Cubes of `D₀` carrying positive mass: the top cubes inside `Q₀` and their
/// descendants down to the finest level of the grid window.
#[derive(Debug, Clone)]
pub struct CubeTree {
    pub grid: DyadicGrid,
    pub testbed: Testbed,
    pub fine_level: i32,
    pub nodes: Vec<TreeNode>,
    pub roots: Vec<usize>,
    /// `chain[a]`: nodes containing atom `a`, top first; empty if uncovered.
    pub chain: Vec<Vec<usize>>,
    /// True when every finest cube holds one atom location.
    pub separated: bool,
}

impl CubeTree {
    pub fn build(mu: &AtomicMeasure, grid: &DyadicGrid, testbed: &Testbed) -> Result<Self> {
        let top = testbed.top_level();
        let (kmin, kmax) = grid.window();
        if top < kmin || top >= kmax {
            return Err(Error::OutsideWindow(top));
        }
        let mut index: HashMap<CubeRef, usize> = HashMap::new();
        let mut nodes: Vec<TreeNode> = Vec::new();
        let mut roots = Vec::new();
        let mut chain = vec![Vec::new(); mu.len()];
        for a in 0..mu.len() {
            if mu.weight(a).norm() == 0.0 {
                continue;
            }
            let x = mu.point(a);
            let t = grid.cube_containing(x, top);
            if !testbed.q0.contains_cube(&grid.cube_geometry(&t)) {
                continue;
            }
            let mut parent: Option<usize> = None;
            for k in top..=kmax {
                let c = grid.cube_containing(x, k);
                let id = match index.get(&c) {
                    Some(&id) => id,
                    None => {
                        let id = nodes.len();
                        nodes.push(TreeNode { cube: c.clone(), parent, children: Vec::new(), atoms: Vec::new(), mass: 0.0 });
                        index.insert(c, id);
                        match parent {
                            Some(p) => nodes[p].children.push(id),
                            None => roots.push(id),
                        }
                        id
                    }
                };
                nodes[id].atoms.push(a);
                nodes[id].mass += mu.weight(a).norm();
                chain[a].push(id);
                parent = Some(id);
            }
        }
        let separated = nodes.iter().filter(|n| n.cube.level == kmax).all(|n| {
            let p0 = mu.point(n.atoms[0]);
            n.atoms.iter().all(|&a| mu.point(a) == p0)
        });
        Ok(CubeTree { grid: grid.clone(), testbed: testbed.clone(), fine_level: kmax, nodes, roots, chain, separated })
    }

    pub fn top_level(&self) -> i32 {
        self.testbed.top_level()
    }

    pub fn geometry(&self, node: usize) -> Cube {
        self.grid.cube_geometry(&self.nodes[node].cube)
    }

    pub fn covered(&self, a: usize) -> bool {
        !self.chain[a].is_empty()
    }
}

/// An accretive weight: `|b| ≤ cap` on atoms and `|Σ_Q b dμ| ≥ c_b μ(Q)` on
/// every active cube. Checked once at construction.
#[derive(Debug, Clone)]
pub struct AccretiveSystem {
    pub b: Vec<C64>,
    pub c_b: f64,
    pub cap: f64,
}

impl AccretiveSystem {
    pub fn new(tree: &CubeTree, mu: &AtomicMeasure, b: Vec<C64>, c_b: f64, cap: f64) -> Result<Self> {
        if b.len() != mu.len() {
            return Err(Error::Dimension { expected: mu.len(), got: b.len() });
        }
        if let Some(v) = b.iter().find(|v| v.norm() > cap) {
            return Err(Error::InvalidParameter(format!("|b| = {} exceeds the cap {cap}", v.norm())));
        }
        for n in &tree.nodes {
            let s: C64 = n.atoms.iter().map(|&a| b[a] * mu.weight(a).norm()).sum();
            if s.norm() < c_b * n.mass {
                return Err(Error::NotAccretive {
                    level: n.cube.level,
                    detail: format!("cube {:?}: |<b>| = {} < {c_b}", n.cube.idx, s.norm() / n.mass),
                });
            }
        }
        Ok(AccretiveSystem { b, c_b, cap })
    }

    pub fn unit(mu: &AtomicMeasure) -> Self {
        AccretiveSystem { b: vec![C64::new(1.0, 0.0); mu.len()], c_b: 1.0, cap: 1.0 }
    }
}

/// Adapted martingale differences on an active cube tree.
pub struct Martingale<'a> {
    pub tree: &'a CubeTree,
    mu: &'a AtomicMeasure,
    b: &'a [C64],
    /// `Σ_Q b dμ` per node.
    b_sum: Vec<C64>,
}

impl<'a> Martingale<'a> {
    pub fn new(tree: &'a CubeTree, mu: &'a AtomicMeasure, sys: &'a AccretiveSystem) -> Self {
        let b_sum = tree.nodes.iter().map(|n| n.atoms.iter().map(|&a| sys.b[a] * mu.weight(a).norm()).sum()).collect();
        Martingale { tree, mu, b: &sys.b, b_sum }
    }

    fn sum(&self, node: usize, f: &[C64]) -> C64 {
        self.tree.nodes[node].atoms.iter().map(|&a| f[a] * self.mu.weight(a).norm()).sum()
    }

    fn sum_fb(&self, node: usize, f: &[C64]) -> C64 {
        self.tree.nodes[node].atoms.iter().map(|&a| f[a] * self.b[a] * self.mu.weight(a).norm()).sum()
    }

    /// `E_Q f = ⟨f⟩_Q / ⟨b⟩_Q`.
    pub fn expectation(&self, node: usize, f: &[C64]) -> C64 {
        self.sum(node, f) / self.b_sum[node]
    }

    /// `D_Q f`, defined for cubes strictly below the top level.
    pub fn difference(&self, node: usize, f: &[C64]) -> C64 {
        let e = self.expectation(node, f);
        match self.tree.nodes[node].parent {
            Some(p) if self.tree.nodes[node].cube.level > self.tree.top_level() + 1 => e - self.expectation(p, f),
            _ => e,
        }
    }

    fn check_delta_node(&self, node: usize) -> Result<()> {
        if self.tree.nodes[node].cube.level >= self.tree.fine_level {
            Err(Error::OutsideWindow(self.tree.nodes[node].cube.level + 1))
        } else {
            Ok(())
        }
    }

    /// `Δ_Q f = Σ_{Q' ∈ ch(Q)} D_{Q'} f 1_{Q'} b`, as values on atoms.
    pub fn delta(&self, node: usize, f: &[C64]) -> Result<Vec<C64>> {
        self.check_delta_node(node)?;
        let mut out = vec![C64::new(0.0, 0.0); self.mu.len()];
        for &c in &self.tree.nodes[node].children {
            let d = self.difference(c, f);
            for &a in &self.tree.nodes[c].atoms {
                out[a] = d * self.b[a];
            }
        }
        Ok(out)
    }

    /// The dual difference: `⟨Δ_Q f, g⟩ = ⟨f, Δ*_Q g⟩`.
    pub fn delta_adjoint(&self, node: usize, g: &[C64]) -> Result<Vec<C64>> {
        self.check_delta_node(node)?;
        let mut out = vec![C64::new(0.0, 0.0); self.mu.len()];
        let top = self.tree.nodes[node].cube.level == self.tree.top_level();
        let own = if top { C64::new(0.0, 0.0) } else { self.sum_fb(node, g) / self.b_sum[node] };
        for &c in &self.tree.nodes[node].children {
            let v = self.sum_fb(c, g) / self.b_sum[c] - own;
            for &a in &self.tree.nodes[c].atoms {
                out[a] = v;
            }
        }
        Ok(out)
    }

    /// Nodes on which `Δ_Q` is defined.
    pub fn delta_nodes(&self) -> Vec<usize> {
        (0..self.tree.nodes.len()).filter(|&i| self.tree.nodes[i].cube.level < self.tree.fine_level).collect()
    }

    /// `Σ_{Q ∈ filter} Δ_Q f`.
    pub fn project(&self, f: &[C64], filter: impl Fn(usize) -> bool) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.mu.len()];
        for q in self.delta_nodes() {
            if !filter(q) {
                continue;
            }
            for &c in &self.tree.nodes[q].children {
                let d = self.difference(c, f);
                for &a in &self.tree.nodes[c].atoms {
                    out[a] += d * self.b[a];
                }
            }
        }
        out
    }

    pub fn reconstruct(&self, f: &[C64]) -> Vec<C64> {
        self.project(f, |_| true)
    }

    /// `(Σ_{ℓ(Q)<2^{u₀}} |D_Q f|² 1_Q)^{1/2}`.
    pub fn square_fn(&self, f: &[C64]) -> Vec<f64> {
        let top = self.tree.top_level();
        let d: Vec<f64> = (0..self.tree.nodes.len())
            .map(|i| if self.tree.nodes[i].cube.level > top { self.difference(i, f).norm_sqr() } else { 0.0 })
            .collect();
        self.tree.chain.iter().map(|ch| ch.iter().map(|&i| d[i]).sum::<f64>().sqrt()).collect()
    }

    /// `(Σ_Q |Δ*_Q f|²)^{1/2}`.
    pub fn square_fn_adjoint(&self, f: &[C64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.mu.len()];
        for q in self.delta_nodes() {
            let v = self.delta_adjoint(q, f).expect("delta node");
            for &a in &self.tree.nodes[q].atoms {
                acc[a] += v[a].norm_sqr();
            }
        }
        acc.into_iter().map(f64::sqrt).collect()
    }

    /// `E_{2^k} f = Σ_{ℓ(Q)=2^k} (E_Q f) 1_Q b`.
    pub fn level_expectation(&self, level: i32, f: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.mu.len()];
        for (i, n) in self.tree.nodes.iter().enumerate() {
            if n.cube.level == level {
                let e = self.expectation(i, f);
                for &a in &n.atoms {
                    out[a] = e * self.b[a];
                }
            }
        }
        out
    }
}

/// Stopping family for `|φ|`: start from the top cubes and stop at the
/// maximal subcubes whose average exceeds twice the current one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrincipalFamily {
    pub members: Vec<usize>,
    /// `pi[q]`: the smallest member containing node `q`.
    pub pi: Vec<usize>,
    /// `max_S Σ_{S' ⊂ S} μ(S') / μ(S)` over members.
    pub carleson: f64,
    /// `max_Q ⟨|φ|⟩_Q / ⟨|φ|⟩_{π Q}`; at most two by construction.
    pub control: f64,
}

pub fn principal_cubes(tree: &CubeTree, mu: &AtomicMeasure, phi: &[f64]) -> PrincipalFamily {
    let avg: Vec<f64> = tree
        .nodes
        .iter()
        .map(|n| n.atoms.iter().map(|&a| phi[a].abs() * mu.weight(a).norm()).sum::<f64>() / n.mass)
        .collect();
    let mut pi = vec![usize::MAX; tree.nodes.len()];
    let mut members = Vec::new();
    let mut stack: Vec<usize> = tree.roots.clone();
    while let Some(s) = stack.pop() {
        members.push(s);
        pi[s] = s;
        let mut walk: Vec<usize> = tree.nodes[s].children.clone();
        while let Some(q) = walk.pop() {
            if avg[q] > 2.0 * avg[s] {
                stack.push(q);
            } else {
                pi[q] = s;
                walk.extend(tree.nodes[q].children.iter().copied());
            }
        }
    }
    members.sort_unstable();
    let is_member: Vec<bool> = {
        let mut v = vec![false; tree.nodes.len()];
        for &m in &members {
            v[m] = true;
        }
        v
    };
    let mut packed = vec![0.0; tree.nodes.len()];
    for &s in &members {
        let mut cur = Some(s);
        while let Some(c) = cur {
            if is_member[c] {
                packed[c] += tree.nodes[s].mass;
            }
            cur = tree.nodes[c].parent;
        }
    }
    let carleson = members.iter().map(|&s| packed[s] / tree.nodes[s].mass).fold(0.0, f64::max);
    let control = (0..tree.nodes.len())
        .map(|q| if avg[pi[q]] > 0.0 { avg[q] / avg[pi[q]] } else if avg[q] > 0.0 { f64::INFINITY } else { 0.0 })
        .fold(0.0, f64::max);
    PrincipalFamily { members, pi, carleson, control }
}

/// `j(θ)` with `2^{−21}θ ≤ 2^{j} < 2^{−20}θ`.
pub fn surgery_exponent(theta: f64) -> i32 {
    let mut j = (theta.log2() - 21.0).ceil() as i32;
    while 2f64.powi(j) < 2f64.powi(-21) * theta {
        j += 1;
    }
    while 2f64.powi(j) >= 2f64.powi(-20) * theta {
        j -= 1;
    }
    j
}

fn level_of(c: &Cube) -> Result<i32> {
    let l = -c.side().log2();
    let r = l.round();
    if (l - r).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!("side {} is not a power of two", c.side())));
    }
    Ok(r as i32)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Piece {
    pub label: CubeRef,
    pub cube: Cube,
    pub atoms: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Partition {
    pub separated: Vec<usize>,
    pub boundary: Vec<usize>,
    pub pieces: Vec<Piece>,
}

impl Partition {
    pub fn atom_count(&self) -> usize {
        self.separated.len() + self.boundary.len() + self.pieces.iter().map(|p| p.atoms.len()).sum::<usize>()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SharedPiece {
    pub label: CubeRef,
    pub cube: Cube,
    /// Indices of the partitions containing this piece.
    pub owners: Vec<usize>,
    /// `5L` lies inside every cube of the configuration.
    pub certified: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurgeryOutcome {
    pub parts: Vec<Partition>,
    pub shared: Vec<SharedPiece>,
    /// Each atom of each cube lands in exactly one class.
    pub exact: bool,
    /// Every boundary atom is near a boundary in the sense of the bad set.
    pub boundary_in_bad: bool,
    pub max_pieces: usize,
    /// Worst small-boundary ratio among the inner cubes (pair mode).
    pub worst_boundary_ratio: f64,
}

impl SurgeryOutcome {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("surgery outcome serializes")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum SurgeryInput {
    Triple { i: Cube, j: Cube, k: Cube },
    Pair { i: Cube, k: Cube },
}

/// Inner cube `S_Q`: concentric with `(1−θ)Q ⊂ S_Q ⊂ (1−θ/2)Q`, chosen with
/// the smallest boundary ratio along a scan.
fn inner_cube(mu: &AtomicMeasure, q: &Cube, theta: f64) -> (Cube, f64) {
    let lo = (1.0 - theta) * q.halfside;
    let hi = (1.0 - theta / 2.0) * q.halfside;
    let mut best = (q.scaled(1.0 - theta), f64::INFINITY);
    for s in 0..=32 {
        let h = lo + (hi - lo) * s as f64 / 32.0;
        let c = Cube::new(q.center.0.clone(), h);
        let r = boundary_ratio(mu, &c);
        if r < best.1 {
            best = (c, r);
        }
    }
    best
}

/// Split the atoms of each cube of a triple `(I, J, K)` or pair `(I, K)` into
/// separated, boundary and diagonal parts, the diagonal part grouped by cubes
/// of `grid4` of side `2^{j(θ)} ℓ(K)`.
pub fn surgery_partition(mu: &AtomicMeasure, input: &SurgeryInput, theta: f64, grid4: &DyadicGrid) -> Result<SurgeryOutcome> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::InvalidParameter("theta must lie in (0,1)".into()));
    }
    let (cubes, triple) = match input {
        SurgeryInput::Triple { i, j, k } => (vec![i.clone(), j.clone(), k.clone()], true),
        SurgeryInput::Pair { i, k } => (vec![i.clone(), k.clone()], false),
    };
    let k_cube = cubes.last().expect("nonempty");
    let qlevel = level_of(k_cube)? - surgery_exponent(theta);
    grid4.check_level(qlevel)?;
    let label_of = |x: &[f64]| grid4.cube_containing(x, qlevel);
    let mut inner_cache: HashMap<CubeRef, (Cube, f64)> = HashMap::new();
    let mut worst_ratio: f64 = 0.0;
    let mut parts = Vec::new();
    let mut exact = true;
    let mut in_bad = true;
    for (ci, a) in cubes.iter().enumerate() {
        let others: Vec<&Cube> = cubes.iter().enumerate().filter(|(o, _)| *o != ci).map(|(_, c)| c).collect();
        let mut sep = Vec::new();
        let mut bnd = Vec::new();
        let mut groups: HashMap<CubeRef, Vec<usize>> = HashMap::new();
        let mut seen = 0usize;
        let mut total = 0usize;
        for x_i in 0..mu.len() {
            let x = mu.point(x_i);
            if !a.contains(x) {
                continue;
            }
            total += 1;
            let lab = label_of(x);
            let qg = grid4.cube_geometry(&lab);
            let in_all = others.iter().all(|o| o.contains(x));
            let near_other = others.iter().any(|o| qg.dist_to_boundary_of(o) < theta * o.side() / 2.0);
            let near_cell = if !in_all {
                false
            } else if triple {
                qg.dist_to_boundary(x) < theta * qg.side()
            } else {
                let (s, r) = inner_cache.entry(lab.clone()).or_insert_with(|| inner_cube(mu, &qg, theta)).clone();
                worst_ratio = worst_ratio.max(r);
                !s.contains(x)
            };
            if near_other || near_cell {
                bnd.push(x_i);
                let bad = others.iter().any(|o| o.dist_to_boundary(x) < theta * o.side())
                    || qg.dist_to_boundary(x) < theta * qg.side();
                in_bad &= bad;
                seen += 1;
            } else if !in_all {
                sep.push(x_i);
                seen += 1;
            } else {
                groups.entry(lab).or_default().push(x_i);
                seen += 1;
            }
        }
        exact &= seen == total;
        let mut labels: Vec<CubeRef> = groups.keys().cloned().collect();
        labels.sort();
        let pieces: Vec<Piece> = labels
            .into_iter()
            .map(|lab| {
                let qg = grid4.cube_geometry(&lab);
                let cube = if triple { qg.scaled(1.0 - theta) } else { inner_cache[&lab].0.clone() };
                let atoms = groups.remove(&lab).expect("label present");
                Piece { label: lab, cube, atoms }
            })
            .collect();
        let p = Partition { separated: sep, boundary: bnd, pieces };
        exact &= p.atom_count() == total;
        parts.push(p);
    }
    let mut owners: HashMap<CubeRef, (Cube, Vec<usize>)> = HashMap::new();
    for (pi, p) in parts.iter().enumerate() {
        for piece in &p.pieces {
            owners.entry(piece.label.clone()).or_insert_with(|| (piece.cube.clone(), Vec::new())).1.push(pi);
        }
    }
    let mut shared: Vec<SharedPiece> = owners
        .into_iter()
        .filter(|(_, (_, o))| o.len() >= 2)
        .map(|(label, (cube, owners))| {
            let five = cube.scaled(5.0);
            let certified = cubes.iter().all(|c| c.contains_cube(&five));
            SharedPiece { label, cube, owners, certified }
        })
        .collect();
    shared.sort_by(|a, b| a.label.cmp(&b.label));
    let max_pieces = parts.iter().map(|p| p.pieces.len()).max().unwrap_or(0);
    Ok(SurgeryOutcome { parts, shared, exact, boundary_in_bad: in_bad, max_pieces, worst_boundary_ratio: worst_ratio })
}

/// `E_ω ‖(Σ_I |D_I f|² 1_{I_bad})^{1/2}‖_{L^p(μ)}` over independent grids
/// `ω₂, ω₃, ω₄`. An atom of `I` is bad when it lies within `θℓ(I)` of the
/// boundary of the same-size cube of `ω₂` or `ω₃` containing it, or within
/// `θℓ` of the boundary of its `ω₄` cube of side `2^{j(θ)}ℓ(I)`.
pub fn bad_square_function(mart: &Martingale, f: &[C64], theta: f64, p: f64, trials: usize, seed: u64, exec: Execution) -> Result<f64> {
    let tree = mart.tree;
    let top = tree.top_level();
    let jt = surgery_exponent(theta);
    let fine = tree.fine_level;
    let dim = tree.grid.dim();
    let diffs: Vec<f64> = (0..tree.nodes.len())
        .map(|i| if tree.nodes[i].cube.level > top { mart.difference(i, f).norm_sqr() } else { 0.0 })
        .collect();
    let norms = exec.map(trials, |t| {
        let mut rng = trial_rng(seed, t);
        let g2 = DyadicGrid::random(dim, top, fine, &mut rng).expect("window");
        let g3 = DyadicGrid::random(dim, top, fine, &mut rng).expect("window");
        let g4 = DyadicGrid::random(dim, top + 1 - jt, fine - jt, &mut rng).expect("window");
        let mut acc = 0.0;
        for a in 0..mart.mu.len() {
            let x = mart.mu.point(a);
            let mut s = 0.0;
            for &q in &tree.chain[a] {
                let lvl = tree.nodes[q].cube.level;
                if lvl <= top {
                    continue;
                }
                let li = DyadicGrid::side(lvl);
                let near = |g: &DyadicGrid, l: i32, scale: f64| g.cube_geometry(&g.cube_containing(x, l)).dist_to_boundary(x) < theta * scale;
                let bad = near(&g2, lvl, li) || near(&g3, lvl, li) || near(&g4, lvl - jt, DyadicGrid::side(lvl - jt));
                if bad {
                    s += diffs[q];
                }
            }
            acc += s.sqrt().powf(p) * mart.mu.weight(a).norm();
        }
        acc.powf(1.0 / p)
    });
    Ok(norms.iter().sum::<f64>() / trials.max(1) as f64)
}
