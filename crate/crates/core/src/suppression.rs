//! L^∞ suppression: the radii `ε(x)`, the cone envelope `Φ₀`, and the check
//! that the suppressed maximal truncations stay bounded.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::{dist, AtomicMeasure, Point, Region};
use crate::kernels::{Cone, Kernel, LipschitzProfile, Suppressed};
use crate::operators::{comparison_ratio, Bilinear, TruncationMode};

/// `sup{ε > 0 : |T_ε(x)| > λ₀}` from a profile, or `None` when `|T_ε(x)| ≤ λ₀`
/// for every `ε`.
pub fn radius_from_profile(profile: &[(f64, C64)], lambda0: f64) -> Option<f64> {
    profile.iter().find(|(_, s)| s.norm() > lambda0).map(|p| p.0)
}

pub fn epsilon_radius<K: Kernel + ?Sized>(
    k: &K,
    mu: &AtomicMeasure,
    f0: &[C64],
    g0: &[C64],
    x: &[f64],
    lambda0: f64,
) -> Result<Option<f64>> {
    if !(lambda0 > 0.0) {
        return Err(Error::InvalidParameter(format!("threshold must be positive, got {lambda0}")));
    }
    let fm = mu.times(f0)?;
    let gm = mu.times(g0)?;
    let b = Bilinear::new(k, &fm, &gm)?;
    Ok(radius_from_profile(&b.profile(x, TruncationMode::Max), lambda0))
}

/// Operators and bounded test pairs. Every kernel is combined with every pair.
pub struct SuppressionInstance<'a> {
    pub mu: &'a AtomicMeasure,
    pub kernels: Vec<&'a dyn Kernel>,
    pub pairs: Vec<(Vec<C64>, Vec<C64>)>,
    pub lambda0: f64,
    /// Exceptional set `H`.
    pub exceptional: Region,
    /// Weak testing exponent.
    pub s: f64,
}

impl SuppressionInstance<'_> {
    fn combos(&self) -> impl Iterator<Item = (&dyn Kernel, &[C64], &[C64])> + '_ {
        self.kernels
            .iter()
            .flat_map(move |k| self.pairs.iter().map(move |(f, g)| (*k, f.as_slice(), g.as_slice())))
    }

    fn validate(&self) -> Result<()> {
        self.mu.require_nonnegative("suppression measure")?;
        if !(self.lambda0 > 0.0) || !(self.s > 0.0) {
            return Err(Error::InvalidParameter("λ₀ and s must be positive".into()));
        }
        if self.kernels.is_empty() || self.pairs.is_empty() {
            return Err(Error::InvalidParameter("instance needs a kernel and a test pair".into()));
        }
        Ok(())
    }
}

type Records = Vec<(f64, f64)>;

/// Running maxima of `|T_ε(x)|` along a profile: the entries where `|S|`
/// exceeds every earlier one. They decide `ε(x)` for every threshold and end
/// at `T_♯(x)`.
fn records(profile: &[(f64, C64)]) -> Records {
    let mut out: Vec<(f64, f64)> = Vec::new();
    for &(k, s) in profile {
        let a = s.norm();
        if out.last().map_or(a > 0.0, |l| a > l.1) {
            out.push((k, a));
        }
    }
    out
}

/// `records[c][i]` for every combination `c` and atom `i`.
fn atom_records(inst: &SuppressionInstance, exec: Execution) -> Result<Vec<Vec<Records>>> {
    let pts: Vec<Point> = inst.mu.points().map(Point::from).collect();
    let mut out = Vec::new();
    for (k, f, g) in inst.combos() {
        let fm = inst.mu.times(f)?;
        let gm = inst.mu.times(g)?;
        let b = Bilinear::new(k, &fm, &gm)?;
        out.push(exec.map_slice(&pts, |x| records(&b.profile(x, TruncationMode::Max))));
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Phi0Report {
    pub profile: LipschitzProfile,
    /// `max_c ε_c(x_i)` per atom; `None` off `S₀`.
    pub radii: Vec<Option<f64>>,
    /// `max_c T^c_♯(x_i)` per atom.
    pub sharp: Vec<f64>,
    /// `μ({Φ₀ = 0}) / μ(ℝⁿ)`.
    pub zero_set_fraction: f64,
    /// Atoms in `{Φ₀ > 0}` with `T_♯ ≤ λ₀/2`.
    pub containment_witnesses: Vec<usize>,
    /// `μ(S ∖ H)`, atomwise.
    pub suppressed_mass: f64,
    /// Smallest `C₀` with `μ({T_♯ > λ}) ≤ C₀ λ^{−s} μ(ℝⁿ)` for all `λ`.
    pub weak_constant: f64,
    /// `2^s C₀ λ₀^{−s} μ(ℝⁿ)`.
    pub mass_bound: f64,
}

impl Phi0Report {
    pub fn containment_holds(&self) -> bool {
        self.containment_witnesses.is_empty()
    }
    pub fn mass_bound_holds(&self) -> bool {
        self.suppressed_mass <= self.mass_bound * (1.0 + 1e-12)
    }
}

/// `sup_λ λ^s μ({v > λ})`, attained as `λ ↑` one of the values.
pub fn weak_type_sup(mu: &AtomicMeasure, v: &[f64], s: f64) -> f64 {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]));
    let mut mass = 0.0;
    let mut best: f64 = 0.0;
    let mut i = 0;
    while i < order.len() {
        let lv = v[order[i]];
        while i < order.len() && v[order[i]] == lv {
            mass += mu.weight(order[i]).re;
            i += 1;
        }
        if lv > 0.0 {
            best = best.max(lv.powf(s) * mass);
        }
    }
    best
}

pub fn build_phi0(inst: &SuppressionInstance, exec: Execution) -> Result<Phi0Report> {
    inst.validate()?;
    Ok(phi0_from_records(inst, &atom_records(inst, exec)?))
}

fn phi0_from_records(inst: &SuppressionInstance, recs: &[Vec<Vec<(f64, f64)>>]) -> Phi0Report {
    let mu = inst.mu;
    let n = mu.len();
    let mut radii: Vec<Option<f64>> = vec![None; n];
    let mut sharp = vec![0.0f64; n];
    for per_atom in recs {
        for (i, rec) in per_atom.iter().enumerate() {
            if let Some(&(r, _)) = rec.iter().find(|p| p.1 > inst.lambda0) {
                radii[i] = Some(radii[i].map_or(r, |q: f64| q.max(r)));
            }
            sharp[i] = sharp[i].max(rec.last().map_or(0.0, |p| p.1));
        }
    }
    let cones: Vec<Cone> = (0..n)
        .filter_map(|i| radii[i].map(|h| Cone { apex: Point::from(mu.point(i)), height: h }))
        .collect();
    let profile = LipschitzProfile { cones, floor: 0.0, boundary: None };

    let total = mu.total_variation();
    let phi: Vec<f64> = mu.points().map(|x| profile.eval(x)).collect();
    let zero_mass: f64 = (0..n).filter(|&i| phi[i] == 0.0).map(|i| mu.weight(i).re).sum();
    let containment_witnesses = (0..n).filter(|&i| phi[i] > 0.0 && sharp[i] <= inst.lambda0 / 2.0).collect();

    // S = ∪ B(x, ε(x)) over x ∈ S₀, open balls.
    let in_s = |a: usize| {
        (0..n).any(|i| radii[i].is_some_and(|r| dist(mu.point(a), mu.point(i)) < r))
    };
    let suppressed_mass: f64 =
        (0..n).filter(|&a| in_s(a) && !inst.exceptional.contains(mu.point(a))).map(|a| mu.weight(a).re).sum();
    let weak_constant = if total > 0.0 { weak_type_sup(mu, &sharp, inst.s) / total } else { 0.0 };
    let mass_bound = 2f64.powf(inst.s) * weak_constant * inst.lambda0.powf(-inst.s) * total;
    Phi0Report {
        profile,
        radii,
        sharp,
        zero_set_fraction: if total > 0.0 { zero_mass / total } else { 1.0 },
        containment_witnesses,
        suppressed_mass,
        weak_constant,
        mass_bound,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LambdaScan {
    pub lambda0: f64,
    pub doublings: u32,
    pub zero_set_fraction: f64,
    pub reached: bool,
}

/// Doubles `λ₀` from its instance value until `μ({Φ₀ = 0})/μ(ℝⁿ) ≥ target`.
pub fn lambda_scan(inst: &mut SuppressionInstance, target: f64, max_doublings: u32, exec: Execution) -> Result<LambdaScan> {
    Ok(lambda_scan_report(inst, target, max_doublings, exec)?.0)
}

/// [`lambda_scan`] together with the envelope at the final `λ₀`.
pub fn lambda_scan_report(
    inst: &mut SuppressionInstance,
    target: f64,
    max_doublings: u32,
    exec: Execution,
) -> Result<(LambdaScan, Phi0Report)> {
    inst.validate()?;
    let recs = atom_records(inst, exec)?;
    let mut d = 0;
    loop {
        let rep = phi0_from_records(inst, &recs);
        let reached = rep.zero_set_fraction >= target;
        if reached || d == max_doublings {
            let scan = LambdaScan { lambda0: inst.lambda0, doublings: d, zero_set_fraction: rep.zero_set_fraction, reached };
            return Ok((scan, rep));
        }
        inst.lambda0 *= 2.0;
        d += 1;
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuppressionCheck {
    pub lambda0: f64,
    /// `max over atoms and combinations of T_{Φ,♯}`.
    pub sup_suppressed: f64,
    /// `(sup − λ₀)₊`.
    pub excess: f64,
    /// Largest constant in `T_{Φ,♯} ≤ T_{♯,Φ(x)} + C M_μ f M_μ g` over atoms.
    pub comparison_constant: f64,
    /// `max T_{♯,Φ(x)}(x)` over atoms: the chain's middle term.
    pub sup_truncated_at_phi: f64,
}

/// Suppressed maximal truncations at the atoms. `phi` must dominate `Φ₀`
/// on every atom.
pub fn verify_suppression(
    inst: &SuppressionInstance,
    phi: &LipschitzProfile,
    phi0: &LipschitzProfile,
    exec: Execution,
) -> Result<SuppressionCheck> {
    inst.validate()?;
    let mu = inst.mu;
    let witnesses: Vec<usize> = (0..mu.len()).filter(|&i| phi.eval(mu.point(i)) < phi0.eval(mu.point(i))).collect();
    if !witnesses.is_empty() {
        return Err(Error::InvalidParameter(format!("profile below Φ₀ at atoms {witnesses:?}")));
    }
    let pts: Vec<Point> = mu.points().map(Point::from).collect();
    let mut sup_s: f64 = 0.0;
    let mut sup_t: f64 = 0.0;
    let mut comp: f64 = 0.0;
    for (k, f, g) in inst.combos() {
        let sk = Suppressed::new(k, phi.clone());
        let fm = mu.times(f)?;
        let gm = mu.times(g)?;
        let bs = Bilinear::new(&sk, &fm, &gm)?;
        let bt = Bilinear::new(k, &fm, &gm)?;
        let rows = exec.map_slice(&pts, |x| {
            let px = phi.eval(x);
            let s = bs.maximal_exact(x, 0.0, TruncationMode::Max).value;
            let t = bt.maximal_exact(x, px, TruncationMode::Max).value;
            (s, t, comparison_ratio(s, t, mu, f, g, x))
        });
        for (s, t, c) in rows {
            sup_s = sup_s.max(s);
            sup_t = sup_t.max(t);
            comp = comp.max(c?);
        }
    }
    Ok(SuppressionCheck {
        lambda0: inst.lambda0,
        sup_suppressed: sup_s,
        excess: (sup_s - inst.lambda0).max(0.0),
        comparison_constant: comp,
        sup_truncated_at_phi: sup_t,
    })
}
