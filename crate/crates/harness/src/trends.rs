//! Checks whose outcome is a trend or a curve rather than one constant per
//! level: Monte Carlo goodness, the bad square function, the weak type study
//! and the good-lambda scan.

use std::collections::HashMap;

use anyhow::Result;
use nhcz::decomposition::{whitney, OpenSet, WhitneyCover, WhitneyOptions};
use nhcz::dyadic::{bad_probability_mc, bad_square_function, trial_rng, AccretiveSystem, CubeTree, DyadicGrid, Martingale, Testbed};
use nhcz::maximal::{maximal_at, Integrand, MaximalKind, MaximalSpec};
use nhcz::operators::{maximal_truncation_at, truncated_at, Bilinear, Truncation, TruncationMode};
use nhcz::suppression::weak_type_sup;
use nhcz::{Cube, Execution, Region, C64};
use rand::Rng;
use serde_json::{json, Value};

use crate::config::SuiteConfig;
use crate::instance::{indicator, Instance};

pub struct Trend {
    pub constant: f64,
    pub witness: Value,
    pub trials: usize,
    pub pass: bool,
}

fn consecutive_ratio(a: f64, b: f64) -> f64 {
    if a == b {
        1.0
    } else if a == 0.0 || b == 0.0 {
        f64::INFINITY
    } else {
        a.max(b) / a.min(b)
    }
}

/// Worst ratio between consecutive entries.
pub fn worst_step(values: &[f64]) -> f64 {
    values.windows(2).map(|w| consecutive_ratio(w[0], w[1])).fold(1.0, f64::max)
}

fn random_density(rng: &mut impl Rng, n: usize) -> Vec<C64> {
    (0..n)
        .map(|_| C64::from_polar(rng.gen_range(0.1..1.0), rng.gen_range(0.0..std::f64::consts::TAU)))
        .collect()
}

/// `sup_λ λ μ({|T_ε| > λ})²` and the same for `T_♯`, over seeded normalised
/// pairs `ν_j = f_j μ / ‖f_j μ‖`.
pub fn weak_type(cfg: &SuiteConfig, exec: Execution) -> Result<Trend> {
    let mut per_level = Vec::new();
    let mut maxima = Vec::new();
    for &lv in &cfg.weak_type_levels {
        let inst = Instance::new(cfg, lv)?;
        let mu = &inst.mu;
        let stats = exec.map(cfg.trials, |i| -> nhcz::Result<(f64, f64)> {
            let mut rng = trial_rng(cfg.seed ^ ((lv as u64) << 32), i);
            let f1 = random_density(&mut rng, inst.len());
            let f2 = random_density(&mut rng, inst.len());
            let n1 = mu.times(&f1)?;
            let n1 = n1.scale(1.0 / n1.total_variation());
            let n2 = mu.times(&f2)?;
            let n2 = n2.scale(1.0 / n2.total_variation());
            let seq = Execution::Sequential;
            let te: Vec<f64> = truncated_at(inst.k(), &n1, &n2, &inst.atoms, Truncation::max(inst.r_min), seq)?
                .iter()
                .map(|v| v.norm())
                .collect();
            let ts = maximal_truncation_at(inst.k(), &n1, &n2, &inst.atoms, inst.r_min, seq)?;
            Ok((weak_type_sup(mu, &te, 0.5).powi(2), weak_type_sup(mu, &ts, 0.5).powi(2)))
        });
        let stats: Vec<(f64, f64)> = stats.into_iter().collect::<nhcz::Result<_>>()?;
        let (mut be, mut bs, mut at) = (0.0f64, 0.0f64, 0usize);
        for (i, &(e, s)) in stats.iter().enumerate() {
            be = be.max(e);
            if s > bs {
                bs = s;
                at = i;
            }
        }
        maxima.push(bs.max(be));
        per_level.push(json!({ "level": lv, "max_truncated": be, "max_sharp": bs, "worst_trial": at }));
    }
    let constant = maxima.iter().copied().fold(0.0, f64::max);
    let step = worst_step(&maxima);
    let ceiling = cfg.ceiling("weak_type").unwrap_or(f64::INFINITY);
    Ok(Trend {
        constant,
        witness: json!({ "levels": cfg.weak_type_levels, "maxima": maxima, "per_level": per_level, "stability": step, "ceiling": ceiling }),
        trials: cfg.trials * cfg.weak_type_levels.len(),
        pass: constant <= ceiling && step <= cfg.stability_factor,
    })
}

/// Probability that the unit cube is bad, over `σ−2, σ, σ+2`.
pub fn bad_cube_probability(cfg: &SuiteConfig, exec: Execution) -> Result<Trend> {
    let sigmas = [cfg.sigma - 2, cfg.sigma, cfg.sigma + 2];
    let mut est = Vec::new();
    for &s in &sigmas {
        est.push(bad_probability_mc(2, cfg.gamma, s, cfg.mc_trials, cfg.seed, cfg.mc_depth, exec)?);
    }
    let decreasing = est.windows(2).all(|w| w[1].p < w[0].p);
    let separated = est.windows(2).all(|w| w[1].ci_hi < w[0].ci_lo);
    Ok(Trend {
        constant: est[1].p,
        witness: json!({ "gamma": cfg.gamma, "sigmas": sigmas, "estimates": est, "decreasing": decreasing, "ci_separated": separated }),
        trials: cfg.mc_trials * sigmas.len(),
        pass: decreasing && separated,
    })
}

/// Average bad square function for `θ, θ/2, θ/4` on the finest configured
/// level, with the same random grids for every `θ`.
pub fn bad_square(cfg: &SuiteConfig, exec: Execution) -> Result<Trend> {
    let level = *cfg.levels.iter().max().expect("validated");
    let inst = Instance::new(cfg, level)?;
    let mu = &inst.mu;
    let tb = Testbed::new(Cube::from_corner(&[-0.5, -0.5], 2.0), 1.0)?;
    let top = tb.top_level();
    let fine = top + 2 * level as i32 + 4;
    let grid = DyadicGrid::from_seed(2, top, fine, cfg.seed)?;
    let tree = CubeTree::build(mu, &grid, &tb)?;
    let sys = AccretiveSystem::unit(mu);
    let mart = Martingale::new(&tree, mu, &sys);
    let f: Vec<C64> = mu.points().map(|p| C64::new((7.0 * p[0]).cos(), (5.0 * p[1]).sin())).collect();
    let thetas = [cfg.theta, cfg.theta / 2.0, cfg.theta / 4.0];
    let mut vals = Vec::new();
    for &th in &thetas {
        vals.push(bad_square_function(&mart, &f, th, cfg.p, cfg.trials, cfg.seed, exec)?);
    }
    let decreasing = vals.windows(2).all(|w| w[1] < w[0]);
    Ok(Trend {
        constant: vals[0],
        witness: json!({ "level": level, "thetas": thetas, "averages": vals, "decreasing": decreasing, "separated_tree": tree.separated }),
        trials: cfg.trials * thetas.len(),
        pass: decreasing,
    })
}

/// Whitney covers of `Ω_λ = {T_♯ > λ}`, keyed by the number of atoms in `Ω_λ`.
struct OmegaCache<'a> {
    inst: &'a Instance,
    sharp: &'a [f64],
    opts: WhitneyOptions,
    covers: HashMap<usize, WhitneyCover>,
}

impl OmegaCache<'_> {
    fn count(&self, lambda: f64) -> usize {
        self.sharp.iter().filter(|&&v| v > lambda).count()
    }

    fn cover(&mut self, lambda: f64) -> Result<&WhitneyCover> {
        let c = self.count(lambda);
        if !self.covers.contains_key(&c) {
            let omega = OpenSet::level_set(&self.inst.mu, self.sharp, lambda)?;
            let cov = whitney(&omega, &self.inst.mu, &self.opts)?;
            self.covers.insert(c, cov);
        }
        Ok(&self.covers[&c])
    }
}

/// Powers `2^k`, `k = 40, 39, …, −40`, scanned from the top.
fn delta_grid() -> Vec<f64> {
    (-40..=40).rev().map(|k| 2f64.powi(k)).collect()
}

pub fn good_lambda(cfg: &SuiteConfig, exec: Execution) -> Result<Trend> {
    let mut fixtures = Vec::new();
    let mut all_exist = true;
    let mut all_monotone = true;
    let mut literal = true;
    let mut smallest = f64::INFINITY;
    let mut trials = 0;
    for &lv in &cfg.good_lambda_levels {
        let inst = Instance::new(cfg, lv)?;
        let mu = &inst.mu;
        let f: Vec<C64> = mu.points().map(|p| C64::new(1.0 + 0.5 * (std::f64::consts::TAU * p[0]).cos(), 0.0)).collect();
        let g: Vec<C64> = mu.points().map(|p| C64::new(1.0 + 0.5 * (std::f64::consts::TAU * p[1]).sin(), 0.0)).collect();
        let fm = mu.times(&f)?;
        let gm = mu.times(&g)?;
        let sharp = maximal_truncation_at(inst.k(), &fm, &gm, &inst.atoms, 0.0, exec)?;
        let spec = MaximalSpec::new(MaximalKind::CenteredCube).with_floor(inst.r_min);
        let mf = maximal_at(mu, Integrand::Function(&f), &inst.atoms, &spec, exec)?;
        let mg = maximal_at(mu, Integrand::Function(&g), &inst.atoms, &spec, exec)?;
        let mm: Vec<f64> = mf.iter().zip(&mg).map(|(a, b)| a * b).collect();
        let mut cache = OmegaCache { inst: &inst, sharp: &sharp, opts: WhitneyOptions { t: cfg.t, ..Default::default() }, covers: HashMap::new() };

        let lhs = |lambda: f64, eps: f64, delta: f64| -> (f64, Vec<usize>) {
            let mut mass = 0.0;
            let mut who = Vec::new();
            for i in 0..inst.len() {
                if sharp[i] > (1.0 + eps) * lambda && mm[i] <= delta * lambda {
                    mass += mu.weight(i).re;
                    who.push(i);
                }
            }
            (mass, who)
        };

        let mut curve = Vec::new();
        let mut deltas = Vec::new();
        let mut d0_max = 0usize;
        for &eps in &cfg.good_lambda_eps {
            let mut found = None;
            for &delta in &delta_grid() {
                // Both sides are right-continuous step functions of λ that
                // jump only at these points.
                let mut lams: Vec<f64> = sharp.iter().flat_map(|&v| [v, v / (1.0 + eps)]).chain(mm.iter().map(|&v| v / delta)).filter(|&l| l > 0.0).collect();
                lams.sort_by(|a, b| a.total_cmp(b));
                lams.dedup();
                if let Some(&lo) = lams.first() {
                    lams.insert(0, lo / 2.0);
                }
                let mut holds = true;
                for &lam in &lams {
                    trials += 1;
                    let (l, _) = lhs(lam, eps, delta);
                    if l == 0.0 {
                        continue;
                    }
                    let cov = cache.cover(lam)?;
                    d0_max = d0_max.max(cov.d0);
                    let rhs = (1.0 - cfg.theta / (16.0 * cov.d0.max(1) as f64)) * cov.omega_mass;
                    if l > rhs * (1.0 + 1e-12) {
                        holds = false;
                        break;
                    }
                }
                if holds {
                    found = Some((delta, lams));
                    break;
                }
            }
            let Some((delta, _)) = found else {
                all_exist = false;
                curve.push(json!({ "eps": eps, "delta": null }));
                deltas.push(f64::NAN);
                continue;
            };
            // The pointwise step T_♯(f 1_{2P}, g 1_{2P})(x) > ελ/2 concerns small
            // δ, so it is spot-checked at the smallest grid δ that still has
            // witnesses, not at the passing one.
            let need = (0..inst.len()).filter(|&i| sharp[i] > 0.0).map(|i| (1.0 + eps) * mm[i] / sharp[i]).fold(f64::INFINITY, f64::min);
            let pw_delta = delta_grid().into_iter().filter(|&d| d > need).fold(f64::INFINITY, f64::min);
            let (mut checked, mut violated, mut lone) = (0usize, 0usize, 0usize);
            if pw_delta.is_finite() {
                let mut pw_lams: Vec<f64> = sharp.iter().map(|&v| v / (1.0 + eps)).chain(mm.iter().map(|&v| v / pw_delta)).collect();
                pw_lams.sort_by(|a, b| a.total_cmp(b));
                pw_lams.dedup();
                for &lam in &pw_lams {
                    let (_, who) = lhs(lam, eps, pw_delta);
                    if who.is_empty() {
                        continue;
                    }
                    let cov = cache.cover(lam)?.clone();
                    for &i in &who {
                        let x = mu.point(i);
                        let Some(ci) = cov.cubes.iter().position(|q| q.contains(x)) else { continue };
                        let Some((_, p)) = cov.refined.iter().find(|(j, _)| *j == ci) else { continue };
                        let r2 = Region::Cube(p.scaled(2.0));
                        let ind = indicator(mu, &r2);
                        if ind.iter().filter(|v| v.re > 0.0).count() <= 1 {
                            lone += 1;
                        }
                        let fl = mu.times(&f.iter().zip(&ind).map(|(a, b)| a * b).collect::<Vec<_>>())?;
                        let gl = mu.times(&g.iter().zip(&ind).map(|(a, b)| a * b).collect::<Vec<_>>())?;
                        let v = Bilinear::new(inst.k(), &fl, &gl)?.maximal_exact(x, 0.0, TruncationMode::Max).value;
                        checked += 1;
                        if !(v > eps * lam / 2.0) {
                            violated += 1;
                        }
                    }
                }
            }
            smallest = smallest.min(delta);
            deltas.push(delta);
            curve.push(json!({
                "eps": eps,
                "delta": delta,
                "pointwise_delta": pw_delta,
                "pointwise_checked": checked,
                "pointwise_violations": violated,
                "pointwise_single_atom": lone,
            }));
        }
        // Larger ε shrinks {T_♯ > (1+ε)λ}, so the largest passing δ can only grow.
        let monotone = deltas.windows(2).all(|w| !(w[1] < w[0]));
        let nonincreasing = deltas.windows(2).all(|w| !(w[1] > w[0]));
        all_monotone &= monotone;
        literal &= nonincreasing;
        fixtures.push(json!({ "level": lv, "curve": curve, "d0_max": d0_max, "nondecreasing_in_eps": monotone, "nonincreasing_in_eps": nonincreasing }));
    }
    Ok(Trend {
        constant: smallest,
        witness: json!({ "theta": cfg.theta, "fixtures": fixtures, "delta_exists": all_exist, "nondecreasing_in_eps": all_monotone, "nonincreasing_in_eps": literal }),
        trials,
        pass: all_exist && all_monotone,
    })
}
