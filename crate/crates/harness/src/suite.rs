use std::collections::BTreeMap;
use std::time::Instant;

use anyhow::Result;
use nhcz::Execution;
use serde_json::json;

use crate::config::{SuiteConfig, ALL_CHECKS};
use crate::instance::Instance;
use crate::report::{CheckReport, SuiteReport};
use crate::stability::{self, Measured, SuppressionContext};
use crate::trends::{self, worst_step, Trend};

/// Levels are built once and shared by every per-level check.
struct Fixtures<'a> {
    cfg: &'a SuiteConfig,
    exec: Execution,
    instances: Vec<Instance>,
    suppression: BTreeMap<u32, SuppressionContext>,
}

impl<'a> Fixtures<'a> {
    fn new(cfg: &'a SuiteConfig, exec: Execution) -> Result<Self> {
        let instances = cfg.levels.iter().map(|&l| Instance::new(cfg, l)).collect::<Result<_>>()?;
        Ok(Fixtures { cfg, exec, instances, suppression: BTreeMap::new() })
    }

    fn context(&mut self, idx: usize) -> Result<&SuppressionContext> {
        let level = self.instances[idx].level;
        if !self.suppression.contains_key(&level) {
            let ctx = stability::suppression_context(self.cfg, &self.instances[idx], self.exec)?;
            self.suppression.insert(level, ctx);
        }
        Ok(&self.suppression[&level])
    }

    fn measure(&mut self, name: &str, idx: usize) -> Result<Measured> {
        let (cfg, exec) = (self.cfg, self.exec);
        match name {
            "suppression_bound" => {
                let ctx = self.context(idx)?.clone();
                stability::suppression_bound(cfg, &self.instances[idx], &ctx, exec)
            }
            "improved_size" => {
                let finest = (0..self.instances.len()).max_by_key(|&i| self.instances[i].level).expect("levels");
                let ctx = self.context(finest)?.clone();
                let level = self.instances[finest].level;
                stability::improved_size(cfg, &self.instances[idx], &ctx, level, exec)
            }
            _ => {
                let inst = &self.instances[idx];
                match name {
                    "cotlar_adapted" => stability::cotlar_adapted(cfg, inst, exec),
                    "weak_to_strong" => stability::weak_to_strong(cfg, inst, exec),
                    "improved_testing" => stability::improved_testing(cfg, inst, exec),
                    "cotlar_basic" => stability::cotlar_basic(cfg, inst, exec),
                    "small_boundary_pairing" => stability::small_boundary_pairing(cfg, inst, exec),
                    "basic_integral_bound" => stability::basic_integral(cfg, inst, exec),
                    "truncation_comparison" => stability::truncation_comparison(cfg, inst, exec),
                    "separation_bound" => stability::separation_bound(cfg, inst, exec),
                    _ => unreachable!("not a per-level check: {name}"),
                }
            }
        }
    }

    fn level_study(&mut self, name: &str) -> Result<CheckReport> {
        let mut per = Vec::new();
        for idx in 0..self.instances.len() {
            per.push(self.measure(name, idx)?);
        }
        let constants: Vec<f64> = per.iter().map(|m| m.constant).collect();
        let constant = constants.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let constant = if constants.iter().any(|c| c.is_nan()) { f64::NAN } else { constant };
        let step = worst_step(&constants);
        let scale = per.iter().map(|m| m.ceiling_scale).fold(1.0, f64::max);
        let ceiling = self.cfg.ceiling(name).unwrap_or(f64::INFINITY) * scale;
        let stable = step <= self.cfg.stability_factor;
        let pass = per.iter().all(|m| m.ok) && stable && constant <= ceiling;
        Ok(CheckReport {
            name: name.to_string(),
            constant,
            witness: json!({
                "levels": self.cfg.levels,
                "constants": constants,
                "stability": step,
                "stable": stable,
                "ceiling": ceiling,
                "per_level": per.iter().map(|m| m.witness.clone()).collect::<Vec<_>>(),
            }),
            trials: per.iter().map(|m| m.trials).sum(),
            pass,
            seed: self.cfg.seed,
            elapsed: Default::default(),
        })
    }
}

fn from_trend(cfg: &SuiteConfig, name: &str, t: Trend) -> CheckReport {
    CheckReport { name: name.into(), constant: t.constant, witness: t.witness, trials: t.trials, pass: t.pass, seed: cfg.seed, elapsed: Default::default() }
}

fn failed(cfg: &SuiteConfig, name: &str, err: anyhow::Error) -> CheckReport {
    CheckReport {
        name: name.into(),
        constant: f64::NAN,
        witness: json!({ "error": format!("{err:#}") }),
        trials: 0,
        pass: false,
        seed: cfg.seed,
        elapsed: Default::default(),
    }
}

/// Runs every enabled check. A check that cannot run is reported as failing
/// with its diagnosis; it does not abort the others.
pub fn run_suite(cfg: &SuiteConfig, exec: Execution) -> Result<SuiteReport> {
    cfg.validate()?;
    let mut fx = Fixtures::new(cfg, exec)?;
    let mut checks = Vec::new();
    for &name in ALL_CHECKS {
        if !cfg.enabled(name) {
            continue;
        }
        let start = Instant::now();
        let out = match name {
            "weak_type" => trends::weak_type(cfg, exec).map(|t| from_trend(cfg, name, t)),
            "good_lambda" => trends::good_lambda(cfg, exec).map(|t| from_trend(cfg, name, t)),
            "bad_cube_probability" => trends::bad_cube_probability(cfg, exec).map(|t| from_trend(cfg, name, t)),
            "bad_square_function" => trends::bad_square(cfg, exec).map(|t| from_trend(cfg, name, t)),
            _ => fx.level_study(name),
        };
        let mut rep = out.unwrap_or_else(|e| failed(cfg, name, e));
        rep.elapsed = start.elapsed();
        checks.push(rep);
    }
    Ok(SuiteReport { config: cfg.clone(), checks })
}
