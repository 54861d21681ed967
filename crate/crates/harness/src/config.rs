use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelChoice {
    /// `((y−x)·e₁) / (|x−y|+|x−z|)^{2m+1}`.
    #[default]
    Odd,
    /// `(|x−y|+|x−z|)^{−2m}`.
    Scalar,
}

/// Every check the suite knows about, in report order.
pub const ALL_CHECKS: &[&str] = &[
    "cotlar_adapted",
    "weak_to_strong",
    "improved_testing",
    "cotlar_basic",
    "weak_type",
    "good_lambda",
    "small_boundary_pairing",
    "suppression_bound",
    "improved_size",
    "basic_integral_bound",
    "truncation_comparison",
    "separation_bound",
    "bad_cube_probability",
    "bad_square_function",
];

/// Checks whose measured constant must be stable under refinement.
pub const STABILITY_CHECKS: &[&str] = &[
    "cotlar_adapted",
    "cotlar_basic",
    "improved_testing",
    "suppression_bound",
    "improved_size",
    "weak_to_strong",
    "small_boundary_pairing",
    "basic_integral_bound",
    "truncation_comparison",
    "separation_bound",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub n: usize,
    pub m: f64,
    pub alpha: f64,
    /// Weak testing exponent.
    pub s: f64,
    pub p: f64,
    pub q: f64,
    pub r: f64,
    pub gamma: f64,
    /// Middle of the goodness sweep `σ−2, σ, σ+2`.
    pub sigma: u32,
    pub theta: f64,
    /// Small-boundary parameter for the test cube.
    pub t: f64,
    /// Doubling constant for the test cube; `2^{n+4}` when absent.
    pub b: Option<f64>,
    /// Starting value of the λ₀ scan.
    pub lambda0: f64,
    /// Required mass fraction of `{Φ₀ = 0}`.
    pub zero_target: f64,
    pub eta_grid: Vec<f64>,
    pub tau: f64,
    pub tau_grid: Vec<f64>,
    /// Random instances in the weak type study and grids in the bad square function.
    pub trials: usize,
    pub mc_trials: usize,
    pub mc_depth: u32,
    pub seed: u64,
    /// Smallest radius any truncation or maximal function may use; the
    /// measure resolution is used when it is larger.
    pub resolution_floor: Option<f64>,
    pub levels: Vec<u32>,
    pub weak_type_levels: Vec<u32>,
    pub good_lambda_levels: Vec<u32>,
    pub good_lambda_eps: Vec<f64>,
    pub kernel: KernelChoice,
    /// Largest allowed change of a constant between consecutive levels.
    pub stability_factor: f64,
    /// Empty means all checks.
    pub checks: Vec<String>,
    pub ceilings: BTreeMap<String, f64>,
}

fn default_ceilings() -> BTreeMap<String, f64> {
    [
        ("cotlar_adapted", 4.0),
        ("weak_to_strong", 4.0),
        ("improved_testing", 8.0),
        ("cotlar_basic", 4.0),
        ("weak_type", 4.0),
        ("small_boundary_pairing", 1.0),
        ("suppression_bound", 4.0),
        ("improved_size", 12.0),
        ("basic_integral_bound", 4.0),
        ("truncation_comparison", 4.0),
        ("separation_bound", 4.0),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            n: 2,
            m: 1.0,
            alpha: 1.0,
            s: 1.0,
            p: 2.0,
            q: 2.0,
            r: 1.0,
            gamma: 0.5,
            sigma: 6,
            theta: 0.5,
            t: 64.0,
            b: None,
            lambda0: 0.25,
            zero_target: 0.5,
            eta_grid: vec![0.5, 0.25, 0.125],
            tau: 0.1,
            tau_grid: vec![0.4, 0.2, 0.1, 0.05],
            trials: 100,
            mc_trials: 10_000,
            mc_depth: 12,
            seed: 7,
            resolution_floor: None,
            levels: vec![2, 3, 4],
            weak_type_levels: vec![2, 3],
            good_lambda_levels: vec![2, 3],
            good_lambda_eps: vec![0.05, 0.1, 0.2, 0.4, 0.8],
            kernel: KernelChoice::Odd,
            stability_factor: 2.0,
            checks: Vec::new(),
            ceilings: default_ceilings(),
        }
    }
}

fn open_unit(v: f64) -> bool {
    v > 0.0 && v < 1.0
}

impl SuiteConfig {
    /// Reads JSON or TOML, chosen by extension. Parse errors carry positions.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let is_toml = path.extension().is_some_and(|e| e == "toml");
        let cfg: SuiteConfig = if is_toml {
            toml::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?
        } else {
            serde_json::from_str(&text).map_err(|e| {
                anyhow::anyhow!("{}:{}:{}: {e}", path.display(), e.line(), e.column())
            })?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn doubling_constant(&self) -> f64 {
        self.b.unwrap_or(2f64.powi(self.n as i32 + 4))
    }

    pub fn ceiling(&self, name: &str) -> Option<f64> {
        self.ceilings.get(name).copied()
    }

    pub fn enabled(&self, name: &str) -> bool {
        self.checks.is_empty() || self.checks.iter().any(|c| c == name)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n != 2 {
            bail!("the fixture set is planar: n must be 2, got {}", self.n);
        }
        if !(self.p > 1.0 && self.p.is_finite()) || !(self.q > 1.0 && self.q.is_finite()) {
            bail!("p and q must lie in (1, ∞), got p = {}, q = {}", self.p, self.q);
        }
        if !(self.r > 0.5 && self.r.is_finite()) {
            bail!("r must lie in (1/2, ∞), got {}", self.r);
        }
        let gap = 1.0 / self.p + 1.0 / self.q - 1.0 / self.r;
        if gap.abs() > 1e-12 {
            bail!("exponents violate 1/p + 1/q = 1/r (off by {gap:e})");
        }
        if !(self.m > 0.0) || !(self.alpha > 0.0 && self.alpha <= 1.0) || !(self.s > 0.0) {
            bail!("need m > 0, α ∈ (0,1] and s > 0");
        }
        if !open_unit(self.gamma) || !open_unit(self.theta) || !open_unit(self.tau) {
            bail!("γ, θ and τ must lie in (0,1)");
        }
        if self.sigma < 2 {
            bail!("σ must be at least 2 so that σ−2 is a valid scale gap");
        }
        if !(self.t > 0.0) || !(self.doubling_constant() >= 1.0) || !(self.lambda0 > 0.0) {
            bail!("need t > 0, b ≥ 1 and λ₀ > 0");
        }
        if !(self.zero_target > 0.0 && self.zero_target <= 1.0) {
            bail!("zero_target must lie in (0,1]");
        }
        if self.eta_grid.iter().any(|&e| !open_unit(e)) || self.tau_grid.iter().any(|&e| !open_unit(e)) {
            bail!("η and τ grids must lie in (0,1)");
        }
        if self.good_lambda_eps.iter().any(|&e| !(e > 0.0)) {
            bail!("good-lambda ε grid must be positive");
        }
        for lv in self.levels.iter().chain(&self.weak_type_levels).chain(&self.good_lambda_levels) {
            if !(1..=5).contains(lv) {
                bail!("Cantor level {lv} outside 1..=5");
            }
        }
        if self.levels.is_empty() {
            bail!("at least one Cantor level is required");
        }
        if let Some(f) = self.resolution_floor {
            if !(f > 0.0) {
                bail!("resolution_floor must be positive");
            }
        }
        if !(self.stability_factor >= 1.0) {
            bail!("stability_factor must be at least 1");
        }
        for c in &self.checks {
            if !ALL_CHECKS.contains(&c.as_str()) {
                bail!("unknown check {c:?}");
            }
        }
        Ok(())
    }
}
