use anyhow::Result;
use nhcz::geometry::{boundary_ratio, generate, is_doubling, Generator};
use nhcz::kernels::{Kernel, OddModel, ScalarModel};
use nhcz::operators::atoms_of;
use nhcz::{AtomicMeasure, Cube, Point, Region, C64};

use crate::config::{KernelChoice, SuiteConfig};

/// A Cantor fixture with the configured kernel.
pub struct Instance {
    pub level: u32,
    pub mu: AtomicMeasure,
    pub kernel: Box<dyn Kernel>,
    /// Smallest truncation or averaging radius.
    pub r_min: f64,
    pub atoms: Vec<Point>,
}

pub fn make_kernel(choice: KernelChoice, m: f64) -> Box<dyn Kernel> {
    match choice {
        KernelChoice::Odd => Box::new(OddModel::new(2, m)),
        KernelChoice::Scalar => Box::new(ScalarModel::new(2, m)),
    }
}

impl Instance {
    pub fn new(cfg: &SuiteConfig, level: u32) -> Result<Self> {
        let mu = generate(&Generator::Cantor4 { level })?;
        let r_min = cfg.resolution_floor.map_or(mu.resolution(), |f| f.max(mu.resolution()));
        let atoms = atoms_of(&mu);
        Ok(Instance { level, mu, kernel: make_kernel(cfg.kernel, cfg.m), r_min, atoms })
    }

    pub fn k(&self) -> &dyn Kernel {
        self.kernel.as_ref()
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }
}

pub fn indicator(mu: &AtomicMeasure, region: &Region) -> Vec<C64> {
    mu.points().map(|p| C64::new(if region.contains(p) { 1.0 } else { 0.0 }, 0.0)).collect()
}

pub fn ones(n: usize) -> Vec<C64> {
    vec![C64::new(1.0, 0.0); n]
}

/// Which test cube a check needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CubeRole {
    /// Contains the whole support, with faces well away from it.
    Whole,
    /// Cuts the support so that `2Q ∖ Q` carries mass. Its faces run through
    /// gaps of the construction at every level and it has no reflection
    /// symmetry, so odd kernels do not cancel on it.
    Cut,
}

fn candidates(role: CubeRole) -> Vec<Cube> {
    match role {
        CubeRole::Whole => vec![Cube::new(vec![0.5, 0.5], 0.625)],
        CubeRole::Cut => vec![Cube::new(vec![0.1875, -0.1875], 0.3125)],
    }
}

/// First candidate that is `(2, b)`-doubling with `t`-small boundary, with
/// its boundary ratio.
pub fn test_cube(cfg: &SuiteConfig, mu: &AtomicMeasure, role: CubeRole) -> Option<(Cube, f64)> {
    let b = cfg.doubling_constant();
    candidates(role).into_iter().find_map(|q| {
        let t = boundary_ratio(mu, &q);
        (mu.cube_mass(&q) > 0.0 && is_doubling(mu, &q, 2.0, b) && t <= cfg.t).then_some((q, t))
    })
}
