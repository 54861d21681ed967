use nhcz::decomposition::{cz_decompose, verify_cz, verify_whitney, whitney, CzOptions, OpenSet, WhitneyOptions};
use nhcz::dyadic::{surgery_partition, AccretiveSystem, CubeTree, DyadicGrid, Martingale, SurgeryInput, Testbed};
use nhcz::geometry::{generate, Generator};
use nhcz::kernels::{adjoint_kernel, AdjointSlot, OddModel, ScalarModel};
use nhcz::operators::{trilinear_form, Truncation};
use nhcz::{AtomicMeasure, Cube, Execution, C64};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_values(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
    (0..n).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
}

fn close(a: C64, b: C64, scale: f64, tol: f64) -> bool {
    (a - b).norm() <= tol * scale.max(1e-300)
}

struct Setup {
    mu: AtomicMeasure,
    tree: CubeTree,
    sys: AccretiveSystem,
}

/// Cantor measure on a random grid, with an accretive `b` close to 1.
fn setup(level: u32, seed: u64, unit: bool) -> Setup {
    let mu = generate(&Generator::Cantor4 { level }).unwrap();
    let tb = Testbed::new(Cube::from_corner(&[-0.5, -0.5], 2.0), 1.0).unwrap();
    let top = tb.top_level();
    let grid = DyadicGrid::from_seed(2, top, top + 2 * level as i32 + 4, seed).unwrap();
    let tree = CubeTree::build(&mu, &grid, &tb).unwrap();
    let sys = if unit {
        AccretiveSystem::unit(&mu)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let b: Vec<C64> = (0..mu.len()).map(|_| C64::from_polar(rng.gen_range(0.8..1.2), rng.gen_range(-0.3..0.3))).collect();
        AccretiveSystem::new(&tree, &mu, b, 0.5, 1.2).unwrap()
    };
    Setup { mu, tree, sys }
}

fn pairing(mu: &AtomicMeasure, f: &[C64], g: &[C64]) -> C64 {
    (0..mu.len()).map(|i| f[i] * g[i] * mu.weight(i).re).sum()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn martingale_reconstruction(seed in any::<u64>(), level in 2u32..=3, unit in any::<bool>()) {
        let s = setup(level, seed, unit);
        prop_assume!(s.tree.separated);
        let m = Martingale::new(&s.tree, &s.mu, &s.sys);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_values(&mut rng, s.mu.len());
        let r = m.reconstruct(&f);
        let scale = f.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for a in 0..s.mu.len() {
            if s.tree.covered(a) {
                prop_assert!(close(r[a], f[a], scale, 1e-10), "atom {a}: {} vs {}", r[a], f[a]);
            }
        }
    }

    #[test]
    fn martingale_orthogonality(seed in any::<u64>(), unit in any::<bool>()) {
        let s = setup(2, seed, unit);
        let m = Martingale::new(&s.tree, &s.mu, &s.sys);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_values(&mut rng, s.mu.len());
        let nodes = m.delta_nodes();
        let deltas: Vec<Vec<C64>> = nodes.iter().map(|&q| m.delta(q, &f).unwrap()).collect();
        let scale = deltas.iter().flatten().map(|v| v.norm()).fold(0.0, f64::max);
        for (qi, &q) in nodes.iter().enumerate() {
            for (ri, _) in nodes.iter().enumerate() {
                let twice = m.delta(q, &deltas[ri]).unwrap();
                for a in 0..s.mu.len() {
                    let want = if qi == ri { deltas[qi][a] } else { C64::new(0.0, 0.0) };
                    prop_assert!(close(twice[a], want, scale, 1e-10));
                }
            }
        }
    }

    #[test]
    fn martingale_duality(seed in any::<u64>(), level in 2u32..=3, unit in any::<bool>()) {
        let s = setup(level, seed, unit);
        let m = Martingale::new(&s.tree, &s.mu, &s.sys);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let f = random_values(&mut rng, s.mu.len());
        let g = random_values(&mut rng, s.mu.len());
        for q in m.delta_nodes() {
            let lhs = pairing(&s.mu, &m.delta(q, &f).unwrap(), &g);
            let rhs = pairing(&s.mu, &f, &m.delta_adjoint(q, &g).unwrap());
            prop_assert!(close(lhs, rhs, 1.0, 1e-12), "node {q}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn adjoint_trilinear_identity(seed in any::<u64>(), count in 3usize..24, odd in any::<bool>()) {
        let mu = generate(&Generator::Random { dim: 2, count, seed }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_values(&mut rng, count);
        let g = random_values(&mut rng, count);
        let h = random_values(&mut rng, count);
        let seq = Execution::Sequential;
        let none = Truncation::none();
        let check = |k: &dyn nhcz::kernels::Kernel| -> Result<(), TestCaseError> {
            let base = trilinear_form(k, &mu, &f, &g, &h, none, seq).unwrap();
            let a1 = adjoint_kernel(k, AdjointSlot::First);
            let a2 = adjoint_kernel(k, AdjointSlot::Second);
            let first = trilinear_form(&a1, &mu, &h, &g, &f, none, seq).unwrap();
            let second = trilinear_form(&a2, &mu, &f, &h, &g, none, seq).unwrap();
            prop_assert!(close(base, first, base.norm(), 1e-10), "{base} vs {first}");
            prop_assert!(close(base, second, base.norm(), 1e-10), "{base} vs {second}");
            Ok(())
        };
        if odd {
            check(&OddModel::new(2, 1.0))?;
        } else {
            check(&ScalarModel::new(2, 1.0))?;
        }
    }

    #[test]
    fn surgery_is_an_exact_partition(seed in any::<u64>(), theta in 0.05f64..0.6, pair in any::<bool>()) {
        let mu = generate(&Generator::Random { dim: 2, count: 200, seed }).unwrap();
        let grid = DyadicGrid::from_seed(2, -2, 34, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cube = |k: i32| {
            let side = 2f64.powi(-k);
            let lo = [rng.gen_range(0..(1 << k)) as f64 * side, rng.gen_range(0..(1 << k)) as f64 * side];
            Cube::from_corner(&lo, side)
        };
        let input = if pair {
            SurgeryInput::Pair { i: cube(0), k: cube(1) }
        } else {
            SurgeryInput::Triple { i: cube(0), j: cube(1), k: cube(1) }
        };
        let out = surgery_partition(&mu, &input, theta, &grid).unwrap();
        prop_assert!(out.exact);
        let cubes = match &input {
            SurgeryInput::Triple { i, j, k } => vec![i, j, k],
            SurgeryInput::Pair { i, k } => vec![i, k],
        };
        for (c, part) in cubes.iter().zip(&out.parts) {
            let mut seen = vec![0usize; mu.len()];
            for &a in part.separated.iter().chain(&part.boundary).chain(part.pieces.iter().flat_map(|p| &p.atoms)) {
                seen[a] += 1;
            }
            for a in 0..mu.len() {
                prop_assert_eq!(seen[a], usize::from(c.contains(mu.point(a))));
            }
        }
    }

    #[test]
    fn cz_mean_zero_bad_parts(seed in any::<u64>(), spikes in 1usize..4, factor in 1.5f64..6.0) {
        let mu = generate(&Generator::Uniform { dim: 2, count: 64 }).unwrap();
        let mut nu = mu.scale(0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..spikes {
            let p = [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)];
            nu.push(&p, C64::from_polar(rng.gen_range(0.2..1.0), rng.gen_range(0.0..std::f64::consts::TAU))).unwrap();
        }
        let lambda = factor * 8.0 * nu.total_variation() / mu.total_variation();
        let opts = CzOptions::new(1.0);
        let d = cz_decompose(&nu, &mu, lambda, &opts, Execution::Sequential).unwrap();
        let rep = verify_cz(&d, &nu, &mu, &opts);
        prop_assert!(rep.cd5_error <= 1e-10 && rep.bad_mass <= 1e-10, "{rep:?}");
        // Independent recomputation of ∫φ_i dμ = ∫w_i dν.
        for (i, r) in d.doubling.iter().enumerate() {
            let mu_r: f64 = (0..mu.len()).filter(|&a| r.contains(mu.point(a))).map(|a| mu.weight(a).re).sum();
            let w: C64 = (0..nu.len())
                .filter(|&a| d.cubes[i].contains(nu.point(a)))
                .map(|a| nu.weight(a) / d.cubes.iter().filter(|q| q.contains(nu.point(a))).count() as f64)
                .sum();
            prop_assert!(close(d.alpha[i] * mu_r, w, w.norm(), 1e-10));
        }
    }

    #[test]
    fn whitney_disjoint_and_massive(seed in any::<u64>(), boxes in 1usize..4) {
        let mu = generate(&Generator::Random { dim: 2, count: 300, seed }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cubes: Vec<Cube> = (0..boxes)
            .map(|_| Cube::new(vec![rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8)], rng.gen_range(0.05..0.3)))
            .collect();
        let om = OpenSet::new(2, cubes).unwrap();
        let cov = whitney(&om, &mu, &WhitneyOptions::default()).unwrap();
        let rep = verify_whitney(&cov, &om, &mu);
        prop_assert!(rep.overlapping_refined.is_empty());
        prop_assert!(rep.mass_ok, "{rep:?}");
        // Pairwise disjointness of the refined cubes, checked on the atoms.
        for a in 0..mu.len() {
            let hits = cov.refined.iter().filter(|(_, r)| r.contains(mu.point(a))).count();
            prop_assert!(hits <= 1);
        }
        let covered: f64 = (0..mu.len())
            .filter(|&a| cov.refined.iter().any(|(_, r)| r.contains(mu.point(a))))
            .map(|a| mu.weight(a).re)
            .sum();
        let inside: f64 = (0..mu.len()).filter(|&a| om.contains(mu.point(a))).map(|a| mu.weight(a).re).sum();
        prop_assert!(covered >= inside / (8.0 * cov.d0 as f64));
    }
}
