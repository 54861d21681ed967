use nhcz::geometry::{dist, generate, Generator};
use nhcz::kernels::{Kernel, OddModel, ScalarModel};
use nhcz::operators::{trilinear_form, value_from_profile, Bilinear, Truncation, TruncationMode};
use nhcz::square_function::{bv, ScaleQuadrature, ShippedFamily};
use nhcz::{AtomicMeasure, Execution, C64};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_values(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
    (0..n).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
        return left + right + (left + right - whole) / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    simpson(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 50)
}

/// `(∫_{t_min}^∞ |θ_t|² dt/t)^{1/2}` for `ν₁ = w δ_y`, `ν₂ = v δ_z`, in `u = log t`,
/// with the `t^{−4m}` tail past `10⁶` added in closed form.
fn bv_oracle(x: &[f64], y: &[f64], z: &[f64], w: f64, v: f64, m: f64, alpha: f64, t_min: f64) -> f64 {
    let (a, b) = (dist(x, y), dist(x, z));
    let e = m + alpha;
    let theta = |t: f64| w * v * t.powf(2.0 * alpha) / ((t + a).powf(e) * (t + b).powf(e));
    let top: f64 = 1e6;
    let body = adaptive(&|u: f64| theta(u.exp()).powi(2), t_min.ln(), top.ln(), 1e-14);
    let tail = theta(top).powi(2) / (4.0 * m);
    (body + tail).sqrt()
}

fn delta_at(p: &[f64], w: f64) -> AtomicMeasure {
    AtomicMeasure::from_real(p.len(), 1e-4, &[(p, w)]).unwrap()
}

#[test]
fn single_pair_square_function_matches_adaptive_quadrature() {
    let fam = ShippedFamily::new(1, 1.0, 1.0);
    for t_min in [1e-3, 1e-2, 0.1] {
        let q = ScaleQuadrature::new(t_min);
        let got = bv(&fam, &delta_at(&[1.0], 1.0), &delta_at(&[2.0], 1.0), &[0.0], &q).unwrap();
        let want = bv_oracle(&[0.0], &[1.0], &[2.0], 1.0, 1.0, 1.0, 1.0, t_min);
        assert!((got - want).abs() <= 0.01 * want, "t_min {t_min}: {got} vs {want}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn random_pairs_match_adaptive_quadrature(
        y in prop::collection::vec(-2.0f64..2.0, 2),
        z in prop::collection::vec(-2.0f64..2.0, 2),
        w in 0.1f64..2.0,
        v in 0.1f64..2.0,
        alpha in 0.3f64..1.0,
        m in 1.0f64..2.0,
    ) {
        let x = [0.1, -0.2];
        prop_assume!(dist(&x, &y) > 1e-3 || dist(&x, &z) > 1e-3);
        let fam = ShippedFamily::new(2, m, alpha);
        let q = ScaleQuadrature::new(1e-3);
        let got = bv(&fam, &delta_at(&y, w), &delta_at(&z, v), &x, &q).unwrap();
        let want = bv_oracle(&x, &y, &z, w, v, m, alpha, 1e-3);
        prop_assert!((got - want).abs() <= 0.01 * want, "{got} vs {want}");
        let fine = bv(&fam, &delta_at(&y, w), &delta_at(&z, v), &x, &q.with_density(32)).unwrap();
        prop_assert!((got - fine).abs() <= 0.01 * fine);
    }

    #[test]
    fn grid_values_bit_identical_on_shared_eps(seed in any::<u64>(), count in 2usize..40, extra in prop::collection::vec(0.0f64..2.0, 0..20)) {
        let mu = generate(&Generator::Random { dim: 2, count, seed }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_values(&mut rng, count);
        let g = random_values(&mut rng, count);
        let nu1 = mu.times(&f).unwrap();
        let nu2 = mu.times(&g).unwrap();
        let k = OddModel::new(2, 1.0);
        let b = Bilinear::new(&k, &nu1, &nu2).unwrap();
        for mode in [TruncationMode::Max, TruncationMode::Ball] {
            for x in mu.points().take(6) {
                let prof = b.profile(x, mode);
                let mut grid: Vec<f64> = prof.iter().map(|p| p.0).chain(extra.iter().copied()).collect();
                grid.sort_by(|a, b| a.total_cmp(b));
                grid.dedup();
                let vals = b.on_grid(x, &grid, mode);
                for (e, v) in grid.iter().zip(&vals) {
                    let want = value_from_profile(&prof, *e);
                    prop_assert!(v.re.to_bits() == want.re.to_bits() && v.im.to_bits() == want.im.to_bits(), "eps {e}: {v} vs {want}");
                }
            }
        }
    }

    #[test]
    fn trilinear_matches_triple_loop(seed in any::<u64>(), count in 1usize..=50, eps in 0.0f64..0.8, odd in any::<bool>()) {
        let mu = generate(&Generator::Random { dim: 2, count, seed }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_values(&mut rng, count);
        let g = random_values(&mut rng, count);
        let h = random_values(&mut rng, count);
        let scalar = ScalarModel::new(2, 1.0);
        let oddk = OddModel::new(2, 1.0);
        let k: &dyn Kernel = if odd { &oddk } else { &scalar };
        let got = trilinear_form(k, &mu, &f, &g, &h, Truncation::max(eps), Execution::Sequential).unwrap();
        let mut want = C64::new(0.0, 0.0);
        let mut size = 0.0;
        for i in 0..count {
            let x = mu.point(i);
            for j in 0..count {
                for l in 0..count {
                    let (y, z) = (mu.point(j), mu.point(l));
                    if dist(x, y).max(dist(x, z)) <= eps || (x == y && x == z) {
                        continue;
                    }
                    let term = h[i] * mu.weight(i) * k.eval(x, y, z).unwrap() * f[j] * mu.weight(j) * g[l] * mu.weight(l);
                    want += term;
                    size += term.norm();
                }
            }
        }
        prop_assert!((got - want).norm() <= 1e-12 * size.max(1e-300), "{got} vs {want}");
    }
}
