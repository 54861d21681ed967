use nhcz::dyadic::bad_probability_mc;
use nhcz::geometry::{generate, Generator};
use nhcz::kernels::OddModel;
use nhcz::maximal::{maximal_at, Integrand, MaximalKind, MaximalSpec};
use nhcz::operators::{atoms_of, maximal_truncation_at};
use nhcz::Execution;

#[test]
fn parallel_and_sequential_agree_bitwise() {
    let mu = generate(&Generator::Cantor4 { level: 3 }).unwrap();
    let xs = atoms_of(&mu);
    let k = OddModel::new(2, 1.0);
    let a = maximal_truncation_at(&k, &mu, &mu, &xs, 0.0, Execution::Sequential).unwrap();
    let b = maximal_truncation_at(&k, &mu, &mu, &xs, 0.0, Execution::Parallel).unwrap();
    assert!(a.iter().zip(&b).all(|(u, v)| u.to_bits() == v.to_bits()));

    let spec = MaximalSpec::new(MaximalKind::NoncenteredFive);
    let a = maximal_at(&mu, Integrand::Measure(&mu), &xs, &spec, Execution::Sequential).unwrap();
    let b = maximal_at(&mu, Integrand::Measure(&mu), &xs, &spec, Execution::Parallel).unwrap();
    assert_eq!(a, b);

    let a = bad_probability_mc(2, 0.5, 4, 500, 9, 10, Execution::Sequential).unwrap();
    let b = bad_probability_mc(2, 0.5, 4, 500, 9, 10, Execution::Parallel).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}
