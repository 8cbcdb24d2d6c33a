mod common;

use common::{assignments, bit, random_formula};
use kdalign::rules::{compile_ddnnf, formula_to_cnf, model_count};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn cnf_and_ddnnf_agree_with_truth_tables() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let vars = rng.random_range(1..=8u32);
        let f = random_formula(&mut rng, vars, 4);
        let cnf = formula_to_cnf(&f).unwrap();
        let g = compile_ddnnf(&cnf).unwrap();
        let mut brute = 0u128;
        for bits in assignments(vars) {
            let a = |p| bit(bits, p);
            let truth = f.eval(&a);
            assert_eq!(cnf.eval(&a), truth, "CNF differs on {bits:b} for {f:?}");
            assert_eq!(g.eval(&a), truth, "d-DNNF differs on {bits:b} for {f:?}");
            brute += u128::from(truth);
        }
        assert_eq!(model_count(&g, vars as usize), brute);
        g.check_decomposable().unwrap();
        g.check_deterministic(8).unwrap();
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn compilation_is_deterministic(seed in 0u64..100_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_formula(&mut rng, 6, 4);
        let a = compile_ddnnf(&formula_to_cnf(&f).unwrap()).unwrap();
        let b = compile_ddnnf(&formula_to_cnf(&f).unwrap()).unwrap();
        prop_assert_eq!(a, b);
    }
}
