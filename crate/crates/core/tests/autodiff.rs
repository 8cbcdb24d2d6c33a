mod common;

use common::{primitive_grad_error, random_matrix, ALL_PRIMITIVES, FD_STEP};
use kdalign::autodiff::{grad_check, ParamSet, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn every_primitive_matches_finite_differences() {

    for p in ALL_PRIMITIVES {
        for seed in 0..100 {
            let err = primitive_grad_error(p, seed);
            assert!(err <= 1e-4, "{p:?} seed {seed}: relative error {err:e}");
        }
    }
}

#[test]
fn exp_log_chain_within_looser_tolerance() {
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (r, c) = (rng.random_range(1..5), rng.random_range(1..5));
        let mut ps = ParamSet::new();
        ps.insert("x", random_matrix(&mut rng, r, c, -1.5, 1.5)).unwrap();
        let report = grad_check(
            |t: &mut Tape, ps: &ParamSet| {
                // log-sum-exp per row followed by softplus
                let x = t.param(ps, "x")?;
                let e = t.exp(x)?;
                let s = t.row_sum(e)?;
                let l = t.log(s)?;
                let sp = t.softplus(l)?;
                t.mean(sp)
            },
            &ps,
            FD_STEP,
            1e-3,
        )
        .unwrap();
        assert!(report.passed, "seed {seed}: {:e}", report.max_error);
    }
}
