use kdalign::autodiff::{grad_check, Matrix, ParamSet, Tape};
use kdalign::encoder::{
    bce_loss, bce_with_logits, deviation_loss, deviation_loss_tape, encode, encode_tape,
    head_tape, init_encoder, init_head, score, EncoderSpec, HeadOutput, HeadSpec, Mode, Prior,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-2.0..2.0))
}

fn model(resnet: bool, seed: u64) -> (EncoderSpec, HeadSpec, ParamSet) {
    let spec = if resnet {
        EncoderSpec::resnet(4, 3, 2, 5)
    } else {
        EncoderSpec::mlp(4, vec![6], 3)
    };
    let head = HeadSpec {
        hidden: vec![4],
        output: HeadOutput::Sigmoid,
    };
    let mut ps = init_encoder(&spec, seed).unwrap();
    ps.extend(init_head(&head, 3, seed + 1).unwrap()).unwrap();
    // Nonzero biases so their gradients are exercised.
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
    let names: Vec<String> = ps.names().map(str::to_string).collect();
    for n in names.iter().filter(|n| n.ends_with("/b")) {
        let m = ps.get_mut(n).unwrap();
        *m = Matrix::from_fn(1, m.cols(), |_, _| rng.random_range(-0.5..0.5));
    }
    (spec, head, ps)
}

#[test]
fn loss_gradients_pass_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = random_matrix(&mut rng, 6, 4);
    let y = [1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
    let prior = Prior { mean: 0.05, std: 1.1 };
    for resnet in [false, true] {
        let (spec, head, ps) = model(resnet, 3);
        let bce = grad_check(
            |t, ps| {
                let xv = t.constant(x.clone());
                let e = encode_tape(t, xv, &spec, ps, Mode::Eval)?;
                let z = head_tape(t, e, &head, ps)?;
                bce_with_logits(t, z, &y)
            },
            &ps,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(bce.passed, "{bce:?}");
        let dev = grad_check(
            |t, ps| {
                let xv = t.constant(x.clone());
                let e = encode_tape(t, xv, &spec, ps, Mode::Eval)?;
                let z = head_tape(t, e, &head, ps)?;
                deviation_loss_tape(t, z, &y, prior, 5.0)
            },
            &ps,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(dev.passed, "{dev:?}");
    }
}

#[test]
fn losses_match_scalar_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let m = rng.random_range(1..20);
        let z: Vec<f64> = (0..m).map(|_| rng.random_range(-6.0..6.0)).collect();
        let y: Vec<f64> = (0..m).map(|_| f64::from(rng.random_bool(0.3))).collect();
        let p: Vec<f64> = z.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
        let mut oracle = 0.0;
        for i in 0..m {
            oracle -= y[i] * p[i].ln() + (1.0 - y[i]) * (1.0 - p[i]).ln();
        }
        oracle /= m as f64;
        assert!((bce_loss(&p, &y) - oracle).abs() < 1e-12);
        let mut t = Tape::new();
        let zv = t.constant(Matrix::column(&z));
        let l = bce_with_logits(&mut t, zv, &y).unwrap();
        assert!((t.value(l).item() - oracle).abs() < 1e-12);

        let prior = Prior { mean: rng.random_range(-0.1..0.1), std: rng.random_range(0.9..1.1) };
        let mut dev_oracle = 0.0;
        for i in 0..m {
            let d = (z[i] - prior.mean) / prior.std;
            dev_oracle += if y[i] == 1.0 { (5.0 - d).max(0.0) } else { d.abs() };
        }
        dev_oracle /= m as f64;
        assert!((deviation_loss(&z, &y, prior, 5.0) - dev_oracle).abs() < 1e-12);
        let mut t = Tape::new();
        let zv = t.constant(Matrix::column(&z));
        let l = deviation_loss_tape(&mut t, zv, &y, prior, 5.0).unwrap();
        assert!((t.value(l).item() - dev_oracle).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn rows_are_processed_independently(seed in 0u64..500, resnet: bool) {
        let (spec, head, ps) = model(resnet, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_matrix(&mut rng, 7, 4);
        let mut perm: Vec<usize> = (0..7).collect();
        for i in (1..7).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let e = encode(&x, &spec, &ps, Mode::Eval).unwrap();
        let s = score(&e, &head, &ps).unwrap();
        let xp = x.select_rows(&perm);
        let ep = encode(&xp, &spec, &ps, Mode::Eval).unwrap();
        let sp = score(&ep, &head, &ps).unwrap();
        prop_assert!(ep.bit_eq(&e.select_rows(&perm)));
        for (k, &i) in perm.iter().enumerate() {
            prop_assert_eq!(sp[k].to_bits(), s[i].to_bits());
        }
        // Perturbing one row leaves every other score untouched.
        let mut x2 = x.clone();
        x2.set(3, 1, x2.get(3, 1) + 0.7);
        let s2 = score(&encode(&x2, &spec, &ps, Mode::Eval).unwrap(), &head, &ps).unwrap();
        for i in (0..7).filter(|&i| i != 3) {
            prop_assert_eq!(s2[i].to_bits(), s[i].to_bits());
        }
        prop_assert!(s.iter().all(|v| *v > 0.0 && *v < 1.0));
    }
}
