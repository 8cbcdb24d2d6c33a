use kdalign::acquisition::{acquire_rules, inject_noise, noisy_count, AcquireConfig, TreeConfig};
use kdalign::eval::{make_synthetic, SyntheticConfig};
use kdalign::rules::{match_rule, FeatureIndex, Rule};
use proptest::prelude::*;

fn dataset(seed: u64, dim: usize) -> kdalign::eval::TabularData {
    make_synthetic(&SyntheticConfig {
        dim,
        n_normal: 300,
        n_hidden: 30,
        n_rule: 30,
        seed,
        ..SyntheticConfig::default()
    })
    .unwrap()
}

fn matches(rule: &Rule, data: &kdalign::eval::TabularData) -> Vec<usize> {
    let fi = FeatureIndex::new(&data.features);
    (0..data.len()).filter(|&r| match_rule(rule, data.x.row(r), &fi).unwrap()).collect()
}

#[test]
fn extracted_rules_match_only_anomalies() {
    let mut total = 0;
    for seed in 0..20 {
        let data = dataset(seed, 2 + (seed as usize % 5));
        let cfg = AcquireConfig {
            tree: TreeConfig {
                seed,
                max_depth: 3 + (seed as usize % 3),
                ..TreeConfig::default()
            },
            ..AcquireConfig::default()
        };
        let (rules, prov, _) = acquire_rules(&data.x, &data.y, &data.features, &cfg).unwrap();
        assert!(!rules.is_empty(), "seed {seed}: the rule cluster should yield a path");
        for (rule, p) in rules.iter().zip(&prov) {
            let hit = matches(rule, &data);
            assert!(!hit.is_empty());
            assert!(hit.iter().all(|&r| data.y[r] == 1), "seed {seed}: {} matches a normal", rule.render());
            assert_eq!(hit.len(), p.support);
        }
        total += rules.len();
    }
    assert!(total >= 20);
}

#[test]
fn acquisition_is_reproducible() {
    let data = dataset(3, 4);
    let cfg = AcquireConfig::default();
    let a = acquire_rules(&data.x, &data.y, &data.features, &cfg).unwrap();
    let b = acquire_rules(&data.x, &data.y, &data.features, &cfg).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
}

#[test]
fn rendered_rules_are_unique() {
    let data = dataset(5, 3);
    let (rules, _, _) = acquire_rules(&data.x, &data.y, &data.features, &AcquireConfig::default()).unwrap();
    let mut bodies: Vec<String> = rules
        .iter()
        .map(|r| r.render().split_once(" THEN").unwrap().0.to_string())
        .collect();
    let n = bodies.len();
    bodies.sort();
    bodies.dedup();
    assert_eq!(bodies.len(), n);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn noise_touches_exactly_the_requested_rules(seed in 0u64..1000, ratio in 0.0f64..=1.0) {
        let data = dataset(seed % 7, 3);
        let (rules, _, _) = acquire_rules(&data.x, &data.y, &data.features, &AcquireConfig::default()).unwrap();
        let (noisy, report) = inject_noise(&rules, ratio, seed, &data.x, &data.y, &data.features).unwrap();
        prop_assert_eq!(noisy.len(), rules.len());
        prop_assert_eq!(report.modified.len(), noisy_count(ratio, rules.len()));
        for i in 0..rules.len() {
            if report.modified.contains(&i) {
                prop_assert_eq!(&noisy[i].id, &rules[i].id);
            } else {
                prop_assert_eq!(&noisy[i], &rules[i]);
            }
        }
        for (k, &i) in report.modified.iter().enumerate() {
            let normals = matches(&noisy[i], &data).into_iter().filter(|&r| data.y[r] == 0).count();
            prop_assert_eq!(normals, report.normal_matches[k]);
            prop_assert!(normals > 0, "{} matches no normal sample", noisy[i].render());
        }
        let again = inject_noise(&rules, ratio, seed, &data.x, &data.y, &data.features).unwrap();
        prop_assert_eq!(again.0, noisy);
    }
}
