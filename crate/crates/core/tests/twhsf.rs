use std::collections::BTreeMap;

use horizon_core::kernel::tv;
use horizon_core::seed;
use horizon_core::twhsf::*;
use proptest::prelude::*;

fn params(l: usize, a: u32, eps: f64, alphabet: u32) -> TwHsfParams {
    TwHsfParams {
        alias_epsilon: eps,
        observation_alphabet_size: alphabet,
        ..TwHsfParams::unstructured(l, a)
    }
}

fn all_sequences(a: u32, l: usize) -> Vec<Vec<u32>> {
    let mut out = vec![vec![]];
    for _ in 0..l {
        out = out
            .into_iter()
            .flat_map(|s| {
                (0..a).map(move |x| {
                    let mut s = s.clone();
                    s.push(x);
                    s
                })
            })
            .collect();
    }
    out
}

#[test]
fn exactly_one_sequence_succeeds() {
    for (a, l) in [(2, 2), (3, 6), (4, 5)] {
        let inst = generate_instance(&params(l, a, 0.2, 3), 99).unwrap();
        let mut rng = seed::stream(1, "test", 0);
        let wins = all_sequences(a, l)
            .iter()
            .filter(|s| inst.run_sequence(s, &mut rng).unwrap() == 1)
            .count();
        assert_eq!(wins, 1, "|A| = {a}, L = {l}");
    }
}

#[test]
fn h_max_law_under_half_omission() {
    // all four keep/drop patterns of the two internal boundaries
    let mut exact: BTreeMap<usize, f64> = BTreeMap::new();
    for pattern in 0..4u8 {
        let dropped = [pattern & 1 == 1, pattern & 2 == 2];
        let merged = merge_segments(&[2, 2, 2], &dropped);
        *exact.entry(*merged.iter().max().unwrap()).or_default() += 0.25;
    }
    assert_eq!(exact, BTreeMap::from([(2, 0.25), (4, 0.5), (6, 0.25)]));

    let mut p = params(6, 2, 0.0, 2);
    p.landmarks = Some(vec![2, 2, 2]);
    p.landmark_drop_prob = 0.5;
    let n = 8000;
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for s in 0..n {
        *counts.entry(generate_instance(&p, s).unwrap().h_max()).or_default() += 1;
    }
    for (h, prob) in exact {
        let freq = counts[&h] as f64 / n as f64;
        let se = (prob * (1.0 - prob) / n as f64).sqrt();
        assert!((freq - prob).abs() < 4.0 * se, "h_max {h}: {freq} vs {prob}");
    }
}

#[test]
fn identical_seed_gives_identical_instance_and_replays() {
    let mut p = params(8, 3, 0.1, 5);
    p.landmarks = Some(vec![3, 3, 2]);
    p.landmark_drop_prob = 0.4;
    let a = generate_instance(&p, 17).unwrap();
    let b = generate_instance(&p, 17).unwrap();
    assert_eq!(a, b);
    let json = serde_json::to_string(&a.record()).unwrap();
    let record: InstanceRecord = serde_json::from_str(&json).unwrap();
    assert_eq!(TwHsfInstance::replay(&record).unwrap(), a);

    let mut forged = record.clone();
    forged.optimal_path[0] = (forged.optimal_path[0] + 1) % 3;
    assert!(TwHsfInstance::replay(&forged).is_err());
}

#[test]
fn path_does_not_depend_on_landmark_settings() {
    let plain = generate_instance(&params(6, 3, 0.1, 3), 5).unwrap();
    let mut p = params(6, 3, 0.1, 3);
    p.landmarks = Some(vec![2, 2, 2]);
    p.landmark_drop_prob = 0.5;
    let marked = generate_instance(&p, 5).unwrap();
    assert_eq!(plain.record().optimal_path, marked.record().optimal_path);
}

// Product-law enumeration written independently of the library.
fn product_tv(p: &[Vec<f64>], q: &[Vec<f64>]) -> f64 {
    fn walk(p: &[Vec<f64>], q: &[Vec<f64>], pp: f64, qq: f64) -> f64 {
        match (p.split_first(), q.split_first()) {
            (Some((ph, pt)), Some((qh, qt))) => {
                (0..ph.len()).map(|i| walk(pt, qt, pp * ph[i], qq * qh[i])).sum()
            }
            _ => (pp - qq).abs(),
        }
    }
    0.5 * walk(p, q, 1.0, 1.0)
}

#[test]
fn history_tv_small_case_matches_enumeration_and_bound() {
    let inst = generate_instance(&params(6, 2, 0.1, 3), 3).unwrap();
    let got = history_distribution_tv(&inst, &UniformRule, 2, 4, TvMethod::Exact).unwrap();
    let laws = inst.observation_laws();
    let oracle = product_tv(&laws[0..2], &laws[2..4]);
    assert!((got.tv - oracle).abs() < 1e-12);
    assert!(got.tv <= 0.2 + 1e-12);
    assert_eq!(got.window, 2);
}

#[test]
fn monte_carlo_history_tv_covers_exact_value() {
    let inst = generate_instance(&params(10, 2, 0.3, 3), 8).unwrap();
    let exact = history_distribution_tv(&inst, &UniformRule, 4, 7, TvMethod::Exact).unwrap().tv;
    let mc = history_distribution_tv(
        &inst,
        &UniformRule,
        4,
        7,
        TvMethod::MonteCarlo { samples: 200_000, seed: 2 },
    )
    .unwrap();
    let (lo, hi) = mc.ci.unwrap();
    assert!(lo <= exact && exact <= hi, "{exact} outside [{lo}, {hi}]");
}

#[test]
fn success_probability_is_reciprocal_power() {
    for a in 2..6u32 {
        for l in 1..8u32 {
            let p = success_probability(a, l).unwrap();
            assert_eq!(p.denominator, Some((a as u128).pow(l)));
            assert!((p.value() * (a as f64).powi(l as i32) - 1.0).abs() < 1e-12);
        }
    }
}

proptest! {
    #[test]
    fn observation_laws_are_within_epsilon_of_base(seed in any::<u64>(), eps in 0.0f64..0.99, alphabet in 2u32..8, l in 1usize..20) {
        let inst = generate_instance(&params(l, 2, eps, alphabet), seed).unwrap();
        for law in inst.observation_laws() {
            prop_assert!(tv(law, inst.base_distribution()).unwrap() <= eps + 1e-12);
        }
    }

    #[test]
    fn history_tv_grows_at_most_linearly(seed in any::<u64>(), eps in 0.0f64..0.5, t in 1usize..6, t2 in 1usize..6) {
        let inst = generate_instance(&params(8, 2, eps, 3), seed).unwrap();
        let got = history_distribution_tv(&inst, &UniformRule, t, t2, TvMethod::Exact).unwrap();
        prop_assert!(got.tv <= eps * t.min(t2) as f64 + 1e-12);
    }

    #[test]
    fn failure_is_absorbing(seed in any::<u64>(), actions in prop::collection::vec(0u32..3, 1..10)) {
        let inst = generate_instance(&params(10, 3, 0.1, 3), seed).unwrap();
        let mut rng = seed::stream(seed, "prop", 0);
        let (mut state, _) = inst.reset(&mut rng, true);
        for a in actions {
            match inst.step(&mut state, a, &mut rng) {
                Ok(out) if out.done => {
                    prop_assert_eq!(state.status, Status::Failed);
                    prop_assert!(inst.step(&mut state, 0, &mut rng).is_err());
                    break;
                }
                Ok(_) => prop_assert_eq!(state.status, Status::OnPath),
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }
    }
}
