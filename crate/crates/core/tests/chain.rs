use horizon_core::chain::*;
use horizon_core::stats::{least_squares, mean, sign_test_p};
use proptest::prelude::*;

/// Mean absorption time at `L` from 0 for the reflecting walk, by solving
/// `(I - Q) t = 1` with Gaussian elimination.
fn hitting_time(l: usize, forward: f64) -> f64 {
    let n = l;
    let mut a = vec![vec![0.0; n + 1]; n];
    for i in 0..n {
        a[i][i] += 1.0;
        if i + 1 < n {
            a[i][i + 1] -= forward;
        }
        a[i][i.saturating_sub(1)] -= 1.0 - forward;
        a[i][n] = 1.0;
    }
    for c in 0..n {
        let piv = (c..n).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
        a.swap(c, piv);
        for r in 0..n {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..=n {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
    }
    a[0][n] / a[0][0]
}

#[test]
fn fair_walk_hitting_time() {
    let oracle = hitting_time(5, 0.5);
    assert!((oracle - 30.0).abs() < 1e-9);
    let mut cfg = ChainConfig::new(5, 0.5, 0.0, 20_000, 3);
    cfg.max_steps = Some(100_000);
    let results = run_trials(&cfg).unwrap();
    assert!(results.iter().all(|r| r.success));
    let steps: Vec<f64> = results.iter().map(|r| r.steps_taken as f64).collect();
    // variance of this hitting time is below 2000; se below 0.32
    assert!((mean(&steps) - oracle).abs() < 1.5, "mean {}", mean(&steps));
}

#[test]
fn full_trap_never_succeeds_beyond_one_step() {
    for l in 2..6 {
        for noise in [0.0, 0.1, 0.5] {
            let cfg = ChainConfig::new(l, noise, 1.0, 200, 1);
            assert_eq!(exact_success_probability(&cfg).unwrap(), 0.0);
            assert_eq!(success_rate(&cfg).unwrap().successes, 0);
        }
    }
}

#[test]
fn exact_and_monte_carlo_agree_on_small_chains() {
    for l in [1usize, 3, 5] {
        for (noise, sticky) in [(0.2, 0.3), (0.4, 0.1)] {
            for reset in [None, Some(2)] {
                for order in [NoiseOrder::StickyFirst, NoiseOrder::NoiseFirst] {
                    let mut cfg = ChainConfig::new(l, noise, sticky, 20_000, 9);
                    cfg.reset_period = reset;
                    cfg.order = order;
                    cfg.max_steps = Some(3 * l + 4);
                    let p = exact_success_probability(&cfg).unwrap();
                    let rate = success_rate(&cfg).unwrap();
                    let band = 3.3 * (p * (1.0 - p) / 20_000.0).sqrt() + 1e-9;
                    assert!((rate.rate - p).abs() <= band, "{cfg:?}: mc {} vs exact {p}", rate.rate);
                }
            }
        }
    }
}

/// Uniforms that make the trap fire (bit 0) and the noise fire (bit 1) for
/// `sticky_p = policy_noise = 0.5`.
fn draws(events: &[u8]) -> impl FnMut() -> (f64, f64) + '_ {
    let mut i = 0;
    move || {
        let e = events.get(i).copied().unwrap_or(0);
        i += 1;
        (if e & 1 != 0 { 0.25 } else { 0.75 }, if e & 2 != 0 { 0.25 } else { 0.75 })
    }
}

#[test]
fn reset_never_turns_success_into_failure_when_it_cancels_an_inversion() {
    let mut checked = 0u64;
    for l in 1..=4 {
        for k in 1..=4 {
            let steps = 9;
            let mut base_cfg = ChainConfig::new(l, 0.5, 0.5, 1, 0);
            base_cfg.max_steps = Some(steps);
            let reset_cfg = ChainConfig { reset_period: Some(k), ..base_cfg.clone() };
            for code in 0..(1u32 << (2 * steps)) {
                let events: Vec<u8> = (0..steps).map(|i| ((code >> (2 * i)) & 3) as u8).collect();
                let base = run_with_draws(&base_cfg, draws(&events), true);
                let positions = base.positions.as_ref().unwrap();
                // At every reset step where the trap fires, the baseline's
                // register must hold "forward" (the inversion would hurt).
                let proviso = (1..base.steps_taken).all(|s| {
                    !(reset_cfg.resets_before(s) && events[s] & 1 != 0)
                        || positions[s] > positions[s - 1]
                });
                if !proviso {
                    continue;
                }
                let reset = run_with_draws(&reset_cfg, draws(&events), false);
                assert!(!base.success || reset.success, "L {l} K {k} events {events:?}");
                checked += 1;
            }
        }
    }
    assert!(checked > 100_000);
}

#[test]
fn paired_resets_help() {
    for sticky in [0.1, 0.2, 0.4] {
        let (mut wins, mut losses) = (0, 0);
        for sweep in 0..10u64 {
            let mut cfg = ChainConfig::new(20, 0.1, sticky, 1000, 100 + sweep);
            cfg.max_steps = Some(40);
            let base = success_rate(&cfg).unwrap().rate;
            cfg.reset_period = Some(5);
            let reset = success_rate(&cfg).unwrap().rate;
            if reset > base {
                wins += 1;
            } else if reset < base {
                losses += 1;
            }
        }
        assert!(sign_test_p(wins, losses) < 0.05, "sticky {sticky}: {wins} wins, {losses} losses");
    }
}

#[test]
fn profile_is_non_increasing_at_matched_seeds() {
    let mut cfg = ChainConfig::new(1, 0.2, 0.3, 2000, 5);
    cfg.max_steps = Some(60);
    let profile = collapse_profile(&cfg, &[2, 4, 6, 8, 10, 12, 14]).unwrap();
    for w in profile.points.windows(2) {
        assert!(w[1].rate.successes <= w[0].rate.successes);
        assert!(w[1].exact <= w[0].exact + 1e-12);
    }
}

#[test]
fn tight_budget_decays_exponentially_in_length() {
    let cfg = ChainConfig::new(1, 0.3, 0.2, 10, 0);
    let lengths: Vec<usize> = (2..=14).collect();
    let logs: Vec<f64> = lengths
        .iter()
        .map(|&l| {
            let c = ChainConfig { length: l, max_steps: Some(l + 4), ..cfg.clone() };
            exact_success_probability(&c).unwrap().ln()
        })
        .collect();
    let xs: Vec<f64> = lengths.iter().map(|&l| l as f64).collect();
    let fit = least_squares(&xs, &logs).unwrap();
    assert!(fit.r_squared >= 0.9, "r2 {}", fit.r_squared);
    assert!(fit.slope < 0.0);
}

#[test]
fn noiseless_profile_is_flat() {
    let cfg = ChainConfig::new(1, 0.0, 0.0, 50, 0);
    let profile = collapse_profile(&cfg, &[1, 5, 25]).unwrap();
    assert!(profile.points.iter().all(|p| p.rate.rate == 1.0 && p.exact == 1.0));
    assert_eq!(profile.critical_length, None);
}

proptest! {
    #[test]
    fn position_stays_in_range(seed in any::<u64>(), noise in 0.0f64..=1.0, sticky in 0.0f64..=1.0, l in 1usize..10) {
        let cfg = ChainConfig::new(l, noise, sticky, 1, seed);
        let r = run_chain_episode(&cfg, &mut cfg.episode_rng(0), true);
        let positions = r.positions.unwrap();
        prop_assert!(positions.iter().all(|&p| p <= l));
        for w in positions.windows(2) {
            prop_assert!(w[1].abs_diff(w[0]) <= 1);
        }
        prop_assert_eq!(r.success, *positions.last().unwrap() == l);
        prop_assert!(r.steps_taken <= cfg.step_budget());
    }
}
