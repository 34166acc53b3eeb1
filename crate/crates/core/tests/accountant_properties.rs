use dpwfl_core::accountant::*;
use dpwfl_core::HyperParams;
use proptest::prelude::*;

fn params() -> impl Strategy<Value = HyperParams> {
    (
        1usize..40,
        0.05f64..=1.0,
        0.05f64..=1.0,
        0.2f64..5.0,
        0.05f64..3.0,
        0.1f64..3.0,
        0.01f64..0.5,
        0.5f64..50.0,
        -10.0f64..-1.0,
    )
        .prop_map(|(n, p, q, c, d, l, eta, sigma, log_delta)| HyperParams {
            devices: n,
            device_rate: p,
            batch_rate: q,
            clip_norm: c,
            diameter: d,
            smoothness: l,
            step_size: eta,
            noise_std: sigma,
            delta: 10f64.powf(log_delta),
            ..Default::default()
        })
}

fn schedule() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.1f64..3.0, 1..300)
}

proptest! {
    #[test]
    fn non_decreasing_in_rounds(p in params(), g in schedule(), extra in 0.1f64..3.0) {
        // Appending a round with gamma >= last keeps Phi from shrinking.
        let last = *g.last().unwrap();
        let next = extra.max(last);
        let before = PrivacyLedger::from_gammas(g.clone()).unwrap();
        let mut after = before.clone();
        after.push(next).unwrap();
        prop_assert!(after.gamma_sq_sum() >= before.gamma_sq_sum());
        prop_assert!(rdp_epsilon(&p, &after, 2.0).unwrap() >= rdp_epsilon(&p, &before, 2.0).unwrap());
    }

    #[test]
    fn constant_schedule_saturates(p in params(), gamma in 0.1f64..3.0, beyond in 0usize..200) {
        let cross = crossover_round(&p, gamma).unwrap() as usize;
        prop_assume!(cross < 20_000);
        let at = PrivacyLedger::constant(gamma, cross).unwrap();
        let later = PrivacyLedger::constant(gamma, cross + beyond).unwrap();
        let e_at = rdp_epsilon(&p, &at, 3.0).unwrap();
        let e_later = rdp_epsilon(&p, &later, 3.0).unwrap();
        prop_assert_eq!(e_at, e_later);
        let saturated = 3.0 * 2.0 * p.device_rate * p.batch_rate * p.clip_norm.powi(2)
            / p.noise_std.powi(2) * phi(&p, gamma).unwrap();
        prop_assert!((e_at - saturated).abs() <= 1e-12 * saturated);
    }

    #[test]
    fn monotone_in_parameters(p in params(), g in schedule(), alpha in 1.01f64..50.0, bump in 1.0f64..2.0) {
        let ledger = PrivacyLedger::from_gammas(g).unwrap();
        let base = rdp_epsilon(&p, &ledger, alpha).unwrap();
        let up = |q: HyperParams| rdp_epsilon(&q, &ledger, alpha).unwrap();
        let more_devices = up(HyperParams { device_rate: (p.device_rate * bump).min(1.0), ..p.clone() });
        let more_batch = up(HyperParams { batch_rate: (p.batch_rate * bump).min(1.0), ..p.clone() });
        let more_clip = up(HyperParams { clip_norm: p.clip_norm * bump, ..p.clone() });
        let louder = HyperParams { noise_std: p.noise_std * bump, ..p.clone() };
        prop_assert!(more_devices >= base);
        prop_assert!(more_batch >= base);
        prop_assert!(more_clip >= base * (1.0 - 1e-12));
        prop_assert!(up(louder.clone()) <= base);
        prop_assert!(rdp_epsilon(&p, &ledger, alpha * bump).unwrap() >= base);
        let dp = dp_epsilon(&p, &ledger).unwrap();
        prop_assert!(dp_epsilon(&louder, &ledger).unwrap() <= dp);
    }

    #[test]
    fn homogeneous_of_degree_two(p in params(), g in schedule(), lambda in 0.1f64..5.0) {
        let ledger = PrivacyLedger::from_gammas(g.clone()).unwrap();
        let scaled = PrivacyLedger::from_gammas(g.iter().map(|x| x * lambda)).unwrap();
        let gt = ledger.gamma_total(&p).unwrap();
        let gs = scaled.gamma_total(&p).unwrap();
        prop_assert!((gs - lambda * lambda * gt).abs() <= 1e-12 * gs.max(1.0) * 10.0);
        let e = rdp_epsilon(&p, &ledger, 2.0).unwrap();
        let es = rdp_epsilon(&p, &scaled, 2.0).unwrap();
        prop_assert!((es - lambda * lambda * e).abs() <= 1e-11 * es.max(1e-300));
    }

    #[test]
    fn ledger_sum_matches_squares(g in schedule()) {
        let ledger = PrivacyLedger::from_gammas(g.clone()).unwrap();
        let direct: f64 = g.iter().map(|x| x * x).sum();
        prop_assert!((ledger.gamma_sq_sum() - direct).abs() <= 1e-12 * direct);
    }

    #[test]
    fn optimal_alpha_reproduces_closed_form(p in params(), g in schedule()) {
        let ledger = PrivacyLedger::from_gammas(g).unwrap();
        let a = optimal_alpha(&p, &ledger).unwrap();
        let via = rdp_to_dp(rdp_epsilon(&p, &ledger, a).unwrap(), a, p.delta).unwrap();
        let closed = dp_epsilon(&p, &ledger).unwrap();
        prop_assert!((via - closed).abs() <= 1e-9 * closed);
    }

    #[test]
    fn baseline_dominates(p in params(), g in schedule(), alpha in 1.01f64..50.0) {
        let ledger = PrivacyLedger::from_gammas(g).unwrap();
        prop_assert!(baseline_composition_epsilon(&p, &ledger, alpha).unwrap() >= rdp_epsilon(&p, &ledger, alpha).unwrap());
        prop_assert!(baseline_composition_dp(&p, &ledger).unwrap() >= dp_epsilon(&p, &ledger).unwrap());
    }
}
