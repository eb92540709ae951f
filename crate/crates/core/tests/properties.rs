use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tspg_core::env::write_dense_matrix;
use tspg_core::oracle::exact_marginals;
use tspg_core::{
    grpo_normalize, load_dense_matrix, AssignmentScheme, CandidateDraw, LsrMode, LsrPolicy, MoePolicy, SyntheticParams, Table,
    TrainConfig, World,
};

fn small_policy(seed: u64, n: usize, k: usize, m: usize, std: f64) -> MoePolicy<f64> {
    MoePolicy::init(seed, 2, n, 3, m, k, AssignmentScheme::RoundRobin, 0.9, std).unwrap()
}

prop_compose! {
    fn policy_case()(n in 3usize..7, seed in any::<u64>(), m in 1usize..3, std in 0.1f64..1.5)
        (k in 1..=n, n in Just(n), seed in Just(seed), m in Just(m), std in Just(std)) -> MoePolicy<f64> {
        small_policy(seed, n, k, m, std)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn config_round_trips(
        seed in any::<u64>(),
        k in 2usize..30,
        len_frac in 0.0f64..1.0,
        tau in 0.05f64..4.0,
        lr in prop::option::of(1e-4f64..1.0),
        kind in prop::sample::select(vec!["vpg", "vpg_swr", "capg", "capg_swr"]),
        mode in prop::sample::select(vec!["optimal", "noisy", "uniform", "anti"]),
        grpo in any::<bool>(),
    ) {
        let mut cfg = TrainConfig::default();
        cfg.seed = seed;
        cfg.k = k;
        cfg.lsr_length = 1 + ((k - 1) as f64 * len_frac) as usize;
        cfg.tau = tau;
        cfg.lr = lr;
        cfg.set("pg.kind", kind).unwrap();
        cfg.set("lsr.mode", mode).unwrap();
        cfg.grpo_enabled = grpo;
        cfg.validate().unwrap();
        let text = cfg.serialize();
        let back = TrainConfig::parse(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.serialize(), text);
        prop_assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn grpo_groups_are_standardized(
        groups in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 2..9), 1..5),
        shift in 0.0f64..3.0,
    ) {
        let out = grpo_normalize(&groups, shift).unwrap();
        for (g, o) in groups.iter().zip(&out) {
            let spread = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - g.iter().cloned().fold(f64::INFINITY, f64::min);
            let n = o.len() as f64;
            let mean = o.iter().sum::<f64>() / n;
            prop_assert!((mean - shift).abs() < 1e-10);
            if spread > 1e-3 {
                let var = o.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                prop_assert!((var.sqrt() - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn marginals_sum_to_candidate_count(policy in policy_case()) {
        let total: f64 = exact_marginals(&policy, 1).unwrap().iter().sum();
        prop_assert!((total - policy.k() as f64).abs() < 1e-10, "{}", total);
    }

    #[test]
    fn scores_are_log_probabilities(policy in policy_case(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draw = policy.sample_candidates(0, &mut rng).unwrap();
        let vpg = policy.score_vpg(0, &draw).unwrap();
        let swr = policy.score_vpg_swr(0, &draw).unwrap();
        prop_assert!(vpg.value <= 1e-12);
        prop_assert!(swr.value <= vpg.value + 1e-12);
        for a in 0..policy.n_items() {
            let c = policy.score_capg(0, a).unwrap();
            prop_assert!(c.value <= 1e-12 && !c.overflow);
            let e = policy.exact_score_capg(0, a).unwrap();
            prop_assert!(e.value <= 1e-12);
        }
    }

    #[test]
    fn draws_are_distinct_and_in_range(policy in policy_case(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let CandidateDraw { ordered, .. } = policy.sample_candidates(1, &mut rng).unwrap();
        let mut sorted = ordered.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), policy.k());
        prop_assert!(ordered.iter().all(|&a| a < policy.n_items()));
        let greedy = policy.greedy_candidates(1).unwrap();
        prop_assert_eq!(greedy.len(), policy.k());
    }

    #[test]
    fn noisy_position_marginals_normalize(
        q in prop::collection::vec(0.1f64..5.0, 3..7),
        tau in 0.2f64..3.0,
        len_frac in 0.0f64..1.0,
    ) {
        let n = q.len();
        let l = 1 + ((n - 1) as f64 * len_frac) as usize;
        let w = World::empirical(Table::from_vec(1, n, q)).unwrap();
        let lsr = LsrPolicy::new(LsrMode::Noisy, tau, l).unwrap();
        let cands: Vec<usize> = (0..n).collect();
        let marg = lsr.all_position_marginals(&w, 0, &cands).unwrap();
        for m in &marg {
            prop_assert!((m.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        for a in 0..n {
            prop_assert!(marg.iter().map(|m| m.probs[a]).sum::<f64>() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn synthetic_rewards_are_positive(seed in any::<u64>(), c in 0.01f64..3.0) {
        let w = World::<f64>::synthetic(&SyntheticParams { seed, n_users: 5, n_items: 7, c, ..Default::default() }).unwrap();
        prop_assert!(w.min_expected_reward() > 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn dense_matrix_round_trips_exactly(
        rows in 1usize..6,
        cols in 1usize..6,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = Table::from_fn(rows, cols, |_, _| rand::Rng::random_range(&mut rng, -1e6..1e6));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_dense_matrix(&path, &values).unwrap();
        let w = load_dense_matrix::<f64>(&path).unwrap();
        for x in 0..rows {
            prop_assert_eq!(w.q_row(x), values.row(x));
        }
    }
}
