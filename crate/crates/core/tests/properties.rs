use gedan_core::assignment::{hungarian, GsParams};
use gedan_core::autodiff::Tensor;
use gedan_core::gedan::{GedanModel, Mode, ModelConfig};
use gedan_core::ged::{exact_ged, CostConfigId};
use gedan_core::graph::synth_random;
use proptest::prelude::*;

fn model() -> GedanModel {
    let cfg = ModelConfig {
        num_labels: 4,
        dim: 6,
        depth: 2,
        cost_hidden: 4,
        ..ModelConfig::default()
    };
    GedanModel::new(cfg, GsParams::new(16).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn exact_ged_is_a_metric_under_symmetric_costs(a in 0u64..1000, b in 0u64..1000, c in 0u64..1000, n in 1usize..5) {
        let costs = CostConfigId::new(1).unwrap().costs();
        let g = synth_random(n, 0.5, 3, a);
        let h = synth_random(n + 1, 0.5, 3, b);
        let k = synth_random(n, 0.3, 3, c);
        let gh = exact_ged(&g, &h, &costs).unwrap();
        prop_assert_eq!(gh, exact_ged(&h, &g, &costs).unwrap());
        prop_assert_eq!(exact_ged(&g, &g, &costs).unwrap(), 0.0);
        prop_assert!(gh <= exact_ged(&g, &k, &costs).unwrap() + exact_ged(&k, &h, &costs).unwrap() + 1e-12);
    }

    #[test]
    fn model_score_ignores_node_order(seed in 0u64..1000, n in 2usize..7, m in 1usize..7, rot in 0usize..7) {
        let model = model();
        let g = synth_random(n, 0.5, 3, seed);
        let h = synth_random(m, 0.5, 3, seed + 1);
        let perm: Vec<usize> = (0..n).map(|v| (v + rot) % n).collect();
        let gp = g.permuted(&perm).unwrap();
        for mode in [Mode::Unsupervised, Mode::Gedan] {
            let a = model.score(&g, &h, mode).unwrap();
            let b = model.score(&gp, &h, mode).unwrap();
            prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
        }
    }

    #[test]
    fn hungarian_beats_every_shifted_assignment(data in prop::collection::vec(0.0f64..10.0, 36), shift in 0usize..6) {
        let c = Tensor::new(6, 6, data).unwrap();
        let (_, total) = hungarian(&c).unwrap();
        let shifted: f64 = (0..6).map(|i| c.get(i, (i + shift) % 6)).sum();
        prop_assert!(total <= shifted + 1e-12);
    }
}
