//! Property tests over the data layer, clustering and attention pooling.

use ndarray::Array2;
use proptest::prelude::*;

use attnmisl::cluster::{build_phenotype_tensors, kmeans_cluster, ClusterConfig};
use attnmisl::data::{
    load_patient_features, save_patient_features, split_cohort, Cohort, PatchCoord, PatientBag,
    SurvivalLabel,
};
use attnmisl::metrics::concordance_index;
use attnmisl::model::{attention_pool, init_params, ModelConfig};

fn arb_coords(m: usize) -> impl Strategy<Value = Vec<PatchCoord>> {
    proptest::collection::vec(
        (any::<u16>(), 0u32..1_000_000, 0u32..1_000_000).prop_map(|(slide_index, x, y)| {
            PatchCoord { slide_index, x, y }
        }),
        m,
    )
}

fn arb_bag() -> impl Strategy<Value = (usize, usize, Vec<f32>, Vec<PatchCoord>)> {
    (1usize..20, 1usize..=64).prop_flat_map(|(m, d)| {
        (
            Just(m),
            Just(d),
            proptest::collection::vec(-1e6f32..1e6, m * d),
            arb_coords(m),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn feature_file_round_trip_is_identity((m, d, values, coords) in arb_bag()) {
        let features = Array2::from_shape_vec((m, d), values).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bag.amf");
        save_patient_features(&path, "patient", &features, &coords).unwrap();
        let loaded = load_patient_features(&path).unwrap();
        prop_assert_eq!(loaded.features, features);
        prop_assert_eq!(loaded.coords, coords);
        prop_assert_eq!(loaded.patient_id, "patient");
    }

    #[test]
    fn split_is_disjoint_and_exhaustive(n in 3usize..80, seed in any::<u64>()) {
        let patients: Vec<PatientBag> = (0..n)
            .map(|i| {
                PatientBag::new(
                    format!("p{i}"),
                    Array2::zeros((1, 2)),
                    vec![PatchCoord { slide_index: 0, x: 0, y: 0 }],
                    SurvivalLabel { time_days: (i + 1) as f64, event: true },
                )
                .unwrap()
            })
            .collect();
        let cohort = Cohort::new(patients).unwrap();
        match split_cohort(&cohort, 0.2, 0.1, seed) {
            Ok((train, val, test)) => {
                let mut ids: Vec<&str> = train
                    .patients()
                    .iter()
                    .chain(val.as_ref().unwrap().patients())
                    .chain(test.patients())
                    .map(|p| p.patient_id())
                    .collect();
                let total = ids.len();
                prop_assert_eq!(total, n);
                ids.sort_unstable();
                ids.dedup();
                prop_assert_eq!(ids.len(), n, "partitions overlap");
            }
            Err(_) => prop_assert!(n < 6, "split failed for n={}", n),
        }
    }

    #[test]
    fn tensors_partition_patches(
        m in 1usize..40,
        k in 1usize..8,
        seed in any::<u64>(),
        values in proptest::collection::vec(-10.0f32..10.0, 40 * 4),
    ) {
        let features = Array2::from_shape_vec((m, 4), values[..m * 4].to_vec()).unwrap();
        let coords = vec![PatchCoord { slide_index: 0, x: 0, y: 0 }; m];
        let bag = PatientBag::new(
            "p",
            features,
            coords,
            SurvivalLabel { time_days: 1.0, event: true },
        )
        .unwrap();
        let config = ClusterConfig { k, seed, ..ClusterConfig::default() };
        let assignment = kmeans_cluster(&bag, &config).unwrap();
        prop_assert_eq!(assignment.counts.iter().sum::<usize>(), m);
        let tensors = build_phenotype_tensors(&bag, &assignment).unwrap();
        prop_assert_eq!(tensors.len(), k);
        let total: usize = tensors.iter().map(|t| t.n_patches()).sum();
        prop_assert_eq!(total, m);
    }

    #[test]
    fn attention_weights_form_masked_distribution(
        seed in any::<u64>(),
        mask in proptest::collection::vec(any::<bool>(), 1..8),
        values in proptest::collection::vec(-3.0f64..3.0, 8 * 64),
    ) {
        prop_assume!(mask.iter().any(|&m| m));
        let k = mask.len();
        let mut config = ModelConfig::new(4);
        config.attention_hidden = 5;
        let params = init_params(&config, seed).unwrap();
        let reps = Array2::from_shape_vec((k, 64), values[..k * 64].to_vec()).unwrap();
        let (_, attention) = attention_pool(&params, &config, &reps, &mask).unwrap();
        let mut in_sum = 0.0;
        for (a, &m) in attention.iter().zip(&mask) {
            prop_assert!(*a >= 0.0);
            if m {
                in_sum += a;
            } else {
                prop_assert_eq!(*a, 0.0);
            }
        }
        prop_assert!((in_sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn c_index_invariant_under_increasing_transform(
        risks in proptest::collection::vec(-5.0f64..5.0, 4..16),
        seed in any::<u64>(),
    ) {
        let n = risks.len();
        let mut times = Vec::with_capacity(n);
        let mut state = seed;
        for _ in 0..n {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            times.push(1.0 + (state >> 33) as f64 % 97.0);
        }
        let labels: Vec<SurvivalLabel> = times
            .iter()
            .enumerate()
            .map(|(i, &t)| SurvivalLabel { time_days: t, event: i % 3 != 0 })
            .collect();
        if let Ok(base) = concordance_index(&risks, &labels) {
            let squashed: Vec<f64> = risks.iter().map(|r| r.tanh() * 2.0 + 7.0).collect();
            prop_assert_eq!(concordance_index(&squashed, &labels).unwrap(), base);
        }
    }
}
