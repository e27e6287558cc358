use std::sync::Arc;

use proptest::prelude::*;

use mtsq::baselines::{brute_force_knn, compare_results, mass_scan_knn, UtsBaseline};
use mtsq::bench::io::{dataset_from_bytes, dataset_to_bytes};
use mtsq::bench::{generate_synthetic, generate_workload, ChannelSelection, WorkloadSpec};
use mtsq::{BuildConfig, Mode, MsIndex, Partitioning, QueryOptions};

fn mode_strategy() -> impl Strategy<Value = Mode> {
    prop_oneof![Just(Mode::Raw), Just(Mode::Znorm)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_method_matches_brute_force(
        seed in 0u64..1_000_000,
        n in 1usize..6,
        c in 1usize..5,
        m in 20usize..160,
        qlen_frac in 0.05f64..0.9,
        k in 1usize..8,
        mode in mode_strategy(),
        pivots in 0usize..3,
        uniform in any::<bool>(),
        leaf_fraction in 0.0005f64..0.1,
    ) {
        let qlen = ((m as f64 * qlen_frac) as usize).max(2);
        let ds = generate_synthetic(n, c, m, seed).unwrap();
        let mut spec = WorkloadSpec::new(qlen, 3, seed);
        spec.k = k;
        spec.mode = mode;
        spec.channels = ChannelSelection::Random { size: None };
        let wl = generate_workload(&ds, &spec).unwrap();
        let data = Arc::new(wl.indexed);
        let config = BuildConfig {
            seed,
            pivot_count: pivots,
            leaf_fraction,
            partitioning: if uniform { Partitioning::Uniform } else { Partitioning::Weighted },
            ..BuildConfig::default()
        };
        let index = MsIndex::build(data.clone(), qlen, mode, config.clone()).unwrap();
        prop_assert!(index.verify_partition().is_ok());
        let uts = UtsBaseline::build(data.clone(), qlen, mode, &config).unwrap();
        for q in &wl.queries {
            let oracle = brute_force_knn(&data, q).unwrap();
            let (got, stats) = index.knn_query(q).unwrap();
            prop_assert!(compare_results(&oracle, &got, 1e-6).is_ok(), "msindex");
            prop_assert!(stats.entries_returned_probe2 >= 1);
            prop_assert!((0.0..=1.0).contains(&stats.pruning_effectiveness()));
            let (plain, _) = index.knn_query_with(q, QueryOptions { pivot_correction: false }).unwrap();
            prop_assert!(compare_results(&oracle, &plain, 1e-6).is_ok(), "msindex without correction");
            prop_assert!(compare_results(&oracle, &mass_scan_knn(&data, q).unwrap(), 1e-6).is_ok(), "mass");
            prop_assert!(compare_results(&oracle, &uts.knn_query(q).unwrap().0, 1e-6).is_ok(), "utsbase");
        }
    }

    #[test]
    fn range_probe_covers_every_window_within_the_radius(
        seed in 0u64..1_000_000,
        mode in mode_strategy(),
        radius_scale in 0.5f64..3.0,
    ) {
        let ds = generate_synthetic(4, 3, 120, seed).unwrap();
        let mut spec = WorkloadSpec::new(16, 1, seed);
        spec.mode = mode;
        spec.channels = ChannelSelection::Random { size: None };
        let wl = generate_workload(&ds, &spec).unwrap();
        let data = Arc::new(ds);
        let index = MsIndex::build(data.clone(), 16, mode, BuildConfig { seed, ..BuildConfig::default() }).unwrap();
        let q = &wl.queries[0];
        let nearest = brute_force_knn(&data, &q.clone().with_k(1)).unwrap()[0].distance;
        let tau = nearest * radius_scale + 1e-9;
        let covered: Vec<(usize, usize, usize)> = index
            .range_entries(q, tau * tau)
            .unwrap()
            .iter()
            .map(|e| (e.series, e.start, e.end))
            .collect();
        let everything = brute_force_knn(&data, &q.clone().with_k(usize::MAX)).unwrap();
        for mt in everything.iter().filter(|mt| mt.distance <= tau) {
            let pos = data.position_of(mt.subsequence.series_id).unwrap();
            let off = mt.subsequence.offset;
            prop_assert!(
                covered.iter().any(|&(s, a, b)| s == pos && (a..=b).contains(&off)),
                "window ({pos}, {off}) at {} not covered for radius {tau}", mt.distance
            );
        }
    }

    #[test]
    fn dataset_files_round_trip(seed in any::<u64>(), n in 1usize..5, c in 1usize..4, m in 1usize..50) {
        let ds = generate_synthetic(n, c, m, seed).unwrap();
        let back = dataset_from_bytes(&dataset_to_bytes(&ds), ds.name()).unwrap();
        prop_assert_eq!(back.series(), ds.series());
    }

    #[test]
    fn workloads_are_reproducible(seed in any::<u64>(), noise in 0.0f64..1.0, ood in any::<bool>()) {
        let ds = generate_synthetic(5, 3, 80, 1).unwrap();
        let mut spec = WorkloadSpec::new(12, 4, seed);
        spec.noise_factor = noise;
        spec.out_of_dataset = ood;
        spec.channels = ChannelSelection::Random { size: None };
        let a = generate_workload(&ds, &spec).unwrap();
        let b = generate_workload(&ds, &spec).unwrap();
        prop_assert_eq!(a.queries, b.queries);
        prop_assert_eq!(a.sources, b.sources);
        for id in &a.held_out {
            prop_assert!(a.indexed.position_of(*id).is_none());
        }
    }
}
