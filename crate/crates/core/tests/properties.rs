use morf::data::{generate_synthetic, split, SplitConfig, SyntheticSpec};
use morf::forest::{decode_distribution, encode_label, leaf_distribution, route_probabilities, TreeTopology};
use morf::gfs::{dynamic_assignment, Selection};
use morf::metrics::wilcoxon_signed_rank;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #[test]
    fn label_round_trip(classes in 2usize..9, pick in 0usize..100) {
        let label = 1 + pick % classes;
        let d = encode_label::<f64>(label, classes).unwrap();
        prop_assert_eq!(decode_distribution(d.as_slice()), label);
        prop_assert!(d.is_monotone(0.0));
    }

    #[test]
    fn routing_is_a_distribution(depth in 1usize..6, raw in prop::collection::vec(-8.0f64..8.0, 31)) {
        let topo = TreeTopology::new(depth).unwrap();
        let split: Vec<f64> = raw[..topo.split_count()].iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
        let mu = route_probabilities(&split, &topo).unwrap();
        prop_assert_eq!(mu.len(), topo.leaf_count());
        prop_assert!(mu.iter().all(|&p| (0.0..=1.0).contains(&p)));
        prop_assert!((mu.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn leaves_are_monotone(raw in prop::collection::vec(-20.0f64..20.0, 1..8)) {
        let d = leaf_distribution(&raw);
        prop_assert!(d.is_monotone(0.0));
        prop_assert!(d.as_slice().iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn gfs_partitions_cover_every_coordinate(
        depth in 1usize..4,
        trees in 1usize..6,
        extra in 0usize..3,
        seed in any::<u64>(),
    ) {
        let topo = TreeTopology::new(depth).unwrap();
        let groups = topo.split_count();
        let size = trees + extra;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fc: Vec<f64> = (0..groups * size).map(|i| ((i * 7919 + seed as usize) % 101) as f64).collect();
        let a = dynamic_assignment(&fc, &topo, trees, Selection::WithoutReplacement, &mut rng).unwrap();
        let mut coords = a.coordinates();
        prop_assert_eq!(coords.len(), trees * groups);
        coords.sort_unstable();
        coords.dedup();
        prop_assert_eq!(coords.len(), trees * groups);
        // Node k of every tree comes from the k-th block of the ranking.
        let mut order: Vec<usize> = (0..fc.len()).collect();
        order.sort_by(|&x, &y| fc[y].partial_cmp(&fc[x]).unwrap());
        for t in 0..trees {
            for (k, c) in a.tree(t).iter().enumerate() {
                prop_assert!(order[k * size..(k + 1) * size].contains(c));
            }
        }
    }

    #[test]
    fn wilcoxon_is_symmetric(pairs in prop::collection::vec((-5i32..5, -5i32..5), 1..30)) {
        let a: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let b: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
        let ab = wilcoxon_signed_rank(&a, &b).unwrap();
        let ba = wilcoxon_signed_rank(&b, &a).unwrap();
        prop_assert_eq!(ab.p_value, ba.p_value);
        prop_assert!(ab.p_value > 0.0 && ab.p_value <= 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn split_respects_protocol(seed in any::<u64>(), fraction in 0.2f64..0.9) {
        let spec = SyntheticSpec { n: 200, ..SyntheticSpec::preset("ord3-std", seed).unwrap() };
        let data = generate_synthetic(&spec).unwrap().dataset;
        let cfg = SplitConfig {
            train_classes: vec![1, 3],
            test_classes: vec![1, 3],
            ..SplitConfig::full(3, fraction, seed)
        };
        let Ok(s) = split(&data, &cfg) else { return Ok(()) };
        prop_assert!(s.train.iter().chain(&s.test).all(|&i| data.samples[i].label != 2));
        prop_assert!(s.train.iter().all(|i| !s.test.contains(i)));
        let full = split(&data, &SplitConfig::full(3, fraction, seed)).unwrap();
        prop_assert!(s.train.iter().all(|i| full.train.contains(i)));
        prop_assert!(s.test.iter().all(|i| full.test.contains(i)));
    }
}
