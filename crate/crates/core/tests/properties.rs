use ctxskill::emo::{crowding_distance, dominates, fast_non_dominated_sort, polynomial_mutation, sbx_crossover, FitnessPair};
use ctxskill::env::{ActionPair, EpisodeState, TaskParams, WorldConfig};
use ctxskill::genharness::{pairwise_diff, GridResult, GridRow};
use ctxskill::env::ActionUsage;
use ctxskill::genome::{GeneBounds, Genome};
use ctxskill::nets::{decode, genome_length, ArchitectureKind, ArchitectureSpec};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fitness() -> impl Strategy<Value = FitnessPair> {
    (0u8..10, 0u8..10).prop_map(|(p, h)| FitnessPair::new(f64::from(p), f64::from(h) * 0.5))
}

fn kind() -> impl Strategy<Value = ArchitectureKind> {
    prop_oneof![Just(ArchitectureKind::S), Just(ArchitectureKind::C), Just(ArchitectureKind::CS)]
}

fn task() -> impl Strategy<Value = TaskParams> {
    (any::<u32>(), -21.0..-3.0f64, 0.25..1.75f64, 1.25..8.75f64, 0.25..1.75f64)
        .prop_map(|(seed, flap, gravity, forward, drag)| TaskParams { seed, flap, gravity, forward, drag })
}

proptest! {
    #[test]
    fn dominance_is_a_strict_partial_order(a in fitness(), b in fitness(), c in fitness()) {
        prop_assert!(!dominates(&a, &a));
        prop_assert!(!(dominates(&a, &b) && dominates(&b, &a)));
        if dominates(&a, &b) && dominates(&b, &c) {
            prop_assert!(dominates(&a, &c));
        }
    }

    #[test]
    fn fronts_partition_and_layer(f in prop::collection::vec(fitness(), 1..40)) {
        let fronts = fast_non_dominated_sort(&f);
        let mut all: Vec<usize> = fronts.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..f.len()).collect::<Vec<_>>());
        for (k, front) in fronts.iter().enumerate() {
            for &i in front {
                for later in &fronts[k..] {
                    prop_assert!(later.iter().all(|&j| !dominates(&f[j], &f[i])));
                }
                if k > 0 {
                    prop_assert!(fronts[k - 1].iter().any(|&j| dominates(&f[j], &f[i])));
                }
            }
        }
    }

    #[test]
    fn crowding_is_nonnegative_with_infinite_extremes(f in prop::collection::vec(fitness(), 1..30)) {
        for front in fast_non_dominated_sort(&f) {
            let d = crowding_distance(&f, &front);
            prop_assert!(d.iter().all(|v| *v >= 0.0));
            prop_assert!(d.iter().filter(|v| v.is_infinite()).count() >= front.len().min(2));
        }
    }

    #[test]
    fn operators_stay_in_bounds(
        genes in prop::collection::vec((-10.0..=10.0f64, -10.0..=10.0f64), 1..30),
        eta_c in 0.0..50.0f64,
        eta_m in 0.0..50.0f64,
        p in 0.0..=1.0f64,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = GeneBounds::default();
        let p1 = Genome::new(genes.iter().map(|g| g.0).collect(), b).unwrap();
        let p2 = Genome::new(genes.iter().map(|g| g.1).collect(), b).unwrap();
        let (c1, c2) = sbx_crossover(&p1, &p2, eta_c, 1.0, &mut rng);
        prop_assert!(c1.within_bounds() && c2.within_bounds());
        let m = polynomial_mutation(&c1, eta_m, p, &mut rng);
        prop_assert!(m.within_bounds());
        prop_assert_eq!(m.len(), p1.len());
    }

    #[test]
    fn identical_parents_are_reproduced(genes in prop::collection::vec(-10.0..=10.0f64, 1..30), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = Genome::new(genes, GeneBounds::default()).unwrap();
        let (c1, c2) = sbx_crossover(&p, &p, 20.0, 1.0, &mut rng);
        prop_assert_eq!(&c1, &p);
        prop_assert_eq!(&c2, &p);
        prop_assert_eq!(&polynomial_mutation(&p, 20.0, 0.0, &mut rng), &p);
    }

    #[test]
    fn flatten_inverts_decode(k in kind(), seed in any::<u64>()) {
        let spec = ArchitectureSpec::new(k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Genome::random(genome_length(&spec), -10.0, 10.0, GeneBounds::default(), &mut rng);
        prop_assert_eq!(decode(&g, &spec).unwrap().flatten(), g.genes);
    }

    #[test]
    fn simulator_invariants_hold(tp in task(), actions in prop::collection::vec(any::<(bool, bool)>(), 500)) {
        let wc = WorldConfig::default();
        let mut s = EpisodeState::new(&tp, &wc).unwrap();
        let mut expected_hits = 0;
        for (up, fwd) in actions {
            let obs = s.observe(&wc).to_array();
            prop_assert!(obs.iter().all(|v| (0.0..=1.0).contains(v)), "{:?}", obs);
            let ev = s.step(ActionPair::new(up, fwd), &tp, &wc).unwrap();
            expected_hits += u32::from(ev.pipe_contact) + 5 * u32::from(ev.boundary_contact);
            prop_assert!(s.v_x >= wc.vx_min && s.v_x <= wc.vx_max);
            prop_assert!(s.v_y.abs() <= wc.vy_abs_max);
            prop_assert!(s.y >= 0.0 && s.y <= wc.height);
            for p in &s.pipes {
                prop_assert!((p.h_top + wc.pipe_gap + p.h_bottom - wc.height).abs() < 1e-9);
                prop_assert!(p.h_top >= 0.0 && p.h_bottom >= 0.0);
            }
        }
        prop_assert!(s.is_finished(&wc));
        prop_assert_eq!(s.hit_units, expected_hits);
        prop_assert_eq!(s.hit_units, s.pipe_contact_steps + 5 * s.boundary_contact_steps);
    }

    #[test]
    fn diff_is_antisymmetric(scores in prop::collection::vec((0u32..30, 0u32..50, 0u32..30, 0u32..50), 1..20)) {
        let row = |i: usize, f0: u32, f1: u32| GridRow {
            params: [-12.0 * (i as f64 + 1.0), 1.0, 5.0, 1.0],
            sample: 0,
            seed: i as u32,
            f0,
            f1,
            usage: ActionUsage::default(),
        };
        let a = GridResult { rows: scores.iter().enumerate().map(|(i, s)| row(i, s.0, s.1)).collect() };
        let b = GridResult { rows: scores.iter().enumerate().map(|(i, s)| row(i, s.2, s.3)).collect() };
        let ab = pairwise_diff(&a, &b).unwrap();
        let ba = pairwise_diff(&b, &a).unwrap();
        for (x, y) in ab.rows.iter().zip(&ba.rows) {
            prop_assert_eq!(x.d_f0, -y.d_f0);
            prop_assert_eq!(x.d_f1, -y.d_f1);
        }
    }
}
