//! Property tests: invariants over seeded random instances.

mod common;

use drbsde_core::drbsde::FixedPointInit;
use drbsde_core::fuzz::{comparison_pair, random_pair, random_scenario, GenOptions, Regime};
use drbsde_core::pricing::{build_market, price_game_option, wealth_forward};
use drbsde_core::process::{is_strong_supermartingale, mokobodzki_construct};
use drbsde_core::scenario::ScenarioFile;
use drbsde_core::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn resolved(seed: u64, opts: &GenOptions) -> (ScenarioFile, ScenarioTree, AdmissiblePair, Driver) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = random_scenario(&mut rng, opts);
    let r = s.resolve().expect("generated scenario resolves");
    (s, r.tree, r.pair, r.driver)
}

fn regime(regime: Regime, max_depth: usize, enumerable: bool) -> GenOptions {
    GenOptions {
        max_depth,
        enumerable,
        regimes: vec![regime],
        ..GenOptions::default()
    }
}

fn market(rng: &mut ChaCha8Rng) -> MarketParams {
    MarketParams {
        r: rng.gen_range(0.0..0.06),
        borrow_rate: rng.gen_range(0.06..0.12),
        mu: [rng.gen_range(0.0..0.1), rng.gen_range(0.0..0.1)],
        sigma: [rng.gen_range(0.2..0.4), 0.0],
        beta: [0.0, rng.gen_range(0.3..0.6)],
        ..MarketParams::default()
    }
}

fn small_tree(rng: &mut ChaCha8Rng, scheme: Scheme) -> ScenarioTree {
    let steps = rng.gen_range(1..=4);
    // lambda dt <= 0.5 keeps asset prices positive at sigma <= 0.4, beta <= 0.6
    let lambda = rng.gen_range(0.0..0.5) * steps as f64;
    build_tree(TimeGrid::uniform(1.0, steps).unwrap(), lambda, scheme).unwrap()
}

/// The implicit step needs `K dt < 1`.
fn contracting(f: &Driver, tree: &ScenarioTree) -> bool {
    f.lipschitz() * tree.grid().max_dt() < 1.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn edge_moments_match(seed in any::<u64>(), four in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scheme = if four { Scheme::Four } else { Scheme::Three };
        let tree = small_tree(&mut rng, scheme);
        for n in 0..tree.leaves().start {
            let dt = tree.dt_after(n);
            let (mut p, mut w, mut w2, mut j, mut j2, mut wj) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
            for c in tree.children(n) {
                let e = tree.node(c);
                p += e.prob;
                w += e.prob * e.dw;
                w2 += e.prob * e.dw * e.dw;
                j += e.prob * e.dn_comp;
                j2 += e.prob * e.dn_comp * e.dn_comp;
                wj += e.prob * e.dw * e.dn_comp;
            }
            prop_assert!((p - 1.0).abs() < 1e-12);
            prop_assert!(w.abs() < 1e-12 && j.abs() < 1e-12 && wj.abs() < 1e-12);
            prop_assert!((w2 - dt).abs() < 1e-12);
            // At most one jump per step: Bernoulli variance.
            let q = tree.lambda() * dt;
            prop_assert!((j2 - q * (1.0 - q)).abs() < 1e-12);
        }
    }

    #[test]
    fn solution_meets_every_condition(seed in any::<u64>()) {
        let (_, tree, pair, f) = resolved(seed, &GenOptions { max_depth: 4, ..GenOptions::default() });
        let sol = solve_direct(&pair, &f, &tree).unwrap();
        let report = verify_solution(&sol, &pair, &f, &tree);
        prop_assert!(report.passes(1e-10), "{report:?}");
    }

    #[test]
    fn fixed_point_matches_direct(seed in any::<u64>()) {
        let (_, tree, pair, f) = resolved(seed, &GenOptions { max_depth: 4, ..GenOptions::default() });
        let d = solve_direct(&pair, &f, &tree).unwrap();
        let fp = solve_fixed_point(&pair, &f, &tree, FixedPointInit::Zero).unwrap();
        prop_assert!(fp.solution.y.max_abs_diff(&d.y) <= 1e-9);
    }

    #[test]
    fn picard_matches_direct_for_process_drivers(seed in any::<u64>()) {
        let (_, tree, pair, f) = resolved(seed, &GenOptions { max_depth: 4, ..GenOptions::default() });
        let d = solve_direct(&pair, &f, &tree).unwrap();
        let frozen = f.freeze(&tree, &d.y.right, &d.z, &d.k);
        let p = solve_picard_driver_process(&pair, &frozen, &tree).unwrap();
        prop_assert!(p.solution.y.max_abs_diff(&d.y) <= 1e-9);
    }

    #[test]
    fn comparison_orders_solutions(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_scenario(&mut rng, &GenOptions { max_depth: 4, ..GenOptions::default() });
        let r = s.resolve().unwrap();
        let (pair2, f2) = comparison_pair(&mut rng, &r.tree, &r.pair, &r.driver);
        let s1 = solve_direct(&r.pair, &r.driver, &r.tree).unwrap();
        let s2 = solve_direct(&pair2, &f2, &r.tree).unwrap();
        prop_assert!(s2.y.le(&s1.y, 1e-12));
    }

    #[test]
    fn mokobodzki_pair_brackets_barriers(seed in any::<u64>()) {
        let (_, tree, pair, _) = resolved(seed, &GenOptions { max_depth: 4, ..GenOptions::default() });
        let m = mokobodzki_construct(&pair, &tree).unwrap();
        prop_assert!(m.satisfies(&pair, &tree, 1e-10));
        prop_assert!(is_strong_supermartingale(&m.h, &tree));
        prop_assert!(is_strong_supermartingale(&m.hp, &tree));
    }

    #[test]
    fn ref_is_snell_envelope_over_systems(seed in any::<u64>()) {
        let (_, tree, pair, _) = resolved(seed, &GenOptions { max_depth: 4, ..GenOptions::default() });
        let r = ref_operator(&pair.xi, &tree).unwrap();
        let oracle = common::snell_by_systems(&pair.xi.at, &pair.xi.right, &tree);
        for (a, b) in r.x.at.iter().zip(&oracle) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        prop_assert!(is_strong_supermartingale(&r.x, &tree));
    }

    #[test]
    fn no_upper_barrier_reduces_to_snell_envelope(seed in any::<u64>()) {
        let (_, tree, pair, _) = resolved(seed, &GenOptions { max_depth: 4, ..GenOptions::default() });
        let far = 1e6;
        let mut zeta = LadlagProcess::constant(&tree, far);
        for n in tree.leaves() {
            zeta.at[n] = pair.xi.at[n];
            zeta.right[n] = pair.xi.at[n];
        }
        let loose = AdmissiblePair::new(&tree, pair.xi.clone(), zeta).unwrap();
        let y = solve_direct(&loose, &Driver::zero(), &tree).unwrap().y;
        let x = ref_operator(&pair.xi, &tree).unwrap().x;
        prop_assert!(y.max_abs_diff(&x) <= 1e-12);
    }

    #[test]
    fn scenario_json_round_trips(seed in any::<u64>()) {
        let (s, ..) = resolved(seed, &GenOptions::default());
        let back = ScenarioFile::parse(&s.to_json(), "round-trip").unwrap();
        prop_assert_eq!(back, s);
    }

    #[test]
    fn generator_is_deterministic(seed in any::<u64>()) {
        let a = resolved(seed, &GenOptions::default()).0;
        let b = resolved(seed, &GenOptions::default()).0;
        prop_assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn bsde_then_wealth_replicates_claim(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = small_tree(&mut rng, Scheme::Three);
        let m = market(&mut rng);
        let f = drbsde_core::bsde::two_rates_driver(&m, tree.lambda()).unwrap();
        prop_assume!(contracting(&f, &tree));
        let claim: Vec<f64> = tree.leaves().map(|_| rng.gen_range(-3.0..3.0)).collect();
        let sol = bsde_solve(&tree, &claim, &f).unwrap();
        let w = wealth_forward(&tree, sol.x.at[0], &sol.z, &sol.k, &f);
        for (n, c) in tree.leaves().zip(&claim) {
            prop_assert!((w.values[n] - c).abs() <= 1e-9);
        }
    }

    #[test]
    fn raising_the_penalty_never_lowers_the_price(seed in any::<u64>(), bump in 0.0..2.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = small_tree(&mut rng, Scheme::Three);
        let m = market(&mut rng);
        let f = drbsde_core::bsde::perfect_driver(&m, tree.lambda()).unwrap();
        prop_assume!(contracting(&f, &tree) && f.is_discretely_monotone(&tree));
        let pair = random_pair(&mut rng, &tree, Regime::Irregular);
        let mut zeta = pair.zeta.clone();
        for n in 0..tree.leaves().start {
            zeta.at[n] += bump;
            zeta.right[n] += bump;
        }
        let raised = AdmissiblePair::new(&tree, pair.xi.clone(), zeta).unwrap();
        let model = build_market(&m, &tree).unwrap();
        let u = price_game_option(&pair, &model, &f, &tree).unwrap().u0;
        let v = price_game_option(&raised, &model, &f, &tree).unwrap().u0;
        prop_assert!(v >= u - 1e-12);
    }

    #[test]
    fn two_rates_price_dominates_perfect_market(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = small_tree(&mut rng, Scheme::Three);
        let m = market(&mut rng);
        let perfect = drbsde_core::bsde::perfect_driver(&m, tree.lambda()).unwrap();
        let two = drbsde_core::bsde::two_rates_driver(&m, tree.lambda()).unwrap();
        prop_assume!(contracting(&two, &tree) && contracting(&perfect, &tree));
        prop_assume!(perfect.is_discretely_monotone(&tree) && two.is_discretely_monotone(&tree));
        let pair = random_pair(&mut rng, &tree, Regime::Irregular);
        let model = build_market(&m, &tree).unwrap();
        let u = price_game_option(&pair, &model, &perfect, &tree).unwrap().u0;
        let v = price_game_option(&pair, &model, &two, &tree).unwrap().u0;
        prop_assert!(v >= u - 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn system_game_value_is_y0(seed in any::<u64>()) {
        let (_, tree, pair, f) = resolved(seed, &regime(Regime::Irregular, 3, true));
        let y0 = solve_direct(&pair, &f, &tree).unwrap().y0();
        let g = game_values(&pair, &f, &tree, &StoppingTime::at_root(&tree), true).unwrap();
        prop_assert!(g.has_value);
        prop_assert!((g.upper[0] - y0).abs() <= 1e-10);
    }

    #[test]
    fn right_regular_time_game_value_is_y0(seed in any::<u64>()) {
        let (_, tree, pair, f) = resolved(seed, &regime(Regime::RightRegular, 3, true));
        let y = solve_direct(&pair, &f, &tree).unwrap().y;
        let theta = StoppingTime::at_level(&tree, 1.min(tree.depth()));
        let g = game_values(&pair, &f, &tree, &theta, false).unwrap();
        for (m, &n) in g.theta_nodes.iter().enumerate() {
            prop_assert!((g.upper[m] - y.at[n]).abs() <= 1e-10);
            prop_assert!((g.lower[m] - y.at[n]).abs() <= 1e-10);
        }
    }

    #[test]
    fn perfect_market_price_matches_tilted_oracle(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = small_tree(&mut rng, Scheme::Three);
        let m = market(&mut rng);
        let f = drbsde_core::bsde::perfect_driver(&m, tree.lambda()).unwrap();
        prop_assume!(contracting(&f, &tree));
        let pair = random_pair(&mut rng, &tree, Regime::Irregular);
        let model = build_market(&m, &tree).unwrap();
        // The oracle clamps instants only, so compare on right-regular barriers.
        let xi = LadlagProcess::continuous(&tree, pair.xi.at.clone()).unwrap();
        let zeta = LadlagProcess::continuous(&tree, pair.zeta.at.clone()).unwrap();
        let regular = AdmissiblePair::new(&tree, xi, zeta).unwrap();
        let u = price_game_option(&regular, &model, &f, &tree).unwrap();
        let oracle = common::tilted_dynkin(&regular, &m, &tree);
        for (a, b) in u.solution.y.at.iter().zip(&oracle) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }
}

#[test]
fn strategy_counts_match_level_recursion() {
    // Zero intensity on the Three scheme prunes the jump branch: a binary tree.
    let binary = build_tree(TimeGrid::uniform(1.0, 3).unwrap(), 0.0, Scheme::Three).unwrap();
    let times = dynkin::enumerate_stopping(&binary, false).unwrap();
    let systems = dynkin::enumerate_stopping(&binary, true).unwrap();
    assert_eq!(times.len() as u128, common::count_by_levels(&[2, 2, 2], 1));
    assert_eq!(systems.len() as u128, common::count_by_levels(&[2, 2, 2], 2));
    assert_eq!((times.len(), systems.len()), (26, 123));

    let three = build_tree(TimeGrid::uniform(1.0, 2).unwrap(), 0.5, Scheme::Three).unwrap();
    assert_eq!(dynkin::enumerate_stopping(&three, false).unwrap().len(), 9);
    assert_eq!(dynkin::enumerate_stopping(&three, true).unwrap().len(), 29);
    assert_eq!(common::count_by_levels(&[3], 1), 2);
    assert_eq!(
        dynkin::count_strategies(&three, 0, true),
        common::count_by_levels(&[3, 3], 2)
    );
}

#[test]
fn enumerated_strategies_are_distinct() {
    let tree = build_tree(TimeGrid::uniform(1.0, 2).unwrap(), 0.5, Scheme::Three).unwrap();
    let all = dynkin::enumerate_stopping(&tree, true).unwrap();
    let set: std::collections::HashSet<_> = all.iter().collect();
    assert_eq!(set.len(), all.len());
}

#[test]
fn american_option_special_case() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let tree = build_tree(TimeGrid::uniform(1.0, 8).unwrap(), 0.6, Scheme::Three).unwrap();
    let m = market(&mut rng);
    let model = build_market(&m, &tree).unwrap();
    let f = drbsde_core::bsde::perfect_driver(&m, tree.lambda()).unwrap();
    // American put on asset 1, seller never cancels: huge penalty.
    let put: Vec<f64> = model.prices[1].iter().map(|s| (100.0 - s).max(0.0)).collect();
    let xi = LadlagProcess::continuous(&tree, put.clone()).unwrap();
    let mut cap = vec![1e9; tree.len()];
    for n in tree.leaves() {
        cap[n] = put[n];
    }
    let zeta = LadlagProcess::continuous(&tree, cap).unwrap();
    let pair = AdmissiblePair::new(&tree, xi, zeta).unwrap();
    let price = price_game_option(&pair, &model, &f, &tree).unwrap();
    let oracle = common::tilted_dynkin(&pair, &m, &tree);
    assert!((price.u0 - oracle[0]).abs() < 1e-10, "{} vs {}", price.u0, oracle[0]);
    assert!(price.u0 >= put[0]);
}
