//! Deterministic fixtures shared by the solver benchmarks.

use drbsde_core::fuzz::{random_driver, random_pair, DriverKind, Regime};
use drbsde_core::{build_tree, driver_library, AdmissiblePair, Driver, ScenarioTree, Scheme, TimeGrid};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A solved-for instance: tree, barriers and driver.
pub struct Instance {
    pub tree: ScenarioTree,
    pub pair: AdmissiblePair,
    pub driver: Driver,
}

/// Uniform tree of `depth` steps over a unit horizon with irregular barriers
/// and the requested driver, reproducible from `seed`.
pub fn instance(depth: usize, scheme: Scheme, lambda: f64, driver: DriverKind, seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = TimeGrid::uniform(1.0, depth).expect("valid grid");
    let tree = build_tree(grid, lambda, scheme).expect("valid tree");
    let pair = random_pair(&mut rng, &tree, Regime::Irregular);
    let spec = random_driver(&mut rng, &tree, &[driver]);
    let driver = driver_library(&spec.name, &spec.params, &tree).expect("library driver");
    Instance { tree, pair, driver }
}
