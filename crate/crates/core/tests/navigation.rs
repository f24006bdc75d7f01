use proptest::prelude::*;
use topoplan::graph::validate_graph;
use topoplan::hierarchical::{
    run_episode, sample_episodes, LocalPolicyConfig, TablePlanner, DEFAULT_BUDGET,
};
use topoplan::symbolic::gt_next_hops;
use topoplan::worldgen::{generate_environment, GenParams, NoiseModel, GRID_RESOLUTION};
use topoplan::{Error, TopoGraph};

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    // The ground-truth planner never fails on a generated world, and every
    // episode obeys the length and stopping rules.
    #[test]
    fn oracle_reaches_every_sampled_target(env_seed in 0u64..5000, ep_seed in any::<u64>()) {
        let env = match generate_environment(&GenParams::default(), &NoiseModel::default(), env_seed) {
            Ok(e) => e,
            Err(Error::Generation(_)) => return Ok(()),
            Err(e) => panic!("{e}"),
        };
        let g = &env.graph;
        prop_assert!(validate_graph(g).is_empty());
        let cfg = LocalPolicyConfig::default();
        let specs = sample_episodes(&env.grid, g, 4, ep_seed, &cfg, 1.0).unwrap();
        for spec in &specs {
            let mut oracle = TablePlanner::new(|g: &TopoGraph, t| gt_next_hops(g, t));
            let r = run_episode(&env.grid, g, &mut oracle, spec.source, &spec.query, DEFAULT_BUDGET, &cfg).unwrap();
            prop_assert!(r.success, "env {} from {:?}", env_seed, spec.source);
            prop_assert!(r.low_level_steps <= DEFAULT_BUDGET);
            prop_assert!(r.achieved_length >= r.geodesic_optimum - GRID_RESOLUTION);
            let end = r.trace.last().unwrap().agent_cell;
            let goal = g.locations[r.target_node];
            let c = env.grid.cell_center(end);
            prop_assert!(((c[0] - goal[0]).powi(2) + (c[1] - goal[1]).powi(2)).sqrt() <= cfg.stop_radius + 1e-12);
        }
    }
}

// Halfway to node 3 the agent is nearest node 2, whose next hop leads back
// to node 15.
#[test]
fn oracle_does_not_oscillate_between_waypoints() {
    let env = generate_environment(&GenParams::default(), &NoiseModel::default(), 1129).unwrap();
    let g = &env.graph;
    let cfg = LocalPolicyConfig::default();
    let mut oracle = TablePlanner::new(|g: &TopoGraph, t| gt_next_hops(g, t));
    let r = run_episode(&env.grid, g, &mut oracle, (107, 88), g.feature_row(13), DEFAULT_BUDGET, &cfg).unwrap();
    assert!(r.success);
    let hops: Vec<usize> = r.trace.iter().filter_map(|t| t.proposed_node).collect();
    let mut dedup = hops.clone();
    dedup.dedup();
    let unique: std::collections::HashSet<_> = dedup.iter().collect();
    assert_eq!(unique.len(), dedup.len(), "revisited a waypoint: {dedup:?}");
}
