use std::collections::HashSet;
use std::time::Duration;

use dei_gossip::scenarios::{churn_recovery, max_hops, propagation, Tally, TOPIC};
use dei_gossip::sim::{SimConfig, SimNetwork};
use proptest::prelude::*;

#[test]
fn eventual_delivery_without_churn() {
    let config = SimConfig::default();
    for n in [4, 8, 16, 32] {
        let mut tally = Tally::default();
        for seed in 0..3 {
            tally.add(propagation(&config, seed, n, 1, 50, Duration::from_millis(300), Duration::from_secs(10)));
        }
        assert!(tally.rate() >= 0.99, "n={n}: {tally:?}");
    }
}

#[test]
fn lossy_links_recover_through_gossip() {
    let config = SimConfig {
        drop_prob: 0.02,
        ..Default::default()
    };
    let mut tally = Tally::default();
    for seed in 0..3 {
        tally.add(propagation(&config, seed, 16, 1, 50, Duration::from_millis(300), Duration::from_secs(10)));
    }
    assert!(tally.rate() >= 0.95, "{tally:?}");
}

#[test]
fn churned_node_recovers_in_ttl_messages() {
    let config = SimConfig::default();
    let mut tally = Tally::default();
    for seed in 0..5 {
        tally.add(churn_recovery(&config, seed, 8, 1, 1, Duration::from_millis(500), Duration::from_secs(30), Duration::from_secs(10)));
    }
    assert!(tally.total > 0);
    assert!(tally.rate() >= 0.95, "{tally:?}");
}

#[test]
fn an_eighth_of_a_large_mesh_churning_together_recovers() {
    let config = SimConfig::default();
    let t = churn_recovery(&config, 7, 32, 2, 4, Duration::from_millis(500), Duration::from_secs(30), Duration::from_secs(10));
    assert_eq!(t.total % 4, 0);
    assert!(t.rate() >= 0.95, "{t:?}");
}

#[test]
fn messages_older_than_the_mcache_ttl_are_not_counted() {
    let config = SimConfig {
        gossip: dei_gossip::GossipConfig {
            mcache_ttl_secs: 5.0,
            ..Default::default()
        },
        ..Default::default()
    };
    let t = churn_recovery(&config, 1, 8, 1, 1, Duration::from_millis(500), Duration::from_secs(20), Duration::from_secs(10));
    // only the last 5 s of a 20 s absence are eligible
    assert!(t.total <= 11, "{t:?}");
    assert!(t.rate() >= 0.9, "{t:?}");
}

#[test]
fn eight_node_ring_reaches_everyone_in_few_hops() {
    let config = SimConfig::default();
    let within = (0..200)
        .filter(|&seed| max_hops(&config, seed, 8, 1, Duration::from_secs(10)).is_some_and(|h| h <= 4))
        .count();
    assert!(within >= 190, "{within}/200");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Under loss and churn, each message reaches each node's buffer at
    /// most once, and meshes only contain connected subscribers.
    #[test]
    fn no_duplicate_delivery(
        seed in any::<u64>(),
        n in 2usize..10,
        drop_prob in 0.0f64..0.3,
        script in proptest::collection::vec((0usize..10, 0u8..4), 1..40),
    ) {
        let config = SimConfig { drop_prob, ..Default::default() };
        let mut sim = SimNetwork::with_nodes(config, seed, n);
        sim.connect_ring_with_chords(1);
        sim.subscribe_all(TOPIC);
        sim.run_for(Duration::from_secs(2));
        let mut seen: Vec<HashSet<_>> = vec![HashSet::new(); n];
        for (who, action) in script {
            let who = who % n;
            match action {
                0 | 1 => { let _ = sim.publish(who, TOPIC, vec![action]); }
                2 => sim.set_offline(who),
                _ => sim.set_online(who),
            }
            sim.run_for(Duration::from_millis(700));
            for node in 0..n {
                for m in sim.drain(node) {
                    prop_assert!(seen[node].insert(m.id), "duplicate at node {}", node);
                }
                let engine = sim.engine(node);
                let known: HashSet<_> = engine.topic_peers(TOPIC).into_iter().collect();
                prop_assert!(engine.mesh(TOPIC).iter().all(|p| known.contains(p)) || !sim.is_online(node));
                prop_assert!(engine.mesh(TOPIC).len() <= engine.config().d_high.max(known.len()));
            }
        }
    }
}
