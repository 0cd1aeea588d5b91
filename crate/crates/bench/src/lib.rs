//! Fixtures shared by the benchmarks.

use miabnet::{generate_topology, Scenario, TopologyKind};

/// One discovery per request slot between fixed-stride node pairs on a generated network.
pub fn discovery_scenario(
    kind: TopologyKind,
    nodes: usize,
    requests: usize,
    seed: u64,
) -> Scenario {
    let topology = generate_topology(kind, nodes, seed).expect("valid node count");
    let mut scenario = Scenario::new(topology, seed);
    let gap = (u64::from(scenario.protocol.retry_limit) + 2) * scenario.protocol.timeout;
    let n = nodes as u16;
    for i in 0..requests as u16 {
        let src = i % n;
        let dest = (src + n / 2) % n;
        scenario = scenario.request(u64::from(i) * gap, src, dest);
    }
    scenario
}
