//! Seeded random topologies in three flavours: a small generic network, a
//! large sparse network that is usually split into several islands, and a
//! densely connected one.

use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::NodeId;
use crate::error::{Error, Result};
use crate::network::Topology;
use crate::oracle;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyKind {
    /// Mean degree about 3, always connected.
    Generic,
    /// Mean degree about 2, left as generated.
    SparsePartitioned,
    /// Mean degree about n/2, connected, minimum degree at least n/4.
    Dense,
}

impl TopologyKind {
    pub const ALL: [TopologyKind; 3] = [
        TopologyKind::Generic,
        TopologyKind::SparsePartitioned,
        TopologyKind::Dense,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TopologyKind::Generic => "generic",
            TopologyKind::SparsePartitioned => "sparse-partitioned",
            TopologyKind::Dense => "dense",
        }
    }
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TopologyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TopologyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown topology kind {s:?}")))
    }
}

const RESAMPLES: usize = 32;

/// G(n, p) with p chosen for the requested mean degree.
fn gnp(n: u16, mean_degree: f64, rng: &mut ChaCha8Rng) -> Topology {
    let p = (mean_degree / f64::from(n - 1)).min(1.0);
    let mut t = Topology::from_edges(n, &[]).expect("nodes are distinct");
    for a in 0..n {
        for b in a + 1..n {
            if rng.random::<f64>() < p {
                t.add_edge(NodeId(a), NodeId(b));
            }
        }
    }
    t
}

/// Joins consecutive components with one random edge each.
fn connect_components(t: &mut Topology, rng: &mut ChaCha8Rng) {
    let comps: Vec<Vec<NodeId>> = oracle::components(t)
        .into_iter()
        .map(|c| c.into_iter().collect())
        .collect();
    for pair in comps.windows(2) {
        let a = *pair[0].choose(rng).expect("components are non-empty");
        let b = *pair[1].choose(rng).expect("components are non-empty");
        t.add_edge(a, b);
    }
}

/// Tops up every node below `min_degree` with edges to random non-neighbors.
fn raise_min_degree(t: &mut Topology, min_degree: usize, rng: &mut ChaCha8Rng) {
    let nodes: Vec<NodeId> = t.nodes().collect();
    for &v in &nodes {
        while t.degree(v) < min_degree {
            let options: Vec<NodeId> = nodes
                .iter()
                .copied()
                .filter(|&u| u != v && !t.has_edge(u, v))
                .collect();
            let Some(&u) = options.choose(rng) else { break };
            t.add_edge(u, v);
        }
    }
}

fn is_connected(t: &Topology) -> bool {
    oracle::components(t).len() == 1
}

/// Generates a topology of `n` nodes (ids `0..n`), deterministic in `(kind, n, seed)`.
pub fn generate_topology(kind: TopologyKind, n: usize, seed: u64) -> Result<Topology> {
    if !(2..=usize::from(u16::MAX)).contains(&n) {
        return Err(Error::InvalidCount(n));
    }
    let n16 = n as u16;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = match kind {
        TopologyKind::SparsePartitioned => gnp(n16, 2.0, &mut rng),
        TopologyKind::Generic => {
            let mut t = gnp(n16, 3.0, &mut rng);
            for _ in 0..RESAMPLES {
                if is_connected(&t) {
                    break;
                }
                t = gnp(n16, 3.0, &mut rng);
            }
            if !is_connected(&t) {
                connect_components(&mut t, &mut rng);
            }
            t
        }
        TopologyKind::Dense => {
            let min_degree = (n / 4).max(1);
            let ok = |t: &Topology| is_connected(t) && t.nodes().all(|v| t.degree(v) >= min_degree);
            let mean = n as f64 / 2.0;
            let mut t = gnp(n16, mean, &mut rng);
            for _ in 0..RESAMPLES {
                if ok(&t) {
                    break;
                }
                t = gnp(n16, mean, &mut rng);
            }
            if !ok(&t) {
                raise_min_degree(&mut t, min_degree, &mut rng);
                connect_components(&mut t, &mut rng);
            }
            t
        }
    };
    Ok(t)
}
