//! TOML scenario files.
//!
//! ```toml
//! seed = 7
//! horizon = 400            # optional
//!
//! [topology]
//! file = "net.json"        # or: kind = "generic", nodes = 15, seed = 3
//!
//! [protocol]               # every field optional
//! retry_limit = 2
//!
//! [[requests]]
//! at = 0
//! src = 0
//! dest = 1
//!
//! [random_requests]        # optional
//! count = 10
//!
//! [[faults]]
//! at = 50
//! action = "fail_node"
//! node = 2
//!
//! [output]                 # optional
//! trace = "trace.jsonl"
//! summary = "summary.json"
//! dot = "net.dot"
//! ```
//!
//! Relative paths are resolved against the directory holding the config file.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::domain::{NodeId, Tick};
use crate::engine::{AppRequest, Fault, FaultInjection, Scenario};
use crate::error::{Error, Result};
use crate::fsm::ProtocolConfig;
use crate::network::{Topology, TopologyFile};
use crate::topogen::{generate_topology, TopologyKind};

/// Stream used for drawing random request endpoints; node streams stay below 2^16.
const REQUEST_STREAM: u64 = 1 << 32;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    seed: u64,
    horizon: Option<Tick>,
    topology: TopologySpec,
    #[serde(default)]
    protocol: ProtocolOverrides,
    #[serde(default)]
    requests: Vec<RequestSpec>,
    random_requests: Option<RandomRequests>,
    #[serde(default)]
    faults: Vec<FaultSpec>,
    #[serde(default)]
    output: OutputSpec,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologySpec {
    file: Option<PathBuf>,
    kind: Option<TopologyKind>,
    nodes: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProtocolOverrides {
    hop_limit: Option<u32>,
    timeout: Option<Tick>,
    retry_limit: Option<u32>,
    queue_cap: Option<usize>,
    per_hop_latency: Option<Tick>,
    beacon_period: Option<Tick>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RequestSpec {
    at: Tick,
    src: NodeId,
    dest: NodeId,
    #[serde(default)]
    payload_len: u32,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RandomRequests {
    count: usize,
    interval: Option<Tick>,
    #[serde(default)]
    payload_len: u32,
    #[serde(default)]
    start: Tick,
}

#[derive(Debug, Deserialize)]
struct FaultSpec {
    at: Tick,
    #[serde(flatten)]
    fault: Fault,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputSpec {
    trace: Option<PathBuf>,
    summary: Option<PathBuf>,
    dot: Option<PathBuf>,
}

/// Output locations named by a config file.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Outputs {
    pub trace: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    pub dot: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoadedConfig {
    pub scenario: Scenario,
    pub outputs: Outputs,
}

fn protocol_for(nodes: usize, o: &ProtocolOverrides) -> ProtocolConfig {
    let mut p = ProtocolConfig::for_network(nodes);
    p.hop_limit = o.hop_limit.unwrap_or(p.hop_limit);
    p.per_hop_latency = o.per_hop_latency.unwrap_or(p.per_hop_latency);
    p.timeout = o
        .timeout
        .unwrap_or(2 * Tick::from(p.hop_limit) * p.per_hop_latency);
    p.retry_limit = o.retry_limit.unwrap_or(p.retry_limit);
    p.queue_cap = o.queue_cap.unwrap_or(p.queue_cap);
    p.beacon_period = o.beacon_period.unwrap_or(p.beacon_period);
    p
}

fn load_topology(spec: &TopologySpec, base: &Path, seed: u64) -> Result<Topology> {
    match (&spec.file, spec.kind) {
        (Some(_), Some(_)) => Err(Error::Config(
            "topology: give either `file` or `kind`, not both".into(),
        )),
        (None, None) => Err(Error::Config(
            "topology: one of `file` or `kind` is required".into(),
        )),
        (Some(file), None) => {
            let path = base.join(file);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| Error::Config(format!("topology.file {}: {e}", path.display())))?;
            let parsed: TopologyFile = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("topology.file {}: {e}", path.display())))?;
            Topology::from_file(&parsed)
                .map_err(|e| Error::Config(format!("topology.file {}: {e}", path.display())))
        }
        (None, Some(kind)) => {
            let nodes = spec
                .nodes
                .ok_or_else(|| Error::Config("topology.nodes is required with `kind`".into()))?;
            generate_topology(kind, nodes, spec.seed.unwrap_or(seed))
                .map_err(|e| Error::Config(format!("topology.nodes: {e}")))
        }
    }
}

fn random_requests(
    spec: &RandomRequests,
    topology: &Topology,
    protocol: &ProtocolConfig,
    seed: u64,
) -> Result<Vec<AppRequest>> {
    let nodes: Vec<NodeId> = topology.nodes().collect();
    if nodes.len() < 2 {
        return Err(Error::Config(
            "random_requests: need at least two nodes".into(),
        ));
    }
    let interval = spec
        .interval
        .unwrap_or((Tick::from(protocol.retry_limit) + 2) * protocol.timeout);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(REQUEST_STREAM);
    Ok((0..spec.count)
        .map(|i| {
            let s = rng.random_range(0..nodes.len());
            let mut d = rng.random_range(0..nodes.len() - 1);
            if d >= s {
                d += 1;
            }
            AppRequest {
                at: spec.start + i as Tick * interval,
                src: nodes[s],
                dest: nodes[d],
                payload_len: spec.payload_len,
            }
        })
        .collect())
}

/// Parses config text. `base` anchors relative paths.
pub fn parse_config(text: &str, base: &Path) -> Result<LoadedConfig> {
    let cfg: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let topology = load_topology(&cfg.topology, base, cfg.seed)?;
    let protocol = protocol_for(topology.node_count(), &cfg.protocol);
    let mut requests: Vec<AppRequest> = cfg
        .requests
        .iter()
        .map(|r| AppRequest {
            at: r.at,
            src: r.src,
            dest: r.dest,
            payload_len: r.payload_len,
        })
        .collect();
    if let Some(spec) = &cfg.random_requests {
        requests.extend(random_requests(spec, &topology, &protocol, cfg.seed)?);
    }
    let scenario = Scenario {
        topology,
        seed: cfg.seed,
        protocol,
        requests,
        faults: cfg
            .faults
            .iter()
            .map(|f| FaultInjection {
                at: f.at,
                fault: f.fault,
            })
            .collect(),
        horizon: cfg.horizon,
    };
    scenario.validate()?;
    let resolve = |p: &Option<PathBuf>| p.as_ref().map(|p| base.join(p));
    Ok(LoadedConfig {
        scenario,
        outputs: Outputs {
            trace: resolve(&cfg.output.trace),
            summary: resolve(&cfg.output.summary),
            dot: resolve(&cfg.output.dot),
        },
    })
}

/// Reads and parses a config file; errors are prefixed with the file name.
pub fn load_config(path: &Path) -> Result<LoadedConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&text, base).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 1

[topology]
kind = "generic"
nodes = 2

[[requests]]
at = 0
src = 0
dest = 1
"#;

    #[test]
    fn minimal_config() {
        let loaded = parse_config(MINIMAL, Path::new(".")).unwrap();
        let s = &loaded.scenario;
        assert_eq!(s.seed, 1);
        assert_eq!(s.topology.node_count(), 2);
        assert_eq!(s.protocol, ProtocolConfig::for_network(2));
        assert_eq!(s.requests.len(), 1);
        assert_eq!(loaded.outputs, Outputs::default());
    }

    #[test]
    fn missing_seed_names_the_field() {
        let text = MINIMAL.replace("seed = 1", "");
        let Err(Error::Config(msg)) = parse_config(&text, Path::new(".")) else {
            panic!("expected a config error");
        };
        assert!(msg.contains("seed"), "{msg}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = format!("{MINIMAL}\n[protocol]\nhop_limt = 3\n");
        let Err(Error::Config(msg)) = parse_config(&text, Path::new(".")) else {
            panic!("expected a config error");
        };
        assert!(msg.contains("hop_limt"), "{msg}");
    }

    #[test]
    fn protocol_overrides_and_derived_timeout() {
        let text = format!("{MINIMAL}\n[protocol]\nhop_limit = 5\nretry_limit = 1\n");
        let p = parse_config(&text, Path::new("."))
            .unwrap()
            .scenario
            .protocol;
        assert_eq!(p.hop_limit, 5);
        assert_eq!(p.timeout, 10);
        assert_eq!(p.retry_limit, 1);
        assert_eq!(p.queue_cap, 64);
    }

    #[test]
    fn faults_and_outputs() {
        let text = r#"
seed = 3
horizon = 99

[topology]
kind = "generic"
nodes = 2

[[faults]]
at = 5
action = "fail_link"
a = 0
b = 1

[[faults]]
at = 9
action = "restore_node"
node = 1

[output]
trace = "out/t.jsonl"
"#;
        let loaded = parse_config(text, Path::new("/tmp/cfg")).unwrap();
        assert_eq!(loaded.scenario.horizon, Some(99));
        assert_eq!(
            loaded.scenario.faults,
            vec![
                FaultInjection {
                    at: 5,
                    fault: Fault::FailLink {
                        a: NodeId(0),
                        b: NodeId(1)
                    }
                },
                FaultInjection {
                    at: 9,
                    fault: Fault::RestoreNode { node: NodeId(1) }
                },
            ]
        );
        assert_eq!(
            loaded.outputs.trace,
            Some(PathBuf::from("/tmp/cfg/out/t.jsonl"))
        );
    }

    #[test]
    fn topology_file_is_relative_to_config() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("net.json"),
            r#"{"nodes":[0,1,2],"edges":[[0,1],[1,2]]}"#,
        )
        .unwrap();
        let cfg = dir.path().join("run.toml");
        std::fs::write(
            &cfg,
            "seed = 4\n[topology]\nfile = \"net.json\"\n[[requests]]\nat = 0\nsrc = 0\ndest = 2\n",
        )
        .unwrap();
        let loaded = load_config(&cfg).unwrap();
        assert_eq!(loaded.scenario.topology.edge_count(), 2);
    }

    #[test]
    fn errors_carry_the_file_name() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("broken.toml");
        std::fs::write(&cfg, "seed = 4\n[topology]\nfile = \"missing.json\"\n").unwrap();
        let Err(Error::Config(msg)) = load_config(&cfg) else {
            panic!("expected a config error");
        };
        assert!(
            msg.contains("broken.toml") && msg.contains("topology.file"),
            "{msg}"
        );
    }

    #[test]
    fn random_requests_are_distinct_and_spaced() {
        let text = r#"
seed = 9
[topology]
kind = "generic"
nodes = 15
[random_requests]
count = 20
"#;
        let s = parse_config(text, Path::new(".")).unwrap().scenario;
        let gap = (Tick::from(s.protocol.retry_limit) + 2) * s.protocol.timeout;
        assert_eq!(s.requests.len(), 20);
        for (i, r) in s.requests.iter().enumerate() {
            assert_ne!(r.src, r.dest);
            assert_eq!(r.at, i as Tick * gap);
        }
        let again = parse_config(text, Path::new(".")).unwrap().scenario;
        assert_eq!(s.requests, again.requests);
    }

    #[test]
    fn request_outside_topology_is_rejected() {
        let text = MINIMAL.replace("dest = 1", "dest = 5");
        assert!(matches!(
            parse_config(&text, Path::new(".")),
            Err(Error::Config(_))
        ));
    }
}
