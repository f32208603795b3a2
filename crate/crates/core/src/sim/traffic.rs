//! Traffic generation: uniform random, stage-to-stage flow graphs and
//! trace replay, all turned into a list of packets with release rules.

use std::collections::BTreeMap;
use std::io::Read;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::topology::{Address, RouterId, TopologyGraph};

/// How packets are created.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum TrafficSpec {
    /// Every router injects with probability `rate / packet_length` per own
    /// clock cycle (so `rate` is in flits per router cycle), towards a
    /// uniformly drawn other router. Injection stops after `until_tick`.
    Uniform { rate: f64, packet_length: u32, until_tick: u64 },
    /// Stage-to-stage flows repeated over frames.
    FlowGraph(FlowGraph),
    /// Explicit, timestamped packets.
    Trace { packets: Vec<TracePacket> },
}

/// One packet of a trace; `tick` is rounded up to the source router's clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TracePacket {
    pub tick: u64,
    pub src: u32,
    pub dst: u32,
    pub length: u32,
}

/// A group of routers that performs one processing step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub routers: Vec<Address>,
    /// Ticks between receiving the last input of a frame and sending results.
    #[serde(default)]
    pub compute_ticks: u64,
}

/// Data sent from every router of one stage to the routers of another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flow {
    pub from: String,
    pub to: String,
    /// Packets per frame; packet `k` goes from the `k mod |from|`-th router
    /// of `from` to the `k mod |to|`-th router of `to`.
    pub packets_per_frame: u32,
    pub packet_length: u32,
}

/// A pipelined application: frames enter every `frame_interval_ticks`, and
/// a router sends its packets of a frame once all packets of that frame
/// addressed to it by upstream flows have arrived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowGraph {
    pub stages: Vec<Stage>,
    pub flows: Vec<Flow>,
    pub frames: u32,
    pub frame_interval_ticks: u64,
}

/// A packet waiting to be released into its source queue.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduledPacket {
    pub src: RouterId,
    pub dst: RouterId,
    pub length: u32,
    /// Earliest release tick (before clock alignment).
    pub earliest: u64,
    /// Packets whose tails must be delivered before this one is released.
    pub deps: Vec<usize>,
    /// Extra ticks between the last dependency arriving and the release.
    pub delay_after_deps: u64,
}

/// Packets in release-priority order (earliest first, ties by index).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Schedule {
    pub packets: Vec<ScheduledPacket>,
}

impl Schedule {
    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    /// Single packet at `tick`; handy for zero-load measurements.
    pub fn single(src: RouterId, dst: RouterId, length: u32, tick: u64) -> Schedule {
        Schedule { packets: vec![ScheduledPacket { src, dst, length, earliest: tick, deps: vec![], delay_after_deps: 0 }] }
    }
}

fn bad(msg: impl Into<String>) -> SimError {
    SimError::Traffic(msg.into())
}

/// Expands a traffic description into a concrete schedule.
pub fn generate_traffic(g: &TopologyGraph, spec: &TrafficSpec, seed: u64) -> Result<Schedule, SimError> {
    match spec {
        TrafficSpec::Uniform { rate, packet_length, until_tick } => uniform(g, *rate, *packet_length, *until_tick, seed),
        TrafficSpec::FlowGraph(fg) => flow_graph(g, fg),
        TrafficSpec::Trace { packets } => trace(g, packets),
    }
}

fn uniform(g: &TopologyGraph, rate: f64, length: u32, until: u64, seed: u64) -> Result<Schedule, SimError> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(bad(format!("injection rate {rate} is outside [0, 1]")));
    }
    if length == 0 {
        return Err(bad("packet length must be at least one flit"));
    }
    let mut packets = Vec::new();
    if rate == 0.0 {
        return Ok(Schedule { packets });
    }
    let n = g.router_count() as u32;
    let p = rate / length as f64;
    let periods: Vec<u64> = g.routers().iter().map(|r| g.stack().period_ticks(r.addr.z)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for tick in 0..until {
        for src in 0..n {
            if tick % periods[src as usize] != 0 || !rng.gen_bool(p) {
                continue;
            }
            let mut dst = rng.gen_range(0..n - 1);
            if dst >= src {
                dst += 1;
            }
            packets.push(ScheduledPacket {
                src: RouterId(src),
                dst: RouterId(dst),
                length,
                earliest: tick,
                deps: vec![],
                delay_after_deps: 0,
            });
        }
    }
    Ok(Schedule { packets })
}

fn trace(g: &TopologyGraph, list: &[TracePacket]) -> Result<Schedule, SimError> {
    let n = g.router_count() as u32;
    let mut packets = Vec::with_capacity(list.len());
    for (i, p) in list.iter().enumerate() {
        if p.src >= n || p.dst >= n {
            return Err(bad(format!("trace entry {i}: router id out of range (0..{n})")));
        }
        if p.length == 0 {
            return Err(bad(format!("trace entry {i}: packet length must be at least one flit")));
        }
        packets.push(ScheduledPacket {
            src: RouterId(p.src),
            dst: RouterId(p.dst),
            length: p.length,
            earliest: p.tick,
            deps: vec![],
            delay_after_deps: 0,
        });
    }
    // Stable sort keeps file order among equal ticks.
    packets.sort_by_key(|p| p.earliest);
    Ok(Schedule { packets })
}

/// Reads a trace CSV with columns `tick, src, dst, length` (router ids).
pub fn read_trace<R: Read>(input: R) -> Result<Vec<TracePacket>, SimError> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    for col in ["tick", "src", "dst", "length"] {
        if !headers.iter().any(|h| h.trim() == col) {
            return Err(bad(format!("trace is missing column '{col}'")));
        }
    }
    r.deserialize().map(|row| row.map_err(|e| bad(e.to_string()))).collect()
}

fn flow_graph(g: &TopologyGraph, fg: &FlowGraph) -> Result<Schedule, SimError> {
    let mut stage_ids = BTreeMap::new();
    let mut members: Vec<Vec<RouterId>> = Vec::new();
    for (i, s) in fg.stages.iter().enumerate() {
        if s.routers.is_empty() {
            return Err(bad(format!("stage '{}' has no routers", s.name)));
        }
        if stage_ids.insert(s.name.as_str(), i).is_some() {
            return Err(bad(format!("stage '{}' is defined twice", s.name)));
        }
        let ids = s
            .routers
            .iter()
            .map(|&a| g.id_of(a).ok_or_else(|| bad(format!("stage '{}': {a} is not a router", s.name))))
            .collect::<Result<Vec<_>, _>>()?;
        members.push(ids);
    }
    let stage = |name: &str| stage_ids.get(name).copied().ok_or_else(|| bad(format!("unknown stage '{name}'")));
    let mut edges = Vec::new();
    for f in &fg.flows {
        if f.packets_per_frame == 0 || f.packet_length == 0 {
            return Err(bad(format!("flow {} -> {} must carry at least one packet of one flit", f.from, f.to)));
        }
        edges.push((stage(&f.from)?, stage(&f.to)?));
    }
    let order = topological_flow_order(fg.stages.len(), &edges)?;

    let mut packets = Vec::new();
    for frame in 0..fg.frames as u64 {
        let start = frame * fg.frame_interval_ticks;
        // Packets of this frame received per (stage, router).
        let mut inbox: BTreeMap<(usize, RouterId), Vec<usize>> = BTreeMap::new();
        for &fi in &order {
            let f = &fg.flows[fi];
            let (from, to) = edges[fi];
            for k in 0..f.packets_per_frame as usize {
                let src = members[from][k % members[from].len()];
                let dst = members[to][k % members[to].len()];
                let deps = inbox.get(&(from, src)).cloned().unwrap_or_default();
                let id = packets.len();
                packets.push(ScheduledPacket {
                    src,
                    dst,
                    length: f.packet_length,
                    earliest: start,
                    delay_after_deps: if deps.is_empty() { 0 } else { fg.stages[from].compute_ticks },
                    deps,
                });
                inbox.entry((to, dst)).or_default().push(id);
            }
        }
    }
    Ok(Schedule { packets })
}

/// Flow indices ordered so that every flow comes after all flows into its
/// source stage.
fn topological_flow_order(stages: usize, edges: &[(usize, usize)]) -> Result<Vec<usize>, SimError> {
    let mut indeg = vec![0usize; stages];
    for &(_, to) in edges {
        indeg[to] += 1;
    }
    let mut ready: Vec<usize> = (0..stages).filter(|&s| indeg[s] == 0).collect();
    let mut stage_order = Vec::new();
    while let Some(s) = ready.first().copied() {
        ready.remove(0);
        stage_order.push(s);
        for &(from, to) in edges {
            if from == s {
                indeg[to] -= 1;
                if indeg[to] == 0 {
                    ready.push(to);
                }
            }
        }
    }
    if stage_order.len() != stages {
        return Err(bad("flow graph contains a cycle"));
    }
    let mut order = Vec::new();
    for s in stage_order {
        order.extend(edges.iter().enumerate().filter(|(_, &(from, _))| from == s).map(|(i, _)| i));
    }
    Ok(order)
}
