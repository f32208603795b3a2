//! Flit-level, cycle-accurate simulation of the layered NoC.
//!
//! Time advances in global ticks of the fastest layer's clock. A router in a
//! layer whose period is `P` ticks moves at most one flit per port every `P`
//! ticks, holds a head flit for `δ·P` ticks and every other flit for `P`
//! ticks. Crossing up into a slower layer costs one extra cycle of that layer
//! for synchronisation. The high vertical-throughput router widens the local
//! and vertical ports of slower routers so they move `P` flits per cycle.

mod engine;
pub mod stats;
pub mod traffic;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::routing::{RoutingAlgorithm, RoutingError, RoutingFunction, Variant};
use crate::topology::TopologyGraph;

pub use stats::{ActivityCounters, EnergyWeights, PacketRecord, SimReport, TraceEvent};
pub use traffic::{generate_traffic, read_trace, Flow, FlowGraph, Schedule, ScheduledPacket, Stage, TracePacket, TrafficSpec};

/// Position of a flit within its packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FlitKind {
    Head,
    Body,
    Tail,
    /// A one-flit packet: head and tail at once.
    Single,
}

impl FlitKind {
    pub fn of(seq: u32, length: u32) -> FlitKind {
        match (seq == 0, seq + 1 == length) {
            (true, true) => FlitKind::Single,
            (true, false) => FlitKind::Head,
            (false, true) => FlitKind::Tail,
            (false, false) => FlitKind::Body,
        }
    }

    pub fn is_head(self) -> bool {
        matches!(self, FlitKind::Head | FlitKind::Single)
    }

    pub fn is_tail(self) -> bool {
        matches!(self, FlitKind::Tail | FlitKind::Single)
    }
}

/// A flit in flight.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Flit {
    pub kind: FlitKind,
    pub packet_id: u32,
    pub seq_no: u32,
    pub creation_time: u64,
}

/// A packet as seen by the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimPacket {
    pub id: u32,
    pub src: crate::topology::RouterId,
    pub dst: crate::topology::RouterId,
    pub length: u32,
    pub inject_time: u64,
}

/// Clock of one layer in global ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClockDomain {
    pub period: u64,
    pub phase: u64,
}

impl ClockDomain {
    /// First edge at or after `tick`.
    pub fn align_up(&self, tick: u64) -> u64 {
        if tick <= self.phase {
            return self.phase;
        }
        let k = (tick - self.phase).div_ceil(self.period);
        self.phase + k * self.period
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouterKind {
    #[default]
    Standard,
    /// Slower layers get wide local and vertical ports.
    HighVt,
}

impl RouterKind {
    /// Wide vertical ports rely on routing that keeps slow-layer traversals
    /// off the horizontal ports of heterogeneous paths.
    pub fn check_routing(self, alg: &RoutingAlgorithm) -> Result<(), SimError> {
        if self == RouterKind::HighVt && !matches!(alg.variant, Variant::R1 | Variant::R2) {
            return Err(SimError::Config(format!(
                "high_vt routers require r1 or r2 routing, got {}",
                alg.variant.name()
            )));
        }
        Ok(())
    }
}

/// Simulation knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    pub warmup_ticks: u64,
    pub measure_ticks: u64,
    /// Ticks after the measurement window in which measured packets may
    /// still finish.
    pub drain_ticks: u64,
    pub seed: u64,
    /// Abort after this many ticks without any flit moving.
    pub watchdog_ticks: u64,
    /// Flits per virtual channel of a standard input port.
    pub buffer_depth: u32,
    pub vcs: u32,
    /// Virtual channels in layers slower than the fastest; defaults to 1
    /// with high-VT routers and to `vcs` otherwise.
    pub slow_layer_vcs: Option<u32>,
    /// Clock phase per layer in ticks (empty = all zero).
    pub phases: Vec<u64>,
    pub energy: EnergyWeights,
    pub record_trace: bool,
    /// Histogram bin width in ticks.
    pub histogram_bin_ticks: u64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            warmup_ticks: 0,
            measure_ticks: 10_000,
            drain_ticks: 100_000,
            seed: 1,
            watchdog_ticks: 10_000,
            buffer_depth: 8,
            vcs: 4,
            slow_layer_vcs: None,
            phases: Vec::new(),
            energy: EnergyWeights::default(),
            record_trace: false,
            histogram_bin_ticks: 10,
        }
    }
}

impl SimParams {
    pub fn validate(&self, layers: u32) -> Result<(), SimError> {
        if self.buffer_depth < 2 {
            return Err(SimError::Config("buffer depth must be at least 2".into()));
        }
        if self.vcs < 1 || self.slow_layer_vcs == Some(0) {
            return Err(SimError::Config("at least one virtual channel is required".into()));
        }
        if self.measure_ticks == 0 {
            return Err(SimError::Config("measurement window must be positive".into()));
        }
        if self.watchdog_ticks == 0 {
            return Err(SimError::Config("watchdog window must be positive".into()));
        }
        if !self.phases.is_empty() && self.phases.len() != layers as usize {
            return Err(SimError::Config(format!("{} clock phases given for {layers} layers", self.phases.len())));
        }
        Ok(())
    }

    /// Last tick that is simulated.
    pub fn cutoff_tick(&self) -> u64 {
        self.warmup_ticks + self.measure_ticks + self.drain_ticks
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("invalid traffic: {0}")]
    Traffic(String),
    #[error("routing failed: {0}")]
    Routing(#[from] RoutingError),
    #[error("no flit moved for {window} ticks (tick {tick}, {in_flight} flits in flight): {detail}")]
    Watchdog { tick: u64, window: u64, in_flight: u64, detail: String },
}

/// Generates traffic from `traffic` and simulates it.
pub fn run(
    g: &TopologyGraph,
    routing: &dyn RoutingFunction,
    kind: RouterKind,
    traffic: &TrafficSpec,
    params: &SimParams,
) -> Result<SimReport, SimError> {
    let schedule = generate_traffic(g, traffic, params.seed)?;
    run_schedule(g, routing, kind, &schedule, params)
}

/// Simulates an explicit schedule.
pub fn run_schedule(
    g: &TopologyGraph,
    routing: &dyn RoutingFunction,
    kind: RouterKind,
    schedule: &Schedule,
    params: &SimParams,
) -> Result<SimReport, SimError> {
    params.validate(g.stack().depth())?;
    engine::Engine::new(g, routing, kind, schedule, params).run()
}

#[cfg(test)]
mod tests;
