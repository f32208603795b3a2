//! Zero-load latency, throughput, propagation speed and the rerouting
//! threshold.
//!
//! Closed-form quantities that take physical distances (µm) are real-valued.
//! Route-level estimates, which are compared one-to-one against the
//! simulator, are exact integer picoseconds.

use serde::Serialize;
use thiserror::Error;

use crate::topology::{Direction, Hop, Position, StackConfig, TopologyGraph};

/// Hop count standing in for "never reroute": larger than any chip extent.
pub const HOP_SENTINEL: u32 = i32::MAX as u32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("packet endpoints are in layers {0} and {1}, expected both in layer {2}")]
    CrossLayer(u32, u32, u32),
    #[error("pipeline depth {chi} exceeds head delay {delta}")]
    PipelineTooDeep { chi: u32, delta: u32 },
    #[error("direction {dir} does not lead from layer {from} to layer {to}")]
    WrongDirection { dir: Direction, from: u32, to: u32 },
    #[error("layer span {0}..={1} is empty or outside the stack")]
    BadSpan(u32, u32),
    #[error("route is empty")]
    EmptyRoute,
    #[error("route is disconnected after router {0}")]
    Disconnected(u32),
    #[error("packet length must be at least one flit")]
    ZeroLength,
}

/// A model-level packet between two physical positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Packet {
    pub src: Position,
    pub dst: Position,
    pub length: u32,
}

/// Timing view of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LayerTiming {
    pub layer: u32,
    pub head_delay: u32,
    pub pipeline_depth: u32,
    pub clk_period_ps: u64,
    pub router_pitch_um: f64,
}

impl LayerTiming {
    pub fn of(stack: &StackConfig, z: u32) -> LayerTiming {
        let t = &stack.layer(z).tech;
        LayerTiming {
            layer: z,
            head_delay: t.head_delay,
            pipeline_depth: t.pipeline_depth,
            clk_period_ps: t.clk_period_ps,
            router_pitch_um: t.router_pitch_um,
        }
    }

    /// Time a head flit spends in one router, `δ·clk`.
    pub fn router_delay_ps(&self) -> u64 {
        self.head_delay as u64 * self.clk_period_ps
    }
}

/// Manhattan distance between the endpoints in µm.
pub fn horizontal_distance(pkt: &Packet) -> f64 {
    (pkt.src.x_um - pkt.dst.x_um).abs() + (pkt.src.y_um - pkt.dst.y_um).abs()
}

/// Head latency of a packet that stays in one layer: `(s/ρ + 1)·δ·clk`, in ps.
pub fn head_latency_h(pkt: &Packet, t: &LayerTiming) -> Result<f64, ModelError> {
    if pkt.src.z != t.layer || pkt.dst.z != t.layer {
        return Err(ModelError::CrossLayer(pkt.src.z, pkt.dst.z, t.layer));
    }
    let hops = horizontal_distance(pkt) / t.router_pitch_um;
    Ok((hops + 1.0) * t.router_delay_ps() as f64)
}

/// Router throughput for `l`-flit packets, in flits per second.
pub fn throughput_h(pkt: &Packet, t: &LayerTiming) -> Result<f64, ModelError> {
    if pkt.length == 0 {
        return Err(ModelError::ZeroLength);
    }
    if t.pipeline_depth > t.head_delay {
        return Err(ModelError::PipelineTooDeep { chi: t.pipeline_depth, delta: t.head_delay });
    }
    let l = pkt.length as f64;
    let cycles = l + (t.head_delay - t.pipeline_depth) as f64;
    Ok(l / (cycles * t.clk_period_ps as f64 * 1e-12))
}

/// Head latency of a purely vertical transfer between the layers of
/// `pkt.src` and `pkt.dst`, in ps.
///
/// Every router of the spanned layers contributes `δ·clk`. Going up, every
/// crossing into a slower clock domain additionally costs one cycle of the
/// slower layer for synchronisation.
pub fn head_latency_v(pkt: &Packet, stack: &StackConfig, dir: Direction) -> Result<u64, ModelError> {
    let (from, to) = (pkt.src.z, pkt.dst.z);
    if from == 0 || to == 0 || from > stack.depth() || to > stack.depth() {
        return Err(ModelError::BadSpan(from, to));
    }
    if !dir.is_vertical() {
        return Err(ModelError::WrongDirection { dir, from, to });
    }
    if from == to {
        // Degenerate transfer: a single router of that layer.
        return Ok(LayerTiming::of(stack, from).router_delay_ps());
    }
    let ok = match dir {
        Direction::Down => from < to,
        Direction::Up => from > to,
        _ => false,
    };
    if !ok {
        return Err(ModelError::WrongDirection { dir, from, to });
    }
    let (lo, hi) = (from.min(to), from.max(to));
    let mut total: u64 = (lo..=hi).map(|z| LayerTiming::of(stack, z).router_delay_ps()).sum();
    if dir == Direction::Up {
        for z in lo..hi {
            total += sync_penalty_ps(stack, z + 1, z);
        }
    }
    Ok(total)
}

/// Synchronisation cost of moving a flit from layer `from` to layer `to`.
fn sync_penalty_ps(stack: &StackConfig, from: u32, to: u32) -> u64 {
    let (a, b) = (stack.layer(from).tech.clk_period_ps, stack.layer(to).tech.clk_period_ps);
    if to < from && b > a {
        b
    } else {
        0
    }
}

/// Throughput of a vertical path spanning layers `lo..=hi`: the slowest
/// layer's router throughput.
pub fn throughput_v(pkt: &Packet, stack: &StackConfig, lo: u32, hi: u32) -> Result<f64, ModelError> {
    if lo == 0 || lo > hi || hi > stack.depth() {
        return Err(ModelError::BadSpan(lo, hi));
    }
    let mut best = f64::INFINITY;
    for z in lo..=hi {
        best = best.min(throughput_h(pkt, &LayerTiming::of(stack, z))?);
    }
    Ok(best)
}

/// Head-flit propagation speed in m/s: `ρ / (δ·clk)`.
pub fn propagation_speed(t: &LayerTiming) -> f64 {
    (t.router_pitch_um * 1e-6) / (t.router_delay_ps() as f64 * 1e-12)
}

/// Distance beyond which detouring through a faster layer pays off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum RerouteThreshold {
    /// Threshold distance in µm.
    Distance(f64),
    /// The detour never pays off.
    Never,
}

impl RerouteThreshold {
    pub fn distance_um(&self) -> Option<f64> {
        match self {
            RerouteThreshold::Distance(d) => Some(*d),
            RerouteThreshold::Never => None,
        }
    }
}

/// Rerouting threshold between an upper layer `slow` and a lower layer `fast`.
pub fn rerouting_threshold_phi(slow: &LayerTiming, fast: &LayerTiming) -> RerouteThreshold {
    if slow.layer >= fast.layer {
        return RerouteThreshold::Never;
    }
    let (ds, dl) = (slow.router_delay_ps() as f64, fast.router_delay_ps() as f64);
    let (rs, rl) = (slow.router_pitch_um, fast.router_pitch_um);
    let denominator = ds * rl - dl * rs;
    if denominator <= 0.0 {
        return RerouteThreshold::Never;
    }
    let numerator = (ds + dl + slow.clk_period_ps as f64) * rs * rl;
    RerouteThreshold::Distance(numerator / denominator)
}

/// The threshold as a hop count on the bottom layer's grid.
pub fn rerouting_threshold_hops(phi: RerouteThreshold, fast_pitch_um: f64) -> u32 {
    match phi {
        RerouteThreshold::Never => HOP_SENTINEL,
        RerouteThreshold::Distance(d) => {
            let q = d / fast_pitch_um;
            // Snap values within rounding noise of an integer before the ceiling.
            let snapped = if (q - q.round()).abs() < 1e-9 { q.round() } else { q.ceil() };
            snapped.min(HOP_SENTINEL as f64) as u32
        }
    }
}

/// Hop thresholds of every layer towards target layer `target`; index
/// `z − 1` holds layer `z`'s threshold.
pub fn hop_thresholds(stack: &StackConfig, target: u32) -> Vec<u32> {
    let fast = LayerTiming::of(stack, target);
    (1..=stack.depth())
        .map(|z| {
            let phi = rerouting_threshold_phi(&LayerTiming::of(stack, z), &fast);
            rerouting_threshold_hops(phi, stack.grid_unit_um())
        })
        .collect()
}

/// Zero-load head latency of a concrete route, in ps.
pub fn route_latency_estimate(route: &[Hop], g: &TopologyGraph) -> Result<u64, ModelError> {
    check_route(route, g)?;
    let stack = g.stack();
    let mut total = 0;
    for (i, hop) in route.iter().enumerate() {
        let z = g.addr(hop.router).z;
        total += LayerTiming::of(stack, z).router_delay_ps();
        if i + 1 < route.len() {
            total += sync_penalty_ps(stack, z, g.addr(route[i + 1].router).z);
        }
    }
    Ok(total)
}

fn check_route(route: &[Hop], g: &TopologyGraph) -> Result<(), ModelError> {
    let last = route.last().ok_or(ModelError::EmptyRoute)?;
    for w in route.windows(2) {
        let next = w[0].out.and_then(|d| g.neighbor(w[0].router, d));
        if next != Some(w[1].router) {
            return Err(ModelError::Disconnected(w[0].router.0));
        }
    }
    if last.out.is_some() {
        return Err(ModelError::Disconnected(last.router.0));
    }
    Ok(())
}

/// Time between successive flits of one packet at zero load, in ps: the
/// slowest port the packet passes through.
///
/// With `high_vt`, routers slower than the fastest layer move a full fast
/// cycle's worth of flits per slow cycle through their local and vertical
/// ports, so only their horizontal ports keep the slow rate.
pub fn route_flit_interval_ps(route: &[Hop], g: &TopologyGraph, high_vt: bool) -> Result<u64, ModelError> {
    check_route(route, g)?;
    let stack = g.stack();
    let fastest = stack.fastest_period_ps();
    let mut worst = fastest;
    for (i, hop) in route.iter().enumerate() {
        let clk = stack.layer(g.addr(hop.router).z).tech.clk_period_ps;
        let arrived_horizontally = i > 0 && route[i - 1].out.is_some_and(|d| !d.is_vertical());
        let leaves_horizontally = hop.out.is_some_and(|d| !d.is_vertical());
        let wide = high_vt && !arrived_horizontally && !leaves_horizontally;
        worst = worst.max(if wide { fastest } else { clk });
    }
    Ok(worst)
}

/// Mean zero-load flit latency of an `l`-flit packet along `route`:
/// head latency plus the average serialisation offset `(l−1)/2` intervals.
pub fn zero_load_mean_flit_latency_ps(
    route: &[Hop],
    g: &TopologyGraph,
    length: u32,
    high_vt: bool,
) -> Result<f64, ModelError> {
    if length == 0 {
        return Err(ModelError::ZeroLength);
    }
    let head = route_latency_estimate(route, g)? as f64;
    let interval = route_flit_interval_ps(route, g, high_vt)? as f64;
    Ok(head + (length - 1) as f64 / 2.0 * interval)
}

/// Zero-load latency of the tail flit.
///
/// Body flits are held one cycle per router while the head is held `δ`
/// cycles, so behind the slowest port they close up again. The tail leaves
/// the route at the latest of, over every hop `i`: the head leaving `i`,
/// plus `l−1` output intervals of `i`, plus one body-flit cycle per later
/// router.
pub fn zero_load_packet_latency_ps(
    route: &[Hop],
    g: &TopologyGraph,
    length: u32,
    high_vt: bool,
) -> Result<f64, ModelError> {
    if length == 0 {
        return Err(ModelError::ZeroLength);
    }
    check_route(route, g)?;
    let stack = g.stack();
    let fastest = stack.fastest_period_ps();
    let layers: Vec<u32> = route.iter().map(|h| g.addr(h.router).z).collect();
    let clk = |i: usize| stack.layer(layers[i]).tech.clk_period_ps;
    let n = route.len();
    let mut head_leaves = Vec::with_capacity(n);
    let mut t = 0;
    for i in 0..n {
        if i > 0 {
            t += sync_penalty_ps(stack, layers[i - 1], layers[i]);
        }
        t += LayerTiming::of(stack, layers[i]).router_delay_ps();
        head_leaves.push(t);
    }
    // Latency of a body flit from leaving hop `i` to leaving the route.
    let mut body_after = vec![0; n];
    for i in (0..n - 1).rev() {
        body_after[i] = body_after[i + 1] + sync_penalty_ps(stack, layers[i], layers[i + 1]) + clk(i + 1);
    }
    let mut tail = 0;
    for i in 0..n {
        let arrived_horizontally = i > 0 && route[i - 1].out.is_some_and(|d| !d.is_vertical());
        let leaves_horizontally = route[i].out.is_some_and(|d| !d.is_vertical());
        let out = if high_vt && !arrived_horizontally && !leaves_horizontally {
            fastest
        } else if i + 1 < n {
            clk(i).max(clk(i + 1))
        } else {
            clk(i)
        };
        tail = tail.max(head_leaves[i] + (length as u64 - 1) * out + body_after[i]);
    }
    Ok(tail as f64)
}
