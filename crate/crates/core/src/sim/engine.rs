//! The tick loop.
//!
//! Ports are indexed by direction (`Direction::index`, 0..6) with the local
//! port at index 6. Input port `p` of a router receives from its neighbour
//! in direction `p`.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use super::stats::{histogram, percentile, ActivityCounters, PacketRecord, SimReport, TraceEvent};
use super::traffic::Schedule;
use super::{ClockDomain, Flit, FlitKind, RouterKind, SimError, SimParams};
use crate::routing::{select, RoutingError, RoutingFunction};
use crate::topology::{Direction, RouterId, TopologyGraph};

const LOCAL: usize = 6;
const PORTS: usize = 7;
const PORT_NAMES: [&str; PORTS] = ["north", "east", "south", "west", "up", "down", "local"];

fn is_vertical(port: usize) -> bool {
    port == Direction::Up.index() || port == Direction::Down.index()
}

struct BufFlit {
    flit: Flit,
    visible: u64,
}

#[derive(Default)]
struct InVc {
    fifo: VecDeque<BufFlit>,
    /// Output chosen for the head at the front of `fifo`.
    route: Option<usize>,
}

#[derive(Default)]
struct InPort {
    exists: bool,
    vcs: Vec<InVc>,
    cap: u32,
    period: u64,
    next_free: u64,
    /// Router and output port feeding this input.
    upstream: Option<(usize, usize)>,
}

/// Fast-to-slow deserialiser in front of a wide input port: collects flits
/// per virtual channel and hands them over in groups.
struct Staging {
    cap: u32,
    period: u64,
    next_flush: u64,
    lanes: Vec<VecDeque<Flit>>,
    rr: usize,
}

#[derive(Default)]
struct OutPort {
    exists: bool,
    /// Router and input port on the far side of the link; `None` = eject.
    target: Option<(usize, usize)>,
    period: u64,
    cap: u32,
    next_free: u64,
    delay: u64,
    staging: Option<Staging>,
    credits: Vec<u32>,
    busy: Vec<bool>,
    vc_rr: usize,
    /// Input port, input VC and downstream VC of the packet being sent.
    owner: Option<(usize, usize, usize)>,
    last_tail: Option<u64>,
    rr: usize,
}

struct RouterState {
    layer: usize,
    period: u64,
    head_ticks: u64,
    bubble_ticks: u64,
    max_vcs: usize,
    inputs: Vec<InPort>,
    outputs: Vec<OutPort>,
    buffered: u64,
}

struct PacketState {
    record: PacketRecord,
    earliest: u64,
    delay_after_deps: u64,
    remaining_deps: usize,
    deps_done: u64,
    ejected: u32,
}

pub(super) struct Engine<'a> {
    g: &'a TopologyGraph,
    routing: &'a dyn RoutingFunction,
    params: &'a SimParams,
    domains: Vec<ClockDomain>,
    routers: Vec<RouterState>,
    packets: Vec<PacketState>,
    dependents: Vec<Vec<usize>>,
    pending: BinaryHeap<Reverse<(u64, usize)>>,
    credit_returns: Vec<(usize, usize, usize)>,
    staged_ports: Vec<(usize, usize)>,
    in_flight: u64,
    done: usize,
    last_move: u64,
    activity: Vec<ActivityCounters>,
    flit_latencies: Vec<(u32, u64)>,
    ejected_window: Vec<u64>,
    trace: Vec<TraceEvent>,
}

impl<'a> Engine<'a> {
    pub(super) fn new(
        g: &'a TopologyGraph,
        routing: &'a dyn RoutingFunction,
        kind: RouterKind,
        schedule: &Schedule,
        params: &'a SimParams,
    ) -> Self {
        let stack = g.stack();
        let depth = stack.depth() as usize;
        let domains: Vec<ClockDomain> = (1..=stack.depth())
            .map(|z| ClockDomain {
                period: stack.period_ticks(z),
                phase: params.phases.get(z as usize - 1).copied().unwrap_or(0) % stack.period_ticks(z),
            })
            .collect();
        let period_of = |r: usize| domains[g.addr(RouterId(r as u32)).z as usize - 1].period;
        let wide = |r: usize| kind == RouterKind::HighVt && period_of(r) > 1;
        let vcs_of = |r: usize| -> usize {
            let n = if period_of(r) > 1 {
                params.slow_layer_vcs.unwrap_or(if kind == RouterKind::HighVt { 1 } else { params.vcs })
            } else {
                params.vcs
            };
            n as usize
        };

        let n = g.router_count();
        let mut routers: Vec<RouterState> = (0..n)
            .map(|r| {
                let z = g.addr(RouterId(r as u32)).z;
                let tech = &stack.layer(z).tech;
                let p = period_of(r);
                RouterState {
                    layer: z as usize - 1,
                    period: p,
                    head_ticks: tech.head_delay as u64 * p,
                    bubble_ticks: p * (1 + (tech.head_delay - tech.pipeline_depth) as u64),
                    max_vcs: vcs_of(r),
                    inputs: (0..PORTS).map(|_| InPort::default()).collect(),
                    outputs: (0..PORTS).map(|_| OutPort::default()).collect(),
                    buffered: 0,
                }
            })
            .collect();

        let mut staged_ports = Vec::new();
        for a in 0..n {
            let pa = period_of(a);
            let port_cap = |r: usize, port: usize| if wide(r) && (port == LOCAL || is_vertical(port)) { period_of(r) as u32 } else { 1 };
            // Local ports.
            routers[a].inputs[LOCAL] = InPort {
                exists: true,
                vcs: vec![InVc::default()],
                cap: port_cap(a, LOCAL),
                period: pa,
                ..Default::default()
            };
            routers[a].outputs[LOCAL] = OutPort {
                exists: true,
                period: pa,
                cap: port_cap(a, LOCAL),
                ..Default::default()
            };
            for dir in Direction::ALL {
                let o = dir.index();
                let Some(b) = g.neighbor(RouterId(a as u32), dir) else { continue };
                let b = b.index();
                let bp = dir.opposite().index();
                let pb = period_of(b);
                let (cap_a, cap_b) = (port_cap(a, o), port_cap(b, bp));
                let staged = cap_b > 1 && pb > pa;
                let depth = params.buffer_depth * cap_a.max(cap_b);
                let vcs_b = vcs_of(b);
                routers[b].inputs[bp] = InPort {
                    exists: true,
                    vcs: (0..vcs_b).map(|_| InVc::default()).collect(),
                    cap: cap_b,
                    period: pb,
                    next_free: 0,
                    upstream: Some((a, o)),
                };
                routers[a].outputs[o] = OutPort {
                    exists: true,
                    target: Some((b, bp)),
                    period: if staged { pa } else { pa.max(pb) },
                    cap: cap_a,
                    delay: if dir == Direction::Up && pb > pa { pb } else { 0 },
                    staging: staged.then(|| Staging {
                        cap: cap_b,
                        period: pb,
                        next_flush: 0,
                        lanes: (0..vcs_b).map(|_| VecDeque::new()).collect(),
                        rr: 0,
                    }),
                    credits: vec![depth; vcs_b],
                    busy: vec![false; vcs_b],
                    ..Default::default()
                };
                if staged {
                    staged_ports.push((a, o));
                }
            }
        }

        let mut packets = Vec::with_capacity(schedule.len());
        let mut dependents = vec![Vec::new(); schedule.len()];
        let mut pending = BinaryHeap::new();
        for (i, p) in schedule.packets.iter().enumerate() {
            for &d in &p.deps {
                dependents[d].push(i);
            }
            packets.push(PacketState {
                record: PacketRecord {
                    id: i as u32,
                    src: p.src.0,
                    dst: p.dst.0,
                    length: p.length,
                    created: None,
                    head_ejected: None,
                    tail_ejected: None,
                    measured: false,
                },
                earliest: p.earliest,
                delay_after_deps: p.delay_after_deps,
                remaining_deps: p.deps.len(),
                deps_done: 0,
                ejected: 0,
            });
            if p.deps.is_empty() {
                let dom = domains[g.addr(p.src).z as usize - 1];
                pending.push(Reverse((dom.align_up(p.earliest), i)));
            }
        }

        Engine {
            g,
            routing,
            params,
            domains,
            routers,
            packets,
            dependents,
            pending,
            credit_returns: Vec::new(),
            staged_ports,
            in_flight: 0,
            done: 0,
            last_move: 0,
            activity: vec![ActivityCounters::default(); depth],
            flit_latencies: Vec::new(),
            ejected_window: vec![0; depth],
            trace: Vec::new(),
        }
    }

    pub(super) fn run(mut self) -> Result<SimReport, SimError> {
        let cutoff = self.params.cutoff_tick();
        let mut t = 0u64;
        loop {
            self.release_due(t);
            if self.in_flight == 0 {
                if self.done == self.packets.len() {
                    break;
                }
                match self.pending.peek() {
                    Some(&Reverse((rt, _))) if rt > t => {
                        t = rt;
                        self.last_move = t;
                        if t > cutoff {
                            break;
                        }
                        continue;
                    }
                    Some(_) => {}
                    None => break,
                }
            }
            if t > cutoff {
                break;
            }
            for r in 0..self.routers.len() {
                if self.routers[r].buffered > 0 {
                    self.step_router(r, t)?;
                }
            }
            self.end_of_tick(t);
            if self.in_flight > 0 && t - self.last_move >= self.params.watchdog_ticks {
                return Err(self.watchdog(t));
            }
            t += 1;
        }
        Ok(self.report(t))
    }

    fn trace_event(&mut self, tick: u64, router: usize, port: usize, flit: &Flit, event: &'static str) {
        if self.params.record_trace {
            self.trace.push(TraceEvent {
                tick,
                router: router as u32,
                port: PORT_NAMES[port],
                flit_id: format!("{}.{}", flit.packet_id, flit.seq_no),
                event,
            });
        }
    }

    fn release_due(&mut self, t: u64) {
        while let Some(&Reverse((rt, id))) = self.pending.peek() {
            if rt > t {
                break;
            }
            self.pending.pop();
            let (src, len) = (self.packets[id].record.src as usize, self.packets[id].record.length);
            let window = self.params.warmup_ticks..self.params.warmup_ticks + self.params.measure_ticks;
            self.packets[id].record.created = Some(rt);
            self.packets[id].record.measured = window.contains(&rt);
            let layer = self.routers[src].layer;
            for seq in 0..len {
                let flit = Flit { kind: FlitKind::of(seq, len), packet_id: id as u32, seq_no: seq, creation_time: rt };
                self.routers[src].inputs[LOCAL].vcs[0].fifo.push_back(BufFlit { flit, visible: rt });
                self.trace_event(rt, src, LOCAL, &flit, "inject");
            }
            self.routers[src].buffered += len as u64;
            self.in_flight += len as u64;
            self.activity[layer].buffer_writes += len as u64;
        }
    }

    fn route_of(&mut self, r: usize, p: usize, v: usize) -> Result<usize, SimError> {
        if let Some(o) = self.routers[r].inputs[p].vcs[v].route {
            return Ok(o);
        }
        let front = self.routers[r].inputs[p].vcs[v].fifo.front().expect("non-empty");
        let dst = RouterId(self.packets[front.flit.packet_id as usize].record.dst);
        let here = RouterId(r as u32);
        let out = match select(self.routing.route(self.g, here, dst))? {
            None if here == dst => LOCAL,
            None => {
                return Err(SimError::Routing(RoutingError::StoppedEarly {
                    src: self.g.addr(RouterId(self.packets[front.flit.packet_id as usize].record.src)),
                    dst: self.g.addr(dst),
                    at: self.g.addr(here),
                }))
            }
            Some(dir) => {
                if !self.routers[r].outputs[dir.index()].exists {
                    return Err(SimError::Routing(RoutingError::MissingLink {
                        from: self.g.addr(here),
                        dst: self.g.addr(dst),
                        dir,
                    }));
                }
                dir.index()
            }
        };
        self.routers[r].inputs[p].vcs[v].route = Some(out);
        Ok(out)
    }

    /// Picks a waiting head for output `o`, round-robin over input VCs.
    fn allocate(&mut self, r: usize, o: usize, t: u64) -> Result<Option<(usize, usize, usize)>, SimError> {
        let rs = &self.routers[r];
        if let Some(lt) = rs.outputs[o].last_tail {
            if t < lt + rs.bubble_ticks {
                return Ok(None);
            }
        }
        let slots = PORTS * rs.max_vcs;
        let start = rs.outputs[o].rr;
        for k in 0..slots {
            let idx = (start + k) % slots;
            let (p, v) = (idx / self.routers[r].max_vcs, idx % self.routers[r].max_vcs);
            let inp = &self.routers[r].inputs[p];
            if !inp.exists || v >= inp.vcs.len() || t < inp.next_free {
                continue;
            }
            let Some(front) = inp.vcs[v].fifo.front() else { continue };
            if !front.flit.kind.is_head() || front.visible + self.routers[r].head_ticks > t {
                continue;
            }
            if self.route_of(r, p, v)? != o {
                continue;
            }
            let out = &self.routers[r].outputs[o];
            let dvc = if out.target.is_none() {
                0
            } else {
                let n = out.credits.len();
                match (0..n).map(|j| (out.vc_rr + j) % n).find(|&c| !out.busy[c] && out.credits[c] > 0) {
                    Some(c) => c,
                    None => return Ok(None),
                }
            };
            let out = &mut self.routers[r].outputs[o];
            out.rr = (idx + 1) % slots;
            if out.target.is_some() {
                out.busy[dvc] = true;
                out.vc_rr = (dvc + 1) % out.busy.len();
            }
            out.owner = Some((p, v, dvc));
            return Ok(Some((p, v, dvc)));
        }
        Ok(None)
    }

    fn step_router(&mut self, r: usize, t: u64) -> Result<(), SimError> {
        for o in 0..PORTS {
            let out = &self.routers[r].outputs[o];
            if !out.exists || t < out.next_free {
                continue;
            }
            let owner = match out.owner {
                Some(owner) => Some(owner),
                None => self.allocate(r, o, t)?,
            };
            if let Some((p, v, dvc)) = owner {
                self.transfer(r, o, p, v, dvc, t);
            }
        }
        Ok(())
    }

    /// Moves as many flits of the owning packet as the ports allow.
    fn transfer(&mut self, r: usize, o: usize, p: usize, v: usize, dvc: usize, t: u64) {
        if t < self.routers[r].inputs[p].next_free {
            return;
        }
        let budget = self.routers[r].inputs[p].cap.min(self.routers[r].outputs[o].cap);
        let mut sent = 0;
        while sent < budget {
            let rs = &self.routers[r];
            let Some(front) = rs.inputs[p].vcs[v].fifo.front() else { break };
            let wait = if front.flit.kind.is_head() { rs.head_ticks } else { rs.period };
            if front.visible + wait > t {
                break;
            }
            if rs.outputs[o].target.is_some() && rs.outputs[o].credits[dvc] == 0 {
                break;
            }
            let flit = self.routers[r].inputs[p].vcs[v].fifo.pop_front().expect("front exists").flit;
            self.forward(r, o, p, v, dvc, flit, t);
            sent += 1;
            if flit.kind.is_tail() {
                let rs = &mut self.routers[r];
                rs.inputs[p].vcs[v].route = None;
                let out = &mut rs.outputs[o];
                out.owner = None;
                out.last_tail = Some(t);
                if out.target.is_some() {
                    out.busy[dvc] = false;
                }
                break;
            }
        }
        if sent > 0 {
            let rs = &mut self.routers[r];
            rs.outputs[o].next_free = t + rs.outputs[o].period;
            rs.inputs[p].next_free = t + rs.inputs[p].period;
            self.last_move = t;
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn forward(&mut self, r: usize, o: usize, p: usize, v: usize, dvc: usize, flit: Flit, t: u64) {
        let layer = self.routers[r].layer;
        self.routers[r].buffered -= 1;
        self.activity[layer].buffer_reads += 1;
        self.activity[layer].crossbar_traversals += 1;
        if let Some((u, uo)) = self.routers[r].inputs[p].upstream {
            self.credit_returns.push((u, uo, v));
        }
        self.trace_event(t, r, o, &flit, "send");
        let Some((b, bp)) = self.routers[r].outputs[o].target else {
            self.eject(r, flit, t);
            return;
        };
        if is_vertical(o) {
            self.activity[layer].vertical_link_traversals += 1;
        } else {
            self.activity[layer].horizontal_link_traversals += 1;
        }
        let out = &mut self.routers[r].outputs[o];
        out.credits[dvc] -= 1;
        if let Some(stg) = &mut out.staging {
            stg.lanes[dvc].push_back(flit);
            return;
        }
        let visible = t + out.delay;
        self.deliver(b, bp, dvc, flit, visible, t);
    }

    fn deliver(&mut self, b: usize, bp: usize, vc: usize, flit: Flit, visible: u64, t: u64) {
        let layer = self.routers[b].layer;
        self.routers[b].inputs[bp].vcs[vc].fifo.push_back(BufFlit { flit, visible });
        self.routers[b].buffered += 1;
        self.activity[layer].buffer_writes += 1;
        self.trace_event(t, b, bp, &flit, "receive");
    }

    fn eject(&mut self, r: usize, flit: Flit, t: u64) {
        self.in_flight -= 1;
        self.trace_event(t, r, LOCAL, &flit, "eject");
        let layer = self.routers[r].layer;
        if (self.params.warmup_ticks..self.params.warmup_ticks + self.params.measure_ticks).contains(&t) {
            self.ejected_window[layer] += 1;
        }
        let id = flit.packet_id as usize;
        let pk = &mut self.packets[id];
        pk.ejected += 1;
        if pk.record.measured {
            self.flit_latencies.push((flit.packet_id, t - flit.creation_time));
        }
        if flit.kind.is_head() {
            pk.record.head_ejected = Some(t);
        }
        if flit.kind.is_tail() {
            debug_assert_eq!(pk.ejected, pk.record.length, "flits of a packet eject in order");
            pk.record.tail_ejected = Some(t);
            self.done += 1;
            for i in 0..self.dependents[id].len() {
                let d = self.dependents[id][i];
                let dep = &mut self.packets[d];
                dep.remaining_deps -= 1;
                dep.deps_done = dep.deps_done.max(t);
                if dep.remaining_deps == 0 {
                    let src_layer = self.g.addr(RouterId(dep.record.src)).z as usize - 1;
                    let at = self.domains[src_layer].align_up(dep.earliest.max(dep.deps_done + dep.delay_after_deps));
                    self.pending.push(Reverse((at, d)));
                }
            }
        }
    }

    fn end_of_tick(&mut self, t: u64) {
        for (u, uo, vc) in std::mem::take(&mut self.credit_returns) {
            self.routers[u].outputs[uo].credits[vc] += 1;
        }
        for i in 0..self.staged_ports.len() {
            let (a, o) = self.staged_ports[i];
            let out = &mut self.routers[a].outputs[o];
            let (b, bp) = out.target.expect("staged ports are links");
            let delay = out.delay;
            let stg = out.staging.as_mut().expect("staged");
            if t < stg.next_flush {
                continue;
            }
            let n = stg.lanes.len();
            let Some(lane) = (0..n)
                .map(|j| (stg.rr + j) % n)
                .find(|&l| stg.lanes[l].len() >= stg.cap as usize || stg.lanes[l].iter().any(|f| f.kind.is_tail()))
            else {
                continue;
            };
            stg.rr = (lane + 1) % n;
            stg.next_flush = t + stg.period;
            let take = stg.lanes[lane].len().min(stg.cap as usize);
            let group: Vec<Flit> = stg.lanes[lane].drain(..take).collect();
            for flit in group {
                self.deliver(b, bp, lane, flit, t + delay, t);
            }
            self.last_move = t;
        }
        self.release_due(t);
    }

    fn watchdog(&self, t: u64) -> SimError {
        let stuck: Vec<String> = self
            .routers
            .iter()
            .enumerate()
            .filter(|(_, r)| r.buffered > 0)
            .take(8)
            .map(|(i, r)| format!("router {} {} holds {} flits", i, self.g.addr(RouterId(i as u32)), r.buffered))
            .collect();
        SimError::Watchdog {
            tick: t,
            window: self.params.watchdog_ticks,
            in_flight: self.in_flight,
            detail: stuck.join("; "),
        }
    }

    fn report(self, ticks: u64) -> SimReport {
        let tick_ps = self.g.stack().fastest_period_ps();
        let completed = |p: &PacketState| p.record.tail_ejected.is_some();
        let measured: Vec<&PacketState> = self.packets.iter().filter(|p| p.record.measured).collect();
        let finished: Vec<&PacketState> = measured.iter().copied().filter(|p| completed(p)).collect();
        let mut lat: Vec<u64> = self
            .flit_latencies
            .iter()
            .filter(|(pid, _)| completed(&self.packets[*pid as usize]))
            .map(|&(_, l)| l)
            .collect();
        lat.sort_unstable();
        let mean = |v: &mut dyn Iterator<Item = u64>| {
            let (mut s, mut n) = (0u128, 0u64);
            for x in v {
                s += x as u128;
                n += 1;
            }
            if n == 0 {
                0.0
            } else {
                s as f64 / n as f64 * tick_ps as f64
            }
        };
        let avg_flit = mean(&mut lat.iter().copied());
        let avg_packet = mean(&mut finished.iter().filter_map(|p| p.record.packet_latency_ticks()));
        let avg_head = mean(&mut finished.iter().filter_map(|p| p.record.head_latency_ticks()));
        let sizes: Vec<f64> = self.g.stack().layers.iter().map(|l| l.tech.feature_size_nm).collect();
        let energy = self.params.energy.proxy(&self.activity, &sizes);
        SimReport {
            tick_ps,
            ticks_simulated: ticks,
            packets_total: self.packets.len() as u64,
            packets_measured: measured.len() as u64,
            packets_unfinished: (measured.len() - finished.len()) as u64,
            flits_measured: lat.len() as u64,
            avg_flit_latency_ps: avg_flit,
            p50_flit_latency_ps: percentile(&lat, 0.50) * tick_ps,
            p95_flit_latency_ps: percentile(&lat, 0.95) * tick_ps,
            p99_flit_latency_ps: percentile(&lat, 0.99) * tick_ps,
            max_flit_latency_ps: lat.last().copied().unwrap_or(0) * tick_ps,
            avg_packet_latency_ps: avg_packet,
            avg_head_latency_ps: avg_head,
            accepted_throughput: self
                .ejected_window
                .iter()
                .map(|&n| n as f64 / self.params.measure_ticks as f64)
                .collect(),
            ejected_flits_in_window: self.ejected_window,
            activity: self.activity,
            energy_proxy: energy,
            histogram: histogram(&lat, self.params.histogram_bin_ticks, tick_ps),
            packets: self.packets.iter().map(|p| p.record).collect(),
            trace: self.trace,
        }
    }
}
