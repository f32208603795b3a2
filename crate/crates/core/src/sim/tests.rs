use super::*;
use crate::perfmodel::{route_latency_estimate, zero_load_packet_latency_ps};
use crate::routing::{trace_route, RoutingDecision, Variant};
use crate::topology::tests::{layer, tech};
use crate::topology::{build_topology, Address, Direction, RouterId, StackConfig};
use proptest::prelude::*;

/// Two 4×4 layers, the top one `slow` times slower than the bottom.
fn two_layers(slow: u64) -> TopologyGraph {
    let stack = StackConfig {
        layers: vec![layer(4, 4, 1, tech(90.0, 1000 * slow, 100.0)), layer(4, 4, 1, tech(45.0, 1000, 100.0))],
    };
    build_topology(&stack).unwrap()
}

fn id(g: &TopologyGraph, x: u32, y: u32, z: u32) -> RouterId {
    g.id_of(Address::new(x, y, z)).unwrap()
}

fn quiet() -> SimParams {
    SimParams { energy: EnergyWeights::zero(), ..SimParams::default() }
}

/// `count` packets of `length` flits from `src` to `dst`, all released at 0.
fn stream(src: RouterId, dst: RouterId, length: u32, count: usize) -> Schedule {
    Schedule {
        packets: (0..count)
            .map(|_| ScheduledPacket { src, dst, length, earliest: 0, deps: Vec::new(), delay_after_deps: 0 })
            .collect(),
    }
}

fn one_packet(g: &TopologyGraph, alg: &RoutingAlgorithm, kind: RouterKind, s: RouterId, d: RouterId, len: u32) -> PacketRecord {
    let report = run_schedule(g, alg, kind, &Schedule::single(s, d, len, 0), &quiet()).unwrap();
    report.packets[0]
}

#[test]
fn zero_load_head_latency_matches_the_route_estimate() {
    for slow in [1, 2, 3, 4] {
        let g = two_layers(slow);
        let alg = RoutingAlgorithm::new(Variant::Xyz, g.stack());
        let tick = g.stack().fastest_period_ps();
        for s in 0..g.router_count() as u32 {
            for d in (0..g.router_count() as u32).step_by(3) {
                let (s, d) = (RouterId(s), RouterId(d));
                let route = trace_route(&g, &alg, s, d, 64).unwrap();
                let expect = route_latency_estimate(&route, &g).unwrap();
                let rec = one_packet(&g, &alg, RouterKind::Standard, s, d, 4);
                assert_eq!(rec.head_latency_ticks().unwrap() * tick, expect, "{slow}x {s:?}->{d:?}");
                let tail = zero_load_packet_latency_ps(&route, &g, 4, false).unwrap();
                assert_eq!((rec.packet_latency_ticks().unwrap() * tick) as f64, tail, "{slow}x {s:?}->{d:?}");
            }
        }
    }
}

#[test]
fn single_flit_latency_is_the_same_with_wide_ports() {
    let g = two_layers(2);
    let alg = RoutingAlgorithm::new(Variant::R1, g.stack());
    for (s, d) in [(id(&g, 0, 0, 1), id(&g, 3, 2, 2)), (id(&g, 3, 3, 2), id(&g, 1, 0, 1)), (id(&g, 2, 2, 2), id(&g, 2, 2, 1))] {
        let std = one_packet(&g, &alg, RouterKind::Standard, s, d, 1);
        let wide = one_packet(&g, &alg, RouterKind::HighVt, s, d, 1);
        assert_eq!(std.head_latency_ticks(), wide.head_latency_ticks());
        let route = trace_route(&g, &alg, s, d, 64).unwrap();
        assert_eq!(wide.head_latency_ticks().unwrap() * 1000, route_latency_estimate(&route, &g).unwrap());
    }
}

#[test]
fn wide_ports_send_vertical_packets_at_the_fast_rate() {
    let g = two_layers(2);
    let alg = RoutingAlgorithm::new(Variant::R1, g.stack());
    let (slow, fast) = (id(&g, 1, 1, 1), id(&g, 1, 1, 2));
    let route = trace_route(&g, &alg, slow, fast, 8).unwrap();
    let std = one_packet(&g, &alg, RouterKind::Standard, slow, fast, 16);
    let wide = one_packet(&g, &alg, RouterKind::HighVt, slow, fast, 16);
    let expect = |hv| zero_load_packet_latency_ps(&route, &g, 16, hv).unwrap();
    assert_eq!((std.packet_latency_ticks().unwrap() * 1000) as f64, expect(false));
    assert_eq!((wide.packet_latency_ticks().unwrap() * 1000) as f64, expect(true));
}

/// Flits ejected per tick during the measurement window for a stream.
fn stream_rate(g: &TopologyGraph, alg: &RoutingAlgorithm, kind: RouterKind, s: RouterId, d: RouterId, len: u32) -> f64 {
    let params = SimParams { warmup_ticks: 200, measure_ticks: 2000, drain_ticks: 0, ..quiet() };
    let report = run_schedule(g, alg, kind, &stream(s, d, len, 2400 / len as usize + 10), &params).unwrap();
    report.accepted_throughput[g.addr(d).z as usize - 1]
}

#[test]
fn back_to_back_packets_leave_a_bubble_per_packet() {
    // δ = 3, χ = 2: every packet costs one idle cycle on its output.
    let g = two_layers(1);
    let alg = RoutingAlgorithm::new(Variant::Xyz, g.stack());
    for len in [1, 2, 4, 8] {
        let rate = stream_rate(&g, &alg, RouterKind::Standard, id(&g, 0, 0, 2), id(&g, 3, 0, 2), len);
        let expect = len as f64 / (len + 1) as f64;
        assert!((rate - expect).abs() < 2e-3, "l={len}: {rate} vs {expect}");
    }
}

#[test]
fn slow_layer_limits_a_heterogeneous_stream() {
    for slow in [2, 3, 4] {
        let g = two_layers(slow);
        let alg = RoutingAlgorithm::new(Variant::R1, g.stack());
        let (top, bottom) = (id(&g, 2, 1, 1), id(&g, 2, 1, 2));
        let len = 12;
        // Bubble of one slow cycle per packet on top of the slow link rate.
        let expect = len as f64 / ((len + 1) as f64 * slow as f64);
        for (s, d) in [(top, bottom), (bottom, top)] {
            let rate = stream_rate(&g, &alg, RouterKind::Standard, s, d, len);
            assert!((rate - expect).abs() < 2e-3, "{slow}x: {rate} vs {expect}");
        }
    }
}

#[test]
fn wide_ports_restore_the_fast_rate_across_layers() {
    for slow in [2, 3, 4] {
        let mut stack = two_layers(slow).stack().clone();
        for l in &mut stack.layers {
            l.tech.pipeline_depth = l.tech.head_delay;
        }
        let g = build_topology(&stack).unwrap();
        let alg = RoutingAlgorithm::new(Variant::R1, g.stack());
        let (top, bottom) = (id(&g, 2, 1, 1), id(&g, 2, 1, 2));
        for (s, d) in [(top, bottom), (bottom, top)] {
            let rate = stream_rate(&g, &alg, RouterKind::HighVt, s, d, 4 * slow as u32);
            assert!((rate - 1.0).abs() < 1e-3, "{slow}x: {rate}");
            let rate = stream_rate(&g, &alg, RouterKind::Standard, s, d, 4 * slow as u32);
            assert!((rate - 1.0 / slow as f64).abs() < 1e-3, "{slow}x: {rate}");
        }
    }
}

#[test]
fn every_flit_is_counted_once_per_router() {
    let g = two_layers(2);
    let alg = RoutingAlgorithm::new(Variant::R1, g.stack());
    let traffic = TrafficSpec::Uniform { rate: 0.05, packet_length: 4, until_tick: 600 };
    let params = SimParams { measure_ticks: 600, ..quiet() };
    let schedule = generate_traffic(&g, &traffic, 7).unwrap();
    let report = run_schedule(&g, &alg, RouterKind::Standard, &schedule, &params).unwrap();
    assert_eq!(report.packets_unfinished, 0);
    let mut visits = 0u64;
    let mut links = 0u64;
    for p in &schedule.packets {
        let route = trace_route(&g, &alg, p.src, p.dst, 64).unwrap();
        visits += p.length as u64 * route.len() as u64;
        links += p.length as u64 * (route.len() as u64 - 1);
    }
    let sum = |f: fn(&ActivityCounters) -> u64| report.activity.iter().map(f).sum::<u64>();
    assert_eq!(sum(|a| a.crossbar_traversals), visits);
    assert_eq!(sum(|a| a.buffer_writes), visits);
    assert_eq!(sum(|a| a.buffer_reads), visits);
    assert_eq!(sum(|a| a.horizontal_link_traversals) + sum(|a| a.vertical_link_traversals), links);
}

#[test]
fn same_seed_same_report() {
    let g = two_layers(3);
    let alg = RoutingAlgorithm::new(Variant::R2, g.stack());
    let traffic = TrafficSpec::Uniform { rate: 0.1, packet_length: 5, until_tick: 3000 };
    let params = SimParams { warmup_ticks: 500, measure_ticks: 2000, record_trace: true, ..SimParams::default() };
    let a = run(&g, &alg, RouterKind::Standard, &traffic, &params).unwrap();
    let b = run(&g, &alg, RouterKind::Standard, &traffic, &params).unwrap();
    assert_eq!(a, b);
    assert!(!a.trace.is_empty());
    let c = run(&g, &alg, RouterKind::Standard, &traffic, &SimParams { seed: 2, ..params }).unwrap();
    assert_ne!(a.packets, c.packets);
}

/// Sends everything clockwise round a 2×2 ring within one layer.
struct Ring;

impl RoutingFunction for Ring {
    fn name(&self) -> &str {
        "ring"
    }

    fn route(&self, g: &TopologyGraph, v: RouterId, d: RouterId) -> RoutingDecision {
        if v == d {
            return RoutingDecision::LOCAL;
        }
        let a = g.addr(v);
        RoutingDecision::one(match (a.x, a.y) {
            (0, 0) => Direction::East,
            (1, 0) => Direction::South,
            (1, 1) => Direction::West,
            _ => Direction::North,
        })
    }
}

#[test]
fn cyclic_waits_trip_the_watchdog() {
    let g = build_topology(&StackConfig {
        layers: vec![layer(2, 2, 1, tech(45.0, 1000, 100.0)), layer(2, 2, 1, tech(45.0, 1000, 100.0))],
    })
    .unwrap();
    let corners = [(0, 0), (1, 0), (1, 1), (0, 1)];
    let mut packets = Vec::new();
    for (i, &(x, y)) in corners.iter().enumerate() {
        let (dx, dy) = corners[(i + 3) % 4];
        for _ in 0..4 {
            packets.push(ScheduledPacket {
                src: id(&g, x, y, 1),
                dst: id(&g, dx, dy, 1),
                length: 40,
                earliest: 0,
                deps: Vec::new(),
                delay_after_deps: 0,
            });
        }
    }
    let params = SimParams { vcs: 1, buffer_depth: 2, watchdog_ticks: 500, ..quiet() };
    let err = run_schedule(&g, &Ring, RouterKind::Standard, &Schedule { packets }, &params).unwrap_err();
    assert!(matches!(err, SimError::Watchdog { window: 500, .. }), "{err}");
}

#[test]
fn dependent_packets_wait_for_their_inputs() {
    let g = two_layers(2);
    let alg = RoutingAlgorithm::new(Variant::R1, g.stack());
    let (a, b, c) = (id(&g, 0, 0, 2), id(&g, 3, 3, 2), id(&g, 0, 3, 1));
    let packets = vec![
        ScheduledPacket { src: a, dst: b, length: 4, earliest: 0, deps: vec![], delay_after_deps: 0 },
        ScheduledPacket { src: b, dst: c, length: 4, earliest: 0, deps: vec![0], delay_after_deps: 25 },
    ];
    let report = run_schedule(&g, &alg, RouterKind::Standard, &Schedule { packets }, &quiet()).unwrap();
    let first = report.packets[0].tail_ejected.unwrap();
    assert_eq!(report.packets[1].created, Some(first + 25));
}

#[test]
fn injection_waits_for_the_source_clock() {
    let g = two_layers(3);
    let alg = RoutingAlgorithm::new(Variant::R1, g.stack());
    let s = id(&g, 0, 0, 1);
    let report = run_schedule(&g, &alg, RouterKind::Standard, &Schedule::single(s, id(&g, 1, 0, 1), 1, 4), &quiet()).unwrap();
    assert_eq!(report.packets[0].created, Some(6));
    let params = SimParams { phases: vec![1, 0], ..quiet() };
    let report = run_schedule(&g, &alg, RouterKind::Standard, &Schedule::single(s, id(&g, 1, 0, 1), 1, 4), &params).unwrap();
    assert_eq!(report.packets[0].created, Some(4));
}

#[test]
fn flit_kinds() {
    assert_eq!(FlitKind::of(0, 1), FlitKind::Single);
    assert_eq!(FlitKind::of(0, 3), FlitKind::Head);
    assert_eq!(FlitKind::of(1, 3), FlitKind::Body);
    assert_eq!(FlitKind::of(2, 3), FlitKind::Tail);
    let c = ClockDomain { period: 4, phase: 1 };
    assert_eq!((c.align_up(0), c.align_up(1), c.align_up(2), c.align_up(5), c.align_up(6)), (1, 1, 5, 5, 9));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_traffic_drains(seed in 0u64..1000, rate in 0.01f64..0.2, len in 1u32..6, slow in 1u64..4, wide in any::<bool>()) {
        let g = two_layers(slow);
        let alg = RoutingAlgorithm::new(Variant::R2, g.stack());
        let kind = if wide { RouterKind::HighVt } else { RouterKind::Standard };
        let traffic = TrafficSpec::Uniform { rate, packet_length: len, until_tick: 400 };
        let params = SimParams { seed, measure_ticks: 400, ..quiet() };
        let report = run(&g, &alg, kind, &traffic, &params).unwrap();
        prop_assert_eq!(report.packets_unfinished, 0);
        for p in &report.packets {
            prop_assert!(p.head_ejected.unwrap() <= p.tail_ejected.unwrap());
            let route = trace_route(&g, &alg, RouterId(p.src), RouterId(p.dst), 64).unwrap();
            let floor = route_latency_estimate(&route, &g).unwrap() / 1000;
            prop_assert!(p.head_latency_ticks().unwrap() >= floor);
        }
    }
}
