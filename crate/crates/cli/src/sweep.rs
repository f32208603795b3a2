//! Parameter sweeps comparing routing algorithms against XYZ.

use std::io::Write;

use hetero_noc::perfmodel::{route_latency_estimate, zero_load_mean_flit_latency_ps, zero_load_packet_latency_ps};
use hetero_noc::routing::{trace_route, RoutingAlgorithm, Variant};
use hetero_noc::sim::stats::fmt_f;
use hetero_noc::sim::{run, run_schedule, RouterKind, Schedule, SimParams, TrafficSpec};
use hetero_noc::topology::{build_topology, Address, RouterId, StackConfig, TopologyGraph};
use rayon::prelude::*;

use crate::config::{check_layer_speeds, ExperimentConfig, SweepAxis, SweepConfig};
use crate::error::CliError;

/// One row of `sweep.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub axis_value: f64,
    pub algorithm: Variant,
    pub model_latency_ps: f64,
    pub sim_latency_ps: f64,
    /// `latency(XYZ) / latency(algorithm)` from the simulated latencies.
    pub enhancement: f64,
}

/// Router kind used for `variant`: dimension-order baselines always use
/// standard routers.
pub fn router_kind_for(variant: Variant, configured: RouterKind) -> RouterKind {
    match variant {
        Variant::R1 | Variant::R2 => configured,
        Variant::Xyz | Variant::Adversarial => RouterKind::Standard,
    }
}

/// Source and destination `hops` source-layer hops apart: along x first,
/// then along y.
pub fn distance_pair(g: &TopologyGraph, hops: u32, src_layer: u32, dst_layer: u32) -> Result<(RouterId, RouterId), CliError> {
    let l = g.stack().layer(src_layer);
    let dx = hops.min(l.cols - 1);
    let dy = hops - dx;
    if dy > l.rows - 1 {
        return Err(CliError::Config(format!("layer {src_layer} has no two routers {hops} hops apart")));
    }
    let s = l.grid_stride;
    let src = g.id_of(Address::new(0, 0, src_layer)).expect("origin exists in every layer");
    let dst = g
        .id_of(Address::new(dx * s, dy * s, dst_layer))
        .ok_or_else(|| CliError::Config(format!("layer {dst_layer} has no router below ({}, {})", dx * s, dy * s)))?;
    Ok((src, dst))
}

/// Zero-load latency of one packet: model and simulation, in ps.
pub fn single_packet_latency(
    g: &TopologyGraph,
    alg: &RoutingAlgorithm,
    kind: RouterKind,
    src: RouterId,
    dst: RouterId,
    length: u32,
    params: &SimParams,
) -> Result<(f64, f64), CliError> {
    let route = trace_route(g, alg, src, dst, g.router_count())?;
    let model = zero_load_packet_latency_ps(&route, g, length, kind == RouterKind::HighVt)?;
    let report = run_schedule(g, alg, kind, &Schedule::single(src, dst, length, 0), params)?;
    let ticks = report.packets[0].packet_latency_ticks().ok_or_else(|| CliError::Config("packet did not arrive".into()))?;
    Ok((model, (ticks * report.tick_ps) as f64))
}

/// Mean zero-load flit latency over all ordered router pairs.
pub fn uniform_zero_load_latency(g: &TopologyGraph, alg: &RoutingAlgorithm, kind: RouterKind, length: u32) -> Result<f64, CliError> {
    let n = g.router_count() as u32;
    let mut total = 0.0;
    for s in 0..n {
        for d in (0..n).filter(|&d| d != s) {
            let route = trace_route(g, alg, RouterId(s), RouterId(d), g.router_count())?;
            total += zero_load_mean_flit_latency_ps(&route, g, length, kind == RouterKind::HighVt)?;
        }
    }
    Ok(total / (n as f64 * (n as f64 - 1.0)))
}

fn integral(v: f64, what: &str) -> Result<u32, CliError> {
    if v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as u32)
    } else {
        Err(CliError::Config(format!("{what} must be a positive integer, got {v}")))
    }
}

fn algorithms(sweep: &SweepConfig) -> Vec<Variant> {
    let mut v = vec![Variant::Xyz];
    for a in &sweep.algorithms {
        if !v.contains(a) {
            v.push(*a);
        }
    }
    v
}

/// `(model, sim)` latency of every algorithm at one axis value.
fn point(cfg: &ExperimentConfig, sweep: &SweepConfig, value: f64) -> Result<Vec<(Variant, f64, f64)>, CliError> {
    let mut stack = cfg.stack_config();
    let mut hops = sweep.hop_distance;
    match sweep.axis {
        SweepAxis::HopDistance => hops = integral(value, "hop distance")?,
        SweepAxis::ClockRatio => stack = with_clock_ratio(&stack, integral(value, "clock ratio")? as u64),
        SweepAxis::InjectionRate => {}
    }
    let g = build_topology(&stack).map_err(|e| CliError::Config(e.to_string()))?;
    let dst_layer = sweep.dst_layer.unwrap_or(stack.depth());
    let mut out = Vec::new();
    for variant in algorithms(sweep) {
        if matches!(variant, Variant::R1 | Variant::R2) {
            check_layer_speeds(&stack)?;
        }
        let alg = cfg.routing_algorithm_as(variant, &stack)?;
        let kind = router_kind_for(variant, cfg.router_kind);
        let (model, sim) = match sweep.axis {
            SweepAxis::HopDistance | SweepAxis::ClockRatio => {
                let (s, d) = distance_pair(&g, hops, sweep.src_layer, dst_layer)?;
                single_packet_latency(&g, &alg, kind, s, d, sweep.packet_length, &cfg.sim)?
            }
            SweepAxis::InjectionRate => {
                if !(value > 0.0 && value <= 1.0) {
                    return Err(CliError::Config(format!("injection rate must be in (0, 1], got {value}")));
                }
                let traffic = TrafficSpec::Uniform {
                    rate: value,
                    packet_length: sweep.packet_length,
                    until_tick: cfg.sim.warmup_ticks + cfg.sim.measure_ticks,
                };
                let report = run(&g, &alg, kind, &traffic, &cfg.sim)?;
                (uniform_zero_load_latency(&g, &alg, kind, sweep.packet_length)?, report.avg_flit_latency_ps)
            }
        };
        out.push((variant, model, sim));
    }
    Ok(out)
}

/// Runs every point of the configured sweep on at most `workers` threads.
/// Rows come back in axis order, XYZ first at each value.
pub fn run_sweep(cfg: &ExperimentConfig, workers: usize) -> Result<Vec<SweepRow>, CliError> {
    let sweep = cfg.sweep.as_ref().ok_or_else(|| CliError::Config("config has no [sweep] section".into()))?;
    if sweep.values.is_empty() {
        return Err(CliError::Config("sweep axis has no values".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start workers: {e}")))?;
    let points: Vec<Result<Vec<(Variant, f64, f64)>, CliError>> =
        pool.install(|| sweep.values.par_iter().map(|&v| point(cfg, sweep, v)).collect());
    let mut rows = Vec::new();
    for (value, p) in sweep.values.iter().zip(points) {
        let p = p?;
        let baseline = p[0].2;
        rows.extend(p.into_iter().map(|(algorithm, model, sim)| SweepRow {
            axis_value: *value,
            algorithm,
            model_latency_ps: model,
            sim_latency_ps: sim,
            enhancement: baseline / sim,
        }));
    }
    Ok(rows)
}

pub fn axis_name(axis: SweepAxis) -> &'static str {
    match axis {
        SweepAxis::HopDistance => "hop_distance",
        SweepAxis::InjectionRate => "injection_rate",
        SweepAxis::ClockRatio => "clock_ratio",
    }
}

pub fn write_sweep_csv<W: Write>(axis: SweepAxis, rows: &[SweepRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["axis", "axis_value", "algorithm", "model_latency_ps", "sim_latency_ps", "enhancement"])?;
    for r in rows {
        w.write_record([
            axis_name(axis).to_string(),
            fmt_f(r.axis_value),
            r.algorithm.name().to_string(),
            fmt_f(r.model_latency_ps),
            fmt_f(r.sim_latency_ps),
            fmt_f(r.enhancement),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Zero-load head latency of the route `alg` takes from `src` to `dst`.
pub fn head_latency_estimate(g: &TopologyGraph, alg: &RoutingAlgorithm, src: RouterId, dst: RouterId) -> Result<u64, CliError> {
    let route = trace_route(g, alg, src, dst, g.router_count())?;
    Ok(route_latency_estimate(&route, g)?)
}

/// A copy of `stack` with every layer above the bottom clocked `ratio`
/// times slower than the bottom layer.
pub fn with_clock_ratio(stack: &StackConfig, ratio: u64) -> StackConfig {
    let mut s = stack.clone();
    let bottom = s.layers.last().expect("non-empty stack").tech.clk_period_ps;
    let n = s.layers.len();
    for l in &mut s.layers[..n - 1] {
        l.tech.clk_period_ps = bottom * ratio;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::tests::TWO_LAYERS;

    fn sweep_cfg(extra: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml(&format!("{TWO_LAYERS}\n[sweep]\n{extra}")).unwrap()
    }

    #[test]
    fn hop_sweep_rows_are_in_axis_order_with_equal_model_and_sim() {
        let cfg = sweep_cfg("axis = \"hop_distance\"\nvalues = [1, 2, 3]\nalgorithms = [\"r1\"]");
        let rows = run_sweep(&cfg, 2).unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!(rows[0].algorithm, Variant::Xyz);
        assert_eq!(rows[0].enhancement, 1.0);
        for r in &rows {
            assert_eq!(r.model_latency_ps, r.sim_latency_ps);
        }
        let r1: Vec<f64> = rows.iter().filter(|r| r.algorithm == Variant::R1).map(|r| r.enhancement).collect();
        assert!(r1.windows(2).all(|w| w[0] <= w[1]), "{r1:?}");
        assert!(r1[0] >= 1.0);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let cfg = sweep_cfg("axis = \"injection_rate\"\nvalues = [0.02, 0.05]\nalgorithms = [\"r2\"]");
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_sweep_csv(SweepAxis::InjectionRate, &run_sweep(&cfg, 1).unwrap(), &mut a).unwrap();
        write_sweep_csv(SweepAxis::InjectionRate, &run_sweep(&cfg, 4).unwrap(), &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn clock_axis_rescales_upper_layers() {
        let cfg = sweep_cfg("axis = \"clock_ratio\"\nvalues = [2, 4]\nhop_distance = 2");
        let rows = run_sweep(&cfg, 1).unwrap();
        let xyz: Vec<f64> = rows.iter().filter(|r| r.algorithm == Variant::Xyz).map(|r| r.sim_latency_ps).collect();
        assert!(xyz[1] > xyz[0]);
        assert!(run_sweep(&sweep_cfg("axis = \"clock_ratio\"\nvalues = [1.5]"), 1).is_err());
    }
}
