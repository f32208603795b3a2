//! The subcommands. Each writes its CSV files into an output directory and
//! returns the text to print on stdout.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use hetero_noc::perfmodel::{
    propagation_speed, rerouting_threshold_hops, rerouting_threshold_phi, route_latency_estimate, LayerTiming,
    RerouteThreshold,
};
use hetero_noc::routing::trace_route;
use hetero_noc::sim::stats::fmt_f;
use hetero_noc::sim::{read_trace, run, TrafficSpec};
use hetero_noc::techmodel::{area_scaling, clock_scaling, fit_area, fit_clock, read_samples, relative_scaling, write_fit_report};
use hetero_noc::topology::{Address, Hop, RouterId, TopologyGraph};
use hetero_noc::verify::{reference_turns, verify_routing, write_cycle_csv, Coverage};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::plot::{line_chart, Series};
use crate::sweep::{axis_name, run_sweep, write_sweep_csv};

/// Environment variable bounding sweep parallelism.
pub const WORKERS_ENV: &str = "HETERO_NOC_WORKERS";

/// Which technology model `fit` estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FitModel {
    Area,
    Clock,
}

/// Output directory: `--out`, else the config's `out_dir`, else `out`.
pub fn output_dir(flag: Option<&Path>, cfg: Option<&ExperimentConfig>) -> Result<PathBuf, CliError> {
    let dir = flag
        .map(Path::to_path_buf)
        .or_else(|| cfg.and_then(|c| c.out_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn to_string(f: impl FnOnce(&mut Vec<u8>) -> Result<(), CliError>) -> Result<String, CliError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(String::from_utf8(buf).expect("CSV output is UTF-8"))
}

/// Fits a technology model to `(xi, value)` samples. Writes `fit.csv`
/// (parameters and RMSE) and `fit_curve.csv` (observed vs predicted).
pub fn cmd_fit(
    input: &Path,
    model: FitModel,
    alpha_fixed: Option<f64>,
    beta_fixed: Option<f64>,
    beta_bar_fixed: Option<f64>,
    out: &Path,
) -> Result<String, CliError> {
    let file = File::open(input).map_err(|e| CliError::Config(format!("cannot read {}: {e}", input.display())))?;
    let samples = read_samples(file)?;
    let fit = match model {
        FitModel::Area => fit_area(&samples, alpha_fixed)?,
        FitModel::Clock => fit_clock(&samples, beta_fixed, beta_bar_fixed)?,
    };
    write_fit_report(&fit, create(out, "fit.csv")?)?;
    let mut w = csv::Writer::from_writer(create(out, "fit_curve.csv")?);
    w.write_record(["xi", "observed", "predicted"])?;
    let mut sorted = samples.clone();
    sorted.sort_by(|a, b| a.xi.total_cmp(&b.xi));
    for s in &sorted {
        w.write_record([fmt_f(s.xi), fmt_f(s.value), fmt_f(fit.predict(s.xi)?)])?;
    }
    w.flush()?;
    to_string(|buf| Ok(write_fit_report(&fit, buf)?))
}

/// Columns of `model_layers.csv`.
pub const LAYER_COLUMNS: [&str; 10] = [
    "layer",
    "feature_size_nm",
    "xi",
    "area_scaling",
    "clock_scaling",
    "clock_ratio",
    "clk_period_ps",
    "router_delay_ps",
    "router_pitch_um",
    "propagation_speed_m_per_s",
];

/// Columns of `model_pairs.csv`.
pub const PAIR_COLUMNS: [&str; 6] = ["upper", "lower", "speed_ratio", "phi_um", "phi_hops", "detour_pays"];

/// Evaluates the analytical models for every layer and layer pair.
/// Writes `model_layers.csv` and `model_pairs.csv`.
pub fn cmd_eval_model(cfg: &ExperimentConfig, out: &Path) -> Result<String, CliError> {
    let stack = cfg.stack_config();
    let finest = stack.layers.iter().map(|l| l.tech.feature_size_nm).fold(f64::INFINITY, f64::min);
    let fastest = stack.fastest_period_ps();
    let timing: Vec<LayerTiming> = (1..=stack.depth()).map(|z| LayerTiming::of(&stack, z)).collect();

    let mut layers = csv::Writer::from_writer(Vec::new());
    layers.write_record(LAYER_COLUMNS)?;
    for (i, t) in timing.iter().enumerate() {
        let l = &stack.layers[i];
        let xi = relative_scaling(l.tech.feature_size_nm, finest)?;
        layers.write_record([
            (i + 1).to_string(),
            fmt_f(l.tech.feature_size_nm),
            fmt_f(xi),
            fmt_f(area_scaling(xi, &cfg.model.area)?),
            fmt_f(clock_scaling(xi, &cfg.model.clock)?),
            (l.tech.clk_period_ps / fastest).to_string(),
            l.tech.clk_period_ps.to_string(),
            t.router_delay_ps().to_string(),
            fmt_f(t.router_pitch_um),
            fmt_f(propagation_speed(t)),
        ])?;
    }
    let layers = String::from_utf8(layers.into_inner().map_err(|e| CliError::Io(e.into_error()))?).expect("utf-8");

    let mut pairs = csv::Writer::from_writer(Vec::new());
    pairs.write_record(PAIR_COLUMNS)?;
    for upper in 0..timing.len() {
        for lower in upper + 1..timing.len() {
            let (tu, tl) = (&timing[upper], &timing[lower]);
            let phi = rerouting_threshold_phi(tu, tl);
            let phi_um = match phi {
                RerouteThreshold::Distance(d) => fmt_f(d),
                RerouteThreshold::Never => "inf".to_string(),
            };
            pairs.write_record([
                (upper + 1).to_string(),
                (lower + 1).to_string(),
                fmt_f(propagation_speed(tl) / propagation_speed(tu)),
                phi_um,
                rerouting_threshold_hops(phi, stack.grid_unit_um()).to_string(),
                matches!(phi, RerouteThreshold::Distance(_)).to_string(),
            ])?;
        }
    }
    let pairs = String::from_utf8(pairs.into_inner().map_err(|e| CliError::Io(e.into_error()))?).expect("utf-8");

    fs::write(out.join("model_layers.csv"), &layers)?;
    fs::write(out.join("model_pairs.csv"), &pairs)?;
    Ok(format!("{layers}\n{pairs}"))
}

/// Result of `verify`: the verdict table and whether every check passed.
pub struct VerifyOutcome {
    pub table: String,
    pub all_pass: bool,
}

/// Checks connectivity, deadlock and livelock freedom and the turn set of
/// the configured routing. Writes `verify.csv` and, if the dependency graph
/// has a cycle, `cdg_cycle.csv`.
pub fn cmd_verify(cfg: &ExperimentConfig, out: &Path) -> Result<VerifyOutcome, CliError> {
    let g = cfg.topology()?;
    let alg = cfg.routing_algorithm(g.stack())?;
    if g.router_count() > hetero_noc::verify::EXHAUSTIVE_ROUTER_LIMIT {
        warn!(
            "{} routers exceed the exhaustive limit of {}; checking {} sampled pairs",
            g.router_count(),
            hetero_noc::verify::EXHAUSTIVE_ROUTER_LIMIT,
            hetero_noc::verify::SAMPLED_PAIRS
        );
    }
    let report = verify_routing(&g, &alg, reference_turns(&alg), Coverage::Auto);
    let rows = report.rows(&g);
    let table = to_string(|buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["check", "pass", "detail"])?;
        for (name, pass, detail) in &rows {
            w.write_record([name.to_string(), pass.to_string(), detail.clone()])?;
        }
        w.flush()?;
        Ok(())
    })?;
    fs::write(out.join("verify.csv"), &table)?;
    let witness = out.join("cdg_cycle.csv");
    match (&report.cdg, &report.cycle) {
        (Some(cdg), Some(cycle)) => write_cycle_csv(cdg, cycle, create(out, "cdg_cycle.csv")?)?,
        _ if witness.exists() => fs::remove_file(witness)?,
        _ => {}
    }
    Ok(VerifyOutcome { table, all_pass: report.all_pass() })
}

/// Runs the configured traffic. Writes `report.csv`,
/// `flit_latency_hist.csv`, `packets.csv` and, with `trace`, `trace.csv`.
pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path, trace: bool) -> Result<String, CliError> {
    let g = cfg.topology()?;
    let alg = cfg.routing_algorithm(g.stack())?;
    let traffic = match (&cfg.traffic, &cfg.trace_file) {
        (Some(t), None) => t.clone(),
        (None, Some(path)) => {
            let file = File::open(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            TrafficSpec::Trace { packets: read_trace(file)? }
        }
        _ => return Err(CliError::Config("simulate needs a [traffic] section or a trace_file".into())),
    };
    let mut params = cfg.sim.clone();
    params.record_trace |= trace;
    let report = run(&g, &alg, cfg.router_kind, &traffic, &params)?;
    report.write_report_csv(create(out, "report.csv")?)?;
    report.write_histogram_csv(create(out, "flit_latency_hist.csv")?)?;
    report.write_packets_csv(create(out, "packets.csv")?)?;
    if params.record_trace {
        report.write_trace_csv(create(out, "trace.csv")?)?;
    }
    if report.packets_unfinished > 0 {
        warn!("{} measured packets did not finish before the cutoff", report.packets_unfinished);
    }
    let throughput: Vec<String> = report.accepted_throughput.iter().map(|t| format!("{t:.4}")).collect();
    Ok(format!(
        "avg_flit_latency_ps={:.1} avg_packet_latency_ps={:.1} accepted_throughput=[{}] packets_measured={}\n",
        report.avg_flit_latency_ps,
        report.avg_packet_latency_ps,
        throughput.join(","),
        report.packets_measured
    ))
}

/// Worker count from `HETERO_NOC_WORKERS`, defaulting to the CPU count.
pub fn workers_from_env() -> Result<usize, CliError> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Config(format!("{WORKERS_ENV} must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}

/// Runs the configured sweep. Writes `sweep.csv` and, with `plot`,
/// `sweep.svg`.
pub fn cmd_sweep(cfg: &ExperimentConfig, out: &Path, plot: bool, workers: usize) -> Result<String, CliError> {
    let rows = run_sweep(cfg, workers)?;
    let axis = cfg.sweep.as_ref().expect("run_sweep checked the section").axis;
    let text = to_string(|buf| Ok(write_sweep_csv(axis, &rows, buf)?))?;
    fs::write(out.join("sweep.csv"), &text)?;
    if plot {
        let mut series: Vec<Series> = Vec::new();
        for r in &rows {
            let name = r.algorithm.name();
            match series.iter_mut().find(|s| s.name == name) {
                Some(s) => s.points.push((r.axis_value, r.enhancement)),
                None => series.push(Series { name: name.to_string(), points: vec![(r.axis_value, r.enhancement)] }),
            }
        }
        let svg = line_chart("Latency enhancement over XYZ", axis_name(axis), "enhancement", &series);
        fs::write(out.join("sweep.svg"), svg)?;
        info!("wrote {}", out.join("sweep.svg").display());
    }
    Ok(text)
}

/// Parses a router given as `x,y,z` or as a numeric id.
pub fn parse_router(g: &TopologyGraph, s: &str) -> Result<RouterId, CliError> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let bad = || CliError::Config(format!("`{s}` is neither a router id nor x,y,z of an existing router"));
    match parts.as_slice() {
        [id] => {
            let id: u32 = id.parse().map_err(|_| bad())?;
            if (id as usize) < g.router_count() {
                Ok(RouterId(id))
            } else {
                Err(bad())
            }
        }
        [x, y, z] => {
            let p = |v: &str| v.parse::<u32>().map_err(|_| bad());
            g.id_of(Address::new(p(x)?, p(y)?, p(z)?)).ok_or_else(bad)
        }
        _ => Err(bad()),
    }
}

/// Prints the hops the configured routing takes from `src` to `dst`, with
/// the zero-load head latency accumulated up to each router.
pub fn cmd_route_trace(cfg: &ExperimentConfig, src: &str, dst: &str) -> Result<String, CliError> {
    let g = cfg.topology()?;
    let alg = cfg.routing_algorithm(g.stack())?;
    let (s, d) = (parse_router(&g, src)?, parse_router(&g, dst)?);
    let route = trace_route(&g, &alg, s, d, g.router_count())?;
    to_string(|buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["step", "router_id", "x", "y", "z", "out", "head_latency_ps"])?;
        for (i, hop) in route.iter().enumerate() {
            let mut prefix: Vec<Hop> = route[..=i].to_vec();
            prefix[i].out = None;
            let a = g.addr(hop.router);
            w.write_record([
                i.to_string(),
                hop.router.0.to_string(),
                a.x.to_string(),
                a.y.to_string(),
                a.z.to_string(),
                hop.out.map(|d| d.name()).unwrap_or("local").to_string(),
                route_latency_estimate(&prefix, &g)?.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })
}
