//! Simulation results and their CSV forms.

use std::io::Write;

use serde::{Deserialize, Serialize};

/// Per-layer event counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ActivityCounters {
    pub buffer_writes: u64,
    pub buffer_reads: u64,
    pub crossbar_traversals: u64,
    pub horizontal_link_traversals: u64,
    pub vertical_link_traversals: u64,
}

/// Weights of the dynamic-energy proxy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyWeights {
    pub buffer_write: f64,
    pub buffer_read: f64,
    pub crossbar: f64,
    pub horizontal_link: f64,
    pub vertical_link: f64,
    /// Per-layer multiplier; `None` scales each layer by
    /// `(feature size / finest feature size)²`.
    pub layer_scale: Option<Vec<f64>>,
}

impl Default for EnergyWeights {
    fn default() -> Self {
        EnergyWeights {
            buffer_write: 1.0,
            buffer_read: 1.0,
            crossbar: 1.0,
            horizontal_link: 1.0,
            vertical_link: 0.1,
            layer_scale: None,
        }
    }
}

impl EnergyWeights {
    pub fn zero() -> Self {
        EnergyWeights {
            buffer_write: 0.0,
            buffer_read: 0.0,
            crossbar: 0.0,
            horizontal_link: 0.0,
            vertical_link: 0.0,
            layer_scale: None,
        }
    }

    /// Weighted sum of `activity` (index `z − 1` = layer `z`).
    pub fn proxy(&self, activity: &[ActivityCounters], feature_sizes: &[f64]) -> f64 {
        let finest = feature_sizes.iter().copied().fold(f64::INFINITY, f64::min);
        activity
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let scale = match &self.layer_scale {
                    Some(s) => s.get(i).copied().unwrap_or(1.0),
                    None => (feature_sizes[i] / finest).powi(2),
                };
                scale
                    * (self.buffer_write * a.buffer_writes as f64
                        + self.buffer_read * a.buffer_reads as f64
                        + self.crossbar * a.crossbar_traversals as f64
                        + self.horizontal_link * a.horizontal_link_traversals as f64
                        + self.vertical_link * a.vertical_link_traversals as f64)
            })
            .sum()
    }
}

/// Timing of one packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PacketRecord {
    pub id: u32,
    pub src: u32,
    pub dst: u32,
    pub length: u32,
    /// Release tick (when the packet entered its source queue).
    pub created: Option<u64>,
    pub head_ejected: Option<u64>,
    pub tail_ejected: Option<u64>,
    pub measured: bool,
}

impl PacketRecord {
    pub fn head_latency_ticks(&self) -> Option<u64> {
        Some(self.head_ejected? - self.created?)
    }

    pub fn packet_latency_ticks(&self) -> Option<u64> {
        Some(self.tail_ejected? - self.created?)
    }
}

/// One entry of the optional per-tick event trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceEvent {
    pub tick: u64,
    pub router: u32,
    pub port: &'static str,
    pub flit_id: String,
    pub event: &'static str,
}

/// Results of one run. Latencies are in ps; throughput in flits per
/// fastest-layer cycle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub tick_ps: u64,
    pub ticks_simulated: u64,
    pub packets_total: u64,
    pub packets_measured: u64,
    pub packets_unfinished: u64,
    pub flits_measured: u64,
    pub avg_flit_latency_ps: f64,
    pub p50_flit_latency_ps: u64,
    pub p95_flit_latency_ps: u64,
    pub p99_flit_latency_ps: u64,
    pub max_flit_latency_ps: u64,
    pub avg_packet_latency_ps: f64,
    pub avg_head_latency_ps: f64,
    /// Flits ejected at each layer's routers during the measurement window.
    pub ejected_flits_in_window: Vec<u64>,
    /// `ejected_flits_in_window / measure_ticks` per layer.
    pub accepted_throughput: Vec<f64>,
    pub activity: Vec<ActivityCounters>,
    pub energy_proxy: f64,
    /// `(bin start ps, bin end ps, flits)`.
    pub histogram: Vec<(u64, u64, u64)>,
    #[serde(skip)]
    pub packets: Vec<PacketRecord>,
    #[serde(skip)]
    pub trace: Vec<TraceEvent>,
}

impl SimReport {
    /// `(metric, value)` rows of `report.csv`.
    pub fn metric_rows(&self) -> Vec<(String, String)> {
        let mut rows: Vec<(String, String)> = vec![
            ("tick_ps".into(), self.tick_ps.to_string()),
            ("ticks_simulated".into(), self.ticks_simulated.to_string()),
            ("packets_total".into(), self.packets_total.to_string()),
            ("packets_measured".into(), self.packets_measured.to_string()),
            ("packets_unfinished".into(), self.packets_unfinished.to_string()),
            ("flits_measured".into(), self.flits_measured.to_string()),
            ("avg_flit_latency_ps".into(), fmt_f(self.avg_flit_latency_ps)),
            ("p50_flit_latency_ps".into(), self.p50_flit_latency_ps.to_string()),
            ("p95_flit_latency_ps".into(), self.p95_flit_latency_ps.to_string()),
            ("p99_flit_latency_ps".into(), self.p99_flit_latency_ps.to_string()),
            ("max_flit_latency_ps".into(), self.max_flit_latency_ps.to_string()),
            ("avg_packet_latency_ps".into(), fmt_f(self.avg_packet_latency_ps)),
            ("avg_head_latency_ps".into(), fmt_f(self.avg_head_latency_ps)),
        ];
        for (i, (n, thr)) in self.ejected_flits_in_window.iter().zip(&self.accepted_throughput).enumerate() {
            let z = i + 1;
            rows.push((format!("layer{z}_ejected_flits"), n.to_string()));
            rows.push((format!("layer{z}_accepted_throughput"), fmt_f(*thr)));
        }
        for (i, a) in self.activity.iter().enumerate() {
            let z = i + 1;
            rows.push((format!("layer{z}_buffer_writes"), a.buffer_writes.to_string()));
            rows.push((format!("layer{z}_buffer_reads"), a.buffer_reads.to_string()));
            rows.push((format!("layer{z}_crossbar_traversals"), a.crossbar_traversals.to_string()));
            rows.push((format!("layer{z}_horizontal_link_traversals"), a.horizontal_link_traversals.to_string()));
            rows.push((format!("layer{z}_vertical_link_traversals"), a.vertical_link_traversals.to_string()));
        }
        rows.push(("energy_proxy".into(), fmt_f(self.energy_proxy)));
        rows
    }

    pub fn write_report_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["metric", "value"])?;
        for (k, v) in self.metric_rows() {
            w.write_record([k, v])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_histogram_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin_start_ps", "bin_end_ps", "flits"])?;
        for (a, b, n) in &self.histogram {
            w.write_record([a.to_string(), b.to_string(), n.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_trace_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["tick", "router", "port", "flit_id", "event"])?;
        for e in &self.trace {
            w.write_record([e.tick.to_string(), e.router.to_string(), e.port.to_string(), e.flit_id.clone(), e.event.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_packets_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["id", "src", "dst", "length", "created", "head_ejected", "tail_ejected", "measured"])?;
        let opt = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
        for p in &self.packets {
            w.write_record([
                p.id.to_string(),
                p.src.to_string(),
                p.dst.to_string(),
                p.length.to_string(),
                opt(p.created),
                opt(p.head_ejected),
                opt(p.tail_ejected),
                p.measured.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fixed formatting so CSV output is stable across runs.
pub fn fmt_f(v: f64) -> String {
    format!("{v:.6}")
}

/// Nearest-rank percentile of sorted values.
pub(crate) fn percentile(sorted: &[u64], q: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// Histogram of latencies (ticks) with `bin` ticks per bin, in ps.
pub(crate) fn histogram(sorted: &[u64], bin: u64, tick_ps: u64) -> Vec<(u64, u64, u64)> {
    let bin = bin.max(1);
    let mut out: Vec<(u64, u64, u64)> = Vec::new();
    for &v in sorted {
        let b = v / bin;
        match out.last_mut() {
            Some(last) if last.0 == b * bin * tick_ps => last.2 += 1,
            _ => out.push((b * bin * tick_ps, (b + 1) * bin * tick_ps, 1)),
        }
    }
    out
}
