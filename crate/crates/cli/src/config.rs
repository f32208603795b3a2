//! Experiment configuration files.
//!
//! A configuration is a TOML document; see `docs/config.md` for the full
//! grammar. Everything the library can reject is checked when the file is
//! loaded, so commands only ever see a consistent configuration.

use std::fs;
use std::path::{Path, PathBuf};

use hetero_noc::perfmodel::{propagation_speed, LayerTiming};
use hetero_noc::routing::{RoutingAlgorithm, TieBreak, Variant};
use hetero_noc::sim::{RouterKind, SimParams, TrafficSpec};
use hetero_noc::techmodel::{AreaParams, ClockParams};
use hetero_noc::topology::{build_topology, LayerSpec, StackConfig, TechnologyNode, TopologyGraph};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// One layer as written in a config file (top layer first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerConfig {
    pub feature_size_nm: f64,
    pub clk_period_ps: u64,
    pub head_delay: u32,
    pub pipeline_depth: u32,
    pub router_pitch_um: f64,
    pub rows: u32,
    pub cols: u32,
    #[serde(default = "one")]
    pub stride: u32,
}

fn one() -> u32 {
    1
}

impl LayerConfig {
    pub fn to_spec(&self) -> LayerSpec {
        LayerSpec {
            rows: self.rows,
            cols: self.cols,
            grid_stride: self.stride,
            tech: TechnologyNode {
                feature_size_nm: self.feature_size_nm,
                clk_period_ps: self.clk_period_ps,
                head_delay: self.head_delay,
                pipeline_depth: self.pipeline_depth,
                router_pitch_um: self.router_pitch_um,
            },
        }
    }

    pub fn from_spec(l: &LayerSpec) -> Self {
        LayerConfig {
            feature_size_nm: l.tech.feature_size_nm,
            clk_period_ps: l.tech.clk_period_ps,
            head_delay: l.tech.head_delay,
            pipeline_depth: l.tech.pipeline_depth,
            router_pitch_um: l.tech.router_pitch_um,
            rows: l.rows,
            cols: l.cols,
            stride: l.grid_stride,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackSection {
    pub layers: Vec<LayerConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoutingConfig {
    pub variant: Variant,
    /// Layer that rerouted packets descend to; defaults to the bottom layer.
    pub target_layer: Option<u32>,
    pub tie_break: TieBreak,
    /// Per-layer hop thresholds replacing the derived ones.
    pub thresholds: Option<Vec<u32>>,
    /// One hop threshold for every layer above the target layer.
    pub uniform_threshold: Option<u32>,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        RoutingConfig {
            variant: Variant::Xyz,
            target_layer: None,
            tie_break: TieBreak::default(),
            thresholds: None,
            uniform_threshold: None,
        }
    }
}

/// Technology-model parameters used by `eval-model`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub area: AreaParams,
    pub clock: ClockParams,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { area: AreaParams::GP, clock: ClockParams::GP }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Horizontal distance in hops of the source layer.
    HopDistance,
    /// Uniform injection rate in flits per router cycle.
    InjectionRate,
    /// Clock ratio of every layer above the bottom one.
    ClockRatio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    /// Algorithms compared against XYZ (which is always included).
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<Variant>,
    #[serde(default = "one")]
    pub packet_length: u32,
    /// Layer of the source router for distance-based axes.
    #[serde(default = "one")]
    pub src_layer: u32,
    /// Layer of the destination router; defaults to the bottom layer.
    #[serde(default)]
    pub dst_layer: Option<u32>,
    /// Distance used on the clock-ratio axis.
    #[serde(default = "one")]
    pub hop_distance: u32,
}

fn default_algorithms() -> Vec<Variant> {
    vec![Variant::R1, Variant::R2]
}

/// A complete experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Where commands write their files unless `--out` is given.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub router_kind: RouterKind,
    /// CSV trace (`tick,src,dst,length`) replacing `[traffic]`; relative
    /// paths are resolved against the config file.
    #[serde(default)]
    pub trace_file: Option<PathBuf>,
    pub stack: StackSection,
    #[serde(default)]
    pub routing: RoutingConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub traffic: Option<TrafficSpec>,
    #[serde(default)]
    pub sim: SimParams,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

impl ExperimentConfig {
    /// Parses and validates a config document.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it are made relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(t) = &cfg.trace_file {
            if t.is_relative() {
                cfg.trace_file = Some(base.join(t));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn stack_config(&self) -> StackConfig {
        StackConfig { layers: self.stack.layers.iter().map(LayerConfig::to_spec).collect() }
    }

    pub fn topology(&self) -> Result<TopologyGraph, CliError> {
        build_topology(&self.stack_config()).map_err(|e| CliError::Config(e.to_string()))
    }

    /// The configured routing algorithm, possibly with a different variant.
    pub fn routing_algorithm_as(&self, variant: Variant, stack: &StackConfig) -> Result<RoutingAlgorithm, CliError> {
        let r = &self.routing;
        let cfg_err = |e: hetero_noc::routing::RoutingError| CliError::Config(e.to_string());
        let mut alg = RoutingAlgorithm::new(variant, stack).with_tie_break(r.tie_break);
        if let Some(t) = r.target_layer {
            alg = alg.with_target_layer(stack, t).map_err(cfg_err)?;
        }
        match (&r.thresholds, r.uniform_threshold) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config("set either routing.thresholds or routing.uniform_threshold, not both".into()))
            }
            (Some(v), None) => alg = alg.with_thresholds(v.clone()).map_err(cfg_err)?,
            (None, Some(h)) => alg = alg.with_uniform_threshold(h),
            (None, None) => {}
        }
        Ok(alg)
    }

    pub fn routing_algorithm(&self, stack: &StackConfig) -> Result<RoutingAlgorithm, CliError> {
        self.routing_algorithm_as(self.routing.variant, stack)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let stack = self.stack_config();
        build_topology(&stack).map_err(|e| CliError::Config(e.to_string()))?;
        let alg = self.routing_algorithm(&stack)?;
        if matches!(alg.variant, Variant::R1 | Variant::R2) {
            check_layer_speeds(&stack)?;
        }
        self.router_kind.check_routing(&alg).map_err(|e| CliError::Config(e.to_string()))?;
        self.sim.validate(stack.depth()).map_err(|e| CliError::Config(e.to_string()))?;
        if let (Some(_), Some(_)) = (&self.trace_file, &self.traffic) {
            return Err(CliError::Config("set either trace_file or [traffic], not both".into()));
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(CliError::Config("sweep axis has no values".into()));
            }
            if s.packet_length == 0 {
                return Err(CliError::Config("sweep packet length must be positive".into()));
            }
            for z in [Some(s.src_layer), s.dst_layer].into_iter().flatten() {
                if z == 0 || z > stack.depth() {
                    return Err(CliError::Config(format!("sweep layer {z} is outside the stack")));
                }
            }
        }
        Ok(())
    }
}

/// Layered routing descends towards faster layers; it is only accepted
/// when no layer is slower (in µm per ps) than a layer above it.
pub fn check_layer_speeds(stack: &StackConfig) -> Result<(), CliError> {
    let speeds: Vec<f64> = (1..=stack.depth()).map(|z| propagation_speed(&LayerTiming::of(stack, z))).collect();
    for upper in 0..speeds.len() {
        for lower in upper + 1..speeds.len() {
            if speeds[lower] < speeds[upper] {
                return Err(CliError::Config(format!(
                    "layer {} propagates head flits slower ({:.1} m/s) than layer {} above it ({:.1} m/s); layered routing needs faster lower layers",
                    lower + 1,
                    speeds[lower],
                    upper + 1,
                    speeds[upper]
                )));
            }
        }
    }
    Ok(())
}

/// Applies a `--seed` override.
pub fn with_seed(mut cfg: ExperimentConfig, seed: Option<u64>) -> ExperimentConfig {
    if let Some(s) = seed {
        cfg.sim.seed = s;
    }
    cfg
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) const TWO_LAYERS: &str = r#"
router_kind = "standard"

[[stack.layers]]
feature_size_nm = 90.0
clk_period_ps = 2000
head_delay = 3
pipeline_depth = 2
router_pitch_um = 200.0
rows = 4
cols = 4
stride = 2

[[stack.layers]]
feature_size_nm = 45.0
clk_period_ps = 1000
head_delay = 3
pipeline_depth = 2
router_pitch_um = 150.0
rows = 8
cols = 8

[routing]
variant = "r1"

[traffic]
mode = "uniform"
rate = 0.04
packet_length = 4
until_tick = 2000

[sim]
measure_ticks = 2000
seed = 5
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::from_toml(TWO_LAYERS).unwrap();
        assert_eq!(cfg.stack.layers[0].stride, 2);
        assert_eq!(cfg.stack.layers[1].stride, 1);
        assert_eq!(cfg.routing.variant, Variant::R1);
        assert_eq!(cfg.sim.seed, 5);
        assert_eq!(cfg.sim.vcs, 4);
        let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_wide_ports_with_dimension_order_routing() {
        let text = TWO_LAYERS.replace("\"standard\"", "\"high_vt\"").replace("\"r1\"", "\"xyz\"");
        let err = ExperimentConfig::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("high_vt"), "{err}");
    }

    #[test]
    fn rejects_layered_routing_over_a_slower_lower_layer() {
        // Same clocks, but the lower layer's routers are much closer together.
        let text = TWO_LAYERS.replace("clk_period_ps = 2000", "clk_period_ps = 1000").replace("router_pitch_um = 150.0", "router_pitch_um = 50.0");
        let err = ExperimentConfig::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("slower"), "{err}");
        let xyz = text.replace("\"r1\"", "\"xyz\"");
        ExperimentConfig::from_toml(&xyz).unwrap();
    }

    #[test]
    fn reports_bad_types_and_unknown_keys() {
        let err = ExperimentConfig::from_toml(&TWO_LAYERS.replace("seed = 5", "seed = \"five\"")).unwrap_err();
        assert!(matches!(err, CliError::Config(_)));
        let err = ExperimentConfig::from_toml(&TWO_LAYERS.replace("[sim]", "[sim]\nspeed = 3")).unwrap_err();
        assert!(err.to_string().contains("speed"), "{err}");
    }

    #[test]
    fn threshold_overrides() {
        let text = TWO_LAYERS.replace("variant = \"r1\"", "variant = \"r2\"\nuniform_threshold = 0");
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let alg = cfg.routing_algorithm(&cfg.stack_config()).unwrap();
        assert_eq!(alg.threshold(1), 0);
        let both = text.replace("uniform_threshold = 0", "uniform_threshold = 0\nthresholds = [1, 0]");
        assert!(ExperimentConfig::from_toml(&both).is_err());
    }
}
