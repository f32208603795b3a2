//! End-to-end tests of the `hetero-noc` binary: exit codes, output files
//! and flags.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hetero_noc_cli::commands::{LAYER_COLUMNS, PAIR_COLUMNS};
use hetero_noc_cli::ExperimentConfig;
use tempfile::TempDir;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn hetero_noc(args: &[&str]) -> Output {
    hetero_noc_with_env(args, &[])
}

fn hetero_noc_with_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hetero-noc"));
    cmd.args(args).env_remove("HETERO_NOC_WORKERS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn config(name: &str) -> String {
    configs().join(name).display().to_string()
}

/// Writes `text` as a config file in `dir` and returns its path.
fn write_config(dir: &TempDir, name: &str, text: &str) -> String {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn out_dir(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).display().to_string()
}

/// `configs/two_layers.toml` with `from` replaced by `to`.
fn two_layers_with(from: &str, to: &str) -> String {
    let text = fs::read_to_string(configs().join("two_layers.toml")).unwrap();
    assert!(text.contains(from), "fixture lacks `{from}`");
    text.replace(from, to)
}

#[test]
fn shipped_configs_load() {
    for entry in fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        }
    }
}

#[test]
fn help_and_version_succeed() {
    assert_eq!(code(&hetero_noc(&["--help"])), 0);
    assert_eq!(code(&hetero_noc(&["--version"])), 0);
    assert!(stdout(&hetero_noc(&["--help"])).contains("route-trace"));
}

#[test]
fn usage_errors_are_config_errors() {
    assert_eq!(code(&hetero_noc(&[])), 1);
    assert_eq!(code(&hetero_noc(&["simulate", "--bogus"])), 1);
    let o = hetero_noc(&["simulate"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--config"));
    assert_eq!(code(&hetero_noc(&["verify", "--config", "/nonexistent/x.toml"])), 1);
}

#[test]
fn invalid_seed_type_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "bad.toml", &two_layers_with("seed = 7", "seed = \"seven\""));
    let o = hetero_noc(&["simulate", "--config", &cfg, "--out", &out_dir(&dir, "o")]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));
    assert_eq!(code(&hetero_noc(&["simulate", "--config", &config("two_layers.toml"), "--seed", "x"])), 1);
}

#[test]
fn eval_model_writes_documented_columns() {
    let dir = TempDir::new().unwrap();
    let out = out_dir(&dir, "o");
    let o = hetero_noc(&["eval-model", "--config", &config("two_layers.toml"), "--out", &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let layers = fs::read_to_string(Path::new(&out).join("model_layers.csv")).unwrap();
    let pairs = fs::read_to_string(Path::new(&out).join("model_pairs.csv")).unwrap();
    assert_eq!(layers.lines().next().unwrap(), LAYER_COLUMNS.join(","));
    assert_eq!(pairs.lines().next().unwrap(), PAIR_COLUMNS.join(","));
    assert_eq!(layers.lines().count(), 3);
    assert_eq!(pairs.lines().count(), 2);
}

#[test]
fn verify_passes_for_layered_routing_and_fails_with_a_witness_otherwise() {
    let dir = TempDir::new().unwrap();
    let out = out_dir(&dir, "o");
    let o = hetero_noc(&["verify", "--config", &config("verify_three_layers.toml"), "--out", &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).starts_with("check,pass,detail\n"));
    assert!(!Path::new(&out).join("cdg_cycle.csv").exists());

    let text = fs::read_to_string(configs().join("verify_three_layers.toml")).unwrap();
    let cfg = write_config(&dir, "adv.toml", &text.replace("variant = \"r2\"", "variant = \"adversarial\""));
    let o = hetero_noc(&["verify", "--config", &cfg, "--out", &out]);
    assert_eq!(code(&o), 2);
    assert!(stdout(&o).contains("cdg_acyclic,false"));
    let witness = fs::read_to_string(Path::new(&out).join("cdg_cycle.csv")).unwrap();
    assert!(witness.lines().count() >= 3, "{witness}");

    // A passing run in the same directory removes the stale witness.
    assert_eq!(code(&hetero_noc(&["verify", "--config", &config("verify_three_layers.toml"), "--out", &out])), 0);
    assert!(!Path::new(&out).join("cdg_cycle.csv").exists());
}

#[test]
fn simulate_prints_a_summary_and_writes_reports() {
    let dir = TempDir::new().unwrap();
    let out = out_dir(&dir, "o");
    let o = hetero_noc(&["simulate", "--config", &config("two_layers.toml"), "--out", &out, "--trace"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let line = stdout(&o);
    for key in ["avg_flit_latency_ps=", "avg_packet_latency_ps=", "accepted_throughput=[", "packets_measured="] {
        assert!(line.contains(key), "{line}");
    }
    for file in ["report.csv", "flit_latency_hist.csv", "packets.csv", "trace.csv"] {
        assert!(Path::new(&out).join(file).exists(), "{file}");
    }
}

#[test]
fn seed_flag_controls_the_traffic() {
    let dir = TempDir::new().unwrap();
    let cfg = config("two_layers.toml");
    let run = |seed: &str, name: &str| {
        let out = out_dir(&dir, name);
        assert_eq!(code(&hetero_noc(&["simulate", "--config", &cfg, "--out", &out, "--seed", seed])), 0);
        fs::read(Path::new(&out).join("packets.csv")).unwrap()
    };
    assert_eq!(run("3", "a"), run("3", "b"));
    assert_ne!(run("3", "a"), run("4", "c"));
}

#[test]
fn trace_file_replays_packets() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("packets.csv"), "tick,src,dst,length\n0,0,31,4\n100,5,20,2\n").unwrap();
    let mut text = two_layers_with("out_dir = \"out/two_layers\"\n", "trace_file = \"packets.csv\"\n");
    let start = text.find("[traffic]").unwrap();
    let end = text.find("[sim]").unwrap();
    text.replace_range(start..end, "");
    let cfg = write_config(&dir, "trace.toml", &text);
    let out = out_dir(&dir, "o");
    let o = hetero_noc(&["simulate", "--config", &cfg, "--out", &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let packets = fs::read_to_string(Path::new(&out).join("packets.csv")).unwrap();
    assert_eq!(packets.lines().count(), 3, "{packets}");
}

#[test]
fn watchdog_abort_has_its_own_exit_code() {
    let layer = "[[stack.layers]]\nfeature_size_nm = 45.0\nclk_period_ps = 1000\nhead_delay = 1\npipeline_depth = 1\nrouter_pitch_um = 100.0\nrows = 4\ncols = 4\n\n";
    let text = format!(
        "{layer}{layer}[routing]\nvariant = \"adversarial\"\n\n[traffic]\nmode = \"uniform\"\nrate = 0.9\npacket_length = 16\nuntil_tick = 5000\n\n[sim]\nmeasure_ticks = 5000\nvcs = 1\nbuffer_depth = 2\nwatchdog_ticks = 500\n"
    );
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "deadlock.toml", &text);
    let o = hetero_noc(&["simulate", "--config", &cfg, "--out", &out_dir(&dir, "o")]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("no flit moved"));
}

#[test]
fn sweep_output_does_not_depend_on_the_worker_count() {
    let dir = TempDir::new().unwrap();
    let cfg = config("two_layers.toml");
    let run = |workers: &str, name: &str| {
        let out = out_dir(&dir, name);
        let o = hetero_noc_with_env(&["sweep", "--config", &cfg, "--out", &out, "--plot"], &[("HETERO_NOC_WORKERS", workers)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(Path::new(&out).join("sweep.svg").exists());
        fs::read(Path::new(&out).join("sweep.csv")).unwrap()
    };
    let one = run("1", "a");
    assert_eq!(one, run("3", "b"));
    let text = String::from_utf8(one).unwrap();
    assert_eq!(text.lines().next().unwrap(), "axis,axis_value,algorithm,model_latency_ps,sim_latency_ps,enhancement");
    assert_eq!(text.lines().count(), 1 + 6 * 2);

    let o = hetero_noc_with_env(&["sweep", "--config", &cfg, "--out", &out_dir(&dir, "c")], &[("HETERO_NOC_WORKERS", "0")]);
    assert_eq!(code(&o), 1);
}

#[test]
fn sweep_without_a_sweep_section_is_a_config_error() {
    let o = hetero_noc(&["sweep", "--config", &config("verify_three_layers.toml"), "--out", "/tmp/unused-sweep-out"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("[sweep]"));
}

#[test]
fn route_trace_lists_hops_with_accumulated_latency() {
    let o = hetero_noc(&["route-trace", "--config", &config("two_layers.toml"), "--src", "0,0,1", "--dst", "3,3,2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "step,router_id,x,y,z,out,head_latency_ps");
    // R1 descends first, then crosses the fast layer.
    assert!(rows[1].ends_with(",down,6000"), "{text}");
    assert!(rows.last().unwrap().contains(",local,"));
    assert_eq!(rows.len(), 1 + 1 + 7);
    assert_eq!(code(&hetero_noc(&["route-trace", "--config", &config("two_layers.toml"), "--src", "9,9,9", "--dst", "0"])), 1);
}

#[test]
fn fit_reports_parameters_and_names_missing_columns() {
    let dir = TempDir::new().unwrap();
    let out = out_dir(&dir, "o");
    let input = config("area_samples.csv");
    let o = hetero_noc(&["fit", "--input", &input, "--model", "area", "--alpha-fixed", "3462.7", "--out", &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).starts_with("param,value,rmse\nalpha,3462.7"));
    let curve = fs::read_to_string(Path::new(&out).join("fit_curve.csv")).unwrap();
    assert_eq!(curve.lines().next().unwrap(), "xi,observed,predicted");

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "xi,val\n1,1\n2,3.9\n3,8\n").unwrap();
    let o = hetero_noc(&["fit", "--input", &bad.display().to_string(), "--model", "area", "--out", &out]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("value"), "{}", stderr(&o));
}
