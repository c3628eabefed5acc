//! Single runs and parallel sweeps, with their on-disk outputs.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rayon::prelude::*;
use safeid::sim::{run_closed_loop, TrajectoryLog};

use crate::config::{load_config, RunConfig};
use crate::metrics::RunMetrics;
use crate::CliError;

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";
pub const COMPARISON_FILE: &str = "comparison.csv";

/// Runs the closed loop in memory.
pub fn simulate(cfg: &RunConfig) -> Result<(TrajectoryLog, RunMetrics), CliError> {
    let scenario = cfg.scenario()?;
    let setup = scenario.build()?;
    let start = Instant::now();
    let log = run_closed_loop(&setup)?;
    let metrics = RunMetrics::from_log(&log, &scenario.theta_true(), start.elapsed().as_secs_f64());
    Ok((log, metrics))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_with<F>(path: &Path, body: F) -> Result<(), CliError>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
}

fn remove_outputs(out: &Path) {
    for name in [TRAJECTORY_FILE, METRICS_FILE] {
        let _ = fs::remove_file(out.join(name));
    }
}

/// Runs `cfg` and writes the trajectory, metrics and resolved config
/// into `out`. Nothing but the resolved config is left behind on failure.
pub fn run(cfg: &RunConfig, out: &Path) -> Result<(TrajectoryLog, RunMetrics), CliError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    remove_outputs(out);
    let resolved = out.join(RESOLVED_CONFIG_FILE);
    fs::write(&resolved, cfg.to_toml()).map_err(io_err(&resolved))?;
    let result = simulate(cfg).and_then(|(log, metrics)| {
        write_with(&out.join(TRAJECTORY_FILE), |w| log.write_csv(w))?;
        write_with(&out.join(METRICS_FILE), |w| metrics.write_csv(w))?;
        Ok((log, metrics))
    });
    if result.is_err() {
        remove_outputs(out);
    }
    result
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub name: String,
    pub config: Option<RunConfig>,
    pub result: Result<RunMetrics, String>,
}

/// A sweep file name paired with its config or load error.
pub type SweepEntry = (String, Result<RunConfig, String>);

/// Every `*.toml` in `dir`, sorted by file name. Files that fail to load
/// come back as errors so a sweep can report them.
pub fn load_sweep_dir(dir: &Path) -> Result<Vec<SweepEntry>, CliError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    Ok(paths
        .into_iter()
        .map(|p| {
            let name = p
                .file_stem()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned();
            (name, load_config(&p).map_err(|e| e.to_string()))
        })
        .collect())
}

/// Runs every entry in parallel, each into `out/<name>/`, and writes the
/// comparison table `out/comparison.csv`.
pub fn sweep(
    entries: Vec<SweepEntry>,
    out: &Path,
) -> Result<Vec<SweepOutcome>, CliError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let outcomes: Vec<SweepOutcome> = entries
        .into_par_iter()
        .map(|(name, cfg)| {
            let result = match &cfg {
                Ok(c) => run(c, &out.join(&name))
                    .map(|(_, m)| m)
                    .map_err(|e| e.to_string()),
                Err(e) => Err(e.clone()),
            };
            match &result {
                Ok(m) => info!("{name}: minB {} in {:.2}s", m.min_b, m.wall_clock),
                Err(e) => info!("{name}: failed: {e}"),
            }
            SweepOutcome {
                name,
                config: cfg.ok(),
                result,
            }
        })
        .collect();
    let table = comparison_table(&outcomes);
    let path = out.join(COMPARISON_FILE);
    write_with(&path, |w| {
        for line in &table {
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    })?;
    Ok(outcomes)
}

fn flatten(prefix: &str, value: &toml::Value, out: &mut BTreeMap<String, String>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.to_string());
        }
    }
}

/// Flattened `section.key → value` view of a config.
pub fn flat_keys(cfg: &RunConfig) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let value = toml::Value::try_from(cfg).expect("config serializes");
    flatten("", &value, &mut out);
    out.remove("out");
    out
}

/// Keys whose values differ between at least two loaded configs.
pub fn varied_keys(configs: &[&RunConfig]) -> Vec<String> {
    let flat: Vec<_> = configs.iter().map(|c| flat_keys(c)).collect();
    let mut keys: Vec<String> = flat.iter().flat_map(|f| f.keys().cloned()).collect();
    keys.sort();
    keys.dedup();
    keys.retain(|k| flat.windows(2).any(|w| w[0].get(k) != w[1].get(k)));
    keys
}

/// Header plus one row per run: varied keys, then metrics, then any error.
pub fn comparison_table(outcomes: &[SweepOutcome]) -> Vec<Vec<String>> {
    let configs: Vec<&RunConfig> = outcomes.iter().filter_map(|o| o.config.as_ref()).collect();
    let keys = varied_keys(&configs);
    let metric_keys: Vec<String> = outcomes
        .iter()
        .find_map(|o| o.result.as_ref().ok())
        .map(|m| {
            m.entries()
                .into_iter()
                .map(|(k, _)| k)
                .filter(|k| k != "schema")
                .collect()
        })
        .unwrap_or_default();
    let mut header = vec!["run".to_string()];
    header.extend(keys.iter().cloned());
    header.extend(metric_keys.iter().cloned());
    header.push("error".into());
    let mut rows = vec![header];
    for o in outcomes {
        let flat = o.config.as_ref().map(flat_keys).unwrap_or_default();
        let mut row = vec![o.name.clone()];
        row.extend(
            keys.iter()
                .map(|k| csv_field(flat.get(k).map(String::as_str).unwrap_or(""))),
        );
        match &o.result {
            Ok(m) => {
                let entries: BTreeMap<String, String> = m.entries().into_iter().collect();
                row.extend(
                    metric_keys
                        .iter()
                        .map(|k| entries.get(k).cloned().unwrap_or_default()),
                );
                row.push(String::new());
            }
            Err(e) => {
                row.extend(metric_keys.iter().map(|_| String::new()));
                row.push(csv_field(e));
            }
        }
        rows.push(row);
    }
    rows
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\"").replace('\n', " "))
    } else {
        s.to_string()
    }
}
