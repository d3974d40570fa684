//! The `run` and `pretrain` subcommands.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use anyhow::{ensure, Context};
use neighborfl_core::data::DataWindow;
use neighborfl_core::geo::{DeviceId, SensorRegistry};
use neighborfl_core::learner::{load_checkpoint, save_checkpoint, train_local, RmsProp};
use neighborfl_core::metrics::{self, RoundPairs};
use neighborfl_core::protocol::{DeviceRound, InitialModels, Simulation};
use neighborfl_core::seed;
use rayon::prelude::*;

use crate::artifacts::{self, write_atomic, write_bytes_atomic, HashedFile, Manifest};
use crate::config::SimConfig;
use crate::ingest;

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub method: String,
    /// Pooled MSE of each device over the summary window, registry order.
    pub device_mse: Vec<(DeviceId, f64)>,
    pub avg_mse: f64,
    pub summary_window: RangeInclusive<usize>,
}

/// Runs the configured simulation and writes every artifact into `output`.
pub fn run(config: &SimConfig, output: &Path) -> anyhow::Result<RunOutcome> {
    config.validate()?;
    let params = config.sim_params()?;
    let metadata_path = SimConfig::require(&config.paths.metadata, "metadata")?;
    let stream_path = SimConfig::require(&config.paths.stream, "stream")?;
    let registry = ingest::read_metadata_file(&metadata_path)?;
    let table = ingest::read_stream_file(&stream_path, registry.ids())?;
    let needed = params.points_needed(config.rounds);
    ensure!(
        table.len() >= needed,
        "stream has {} usable rows but {} rounds need tau_first + (rounds - 1) * tau_rest = {needed}",
        table.len(),
        config.rounds
    );

    let learner = config.build_learner();
    let mut inputs = vec![hashed("metadata", &metadata_path)?, hashed("stream", &stream_path)?];
    let initial = match &config.paths.checkpoints {
        Some(dir) => {
            let mut models = BTreeMap::new();
            for id in registry.ids() {
                let path = checkpoint_path(dir, id);
                let file = std::fs::File::open(&path).with_context(|| format!("checkpoint for `{id}` at {}", path.display()))?;
                models.insert(id.clone(), load_checkpoint(std::io::BufReader::new(file))?);
                inputs.push(hashed("checkpoint", &path)?);
            }
            InitialModels::PerDevice(models)
        }
        None => InitialModels::Shared(learner.init(seed::derive(config.seed, &[seed::stream::INIT]))),
    };

    let mut sim = Simulation::new(learner.clone(), params, &registry, &table.columns, initial)?;
    std::fs::create_dir_all(output).with_context(|| format!("creating {}", output.display()))?;
    let method = config.method_label();
    log::info!("{method}: {} devices, {} rounds -> {}", registry.len(), config.rounds, output.display());

    let mut history: Vec<Vec<DeviceRound>> = vec![Vec::with_capacity(config.rounds); registry.len()];
    write_atomic(&output.join(artifacts::ROUND_LOG_FILE), |w| {
        for _ in 0..config.rounds {
            let log = sim.run_round()?;
            for (i, d) in log.devices.into_iter().enumerate() {
                serde_json::to_writer(&mut *w, &d)?;
                w.write_all(b"\n")?;
                history[i].push(d);
            }
            if log.round % 25 == 0 {
                log::info!("round {}/{}", log.round, config.rounds);
            }
        }
        Ok(())
    })?;

    let o = config.output_len;
    let ids: Vec<DeviceId> = registry.ids().cloned().collect();
    for (id, rounds) in ids.iter().zip(&history) {
        let path = output.join(artifacts::PREDICTIONS_DIR).join(format!("{id}.csv"));
        write_bytes_atomic(&path, prediction_csv(rounds).as_bytes())?;
    }
    write_bytes_atomic(&output.join(artifacts::ERRORS_FILE), errors_csv(&history).as_bytes())?;
    write_bytes_atomic(&output.join(artifacts::CFN_FILE), cfn_csv(&sim).as_bytes())?;

    let pairs: Vec<Vec<RoundPairs>> = history.iter().map(|rs| rs.iter().map(|r| r.pairs(o)).collect()).collect();
    let last = config.rounds;
    let window = last.saturating_sub(config.summary_rounds) + 1..=last;
    let device_mse = pairs
        .iter()
        .map(|p| metrics::pooled_mse(p, window.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let avg_mse = metrics::avg_device_mse(&pairs, window.clone())?;
    let mut devices_csv = format!("device,{method}\n");
    for (id, mse) in ids.iter().zip(&device_mse) {
        writeln!(devices_csv, "{id},{mse}")?;
    }
    write_bytes_atomic(&output.join(artifacts::SUMMARY_DEVICES_FILE), devices_csv.as_bytes())?;
    let average_csv = format!("method,first_round,last_round,avg_mse\n{method},{},{},{avg_mse}\n", window.start(), window.end());
    write_bytes_atomic(&output.join(artifacts::SUMMARY_AVERAGE_FILE), average_csv.as_bytes())?;
    write_bytes_atomic(&output.join(artifacts::SMOOTHED_FILE), smoothed_csv(config, &ids, &pairs)?.as_bytes())?;

    let mut outputs = Vec::new();
    for name in [
        artifacts::ROUND_LOG_FILE,
        artifacts::ERRORS_FILE,
        artifacts::CFN_FILE,
        artifacts::SUMMARY_DEVICES_FILE,
        artifacts::SUMMARY_AVERAGE_FILE,
        artifacts::SMOOTHED_FILE,
    ] {
        outputs.push(HashedFile { role: "output".into(), path: name.into(), hash: artifacts::file_hash(&output.join(name))? });
    }
    for id in &ids {
        let rel = Path::new(artifacts::PREDICTIONS_DIR).join(format!("{id}.csv"));
        outputs.push(HashedFile { role: "predictions".into(), hash: artifacts::file_hash(&output.join(&rel))?, path: rel });
    }
    let manifest = Manifest {
        version: 1,
        method: method.clone(),
        seed: config.seed,
        pretrained: config.paths.checkpoints.is_some(),
        config: SimConfig { paths: absolute_paths(&config.paths, output), ..config.clone() },
        inputs,
        outputs,
    };
    write_bytes_atomic(&output.join(artifacts::MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?.as_bytes())?;

    Ok(RunOutcome { dir: output.to_path_buf(), method, device_mse: ids.into_iter().zip(device_mse).collect(), avg_mse, summary_window: window })
}

/// Re-runs the configuration recorded in a manifest into `output`, after
/// checking the inputs still hash to the recorded values.
pub fn rerun(manifest_path: &Path, output: &Path) -> anyhow::Result<RunOutcome> {
    let manifest = Manifest::load(manifest_path)?;
    manifest.verify_inputs()?;
    let mut config = manifest.config;
    config.paths.output = Some(output.to_path_buf());
    run(&config, output)
}

/// Trains one model per device on its historical stream, starting from the
/// shared seeded initial model, and saves them as checkpoints in `dir`.
pub fn pretrain(config: &SimConfig, dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    config.validate()?;
    let params = config.sim_params()?;
    let metadata_path = SimConfig::require(&config.paths.metadata, "metadata")?;
    let history_path = SimConfig::require(&config.paths.pretrain, "pretrain")?;
    let registry = ingest::read_metadata_file(&metadata_path)?;
    let table = ingest::read_stream_file(&history_path, registry.ids())?;
    let learner = config.build_learner();
    let shared = learner.init(seed::derive(config.seed, &[seed::stream::INIT]));
    let ids: Vec<(usize, DeviceId)> = registry.ids().cloned().enumerate().collect();
    log::info!("pretraining {} devices on {} rows", ids.len(), table.len());

    let models = ids
        .par_iter()
        .map(|(idx, id)| {
            let series = &table.columns[id];
            let scaled = series.iter().map(|&x| params.normalization.map_or(x, |s| s.scale(x)));
            let window = DataWindow::from_points(scaled, series.len());
            let mut optimizer = RmsProp::new(params.optimizer, learner.num_params());
            let mut rng = seed::rng(config.seed, &[seed::stream::PRETRAIN, *idx as u64]);
            train_local(learner.as_ref(), &shared, &window, config.epochs, &mut optimizer, &mut rng)
                .with_context(|| format!("pretraining `{id}`"))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;

    let mut paths = Vec::with_capacity(ids.len());
    for ((_, id), model) in ids.iter().zip(&models) {
        let path = checkpoint_path(dir, id);
        write_atomic(&path, |w| Ok(save_checkpoint(model, w)?))?;
        paths.push(path);
    }
    Ok(paths)
}

pub fn checkpoint_path(dir: &Path, id: &DeviceId) -> PathBuf {
    dir.join(format!("{id}.json"))
}

fn hashed(role: &str, path: &Path) -> anyhow::Result<HashedFile> {
    let abs = std::fs::canonicalize(path).with_context(|| format!("{role} file {}", path.display()))?;
    Ok(HashedFile { role: role.into(), hash: artifacts::file_hash(&abs)?, path: abs })
}

fn absolute_paths(paths: &crate::config::Paths, output: &Path) -> crate::config::Paths {
    let abs = |p: &Option<PathBuf>| p.as_ref().map(|p| std::fs::canonicalize(p).unwrap_or_else(|_| p.clone()));
    crate::config::Paths {
        metadata: abs(&paths.metadata),
        stream: abs(&paths.stream),
        pretrain: abs(&paths.pretrain),
        checkpoints: abs(&paths.checkpoints),
        output: Some(std::fs::canonicalize(output).unwrap_or_else(|_| output.to_path_buf())),
    }
}

fn join_instance(v: &Option<Vec<f64>>) -> String {
    v.as_ref().map(|v| v.iter().map(f64::to_string).collect::<Vec<_>>().join(";")).unwrap_or_default()
}

/// `round,step,point,prediction,truth`; empty cells where a step has no
/// prediction or truth, multi-step instances joined with `;`.
pub fn prediction_csv(rounds: &[DeviceRound]) -> String {
    let mut out = String::from("round,step,point,prediction,truth\n");
    for r in rounds {
        for s in &r.steps {
            let _ = writeln!(out, "{},{},{},{},{}", r.round, s.m, s.point, join_instance(&s.prediction), join_instance(&s.truth));
        }
    }
    out
}

fn opt_id(id: &Option<DeviceId>) -> &str {
    id.as_ref().map_or("", |d| d.as_str())
}

fn errors_csv(history: &[Vec<DeviceRound>]) -> String {
    let mut out = String::from("round,device,error,eval_error,evaluated,added,removed,selected,favorites\n");
    let rounds = history.first().map_or(0, Vec::len);
    for j in 0..rounds {
        for dev in history {
            let d = &dev[j];
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                d.round,
                d.device,
                d.error,
                d.eval_error.map(|e| e.to_string()).unwrap_or_default(),
                opt_id(&d.evaluated),
                opt_id(&d.added),
                opt_id(&d.removed),
                opt_id(&d.selected),
                d.favorites.len()
            );
        }
    }
    out
}

fn cfn_csv(sim: &Simulation) -> String {
    let mut out = String::from("device,num_cfn\n");
    for d in sim.devices() {
        let _ = writeln!(out, "{},{}", d.id(), d.cfn().len());
    }
    out
}

fn smoothed_csv(config: &SimConfig, ids: &[DeviceId], pairs: &[Vec<RoundPairs>]) -> anyhow::Result<String> {
    let ranges = metrics::round_ranges(config.rounds, config.smoothing_first, config.smoothing_width)?;
    let per_device = pairs.iter().map(|p| metrics::round_range_mse(p, &ranges)).collect::<Result<Vec<_>, _>>()?;
    let mut out = String::from("first_round,last_round,avg_mse");
    for id in ids {
        write!(out, ",{id}")?;
    }
    out.push('\n');
    for (k, r) in ranges.iter().enumerate() {
        let avg = metrics::avg_device_mse(pairs, r.clone())?;
        write!(out, "{},{},{avg}", r.start(), r.end())?;
        for d in &per_device {
            write!(out, ",{}", d[k])?;
        }
        out.push('\n');
    }
    Ok(out)
}

/// Device coordinates and streams already in memory, for callers that do
/// not go through CSV files.
pub fn simulate_in_memory(
    config: &SimConfig,
    registry: &SensorRegistry,
    streams: &HashMap<DeviceId, Vec<f64>>,
) -> anyhow::Result<Vec<Vec<DeviceRound>>> {
    config.validate()?;
    let learner = config.build_learner();
    let initial = InitialModels::Shared(learner.init(seed::derive(config.seed, &[seed::stream::INIT])));
    let mut sim = Simulation::new(learner, config.sim_params()?, registry, streams, initial)?;
    let mut history: Vec<Vec<DeviceRound>> = vec![Vec::new(); registry.len()];
    for _ in 0..config.rounds {
        for (i, d) in sim.run_round()?.devices.into_iter().enumerate() {
            history[i].push(d);
        }
    }
    Ok(history)
}
