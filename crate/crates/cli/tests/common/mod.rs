#![allow(dead_code)]

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use neighborfl_cli::SimConfig;
use neighborfl_core::geo::{DeviceId, GpsCoord, SensorRegistry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Device ids of the 26-sensor study region.
pub const STUDY_IDS: [&str; 26] = [
    "401816_S", "401817_N", "400911_N", "400863_N", "409526_N", "409529_S", "409525_N", "409528_S", "402364_N",
    "402365_S", "401541_N", "400971_S", "400122_N", "404759_S", "400394_S", "404753_N", "400045_N", "400001_N",
    "400922_S", "400479_S", "400030_S", "401560_N", "401440_S", "400965_N", "400109_S", "400760_N",
];

/// Degrees of latitude per kilometer.
pub const DEG_PER_KM: f64 = 1.0 / 111.195;

pub struct Dataset {
    pub registry: SensorRegistry,
    pub streams: HashMap<DeviceId, Vec<f64>>,
}

impl Dataset {
    pub fn ids(&self) -> Vec<DeviceId> {
        self.registry.ids().cloned().collect()
    }

    /// Writes `metadata.csv` and `stream.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> (PathBuf, PathBuf) {
        std::fs::create_dir_all(dir).unwrap();
        let mut meta = String::from("device_id,lat,lon\n");
        for (id, c) in self.registry.iter() {
            writeln!(meta, "{id},{},{}", c.lat(), c.lon()).unwrap();
        }
        let ids = self.ids();
        let len = self.streams[&ids[0]].len();
        let mut stream = String::from("timestamp");
        for id in &ids {
            write!(stream, ",{id}").unwrap();
        }
        stream.push('\n');
        for t in 0..len {
            write!(stream, "2017-01-08T{:05}", t * 5).unwrap();
            for id in &ids {
                write!(stream, ",{}", self.streams[id][t]).unwrap();
            }
            stream.push('\n');
        }
        let (m, s) = (dir.join("metadata.csv"), dir.join("stream.csv"));
        std::fs::write(&m, meta).unwrap();
        std::fs::write(&s, stream).unwrap();
        (m, s)
    }
}

/// Devices on a north-south line `spacing_km` apart, each reading a noisy
/// sinusoid with its own phase.
pub fn line(ids: &[&str], spacing_km: f64, len: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut registry = SensorRegistry::new();
    let mut streams = HashMap::new();
    for (k, id) in ids.iter().enumerate() {
        registry.insert(*id, GpsCoord::new(37.3 + k as f64 * spacing_km * DEG_PER_KM, -121.9).unwrap()).unwrap();
        let phase = k as f64 * 0.4;
        let s = (0..len)
            .map(|t| 62.0 + 6.0 * (t as f64 * std::f64::consts::TAU / 48.0 + phase).sin() + rng.gen_range(-1.5..1.5))
            .collect();
        streams.insert(DeviceId::new(*id), s);
    }
    Dataset { registry, streams }
}

/// Two groups of `per_cluster` devices, `separation_km` apart, each group
/// within 0.5 km. One group follows a slow daily-like cycle, the other a
/// fast, deep oscillation, so their best linear predictors differ.
pub fn two_clusters(per_cluster: usize, separation_km: f64, len: usize, noise: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut registry = SensorRegistry::new();
    let mut streams = HashMap::new();
    for c in 0..2 {
        for k in 0..per_cluster {
            let id = format!("c{c}_{k:02}");
            let lat = 37.3 + c as f64 * separation_km * DEG_PER_KM + k as f64 * 0.1 * DEG_PER_KM;
            registry.insert(id.as_str(), GpsCoord::new(lat, -121.9).unwrap()).unwrap();
            let phase = rng.gen_range(-0.3..0.3);
            let s = (0..len)
                .map(|t| {
                    let t = t as f64;
                    let base = if c == 0 {
                        65.0 + 5.0 * (t * std::f64::consts::TAU / 48.0 + phase).sin()
                    } else {
                        45.0 - 12.0 * (t * std::f64::consts::TAU / 10.0 + phase).sin()
                    };
                    base + noise * rng.gen_range(-1.0..1.0)
                })
                .collect();
            streams.insert(DeviceId::new(id), s);
        }
    }
    Dataset { registry, streams }
}

/// Linear-learner config with the reference round shape.
pub fn linear_config(rounds: usize) -> SimConfig {
    SimConfig { learner: neighborfl_cli::config::LearnerKind::Linear, rounds, ..SimConfig::default() }
}

pub fn with_paths(mut config: SimConfig, metadata: &Path, stream: &Path) -> SimConfig {
    config.paths.metadata = Some(metadata.to_path_buf());
    config.paths.stream = Some(stream.to_path_buf());
    config
}

pub fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}
