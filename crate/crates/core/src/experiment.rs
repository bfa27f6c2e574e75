//! Sweep orchestration shared by the command-line driver and the tests.
//!
//! A sweep is the full factorial over devices, `J_t`, hold times and `s*`.
//! Points are numbered in that nesting order and each gets its own sampling
//! seed derived from the master seed, so results do not depend on how many
//! workers ran them or in which order they finished.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{write_records_csv, ExperimentRecord};
use crate::dynamics::{
    evolve, sample_outcomes, BasisMode, BathModel, EvolveOptions, DEFAULT_CUTOFF_GHZ, DEFAULT_ETA, DEFAULT_ETA_RATIO,
    DEFAULT_LINEWIDTH_GHZ, DEFAULT_TEMPERATURE_GHZ,
};
use crate::error::{Error, Result};
use crate::gadget::build_gadget;
use crate::schedule::{reverse_waveform, Device, ScheduleTable, MAX_RATE};

pub const TOP_CONFIGS: usize = 20;
pub const RECORDS_FILE: &str = "records.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const CONFIG_FILE: &str = "config.toml";
const PARTS_DIR: &str = "parts";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BathConfig {
    /// Coupling strength of the low-noise device and of custom schedules.
    pub eta: f64,
    /// `eta` multiplier for the high-noise device.
    pub eta_ratio: f64,
    pub temperature: f64,
    pub cutoff: f64,
    pub linewidth: f64,
    pub basis_mode: BasisMode,
    pub levels: usize,
    pub grid_steps: usize,
    pub window: f64,
    pub cotunneling: bool,
}

impl Default for BathConfig {
    fn default() -> Self {
        let evolve = EvolveOptions::default();
        BathConfig {
            eta: DEFAULT_ETA,
            eta_ratio: DEFAULT_ETA_RATIO,
            temperature: DEFAULT_TEMPERATURE_GHZ,
            cutoff: DEFAULT_CUTOFF_GHZ,
            linewidth: DEFAULT_LINEWIDTH_GHZ,
            basis_mode: BasisMode::ComputationalBasis,
            levels: evolve.levels,
            grid_steps: evolve.grid_steps,
            window: evolve.window,
            cotunneling: evolve.cotunneling,
        }
    }
}

impl BathConfig {
    pub fn bath(&self, eta: f64) -> Result<BathModel> {
        BathModel::new(eta, self.temperature, self.cutoff, self.basis_mode)?.with_linewidth(self.linewidth)
    }

    pub fn evolve_options(&self) -> Result<EvolveOptions> {
        if self.levels < 4 {
            return Err(Error::Config(format!("levels must be at least 4, got {}", self.levels)));
        }
        if self.grid_steps == 0 {
            return Err(Error::Config("grid_steps must be positive".into()));
        }
        Ok(EvolveOptions {
            levels: self.levels,
            grid_steps: self.grid_steps,
            window: self.window,
            cotunneling: self.cotunneling,
            ..EvolveOptions::default()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `low-noise`, `high-noise`, or a path to a schedule CSV.
    pub devices: Vec<String>,
    pub j_t: Vec<f64>,
    pub s_star: Vec<f64>,
    pub tau_us: Vec<f64>,
    pub shots: u64,
    pub seed: u64,
    pub bath: BathConfig,
}

/// `start, start + step, ...` up to `end`, rounded to 1e-9 so the values print cleanly.
pub fn grid(start: f64, end: f64, step: f64) -> Vec<f64> {
    let n = ((end - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| ((start + step * i as f64) * 1e9).round() / 1e9).collect()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            devices: vec![Device::LowNoise.label().into(), Device::HighNoise.label().into()],
            j_t: grid(0.0, 1.0, 0.1),
            s_star: grid(0.4, 0.8, 0.01),
            tau_us: vec![5.0, 100.0],
            shots: 10_000,
            seed: 1,
            bath: BathConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical TOML form, in hex.
    pub fn hash(&self) -> Result<String> {
        Ok(hex_digest(self.to_toml()?.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        for (name, list) in [("devices", self.devices.len()), ("j_t", self.j_t.len()), ("s_star", self.s_star.len()), ("tau_us", self.tau_us.len())] {
            if list == 0 {
                return Err(Error::Config(format!("{name} must not be empty")));
            }
        }
        if self.shots == 0 {
            return Err(Error::Config("shots must be at least 1".into()));
        }
        if let Some(&j) = self.j_t.iter().find(|j| !(0.0..=1.0).contains(*j)) {
            return Err(Error::out_of_range("J_t", j, "[0, 1]"));
        }
        if let Some(&s) = self.s_star.iter().find(|s| !(**s > 0.0 && **s < 1.0)) {
            return Err(Error::out_of_range("s_star", s, "(0, 1)"));
        }
        if let Some(&t) = self.tau_us.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
            return Err(Error::out_of_range("tau_us", t, "[0, inf)"));
        }
        if !(self.bath.eta_ratio > 0.0 && self.bath.eta_ratio.is_finite()) {
            return Err(Error::out_of_range("eta_ratio", self.bath.eta_ratio, "(0, inf)"));
        }
        for d in &self.devices {
            if Device::parse(d).is_none() && !Path::new(d).is_file() {
                return Err(Error::Config(format!("device {d:?} is neither a known device nor a schedule file")));
            }
        }
        self.bath.bath(self.bath.eta)?;
        self.bath.evolve_options()?;
        Ok(())
    }

    pub fn n_points(&self) -> usize {
        self.devices.len() * self.j_t.len() * self.tau_us.len() * self.s_star.len()
    }

    /// Point `index` in device, J_t, τ, s* nesting order.
    pub fn point(&self, index: usize) -> Point {
        let ns = self.s_star.len();
        let nt = self.tau_us.len();
        let nj = self.j_t.len();
        Point {
            index,
            device: index / (ns * nt * nj),
            j_t: self.j_t[index / (ns * nt) % nj],
            tau_us: self.tau_us[index / ns % nt],
            s_star: self.s_star[index % ns],
        }
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub index: usize,
    pub device: usize,
    pub j_t: f64,
    pub tau_us: f64,
    pub s_star: f64,
}

/// Sampling seed of point `index`: the first output of stream `index` of a
/// ChaCha8 generator keyed by the master seed.
pub fn point_seed(master: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index as u64);
    rng.next_u64()
}

/// A device ready to simulate: schedule plus bath.
#[derive(Debug, Clone)]
pub struct DeviceSetup {
    pub label: String,
    pub schedule: ScheduleTable,
    pub bath: BathModel,
}

impl DeviceSetup {
    pub fn resolve(name: &str, cfg: &BathConfig) -> Result<Self> {
        match Device::parse(name) {
            Some(device) => {
                let eta = match device {
                    Device::LowNoise => cfg.eta,
                    Device::HighNoise => cfg.eta * cfg.eta_ratio,
                };
                Ok(DeviceSetup {
                    label: device.label().into(),
                    schedule: ScheduleTable::synthetic(device),
                    bath: cfg.bath(eta)?,
                })
            }
            None => Ok(DeviceSetup {
                label: name.into(),
                schedule: ScheduleTable::load(Path::new(name))?,
                bath: cfg.bath(cfg.eta)?,
            }),
        }
    }
}

/// Simulates one protocol run and samples `shots` readouts.
pub fn run_point(
    setup: &DeviceSetup,
    opts: &EvolveOptions,
    j_t: f64,
    s_star: f64,
    tau_us: f64,
    shots: u64,
    seed: u64,
) -> Result<ExperimentRecord> {
    let gadget = build_gadget(j_t)?;
    let waveform = reverse_waveform(s_star, tau_us, MAX_RATE)?;
    let state = evolve(&gadget.problem, &waveform, &setup.schedule, &setup.bath, opts, &gadget.spec.start_state)?;
    let hist = sample_outcomes(&state, shots, seed)?;
    let counts = hist.class_counts(&gadget.spec)?;
    let mut record = ExperimentRecord::new(
        setup.label.clone(),
        j_t,
        s_star,
        setup.schedule.gamma(s_star)?,
        tau_us,
        counts,
    )?;
    record.seed = Some(seed);
    record.top = hist.top(TOP_CONFIGS);
    Ok(record)
}

#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    /// Worker threads; `None` uses every available core.
    pub jobs: Option<usize>,
    /// Keep points already persisted in the output directory.
    pub resume: bool,
    pub progress: bool,
}

fn header(hash: &str) -> String {
    format!("# config-hash: {hash}\n")
}

fn read_persisted(path: &Path, hash: &str, into: &mut BTreeMap<usize, ExperimentRecord>) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if let Some(h) = line.strip_prefix("# config-hash: ") {
            if h.trim() != hash {
                return Err(Error::Config(format!(
                    "{} was written by a different configuration (hash {})",
                    path.display(),
                    h.trim()
                )));
            }
            continue;
        }
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        match serde_json::from_str::<ExperimentRecord>(&line) {
            Ok(r) => {
                if let Some(p) = r.point {
                    into.insert(p, r);
                }
            }
            // A worker killed mid-write can leave a torn final line.
            Err(_) => continue,
        }
    }
    Ok(())
}

/// Runs every point of `config`, persisting into `out_dir`, and returns the
/// records in point order. Outputs: `config.toml`, `records.jsonl` and
/// `summary.csv`, each starting with a config-hash comment line.
pub fn run_sweep(config: &ExperimentConfig, out_dir: &Path, opts: &SweepOptions) -> Result<Vec<ExperimentRecord>> {
    config.validate()?;
    let hash = config.hash()?;
    let evolve_opts = config.bath.evolve_options()?;
    let setups = config
        .devices
        .iter()
        .map(|d| DeviceSetup::resolve(d, &config.bath))
        .collect::<Result<Vec<_>>>()?;

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let parts_dir = out_dir.join(PARTS_DIR);
    let mut done = BTreeMap::new();
    if opts.resume {
        read_persisted(&out_dir.join(RECORDS_FILE), &hash, &mut done)?;
        if parts_dir.is_dir() {
            let mut parts: Vec<PathBuf> = fs::read_dir(&parts_dir)
                .map_err(|e| Error::io(&parts_dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .collect();
            parts.sort();
            for p in parts {
                read_persisted(&p, &hash, &mut done)?;
            }
        }
    } else if parts_dir.exists() {
        fs::remove_dir_all(&parts_dir).map_err(|e| Error::io(&parts_dir, e))?;
    }
    done.retain(|&p, _| p < config.n_points());

    let config_path = out_dir.join(CONFIG_FILE);
    fs::write(&config_path, header(&hash) + &config.to_toml()?).map_err(|e| Error::io(&config_path, e))?;

    let todo: Vec<usize> = (0..config.n_points()).filter(|p| !done.contains_key(p)).collect();
    if !todo.is_empty() {
        fs::create_dir_all(&parts_dir).map_err(|e| Error::io(&parts_dir, e))?;
        let jobs = opts
            .jobs
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
            .max(1);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        let writers = (0..jobs)
            .map(|w| {
                let path = parts_dir.join(format!("worker-{w:03}.jsonl"));
                let mut file = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&path)
                    .map_err(|e| Error::io(&path, e))?;
                file.write_all(header(&hash).as_bytes()).map_err(|e| Error::io(&path, e))?;
                Ok(Mutex::new((path, BufWriter::new(file))))
            })
            .collect::<Result<Vec<_>>>()?;
        let total = todo.len();
        let finished = Mutex::new(0usize);
        let fresh: Vec<ExperimentRecord> = pool.install(|| {
            todo.par_iter()
                .map(|&index| {
                    let pt = config.point(index);
                    let setup = &setups[pt.device];
                    let seed = point_seed(config.seed, index);
                    let mut record =
                        run_point(setup, &evolve_opts, pt.j_t, pt.s_star, pt.tau_us, config.shots, seed)?;
                    record.point = Some(index);
                    let worker = rayon::current_thread_index().unwrap_or(0) % writers.len();
                    {
                        let mut guard = writers[worker].lock().expect("writer lock");
                        let (path, w) = &mut *guard;
                        let line = serde_json::to_string(&record)?;
                        writeln!(w, "{line}")
                            .and_then(|_| w.flush())
                            .map_err(|e| Error::io(path.as_path(), e))?;
                    }
                    if opts.progress {
                        let mut n = finished.lock().expect("progress lock");
                        *n += 1;
                        eprintln!(
                            "[{}/{}] {} J_t={} tau={} s*={}",
                            *n, total, setup.label, pt.j_t, pt.tau_us, pt.s_star
                        );
                    }
                    Ok(record)
                })
                .collect::<Result<Vec<_>>>()
        })?;
        for r in fresh {
            done.insert(r.point.expect("set above"), r);
        }
    }

    let records: Vec<ExperimentRecord> = done.into_values().collect();
    write_outputs(out_dir, &hash, &records)?;
    if parts_dir.exists() {
        fs::remove_dir_all(&parts_dir).map_err(|e| Error::io(&parts_dir, e))?;
    }
    Ok(records)
}

fn write_outputs(out_dir: &Path, hash: &str, records: &[ExperimentRecord]) -> Result<()> {
    let jsonl = out_dir.join(RECORDS_FILE);
    let mut text = header(hash);
    for r in records {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    fs::write(&jsonl, text).map_err(|e| Error::io(&jsonl, e))?;

    let csv_path = out_dir.join(SUMMARY_FILE);
    let mut buf = header(hash).into_bytes();
    write_records_csv(records, &mut buf)?;
    fs::write(&csv_path, buf).map_err(|e| Error::io(&csv_path, e))?;
    Ok(())
}

/// Records of one (device, J_t, τ) slice, in ascending s*.
pub fn slice<'a>(records: &'a [ExperimentRecord], device: &str, j_t: f64, tau_us: f64) -> Vec<&'a ExperimentRecord> {
    let mut v: Vec<&ExperimentRecord> = records
        .iter()
        .filter(|r| r.device == device && r.j_t == j_t && r.tau_us == tau_us)
        .collect();
    v.sort_by(|a, b| a.s_star.total_cmp(&b.s_star));
    v
}

/// Distinct values of a record field, in ascending order.
pub fn distinct(records: &[ExperimentRecord], field: impl Fn(&ExperimentRecord) -> f64) -> Vec<f64> {
    let set: BTreeSet<u64> = records.iter().map(|r| field(r).to_bits()).collect();
    let mut v: Vec<f64> = set.into_iter().map(f64::from_bits).collect();
    v.sort_by(f64::total_cmp);
    v
}
