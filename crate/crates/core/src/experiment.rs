//! Seeded Monte-Carlo experiments and their CSV tables.
//!
//! Trials run on a rayon pool and are collected in trial order before any
//! reduction, so results do not depend on the worker count.

use std::fmt::{self, Write as _};
use std::path::Path as FsPath;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::backscatter::{
    frame_errors, hive_mac_session, payload_duration_bits, BerPoint, DEFAULT_BITRATE,
};
use crate::channel::{draw_multipath, MultipathField};
use crate::error::{Error, Result};
use crate::pipeline::{Deployment, StaticSweep};
use crate::power::{average_current, battery_life, power_report, rf_charge_time, solar_power};
use crate::receiver::{
    estimate_angle, locate_preamble, LogStore, Receiver, SensorKind, SensorRecord, DEFAULT_LOG_CAPACITY, RECORD_BYTES,
};
use crate::rng::{self, Purpose};
use crate::scenario::{true_bearing, ChannelConfig, Position, Scenario, SweepMode, Trajectory, FARM_SIZE};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentName {
    MultipathGrid,
    RangeSweep,
    FarmCdf,
    SpeedSweep,
    BerVsSnr,
    MacSession,
    PowerReport,
}

impl ExperimentName {
    pub const ALL: [ExperimentName; 7] = [
        ExperimentName::MultipathGrid,
        ExperimentName::RangeSweep,
        ExperimentName::FarmCdf,
        ExperimentName::SpeedSweep,
        ExperimentName::BerVsSnr,
        ExperimentName::MacSession,
        ExperimentName::PowerReport,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentName::MultipathGrid => "multipath-grid",
            ExperimentName::RangeSweep => "range-sweep",
            ExperimentName::FarmCdf => "farm-cdf",
            ExperimentName::SpeedSweep => "speed-sweep",
            ExperimentName::BerVsSnr => "ber-vs-snr",
            ExperimentName::MacSession => "mac-session",
            ExperimentName::PowerReport => "power-report",
        }
    }

    /// Trials used when none are requested.
    pub fn default_trials(self) -> u64 {
        match self {
            ExperimentName::BerVsSnr => 1_000_000,
            ExperimentName::FarmCdf => 1000,
            ExperimentName::MacSession | ExperimentName::PowerReport => 1,
            _ => 10_000,
        }
    }
}

impl fmt::Display for ExperimentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentName::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::UnknownExperiment(s.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub name: ExperimentName,
    pub scenario: Scenario,
    pub trials: u64,
    pub seed: u64,
    pub mode: SweepMode,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl ExperimentSpec {
    /// Spec using the scenario's seed and sweep mode.
    pub fn new(name: ExperimentName, scenario: Scenario, trials: u64) -> Self {
        ExperimentSpec {
            name,
            seed: scenario.seed,
            mode: scenario.sweep_mode,
            scenario,
            trials,
            workers: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::validation("trials", "must be at least 1"));
        }
        if self.workers == Some(0) {
            return Err(Error::validation("workers", "must be at least 1"));
        }
        self.scenario.validate()
    }
}

/// Numeric table with `key: value` metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub metadata: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl ResultTable {
    pub fn new(columns: &[&str]) -> Self {
        ResultTable { metadata: Vec::new(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn meta(&mut self, key: &str, value: impl fmt::Display) {
        self.metadata.push((key.to_string(), value.to_string()));
    }

    pub fn get_meta(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn push(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::Malformed(format!("row has {} values for {} columns", row.len(), self.columns.len())));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.metadata {
            let _ = writeln!(out, "# {k}: {v}");
        }
        let _ = writeln!(out, "{}", self.columns.join(","));
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let mut metadata = Vec::new();
        let header = loop {
            let line = lines.next().ok_or_else(|| Error::Malformed("missing column header".into()))?;
            match line.strip_prefix("# ") {
                Some(meta) => {
                    let (k, v) = meta.split_once(": ").ok_or_else(|| Error::Malformed(format!("bad metadata line {line:?}")))?;
                    metadata.push((k.to_string(), v.to_string()));
                }
                None => break line,
            }
        };
        let columns: Vec<String> = header.split(',').map(str::to_string).collect();
        let mut table = ResultTable { metadata, columns, rows: Vec::new() };
        for line in lines.filter(|l| !l.is_empty()) {
            let row = line
                .split(',')
                .map(|c| c.parse::<f64>().map_err(|_| Error::Malformed(format!("bad number {c:?}"))))
                .collect::<Result<Vec<_>>>()?;
            table.push(row)?;
        }
        Ok(table)
    }
}

pub fn emit_csv(table: &ResultTable, path: &FsPath) -> Result<()> {
    std::fs::write(path, table.to_csv())?;
    Ok(())
}

/// SHA-256 of the scenario's canonical TOML form.
pub fn scenario_hash(scenario: &Scenario) -> String {
    let digest = Sha256::digest(scenario.to_toml().as_bytes());
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn run_trials<T, F>(workers: Option<usize>, n: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    let work = || (0..n).into_par_iter().map(&f).collect::<Vec<Result<T>>>();
    let results = match workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::Domain(format!("cannot start {w} workers: {e}")))?
            .install(work),
        None => work(),
    };
    results.into_iter().collect()
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub const GRID_ANTENNAS: [usize; 4] = [2, 3, 4, 5];
pub const GRID_RATIOS: [f64; 12] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 1.0];
/// Bearings drawn for single-AP ensembles, degrees either side of boresight.
pub const BEARING_SPAN_DEG: f64 = 60.0;
/// Insect distance for the multipath grid, meters.
pub const GRID_DISTANCE: f64 = 20.0;
pub const RANGE_DISTANCES: [f64; 14] = [1.0, 5.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 100.0, 110.0, 120.0];
pub const SPEEDS: [f64; 8] = [0.0, 1.0, 2.0, 3.0, 5.0, 7.0, 8.0, 9.1];
pub const SNR_POINTS_DB: [f64; 9] = [0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0];
pub const BER_FRAME_BITS: usize = 1000;
/// Farm trials draw the multipath ratio uniformly from [0, this].
pub const FARM_MAX_RATIO: f64 = 0.6;
/// Fix cycles per speed-sweep trial.
pub const SPEED_CYCLES: usize = 5;

fn offset(ap_pos: Position, heading: f64, distance: f64) -> Position {
    Position::new(ap_pos.x + distance * heading.cos(), ap_pos.y + distance * heading.sin())
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ResultTable> {
    spec.validate()?;
    let mut table = match spec.name {
        ExperimentName::MultipathGrid => multipath_grid(spec)?,
        ExperimentName::RangeSweep => range_sweep(spec)?,
        ExperimentName::FarmCdf => farm_cdf(spec)?,
        ExperimentName::SpeedSweep => speed_sweep(spec)?,
        ExperimentName::BerVsSnr => ber_vs_snr(spec)?,
        ExperimentName::MacSession => mac_session(spec)?,
        ExperimentName::PowerReport => power_table(spec)?,
    };
    let mut head = vec![
        ("experiment".to_string(), spec.name.to_string()),
        ("tool".to_string(), format!("insectloc {TOOL_VERSION}")),
        ("scenario_sha256".to_string(), scenario_hash(&spec.scenario)),
        ("seed".to_string(), spec.seed.to_string()),
        ("trials".to_string(), spec.trials.to_string()),
        ("mode".to_string(), spec.mode.to_string()),
    ];
    head.append(&mut table.metadata);
    table.metadata = head;
    Ok(table)
}

/// Mean |error| over N and R for a single AP with multipath as the only
/// impairment. Raw multipath draws are shared across the grid so cells differ
/// only in N and in the amplitude scale.
fn multipath_grid(spec: &ExperimentSpec) -> Result<ResultTable> {
    let sc = &spec.scenario;
    let base = sc.aps[0].clone();
    let sweeps: Vec<StaticSweep> = GRID_ANTENNAS
        .iter()
        .map(|&n| StaticSweep::new(base.clone().with_antennas(n), spec.mode, sc.detector.clone()))
        .collect::<Result<_>>()?;
    let ratios = GRID_RATIOS;
    let per_trial = run_trials(spec.workers, spec.trials, |trial| {
        let mut geo = rng::stream(spec.seed, Purpose::Geometry, trial, 0);
        let bearing = geo.gen_range(-BEARING_SPAN_DEG..=BEARING_SPAN_DEG).to_radians();
        let position = offset(base.position, base.boresight + bearing, GRID_DISTANCE);
        let mut errors = Vec::with_capacity(sweeps.len() * ratios.len());
        for sweep in &sweeps {
            for &r in &ratios {
                let channel = ChannelConfig { multipath_ratio: r, ..sc.channel.clone() };
                let paths = draw_multipath(&channel, &mut rng::stream(spec.seed, Purpose::Multipath, trial, 0));
                let est = sweep.angle(&paths, position, sc.channel.noise_power, None)?;
                errors.push((est - bearing).to_degrees());
            }
        }
        Ok(errors)
    })?;
    let mut table = ResultTable::new(&["N", "R", "mean_abs_error_deg", "mean_signed_error_deg"]);
    for (i, &n) in GRID_ANTENNAS.iter().enumerate() {
        for (j, &r) in ratios.iter().enumerate() {
            let k = i * ratios.len() + j;
            let errs: Vec<f64> = per_trial.iter().map(|e| e[k]).collect();
            let abs: Vec<f64> = errs.iter().map(|e| e.abs()).collect();
            table.push(vec![n as f64, r, mean(&abs), mean(&errs)])?;
        }
    }
    table.meta("distance_m", GRID_DISTANCE);
    table.meta("bearing_span_deg", BEARING_SPAN_DEG);
    table.meta("nlos_paths", sc.channel.nlos_paths);
    table.meta("noise", "none");
    Ok(table)
}

/// Single-AP angle error and preamble detection rate versus distance.
fn range_sweep(spec: &ExperimentSpec) -> Result<ResultTable> {
    let sc = &spec.scenario;
    let ap = sc.aps[0].clone();
    let dep = Deployment::new(vec![ap.clone()], spec.mode, sc.channel.clone(), sc.detector.clone())?;
    let timing = dep.timing(0)?;
    let mut table = ResultTable::new(&["distance_m", "mean_error_deg", "detect_rate", "median_error_deg"]);
    for (di, &distance) in RANGE_DISTANCES.iter().enumerate() {
        let outcomes = run_trials(spec.workers, spec.trials, |trial| {
            let sub = di as u64;
            let mut geo = rng::stream(spec.seed, Purpose::Geometry, trial, sub);
            let bearing = geo.gen_range(-BEARING_SPAN_DEG..=BEARING_SPAN_DEG).to_radians();
            let jitter = geo.gen_range(0..2 * timing.bit);
            let position = offset(ap.position, ap.boresight + bearing, distance);
            let traj = Trajectory::stationary(position);
            let mp = MultipathField { channel: sc.channel.clone(), seed: spec.seed, trial: trial * 1000 + sub };
            let t0 = -(jitter as f64) / timing.sample_rate;
            let mut cr = rng::stream(spec.seed, Purpose::ChannelNoise, trial, sub);
            let mut dr = rng::stream(spec.seed, Purpose::Detector, trial, sub);
            let env = dep.envelope(&traj, &mp, t0, timing.period + 2 * timing.bit, &mut cr, Some(&mut dr))?;
            let Some(hit) = locate_preamble(&env, ap.preamble_id, &timing, 0..2 * timing.bit)? else {
                return Ok(None);
            };
            if hit.start.abs_diff(jitter) > timing.bit / 2 {
                return Ok(None);
            }
            let (angle, _) = estimate_angle(&env, hit.start, &timing)?;
            Ok(Some((angle - bearing).to_degrees().abs()))
        })?;
        let errs: Vec<f64> = outcomes.iter().flatten().copied().collect();
        table.push(vec![distance, mean(&errs), errs.len() as f64 / spec.trials as f64, median(&errs)])?;
    }
    table.meta("multipath_ratio", sc.channel.multipath_ratio);
    table.meta("antennas", ap.antenna_count);
    Ok(table)
}

/// Uniform point in the field's interior, at least 1 m from each edge.
fn field_point(rng: &mut impl Rng) -> Position {
    let (w, h) = FARM_SIZE;
    Position::new(rng.gen_range(1.0..w - 1.0), rng.gen_range(1.0..h - 1.0))
}

/// Full two-AP pipeline at random static farm locations.
fn farm_cdf(spec: &ExperimentSpec) -> Result<ResultTable> {
    let sc = &spec.scenario;
    if sc.aps.len() < 2 {
        return Err(Error::validation("aps", "farm-cdf needs two APs"));
    }
    let dep = Deployment::new(sc.aps.clone(), spec.mode, sc.channel.clone(), sc.detector.clone())?;
    let timing = dep.timing(0)?;
    let receiver = Receiver::new(&sc.aps[0], &sc.aps[1], sc.detector.sample_rate, spec.mode, sc.smoothing)?;
    let outcomes = run_trials(spec.workers, spec.trials, |trial| {
        let mut geo = rng::stream(spec.seed, Purpose::Geometry, trial, 0);
        let truth = field_point(&mut geo);
        let ratio = geo.gen_range(0.0..=FARM_MAX_RATIO);
        let jitter = geo.gen_range(0..2 * timing.bit);
        let channel = ChannelConfig { multipath_ratio: ratio, ..sc.channel.clone() };
        let mp = MultipathField { channel, seed: spec.seed, trial };
        let traj = Trajectory::stationary(truth);
        let mut cr = rng::stream(spec.seed, Purpose::ChannelNoise, trial, 0);
        let mut dr = rng::stream(spec.seed, Purpose::Detector, trial, 0);
        let t0 = -(jitter as f64) / timing.sample_rate;
        let env = dep.envelope(&traj, &mp, t0, 3 * timing.period, &mut cr, Some(&mut dr))?;
        let mut rx = receiver.clone();
        let error = match rx.process(&env)? {
            Some(out) => out.fix.map(|f| f.position.distance(&truth)).unwrap_or(f64::NAN),
            None => f64::NAN,
        };
        Ok((truth, ratio, error))
    })?;
    let errors: Vec<f64> = outcomes.iter().map(|o| o.2).filter(|e| !e.is_nan()).collect();
    let mut order: Vec<usize> = (0..outcomes.len()).collect();
    order.sort_by(|&a, &b| outcomes[a].2.total_cmp(&outcomes[b].2).then(a.cmp(&b)));
    let mut table = ResultTable::new(&["trial", "x_m", "y_m", "multipath_ratio", "error_m", "cdf"]);
    let fixed = errors.len() as f64;
    for (rank, &i) in order.iter().enumerate() {
        let (p, r, e) = outcomes[i];
        let cdf = if e.is_nan() { f64::NAN } else { (rank + 1) as f64 / fixed };
        table.push(vec![i as f64, p.x, p.y, r, e, cdf])?;
    }
    table.meta("median_error_m", median(&errors));
    // Missed fixes count as unbounded error here.
    let all: Vec<f64> = outcomes.iter().map(|o| if o.2.is_nan() { f64::INFINITY } else { o.2 }).collect();
    table.meta("median_error_with_misses_m", median(&all));
    table.meta("fix_rate", fixed / spec.trials as f64);
    table.meta("max_multipath_ratio", FARM_MAX_RATIO);
    Ok(table)
}

/// Angle error for an insect moving in a straight line at each speed.
fn speed_sweep(spec: &ExperimentSpec) -> Result<ResultTable> {
    let sc = &spec.scenario;
    if sc.aps.len() < 2 {
        return Err(Error::validation("aps", "speed-sweep needs two APs"));
    }
    let dep = Deployment::new(sc.aps.clone(), spec.mode, sc.channel.clone(), sc.detector.clone())?;
    let timing = dep.timing(0)?;
    let cycle = dep.plan.period;
    let receiver = Receiver::new(&sc.aps[0], &sc.aps[1], sc.detector.sample_rate, spec.mode, sc.smoothing)?;
    let mut table = ResultTable::new(&["speed_mps", "mean_error_deg", "mean_smoothed_error_deg", "detect_rate"]);
    for (si, &speed) in SPEEDS.iter().enumerate() {
        let outcomes = run_trials(spec.workers, spec.trials, |trial| {
            let sub = si as u64;
            let mut geo = rng::stream(spec.seed, Purpose::Geometry, trial, sub);
            let (w, h) = FARM_SIZE;
            let start = Position::new(geo.gen_range(w * 0.25..w * 0.75), geo.gen_range(h * 0.25..h * 0.75));
            let heading = geo.gen_range(0.0..std::f64::consts::TAU);
            let jitter = geo.gen_range(0..2 * timing.bit);
            let (begin, end) = (-cycle, (SPEED_CYCLES as f64 + 1.0) * cycle);
            let stop = offset(start, heading, speed * (end - begin));
            let traj = if speed == 0.0 {
                Trajectory::stationary(start)
            } else {
                Trajectory::new(vec![(begin, start), (end, stop)])?
            };
            let mp = MultipathField { channel: sc.channel.clone(), seed: spec.seed, trial: trial * 1000 + sub };
            let mut cr = rng::stream(spec.seed, Purpose::ChannelNoise, trial, sub);
            let mut dr = rng::stream(spec.seed, Purpose::Detector, trial, sub);
            let mut rx = receiver.clone();
            let (mut raw, mut smooth, mut found) = (Vec::new(), Vec::new(), 0usize);
            for c in 0..SPEED_CYCLES {
                let t0 = c as f64 * cycle - jitter as f64 / timing.sample_rate;
                let env = dep.envelope(&traj, &mp, t0, 3 * timing.period, &mut cr, Some(&mut dr))?;
                if let Some(out) = rx.process(&env)? {
                    found += 1;
                    for e in &out.estimates {
                        let truth = true_bearing(&sc.aps[e.ap_index], traj.position_at(e.timestamp)?)?;
                        raw.push((e.raw_angle - truth).to_degrees().abs());
                        smooth.push((e.smoothed_angle - truth).to_degrees().abs());
                    }
                }
            }
            Ok((raw, smooth, found))
        })?;
        let raw: Vec<f64> = outcomes.iter().flat_map(|o| o.0.iter().copied()).collect();
        let smooth: Vec<f64> = outcomes.iter().flat_map(|o| o.1.iter().copied()).collect();
        let found: usize = outcomes.iter().map(|o| o.2).sum();
        let rate = found as f64 / (spec.trials as f64 * SPEED_CYCLES as f64);
        table.push(vec![speed, mean(&raw), mean(&smooth), rate])?;
    }
    table.meta("cycles_per_trial", SPEED_CYCLES);
    table.meta("multipath_ratio", sc.channel.multipath_ratio);
    table.meta("doppler", sc.channel.doppler);
    Ok(table)
}

/// Bit error rate of the uplink demodulator; `trials` bits per SNR point.
fn ber_vs_snr(spec: &ExperimentSpec) -> Result<ResultTable> {
    let demod = spec.scenario.link.demod;
    let frames = spec.trials.div_ceil(BER_FRAME_BITS as u64);
    let mut table = ResultTable::new(&["snr_db", "bits", "errors", "ber", "ci95"]);
    for &snr in &SNR_POINTS_DB {
        let counts = run_trials(spec.workers, frames, |f| {
            let bits = (spec.trials - f * BER_FRAME_BITS as u64).min(BER_FRAME_BITS as u64) as usize;
            frame_errors(snr, bits, &demod, spec.seed, f).map(|e| (bits as u64, e))
        })?;
        let point = BerPoint {
            snr_db: snr,
            bits: counts.iter().map(|c| c.0).sum(),
            errors: counts.iter().map(|c| c.1).sum(),
        };
        table.push(vec![snr, point.bits as f64, point.errors as f64, point.ber(), point.ci95()])?;
    }
    table.meta("frame_bits", BER_FRAME_BITS);
    table.meta("bandpass_hz", demod.bandwidth);
    Ok(table)
}

/// Synthetic log of `count` records for one insect.
pub fn synthetic_log(count: usize, seed: u64, insect: u64) -> Result<LogStore> {
    let mut r = rng::stream(seed, Purpose::Payload, insect, 1);
    let mut store = LogStore::new(DEFAULT_LOG_CAPACITY);
    for i in 0..count {
        let kind = [SensorKind::Humidity, SensorKind::Temperature, SensorKind::Light][i % 3];
        let code = r.gen_range(0..1u16 << kind.bits());
        store.log_record(SensorRecord::new(kind, code, r.gen(), r.gen())?)?;
    }
    Ok(store)
}

fn mac_session(spec: &ExperimentSpec) -> Result<ResultTable> {
    let sc = &spec.scenario;
    let mut table = ResultTable::new(&[
        "insect_id",
        "bits_sent",
        "bit_errors",
        "duration_s",
        "skipped_flag",
        "session",
        "attempts",
        "uplink_start_s",
        "uplink_end_s",
    ]);
    let sessions = run_trials(spec.workers, spec.trials, |session| {
        let insects = sc
            .hive
            .insects
            .iter()
            .enumerate()
            .map(|(k, ins)| Ok((ins.clone(), synthetic_log(ins.records, spec.seed, session * 1000 + k as u64)?)))
            .collect::<Result<Vec<_>>>()?;
        hive_mac_session(&insects, &sc.link, &sc.detector, sc.hive.retries, spec.seed.wrapping_add(session))
    })?;
    for (session, rows) in sessions.iter().enumerate() {
        for r in rows {
            let (a, b) = r.uplink.unwrap_or((f64::NAN, f64::NAN));
            table.push(vec![
                f64::from(r.insect_id),
                r.bits_sent as f64,
                r.bit_errors as f64,
                r.duration,
                f64::from(u8::from(r.skipped)),
                session as f64,
                f64::from(r.attempts),
                a,
                b,
            ])?;
        }
    }
    let record_bits = RECORD_BYTES * 8;
    table.meta("record_bits", record_bits);
    table.meta("airtime_10_records_s", payload_duration_bits(10 * record_bits, DEFAULT_BITRATE)?);
    table.meta("airtime_32_bits_s", payload_duration_bits(32, DEFAULT_BITRATE)?);
    table.meta(
        "note",
        "a 32 ms upload at 1 kbps carries 32 bits which is one record; ten 4-byte records need 320 ms",
    );
    Ok(table)
}

fn power_table(spec: &ExperimentSpec) -> Result<ResultTable> {
    let sc = &spec.scenario;
    let mut table = ResultTable::new(&["interval_s", "avg_uA", "avg_uW", "life_h"]);
    for row in power_report(&sc.power, &sc.battery)? {
        table.push(vec![row.interval, row.average_ua, row.average_uw, row.life_hours])?;
    }
    let avg = average_current(&sc.power);
    table.meta("configured_interval_s", sc.power.measurement_interval);
    table.meta("configured_avg_uA", avg * 1000.0);
    table.meta("configured_life_h", battery_life(&sc.battery, avg)?);
    match rf_charge_time(&sc.harvest, &sc.battery).hours() {
        Some(h) => table.meta("rf_charge_time_h", h),
        None => table.meta("rf_charge_time_h", "never"),
    }
    table.meta("solar_uW_at_1000_lux", solar_power(&sc.harvest, 1000.0)?);
    table.meta("solar_uW_at_20000_lux", solar_power(&sc.harvest, 20000.0)?);
    let records = DEFAULT_LOG_CAPACITY / RECORD_BYTES;
    table.meta("log_records", records);
    table.meta("log_hours_at_5s", records as f64 * 5.0 / 3600.0);
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(name: ExperimentName, trials: u64) -> ExperimentSpec {
        ExperimentSpec::new(name, Scenario::farm(), trials)
    }

    #[test]
    fn names_round_trip() {
        for e in ExperimentName::ALL {
            assert_eq!(e.as_str().parse::<ExperimentName>().unwrap(), e);
        }
        assert!(matches!("fig-6".parse::<ExperimentName>(), Err(Error::UnknownExperiment(_))));
    }

    #[test]
    fn zero_trials_rejected() {
        assert!(run_experiment(&spec(ExperimentName::PowerReport, 0)).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let t = run_experiment(&spec(ExperimentName::PowerReport, 1)).unwrap();
        let back = ResultTable::from_csv(&t.to_csv()).unwrap();
        assert_eq!(back.columns, t.columns);
        assert_eq!(back.metadata, t.metadata);
        for (a, b) in back.rows.iter().flatten().zip(t.rows.iter().flatten()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn header_only_table() {
        let t = ResultTable::new(&["a", "b"]);
        assert_eq!(t.to_csv(), "a,b\n");
        assert_eq!(ResultTable::from_csv("a,b\n").unwrap().rows.len(), 0);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[f64::NAN]).is_nan());
    }

    #[test]
    fn power_report_values() {
        let t = run_experiment(&spec(ExperimentName::PowerReport, 1)).unwrap();
        assert_eq!(t.get_meta("configured_avg_uA"), Some("137.5"));
        assert_eq!(t.get_meta("solar_uW_at_1000_lux"), Some("1"));
        assert_eq!(t.get_meta("log_records"), Some("8192"));
    }

    #[test]
    fn small_grid_runs() {
        let t = run_experiment(&spec(ExperimentName::MultipathGrid, 20)).unwrap();
        assert_eq!(t.rows.len(), 4 * GRID_RATIOS.len());
        let err = t.column("mean_abs_error_deg").unwrap();
        assert!(err.iter().all(|e| e.is_finite()));
    }
}
