//! Insect-side processing: envelope detection, preamble search, peak-based
//! angle extraction, exponential smoothing, the lookup-table 2D fix and the
//! flash log of sensor records.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::Write as _;
use std::ops::Range;

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};

use crate::channel::FieldTrace;
use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::scenario::{ApConfig, DetectorConfig, Position, SweepMode};
use crate::transmitter::{preamble_bits, PREAMBLE_BITS};

/// Detector output in volts, one sample per detector period.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeTrace {
    pub start: f64,
    pub sample_rate: f64,
    pub samples: Vec<f64>,
    /// Noise-free input power was below the sensitivity floor.
    pub clipped: Vec<bool>,
}

impl EnvelopeTrace {
    pub fn from_samples(sample_rate: f64, samples: Vec<f64>) -> Self {
        let clipped = vec![false; samples.len()];
        EnvelopeTrace { start: 0.0, sample_rate, samples, clipped }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, n: usize) -> f64 {
        self.start + n as f64 / self.sample_rate
    }
}

/// Square-law detection with input-referred receiver noise.
///
/// Each field sample is seen through `averaging` video-bandwidth samples,
/// each carrying complex Gaussian noise whose power equals the sensitivity
/// floor. An input at the floor thus has unit SNR per video sample and weaker
/// inputs are buried in the noise-floor output. Powers are averaged down to
/// the detector rate. Passing
/// `None` for `rng` gives the noise-free response.
pub fn envelope_detect(field: &FieldTrace, det: &DetectorConfig, rng: Option<&mut SimRng>) -> Result<EnvelopeTrace> {
    let ratio = field.sample_rate() / det.sample_rate;
    let factor = ratio.round();
    if factor < 1.0 || (ratio - factor).abs() > 1e-9 * ratio {
        return Err(Error::Domain(format!(
            "field rate {} Hz must be an integer multiple of the detector rate {} Hz",
            field.sample_rate(),
            det.sample_rate
        )));
    }
    let factor = factor as usize;
    let floor = det.floor_mw();
    let sigma = (floor / 2.0).sqrt();
    let input = field.samples();
    let clean = field.clean_samples();
    let out_len = input.len() / factor;
    let mut samples = Vec::with_capacity(out_len);
    let mut clipped = Vec::with_capacity(out_len);
    let mut rng = rng;
    for m in 0..out_len {
        let chunk = m * factor..(m + 1) * factor;
        let mut power = 0.0;
        for z in &input[chunk.clone()] {
            power += match rng.as_deref_mut() {
                Some(r) => {
                    let mut sum = 0.0;
                    for _ in 0..det.averaging {
                        let re: f64 = StandardNormal.sample(r);
                        let im: f64 = StandardNormal.sample(r);
                        sum += (z + Complex64::new(sigma * re, sigma * im)).norm_sqr();
                    }
                    sum / det.averaging as f64
                }
                None => z.norm_sqr(),
            };
        }
        power /= factor as f64;
        let clean_power = clean[chunk].iter().map(|z| z.norm_sqr()).sum::<f64>() / factor as f64;
        samples.push(det.response.volts(power));
        clipped.push(clean_power < floor);
    }
    Ok(EnvelopeTrace {
        start: field.window.start,
        sample_rate: det.sample_rate,
        samples,
        clipped,
    })
}

/// Sweep timing of one AP expressed in detector samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepTiming {
    pub sample_rate: f64,
    pub period: usize,
    pub preamble: usize,
    pub bit: usize,
    pub mode: SweepMode,
    pub spacing: f64,
}

impl SweepTiming {
    pub fn new(ap: &ApConfig, sample_rate: f64, mode: SweepMode) -> Result<Self> {
        let period = (ap.sweep_period * sample_rate).round() as usize;
        let preamble = (ap.preamble_duration * sample_rate).round() as usize;
        let bit = preamble / PREAMBLE_BITS;
        if bit == 0 || preamble >= period {
            return Err(Error::validation(
                "detector.sample_rate",
                "each preamble bit and the sweep need at least one detector sample",
            ));
        }
        Ok(SweepTiming { sample_rate, period, preamble: bit * PREAMBLE_BITS, bit, mode, spacing: ap.spacing })
    }

    /// Receiver-side angle for a peak `offset` samples after the preamble start.
    pub fn angle_at(&self, offset: usize) -> f64 {
        let fraction = (offset as f64 - self.preamble as f64) / (self.period - self.preamble) as f64;
        match self.mode {
            // (p - T_preamble) / (T - T_preamble) * pi - pi / 2
            SweepMode::Steering => fraction * PI - FRAC_PI_2,
            SweepMode::UniformTheta => {
                let theta = fraction * 2.0 * PI - PI;
                (theta / (2.0 * PI * self.spacing)).clamp(-1.0, 1.0).asin()
            }
        }
    }

    /// Angle resolution of one detector sample along the sweep, in the
    /// swept variable (steering angle or inter-element phase).
    pub fn sample_quantum(&self) -> f64 {
        let span = match self.mode {
            SweepMode::Steering => PI,
            SweepMode::UniformTheta => 2.0 * PI,
        };
        span / (self.period - self.preamble) as f64
    }
}

pub const PREAMBLE_THRESHOLD: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreambleHit {
    pub preamble_id: u8,
    pub start: usize,
    pub score: f64,
}

fn template(id: u8, bit: usize) -> Result<Vec<f64>> {
    Ok(preamble_bits(id)?
        .iter()
        .flat_map(|&on| std::iter::repeat_n(if on { 0.5 } else { -0.5 }, bit))
        .collect())
}

fn correlation(window: &[f64], template: &[f64]) -> f64 {
    let mean = window.iter().sum::<f64>() / window.len() as f64;
    let (mut dot, mut energy) = (0.0, 0.0);
    for (x, t) in window.iter().zip(template) {
        let d = x - mean;
        dot += d * t;
        energy += d * d;
    }
    let tnorm: f64 = template.iter().map(|t| t * t).sum::<f64>().sqrt();
    if energy <= 0.0 {
        return 0.0;
    }
    dot / (energy.sqrt() * tnorm)
}

/// First start in `starts` where preamble `id` correlates above threshold,
/// refined to the best-aligned start within one preamble length. Silence
/// ahead of a preamble reads as OFF bits, so the first crossing can sit
/// whole bits early.
pub fn locate_preamble(trace: &EnvelopeTrace, id: u8, timing: &SweepTiming, starts: Range<usize>) -> Result<Option<PreambleHit>> {
    let tpl = template(id, timing.bit)?;
    let len = tpl.len();
    if trace.len() < len {
        return Ok(None);
    }
    let last = trace.len() - len;
    let end = starts.end.min(last + 1);
    let score = |i: usize| correlation(&trace.samples[i..i + len], &tpl);
    for i in starts.start..end {
        if score(i) >= PREAMBLE_THRESHOLD {
            let (mut best, mut best_score) = (i, score(i));
            for j in i + 1..(i + len).min(end) {
                let s = score(j);
                if s > best_score {
                    best = j;
                    best_score = s;
                }
            }
            return Ok(Some(PreambleHit { preamble_id: id, start: best, score: best_score }));
        }
    }
    Ok(None)
}

/// Searches the whole trace for preamble 1, then preamble 2.
pub fn detect_preamble(trace: &EnvelopeTrace, timing: &SweepTiming) -> Option<PreambleHit> {
    for id in [1u8, 2] {
        if let Ok(Some(hit)) = locate_preamble(trace, id, timing, 0..trace.len()) {
            return Some(hit);
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleEstimate {
    pub ap_index: usize,
    pub raw_angle: f64,
    pub smoothed_angle: f64,
    pub peak_sample_index: usize,
    pub timestamp: f64,
}

/// Peak search over the sweep that follows a preamble at `start`.
///
/// Returns `(raw_angle, peak_index)`; ties resolve to the earliest sample.
pub fn estimate_angle(trace: &EnvelopeTrace, start: usize, timing: &SweepTiming) -> Result<(f64, usize)> {
    let from = start + timing.preamble;
    let to = start + timing.period;
    if to > trace.len() {
        return Err(Error::WindowTruncated { start: from, end: to, len: trace.len() });
    }
    let mut peak = from;
    for n in from + 1..to {
        if trace.samples[n] > trace.samples[peak] {
            peak = n;
        }
    }
    Ok((timing.angle_at(peak - start), peak))
}

/// `eta * previous + (1 - eta) * raw`; the first estimate passes through.
pub fn smooth_angle(previous: Option<f64>, raw: f64, eta: f64) -> f64 {
    match previous {
        Some(prev) => eta * prev + (1.0 - eta) * raw,
        None => raw,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AngleSmoother {
    pub eta: f64,
    state: Option<f64>,
}

impl AngleSmoother {
    pub fn new(eta: f64) -> Self {
        AngleSmoother { eta, state: None }
    }

    pub fn update(&mut self, raw: f64) -> f64 {
        let next = smooth_angle(self.state, raw, self.eta);
        self.state = Some(next);
        next
    }

    pub fn current(&self) -> Option<f64> {
        self.state
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocationFix {
    pub position: Position,
    pub angles: (f64, f64),
    pub timestamp: f64,
}

/// Rays crossing at less than this angle (or its supplement) are rejected.
pub const MIN_CROSSING_DEG: f64 = 3.0;

fn ray_direction(ap: &ApConfig, angle: f64) -> (f64, f64) {
    let a = ap.boresight + angle;
    (a.cos(), a.sin())
}

/// Closed-form intersection of the two bearing rays.
pub fn exact_intersection(angle_1: f64, angle_2: f64, ap1: &ApConfig, ap2: &ApConfig) -> Result<Position> {
    let (u1x, u1y) = ray_direction(ap1, angle_1);
    let (u2x, u2y) = ray_direction(ap2, angle_2);
    let cross = u1x * u2y - u1y * u2x;
    if cross.abs() < MIN_CROSSING_DEG.to_radians().sin() {
        return Err(Error::LowConfidence { crossing_deg: cross.abs().min(1.0).asin().to_degrees() });
    }
    let (dx, dy) = (ap2.position.x - ap1.position.x, ap2.position.y - ap1.position.y);
    let t1 = (dx * u2y - dy * u2x) / cross;
    let t2 = (dx * u1y - dy * u1x) / cross;
    if t1 <= 0.0 || t2 <= 0.0 {
        return Err(Error::DegenerateGeometry("bearing rays do not meet in front of both APs".into()));
    }
    Ok(Position::new(ap1.position.x + t1 * u1x, ap1.position.y + t1 * u1y))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Fix(Position),
    LowConfidence(f64),
    NoIntersection,
}

/// Precomputed ray intersections on a 1 degree x 1 degree grid of angle pairs
/// covering [-90, 90) for both APs. Each cell holds the intersection at its
/// center angles.
#[derive(Debug, Clone, PartialEq)]
pub struct LookupTable {
    pub bins: usize,
    pub cells: Vec<Cell>,
    /// AP2 boresight minus AP1 boresight, for the crossing check of raw inputs.
    pub boresight_offset: f64,
}

pub const TABLE_BINS: usize = 180;

impl LookupTable {
    pub fn new(ap1: &ApConfig, ap2: &ApConfig) -> Self {
        let bins = TABLE_BINS;
        let mut cells = Vec::with_capacity(bins * bins);
        for i in 0..bins {
            for j in 0..bins {
                let (a1, a2) = (Self::center(i), Self::center(j));
                cells.push(match exact_intersection(a1, a2, ap1, ap2) {
                    Ok(p) => Cell::Fix(p),
                    Err(Error::LowConfidence { crossing_deg }) => Cell::LowConfidence(crossing_deg),
                    Err(_) => Cell::NoIntersection,
                });
            }
        }
        LookupTable { bins, cells, boresight_offset: ap2.boresight - ap1.boresight }
    }

    /// Center angle (rad) of bin `i`.
    pub fn center(i: usize) -> f64 {
        (i as f64 + 0.5 - 90.0).to_radians()
    }

    /// Lower edge angle (rad) of bin `i`.
    pub fn edge(i: usize) -> f64 {
        (i as f64 - 90.0).to_radians()
    }

    /// Bin holding `angle`; +90 degrees falls in the last bin.
    pub fn bin(angle: f64) -> Result<usize> {
        let deg = angle.to_degrees();
        if !(-90.0..=90.0).contains(&deg) {
            return Err(Error::OutOfSector { bearing: angle });
        }
        Ok(((deg + 90.0).floor() as usize).min(TABLE_BINS - 1))
    }

    pub fn cell(&self, i: usize, j: usize) -> Cell {
        self.cells[i * self.bins + j]
    }
}

/// Quantizes both angles to table cells and returns the stored fix. Inputs
/// whose own rays are near-parallel are flagged even when the cell center
/// is well conditioned.
pub fn fix_2d(angle_1: f64, angle_2: f64, table: &LookupTable, timestamp: f64) -> Result<LocationFix> {
    let (i, j) = (LookupTable::bin(angle_1)?, LookupTable::bin(angle_2)?);
    let cross = (table.boresight_offset + angle_2 - angle_1).sin().abs();
    if cross < MIN_CROSSING_DEG.to_radians().sin() {
        return Err(Error::LowConfidence { crossing_deg: cross.min(1.0).asin().to_degrees() });
    }
    match table.cell(i, j) {
        Cell::Fix(position) => Ok(LocationFix { position, angles: (angle_1, angle_2), timestamp }),
        Cell::LowConfidence(crossing_deg) => Err(Error::LowConfidence { crossing_deg }),
        Cell::NoIntersection => Err(Error::DegenerateGeometry("bearing rays do not meet in front of both APs".into())),
    }
}

/// Exact-intersection variant of [`fix_2d`].
pub fn fix_2d_exact(angle_1: f64, angle_2: f64, ap1: &ApConfig, ap2: &ApConfig, timestamp: f64) -> Result<LocationFix> {
    let position = exact_intersection(angle_1, angle_2, ap1, ap2)?;
    Ok(LocationFix { position, angles: (angle_1, angle_2), timestamp })
}

/// Output of one pass over a `3T` buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverOutput {
    pub estimates: [AngleEstimate; 2],
    pub fix: std::result::Result<LocationFix, String>,
}

/// Streaming receiver: preamble 1 in the first `2T`, its sweep, then preamble 2
/// after it, then the table lookup.
#[derive(Debug, Clone)]
pub struct Receiver {
    pub timings: [SweepTiming; 2],
    pub smoothers: [AngleSmoother; 2],
    pub table: LookupTable,
}

impl Receiver {
    pub fn new(ap1: &ApConfig, ap2: &ApConfig, sample_rate: f64, mode: SweepMode, eta: f64) -> Result<Self> {
        Ok(Receiver {
            timings: [SweepTiming::new(ap1, sample_rate, mode)?, SweepTiming::new(ap2, sample_rate, mode)?],
            smoothers: [AngleSmoother::new(eta), AngleSmoother::new(eta)],
            table: LookupTable::new(ap1, ap2),
        })
    }

    /// Processes a buffer of at least `3T`; `None` when a preamble is missing.
    pub fn process(&mut self, trace: &EnvelopeTrace) -> Result<Option<ReceiverOutput>> {
        let [t1, t2] = self.timings;
        if trace.len() < 3 * t1.period {
            return Err(Error::WindowTruncated { start: 0, end: 3 * t1.period, len: trace.len() });
        }
        let Some(first) = locate_preamble(trace, 1, &t1, 0..2 * t1.period)? else {
            return Ok(None);
        };
        let (raw_1, peak_1) = estimate_angle(trace, first.start, &t1)?;
        let begin = first.start + t1.period;
        let Some(second) = locate_preamble(trace, 2, &t2, begin..3 * t1.period)? else {
            return Ok(None);
        };
        let (raw_2, peak_2) = estimate_angle(trace, second.start, &t2)?;
        let estimates = [
            AngleEstimate {
                ap_index: 0,
                raw_angle: raw_1,
                smoothed_angle: self.smoothers[0].update(raw_1),
                peak_sample_index: peak_1,
                timestamp: trace.time(peak_1),
            },
            AngleEstimate {
                ap_index: 1,
                raw_angle: raw_2,
                smoothed_angle: self.smoothers[1].update(raw_2),
                peak_sample_index: peak_2,
                timestamp: trace.time(peak_2),
            },
        ];
        let fix = fix_2d(
            estimates[0].smoothed_angle,
            estimates[1].smoothed_angle,
            &self.table,
            estimates[1].timestamp,
        )
        .map_err(|e| e.to_string());
        Ok(Some(ReceiverOutput { estimates, fix }))
    }
}

/// `(t, ap, raw, smoothed, x, y)` rows; `x`/`y` are empty without a fix.
pub fn outputs_to_csv(outputs: &[ReceiverOutput]) -> String {
    let mut out = String::from("t_s,ap,raw_rad,smoothed_rad,x_m,y_m\n");
    for o in outputs {
        for e in &o.estimates {
            let (x, y) = match &o.fix {
                Ok(f) => (f.position.x.to_string(), f.position.y.to_string()),
                Err(_) => (String::new(), String::new()),
            };
            let _ = writeln!(out, "{},{},{},{},{},{}", e.timestamp, e.ap_index + 1, e.raw_angle, e.smoothed_angle, x, y);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum SensorKind {
    Humidity = 0,
    Temperature = 1,
    Light = 2,
}

impl SensorKind {
    pub fn bits(self) -> u32 {
        match self {
            SensorKind::Humidity | SensorKind::Temperature => 11,
            SensorKind::Light => 12,
        }
    }

    fn from_tag(tag: u16) -> Result<Self> {
        match tag {
            0 => Ok(SensorKind::Humidity),
            1 => Ok(SensorKind::Temperature),
            2 => Ok(SensorKind::Light),
            other => Err(Error::Malformed(format!("unknown sensor tag {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SensorKind::Humidity => "humidity",
            SensorKind::Temperature => "temperature",
            SensorKind::Light => "light",
        }
    }
}

pub const RECORD_BYTES: usize = 4;

/// One logged measurement with both AP angles.
///
/// Packed little-endian as a 16-bit measurement word (bits 0-11 code, bits
/// 12-13 sensor tag) followed by the two 8-bit angle codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SensorRecord {
    pub kind: SensorKind,
    pub code: u16,
    pub angle_1: u8,
    pub angle_2: u8,
}

impl SensorRecord {
    pub fn new(kind: SensorKind, code: u16, angle_1: u8, angle_2: u8) -> Result<Self> {
        if u32::from(code) >> kind.bits() != 0 {
            return Err(Error::validation(
                "record.code",
                format!("{} codes are {} bits wide", kind.name(), kind.bits()),
            ));
        }
        Ok(SensorRecord { kind, code, angle_1, angle_2 })
    }

    pub fn pack(&self) -> [u8; RECORD_BYTES] {
        let word = self.code | ((self.kind as u16) << 12);
        let [lo, hi] = word.to_le_bytes();
        [lo, hi, self.angle_1, self.angle_2]
    }

    pub fn unpack(bytes: [u8; RECORD_BYTES]) -> Result<Self> {
        let word = u16::from_le_bytes([bytes[0], bytes[1]]);
        if word >> 14 != 0 {
            return Err(Error::Malformed("reserved record bits set".into()));
        }
        let kind = SensorKind::from_tag(word >> 12)?;
        SensorRecord::new(kind, word & 0x0FFF, bytes[2], bytes[3])
    }
}

/// Angle code: 256 levels uniformly spanning [-90, +90] degrees.
pub fn quantize_angle(angle: f64) -> u8 {
    let deg = angle.to_degrees().clamp(-90.0, 90.0);
    ((deg + 90.0) / 180.0 * 255.0).round() as u8
}

pub fn dequantize_angle(code: u8) -> f64 {
    (f64::from(code) * 180.0 / 255.0 - 90.0).to_radians()
}

pub const DEFAULT_LOG_CAPACITY: usize = 32 * 1024;

/// Append-only record log bounded by flash capacity.
#[derive(Debug, Clone, PartialEq)]
pub struct LogStore {
    pub capacity: usize,
    records: Vec<SensorRecord>,
}

impl Default for LogStore {
    fn default() -> Self {
        LogStore::new(DEFAULT_LOG_CAPACITY)
    }
}

impl LogStore {
    pub fn new(capacity: usize) -> Self {
        LogStore { capacity, records: Vec::new() }
    }

    pub fn records(&self) -> &[SensorRecord] {
        &self.records
    }

    pub fn bytes_used(&self) -> usize {
        self.records.len() * RECORD_BYTES
    }

    pub fn log_record(&mut self, record: SensorRecord) -> Result<()> {
        if self.bytes_used() + RECORD_BYTES > self.capacity {
            return Err(Error::StoreFull { capacity: self.capacity });
        }
        self.records.push(record);
        Ok(())
    }

    /// Record bytes back to back, without the count prefix.
    pub fn payload(&self) -> Vec<u8> {
        self.records.iter().flat_map(|r| r.pack()).collect()
    }

    /// `u32` little-endian record count followed by the packed records.
    pub fn dump(&self) -> Vec<u8> {
        let mut out = (self.records.len() as u32).to_le_bytes().to_vec();
        out.extend(self.payload());
        out
    }

    pub fn from_dump(bytes: &[u8], capacity: usize) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Malformed("dump shorter than its count prefix".into()));
        }
        let count = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
        let body = &bytes[4..];
        if body.len() != count * RECORD_BYTES {
            return Err(Error::Malformed(format!(
                "dump declares {count} records but holds {} bytes",
                body.len()
            )));
        }
        let mut store = LogStore::new(capacity);
        for chunk in body.chunks_exact(RECORD_BYTES) {
            store.log_record(SensorRecord::unpack([chunk[0], chunk[1], chunk[2], chunk[3]])?)?;
        }
        Ok(store)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,sensor,code,angle_1_deg,angle_2_deg\n");
        for (i, r) in self.records.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                i,
                r.kind.name(),
                r.code,
                dequantize_angle(r.angle_1).to_degrees(),
                dequantize_angle(r.angle_2).to_degrees()
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{propagate, PathComponent, PathDirection, PathSet, SampleWindow};
    use crate::rng::{self, Purpose};
    use crate::scenario::{dbm_to_mw, Scenario};
    use crate::transmitter::build_sweep_schedule;
    use approx::assert_abs_diff_eq;

    fn det() -> DetectorConfig {
        DetectorConfig::default()
    }

    fn constant_field(power_dbm: f64, len: usize) -> FieldTrace {
        let window = SampleWindow { start: 0.0, sample_rate: 4000.0, len };
        let mut trace = FieldTrace::silent(window);
        trace.components.push(PathComponent {
            ap_index: 0,
            ap_position: Position::new(0.0, 0.0),
            boresight: 0.0,
            direction: PathDirection::Los,
            values: vec![Complex64::new(dbm_to_mw(power_dbm).sqrt(), 0.0); len],
        });
        trace
    }

    #[test]
    fn zero_field_gives_noise_floor() {
        let silent = FieldTrace::silent(SampleWindow { start: 0.0, sample_rate: 4000.0, len: 50_000 });
        let noiseless = envelope_detect(&silent, &det(), None).unwrap();
        assert!(noiseless.samples.iter().all(|&v| v == 0.0));
        assert!(noiseless.clipped.iter().all(|&c| c));
        let mut rng = rng::stream(1, Purpose::Detector, 0, 0);
        let noisy = envelope_detect(&silent, &det(), Some(&mut rng)).unwrap();
        let mean = noisy.samples.iter().sum::<f64>() / noisy.len() as f64;
        // square law: 10 V/mW times the -40 dBm floor
        assert!((mean / 1e-3 - 1.0).abs() < 0.02, "mean {mean}");
        assert!(noisy.samples.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn response_is_monotone() {
        let lo = envelope_detect(&constant_field(-35.0, 4), &det(), None).unwrap();
        let hi = envelope_detect(&constant_field(-30.0, 4), &det(), None).unwrap();
        assert!(hi.samples[0] > lo.samples[0]);
        assert!(!hi.clipped[0]);
    }

    #[test]
    fn decimation_averages_power() {
        let mut field = constant_field(-30.0, 8);
        field.window.sample_rate = 8000.0;
        field.components[0].values[1] = Complex64::new(0.0, 0.0);
        let out = envelope_detect(&field, &det(), None).unwrap();
        assert_eq!(out.len(), 4);
        assert_abs_diff_eq!(out.samples[0], 10.0 * 1e-3 / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(out.samples[1], 10.0 * 1e-3, epsilon = 1e-15);
        let mut odd = field.clone();
        odd.window.sample_rate = 6000.0;
        assert!(envelope_detect(&odd, &det(), None).is_err());
    }

    #[test]
    fn table_response_interpolates_in_dbm() {
        let mut d = det();
        d.response = crate::scenario::DetectorResponse::Table { points: vec![[-50.0, 0.0], [-30.0, 0.2], [-10.0, 0.6]] };
        assert_abs_diff_eq!(d.response.volts(dbm_to_mw(-40.0)), 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(d.response.volts(dbm_to_mw(-20.0)), 0.4, epsilon = 1e-12);
        assert_eq!(d.response.volts(0.0), 0.0);
        assert_eq!(d.response.volts(1e9), 0.6);
    }

    fn step_detected(power_dbm: f64, seed: u64, n: usize) -> f64 {
        // A 3 dB step counts as detected when the output at P + 3 dB exceeds
        // the output at P by more than the mean noise-floor output.
        let d = det();
        let floor_out = d.response.volts(d.floor_mw());
        let mut rng = rng::stream(seed, Purpose::Detector, 0, 0);
        let lo = envelope_detect(&constant_field(power_dbm, n), &d, Some(&mut rng)).unwrap();
        let hi = envelope_detect(&constant_field(power_dbm + 3.0, n), &d, Some(&mut rng)).unwrap();
        lo.samples
            .iter()
            .zip(&hi.samples)
            .filter(|(a, b)| *b - *a > floor_out)
            .count() as f64
            / n as f64
    }

    #[test]
    fn three_db_step_detection_crosses_half_at_floor() {
        let below: Vec<f64> = [-52.0, -46.0, -43.0].iter().map(|&p| step_detected(p, 11, 20_000)).collect();
        let above: Vec<f64> = [-37.0, -34.0, -28.0].iter().map(|&p| step_detected(p, 12, 20_000)).collect();
        assert!(below.iter().all(|&p| p < 0.5), "{below:?}");
        assert!(above.iter().all(|&p| p > 0.5), "{above:?}");
        let all: Vec<f64> = below.into_iter().chain(above).collect();
        assert!(all.windows(2).all(|w| w[0] <= w[1]), "{all:?}");
    }

    fn timing() -> SweepTiming {
        let ap = ApConfig::new(Position::new(0.0, 0.0), 0.0, 1);
        SweepTiming::new(&ap, 4000.0, SweepMode::Steering).unwrap()
    }

    fn embed(pattern: &[bool], at: usize, len: usize, bit: usize) -> EnvelopeTrace {
        let mut s = vec![0.0; len];
        for (k, &on) in pattern.iter().enumerate() {
            for n in 0..bit {
                s[at + k * bit + n] = if on { 1.0 } else { 0.0 };
            }
        }
        EnvelopeTrace::from_samples(4000.0, s)
    }

    #[test]
    fn timing_in_samples() {
        let t = timing();
        assert_eq!((t.period, t.preamble, t.bit), (200, 32, 4));
        assert_abs_diff_eq!(t.angle_at(32), -FRAC_PI_2);
        assert_abs_diff_eq!(t.angle_at(116), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn preamble_one_found_at_embedding() {
        let t = timing();
        let trace = embed(&crate::transmitter::PREAMBLE_1, 100, 600, t.bit);
        let hit = detect_preamble(&trace, &t).unwrap();
        assert_eq!((hit.preamble_id, hit.start), (1, 100));
        assert_abs_diff_eq!(hit.score, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn all_zero_trace_has_no_preamble() {
        let trace = EnvelopeTrace::from_samples(4000.0, vec![0.0; 600]);
        assert_eq!(detect_preamble(&trace, &timing()), None);
    }

    #[test]
    fn preambles_in_consecutive_slots() {
        let t = timing();
        let mut trace = embed(&crate::transmitter::PREAMBLE_1, 10, 600, t.bit);
        let second = embed(&crate::transmitter::PREAMBLE_2, 210, 600, t.bit);
        for (a, b) in trace.samples.iter_mut().zip(second.samples) {
            *a += b;
        }
        let first = locate_preamble(&trace, 1, &t, 0..400).unwrap().unwrap();
        assert_eq!(first.start, 10);
        let next = locate_preamble(&trace, 2, &t, first.start + t.period..600).unwrap().unwrap();
        assert_eq!(next.start, 210);
        // AP2's pattern never triggers the AP1 search
        let only_two = embed(&crate::transmitter::PREAMBLE_2, 50, 600, t.bit);
        assert_eq!(locate_preamble(&only_two, 1, &t, 0..600).unwrap(), None);
        assert_eq!(detect_preamble(&only_two, &t).unwrap().preamble_id, 2);
    }

    fn noiseless_estimate(n: usize, bearing_deg: f64, mode: SweepMode) -> f64 {
        let ap = ApConfig::new(Position::new(0.0, 0.0), 0.0, 1).with_antennas(n);
        let s = build_sweep_schedule(&ap, mode).unwrap();
        let b = bearing_deg.to_radians();
        let p = Position::new(30.0 * b.cos(), 30.0 * b.sin());
        let field = propagate(&s, &ap, &PathSet::los_only(), &|_| Ok(p), 4000.0).unwrap();
        let env = envelope_detect(&field, &det(), None).unwrap();
        let t = SweepTiming::new(&ap, 4000.0, mode).unwrap();
        estimate_angle(&env, 0, &t).unwrap().0
    }

    #[test]
    fn boresight_estimate() {
        let delta = PI / 128.0;
        let angle = noiseless_estimate(4, 0.0, SweepMode::Steering);
        assert!(angle.abs() <= delta / 2.0 + timing().sample_quantum(), "{angle}");
    }

    #[test]
    fn thirty_degrees_with_two_elements() {
        let delta = PI / 128.0;
        let angle = noiseless_estimate(2, 30.0, SweepMode::Steering);
        assert!((angle - 30f64.to_radians()).abs() <= delta / 2.0 + timing().sample_quantum(), "{}", angle.to_degrees());
    }

    #[test]
    fn truncated_window_is_an_error() {
        let trace = EnvelopeTrace::from_samples(4000.0, vec![0.0; 150]);
        assert!(matches!(estimate_angle(&trace, 0, &timing()), Err(Error::WindowTruncated { .. })));
    }

    #[test]
    fn smoothing_examples() {
        let eta = 0.8;
        let out = smooth_angle(Some(0.0), 10.0, eta);
        assert_abs_diff_eq!(out, 2.0, epsilon = 1e-12);
        assert_eq!(smooth_angle(None, 0.3, eta), 0.3);
        assert_eq!(smooth_angle(Some(0.7), 0.3, 0.0), 0.3);
        let mut s = AngleSmoother::new(eta);
        for _ in 0..50 {
            assert_abs_diff_eq!(s.update(0.25), 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn perpendicular_boresights_meet() {
        let farm = Scenario::farm();
        let table = LookupTable::new(&farm.aps[0], &farm.aps[1]);
        let fix = fix_2d(0.0, 0.0, &table, 0.0).unwrap();
        // bin centers are half a degree off boresight
        let exact = fix_2d_exact(0.0, 0.0, &farm.aps[0], &farm.aps[1], 0.0).unwrap();
        assert_abs_diff_eq!(exact.position.x, 60.0, epsilon = 1e-9);
        assert_abs_diff_eq!(exact.position.y, 45.0, epsilon = 1e-9);
        assert!(fix.position.distance(&exact.position) < 1.5);
    }

    #[test]
    fn parallel_rays_are_flagged() {
        let farm = Scenario::farm();
        // AP1 faces +y, AP2 faces +x: AP1 at -90 deg points along +x, parallel to AP2 at 0
        let r = fix_2d_exact(-FRAC_PI_2, 0.0, &farm.aps[0], &farm.aps[1], 0.0);
        assert!(matches!(r, Err(Error::LowConfidence { .. })));
        let table = LookupTable::new(&farm.aps[0], &farm.aps[1]);
        assert!(fix_2d(-FRAC_PI_2, 0.0, &table, 0.0).is_err());
        assert!(matches!(fix_2d(2.0, 0.0, &table, 0.0), Err(Error::OutOfSector { .. })));
    }

    #[test]
    fn lookup_within_cell_diagonal_at_known_point() {
        let farm = Scenario::farm();
        let (ap1, ap2) = (&farm.aps[0], &farm.aps[1]);
        let table = LookupTable::new(ap1, ap2);
        let p = Position::new(95.0, 70.0);
        let a1 = crate::scenario::true_bearing(ap1, p).unwrap();
        let a2 = crate::scenario::true_bearing(ap2, p).unwrap();
        let exact = exact_intersection(a1, a2, ap1, ap2).unwrap();
        assert!(exact.distance(&p) < 1e-9);
        let (i, j) = (LookupTable::bin(a1).unwrap(), LookupTable::bin(a2).unwrap());
        let corner = |di: usize, dj: usize| exact_intersection(LookupTable::edge(i + di), LookupTable::edge(j + dj), ap1, ap2).unwrap();
        let diagonal = corner(0, 0).distance(&corner(1, 1)).max(corner(1, 0).distance(&corner(0, 1)));
        let fix = fix_2d(a1, a2, &table, 0.0).unwrap();
        assert!(fix.position.distance(&exact) <= diagonal);
    }

    #[test]
    fn ten_hours_of_records_fit() {
        let mut store = LogStore::default();
        let rec = SensorRecord::new(SensorKind::Light, 4095, 12, 200).unwrap();
        for _ in 0..7200 {
            store.log_record(rec).unwrap();
        }
        assert_eq!(store.bytes_used(), 28_800);
        assert!(store.bytes_used() <= 32_768);
    }

    #[test]
    fn store_fills_at_8192_records() {
        let mut store = LogStore::default();
        let rec = SensorRecord::new(SensorKind::Humidity, 1, 0, 0).unwrap();
        for _ in 0..8192 {
            store.log_record(rec).unwrap();
        }
        assert!(matches!(store.log_record(rec), Err(Error::StoreFull { capacity: 32768 })));
        assert_eq!(store.records().len(), 8192);
    }

    #[test]
    fn code_widths_are_enforced() {
        assert!(SensorRecord::new(SensorKind::Humidity, 2047, 0, 0).is_ok());
        assert!(SensorRecord::new(SensorKind::Humidity, 2048, 0, 0).is_err());
        assert!(SensorRecord::new(SensorKind::Temperature, 2048, 0, 0).is_err());
        assert!(SensorRecord::new(SensorKind::Light, 4095, 0, 0).is_ok());
        assert!(SensorRecord::new(SensorKind::Light, 4096, 0, 0).is_err());
        assert!(SensorRecord::unpack([0, 0xC0, 0, 0]).is_err());
        assert!(SensorRecord::unpack([0, 0x30, 0, 0]).is_err());
    }

    #[test]
    fn dump_round_trip_and_csv() {
        let mut store = LogStore::default();
        store.log_record(SensorRecord::new(SensorKind::Temperature, 700, quantize_angle(0.0), quantize_angle(-FRAC_PI_2)).unwrap()).unwrap();
        store.log_record(SensorRecord::new(SensorKind::Light, 3000, 255, 0).unwrap()).unwrap();
        let dump = store.dump();
        assert_eq!(&dump[..4], &[2, 0, 0, 0]);
        assert_eq!(dump.len(), 4 + 8);
        assert_eq!(LogStore::from_dump(&dump, DEFAULT_LOG_CAPACITY).unwrap(), store);
        assert!(LogStore::from_dump(&dump[..7], DEFAULT_LOG_CAPACITY).is_err());
        let csv = store.to_csv();
        assert!(csv.starts_with("index,sensor,code,angle_1_deg,angle_2_deg\n0,temperature,700,"));
    }

    #[test]
    fn angle_codes_span_half_circle() {
        assert_eq!(quantize_angle(-FRAC_PI_2), 0);
        assert_eq!(quantize_angle(FRAC_PI_2), 255);
        assert_abs_diff_eq!(dequantize_angle(255), FRAC_PI_2, epsilon = 1e-12);
        let quantum = 180.0 / 255.0;
        for d in [-89.3, -12.0, 0.0, 33.3, 71.9] {
            let back = dequantize_angle(quantize_angle(f64::to_radians(d))).to_degrees();
            assert!((back - d).abs() <= quantum / 2.0 + 1e-9);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn record() -> impl Strategy<Value = SensorRecord> {
            (0u8..3, any::<u16>(), any::<u8>(), any::<u8>()).prop_map(|(tag, code, a1, a2)| {
                let kind = SensorKind::from_tag(u16::from(tag)).unwrap();
                SensorRecord::new(kind, code & ((1 << kind.bits()) - 1), a1, a2).unwrap()
            })
        }

        proptest! {
            #[test]
            fn pack_round_trips(r in record()) {
                prop_assert_eq!(SensorRecord::unpack(r.pack()).unwrap(), r);
            }

            #[test]
            fn smoothing_stays_between_inputs(prev in -1.5..1.5f64, raw in -1.5..1.5f64, eta in 0.0..1.0f64) {
                let s = smooth_angle(Some(prev), raw, eta);
                prop_assert!(s >= prev.min(raw) - 1e-12 && s <= prev.max(raw) + 1e-12);
            }

            #[test]
            fn preamble_ids_never_confused(at in 0usize..400, id in 1u8..=2, level in 1e-6..10.0f64) {
                let t = timing();
                let bits = preamble_bits(id).unwrap();
                let mut trace = embed(&bits, at, 600, t.bit);
                for s in &mut trace.samples { *s *= level; }
                let hit = detect_preamble(&trace, &t).unwrap();
                prop_assert_eq!(hit.preamble_id, id);
                prop_assert_eq!(hit.start, at);
            }
        }
    }
}
