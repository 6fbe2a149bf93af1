//! World description: access points, the insect's trajectory, channel and
//! detector parameters, plus the geometry helpers shared by every stage.
//!
//! Scenarios are loaded from a TOML document. The document is versioned by a
//! top-level `schema_version` key; every optional key has a documented
//! default so that a minimal file only names the two AP placements.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::backscatter::LinkBudget;
use crate::error::{Error, Result};
use crate::power::{Battery, HarvestModel, PowerProfile};

pub const SCHEMA_VERSION: u32 = 1;
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// A point in the scenario's world frame, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(angle: f64) -> f64 {
    let wrapped = (angle + PI).rem_euclid(2.0 * PI) - PI;
    if wrapped <= -PI {
        wrapped + 2.0 * PI
    } else {
        wrapped
    }
}

/// Wraps a phase into [0, 2pi).
pub fn wrap_phase(phase: f64) -> f64 {
    let wrapped = phase.rem_euclid(2.0 * PI);
    if wrapped >= 2.0 * PI {
        0.0
    } else {
        wrapped
    }
}

pub fn wavelength(carrier: f64) -> f64 {
    SPEED_OF_LIGHT / carrier
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// Free-space path loss `20 log10(4 pi d / lambda)` in dB.
pub fn free_space_loss(distance: f64, carrier: f64) -> Result<f64> {
    if !(distance > 0.0) || !distance.is_finite() {
        return Err(Error::Domain(format!("distance must be positive, got {distance}")));
    }
    if !(carrier > 0.0) || !carrier.is_finite() {
        return Err(Error::Domain(format!("carrier must be positive, got {carrier}")));
    }
    Ok(20.0 * (4.0 * PI * distance / wavelength(carrier)).log10())
}

/// Piecewise-linear insect trajectory.
///
/// A single waypoint describes a stationary insect and covers all time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TrajectoryDoc", into = "TrajectoryDoc")]
pub struct Trajectory {
    waypoints: Vec<(f64, Position)>,
    max_speed: f64,
}

pub const DEFAULT_MAX_SPEED: f64 = 10.0;

impl Trajectory {
    pub fn stationary(p: Position) -> Self {
        Trajectory {
            waypoints: vec![(0.0, p)],
            max_speed: DEFAULT_MAX_SPEED,
        }
    }

    pub fn new(waypoints: Vec<(f64, Position)>) -> Result<Self> {
        Self::with_max_speed(waypoints, DEFAULT_MAX_SPEED)
    }

    pub fn with_max_speed(waypoints: Vec<(f64, Position)>, max_speed: f64) -> Result<Self> {
        if waypoints.is_empty() {
            return Err(Error::validation("trajectory.waypoints", "at least one waypoint is required"));
        }
        if !(max_speed > 0.0) {
            return Err(Error::validation("trajectory.max_speed", "must be positive"));
        }
        for (t, p) in &waypoints {
            if !t.is_finite() || !p.is_finite() {
                return Err(Error::validation("trajectory.waypoints", "values must be finite"));
            }
        }
        for pair in waypoints.windows(2) {
            let (t0, p0) = pair[0];
            let (t1, p1) = pair[1];
            if t1 <= t0 {
                return Err(Error::validation("trajectory.waypoints", "times must be strictly increasing"));
            }
            let speed = p0.distance(&p1) / (t1 - t0);
            if speed > max_speed * (1.0 + 1e-12) {
                return Err(Error::validation(
                    "trajectory.waypoints",
                    format!("implied speed {speed:.3} m/s exceeds max_speed {max_speed} m/s"),
                ));
            }
        }
        Ok(Trajectory { waypoints, max_speed })
    }

    /// Straight-line flight from `from` at `speed` m/s along `heading` (rad), for `duration` s.
    pub fn straight(from: Position, heading: f64, speed: f64, duration: f64) -> Result<Self> {
        if speed == 0.0 {
            return Ok(Self::stationary(from));
        }
        let to = Position::new(
            from.x + speed * duration * heading.cos(),
            from.y + speed * duration * heading.sin(),
        );
        Self::new(vec![(0.0, from), (duration, to)])
    }

    pub fn waypoints(&self) -> &[(f64, Position)] {
        &self.waypoints
    }

    pub fn max_speed(&self) -> f64 {
        self.max_speed
    }

    pub fn is_stationary(&self) -> bool {
        self.waypoints.len() == 1
    }

    pub fn start_time(&self) -> f64 {
        self.waypoints[0].0
    }

    pub fn end_time(&self) -> f64 {
        self.waypoints[self.waypoints.len() - 1].0
    }

    fn segment_at(&self, t: f64) -> Result<usize> {
        if self.is_stationary() {
            return Ok(0);
        }
        let (start, end) = (self.start_time(), self.end_time());
        if !(t >= start && t <= end) {
            return Err(Error::TrajectoryRange { t, start, end });
        }
        let idx = self.waypoints.partition_point(|(wt, _)| *wt <= t);
        Ok(idx.clamp(1, self.waypoints.len() - 1) - 1)
    }

    pub fn position_at(&self, t: f64) -> Result<Position> {
        let seg = self.segment_at(t)?;
        if self.is_stationary() {
            return Ok(self.waypoints[0].1);
        }
        let (t0, p0) = self.waypoints[seg];
        let (t1, p1) = self.waypoints[seg + 1];
        let u = (t - t0) / (t1 - t0);
        Ok(Position::new(p0.x + u * (p1.x - p0.x), p0.y + u * (p1.y - p0.y)))
    }

    /// Velocity (m/s) of the segment containing `t`.
    pub fn velocity_at(&self, t: f64) -> Result<(f64, f64)> {
        let seg = self.segment_at(t)?;
        if self.is_stationary() {
            return Ok((0.0, 0.0));
        }
        let (t0, p0) = self.waypoints[seg];
        let (t1, p1) = self.waypoints[seg + 1];
        Ok(((p1.x - p0.x) / (t1 - t0), (p1.y - p0.y) / (t1 - t0)))
    }

    /// Distance travelled since the first waypoint.
    pub fn arc_length_at(&self, t: f64) -> Result<f64> {
        let seg = self.segment_at(t)?;
        if self.is_stationary() {
            return Ok(0.0);
        }
        let mut length: f64 = self.waypoints[..=seg]
            .windows(2)
            .map(|w| w[0].1.distance(&w[1].1))
            .sum();
        let p = self.position_at(t)?;
        length += self.waypoints[seg].1.distance(&p);
        Ok(length)
    }
}

#[derive(Serialize, Deserialize)]
struct TrajectoryDoc {
    waypoints: Vec<[f64; 3]>,
    #[serde(default = "default_max_speed")]
    max_speed: f64,
}

fn default_max_speed() -> f64 {
    DEFAULT_MAX_SPEED
}

impl TryFrom<TrajectoryDoc> for Trajectory {
    type Error = Error;

    fn try_from(doc: TrajectoryDoc) -> Result<Self> {
        let waypoints = doc
            .waypoints
            .iter()
            .map(|[t, x, y]| (*t, Position::new(*x, *y)))
            .collect();
        Trajectory::with_max_speed(waypoints, doc.max_speed)
    }
}

impl From<Trajectory> for TrajectoryDoc {
    fn from(t: Trajectory) -> Self {
        TrajectoryDoc {
            waypoints: t.waypoints.iter().map(|(t, p)| [*t, p.x, p.y]).collect(),
            max_speed: t.max_speed,
        }
    }
}

/// One access point and its sweep parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ApDoc", into = "ApDoc")]
pub struct ApConfig {
    pub position: Position,
    /// Direction the array faces, radians from +x.
    pub boresight: f64,
    pub antenna_count: usize,
    /// Element spacing in wavelengths.
    pub spacing: f64,
    /// Sweep period T, seconds.
    pub sweep_period: f64,
    /// Preamble duration, seconds.
    pub preamble_duration: f64,
    /// Number of dwell steps covering the steering range; the step is pi / steps.
    pub sweep_steps: u32,
    pub preamble_id: u8,
    /// Per-element transmit power, dBm.
    pub tx_power: f64,
    /// Per-element antenna gain, dBi.
    pub antenna_gain: f64,
    pub carrier: f64,
}

pub const DEFAULT_SWEEP_PERIOD: f64 = 0.050;
pub const DEFAULT_PREAMBLE_DURATION: f64 = 0.008;
pub const DEFAULT_SWEEP_STEPS: u32 = 128;
pub const DEFAULT_CARRIER: f64 = 915e6;
pub const DEFAULT_TX_POWER: f64 = 28.0;
pub const DEFAULT_ANTENNA_GAIN: f64 = 2.0;

impl ApConfig {
    pub fn new(position: Position, boresight: f64, preamble_id: u8) -> Self {
        ApConfig {
            position,
            boresight,
            antenna_count: 4,
            spacing: 0.5,
            sweep_period: DEFAULT_SWEEP_PERIOD,
            preamble_duration: DEFAULT_PREAMBLE_DURATION,
            sweep_steps: DEFAULT_SWEEP_STEPS,
            preamble_id,
            tx_power: DEFAULT_TX_POWER,
            antenna_gain: DEFAULT_ANTENNA_GAIN,
            carrier: DEFAULT_CARRIER,
        }
    }

    /// Radiated power per element including antenna gain, dBm.
    pub fn eirp_per_element(&self) -> f64 {
        self.tx_power + self.antenna_gain
    }

    pub fn with_antennas(mut self, n: usize) -> Self {
        self.antenna_count = n;
        self
    }

    /// Steering step delta, radians.
    pub fn sweep_step(&self) -> f64 {
        PI / self.sweep_steps as f64
    }

    pub fn wavelength(&self) -> f64 {
        wavelength(self.carrier)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.position.is_finite() {
            return Err(Error::validation("ap.position", "must be finite"));
        }
        if !self.boresight.is_finite() {
            return Err(Error::validation("ap.boresight", "must be finite"));
        }
        if !(2..=8).contains(&self.antenna_count) {
            return Err(Error::validation("ap.antenna_count", "must lie in [2, 8]"));
        }
        if !(self.spacing > 0.0) || !self.spacing.is_finite() {
            return Err(Error::validation("ap.spacing", "must be > 0"));
        }
        if !(self.sweep_period > 0.0) || !self.sweep_period.is_finite() {
            return Err(Error::validation("ap.sweep_period", "must be > 0"));
        }
        if !(self.preamble_duration > 0.0 && self.preamble_duration < self.sweep_period) {
            return Err(Error::validation(
                "ap.preamble_duration",
                "requires 0 < preamble_duration < sweep_period",
            ));
        }
        if self.sweep_steps == 0 {
            return Err(Error::validation("ap.sweep_steps", "must be at least 1"));
        }
        if !matches!(self.preamble_id, 1 | 2) {
            return Err(Error::validation("ap.preamble_id", "must be 1 or 2"));
        }
        if !self.tx_power.is_finite() {
            return Err(Error::validation("ap.tx_power", "must be finite"));
        }
        if !self.antenna_gain.is_finite() {
            return Err(Error::validation("ap.antenna_gain", "must be finite"));
        }
        if !(self.carrier > 0.0) || !self.carrier.is_finite() {
            return Err(Error::validation("ap.carrier", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct ApDoc {
    position: Position,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    boresight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    boresight_deg: Option<f64>,
    #[serde(default = "default_antennas")]
    antenna_count: usize,
    #[serde(default = "default_spacing")]
    spacing: f64,
    #[serde(default = "default_period")]
    sweep_period: f64,
    #[serde(default = "default_preamble")]
    preamble_duration: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sweep_steps: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sweep_step: Option<f64>,
    preamble_id: u8,
    #[serde(default = "default_tx_power")]
    tx_power: f64,
    #[serde(default = "default_antenna_gain")]
    antenna_gain: f64,
    #[serde(default = "default_carrier")]
    carrier: f64,
}

fn default_antennas() -> usize {
    4
}
fn default_spacing() -> f64 {
    0.5
}
fn default_period() -> f64 {
    DEFAULT_SWEEP_PERIOD
}
fn default_preamble() -> f64 {
    DEFAULT_PREAMBLE_DURATION
}
fn default_tx_power() -> f64 {
    DEFAULT_TX_POWER
}
fn default_antenna_gain() -> f64 {
    DEFAULT_ANTENNA_GAIN
}
fn default_carrier() -> f64 {
    DEFAULT_CARRIER
}

impl TryFrom<ApDoc> for ApConfig {
    type Error = Error;

    fn try_from(doc: ApDoc) -> Result<Self> {
        let boresight = match (doc.boresight, doc.boresight_deg) {
            (Some(_), Some(_)) => {
                return Err(Error::validation("ap.boresight", "give boresight or boresight_deg, not both"))
            }
            (Some(rad), None) => rad,
            (None, Some(deg)) => deg.to_radians(),
            (None, None) => 0.0,
        };
        let sweep_steps = match (doc.sweep_steps, doc.sweep_step) {
            (Some(_), Some(_)) => {
                return Err(Error::validation("ap.sweep_step", "give sweep_step or sweep_steps, not both"))
            }
            (Some(n), None) => n,
            (None, Some(step)) => {
                let n = PI / step;
                if !(step > 0.0) || !n.is_finite() || (n - n.round()).abs() > 1e-9 * n.max(1.0) {
                    return Err(Error::validation("ap.sweep_step", "must divide the pi steering range exactly"));
                }
                n.round() as u32
            }
            (None, None) => DEFAULT_SWEEP_STEPS,
        };
        Ok(ApConfig {
            position: doc.position,
            boresight,
            antenna_count: doc.antenna_count,
            spacing: doc.spacing,
            sweep_period: doc.sweep_period,
            preamble_duration: doc.preamble_duration,
            sweep_steps,
            preamble_id: doc.preamble_id,
            tx_power: doc.tx_power,
            antenna_gain: doc.antenna_gain,
            carrier: doc.carrier,
        })
    }
}

impl From<ApConfig> for ApDoc {
    fn from(ap: ApConfig) -> Self {
        ApDoc {
            position: ap.position,
            boresight: Some(ap.boresight),
            boresight_deg: None,
            antenna_count: ap.antenna_count,
            spacing: ap.spacing,
            sweep_period: ap.sweep_period,
            preamble_duration: ap.preamble_duration,
            sweep_steps: Some(ap.sweep_steps),
            sweep_step: None,
            preamble_id: ap.preamble_id,
            tx_power: ap.tx_power,
            antenna_gain: ap.antenna_gain,
            carrier: ap.carrier,
        }
    }
}

/// Random multipath and additive noise settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelConfig {
    /// Number of non-line-of-sight paths (M - 1).
    pub nlos_paths: usize,
    /// Sum of NLOS amplitudes over the LOS amplitude.
    pub multipath_ratio: f64,
    /// Complex noise power per field sample, dBm. `-inf` disables noise.
    pub noise_power: f64,
    pub doppler: bool,
    /// Insect travel (m) after which the NLOS geometry is redrawn.
    pub segment_length: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            nlos_paths: 3,
            multipath_ratio: 0.0,
            noise_power: -90.0,
            doppler: true,
            segment_length: 1.0,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.multipath_ratio >= 0.0) || !self.multipath_ratio.is_finite() {
            return Err(Error::validation("channel.multipath_ratio", "must be finite and >= 0"));
        }
        if self.multipath_ratio > 0.0 && self.nlos_paths == 0 {
            return Err(Error::validation("channel.nlos_paths", "a positive multipath_ratio needs at least one NLOS path"));
        }
        if self.noise_power.is_nan() || self.noise_power == f64::INFINITY {
            return Err(Error::validation("channel.noise_power", "must be finite or -inf"));
        }
        if !(self.segment_length > 0.0) {
            return Err(Error::validation("channel.segment_length", "must be > 0"));
        }
        Ok(())
    }
}

/// Maps detector input power to output volts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DetectorResponse {
    /// Output proportional to input power (amplitude squared).
    SquareLaw { volts_per_mw: f64 },
    /// Monotone `(dBm, volts)` points, interpolated linearly in dBm and held
    /// flat outside the table.
    Table { points: Vec<[f64; 2]> },
}

impl Default for DetectorResponse {
    fn default() -> Self {
        DetectorResponse::SquareLaw { volts_per_mw: 10.0 }
    }
}

impl DetectorResponse {
    pub fn volts(&self, power_mw: f64) -> f64 {
        match self {
            DetectorResponse::SquareLaw { volts_per_mw } => volts_per_mw * power_mw.max(0.0),
            DetectorResponse::Table { points } => {
                if power_mw <= 0.0 {
                    return points[0][1];
                }
                let dbm = mw_to_dbm(power_mw);
                let idx = points.partition_point(|p| p[0] <= dbm);
                if idx == 0 {
                    points[0][1]
                } else if idx == points.len() {
                    points[points.len() - 1][1]
                } else {
                    let [x0, y0] = points[idx - 1];
                    let [x1, y1] = points[idx];
                    y0 + (y1 - y0) * (dbm - x0) / (x1 - x0)
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            DetectorResponse::SquareLaw { volts_per_mw } => {
                if !(*volts_per_mw > 0.0) || !volts_per_mw.is_finite() {
                    return Err(Error::validation("detector.response.volts_per_mw", "must be > 0"));
                }
            }
            DetectorResponse::Table { points } => {
                if points.len() < 2 {
                    return Err(Error::validation("detector.response.points", "need at least two points"));
                }
                for w in points.windows(2) {
                    if !(w[1][0] > w[0][0]) || w[1][1] < w[0][1] {
                        return Err(Error::validation(
                            "detector.response.points",
                            "dBm must increase strictly and volts must be nondecreasing",
                        ));
                    }
                }
                if points.iter().any(|p| !p[0].is_finite() || !(p[1] >= 0.0)) {
                    return Err(Error::validation("detector.response.points", "values must be finite, volts >= 0"));
                }
            }
        }
        Ok(())
    }
}

pub const DEFAULT_DETECTOR_AVERAGING: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Input power at which the SNR of one video-bandwidth sample is unity, dBm.
    pub sensitivity_floor: f64,
    pub sample_rate: f64,
    /// Video-bandwidth samples averaged into each output sample.
    pub averaging: usize,
    pub response: DetectorResponse,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            sensitivity_floor: -40.0,
            sample_rate: 4000.0,
            averaging: DEFAULT_DETECTOR_AVERAGING,
            response: DetectorResponse::default(),
        }
    }
}

impl DetectorConfig {
    pub fn floor_mw(&self) -> f64 {
        dbm_to_mw(self.sensitivity_floor)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.sensitivity_floor.is_finite() {
            return Err(Error::validation("detector.sensitivity_floor", "must be finite"));
        }
        if !(self.sample_rate > 0.0) || !self.sample_rate.is_finite() {
            return Err(Error::validation("detector.sample_rate", "must be > 0"));
        }
        if self.averaging == 0 {
            return Err(Error::validation("detector.averaging", "must be at least 1"));
        }
        self.response.validate()
    }
}

/// How the AP walks through array phases during a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SweepMode {
    /// Steering angle stepped uniformly over [-pi/2, pi/2); linear receiver map.
    #[default]
    #[serde(alias = "alg1")]
    Steering,
    /// Inter-element phase stepped uniformly over [-pi, pi); arcsin at the receiver.
    UniformTheta,
}

impl std::fmt::Display for SweepMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepMode::Steering => "steering",
            SweepMode::UniformTheta => "uniform-theta",
        })
    }
}

impl std::str::FromStr for SweepMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alg1" | "steering" => Ok(SweepMode::Steering),
            "uniform-theta" => Ok(SweepMode::UniformTheta),
            other => Err(Error::validation("mode", format!("unknown sweep mode '{other}'"))),
        }
    }
}

/// One insect parked at the hive for an upload session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiveInsect {
    pub address: u8,
    pub distance: f64,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HiveConfig {
    pub insects: Vec<HiveInsect>,
    pub retries: u32,
}

impl Default for HiveConfig {
    fn default() -> Self {
        HiveConfig {
            insects: vec![
                HiveInsect { address: 1, distance: 1.0, records: 10 },
                HiveInsect { address: 2, distance: 2.0, records: 10 },
                HiveInsect { address: 3, distance: 3.0, records: 10 },
            ],
            retries: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default, with = "seed_repr")]
    pub seed: u64,
    #[serde(default = "default_smoothing")]
    pub smoothing: f64,
    #[serde(default)]
    pub sweep_mode: SweepMode,
    pub aps: Vec<ApConfig>,
    pub trajectory: Trajectory,
    #[serde(default)]
    pub channel: ChannelConfig,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default)]
    pub link: LinkBudget,
    #[serde(default)]
    pub hive: HiveConfig,
    #[serde(default)]
    pub power: PowerProfile,
    #[serde(default)]
    pub battery: Battery,
    #[serde(default)]
    pub harvest: HarvestModel,
}

pub const DEFAULT_SMOOTHING: f64 = 0.8;

// TOML integers are signed; seeds above i64::MAX are written as strings.
mod seed_repr {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(seed: &u64, s: S) -> Result<S::Ok, S::Error> {
        match i64::try_from(*seed) {
            Ok(v) => s.serialize_i64(v),
            Err(_) => s.serialize_str(&seed.to_string()),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Int(i64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Int(v) => u64::try_from(v).map_err(|_| de::Error::custom("seed must be non-negative")),
            Repr::Text(t) => t.parse().map_err(de::Error::custom),
        }
    }
}

fn default_smoothing() -> f64 {
    DEFAULT_SMOOTHING
}

/// Field dimensions of the farm layout, meters (x extent, y extent).
pub const FARM_SIZE: (f64, f64) = (120.0, 90.0);

impl Scenario {
    /// Two APs at the centers of two perpendicular edges of a 90 x 120 m field,
    /// each facing into the field. The field spans `[0, 120] x [0, 90]`.
    pub fn farm() -> Self {
        let (w, h) = FARM_SIZE;
        Scenario {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            smoothing: DEFAULT_SMOOTHING,
            sweep_mode: SweepMode::Steering,
            aps: vec![
                ApConfig::new(Position::new(w / 2.0, 0.0), FRAC_PI_2, 1),
                ApConfig::new(Position::new(0.0, h / 2.0), 0.0, 2),
            ],
            trajectory: Trajectory::stationary(Position::new(w / 2.0, h / 2.0)),
            channel: ChannelConfig::default(),
            detector: DetectorConfig::default(),
            link: LinkBudget::default(),
            hive: HiveConfig::default(),
            power: PowerProfile::default(),
            battery: Battery::default(),
            harvest: HarvestModel::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::validation(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(Error::validation("smoothing", "must lie in [0, 1)"));
        }
        if self.aps.len() != 2 {
            return Err(Error::validation("aps", "a 2D scenario needs exactly two access points"));
        }
        for ap in &self.aps {
            ap.validate()?;
        }
        if self.aps[0].preamble_id == self.aps[1].preamble_id {
            return Err(Error::validation("aps.preamble_id", "the two APs need distinct preambles"));
        }
        if self.aps[0].sweep_period != self.aps[1].sweep_period {
            return Err(Error::MismatchedPeriods(self.aps[0].sweep_period, self.aps[1].sweep_period));
        }
        self.channel.validate()?;
        self.detector.validate()?;
        self.link.validate()?;
        self.power.validate()?;
        self.battery.validate()?;
        self.harvest.validate()?;
        for insect in &self.hive.insects {
            if !(insect.distance > 0.0) {
                return Err(Error::validation("hive.insects.distance", "must be > 0"));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes to TOML")
    }

    /// AP in `aps` whose preamble id is `id`.
    pub fn ap_by_preamble(&self, id: u8) -> Option<(usize, &ApConfig)> {
        self.aps.iter().enumerate().find(|(_, ap)| ap.preamble_id == id)
    }
}

/// Parses and validates a scenario document.
pub fn load_scenario(text: &str) -> Result<Scenario> {
    let scenario: Scenario = toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map(|span| text[..span.start.min(text.len())].matches('\n').count() + 1)
            .unwrap_or(0);
        Error::Parse {
            line,
            message: e.message().to_string(),
        }
    })?;
    scenario.validate()?;
    Ok(scenario)
}

/// Bearing of `p` from `ap` relative to its boresight, wrapped to (-pi, pi].
pub fn signed_bearing(ap: &ApConfig, p: Position) -> Result<f64> {
    let (dx, dy) = (p.x - ap.position.x, p.y - ap.position.y);
    if dx == 0.0 && dy == 0.0 {
        return Err(Error::DegenerateGeometry("position coincides with the AP".into()));
    }
    Ok(wrap_angle(dy.atan2(dx) - ap.boresight))
}

/// Bearing of `p` from `ap`; errors when `p` is outside the front half-plane.
pub fn true_bearing(ap: &ApConfig, p: Position) -> Result<f64> {
    let bearing = signed_bearing(ap, p)?;
    if bearing.abs() >= FRAC_PI_2 {
        return Err(Error::OutOfSector { bearing });
    }
    Ok(bearing)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_4;

    const MINIMAL: &str = r#"
schema_version = 1

[[aps]]
position = { x = 0.0, y = 0.0 }
preamble_id = 1

[[aps]]
position = { x = 50.0, y = -50.0 }
boresight_deg = 90.0
preamble_id = 2

[trajectory]
waypoints = [[0.0, 10.0, 5.0], [2.0, 20.0, 5.0]]
"#;

    #[test]
    fn minimal_document_gets_defaults() {
        let s = load_scenario(MINIMAL).unwrap();
        assert_eq!(s.aps.len(), 2);
        for ap in &s.aps {
            assert_eq!(ap.sweep_period, 0.050);
            assert_eq!(ap.antenna_count, 4);
            assert_eq!(ap.spacing, 0.5);
            assert_eq!(ap.sweep_steps, 128);
            assert_eq!(ap.carrier, 915e6);
        }
        assert_eq!(s.smoothing, 0.8);
        assert_eq!(s.detector.sample_rate, 4000.0);
        assert_eq!(s.detector.sensitivity_floor, -40.0);
        assert_eq!(s.sweep_mode, SweepMode::Steering);
        assert_abs_diff_eq!(s.aps[1].boresight, FRAC_PI_2, epsilon = 1e-15);
    }

    #[test]
    fn preamble_longer_than_period_is_rejected() {
        let doc = MINIMAL.replacen("preamble_id = 1", "preamble_id = 1\npreamble_duration = 0.05", 1);
        match load_scenario(&doc) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "ap.preamble_duration"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn parse_error_reports_line() {
        let doc = "schema_version = 1\nseed = \"oops\"\n";
        match load_scenario(doc) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn sweep_step_must_divide_range() {
        let good = MINIMAL.replacen("preamble_id = 1", "preamble_id = 1\nsweep_step = 0.04908738521234052", 1);
        assert_eq!(load_scenario(&good).unwrap().aps[0].sweep_steps, 64);
        let bad = MINIMAL.replacen("preamble_id = 1", "preamble_id = 1\nsweep_step = 0.05", 1);
        assert!(load_scenario(&bad).is_err());
    }

    #[test]
    fn farm_layout_file_matches_constructor() {
        let text = include_str!("../scenarios/farm.toml");
        let s = load_scenario(text).unwrap();
        let farm = Scenario::farm();
        assert_eq!(s.aps, farm.aps);
        // both APs sit at the centers of perpendicular field edges
        assert_eq!(s.aps[0].position, Position::new(60.0, 0.0));
        assert_eq!(s.aps[1].position, Position::new(0.0, 45.0));
        let facing = (s.aps[0].boresight - s.aps[1].boresight).abs();
        assert_abs_diff_eq!(facing, FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn bearing_examples() {
        let ap = ApConfig::new(Position::new(0.0, 0.0), 0.0, 1);
        assert_eq!(true_bearing(&ap, Position::new(25.0, 0.0)).unwrap(), 0.0);
        assert_abs_diff_eq!(true_bearing(&ap, Position::new(10.0, 10.0)).unwrap(), FRAC_PI_4, epsilon = 1e-15);
        assert!(matches!(true_bearing(&ap, Position::new(0.0, 0.0)), Err(Error::DegenerateGeometry(_))));
        assert!(matches!(true_bearing(&ap, Position::new(-1.0, 3.0)), Err(Error::OutOfSector { .. })));
    }

    #[test]
    fn farm_center_bearings_match_trig() {
        let farm = Scenario::farm();
        let c = Position::new(60.0, 45.0);
        for ap in &farm.aps {
            let (dx, dy) = (c.x - ap.position.x, c.y - ap.position.y);
            // rotate into the AP frame by hand
            let (fx, fy) = (
                dx * ap.boresight.cos() + dy * ap.boresight.sin(),
                -dx * ap.boresight.sin() + dy * ap.boresight.cos(),
            );
            assert_abs_diff_eq!(true_bearing(ap, c).unwrap(), fy.atan2(fx), epsilon = 1e-12);
        }
        let p = Position::new(100.0, 70.0);
        // AP1 at (60, 0) facing +y: bearing = atan2(-(dx), dy)
        assert_abs_diff_eq!(true_bearing(&farm.aps[0], p).unwrap(), (-40f64).atan2(70.0), epsilon = 1e-12);
        // AP2 at (0, 45) facing +x
        assert_abs_diff_eq!(true_bearing(&farm.aps[1], p).unwrap(), 25f64.atan2(100.0), epsilon = 1e-12);
    }

    #[test]
    fn free_space_loss_values() {
        // 20 log10(4 pi d / lambda), lambda = c / 915 MHz
        assert_abs_diff_eq!(free_space_loss(1.0, 915e6).unwrap(), 31.676205103212, epsilon = 1e-9);
        assert_abs_diff_eq!(free_space_loss(80.0, 915e6).unwrap(), 69.738004843051, epsilon = 1e-9);
        let step = free_space_loss(20.0, 915e6).unwrap() - free_space_loss(10.0, 915e6).unwrap();
        assert_abs_diff_eq!(step, 6.020599913279624, epsilon = 1e-12);
        assert!(free_space_loss(0.0, 915e6).is_err());
        assert!(free_space_loss(-1.0, 915e6).is_err());
    }

    #[test]
    fn trajectory_interpolates_and_checks_range() {
        let t = Trajectory::new(vec![(0.0, Position::new(0.0, 0.0)), (2.0, Position::new(10.0, 0.0))]).unwrap();
        assert_eq!(t.position_at(1.0).unwrap(), Position::new(5.0, 0.0));
        assert_eq!(t.velocity_at(1.0).unwrap(), (5.0, 0.0));
        assert_abs_diff_eq!(t.arc_length_at(1.5).unwrap(), 7.5);
        assert!(matches!(t.position_at(2.5), Err(Error::TrajectoryRange { .. })));
        let too_fast = Trajectory::new(vec![(0.0, Position::new(0.0, 0.0)), (1.0, Position::new(11.0, 0.0))]);
        assert!(too_fast.is_err());
        let backwards = Trajectory::new(vec![(1.0, Position::new(0.0, 0.0)), (1.0, Position::new(1.0, 0.0))]);
        assert!(backwards.is_err());
    }

    #[test]
    fn wrap_helpers() {
        assert_abs_diff_eq!(wrap_angle(3.0 * PI), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_angle(-PI), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_phase(-0.5), 2.0 * PI - 0.5, epsilon = 1e-12);
        assert!(wrap_phase(-1e-18) < 2.0 * PI);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn bearing_antisymmetric_under_reflection(
                ax in -100.0..100.0f64, ay in -100.0..100.0f64, bore in -PI..PI,
                along in 0.5..200.0f64, across in -200.0..200.0f64,
            ) {
                let ap = ApConfig::new(Position::new(ax, ay), bore, 1);
                let (c, s) = (bore.cos(), bore.sin());
                let p = Position::new(ax + along * c - across * s, ay + along * s + across * c);
                let q = Position::new(ax + along * c + across * s, ay + along * s - across * c);
                let bp = signed_bearing(&ap, p).unwrap();
                let bq = signed_bearing(&ap, q).unwrap();
                prop_assert!((bp + bq).abs() < 1e-9);
            }

            #[test]
            fn scenario_round_trips(
                seed in any::<u64>(), eta in 0.0..0.99f64, n in 2usize..=8,
                r in 0.0..2.0f64, x in -500.0..500.0f64, bore in -PI..PI,
            ) {
                let mut s = Scenario::farm();
                s.seed = seed;
                s.smoothing = eta;
                s.aps[0].antenna_count = n;
                s.aps[1].position.x = x;
                s.aps[1].boresight = bore;
                s.channel.multipath_ratio = r;
                s.channel.noise_power = f64::NEG_INFINITY;
                s.trajectory = Trajectory::new(vec![
                    (0.0, Position::new(x, 1.0)),
                    (3.5, Position::new(x + 7.25, 1.0 + 4.5)),
                ]).unwrap();
                let back = load_scenario(&s.to_toml()).unwrap();
                prop_assert_eq!(back, s);
            }
        }
    }
}
