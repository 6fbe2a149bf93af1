//! Current draw, battery life and charging arithmetic. Currents are in mA at
//! the battery voltage, so mW / V gives mA directly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::dbm_to_mw;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PowerProfile {
    pub active_current: f64,
    pub sleep_current: f64,
    /// Awake time per measurement, seconds.
    pub active_window: f64,
    pub measurement_interval: f64,
    pub backscatter_current: f64,
    /// Intervals swept by the power report, seconds.
    pub report_intervals: Vec<f64>,
}

impl Default for PowerProfile {
    fn default() -> Self {
        PowerProfile {
            active_current: 1.6,
            sleep_current: 0.1,
            active_window: 0.1,
            measurement_interval: 4.0,
            backscatter_current: 1.8,
            report_intervals: vec![1.0, 2.0, 4.0, 5.0, 10.0, 30.0, 60.0],
        }
    }
}

impl PowerProfile {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("power.active_current", self.active_current),
            ("power.sleep_current", self.sleep_current),
            ("power.backscatter_current", self.backscatter_current),
            ("power.active_window", self.active_window),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::validation(field, "must be finite and >= 0"));
            }
        }
        if !(self.measurement_interval > 0.0) || self.active_window > self.measurement_interval {
            return Err(Error::validation(
                "power.measurement_interval",
                "must be > 0 and at least active_window",
            ));
        }
        if self.report_intervals.iter().any(|&i| !(i >= self.active_window) || !(i > 0.0)) {
            return Err(Error::validation("power.report_intervals", "each must be > 0 and >= active_window"));
        }
        Ok(())
    }

    pub fn with_interval(&self, interval: f64) -> PowerProfile {
        PowerProfile { measurement_interval: interval, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Battery {
    /// mAh
    pub capacity: f64,
    pub voltage: f64,
}

impl Default for Battery {
    fn default() -> Self {
        Battery { capacity: 1.0, voltage: 3.0 }
    }
}

impl Battery {
    pub fn validate(&self) -> Result<()> {
        if !(self.capacity > 0.0) || !self.capacity.is_finite() {
            return Err(Error::validation("battery.capacity", "must be > 0"));
        }
        if !(self.voltage > 0.0) || !self.voltage.is_finite() {
            return Err(Error::validation("battery.voltage", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HarvestMode {
    #[default]
    Rf,
    Solar,
}

/// RF charging at the hive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RfHarvest {
    /// dBm
    pub tx_power: f64,
    /// dB
    pub hive_path_loss: f64,
    /// Rectifier input below this (dBm) harvests nothing.
    pub turn_on: f64,
    /// End-to-end efficiency as `(input dBm, efficiency)` points,
    /// interpolated linearly in dBm and held flat outside.
    pub efficiency: Vec<[f64; 2]>,
}

/// Efficiency that makes a 20 dBm source behind 15 dB of loss fill 1 mAh in
/// roughly six hours.
pub const CALIBRATED_EFFICIENCY: f64 = 0.158;

impl Default for RfHarvest {
    fn default() -> Self {
        RfHarvest {
            tx_power: 20.0,
            hive_path_loss: 15.0,
            turn_on: -20.0,
            efficiency: vec![[-20.0, CALIBRATED_EFFICIENCY]],
        }
    }
}

impl RfHarvest {
    pub fn efficiency_at(&self, input_dbm: f64) -> f64 {
        if input_dbm < self.turn_on {
            return 0.0;
        }
        let pts = &self.efficiency;
        let idx = pts.partition_point(|p| p[0] <= input_dbm);
        if idx == 0 {
            pts[0][1]
        } else if idx == pts.len() {
            pts[pts.len() - 1][1]
        } else {
            let ([x0, y0], [x1, y1]) = (pts[idx - 1], pts[idx]);
            y0 + (y1 - y0) * (input_dbm - x0) / (x1 - x0)
        }
    }

    pub fn received_power(&self) -> f64 {
        self.tx_power - self.hive_path_loss
    }
}

/// Illuminance to harvested power, interpolated between `(lux, uW)` anchors
/// as a power law (straight lines in log-log) and extended past the ends
/// with the nearest segment's exponent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolarMap {
    pub points: Vec<[f64; 2]>,
}

impl Default for SolarMap {
    fn default() -> Self {
        SolarMap { points: vec![[1000.0, 1.0], [20000.0, 50.0]] }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct HarvestModel {
    pub mode: HarvestMode,
    pub rf: RfHarvest,
    pub solar: SolarMap,
}

impl HarvestModel {
    pub fn validate(&self) -> Result<()> {
        let rf = &self.rf;
        if !rf.tx_power.is_finite() || !rf.hive_path_loss.is_finite() || !rf.turn_on.is_finite() {
            return Err(Error::validation("harvest.rf", "tx_power, hive_path_loss and turn_on must be finite"));
        }
        if rf.efficiency.is_empty() {
            return Err(Error::validation("harvest.rf.efficiency", "need at least one point"));
        }
        if rf.efficiency.iter().any(|p| !p[0].is_finite() || !(0.0..=1.0).contains(&p[1])) {
            return Err(Error::validation("harvest.rf.efficiency", "efficiencies must lie in [0, 1]"));
        }
        if rf.efficiency.windows(2).any(|w| !(w[1][0] > w[0][0])) {
            return Err(Error::validation("harvest.rf.efficiency", "input powers must increase strictly"));
        }
        let pts = &self.solar.points;
        if pts.len() < 2 {
            return Err(Error::validation("harvest.solar.points", "need at least two anchors"));
        }
        if pts.iter().any(|p| !(p[0] > 0.0) || !(p[1] > 0.0) || !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::validation("harvest.solar.points", "lux and power must be finite and > 0"));
        }
        if pts.windows(2).any(|w| !(w[1][0] > w[0][0]) || !(w[1][1] >= w[0][1])) {
            return Err(Error::validation("harvest.solar.points", "map must be monotone in lux"));
        }
        Ok(())
    }
}

/// Mean current (mA) over one measurement interval.
pub fn average_current(p: &PowerProfile) -> f64 {
    (p.active_current * p.active_window + p.sleep_current * (p.measurement_interval - p.active_window))
        / p.measurement_interval
}

/// Hours until the battery is empty.
pub fn battery_life(b: &Battery, average_ma: f64) -> Result<f64> {
    if !(average_ma > 0.0) {
        return Err(Error::Domain(format!("average current must be > 0 mA, got {average_ma}")));
    }
    Ok(b.capacity / average_ma)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChargeTime {
    Hours(f64),
    Never,
}

impl ChargeTime {
    pub fn hours(self) -> Option<f64> {
        match self {
            ChargeTime::Hours(h) => Some(h),
            ChargeTime::Never => None,
        }
    }
}

/// Time to fill the battery from empty with the RF harvester.
pub fn rf_charge_time(h: &HarvestModel, b: &Battery) -> ChargeTime {
    let input = h.rf.received_power();
    let current = dbm_to_mw(input) * h.rf.efficiency_at(input) / b.voltage;
    if current > 0.0 && current.is_finite() {
        ChargeTime::Hours(b.capacity / current)
    } else {
        ChargeTime::Never
    }
}

/// Harvested power (uW) at `lux`.
pub fn solar_power(h: &HarvestModel, lux: f64) -> Result<f64> {
    if !(lux >= 0.0) || !lux.is_finite() {
        return Err(Error::Domain(format!("illuminance must be finite and >= 0, got {lux}")));
    }
    if lux == 0.0 {
        return Ok(0.0);
    }
    let pts = &h.solar.points;
    if let Some(p) = pts.iter().find(|p| p[0] == lux) {
        return Ok(p[1]);
    }
    let idx = pts.partition_point(|p| p[0] < lux).clamp(1, pts.len() - 1);
    let ([x0, y0], [x1, y1]) = (pts[idx - 1], pts[idx]);
    let exponent = (y1 / y0).ln() / (x1 / x0).ln();
    Ok(y0 * (lux / x0).powf(exponent))
}

/// One row of the interval sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerRow {
    pub interval: f64,
    pub average_ua: f64,
    pub average_uw: f64,
    pub life_hours: f64,
}

pub fn power_report(p: &PowerProfile, b: &Battery) -> Result<Vec<PowerRow>> {
    p.report_intervals
        .iter()
        .map(|&interval| {
            let avg = average_current(&p.with_interval(interval));
            Ok(PowerRow {
                interval,
                average_ua: avg * 1000.0,
                average_uw: avg * 1000.0 * b.voltage,
                life_hours: battery_life(b, avg)?,
            })
        })
        .collect()
}
