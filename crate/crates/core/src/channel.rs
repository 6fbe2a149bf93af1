//! Complex baseband field at the insect antenna.
//!
//! The carrier is never sampled. Each path contributes
//! `A a_k e^{j psi_k} sum_i e^{j(i phi_k - theta_i)}` where `theta_i` comes from
//! the active schedule entry and `phi_k = 2 pi spacing sin(bearing_k)`. The
//! scale `A` is the per-element radiated amplitude after free-space loss, in
//! sqrt(mW), so `|field|^2` is received power in mW.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose, SimRng};
use crate::scenario::{
    dbm_to_mw, free_space_loss, signed_bearing, wavelength, ApConfig, ChannelConfig, Position, Trajectory,
};
use crate::transmitter::{EntryKind, SweepSchedule};

/// One propagation path. Amplitudes are relative to the LOS path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    pub amplitude: f64,
    /// Departure bearing relative to boresight. Ignored for the LOS path,
    /// whose bearing follows the insect.
    pub bearing: f64,
    pub excess_phase: f64,
}

/// LOS path first, then the NLOS paths.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub paths: Vec<Path>,
}

impl PathSet {
    pub fn los_only() -> Self {
        PathSet {
            paths: vec![Path { amplitude: 1.0, bearing: 0.0, excess_phase: 0.0 }],
        }
    }

    pub fn los(&self) -> &Path {
        &self.paths[0]
    }

    pub fn nlos(&self) -> &[Path] {
        &self.paths[1..]
    }

    /// Sum of NLOS amplitudes over the LOS amplitude.
    pub fn multipath_ratio(&self) -> f64 {
        self.nlos().iter().map(|p| p.amplitude).sum::<f64>() / self.los().amplitude
    }
}

/// Draws NLOS paths with i.i.d. uniform bearings in (-pi/2, pi/2) and phases
/// in [0, 2pi), amplitudes normalized to sum to `R` times the LOS amplitude.
///
/// The raw draws do not depend on `R`, so changing the ratio under a fixed
/// stream only rescales the NLOS amplitudes.
pub fn draw_multipath(channel: &ChannelConfig, rng: &mut SimRng) -> PathSet {
    let mut set = PathSet::los_only();
    if channel.nlos_paths == 0 {
        return set;
    }
    let raw: Vec<(f64, f64, f64)> = (0..channel.nlos_paths)
        .map(|_| {
            // open interval (0, 1] keeps every amplitude positive
            let weight = 1.0 - rng.gen::<f64>();
            let bearing = loop {
                let b = rng.gen_range(-PI / 2.0..PI / 2.0);
                if b != -PI / 2.0 {
                    break b;
                }
            };
            let phase = rng.gen_range(0.0..2.0 * PI);
            (weight, bearing, phase)
        })
        .collect();
    let total: f64 = raw.iter().map(|r| r.0).sum();
    let r = channel.multipath_ratio;
    if r == 0.0 {
        return set;
    }
    set.paths.extend(raw.into_iter().map(|(w, bearing, excess_phase)| Path {
        amplitude: r * w / total,
        bearing,
        excess_phase,
    }));
    set
}

/// Per-AP path sets that are redrawn each `segment_length` meters of travel.
#[derive(Debug, Clone)]
pub struct MultipathField {
    pub channel: ChannelConfig,
    pub seed: u64,
    pub trial: u64,
}

impl MultipathField {
    pub fn paths(&self, ap_index: usize, segment: u64) -> PathSet {
        let sub = ((ap_index as u64) << 40) | segment;
        let mut rng = rng::stream(self.seed, Purpose::Multipath, self.trial, sub);
        draw_multipath(&self.channel, &mut rng)
    }

    pub fn segment_at(&self, trajectory: &Trajectory, t: f64) -> Result<u64> {
        Ok((trajectory.arc_length_at(t)? / self.channel.segment_length).floor() as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathDirection {
    Los,
    /// Fixed departure bearing relative to boresight.
    Fixed(f64),
}

/// Contribution of one path of one AP to a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct PathComponent {
    pub ap_index: usize,
    pub ap_position: Position,
    pub boresight: f64,
    pub direction: PathDirection,
    pub values: Vec<Complex64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Annotation {
    pub ap_index: usize,
    pub kind: EntryKind,
}

/// Sample grid: `len` samples at `sample_rate`, first one at `start` seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleWindow {
    pub start: f64,
    pub sample_rate: f64,
    pub len: usize,
}

impl SampleWindow {
    pub fn time(&self, n: usize) -> f64 {
        self.start + n as f64 / self.sample_rate
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldTrace {
    pub window: SampleWindow,
    pub components: Vec<PathComponent>,
    /// Additive noise; empty when none has been added.
    pub noise: Vec<Complex64>,
    pub annotations: Vec<Option<Annotation>>,
}

impl FieldTrace {
    pub fn silent(window: SampleWindow) -> Self {
        FieldTrace {
            window,
            components: Vec::new(),
            noise: Vec::new(),
            annotations: vec![None; window.len],
        }
    }

    pub fn len(&self) -> usize {
        self.window.len
    }

    pub fn is_empty(&self) -> bool {
        self.window.len == 0
    }

    pub fn sample_rate(&self) -> f64 {
        self.window.sample_rate
    }

    /// Total field per sample.
    pub fn samples(&self) -> Vec<Complex64> {
        let mut out = if self.noise.is_empty() {
            vec![Complex64::new(0.0, 0.0); self.len()]
        } else {
            self.noise.clone()
        };
        for c in &self.components {
            for (o, v) in out.iter_mut().zip(&c.values) {
                *o += v;
            }
        }
        out
    }

    /// Noise-free field per sample.
    pub fn clean_samples(&self) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.len()];
        for c in &self.components {
            for (o, v) in out.iter_mut().zip(&c.values) {
                *o += v;
            }
        }
        out
    }

    /// Adds the fields of two traces on the same sample grid.
    pub fn superpose(mut self, other: FieldTrace) -> Result<FieldTrace> {
        if self.window != other.window {
            return Err(Error::Domain("superposed traces must share one sample grid".into()));
        }
        self.components.extend(other.components);
        if !other.noise.is_empty() {
            if self.noise.is_empty() {
                self.noise = other.noise;
            } else {
                for (a, b) in self.noise.iter_mut().zip(other.noise) {
                    *a += b;
                }
            }
        }
        for (a, b) in self.annotations.iter_mut().zip(other.annotations) {
            if a.is_none() {
                *a = b;
            }
        }
        Ok(self)
    }

    /// `(time, re, im)` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_s,re,im\n");
        for (n, s) in self.samples().iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", self.window.time(n), s.re, s.im));
        }
        out
    }
}

/// `sum_i w_i z^i` by Horner's rule.
fn array_sum(weights: &[Complex64], z: Complex64) -> Complex64 {
    weights.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, w| acc * z + w)
}

/// Field of one sweep of `ap` starting at `sweep_start`, sampled on `window`.
/// Samples outside the sweep are zero.
pub fn propagate_window(
    schedule: &SweepSchedule,
    ap: &ApConfig,
    ap_index: usize,
    paths: &PathSet,
    position_at: &dyn Fn(f64) -> Result<Position>,
    window: SampleWindow,
    sweep_start: f64,
) -> Result<FieldTrace> {
    let tx_amplitude = dbm_to_mw(ap.eirp_per_element()).sqrt();
    let mut trace = FieldTrace::silent(window);
    let mut values = vec![vec![Complex64::new(0.0, 0.0); window.len]; paths.paths.len()];
    // e^{-j theta_i} per entry, built on first use
    let mut weights: Vec<Option<Vec<Complex64>>> = vec![None; schedule.entries.len()];
    let nlos_steps: Vec<Complex64> = paths
        .paths
        .iter()
        .map(|p| Complex64::from_polar(1.0, 2.0 * PI * ap.spacing * p.bearing.sin()))
        .collect();
    let mut cached: Option<(Position, f64, Complex64)> = None;
    for n in 0..window.len {
        let t = window.time(n);
        let Some(idx) = schedule.entry_index_at(t - sweep_start) else {
            continue;
        };
        let entry = &schedule.entries[idx];
        trace.annotations[n] = Some(Annotation { ap_index, kind: entry.kind });
        let active = entry.active_elements();
        if active == 0 {
            continue;
        }
        let w = weights[idx].get_or_insert_with(|| {
            entry.phases[..active].iter().map(|theta| Complex64::from_polar(1.0, -theta)).collect()
        });
        let p = position_at(t)?;
        let (scale, los_step) = match cached {
            Some((q, scale, step)) if q == p => (scale, step),
            _ => {
                let distance = p.distance(&ap.position);
                let scale = tx_amplitude * 10f64.powf(-free_space_loss(distance, ap.carrier)? / 20.0);
                let step = Complex64::from_polar(1.0, 2.0 * PI * ap.spacing * signed_bearing(ap, p)?.sin());
                cached = Some((p, scale, step));
                (scale, step)
            }
        };
        for (k, path) in paths.paths.iter().enumerate() {
            let step = if k == 0 { los_step } else { nlos_steps[k] };
            let gain = Complex64::from_polar(scale * path.amplitude, path.excess_phase);
            values[k][n] = gain * array_sum(w, step);
        }
    }
    trace.components = paths
        .paths
        .iter()
        .zip(values)
        .enumerate()
        .map(|(k, (path, values))| PathComponent {
            ap_index,
            ap_position: ap.position,
            boresight: ap.boresight,
            direction: if k == 0 { PathDirection::Los } else { PathDirection::Fixed(path.bearing) },
            values,
        })
        .collect();
    Ok(trace)
}

/// One sweep period `[0, T)` sampled at `sample_rate`.
pub fn propagate(
    schedule: &SweepSchedule,
    ap: &ApConfig,
    paths: &PathSet,
    position_at: &dyn Fn(f64) -> Result<Position>,
    sample_rate: f64,
) -> Result<FieldTrace> {
    let len = (schedule.period * sample_rate).round() as usize;
    let window = SampleWindow { start: 0.0, sample_rate, len };
    propagate_window(schedule, ap, 0, paths, position_at, window, 0.0)
}

/// Doppler shift (Hz) for a radial speed (m/s, positive when receding).
pub fn doppler_shift(radial_speed: f64, carrier: f64) -> f64 {
    -radial_speed / wavelength(carrier)
}

/// Advances each path's phase by `-2 pi v_r / lambda` per second of trace,
/// where `v_r` is the insect velocity projected on that path's direction.
pub fn apply_doppler(mut trace: FieldTrace, trajectory: &Trajectory, carrier: f64) -> Result<FieldTrace> {
    let lambda = wavelength(carrier);
    let dt = 1.0 / trace.window.sample_rate;
    let window = trace.window;
    for c in &mut trace.components {
        let mut phase = 0.0;
        for n in 0..window.len {
            if n > 0 {
                let tp = window.time(n - 1);
                let (vx, vy) = trajectory.velocity_at(tp)?;
                let (ux, uy) = match c.direction {
                    PathDirection::Los => {
                        let p = trajectory.position_at(tp)?;
                        let (dx, dy) = (p.x - c.ap_position.x, p.y - c.ap_position.y);
                        let d = dx.hypot(dy);
                        if d == 0.0 {
                            (0.0, 0.0)
                        } else {
                            (dx / d, dy / d)
                        }
                    }
                    PathDirection::Fixed(bearing) => {
                        let a = c.boresight + bearing;
                        (a.cos(), a.sin())
                    }
                };
                let radial = vx * ux + vy * uy;
                phase -= 2.0 * PI * radial / lambda * dt;
            }
            if phase != 0.0 {
                c.values[n] *= Complex64::from_polar(1.0, phase);
            }
        }
    }
    Ok(trace)
}

/// Adds circularly-symmetric complex Gaussian noise of `noise_power` dBm per
/// sample. `-inf` leaves the trace unchanged.
pub fn add_noise(mut trace: FieldTrace, noise_power: f64, rng: &mut SimRng) -> FieldTrace {
    if noise_power == f64::NEG_INFINITY {
        return trace;
    }
    let sigma = (dbm_to_mw(noise_power) / 2.0).sqrt();
    if trace.noise.is_empty() {
        trace.noise = vec![Complex64::new(0.0, 0.0); trace.len()];
    }
    for s in &mut trace.noise {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        *s += Complex64::new(sigma * re, sigma * im);
    }
    trace
}
