//! AP-side sweep generation and TDMA coordination.
//!
//! Each sweep period starts with an 8-bit OOK preamble identifying the AP,
//! followed by equal-length dwell steps. During a step every element `i`
//! (zero-based) is driven with phase offset `i * 2 pi * spacing * sin(steer)`
//! in steering mode, or `i * theta` in uniform-theta mode.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::scenario::{wrap_phase, ApConfig, SweepMode};

pub const PREAMBLE_1: [bool; 8] = [true, false, true, false, true, false, true, false];
pub const PREAMBLE_2: [bool; 8] = [true, true, false, false, true, true, false, false];
pub const PREAMBLE_BITS: usize = 8;

pub fn preamble_bits(id: u8) -> Result<[bool; 8]> {
    match id {
        1 => Ok(PREAMBLE_1),
        2 => Ok(PREAMBLE_2),
        other => Err(Error::InvalidPreamble(other)),
    }
}

/// One keyed interval of an OOK sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OokInterval {
    pub start: f64,
    pub duration: f64,
    pub on: bool,
}

/// The preamble of AP `id` as back-to-back on/off intervals.
pub fn encode_preamble(id: u8, bit_duration: f64) -> Result<Vec<OokInterval>> {
    if !(bit_duration > 0.0) || !bit_duration.is_finite() {
        return Err(Error::Domain(format!("bit duration must be positive, got {bit_duration}")));
    }
    Ok(preamble_bits(id)?
        .iter()
        .enumerate()
        .map(|(k, &on)| OokInterval {
            start: k as f64 * bit_duration,
            duration: bit_duration,
            on,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EntryKind {
    /// Preamble bit; an `on` bit is radiated by the first element alone.
    PreambleBit(bool),
    /// Dwell step `index`; `steer` is the steering angle (steering mode) or the
    /// inter-element phase (uniform-theta mode).
    SweepStep { index: usize, steer: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleEntry {
    pub start: f64,
    pub duration: f64,
    /// Per-element phase offsets in [0, 2pi).
    pub phases: Vec<f64>,
    pub kind: EntryKind,
}

impl ScheduleEntry {
    /// Number of leading elements radiating during this entry.
    pub fn active_elements(&self) -> usize {
        match self.kind {
            EntryKind::PreambleBit(true) => 1,
            EntryKind::PreambleBit(false) => 0,
            EntryKind::SweepStep { .. } => self.phases.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSchedule {
    pub mode: SweepMode,
    pub period: f64,
    pub preamble_duration: f64,
    pub step_count: usize,
    pub entries: Vec<ScheduleEntry>,
}

impl SweepSchedule {
    pub fn dwell(&self) -> f64 {
        (self.period - self.preamble_duration) / self.step_count as f64
    }

    pub fn steps(&self) -> impl Iterator<Item = &ScheduleEntry> {
        self.entries
            .iter()
            .filter(|e| matches!(e.kind, EntryKind::SweepStep { .. }))
    }

    pub fn preamble(&self) -> impl Iterator<Item = &ScheduleEntry> {
        self.entries
            .iter()
            .filter(|e| matches!(e.kind, EntryKind::PreambleBit(_)))
    }

    /// Entry active at offset `t` seconds into the sweep, if `t` is in [0, T).
    pub fn entry_at(&self, t: f64) -> Option<&ScheduleEntry> {
        self.entries.get(self.entry_index_at(t)?)
    }

    pub fn entry_index_at(&self, t: f64) -> Option<usize> {
        if !(t >= 0.0 && t < self.period) {
            return None;
        }
        self.entries.partition_point(|e| e.start <= t).checked_sub(1)
    }

    pub fn to_csv(&self) -> String {
        let n = self.entries.first().map_or(0, |e| e.phases.len());
        let mut out = String::from("start_s,duration_s,kind,value");
        for i in 0..n {
            let _ = write!(out, ",phase_{i}");
        }
        out.push('\n');
        for e in &self.entries {
            let (kind, value) = match e.kind {
                EntryKind::PreambleBit(bit) => ("preamble", if bit { 1.0 } else { 0.0 }),
                EntryKind::SweepStep { steer, .. } => ("sweep", steer),
            };
            let _ = write!(out, "{},{},{},{}", e.start, e.duration, kind, value);
            for p in &e.phases {
                let _ = write!(out, ",{p}");
            }
            out.push('\n');
        }
        out
    }
}

/// Element phases that steer the main lobe towards `steer` (radians).
pub fn steering_phases(antennas: usize, spacing: f64, steer: f64) -> Vec<f64> {
    let progression = 2.0 * PI * spacing * steer.sin();
    (0..antennas).map(|i| wrap_phase(i as f64 * progression)).collect()
}

/// Element phases for a uniform inter-element phase `theta`.
pub fn progression_phases(antennas: usize, theta: f64) -> Vec<f64> {
    (0..antennas).map(|i| wrap_phase(i as f64 * theta)).collect()
}

/// Preamble followed by `pi / delta` dwell steps tiling [0, T).
pub fn build_sweep_schedule(ap: &ApConfig, mode: SweepMode) -> Result<SweepSchedule> {
    ap.validate()?;
    let n = ap.antenna_count;
    let period = ap.sweep_period;
    let preamble = ap.preamble_duration;
    let bit_duration = preamble / PREAMBLE_BITS as f64;
    let delta = ap.sweep_step();
    let steps = ap.sweep_steps as usize;
    // (T - T_preamble) / pi * delta
    let dwell = (period - preamble) / PI * delta;

    let mut entries = Vec::with_capacity(PREAMBLE_BITS + steps);
    for bit in encode_preamble(ap.preamble_id, bit_duration)? {
        entries.push(ScheduleEntry {
            start: bit.start,
            duration: bit.duration,
            phases: vec![0.0; n],
            kind: EntryKind::PreambleBit(bit.on),
        });
    }
    for k in 0..steps {
        // start times come from the exact fraction, never from summed dwells
        let start = preamble + (period - preamble) * k as f64 / steps as f64;
        let (steer, phases) = match mode {
            SweepMode::Steering => {
                let steer = -FRAC_PI_2 + k as f64 * delta;
                (steer, steering_phases(n, ap.spacing, steer))
            }
            SweepMode::UniformTheta => {
                let theta = -PI + k as f64 * 2.0 * PI / steps as f64;
                (theta, progression_phases(n, theta))
            }
        };
        entries.push(ScheduleEntry {
            start,
            duration: dwell,
            phases,
            kind: EntryKind::SweepStep { index: k, steer },
        });
    }
    Ok(SweepSchedule {
        mode,
        period,
        preamble_duration: preamble,
        step_count: steps,
        entries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slot {
    pub ap_index: usize,
    pub start: f64,
    pub duration: f64,
}

/// Round-robin sweep slots, repeating every `period`.
#[derive(Debug, Clone, PartialEq)]
pub struct TdmaPlan {
    pub slots: Vec<Slot>,
    pub period: f64,
    /// More than two APs; 2D fixes use only the first two.
    pub generalized: bool,
}

impl TdmaPlan {
    /// Time to collect one sweep from every AP.
    pub fn fix_latency(&self) -> f64 {
        self.period
    }

    pub fn slot(&self, ap_index: usize) -> Option<&Slot> {
        self.slots.iter().find(|s| s.ap_index == ap_index)
    }

    /// AP transmitting at absolute time `t`, and the start of its current sweep.
    pub fn active_at(&self, t: f64) -> Option<(usize, f64)> {
        let cycle = (t / self.period).floor();
        let offset = t - cycle * self.period;
        self.slots
            .iter()
            .find(|s| offset >= s.start && offset < s.start + s.duration)
            .map(|s| (s.ap_index, cycle * self.period + s.start))
    }

    /// Sweep start times of `ap_index` whose sweeps overlap [from, to).
    pub fn sweep_starts(&self, ap_index: usize, from: f64, to: f64) -> Vec<f64> {
        let Some(slot) = self.slot(ap_index) else {
            return Vec::new();
        };
        let first = ((from - slot.start - slot.duration) / self.period).floor() as i64;
        let mut starts = Vec::new();
        let mut m = first.max(i64::MIN + 1);
        loop {
            let s = m as f64 * self.period + slot.start;
            if s >= to {
                break;
            }
            if s + slot.duration > from {
                starts.push(s);
            }
            m += 1;
        }
        starts
    }
}

pub fn tdma_plan(aps: &[ApConfig]) -> Result<TdmaPlan> {
    if aps.len() < 2 {
        return Err(Error::validation("aps", "TDMA needs at least two APs"));
    }
    let period = aps[0].sweep_period;
    for ap in &aps[1..] {
        if ap.sweep_period != period {
            return Err(Error::MismatchedPeriods(period, ap.sweep_period));
        }
    }
    let slots = (0..aps.len())
        .map(|i| Slot {
            ap_index: i,
            start: i as f64 * period,
            duration: period,
        })
        .collect();
    Ok(TdmaPlan {
        slots,
        period: aps.len() as f64 * period,
        generalized: aps.len() != 2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Position;
    use approx::assert_abs_diff_eq;

    fn ap() -> ApConfig {
        ApConfig::new(Position::new(0.0, 0.0), 0.0, 1)
    }

    #[test]
    fn boresight_step_has_zero_phases() {
        let s = build_sweep_schedule(&ap(), SweepMode::Steering).unwrap();
        let zero = s
            .steps()
            .find(|e| matches!(e.kind, EntryKind::SweepStep { steer, .. } if steer == 0.0))
            .expect("step at boresight");
        assert!(zero.phases.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn third_element_phase_at_thirty_degrees() {
        // (j - 1) * pi * sin(pi / 6) with j = 3
        let phases = steering_phases(4, 0.5, PI / 6.0);
        assert_abs_diff_eq!(phases[2], PI, epsilon = 1e-12);
    }

    #[test]
    fn default_timing_gives_128_steps() {
        let mut a = ap();
        a.preamble_duration = 0.008;
        let s = build_sweep_schedule(&a, SweepMode::Steering).unwrap();
        assert_eq!(s.steps().count(), 128);
        for e in s.steps() {
            assert_abs_diff_eq!(e.duration, 0.042 / 128.0, epsilon = 1e-15);
        }
        assert_eq!(s.preamble().count(), 8);
        // entries tile [0, T)
        assert_eq!(s.entries[0].start, 0.0);
        for w in s.entries.windows(2) {
            assert_abs_diff_eq!(w[0].start + w[0].duration, w[1].start, epsilon = 1e-15);
        }
        let last = s.entries.last().unwrap();
        assert_abs_diff_eq!(last.start + last.duration, 0.050, epsilon = 1e-15);
    }

    #[test]
    fn preambles() {
        let p1: Vec<bool> = encode_preamble(1, 1e-3).unwrap().iter().map(|b| b.on).collect();
        let p2: Vec<bool> = encode_preamble(2, 1e-3).unwrap().iter().map(|b| b.on).collect();
        assert_eq!(p1, [true, false, true, false, true, false, true, false]);
        assert_eq!(p2, [true, true, false, false, true, true, false, false]);
        let last = encode_preamble(1, 1e-3).unwrap()[7];
        assert_abs_diff_eq!(last.start + last.duration, 8e-3, epsilon = 1e-15);
        assert!(matches!(encode_preamble(3, 1e-3), Err(Error::InvalidPreamble(3))));
        // zero-lag correlation of the bipolar patterns vanishes
        let dot: i32 = PREAMBLE_1
            .iter()
            .zip(PREAMBLE_2)
            .map(|(&a, b)| if a == b { 1 } else { -1 })
            .sum();
        assert_eq!(dot, 0);
    }

    #[test]
    fn tdma_latency_and_disjoint_slots() {
        let a1 = ap();
        let mut a2 = ap();
        a2.preamble_id = 2;
        let plan = tdma_plan(&[a1.clone(), a2.clone()]).unwrap();
        assert_abs_diff_eq!(plan.fix_latency(), 0.100, epsilon = 1e-15);
        assert!(!plan.generalized);
        assert_eq!(plan.active_at(0.01), Some((0, 0.0)));
        assert_eq!(plan.active_at(0.06), Some((1, 0.05)));
        assert_eq!(plan.active_at(0.26).map(|x| x.0), Some(1));

        let three = tdma_plan(&[a1.clone(), a2.clone(), a1.clone()]).unwrap();
        assert_abs_diff_eq!(three.fix_latency(), 0.150, epsilon = 1e-15);
        assert!(three.generalized);

        let mut slow = a2;
        slow.sweep_period = 0.06;
        assert!(matches!(tdma_plan(&[a1, slow]), Err(Error::MismatchedPeriods(..))));
    }

    #[test]
    fn sweep_starts_cover_window() {
        let mut a2 = ap();
        a2.preamble_id = 2;
        let plan = tdma_plan(&[ap(), a2]).unwrap();
        assert_eq!(plan.sweep_starts(0, 0.0, 0.15), vec![0.0, 0.1]);
        assert_eq!(plan.sweep_starts(1, 0.0, 0.15), vec![0.05]);
        assert_eq!(plan.sweep_starts(1, 0.07, 0.12), vec![0.05]);
    }

    #[test]
    fn csv_export_has_one_row_per_entry() {
        let s = build_sweep_schedule(&ap(), SweepMode::Steering).unwrap();
        let csv = s.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "start_s,duration_s,kind,value,phase_0,phase_1,phase_2,phase_3");
        assert_eq!(lines.count(), s.entries.len());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn ap_strategy() -> impl Strategy<Value = ApConfig> {
            (2usize..=8, 0.1..1.0f64, 0.01..0.2f64, 0.05..0.5f64, 1u32..400).prop_map(
                |(n, spacing, period, frac, steps)| {
                    let mut a = ApConfig::new(Position::new(0.0, 0.0), 0.0, 1);
                    a.antenna_count = n;
                    a.spacing = spacing;
                    a.sweep_period = period;
                    a.preamble_duration = period * frac;
                    a.sweep_steps = steps;
                    a
                },
            )
        }

        proptest! {
            #[test]
            fn step_start_maps_back_to_steering_angle(a in ap_strategy()) {
                let s = build_sweep_schedule(&a, SweepMode::Steering).unwrap();
                let delta = a.sweep_step();
                let mut prev = f64::NEG_INFINITY;
                for e in s.steps() {
                    let EntryKind::SweepStep { steer, .. } = e.kind else { unreachable!() };
                    prop_assert!(steer > prev);
                    prev = steer;
                    let back = (e.start - s.preamble_duration) / (s.period - s.preamble_duration) * PI - FRAC_PI_2;
                    prop_assert!((back - steer).abs() <= delta / 2.0);
                    prop_assert!(e.phases.iter().all(|&p| (0.0..2.0 * PI).contains(&p)));
                }
            }

            #[test]
            fn modes_share_preamble_and_step_count(a in ap_strategy()) {
                let s = build_sweep_schedule(&a, SweepMode::Steering).unwrap();
                let u = build_sweep_schedule(&a, SweepMode::UniformTheta).unwrap();
                prop_assert_eq!(s.steps().count(), u.steps().count());
                prop_assert_eq!(s.preamble().collect::<Vec<_>>(), u.preamble().collect::<Vec<_>>());
                for e in u.entries.iter().chain(&s.entries) {
                    prop_assert!(e.phases.iter().all(|&p| (0.0..2.0 * PI).contains(&p)));
                }
            }
        }
    }
}
