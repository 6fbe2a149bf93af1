//! End-to-end signal chain used by the experiments: AP sweeps on a TDMA
//! plan, multipath with Doppler and noise, then the insect detector.

use crate::channel::{add_noise, apply_doppler, propagate, propagate_window, FieldTrace, MultipathField, PathSet, SampleWindow};
use crate::error::Result;
use crate::receiver::{envelope_detect, estimate_angle, EnvelopeTrace, SweepTiming};
use crate::rng::SimRng;
use crate::scenario::{ApConfig, ChannelConfig, DetectorConfig, Position, SweepMode, Trajectory};
use crate::transmitter::{build_sweep_schedule, Slot, SweepSchedule, TdmaPlan};

/// Sweeps, slots and multipath for a set of APs sharing one medium.
#[derive(Debug, Clone)]
pub struct Deployment {
    pub aps: Vec<ApConfig>,
    pub schedules: Vec<SweepSchedule>,
    pub plan: TdmaPlan,
    pub channel: ChannelConfig,
    pub detector: DetectorConfig,
}

impl Deployment {
    pub fn new(aps: Vec<ApConfig>, mode: SweepMode, channel: ChannelConfig, detector: DetectorConfig) -> Result<Self> {
        let schedules = aps.iter().map(|ap| build_sweep_schedule(ap, mode)).collect::<Result<Vec<_>>>()?;
        let plan = if aps.len() == 1 {
            TdmaPlan {
                slots: vec![Slot { ap_index: 0, start: 0.0, duration: aps[0].sweep_period }],
                period: aps[0].sweep_period,
                generalized: false,
            }
        } else {
            crate::transmitter::tdma_plan(&aps)?
        };
        Ok(Deployment { aps, schedules, plan, channel, detector })
    }

    pub fn timing(&self, ap_index: usize) -> Result<SweepTiming> {
        SweepTiming::new(&self.aps[ap_index], self.detector.sample_rate, self.schedules[ap_index].mode)
    }

    /// Detector output for `len` samples from `t0` along `trajectory`.
    ///
    /// Each sweep uses the path set of the multipath segment the insect
    /// occupies when the sweep starts.
    pub fn envelope(
        &self,
        trajectory: &Trajectory,
        multipath: &MultipathField,
        t0: f64,
        len: usize,
        channel_rng: &mut SimRng,
        detector_rng: Option<&mut SimRng>,
    ) -> Result<EnvelopeTrace> {
        let window = SampleWindow { start: t0, sample_rate: self.detector.sample_rate, len };
        let end = window.time(len);
        let mut trace = FieldTrace::silent(window);
        let position_at = |t: f64| trajectory.position_at(t.clamp(trajectory.start_time(), trajectory.end_time()));
        for (a, ap) in self.aps.iter().enumerate() {
            for start in self.plan.sweep_starts(a, t0, end) {
                let at = start.clamp(trajectory.start_time(), trajectory.end_time());
                let segment = if trajectory.is_stationary() { 0 } else { multipath.segment_at(trajectory, at)? };
                let paths = multipath.paths(a, segment);
                let sweep = propagate_window(&self.schedules[a], ap, a, &paths, &position_at, window, start)?;
                trace = trace.superpose(sweep)?;
            }
        }
        if self.channel.doppler && !trajectory.is_stationary() {
            trace = apply_doppler(trace, trajectory, self.aps[0].carrier)?;
        }
        let trace = add_noise(trace, self.channel.noise_power, channel_rng);
        envelope_detect(&trace, &self.detector, detector_rng)
    }
}

/// One sweep of a single AP with its preamble at sample 0 and a static
/// insect; sweep sync is known.
#[derive(Debug, Clone)]
pub struct StaticSweep {
    pub ap: ApConfig,
    pub schedule: SweepSchedule,
    pub timing: SweepTiming,
    pub detector: DetectorConfig,
}

impl StaticSweep {
    pub fn new(ap: ApConfig, mode: SweepMode, detector: DetectorConfig) -> Result<Self> {
        let schedule = build_sweep_schedule(&ap, mode)?;
        let timing = SweepTiming::new(&ap, detector.sample_rate, mode)?;
        Ok(StaticSweep { ap, schedule, timing, detector })
    }

    /// Raw angle estimate. Without `rngs` the chain is noise-free.
    pub fn angle(
        &self,
        paths: &PathSet,
        position: Position,
        noise_power: f64,
        rngs: Option<(&mut SimRng, &mut SimRng)>,
    ) -> Result<f64> {
        let field = propagate(&self.schedule, &self.ap, paths, &|_| Ok(position), self.detector.sample_rate)?;
        let env = match rngs {
            Some((channel_rng, detector_rng)) => {
                let field = add_noise(field, noise_power, channel_rng);
                envelope_detect(&field, &self.detector, Some(detector_rng))?
            }
            None => envelope_detect(&field, &self.detector, None)?,
        };
        Ok(estimate_angle(&env, 0, &self.timing)?.0)
    }
}
