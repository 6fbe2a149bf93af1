//! Uplink by subcarrier-shifted on-off keying, and the hive polling session.
//!
//! The AP receiver sees strong carrier leakage at 0 Hz plus the reflected
//! switch pattern `h s(t)`, mixes down by the subcarrier and band-passes with
//! a boxcar window centred on each bit. The window sum over the known switch
//! pattern is computed in closed form; the window noise is drawn once per bit
//! with the variance of the summed per-sample noise.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::channel::{FieldTrace, PathComponent, PathDirection, SampleWindow};
use crate::error::{Error, Result};
use crate::receiver::{envelope_detect, LogStore, DEFAULT_LOG_CAPACITY};
use crate::rng::{self, Purpose, SimRng};
use crate::scenario::{dbm_to_mw, free_space_loss, DetectorConfig, HiveInsect, Position};

pub const DEFAULT_BITRATE: f64 = 1000.0;
pub const DEFAULT_SUBCARRIER: f64 = 2e6;
/// Simulation samples per subcarrier period.
pub const SAMPLES_PER_CYCLE: usize = 4;
pub const MAX_FRAME_BITS: usize = DEFAULT_LOG_CAPACITY * 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub bits: Vec<bool>,
    bitrate_mbps: u64,
}

impl Frame {
    pub fn new(bits: Vec<bool>, bitrate: f64) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::validation("frame.bits", "payload must not be empty"));
        }
        if bits.len() > MAX_FRAME_BITS {
            return Err(Error::validation("frame.bits", format!("at most {MAX_FRAME_BITS} bits fit in the log")));
        }
        if !(bitrate > 0.0) || !bitrate.is_finite() {
            return Err(Error::validation("frame.bitrate", "must be > 0"));
        }
        Ok(Frame { bits, bitrate_mbps: (bitrate * 1000.0).round() as u64 })
    }

    /// Bytes sent least significant bit first.
    pub fn from_bytes(bytes: &[u8], bitrate: f64) -> Result<Self> {
        Frame::new(bytes_to_bits(bytes), bitrate)
    }

    pub fn bitrate(&self) -> f64 {
        self.bitrate_mbps as f64 / 1000.0
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

pub fn bytes_to_bits(bytes: &[u8]) -> Vec<bool> {
    bytes.iter().flat_map(|b| (0..8).map(move |i| b >> i & 1 == 1)).collect()
}

pub fn bits_to_bytes(bits: &[bool]) -> Vec<u8> {
    bits.chunks(8)
        .map(|c| c.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | (u8::from(b) << i)))
        .collect()
}

/// Airtime of a frame, seconds.
pub fn payload_duration(frame: &Frame) -> f64 {
    frame.len() as f64 / frame.bitrate()
}

/// Duration for `bits` at `bitrate`; rejects a non-positive rate.
pub fn payload_duration_bits(bits: usize, bitrate: f64) -> Result<f64> {
    if !(bitrate > 0.0) || !bitrate.is_finite() {
        return Err(Error::validation("frame.bitrate", "must be > 0"));
    }
    Ok(bits as f64 / bitrate)
}

/// Switch state at the simulation rate, generated on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchWaveform {
    pub bits: Vec<bool>,
    pub subcarrier: f64,
    pub sample_rate: f64,
    pub samples_per_bit: usize,
}

impl SwitchWaveform {
    pub fn len(&self) -> usize {
        self.bits.len() * self.samples_per_bit
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.sample_rate
    }

    /// `true` while the switch reflects. A '1' bit toggles with 50% duty,
    /// reflecting in the first half of each subcarrier cycle.
    pub fn state(&self, n: usize) -> bool {
        self.bits[n / self.samples_per_bit] && n % SAMPLES_PER_CYCLE < SAMPLES_PER_CYCLE / 2
    }

    /// Count of off-to-on switch transitions.
    pub fn rising_edges(&self) -> usize {
        let mut prev = false;
        let mut count = 0;
        for n in 0..self.len() {
            let s = self.state(n);
            if s && !prev {
                count += 1;
            }
            prev = s;
        }
        count
    }
}

pub fn modulate_frame(frame: &Frame, subcarrier: f64) -> Result<SwitchWaveform> {
    if !(subcarrier > 0.0) {
        return Err(Error::validation("demod.subcarrier", "must be > 0"));
    }
    let sample_rate = subcarrier * SAMPLES_PER_CYCLE as f64;
    let per_bit = sample_rate / frame.bitrate();
    let samples_per_bit = per_bit.round() as usize;
    if (per_bit - samples_per_bit as f64).abs() > 1e-9 * per_bit || !samples_per_bit.is_multiple_of(SAMPLES_PER_CYCLE) {
        return Err(Error::Domain("each bit must hold a whole number of subcarrier cycles".into()));
    }
    Ok(SwitchWaveform { bits: frame.bits.clone(), subcarrier, sample_rate, samples_per_bit })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemodConfig {
    /// Receive offset from the carrier, Hz.
    pub offset: f64,
    /// Noise bandwidth of the boxcar band-pass, Hz. The window lasts
    /// `1 / bandwidth` and is centred on each bit.
    pub bandwidth: f64,
}

impl Default for DemodConfig {
    fn default() -> Self {
        DemodConfig { offset: DEFAULT_SUBCARRIER, bandwidth: 2000.0 }
    }
}

/// Two-way backscatter and one-way downlink budget at the hive, in dB terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkBudget {
    /// AP transmit power, dBm.
    pub tx_power: f64,
    /// Applied on transmit and on receive, dBi.
    pub ap_gain: f64,
    pub insect_gain: f64,
    /// Loss at the backscatter reflection, dB.
    pub reflection_loss: f64,
    /// Carrier leakage into the AP receiver relative to `tx_power`, dB.
    pub leakage_isolation: f64,
    /// Noise power in the demodulator band, dBm.
    pub noise_floor: f64,
    pub carrier: f64,
    pub bitrate: f64,
    pub demod: DemodConfig,
}

impl Default for LinkBudget {
    fn default() -> Self {
        LinkBudget {
            tx_power: 20.0,
            ap_gain: 6.0,
            insect_gain: 0.0,
            reflection_loss: 10.0,
            leakage_isolation: 30.0,
            noise_floor: -92.0,
            carrier: 915e6,
            bitrate: DEFAULT_BITRATE,
            demod: DemodConfig::default(),
        }
    }
}

impl LinkBudget {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("link.tx_power", self.tx_power),
            ("link.ap_gain", self.ap_gain),
            ("link.insect_gain", self.insect_gain),
            ("link.reflection_loss", self.reflection_loss),
            ("link.leakage_isolation", self.leakage_isolation),
            ("link.noise_floor", self.noise_floor),
        ] {
            if !v.is_finite() {
                return Err(Error::validation(field, "must be finite"));
            }
        }
        for (field, v) in [
            ("link.carrier", self.carrier),
            ("link.bitrate", self.bitrate),
            ("link.demod.offset", self.demod.offset),
            ("link.demod.bandwidth", self.demod.bandwidth),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::validation(field, "must be > 0"));
            }
        }
        if self.demod.bandwidth < self.bitrate {
            return Err(Error::validation("link.demod.bandwidth", "the filter window cannot exceed one bit"));
        }
        Ok(())
    }

    /// Backscatter power reaching the AP from `distance`, dBm.
    pub fn uplink_power(&self, distance: f64) -> Result<f64> {
        let loss = free_space_loss(distance, self.carrier)?;
        Ok(self.tx_power + 2.0 * (self.ap_gain + self.insect_gain) - 2.0 * loss - self.reflection_loss)
    }

    /// Query power at the insect detector, dBm.
    pub fn downlink_power(&self, distance: f64) -> Result<f64> {
        Ok(self.tx_power + self.ap_gain + self.insect_gain - free_space_loss(distance, self.carrier)?)
    }

    pub fn channel(&self, distance: f64) -> Result<BackscatterChannel> {
        Ok(BackscatterChannel {
            amplitude: dbm_to_mw(self.uplink_power(distance)?).sqrt(),
            leakage: dbm_to_mw(self.tx_power - self.leakage_isolation).sqrt(),
            band_noise: dbm_to_mw(self.noise_floor),
        })
    }
}

/// Received amplitudes in sqrt(mW) and the band noise power in mW.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackscatterChannel {
    pub amplitude: f64,
    pub leakage: f64,
    /// Noise power after the band-pass; zero for a clean channel.
    pub band_noise: f64,
}

impl BackscatterChannel {
    pub fn clean(amplitude: f64) -> Self {
        BackscatterChannel { amplitude, leakage: 0.0, band_noise: 0.0 }
    }

    /// Channel whose filtered SNR is `snr_db` for unit reflection amplitude.
    pub fn at_snr(snr_db: f64, waveform: &SwitchWaveform, demod: &DemodConfig) -> Result<Self> {
        let on = on_level(waveform, demod)?;
        Ok(BackscatterChannel { amplitude: 1.0, leakage: 1.0, band_noise: on * on / 10f64.powf(snr_db / 10.0) })
    }

    /// Per-sample noise power at the simulation rate giving `band_noise`.
    pub fn sample_noise(&self, window_len: usize) -> f64 {
        self.band_noise * window_len as f64
    }
}

fn window_bounds(waveform: &SwitchWaveform, demod: &DemodConfig, bit: usize) -> Result<(usize, usize)> {
    if (demod.offset - waveform.subcarrier).abs() > 1e-9 * waveform.subcarrier {
        return Err(Error::Domain(format!(
            "receive offset {} Hz must equal the subcarrier {} Hz",
            demod.offset, waveform.subcarrier
        )));
    }
    let len = (waveform.sample_rate / demod.bandwidth).round() as usize;
    if len == 0 || len > waveform.samples_per_bit {
        return Err(Error::Domain("band-pass window must fit inside one bit".into()));
    }
    let start = bit * waveform.samples_per_bit + (waveform.samples_per_bit - len) / 2;
    Ok((start, len))
}

fn mixer(n: usize) -> Complex64 {
    // e^{-j 2 pi f_sc n / fs} with fs = 4 f_sc cycles through 1, -j, -1, j
    match n % SAMPLES_PER_CYCLE {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, -1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, 1.0),
    }
}

/// `sum_{n in [start, start+len)} s_n e^{-j 2 pi f n / fs}` and the same sum
/// for a constant input, both in closed form over whole cycles.
fn window_sums(waveform: &SwitchWaveform, start: usize, len: usize) -> (Complex64, Complex64) {
    let cycle_switch: Complex64 = (0..SAMPLES_PER_CYCLE / 2).map(mixer).sum();
    let (mut switch, mut constant) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
    let end = start + len;
    let mut n = start;
    while n < end {
        let cycle_end = (n / SAMPLES_PER_CYCLE + 1) * SAMPLES_PER_CYCLE;
        let bit_end = (n / waveform.samples_per_bit + 1) * waveform.samples_per_bit;
        if n.is_multiple_of(SAMPLES_PER_CYCLE) && cycle_end <= end {
            // whole cycles until the window or bit ends; constant input cancels
            let stop = end.min(bit_end);
            let cycles = (stop - n) / SAMPLES_PER_CYCLE;
            if waveform.bits[n / waveform.samples_per_bit] {
                switch += cycle_switch * cycles as f64;
            }
            n += cycles * SAMPLES_PER_CYCLE;
        } else {
            let m = mixer(n);
            constant += m;
            if waveform.state(n) {
                switch += m;
            }
            n += 1;
        }
    }
    (switch, constant)
}

/// Filtered magnitude of a '1' bit for unit reflection amplitude.
pub fn on_level(waveform: &SwitchWaveform, demod: &DemodConfig) -> Result<f64> {
    let (_, len) = window_bounds(waveform, demod, 0)?;
    let ones = SwitchWaveform { bits: vec![true], ..waveform.clone() };
    let (start, _) = window_bounds(&ones, demod, 0)?;
    Ok(window_sums(&ones, start, len).0.norm() / len as f64)
}

/// Filtered magnitudes sampled at bit centres.
pub fn filtered_magnitudes(
    waveform: &SwitchWaveform,
    channel: &BackscatterChannel,
    demod: &DemodConfig,
    rng: Option<&mut SimRng>,
) -> Result<Vec<f64>> {
    let mut rng = rng;
    let sigma = (channel.band_noise / 2.0).sqrt();
    (0..waveform.bits.len())
        .map(|bit| {
            let (start, len) = window_bounds(waveform, demod, bit)?;
            let (switch, constant) = window_sums(waveform, start, len);
            let mut y = (switch * channel.amplitude + constant * channel.leakage) / len as f64;
            if let Some(r) = rng.as_deref_mut() {
                if sigma > 0.0 {
                    let re: f64 = StandardNormal.sample(r);
                    let im: f64 = StandardNormal.sample(r);
                    y += Complex64::new(sigma * re, sigma * im);
                }
            }
            Ok(y.norm())
        })
        .collect()
}

/// Spread below which a frame is treated as unmodulated, in noise rms units.
pub const FLAT_FRAME_SPREAD: f64 = 8.0;
/// Absolute threshold for unmodulated frames, in noise rms units.
pub const FLAT_FRAME_GATE: f64 = 3.0;

/// Midpoint of the frame's min/max magnitude. When the spread is too small
/// to contain both symbols, an absolute gate above the known band noise
/// decides instead, so constant frames decode too.
pub fn decide_bits(magnitudes: &[f64], band_noise: f64) -> Vec<bool> {
    let lo = magnitudes.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = magnitudes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let rms = band_noise.sqrt();
    let threshold = if hi - lo >= FLAT_FRAME_SPREAD * rms && hi - lo > 0.0 {
        (lo + hi) / 2.0
    } else {
        (FLAT_FRAME_GATE * rms).max(hi * 1e-6)
    };
    magnitudes.iter().map(|&m| m > threshold).collect()
}

pub fn ap_demodulate(
    waveform: &SwitchWaveform,
    channel: &BackscatterChannel,
    demod: &DemodConfig,
    rng: Option<&mut SimRng>,
) -> Result<Vec<bool>> {
    let mags = filtered_magnitudes(waveform, channel, demod, rng)?;
    Ok(decide_bits(&mags, channel.band_noise))
}

pub fn hamming(a: &[bool], b: &[bool]) -> usize {
    assert_eq!(a.len(), b.len(), "payloads must have equal length");
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Half-width of the normal-approximation 95% interval on a proportion.
pub fn ci95(errors: u64, bits: u64) -> f64 {
    if bits == 0 {
        return 0.0;
    }
    let p = errors as f64 / bits as f64;
    1.96 * (p * (1.0 - p) / bits as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BerPoint {
    pub snr_db: f64,
    pub bits: u64,
    pub errors: u64,
}

impl BerPoint {
    pub fn ber(&self) -> f64 {
        self.errors as f64 / self.bits as f64
    }

    pub fn ci95(&self) -> f64 {
        ci95(self.errors, self.bits)
    }
}

/// Random frame of `bits` bits from `rng`.
pub fn random_frame(bits: usize, bitrate: f64, rng: &mut SimRng) -> Result<Frame> {
    Frame::new((0..bits).map(|_| rng.gen::<bool>()).collect(), bitrate)
}

/// Bit errors of one random frame at `snr_db`.
pub fn frame_errors(snr_db: f64, frame_bits: usize, demod: &DemodConfig, seed: u64, frame_index: u64) -> Result<u64> {
    let mut payload_rng = rng::stream(seed, Purpose::Payload, frame_index, snr_key(snr_db));
    let mut noise_rng = rng::stream(seed, Purpose::Backscatter, frame_index, snr_key(snr_db));
    let frame = random_frame(frame_bits, DEFAULT_BITRATE, &mut payload_rng)?;
    let wf = modulate_frame(&frame, demod.offset)?;
    let channel = BackscatterChannel::at_snr(snr_db, &wf, demod)?;
    let got = ap_demodulate(&wf, &channel, demod, Some(&mut noise_rng))?;
    Ok(hamming(&frame.bits, &got) as u64)
}

/// Stable stream key for an SNR value.
pub fn snr_key(snr_db: f64) -> u64 {
    snr_db.to_bits()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptRow {
    pub insect_id: u8,
    pub bits_sent: usize,
    pub bit_errors: usize,
    /// Query and upload time for this insect, seconds.
    pub duration: f64,
    pub skipped: bool,
    pub attempts: u32,
    /// Uplink interval on the session clock; `None` when nothing was sent.
    pub uplink: Option<(f64, f64)>,
}

pub const QUERY_BITS: usize = 16;
pub const CMD_DUMP: u8 = 0x01;

pub fn query_bits(address: u8, command: u8) -> Vec<bool> {
    bytes_to_bits(&[address, command])
}

/// Decodes an OOK query through the insect's envelope detector. Each bit is
/// the mean of its detector samples compared with the midpoint of the
/// per-query min/max, never below three times the noise-floor output.
pub fn downlink_decode(
    bits: &[bool],
    power_dbm: f64,
    bitrate: f64,
    det: &DetectorConfig,
    rng: &mut SimRng,
) -> Result<Vec<bool>> {
    let per_bit = (det.sample_rate / bitrate).round() as usize;
    if per_bit == 0 {
        return Err(Error::Domain("detector rate is below the query bitrate".into()));
    }
    let amplitude = dbm_to_mw(power_dbm).sqrt();
    let values: Vec<Complex64> = bits
        .iter()
        .flat_map(|&b| std::iter::repeat_n(Complex64::new(if b { amplitude } else { 0.0 }, 0.0), per_bit))
        .collect();
    let window = SampleWindow { start: 0.0, sample_rate: det.sample_rate, len: values.len() };
    let mut field = FieldTrace::silent(window);
    field.components.push(PathComponent {
        ap_index: 0,
        ap_position: Position::new(0.0, 0.0),
        boresight: 0.0,
        direction: PathDirection::Los,
        values,
    });
    let env = envelope_detect(&field, det, Some(rng))?;
    let means: Vec<f64> = env.samples.chunks(per_bit).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let threshold = ((lo + hi) / 2.0).max(3.0 * det.response.volts(det.floor_mw()));
    Ok(means.iter().map(|&m| m > threshold).collect())
}

/// Polls each insect in turn: query by address (retried up to `retries`
/// extra times), then the addressed insect uploads its whole log.
pub fn hive_mac_session(
    insects: &[(HiveInsect, LogStore)],
    link: &LinkBudget,
    det: &DetectorConfig,
    retries: u32,
    seed: u64,
) -> Result<Vec<TranscriptRow>> {
    let query_time = payload_duration_bits(QUERY_BITS, link.bitrate)?;
    let mut clock = 0.0;
    let mut rows = Vec::with_capacity(insects.len());
    for (k, (insect, store)) in insects.iter().enumerate() {
        let mut dl_rng = rng::stream(seed, Purpose::Downlink, k as u64, 0);
        let query = query_bits(insect.address, CMD_DUMP);
        let power = link.downlink_power(insect.distance)?;
        let started = clock;
        let mut attempts = 0;
        let mut heard = false;
        while attempts <= retries {
            attempts += 1;
            clock += query_time;
            if downlink_decode(&query, power, link.bitrate, det, &mut dl_rng)? == query {
                heard = true;
                break;
            }
        }
        if !heard {
            rows.push(TranscriptRow {
                insect_id: insect.address,
                bits_sent: 0,
                bit_errors: 0,
                duration: clock - started,
                skipped: true,
                attempts,
                uplink: None,
            });
            continue;
        }
        let payload = store.payload();
        let (mut bits_sent, mut bit_errors, mut uplink) = (0, 0, None);
        if !payload.is_empty() {
            let frame = Frame::from_bytes(&payload, link.bitrate)?;
            let wf = modulate_frame(&frame, link.demod.offset)?;
            let channel = link.channel(insect.distance)?;
            let mut ul_rng = rng::stream(seed, Purpose::Backscatter, k as u64, 0);
            let got = ap_demodulate(&wf, &channel, &link.demod, Some(&mut ul_rng))?;
            bits_sent = frame.len();
            bit_errors = hamming(&frame.bits, &got);
            let airtime = payload_duration(&frame);
            uplink = Some((clock, clock + airtime));
            clock += airtime;
        }
        rows.push(TranscriptRow {
            insect_id: insect.address,
            bits_sent,
            bit_errors,
            duration: clock - started,
            skipped: false,
            attempts,
            uplink,
        });
    }
    Ok(rows)
}

pub fn transcript_to_csv(rows: &[TranscriptRow]) -> String {
    let mut out = String::from("insect_id,bits_sent,bit_errors,duration_s,skipped_flag\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.insect_id, r.bits_sent, r.bit_errors, r.duration, u8::from(r.skipped));
    }
    out
}

/// General mixer phasor `e^{-j 2 pi f n / fs}`. At four samples per cycle it
/// reduces to the table in the demodulator.
pub fn mixer_phase(n: usize, subcarrier: f64, sample_rate: f64) -> Complex64 {
    Complex64::from_polar(1.0, -2.0 * PI * subcarrier * n as f64 / sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::receiver::{SensorKind, SensorRecord};
    use approx::assert_abs_diff_eq;

    fn wf(bits: &[u8]) -> SwitchWaveform {
        let frame = Frame::new(bits.iter().map(|&b| b == 1).collect(), DEFAULT_BITRATE).unwrap();
        modulate_frame(&frame, DEFAULT_SUBCARRIER).unwrap()
    }

    #[test]
    fn one_bit_is_a_millisecond_of_square_wave() {
        let w = wf(&[1]);
        assert_abs_diff_eq!(w.duration(), 1e-3, epsilon = 1e-15);
        assert_eq!(w.rising_edges(), 2000);
        let on = (0..w.len()).filter(|&n| w.state(n)).count();
        assert_eq!(on * 2, w.len());
    }

    #[test]
    fn zeros_hold_state() {
        let w = wf(&[0, 0, 0]);
        assert_abs_diff_eq!(w.duration(), 3e-3, epsilon = 1e-15);
        assert!((0..w.len()).all(|n| !w.state(n)));
    }

    #[test]
    fn bit_boundaries_are_exact() {
        let w = wf(&[1, 0, 1]);
        let spb = w.samples_per_bit;
        assert_eq!(spb, 8000);
        assert!(w.state(0) && w.state(2 * spb));
        assert!((spb..2 * spb).all(|n| !w.state(n)));
        assert!(!w.state(spb - 1));
        assert_eq!(w.rising_edges(), 4000);
    }

    #[test]
    fn mixer_matches_phasor() {
        for n in 0..16 {
            let d = mixer(n) - mixer_phase(n, DEFAULT_SUBCARRIER, 4.0 * DEFAULT_SUBCARRIER);
            assert!(d.norm() < 1e-12);
        }
    }

    #[test]
    fn closed_form_window_matches_direct_sum() {
        let w = wf(&[1, 0, 1, 1]);
        for (start, len) in [(2000, 4000), (8001, 4003), (7990, 20), (3, 17)] {
            let (switch, constant) = window_sums(&w, start, len);
            let direct: Complex64 = (start..start + len).filter(|&n| w.state(n)).map(mixer).sum();
            let direct_c: Complex64 = (start..start + len).map(mixer).sum();
            assert!((switch - direct).norm() < 1e-9, "{start} {len}");
            assert!((constant - direct_c).norm() < 1e-9);
        }
    }

    #[test]
    fn on_level_is_fundamental() {
        // |(1 - j) / 4| for a [1, 1, 0, 0] pattern
        assert_abs_diff_eq!(on_level(&wf(&[1]), &DemodConfig::default()).unwrap(), 2f64.sqrt() / 4.0, epsilon = 1e-12);
    }

    #[test]
    fn clean_round_trip_with_leakage() {
        let bits = [1, 0, 1, 1, 0, 0, 0, 1, 1, 0];
        let w = wf(&bits);
        let channel = BackscatterChannel { amplitude: 1e-5, leakage: 1.0, band_noise: 0.0 };
        let got = ap_demodulate(&w, &channel, &DemodConfig::default(), None).unwrap();
        assert_eq!(got, w.bits);
    }

    #[test]
    fn constant_frames_decode() {
        let link = LinkBudget::default();
        let channel = link.channel(1.0).unwrap();
        let mut r = rng::stream(4, Purpose::Backscatter, 0, 0);
        for bits in [vec![1u8; 64], vec![0u8; 64]] {
            let w = wf(&bits);
            let got = ap_demodulate(&w, &channel, &link.demod, Some(&mut r)).unwrap();
            assert_eq!(got, w.bits);
        }
    }

    #[test]
    fn offset_must_match() {
        let w = wf(&[1]);
        let demod = DemodConfig { offset: 1e6, ..Default::default() };
        assert!(ap_demodulate(&w, &BackscatterChannel::clean(1.0), &demod, None).is_err());
    }

    #[test]
    fn durations() {
        let f32 = Frame::new(vec![true; 32], 1000.0).unwrap();
        assert_abs_diff_eq!(payload_duration(&f32), 0.032, epsilon = 1e-15);
        let mut store = LogStore::default();
        for _ in 0..10 {
            store.log_record(SensorRecord::new(SensorKind::Light, 9, 1, 2).unwrap()).unwrap();
        }
        let f = Frame::from_bytes(&store.payload(), 1000.0).unwrap();
        assert_eq!(f.len(), 320);
        assert_abs_diff_eq!(payload_duration(&f), 0.320, epsilon = 1e-15);
        assert!(Frame::new(vec![true], 0.0).is_err());
        assert!(payload_duration_bits(32, 0.0).is_err());
        assert!(Frame::new(vec![], 1000.0).is_err());
    }

    #[test]
    fn byte_bit_round_trip() {
        let bytes = [0x00, 0xFF, 0x5A, 0x01];
        assert_eq!(bits_to_bytes(&bytes_to_bits(&bytes)), bytes);
        assert_eq!(&bytes_to_bits(&[0x01])[..2], &[true, false]);
    }

    #[test]
    fn budget_edge_near_five_meters() {
        let link = LinkBudget::default();
        let on = 2f64.sqrt() / 4.0;
        let snr = |d: f64| link.uplink_power(d).unwrap() + 20.0 * on.log10() - link.noise_floor;
        assert!(snr(5.0) > 12.0 && snr(5.0) < 16.0, "{}", snr(5.0));
        assert!(snr(10.0) < 2.0);
    }

    #[test]
    fn ber_grows_with_distance() {
        let link = LinkBudget::default();
        let mut last = 0usize;
        for d in [1.0, 4.0, 6.0, 8.0, 12.0] {
            let mut errors = 0;
            for f in 0..50u64 {
                let mut pr = rng::stream(9, Purpose::Payload, f, 0);
                let mut nr = rng::stream(9, Purpose::Backscatter, f, 0);
                let frame = random_frame(1000, 1000.0, &mut pr).unwrap();
                let w = modulate_frame(&frame, DEFAULT_SUBCARRIER).unwrap();
                let got = ap_demodulate(&w, &link.channel(d).unwrap(), &link.demod, Some(&mut nr)).unwrap();
                errors += hamming(&frame.bits, &got);
            }
            assert!(errors >= last, "{d} m: {errors} < {last}");
            last = errors;
        }
        assert!(last > 0);
    }

    fn hive(distances: &[f64]) -> Vec<(HiveInsect, LogStore)> {
        distances
            .iter()
            .enumerate()
            .map(|(k, &d)| {
                let mut store = LogStore::default();
                for i in 0..10 {
                    store.log_record(SensorRecord::new(SensorKind::Temperature, i * 100, 10, 20).unwrap()).unwrap();
                }
                (HiveInsect { address: k as u8 + 1, distance: d, records: 10 }, store)
            })
            .collect()
    }

    #[test]
    fn single_insect_clean_session() {
        let link = LinkBudget { noise_floor: -200.0, ..LinkBudget::default() };
        let rows = hive_mac_session(&hive(&[1.0]), &link, &DetectorConfig::default(), 3, 1).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!((rows[0].bits_sent, rows[0].bit_errors, rows[0].skipped), (320, 0, false));
        assert_abs_diff_eq!(rows[0].duration, 0.016 + 0.320, epsilon = 1e-12);
    }

    #[test]
    fn sessions_are_sequential_and_skip_far_insects() {
        let rows = hive_mac_session(&hive(&[1.0, 2.0, 500.0, 3.0]), &LinkBudget::default(), &DetectorConfig::default(), 3, 2).unwrap();
        assert_eq!(rows.iter().map(|r| r.insect_id).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
        assert!(rows[2].skipped && rows[2].attempts == 4 && rows[2].uplink.is_none());
        let intervals: Vec<(f64, f64)> = rows.iter().filter_map(|r| r.uplink).collect();
        assert_eq!(intervals.len(), 3);
        assert!(intervals.windows(2).all(|w| w[0].1 <= w[1].0));
        let csv = transcript_to_csv(&rows);
        assert!(csv.lines().nth(3).unwrap().ends_with(",1"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn clean_channel_is_identity(bits in proptest::collection::vec(any::<bool>(), 1..2000usize), amp in 1e-6..1.0f64) {
                let frame = Frame::new(bits, DEFAULT_BITRATE).unwrap();
                let w = modulate_frame(&frame, DEFAULT_SUBCARRIER).unwrap();
                let got = ap_demodulate(&w, &BackscatterChannel { amplitude: amp, leakage: 3.0, band_noise: 0.0 }, &DemodConfig::default(), None).unwrap();
                prop_assert_eq!(got, frame.bits);
            }

            #[test]
            fn error_count_is_hamming(a in proptest::collection::vec(any::<bool>(), 64), flips in proptest::collection::btree_set(0usize..64, 0..10)) {
                let mut b = a.clone();
                for &i in &flips { b[i] = !b[i]; }
                prop_assert_eq!(hamming(&a, &b), flips.len());
            }
        }
    }
}
