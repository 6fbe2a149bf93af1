//! C ABI over the `insectloc` simulator.
//!
//! Every object crosses the boundary as an opaque handle created by an
//! `il_*_new`-style function and released with the matching `il_*_free`.
//! Fallible calls return an [`IlStatus`]; on failure the message is kept per
//! thread and read back with [`il_last_error`].
//!
//! Text outputs use a caller buffer: the call always stores the required
//! size (including the terminating NUL) in `needed` and returns
//! `BufferTooSmall` when `capacity` is less than that.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use insectloc::experiment::{run_experiment, ExperimentName, ExperimentSpec, ResultTable};
use insectloc::power::{average_current, battery_life, rf_charge_time, solar_power};
use insectloc::receiver::{EnvelopeTrace, LogStore, Receiver, SensorKind, SensorRecord};
use insectloc::scenario::{load_scenario, Scenario, SweepMode};
use insectloc::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Geometry = 4,
    Domain = 5,
    Io = 6,
    StoreFull = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Sweep mode selector for [`il_receiver_new`] and [`il_experiment_run`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IlSweepMode {
    Steering = 0,
    UniformTheta = 1,
}

impl From<IlSweepMode> for SweepMode {
    fn from(m: IlSweepMode) -> Self {
        match m {
            IlSweepMode::Steering => SweepMode::Steering,
            IlSweepMode::UniformTheta => SweepMode::UniformTheta,
        }
    }
}

/// Sensor channel of a logged record.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IlSensorKind {
    Humidity = 0,
    Temperature = 1,
    Light = 2,
}

impl From<IlSensorKind> for SensorKind {
    fn from(k: IlSensorKind) -> Self {
        match k {
            IlSensorKind::Humidity => SensorKind::Humidity,
            IlSensorKind::Temperature => SensorKind::Temperature,
            IlSensorKind::Light => SensorKind::Light,
        }
    }
}

/// One receiver pass. Angles are radians, positions meters.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IlReceiverOutput {
    /// Both preambles were found; the angle fields are valid.
    pub found: bool,
    pub raw_angle_1: f64,
    pub raw_angle_2: f64,
    pub smoothed_angle_1: f64,
    pub smoothed_angle_2: f64,
    /// The bearing pair gave a 2D fix; `x` and `y` are valid.
    pub has_fix: bool,
    pub x: f64,
    pub y: f64,
    pub timestamp: f64,
}

pub struct IlScenario(Scenario);
pub struct IlTable(ResultTable);
pub struct IlReceiver(Receiver);
pub struct IlLogStore(LogStore);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: &str) {
    let text = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(text));
}

fn status_of(e: &Error) -> IlStatus {
    match e {
        Error::Parse { .. } | Error::Malformed(_) => IlStatus::Parse,
        Error::Validation { .. } | Error::InvalidPreamble(_) | Error::MismatchedPeriods(..) | Error::UnknownExperiment(_) => {
            IlStatus::InvalidArgument
        }
        Error::DegenerateGeometry(_) | Error::OutOfSector { .. } | Error::LowConfidence { .. } => IlStatus::Geometry,
        Error::Domain(_) | Error::TrajectoryRange { .. } | Error::WindowTruncated { .. } => IlStatus::Domain,
        Error::StoreFull { .. } => IlStatus::StoreFull,
        Error::Io(_) => IlStatus::Io,
    }
}

struct Failure(IlStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(IlStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> IlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IlStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(&message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal panic: {message}"));
            IlStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn borrow_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(IlStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn store<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn write_bytes(data: &[u8], buf: *mut u8, capacity: usize, needed: *mut usize, nul: bool) -> Result<(), Failure> {
    let size = data.len() + usize::from(nul);
    store(needed, size, "needed")?;
    if capacity < size {
        return Err(Failure(IlStatus::BufferTooSmall, format!("buffer holds {capacity} bytes, {size} needed")));
    }
    if buf.is_null() {
        return Err(null("buf"));
    }
    ptr::copy_nonoverlapping(data.as_ptr(), buf, data.len());
    if nul {
        *buf.add(data.len()) = 0;
    }
    Ok(())
}

unsafe fn write_text(s: &str, buf: *mut c_char, capacity: usize, needed: *mut usize) -> Result<(), Failure> {
    write_bytes(s.as_bytes(), buf.cast(), capacity, needed, true)
}

/// Message of the last failed call on this thread, or null if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn il_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn il_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// The built-in two-AP farm layout.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn il_scenario_farm(out: *mut *mut IlScenario) -> IlStatus {
    guard(|| store(out, Box::into_raw(Box::new(IlScenario(Scenario::farm()))), "out"))
}

/// Parses and validates a scenario document.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn il_scenario_from_toml(toml: *const c_char, out: *mut *mut IlScenario) -> IlStatus {
    guard(|| {
        let scenario = load_scenario(text(toml, "toml")?)?;
        store(out, Box::into_raw(Box::new(IlScenario(scenario))), "out")
    })
}

/// Serializes a scenario back to TOML.
///
/// # Safety
/// `scenario` must come from this library; `buf` must hold `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn il_scenario_to_toml(
    scenario: *const IlScenario,
    buf: *mut c_char,
    capacity: usize,
    needed: *mut usize,
) -> IlStatus {
    guard(|| write_text(&borrow(scenario, "scenario")?.0.to_toml(), buf, capacity, needed))
}

/// Releases a scenario. Null is ignored.
///
/// # Safety
/// `scenario` must be null or a live handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn il_scenario_free(scenario: *mut IlScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Runs a named experiment. `trials == 0` selects the experiment's default
/// trial count; `seed` overrides the scenario seed when `has_seed` is set;
/// `workers == 0` uses the global thread pool.
///
/// # Safety
/// `scenario` must be a live handle, `name` a NUL-terminated string and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn il_experiment_run(
    scenario: *const IlScenario,
    name: *const c_char,
    trials: u64,
    has_seed: bool,
    seed: u64,
    mode: IlSweepMode,
    workers: usize,
    out: *mut *mut IlTable,
) -> IlStatus {
    guard(|| {
        let scenario = borrow(scenario, "scenario")?;
        let name: ExperimentName = text(name, "name")?.parse()?;
        let trials = if trials == 0 { name.default_trials() } else { trials };
        let mut spec = ExperimentSpec::new(name, scenario.0.clone(), trials);
        if has_seed {
            spec.seed = seed;
        }
        spec.mode = mode.into();
        spec.workers = (workers > 0).then_some(workers);
        let table = run_experiment(&spec)?;
        store(out, Box::into_raw(Box::new(IlTable(table))), "out")
    })
}

/// Number of data rows; 0 for a null handle.
///
/// # Safety
/// `table` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn il_table_rows(table: *const IlTable) -> usize {
    table.as_ref().map_or(0, |t| t.0.rows.len())
}

/// Number of columns; 0 for a null handle.
///
/// # Safety
/// `table` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn il_table_columns(table: *const IlTable) -> usize {
    table.as_ref().map_or(0, |t| t.0.columns.len())
}

/// Cell value at (`row`, `column`).
///
/// # Safety
/// `table` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn il_table_value(table: *const IlTable, row: usize, column: usize, out: *mut f64) -> IlStatus {
    guard(|| {
        let t = &borrow(table, "table")?.0;
        let value = t.rows.get(row).and_then(|r| r.get(column)).copied().ok_or_else(|| {
            Failure(
                IlStatus::InvalidArgument,
                format!("cell ({row}, {column}) outside {}x{} table", t.rows.len(), t.columns.len()),
            )
        })?;
        store(out, value, "out")
    })
}

/// Name of column `column`.
///
/// # Safety
/// `table` must be a live handle; `buf` must hold `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn il_table_column_name(
    table: *const IlTable,
    column: usize,
    buf: *mut c_char,
    capacity: usize,
    needed: *mut usize,
) -> IlStatus {
    guard(|| {
        let t = &borrow(table, "table")?.0;
        let name = t
            .columns
            .get(column)
            .ok_or_else(|| Failure(IlStatus::InvalidArgument, format!("column {column} outside table")))?;
        write_text(name, buf, capacity, needed)
    })
}

/// The table as the CSV the `sim` tool writes, metadata included.
///
/// # Safety
/// `table` must be a live handle; `buf` must hold `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn il_table_to_csv(table: *const IlTable, buf: *mut c_char, capacity: usize, needed: *mut usize) -> IlStatus {
    guard(|| write_text(&borrow(table, "table")?.0.to_csv(), buf, capacity, needed))
}

/// # Safety
/// `table` must be null or a live handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn il_table_free(table: *mut IlTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Receiver for the scenario's two APs at its detector rate and smoothing.
///
/// # Safety
/// `scenario` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn il_receiver_new(scenario: *const IlScenario, mode: IlSweepMode, out: *mut *mut IlReceiver) -> IlStatus {
    guard(|| {
        let s = &borrow(scenario, "scenario")?.0;
        if s.aps.len() != 2 {
            return Err(Failure(IlStatus::InvalidArgument, "receiver needs exactly two APs".into()));
        }
        let rx = Receiver::new(&s.aps[0], &s.aps[1], s.detector.sample_rate, mode.into(), s.smoothing)?;
        store(out, Box::into_raw(Box::new(IlReceiver(rx))), "out")
    })
}

/// Processes one buffer of detector output volts sampled at `sample_rate`.
/// The buffer must span at least three sweep periods. Smoother state carries
/// over between calls.
///
/// # Safety
/// `receiver` must be a live handle, `samples` must point to `len` values
/// and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn il_receiver_process(
    receiver: *mut IlReceiver,
    samples: *const f64,
    len: usize,
    sample_rate: f64,
    out: *mut IlReceiverOutput,
) -> IlStatus {
    guard(|| {
        let rx = &mut borrow_mut(receiver, "receiver")?.0;
        if samples.is_null() && len > 0 {
            return Err(null("samples"));
        }
        if sample_rate != rx.timings[0].sample_rate {
            return Err(Failure(
                IlStatus::InvalidArgument,
                format!("sample rate {sample_rate} Hz differs from the receiver's {} Hz", rx.timings[0].sample_rate),
            ));
        }
        let data = if len == 0 { Vec::new() } else { std::slice::from_raw_parts(samples, len).to_vec() };
        let trace = EnvelopeTrace::from_samples(sample_rate, data);
        let mut result = IlReceiverOutput::default();
        if let Some(o) = rx.process(&trace)? {
            result.found = true;
            result.raw_angle_1 = o.estimates[0].raw_angle;
            result.raw_angle_2 = o.estimates[1].raw_angle;
            result.smoothed_angle_1 = o.estimates[0].smoothed_angle;
            result.smoothed_angle_2 = o.estimates[1].smoothed_angle;
            result.timestamp = o.estimates[1].timestamp;
            if let Ok(fix) = o.fix {
                result.has_fix = true;
                result.x = fix.position.x;
                result.y = fix.position.y;
                result.timestamp = fix.timestamp;
            }
        }
        store(out, result, "out")
    })
}

/// # Safety
/// `receiver` must be null or a live handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn il_receiver_free(receiver: *mut IlReceiver) {
    if !receiver.is_null() {
        drop(Box::from_raw(receiver));
    }
}

/// Empty sensor log holding at most `capacity` bytes.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn il_log_new(capacity: usize, out: *mut *mut IlLogStore) -> IlStatus {
    guard(|| store(out, Box::into_raw(Box::new(IlLogStore(LogStore::new(capacity)))), "out"))
}

/// Appends one record; `StoreFull` leaves the log unchanged.
///
/// # Safety
/// `log` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn il_log_record(log: *mut IlLogStore, kind: IlSensorKind, code: u16, angle_1: u8, angle_2: u8) -> IlStatus {
    guard(|| {
        let log = &mut borrow_mut(log, "log")?.0;
        log.log_record(SensorRecord::new(kind.into(), code, angle_1, angle_2)?)?;
        Ok(())
    })
}

/// Bytes of record storage in use; 0 for a null handle.
///
/// # Safety
/// `log` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn il_log_bytes_used(log: *const IlLogStore) -> usize {
    log.as_ref().map_or(0, |l| l.0.bytes_used())
}

/// Serialized log (record count then packed records), as sent on the uplink.
///
/// # Safety
/// `log` must be a live handle; `buf` must hold `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn il_log_dump(log: *const IlLogStore, buf: *mut u8, capacity: usize, needed: *mut usize) -> IlStatus {
    guard(|| write_bytes(&borrow(log, "log")?.0.dump(), buf, capacity, needed, false))
}

/// # Safety
/// `log` must be null or a live handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn il_log_free(log: *mut IlLogStore) {
    if !log.is_null() {
        drop(Box::from_raw(log));
    }
}

/// Average localization current of the scenario's power profile, mA.
///
/// # Safety
/// `scenario` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn il_average_current_ma(scenario: *const IlScenario, out: *mut f64) -> IlStatus {
    guard(|| store(out, average_current(&borrow(scenario, "scenario")?.0.power), "out"))
}

/// Battery life at the profile's average current, hours.
///
/// # Safety
/// `scenario` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn il_battery_life_h(scenario: *const IlScenario, out: *mut f64) -> IlStatus {
    guard(|| {
        let s = &borrow(scenario, "scenario")?.0;
        store(out, battery_life(&s.battery, average_current(&s.power))?, "out")
    })
}

/// RF recharge time, hours; infinity when the rectifier never turns on.
///
/// # Safety
/// `scenario` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn il_rf_charge_time_h(scenario: *const IlScenario, out: *mut f64) -> IlStatus {
    guard(|| {
        let s = &borrow(scenario, "scenario")?.0;
        let hours = rf_charge_time(&s.harvest, &s.battery).hours().unwrap_or(f64::INFINITY);
        store(out, hours, "out")
    })
}

/// Harvested solar power at `lux`, microwatts.
///
/// # Safety
/// `scenario` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn il_solar_power_uw(scenario: *const IlScenario, lux: f64, out: *mut f64) -> IlStatus {
    guard(|| store(out, solar_power(&borrow(scenario, "scenario")?.0.harvest, lux)?, "out"))
}

/// Uplink airtime of `bits` payload bits at `bitrate`, seconds.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn il_payload_duration_s(bits: usize, bitrate: f64, out: *mut f64) -> IlStatus {
    guard(|| store(out, insectloc::backscatter::payload_duration_bits(bits, bitrate)?, "out"))
}
