#ifndef INSECTLOC_H
#define INSECTLOC_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Sensor channel of a logged record.
 */
typedef enum IlSensorKind {
  IL_SENSOR_KIND_HUMIDITY = 0,
  IL_SENSOR_KIND_TEMPERATURE = 1,
  IL_SENSOR_KIND_LIGHT = 2,
} IlSensorKind;

/**
 * Result code of every fallible call.
 */
typedef enum IlStatus {
  IL_STATUS_OK = 0,
  IL_STATUS_NULL_POINTER = 1,
  IL_STATUS_INVALID_ARGUMENT = 2,
  IL_STATUS_PARSE = 3,
  IL_STATUS_GEOMETRY = 4,
  IL_STATUS_DOMAIN = 5,
  IL_STATUS_IO = 6,
  IL_STATUS_STORE_FULL = 7,
  IL_STATUS_BUFFER_TOO_SMALL = 8,
  IL_STATUS_PANIC = 9,
} IlStatus;

/**
 * Sweep mode selector for [`il_receiver_new`] and [`il_experiment_run`].
 */
typedef enum IlSweepMode {
  IL_SWEEP_MODE_STEERING = 0,
  IL_SWEEP_MODE_UNIFORM_THETA = 1,
} IlSweepMode;

typedef struct IlLogStore IlLogStore;

typedef struct IlReceiver IlReceiver;

typedef struct IlScenario IlScenario;

typedef struct IlTable IlTable;

/**
 * One receiver pass. Angles are radians, positions meters.
 */
typedef struct IlReceiverOutput {
  /**
   * Both preambles were found; the angle fields are valid.
   */
  bool found;
  double raw_angle_1;
  double raw_angle_2;
  double smoothed_angle_1;
  double smoothed_angle_2;
  /**
   * The bearing pair gave a 2D fix; `x` and `y` are valid.
   */
  bool has_fix;
  double x;
  double y;
  double timestamp;
} IlReceiverOutput;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null if none.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *il_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *il_version(void);

/**
 * The built-in two-AP farm layout.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for a handle.
 */
enum IlStatus il_scenario_farm(struct IlScenario **out);

/**
 * Parses and validates a scenario document.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be writable.
 */
enum IlStatus il_scenario_from_toml(const char *toml, struct IlScenario **out);

/**
 * Serializes a scenario back to TOML.
 *
 * # Safety
 * `scenario` must come from this library; `buf` must hold `capacity` bytes.
 */
enum IlStatus il_scenario_to_toml(const struct IlScenario *scenario,
                                  char *buf,
                                  size_t capacity,
                                  size_t *needed);

/**
 * Releases a scenario. Null is ignored.
 *
 * # Safety
 * `scenario` must be null or a live handle not freed before.
 */
void il_scenario_free(struct IlScenario *scenario);

/**
 * Runs a named experiment. `trials == 0` selects the experiment's default
 * trial count; `seed` overrides the scenario seed when `has_seed` is set;
 * `workers == 0` uses the global thread pool.
 *
 * # Safety
 * `scenario` must be a live handle, `name` a NUL-terminated string and
 * `out` writable.
 */
enum IlStatus il_experiment_run(const struct IlScenario *scenario,
                                const char *name,
                                uint64_t trials,
                                bool has_seed,
                                uint64_t seed,
                                enum IlSweepMode mode,
                                size_t workers,
                                struct IlTable **out);

/**
 * Number of data rows; 0 for a null handle.
 *
 * # Safety
 * `table` must be null or a live handle.
 */
size_t il_table_rows(const struct IlTable *table);

/**
 * Number of columns; 0 for a null handle.
 *
 * # Safety
 * `table` must be null or a live handle.
 */
size_t il_table_columns(const struct IlTable *table);

/**
 * Cell value at (`row`, `column`).
 *
 * # Safety
 * `table` must be a live handle and `out` writable.
 */
enum IlStatus il_table_value(const struct IlTable *table, size_t row, size_t column, double *out);

/**
 * Name of column `column`.
 *
 * # Safety
 * `table` must be a live handle; `buf` must hold `capacity` bytes.
 */
enum IlStatus il_table_column_name(const struct IlTable *table,
                                   size_t column,
                                   char *buf,
                                   size_t capacity,
                                   size_t *needed);

/**
 * The table as the CSV the `sim` tool writes, metadata included.
 *
 * # Safety
 * `table` must be a live handle; `buf` must hold `capacity` bytes.
 */
enum IlStatus il_table_to_csv(const struct IlTable *table,
                              char *buf,
                              size_t capacity,
                              size_t *needed);

/**
 * # Safety
 * `table` must be null or a live handle not freed before.
 */
void il_table_free(struct IlTable *table);

/**
 * Receiver for the scenario's two APs at its detector rate and smoothing.
 *
 * # Safety
 * `scenario` must be a live handle and `out` writable.
 */
enum IlStatus il_receiver_new(const struct IlScenario *scenario,
                              enum IlSweepMode mode,
                              struct IlReceiver **out);

/**
 * Processes one buffer of detector output volts sampled at `sample_rate`.
 * The buffer must span at least three sweep periods. Smoother state carries
 * over between calls.
 *
 * # Safety
 * `receiver` must be a live handle, `samples` must point to `len` values
 * and `out` must be writable.
 */
enum IlStatus il_receiver_process(struct IlReceiver *receiver,
                                  const double *samples,
                                  size_t len,
                                  double sample_rate,
                                  struct IlReceiverOutput *out);

/**
 * # Safety
 * `receiver` must be null or a live handle not freed before.
 */
void il_receiver_free(struct IlReceiver *receiver);

/**
 * Empty sensor log holding at most `capacity` bytes.
 *
 * # Safety
 * `out` must be writable.
 */
enum IlStatus il_log_new(size_t capacity, struct IlLogStore **out);

/**
 * Appends one record; `StoreFull` leaves the log unchanged.
 *
 * # Safety
 * `log` must be a live handle.
 */
enum IlStatus il_log_record(struct IlLogStore *log,
                            enum IlSensorKind kind,
                            uint16_t code,
                            uint8_t angle_1,
                            uint8_t angle_2);

/**
 * Bytes of record storage in use; 0 for a null handle.
 *
 * # Safety
 * `log` must be null or a live handle.
 */
size_t il_log_bytes_used(const struct IlLogStore *log);

/**
 * Serialized log (record count then packed records), as sent on the uplink.
 *
 * # Safety
 * `log` must be a live handle; `buf` must hold `capacity` bytes.
 */
enum IlStatus il_log_dump(const struct IlLogStore *log,
                          uint8_t *buf,
                          size_t capacity,
                          size_t *needed);

/**
 * # Safety
 * `log` must be null or a live handle not freed before.
 */
void il_log_free(struct IlLogStore *log);

/**
 * Average localization current of the scenario's power profile, mA.
 *
 * # Safety
 * `scenario` must be a live handle and `out` writable.
 */
enum IlStatus il_average_current_ma(const struct IlScenario *scenario, double *out);

/**
 * Battery life at the profile's average current, hours.
 *
 * # Safety
 * `scenario` must be a live handle and `out` writable.
 */
enum IlStatus il_battery_life_h(const struct IlScenario *scenario, double *out);

/**
 * RF recharge time, hours; infinity when the rectifier never turns on.
 *
 * # Safety
 * `scenario` must be a live handle and `out` writable.
 */
enum IlStatus il_rf_charge_time_h(const struct IlScenario *scenario, double *out);

/**
 * Harvested solar power at `lux`, microwatts.
 *
 * # Safety
 * `scenario` must be a live handle and `out` writable.
 */
enum IlStatus il_solar_power_uw(const struct IlScenario *scenario, double lux, double *out);

/**
 * Uplink airtime of `bits` payload bits at `bitrate`, seconds.
 *
 * # Safety
 * `out` must be writable.
 */
enum IlStatus il_payload_duration_s(size_t bits, double bitrate, double *out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* INSECTLOC_H */
