#ifndef MARKETSIM_H
#define MARKETSIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum MsStatus {
  MS_STATUS_OK = 0,
  MS_STATUS_NULL_POINTER = 1,
  MS_STATUS_INVALID_ARGUMENT = 2,
  MS_STATUS_NOT_FOUND = 3,
  MS_STATUS_BUFFER_TOO_SMALL = 4,
  MS_STATUS_CONFIG = 5,
  MS_STATUS_RUN_FAILED = 6,
  MS_STATUS_IO = 7,
  MS_STATUS_PANIC = 8,
} MsStatus;

/**
 * Opaque single-symbol order book.
 */
typedef struct MsBook MsBook;

/**
 * Opaque completed simulation.
 */
typedef struct MsRun MsRun;

/**
 * One fill, as reported by [`ms_book_execution`].
 */
typedef struct MsExecution {
  uint64_t resting_order_id;
  uint64_t incoming_order_id;
  uint32_t resting_agent;
  uint32_t incoming_agent;
  bool incoming_is_buy;
  int64_t quantity;
  int64_t price;
  int64_t time_ns;
} MsExecution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's most recent error message.
 */
enum MsStatus ms_last_error(char *buf, size_t capacity, size_t *out_len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ms_version(void);

uint64_t ms_agent_seed(uint64_t master_seed, uint32_t agent);

uint64_t ms_jitter_seed(uint64_t master_seed, uint32_t from, uint32_t to);

enum MsStatus ms_oracle_seed(uint64_t master_seed, const char *symbol, uint64_t *out_seed);

enum MsStatus ms_book_new(const char *symbol, int64_t open_price, struct MsBook **out_book);

void ms_book_free(struct MsBook *book);

/**
 * Matches a limit order. `out_filled` and `out_rested` receive the executed and resting
 * quantities; the fills themselves are available through [`ms_book_execution`].
 */
enum MsStatus ms_book_submit(struct MsBook *book,
                             uint64_t order_id,
                             uint32_t agent,
                             bool is_buy,
                             int64_t quantity,
                             int64_t limit_price,
                             int64_t time_ns,
                             int64_t *out_filled,
                             int64_t *out_rested);

/**
 * Number of fills produced by the most recent submit.
 */
enum MsStatus ms_book_execution_count(const struct MsBook *book, size_t *out_count);

enum MsStatus ms_book_execution(const struct MsBook *book,
                                size_t index,
                                struct MsExecution *out_execution);

/**
 * Removes a resting order; `NotFound` if it is not in the book.
 */
enum MsStatus ms_book_cancel(struct MsBook *book, uint64_t order_id, int64_t *out_quantity);

enum MsStatus ms_book_last_trade(const struct MsBook *book, int64_t *out_price);

/**
 * Best bid, or `NotFound` when the bid side is empty.
 */
enum MsStatus ms_book_best_bid(const struct MsBook *book, int64_t *out_price);

/**
 * Best ask, or `NotFound` when the ask side is empty.
 */
enum MsStatus ms_book_best_ask(const struct MsBook *book, int64_t *out_price);

/**
 * Loads a TOML configuration, applies `override_count` `path=value` overrides and runs it
 * in memory.
 */
enum MsStatus ms_run_config(const char *config_path,
                            const char *const *overrides,
                            size_t override_count,
                            struct MsRun **out_run);

void ms_run_free(struct MsRun *run);

/**
 * Writes every artifact and the manifest into `dir`, creating it if needed.
 */
enum MsStatus ms_run_write(const struct MsRun *run, const char *dir);

enum MsStatus ms_run_manifest_json(const struct MsRun *run,
                                   char *buf,
                                   size_t capacity,
                                   size_t *out_len);

/**
 * Trades printed by the run's exchange.
 */
enum MsStatus ms_run_trade_count(const struct MsRun *run, size_t *out_count);

/**
 * Decodes one wire-format line and checks it. Problems, one per line, go to `buf`;
 * an empty result means the record is valid.
 */
enum MsStatus ms_record_validate(const char *line, char *buf, size_t capacity, size_t *out_len);

/**
 * Re-encodes a wire-format line in canonical form.
 */
enum MsStatus ms_record_canonical(const char *line, char *buf, size_t capacity, size_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MARKETSIM_H */
