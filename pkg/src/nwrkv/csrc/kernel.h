#ifndef NWRKV_KERNEL_H
#define NWRKV_KERNEL_H

#include <stdint.h>

#define NWR_SLOTS 8
#define NWR_SLOT_MAX 15
#define NWR_VALUE_MAX 64
#define NWR_MAX_OPS 64

enum { NWR_OK = 0, NWR_ST = 1, NWR_CYCLIC = 2 };

enum {
    FB_ST = 0,
    FB_GUARD,
    FB_READ_SET,
    FB_SUCCESSORS,
    FB_CAS,
    FB_COUNT
};

enum {
    PH_INDEX = 0,
    PH_VALIDATION,
    PH_NWR,
    PH_LOCKWAIT,
    PH_LOGGING,
    PH_OTHER,
    PH_COUNT
};

/* trace events, appended under one mutex in wall-clock order */
enum { EV_BEGIN = 0, EV_READ, EV_INSTALL, EV_OMIT, EV_ABORT, EV_COMMIT, EV_EPOCH };

typedef struct nwr_event {
    uint64_t txn, key;
    uint64_t a;           /* READ: writer, OMIT: pivot writer, COMMIT: order stamp */
    uint32_t kind, epoch; /* BEGIN/COMMIT/EPOCH epoch; COMMIT flag rides in key */
} nwr_event;

typedef struct {
    int nwr;              /* 0 = silo, 1 = silo-nwr */
    int threads;
    double duration_s;    /* ignored when txns_per_thread > 0 */
    long txns_per_thread;
    double epoch_ms;
    uint64_t records;
    int ops_per_txn;
    int mix_read, mix_blind, mix_rmw;
    double theta;
    int value_size;
    uint64_t seed;
    int nwr_retries;
    int sample_every;     /* breakdown sampling period, power of two */
    struct nwr_event *trace; /* optional event buffer for offline checking */
    long trace_cap;
} nwr_params;

typedef struct {
    uint64_t committed_baseline;
    uint64_t committed_nwr;
    uint64_t aborted;
    uint64_t nwr_attempts;
    uint64_t fallbacks[FB_COUNT];
    uint64_t ticks[PH_COUNT];
    uint64_t sampled;
    uint64_t log_entries;
    double elapsed_s;
    uint32_t epochs;
    long trace_len;       /* -1 when the buffer overflowed */
} nwr_result;

/* pivot kernels, mirrored by nwrkv.pivot */
unsigned nwr_slot_of(uint64_t key);
uint32_t nwr_merge_slot(uint32_t lane, unsigned k, unsigned vn);
int nwr_validate(const uint32_t *obj_words, int n_obj,
                 const uint64_t *read_keys, const uint32_t *read_vn, int n_reads,
                 const uint64_t *write_keys, const uint32_t *write_vn, int n_writes,
                 uint32_t epoch);
void nwr_merge_footprint(uint32_t *word,
                         const uint64_t *read_keys, const uint32_t *read_vn, int n_reads,
                         const uint64_t *write_keys, const uint32_t *write_vn, int n_writes);

int nwr_run(const nwr_params *p, nwr_result *out);

/* histogram of the first `top` ranks (0-based) over `draws` samples of the
 * benchmark's key generator, seeded like worker 0 */
void nwr_zipf_counts(uint64_t n, double theta, uint64_t seed, uint64_t draws, uint64_t *counts, uint64_t top);

#endif
