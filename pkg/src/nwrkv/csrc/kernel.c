/* Benchmark core: Silo OCC and the write-omission extension over a fixed table.
 *
 * Runs the same protocol as nwrkv/engine.py, minus inserts.  Instead of a
 * recorded history it can emit an event trace that nwrkv.replay turns into one.  Pivot objects are 16-byte words read and published with
 * cmpxchg16b; publication of a multi-object update happens under striped
 * spinlocks so that it is all-or-nothing.
 */
#define _GNU_SOURCE
#include "kernel.h"

#include <math.h>
#include <pthread.h>
#include <sched.h>
#include <stddef.h>
#include <stdatomic.h>
#include <stdlib.h>
#include <string.h>
#include <time.h>
#include <x86intrin.h>

typedef unsigned __int128 u128;

#define GOLDEN 0x9E3779B97F4A7C15ull
#define STRIPES 1024
#define EPOCH_SHIFT 40
#define LOG_CAP 4096

/* ---- pivot kernels ---- */

unsigned nwr_slot_of(uint64_t key) { return (unsigned)((key * GOLDEN) >> 61); }

static inline unsigned get_slot(uint32_t lane, unsigned k) { return (lane >> (4 * k)) & 15u; }

uint32_t nwr_merge_slot(uint32_t lane, unsigned k, unsigned vn)
{
    if (vn > NWR_SLOT_MAX)
        vn = NWR_SLOT_MAX;
    unsigned cur = get_slot(lane, k);
    if (cur == 0 || vn < cur)
        lane = (lane & ~(15u << (4 * k))) | (vn << (4 * k));
    return lane;
}

static inline uint32_t lane_of(u128 w, int i) { return (uint32_t)(w >> (32 * i)); }

static inline u128 pack(uint32_t e, uint32_t pv, uint32_t mrs, uint32_t mws)
{
    return (u128)e | ((u128)pv << 32) | ((u128)mrs << 64) | ((u128)mws << 96);
}

static int validate_words(const uint32_t *obj, int n_obj,
                          const uint64_t *rk, const uint32_t *rv, int nr,
                          const uint64_t *wk, const uint32_t *wv, int nw, uint32_t epoch)
{
    for (int i = 0; i < n_obj; i++) {
        const uint32_t *o = obj + 4 * i;
        if (o[0] != epoch)
            return NWR_ST;
        for (int r = 0; r < nr; r++) {
            unsigned ym = get_slot(o[3], nwr_slot_of(rk[r]));
            unsigned zn = rv[r];
            if (ym && zn && (ym <= zn || zn >= NWR_SLOT_MAX))
                return NWR_CYCLIC;
        }
        for (int w = 0; w < nw; w++) {
            unsigned yg = get_slot(o[2], nwr_slot_of(wk[w]));
            unsigned zj = wv[w];
            if (yg && (yg < zj || zj >= NWR_SLOT_MAX))
                return NWR_CYCLIC;
        }
    }
    return NWR_OK;
}

int nwr_validate(const uint32_t *obj_words, int n_obj,
                 const uint64_t *read_keys, const uint32_t *read_vn, int n_reads,
                 const uint64_t *write_keys, const uint32_t *write_vn, int n_writes,
                 uint32_t epoch)
{
    return validate_words(obj_words, n_obj, read_keys, read_vn, n_reads,
                          write_keys, write_vn, n_writes, epoch);
}

void nwr_merge_footprint(uint32_t *o,
                         const uint64_t *rk, const uint32_t *rv, int nr,
                         const uint64_t *wk, const uint32_t *wv, int nw)
{
    for (int r = 0; r < nr; r++)
        o[2] = nwr_merge_slot(o[2], nwr_slot_of(rk[r]), rv[r] ? rv[r] : 1);
    for (int w = 0; w < nw; w++)
        o[3] = nwr_merge_slot(o[3], nwr_slot_of(wk[w]), wv[w] ? wv[w] : 1);
}

/* slot-wise min of two lanes with 0 as empty; merging is associative, so a
 * txn folds its footprint into two lanes once and merges those per object */
static inline uint32_t lane_min(uint32_t a, uint32_t b)
{
    uint32_t out = 0;
    for (unsigned k = 0; k < NWR_SLOTS; k++) {
        unsigned x = get_slot(a, k), y = get_slot(b, k);
        out |= (x == 0 || (y != 0 && y < x) ? y : x) << (4 * k);
    }
    return out;
}

static inline u128 merge_fp_word(u128 w, const uint64_t *rk, const uint32_t *rv, int nr,
                                 const uint64_t *wk, const uint32_t *wv, int nw)
{
    uint32_t o[4] = {lane_of(w, 0), lane_of(w, 1), lane_of(w, 2), lane_of(w, 3)};
    nwr_merge_footprint(o, rk, rv, nr, wk, wv, nw);
    return pack(o[0], o[1], o[2], o[3]);
}

static inline u128 merge_lanes(u128 w, uint32_t fr, uint32_t fw)
{
    return pack(lane_of(w, 0), lane_of(w, 1), lane_min(lane_of(w, 2), fr), lane_min(lane_of(w, 3), fw));
}

static inline u128 load128(u128 *p) { return __sync_val_compare_and_swap(p, (u128)0, (u128)0); }

/* all pivot writers hold the stripe lock, so inside it a plain load is exact
 * and one compare-and-swap publishes the new word for lock-free readers */
static inline u128 locked_load(u128 *p) { return *(volatile u128 *)p; }

static inline void locked_publish(u128 *p, u128 cur, u128 v)
{
    if (v != cur)
        __sync_bool_compare_and_swap(p, cur, v);
}

/* ---- storage ---- */

/* 64-byte aligned.  Line 0 holds every field either protocol touches plus the
 * first 8 value bytes, so a commit with short values touches one line per
 * record.  The pivot metadata has no epoch of its own: it is written and read
 * under the stripe lock together with the pivot word, whose epoch lane dates
 * it.  ``guard`` is the max of the predecessor's install stamp and the stamps
 * of its registered readers; an omission only ever compares the max. */
typedef struct {
    _Atomic uint64_t tid; /* epoch:32 | vn:31 | lock:1 */
    uint64_t install_ts;
    u128 pivot __attribute__((aligned(16)));
    _Atomic uint64_t last_read_ts;
    uint64_t pivot_ts, guard;
    unsigned char value[NWR_VALUE_MAX];
    uint64_t writer, pivot_writer; /* txn ids, only kept when tracing */
} __attribute__((aligned(64))) record_t;
_Static_assert(offsetof(record_t, value) == 56, "record layout");

static inline uint32_t peek_epoch(const record_t *r)
{
    /* the low lane is the epoch; an aligned 4-byte load of it is atomic */
    return __atomic_load_n((const uint32_t *)&r->pivot, __ATOMIC_RELAXED);
}

typedef struct {
    const nwr_params *p;
    record_t *recs;
    atomic_flag stripes[STRIPES];
    _Atomic uint64_t clock; /* epoch << 40 | counter; one word so stamps and epochs agree */
    _Atomic int stop;
    _Atomic int go;
    _Atomic uint32_t measure_epoch;
    pthread_mutex_t tmu;
    long trace_n;
} world_t;

static inline uint32_t clock_epoch(uint64_t c) { return (uint32_t)(c >> EPOCH_SHIFT); }
static inline uint64_t stamp(world_t *w) { return atomic_fetch_add(&w->clock, 1) + 1; }
static inline uint32_t tid_epoch(uint64_t t) { return (uint32_t)(t >> 32); }
static inline uint32_t tid_vn(uint64_t t) { return (uint32_t)((t >> 1) & 0x7FFFFFFFu); }
static inline uint64_t make_tid(uint32_t e, uint32_t vn) { return ((uint64_t)e << 32) | ((uint64_t)vn << 1); }

/* spin briefly, then yield so a preempted holder can run on small machines */
static inline void backoff(unsigned *spins)
{
    if (++*spins < 64)
        _mm_pause();
    else
        sched_yield();
}

static inline void stripe_lock(world_t *w, unsigned s)
{
    unsigned spins = 0;
    while (atomic_flag_test_and_set_explicit(&w->stripes[s], memory_order_acquire))
        backoff(&spins);
}

static inline void stripe_unlock(world_t *w, unsigned s)
{
    atomic_flag_clear_explicit(&w->stripes[s], memory_order_release);
}

static inline unsigned stripe_of(uint64_t key) { return (unsigned)(key & (STRIPES - 1)); }

static void trace_locked(world_t *w, uint32_t kind, uint64_t txn, uint64_t key, uint64_t a, uint32_t epoch)
{
    if (w->trace_n < w->p->trace_cap)
        w->p->trace[w->trace_n] = (nwr_event){txn, key, a, kind, epoch};
    w->trace_n++;
}

static inline void trace(world_t *w, uint32_t kind, uint64_t txn, uint64_t key, uint64_t a, uint32_t epoch)
{
    if (!w->p->trace)
        return;
    pthread_mutex_lock(&w->tmu);
    trace_locked(w, kind, txn, key, a, epoch);
    pthread_mutex_unlock(&w->tmu);
}

/* ---- per-worker generator ---- */

static inline uint64_t splitmix64(uint64_t *s)
{
    uint64_t z = (*s += GOLDEN);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

static inline uint64_t mix1(uint64_t x)
{
    uint64_t s = x;
    return splitmix64(&s);
}

static inline double uniform01(uint64_t *s) { return (splitmix64(s) >> 11) * 0x1.0p-53; }

typedef struct {
    double theta, h_x1, h_n, s;
    uint64_t n;
} zipf_t;

static double helper1(double x) { return fabs(x) > 1e-8 ? log1p(x) / x : 1.0 - x * (0.5 - x * (1.0 / 3.0 - 0.25 * x)); }
static double helper2(double x) { return fabs(x) > 1e-8 ? expm1(x) / x : 1.0 + x * 0.5 * (1.0 + x * (1.0 / 3.0) * (1.0 + 0.25 * x)); }
static double zh(const zipf_t *z, double x) { return exp(-z->theta * log(x)); }
static double zh_int(const zipf_t *z, double x)
{
    double lx = log(x);
    return helper2((1.0 - z->theta) * lx) * lx;
}
static double zh_inv(const zipf_t *z, double x)
{
    double t = x * (1.0 - z->theta);
    if (t < -1.0)
        t = -1.0;
    return exp(helper1(t) * x);
}

static void zipf_init(zipf_t *z, uint64_t n, double theta)
{
    z->n = n;
    z->theta = theta;
    z->h_x1 = zh_int(z, 1.5) - 1.0;
    z->h_n = zh_int(z, (double)n + 0.5);
    z->s = 2.0 - zh_inv(z, zh_int(z, 2.5) - zh(z, 2.0));
}

static uint64_t zipf_next(const zipf_t *z, uint64_t *rng)
{
    for (;;) {
        double u = z->h_n + uniform01(rng) * (z->h_x1 - z->h_n);
        double x = zh_inv(z, u);
        double kf = floor(x + 0.5);
        uint64_t k = kf < 1.0 ? 1 : (kf > (double)z->n ? z->n : (uint64_t)kf);
        if ((double)k - x <= z->s || u >= zh_int(z, (double)k + 0.5) - zh(z, (double)k))
            return k - 1;
    }
}

/* ---- transactions ---- */

enum { OP_READ = 0, OP_WRITE = 1 };

typedef struct {
    uint64_t key;
    uint64_t tid;
    uint64_t install_ts;
} rs_ent;

typedef struct {
    uint64_t key;
    unsigned char value[NWR_VALUE_MAX];
    int blind;
} ws_ent;

typedef struct {
    uint64_t epoch, txn, key;
} log_ent;

typedef struct {
    world_t *w;
    int id;
    uint64_t rng;
    zipf_t zipf;
    nwr_result res;
    log_ent *log;
    int log_n;
    uint64_t txn_seq;
    /* current txn */
    uint32_t begin_epoch, commit_epoch;
    uint64_t order_ts;
    rs_ent rs[NWR_MAX_OPS];
    int nrs;
    ws_ent ws[NWR_MAX_OPS];
    int nws;
    int sampling;
    uint64_t t_mark;
    uint64_t ph[PH_COUNT];
} worker_t;

static inline uint64_t txn_id(const worker_t *k) { return ((uint64_t)(k->id + 1) << 32) | k->txn_seq; }

/* tracing runs yield between operations so workers interleave inside transactions */
static inline void pace(const worker_t *k)
{
    if (k->w->p->trace)
        sched_yield();
}

static inline void tick(worker_t *k, int phase)
{
    if (!k->sampling)
        return;
    uint64_t now = __rdtsc();
    k->ph[phase] += now - k->t_mark;
    k->t_mark = now;
}

static int find_rs(worker_t *k, uint64_t key)
{
    for (int i = 0; i < k->nrs; i++)
        if (k->rs[i].key == key)
            return i;
    return -1;
}

static int find_ws(worker_t *k, uint64_t key)
{
    for (int i = 0; i < k->nws; i++)
        if (k->ws[i].key == key)
            return i;
    return -1;
}

static void do_read(worker_t *k, uint64_t key, unsigned char *out)
{
    int vs = k->w->p->value_size;
    int wi = find_ws(k, key);
    if (wi >= 0) {
        memcpy(out, k->ws[wi].value, vs);
        return;
    }
    record_t *r = &k->w->recs[key];
    if (find_rs(k, key) >= 0) {
        memcpy(out, r->value, vs);
        return;
    }
    uint64_t t1, t2, its, wr;
    unsigned spins = 0;
    for (;;) {
        t1 = atomic_load_explicit(&r->tid, memory_order_acquire);
        if (t1 & 1) {
            backoff(&spins);
            continue;
        }
        memcpy(out, r->value, vs);
        its = r->install_ts;
        wr = k->w->p->trace ? r->writer : 0;
        atomic_thread_fence(memory_order_acquire);
        t2 = atomic_load_explicit(&r->tid, memory_order_relaxed);
        if (t1 == t2)
            break;
    }
    rs_ent *e = &k->rs[k->nrs++];
    e->key = key;
    e->tid = t1;
    e->install_ts = its;
    trace(k->w, EV_READ, txn_id(k), key, wr, 0);
}

static void do_write(worker_t *k, uint64_t key)
{
    int vs = k->w->p->value_size;
    int wi = find_ws(k, key);
    ws_ent *e;
    if (wi >= 0) {
        e = &k->ws[wi];
    } else {
        e = &k->ws[k->nws++];
        e->key = key;
        e->blind = find_rs(k, key) < 0;
    }
    uint64_t v = splitmix64(&k->rng);
    for (int i = 0; i < vs; i++)
        e->value[i] = (unsigned char)(v >> (8 * (i & 7)));
}

/* reads of items the txn also writes are skipped: its own install becomes the
 * predecessor of any later pivot, and the guard already covers it */
static void register_reads(worker_t *k, uint64_t ts)
{
    for (int i = 0; i < k->nrs; i++) {
        if (find_ws(k, k->rs[i].key) >= 0)
            continue;
        _Atomic uint64_t *lr = &k->w->recs[k->rs[i].key].last_read_ts;
        uint64_t cur = atomic_load_explicit(lr, memory_order_relaxed);
        while (cur < ts && !atomic_compare_exchange_weak(lr, &cur, ts))
            ;
    }
}

static int reads_valid(worker_t *k)
{
    for (int i = 0; i < k->nrs; i++) {
        uint64_t cur = atomic_load_explicit(&k->w->recs[k->rs[i].key].tid, memory_order_acquire);
        if ((cur & ~1ull) != k->rs[i].tid)
            return 0;
        if ((cur & 1) && find_ws(k, k->rs[i].key) < 0)
            return 0;
    }
    return 1;
}

static inline uint32_t read_vn(uint64_t tid, uint32_t epoch)
{
    uint32_t e = tid_epoch(tid);
    if (e < epoch)
        return 0;
    if (e > epoch)
        return NWR_SLOT_MAX;
    return tid_vn(tid);
}

static int cmp_u64(const void *a, const void *b)
{
    uint64_t x = *(const uint64_t *)a, y = *(const uint64_t *)b;
    return (x > y) - (x < y);
}

static int cmp_ws(const void *a, const void *b)
{
    return cmp_u64(&((const ws_ent *)a)->key, &((const ws_ent *)b)->key);
}

/* returns -1 on success, else a fallback code */
static int try_omit(worker_t *k)
{
    world_t *w = k->w;
    /* early out on a stale pivot before paying for a stamp */
    uint32_t peek = clock_epoch(atomic_load_explicit(&w->clock, memory_order_relaxed));
    if (peek != k->begin_epoch)
        return FB_ST;
    for (int i = 0; i < k->nws; i++)
        if (peek_epoch(&w->recs[k->ws[i].key]) != peek)
            return FB_ST;
    uint32_t e = k->begin_epoch;
    int nw = k->nws, nr = k->nrs;
    uint32_t objs[4 * NWR_MAX_OPS];
    u128 snap_w[NWR_MAX_OPS];
    uint64_t place = UINT64_MAX, guard[NWR_MAX_OPS], pwr[NWR_MAX_OPS];
    for (int i = 0; i < nw; i++) {
        record_t *r = &w->recs[k->ws[i].key];
        unsigned s = stripe_of(k->ws[i].key);
        stripe_lock(w, s);
        u128 pw = locked_load(&r->pivot);
        uint64_t pts = r->pivot_ts;
        guard[i] = r->guard;
        pwr[i] = w->p->trace ? r->pivot_writer : 0;
        stripe_unlock(w, s);
        snap_w[i] = pw;
        if (lane_of(pw, 0) != e)
            return FB_ST;
        if (pts < place)
            place = pts;
        for (int j = 0; j < 4; j++)
            objs[4 * i + j] = lane_of(pw, j);
    }
    /* tj is placed just before the earliest pivot */
    for (int i = 0; i < nw; i++)
        if (guard[i] >= place)
            return FB_GUARD;
    for (int i = 0; i < nr; i++)
        if (k->rs[i].install_ts >= place)
            return FB_GUARD;
    /* the snapshot fields are fixed while the pivot stays in epoch e, and a
     * reset needs a later epoch, which the stamp's epoch rules out; the
     * locked re-check below catches one that lands after the stamp */
    uint64_t ts = stamp(w);
    if (clock_epoch(ts) != e)
        return FB_ST;
    register_reads(k, ts);
    if (!reads_valid(k))
        return FB_READ_SET;

    uint64_t rk[NWR_MAX_OPS], wk[NWR_MAX_OPS];
    uint32_t rv[NWR_MAX_OPS], wv[NWR_MAX_OPS];
    for (int i = 0; i < nr; i++) {
        rk[i] = k->rs[i].key;
        rv[i] = read_vn(k->rs[i].tid, e);
    }
    for (int i = 0; i < nw; i++) {
        wk[i] = k->ws[i].key;
        wv[i] = objs[4 * i + 1] - 1;
    }
    if (validate_words(objs, nw, rk, rv, nr, wk, wv, nw, e) != NWR_OK)
        return FB_SUCCESSORS;

    /* touched objects: written items, then read items */
    unsigned locks[2 * NWR_MAX_OPS];
    int nl = 0;
    for (int i = 0; i < nw; i++)
        locks[nl++] = stripe_of(wk[i]);
    for (int i = 0; i < nr; i++)
        locks[nl++] = stripe_of(rk[i]);
    /* insertion sort + dedup keeps the stripe order global */
    for (int i = 1; i < nl; i++) {
        unsigned v = locks[i];
        int j = i - 1;
        while (j >= 0 && locks[j] > v) {
            locks[j + 1] = locks[j];
            j--;
        }
        locks[j + 1] = v;
    }
    int nu = 0;
    for (int i = 0; i < nl; i++)
        if (nu == 0 || locks[nu - 1] != locks[i])
            locks[nu++] = locks[i];

    u128 snap_r[NWR_MAX_OPS];
    for (int i = 0; i < nr; i++)
        snap_r[i] = load128(&w->recs[rk[i]].pivot);

    for (int i = 0; i < nu; i++)
        stripe_lock(w, locks[i]);
    int ok = 1;
    for (int i = 0; i < nw && ok; i++)
        ok = locked_load(&w->recs[wk[i]].pivot) == snap_w[i];
    for (int i = 0; i < nr && ok; i++)
        ok = locked_load(&w->recs[rk[i]].pivot) == snap_r[i];
    if (ok) {
        /* reads merge into current-epoch read items, then every written item takes the footprint */
        for (int i = 0; i < nr; i++) {
            u128 *pp = &w->recs[rk[i]].pivot;
            u128 cur = locked_load(pp);
            if (lane_of(cur, 0) == e) {
                uint32_t one = rv[i] ? rv[i] : 1;
                locked_publish(pp, cur, merge_fp_word(cur, &rk[i], &one, 1, NULL, NULL, 0));
            }
        }
        for (int i = 0; i < nw; i++) {
            u128 *pp = &w->recs[wk[i]].pivot;
            u128 cur = locked_load(pp);
            locked_publish(pp, cur, merge_fp_word(cur, rk, rv, nr, wk, wv, nw));
            trace(w, EV_OMIT, txn_id(k), wk[i], pwr[i], 0);
        }
    }
    for (int i = nu - 1; i >= 0; i--)
        stripe_unlock(w, locks[i]);
    k->order_ts = place;
    k->commit_epoch = e;
    return ok ? -1 : FB_CAS;
}

static void log_append(worker_t *k, uint32_t epoch, uint64_t key)
{
    if (k->log_n == LOG_CAP) {
        /* the null sink: a full buffer is handed off and dropped */
        k->log_n = 0;
    }
    log_ent *l = &k->log[k->log_n++];
    l->epoch = epoch;
    l->txn = k->txn_seq;
    l->key = key;
    k->res.log_entries++;
}

/* A pivot only turns current through a reset by a record-lock holder that
 * stamps after our validation, and its guard covers our registered reads.
 * So a stale epoch seen here may be skipped without the stripe lock; the
 * common no-pivot case then costs one load per item. */
static void update_pivots(worker_t *k, uint32_t e, uint64_t ts, const uint32_t *new_vn)
{
    world_t *w = k->w;
    int nr = k->nrs, nw = k->nws;
    int work = 0;
    for (int i = 0; i < nw && !work; i++)
        work = k->ws[i].blind || peek_epoch(&w->recs[k->ws[i].key]) == e;
    for (int i = 0; i < nr && !work; i++)
        work = peek_epoch(&w->recs[k->rs[i].key]) == e;
    if (!work)
        return;
    uint64_t rk[NWR_MAX_OPS], wk[NWR_MAX_OPS];
    uint32_t rv[NWR_MAX_OPS], wv[NWR_MAX_OPS];
    for (int i = 0; i < nr; i++) {
        rk[i] = k->rs[i].key;
        rv[i] = read_vn(k->rs[i].tid, e);
    }
    for (int i = 0; i < nw; i++) {
        wk[i] = k->ws[i].key;
        wv[i] = new_vn[i];
    }
    uint32_t fp[4] = {0, 0, 0, 0};
    nwr_merge_footprint(fp, rk, rv, nr, wk, wv, nw);
    /* read-only items: merge the read into a current object */
    for (int i = 0; i < nr; i++) {
        if (find_ws(k, rk[i]) >= 0 || peek_epoch(&w->recs[rk[i]]) != e)
            continue;
        unsigned s = stripe_of(rk[i]);
        u128 *pp = &w->recs[rk[i]].pivot;
        stripe_lock(w, s);
        u128 cur = locked_load(pp);
        if (lane_of(cur, 0) == e) {
            uint32_t one = rv[i] ? rv[i] : 1;
            locked_publish(pp, cur, merge_fp_word(cur, &rk[i], &one, 1, NULL, NULL, 0));
        }
        stripe_unlock(w, s);
    }
    /* written items: reset on the first blind write of the epoch, else merge the
     * footprint (which covers a read of the same item) into a current object */
    for (int i = 0; i < nw; i++) {
        record_t *r = &w->recs[wk[i]];
        if (!k->ws[i].blind && peek_epoch(r) != e)
            continue;
        unsigned s = stripe_of(wk[i]);
        stripe_lock(w, s);
        u128 cur = locked_load(&r->pivot);
        if (k->ws[i].blind && lane_of(cur, 0) != e) {
            r->pivot_ts = ts;
            uint64_t lr = atomic_load(&r->last_read_ts);
            r->guard = lr > r->install_ts ? lr : r->install_ts;
            if (w->p->trace)
                r->pivot_writer = txn_id(k);
            locked_publish(&r->pivot, cur, pack(e, new_vn[i], fp[2], fp[3]));
        } else if (lane_of(cur, 0) == e) {
            locked_publish(&r->pivot, cur, merge_lanes(cur, fp[2], fp[3]));
        }
        stripe_unlock(w, s);
    }
}

/* 1 = committed, 0 = aborted */
static int commit_baseline(worker_t *k)
{
    world_t *w = k->w;
    int nw = k->nws;
    qsort(k->ws, nw, sizeof(ws_ent), cmp_ws);
    uint64_t before[NWR_MAX_OPS];
    for (int i = 0; i < nw; i++) {
        record_t *r = &w->recs[k->ws[i].key];
        unsigned spins = 0;
        for (;;) {
            uint64_t cur = atomic_load_explicit(&r->tid, memory_order_relaxed);
            if (!(cur & 1) && atomic_compare_exchange_weak(&r->tid, &cur, cur | 1)) {
                before[i] = cur;
                break;
            }
            backoff(&spins);
        }
    }
    tick(k, PH_LOCKWAIT);
    uint64_t ts = stamp(w);
    uint32_t e = clock_epoch(ts);
    k->order_ts = ts;
    k->commit_epoch = e;
    if (w->p->nwr)
        register_reads(k, ts);
    int valid = reads_valid(k);
    tick(k, PH_VALIDATION);
    if (!valid) {
        for (int i = 0; i < nw; i++)
            atomic_store_explicit(&w->recs[k->ws[i].key].tid, before[i], memory_order_release);
        return 0;
    }
    uint32_t new_vn[NWR_MAX_OPS];
    for (int i = 0; i < nw; i++)
        new_vn[i] = tid_epoch(before[i]) == e ? tid_vn(before[i]) + 1 : 1;
    if (w->p->nwr) {
        update_pivots(k, e, ts, new_vn);
        tick(k, PH_NWR);
    }
    int vs = w->p->value_size;
    for (int i = 0; i < nw; i++) {
        record_t *r = &w->recs[k->ws[i].key];
        memcpy(r->value, k->ws[i].value, vs);
        r->install_ts = ts;
        if (w->p->trace)
            r->writer = txn_id(k);
        trace(w, EV_INSTALL, txn_id(k), k->ws[i].key, 0, 0);
        atomic_store_explicit(&r->tid, make_tid(e, new_vn[i]), memory_order_release);
    }
    tick(k, PH_OTHER);
    for (int i = 0; i < nw; i++)
        log_append(k, e, k->ws[i].key);
    tick(k, PH_LOGGING);
    return 1;
}

static void run_txn(worker_t *k, const int *kinds, const uint64_t *keys, int n)
{
    world_t *w = k->w;
    const nwr_params *p = w->p;
    unsigned char buf[NWR_VALUE_MAX];
    for (;;) {
        k->txn_seq++;
        k->sampling = p->sample_every > 0 && (k->txn_seq & (uint64_t)(p->sample_every - 1)) == 0;
        if (k->sampling) {
            memset(k->ph, 0, sizeof k->ph);
            k->t_mark = __rdtsc();
        }
        uint64_t t_start = k->t_mark;
        if (p->trace) {
            /* begin and epoch bumps share the trace lock so the replay sees a consistent epoch */
            pthread_mutex_lock(&w->tmu);
            k->begin_epoch = clock_epoch(atomic_load(&w->clock));
            trace_locked(w, EV_BEGIN, txn_id(k), 0, 0, k->begin_epoch);
            pthread_mutex_unlock(&w->tmu);
        } else {
            k->begin_epoch = clock_epoch(atomic_load(&w->clock));
        }
        k->nrs = k->nws = 0;
        for (int i = 0; i < n; i++) {
            pace(k);
            if (kinds[i] == OP_READ)
                do_read(k, keys[i], buf);
            else
                do_write(k, keys[i]);
        }
        pace(k);
        tick(k, PH_INDEX);
        int counted = k->begin_epoch >= atomic_load_explicit(&w->measure_epoch, memory_order_relaxed);
        int done = 0, nwr = 0;
        if (p->nwr && k->nws > 0) {
            int all_blind = 1;
            for (int i = 0; i < k->nws; i++)
                all_blind &= k->ws[i].blind;
            if (all_blind) {
                int reason = FB_CAS;
                for (int a = 0; a < p->nwr_retries; a++) {
                    reason = try_omit(k);
                    if (reason != FB_CAS)
                        break;
                }
                if (counted)
                    k->res.nwr_attempts++;
                if (reason < 0) {
                    done = nwr = 1;
                } else if (counted) {
                    k->res.fallbacks[reason]++;
                }
                tick(k, PH_NWR);
            }
        }
        if (!done)
            done = commit_baseline(k);
        if (done)
            trace(w, EV_COMMIT, txn_id(k), (uint64_t)!nwr, k->order_ts, k->commit_epoch);
        else
            trace(w, EV_ABORT, txn_id(k), 0, 0, 0);
        if (counted) {
            if (k->sampling) {
                uint64_t total = __rdtsc() - t_start;
                uint64_t named = 0;
                for (int i = 0; i < PH_COUNT; i++)
                    if (i != PH_OTHER)
                        named += k->ph[i];
                k->ph[PH_OTHER] = total > named ? total - named : 0;
                for (int i = 0; i < PH_COUNT; i++)
                    k->res.ticks[i] += k->ph[i];
                k->res.sampled++;
            }
            if (done && nwr)
                k->res.committed_nwr++;
            else if (done)
                k->res.committed_baseline++;
            else
                k->res.aborted++;
        }
        if (done || atomic_load_explicit(&w->stop, memory_order_relaxed))
            return;
    }
}

static void gen_txn(worker_t *k, int *kinds, uint64_t *keys, int *n)
{
    const nwr_params *p = k->w->p;
    uint64_t used[NWR_MAX_OPS];
    int nu = 0, m = 0;
    for (int i = 0; i < p->ops_per_txn; i++) {
        uint64_t key;
        int dup;
        do {
            key = zipf_next(&k->zipf, &k->rng);
            dup = 0;
            for (int j = 0; j < nu; j++)
                dup |= used[j] == key;
        } while (dup);
        used[nu++] = key;
        uint64_t roll = splitmix64(&k->rng) % 100;
        if (roll < (uint64_t)p->mix_read) {
            kinds[m] = OP_READ;
            keys[m++] = key;
        } else if (roll < (uint64_t)(p->mix_read + p->mix_blind)) {
            kinds[m] = OP_WRITE;
            keys[m++] = key;
        } else {
            kinds[m] = OP_READ;
            keys[m++] = key;
            kinds[m] = OP_WRITE;
            keys[m++] = key;
        }
    }
    *n = m;
}

void nwr_zipf_counts(uint64_t n, double theta, uint64_t seed, uint64_t draws, uint64_t *counts, uint64_t top)
{
    zipf_t z;
    uint64_t rng = mix1(mix1(seed));
    zipf_init(&z, n, theta);
    memset(counts, 0, top * sizeof *counts);
    for (uint64_t i = 0; i < draws; i++) {
        uint64_t k = zipf_next(&z, &rng);
        if (k < top)
            counts[k]++;
    }
}

static void *worker_main(void *arg)
{
    worker_t *k = arg;
    world_t *w = k->w;
    int kinds[NWR_MAX_OPS];
    uint64_t keys[NWR_MAX_OPS];
    int n;
    while (!atomic_load(&w->go))
        sched_yield();
    long limit = w->p->txns_per_thread;
    for (long i = 0; limit <= 0 || i < limit; i++) {
        if (atomic_load_explicit(&w->stop, memory_order_relaxed))
            break;
        gen_txn(k, kinds, keys, &n);
        run_txn(k, kinds, keys, n);
    }
    return NULL;
}

typedef struct {
    world_t *w;
    _Atomic int done;
} ticker_arg;

static void *ticker_main(void *arg)
{
    ticker_arg *t = arg;
    double ms = t->w->p->epoch_ms;
    struct timespec ts = {(time_t)(ms / 1000.0), (long)(fmod(ms, 1000.0) * 1e6)};
    while (!atomic_load(&t->done)) {
        nanosleep(&ts, NULL);
        world_t *w = t->w;
        if (w->p->trace) {
            pthread_mutex_lock(&w->tmu);
            uint64_t c = atomic_fetch_add(&w->clock, 1ull << EPOCH_SHIFT) + (1ull << EPOCH_SHIFT);
            trace_locked(w, EV_EPOCH, 0, 0, 0, clock_epoch(c));
            pthread_mutex_unlock(&w->tmu);
        } else {
            atomic_fetch_add(&w->clock, 1ull << EPOCH_SHIFT);
        }
    }
    return NULL;
}

static double now_s(void)
{
    struct timespec ts;
    clock_gettime(CLOCK_MONOTONIC, &ts);
    return ts.tv_sec + ts.tv_nsec * 1e-9;
}

int nwr_run(const nwr_params *p, nwr_result *out)
{
    if (p->threads < 1 || p->records < 1 || p->value_size < 1 || p->value_size > NWR_VALUE_MAX ||
        p->ops_per_txn < 1 || 2 * p->ops_per_txn > NWR_MAX_OPS || (uint64_t)p->ops_per_txn > p->records ||
        p->epoch_ms < 1.0)
        return -1;
    world_t *w = calloc(1, sizeof *w);
    if (!w)
        return -2;
    w->p = p;
    if (posix_memalign((void **)&w->recs, 64, p->records * sizeof(record_t))) {
        free(w);
        return -2;
    }
    memset(w->recs, 0, p->records * sizeof(record_t));
    for (uint64_t i = 0; i < p->records; i++)
        w->recs[i].tid = make_tid(0, 1);
    for (int i = 0; i < STRIPES; i++)
        atomic_flag_clear(&w->stripes[i]);
    w->clock = 1ull << EPOCH_SHIFT;
    w->measure_epoch = UINT32_MAX;
    pthread_mutex_init(&w->tmu, NULL);

    worker_t *ks = calloc(p->threads, sizeof(worker_t));
    pthread_t *th = calloc(p->threads, sizeof(pthread_t));
    for (int i = 0; i < p->threads; i++) {
        ks[i].w = w;
        ks[i].id = i;
        ks[i].rng = mix1(mix1(p->seed) ^ (uint64_t)i);
        zipf_init(&ks[i].zipf, p->records, p->theta);
        ks[i].log = malloc(LOG_CAP * sizeof(log_ent));
        pthread_create(&th[i], NULL, worker_main, &ks[i]);
    }
    ticker_arg ta = {w, 0};
    pthread_t tk;
    pthread_create(&tk, NULL, ticker_main, &ta);

    uint32_t start = clock_epoch(atomic_load(&w->clock));
    double t0;
    if (p->txns_per_thread > 0) {
        /* fixed-count runs measure everything */
        w->measure_epoch = 0;
        t0 = now_s();
        atomic_store(&w->go, 1);
        for (int i = 0; i < p->threads; i++)
            pthread_join(th[i], NULL);
    } else {
        w->measure_epoch = start + 1;
        atomic_store(&w->go, 1);
        /* one warmup epoch is excluded from every counter */
        while (clock_epoch(atomic_load(&w->clock)) < start + 1) {
            struct timespec s = {0, 200000};
            nanosleep(&s, NULL);
        }
        t0 = now_s();
        double left = p->duration_s;
        struct timespec s = {(time_t)left, (long)(fmod(left, 1.0) * 1e9)};
        nanosleep(&s, NULL);
        atomic_store(&w->stop, 1);
        for (int i = 0; i < p->threads; i++)
            pthread_join(th[i], NULL);
    }
    double t1 = now_s();
    atomic_store(&ta.done, 1);
    pthread_join(tk, NULL);

    memset(out, 0, sizeof *out);
    for (int i = 0; i < p->threads; i++) {
        nwr_result *r = &ks[i].res;
        out->committed_baseline += r->committed_baseline;
        out->committed_nwr += r->committed_nwr;
        out->aborted += r->aborted;
        out->nwr_attempts += r->nwr_attempts;
        for (int j = 0; j < FB_COUNT; j++)
            out->fallbacks[j] += r->fallbacks[j];
        for (int j = 0; j < PH_COUNT; j++)
            out->ticks[j] += r->ticks[j];
        out->sampled += r->sampled;
        out->log_entries += r->log_entries;
        free(ks[i].log);
    }
    out->elapsed_s = t1 - t0;
    out->epochs = clock_epoch(atomic_load(&w->clock)) - start;
    out->trace_len = w->trace_n > p->trace_cap ? -1 : w->trace_n;
    pthread_mutex_destroy(&w->tmu);
    free(ks);
    free(th);
    free(w->recs);
    free(w);
    return 0;
}
