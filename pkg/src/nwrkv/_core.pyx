# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled benchmark core and pivot kernels (see csrc/kernel.c)."""
from libc.stdint cimport uint32_t, uint64_t
from libc.stdlib cimport free, malloc

cdef extern from "kernel.h":
    enum:
        NWR_VALUE_MAX
        NWR_MAX_OPS
        FB_COUNT
        PH_COUNT

    ctypedef struct nwr_event:
        uint64_t txn, key, a
        uint32_t kind, epoch

    ctypedef struct nwr_params:
        int nwr
        int threads
        double duration_s
        long txns_per_thread
        double epoch_ms
        uint64_t records
        int ops_per_txn
        int mix_read, mix_blind, mix_rmw
        double theta
        int value_size
        uint64_t seed
        int nwr_retries
        int sample_every
        nwr_event *trace
        long trace_cap

    ctypedef struct nwr_result:
        uint64_t committed_baseline
        uint64_t committed_nwr
        uint64_t aborted
        uint64_t nwr_attempts
        uint64_t fallbacks[5]
        uint64_t ticks[6]
        uint64_t sampled
        uint64_t log_entries
        double elapsed_s
        uint32_t epochs
        long trace_len

    unsigned nwr_slot_of(uint64_t key) nogil
    uint32_t nwr_merge_slot(uint32_t lane, unsigned k, unsigned vn) nogil
    int nwr_validate(const uint32_t *obj_words, int n_obj,
                     const uint64_t *read_keys, const uint32_t *read_vn, int n_reads,
                     const uint64_t *write_keys, const uint32_t *write_vn, int n_writes,
                     uint32_t epoch) nogil
    void nwr_merge_footprint(uint32_t *word,
                             const uint64_t *read_keys, const uint32_t *read_vn, int n_reads,
                             const uint64_t *write_keys, const uint32_t *write_vn, int n_writes) nogil
    int nwr_run(const nwr_params *p, nwr_result *out) nogil
    void nwr_zipf_counts(uint64_t n, double theta, uint64_t seed, uint64_t draws, uint64_t *counts, uint64_t top) nogil

FALLBACKS = ("st", "guard", "read-set", "successors", "cas")
PHASES = ("index", "validation", "nwr_overhead", "lockwait", "logging", "other")
VALUE_MAX = NWR_VALUE_MAX
MAX_OPS = NWR_MAX_OPS
EVENTS = ("begin", "read", "install", "omit", "abort", "commit", "epoch")


def slot_of(uint64_t key):
    return nwr_slot_of(key)


def merge_slot(uint32_t lane, unsigned k, unsigned vn):
    return nwr_merge_slot(lane, k, vn)


cdef uint32_t *_words(objects):
    cdef int n = len(objects)
    cdef uint32_t *buf = <uint32_t *>malloc(max(n, 1) * 4 * sizeof(uint32_t))
    for i, (e, pv, mrs, mws) in enumerate(objects):
        buf[4 * i] = e
        buf[4 * i + 1] = pv
        buf[4 * i + 2] = mrs
        buf[4 * i + 3] = mws
    return buf


cdef void _pairs(pairs, uint64_t *keys, uint32_t *vns):
    for i, (k, v) in enumerate(pairs):
        keys[i] = k
        vns[i] = v


def validate(objects, reads, writes, uint32_t epoch):
    """0 maybe-acyclic, 1 st-fail, 2 maybe-cyclic.

    ``objects`` are (epoch, pv, mrs, mws) lanes, ``reads``/``writes`` are
    (int key, version number) pairs.
    """
    cdef uint64_t rk[64]
    cdef uint64_t wk[64]
    cdef uint32_t rv[64]
    cdef uint32_t wv[64]
    if len(reads) > 64 or len(writes) > 64:
        raise ValueError("footprint too large")
    _pairs(reads, rk, rv)
    _pairs(writes, wk, wv)
    cdef uint32_t *buf = _words(objects)
    try:
        return nwr_validate(buf, len(objects), rk, rv, len(reads), wk, wv, len(writes), epoch)
    finally:
        free(buf)


def merge_footprint(obj, reads, writes):
    cdef uint64_t rk[64]
    cdef uint64_t wk[64]
    cdef uint32_t rv[64]
    cdef uint32_t wv[64]
    cdef uint32_t o[4]
    if len(reads) > 64 or len(writes) > 64:
        raise ValueError("footprint too large")
    _pairs(reads, rk, rv)
    _pairs(writes, wk, wv)
    o[0], o[1], o[2], o[3] = obj
    nwr_merge_footprint(o, rk, rv, len(reads), wk, wv, len(writes))
    return (o[0], o[1], o[2], o[3])


def zipf_counts(uint64_t n, double theta, uint64_t seed, uint64_t draws, uint64_t top=1):
    """Counts of ranks 0..top-1 drawn by the benchmark's key generator."""
    if not 0.0 <= theta < 1.0 or n < 1 or top < 1:
        raise ValueError("need n >= 1, top >= 1 and theta in [0, 1)")
    cdef uint64_t *buf = <uint64_t *>malloc(top * sizeof(uint64_t))
    if buf == NULL:
        raise MemoryError()
    try:
        with nogil:
            nwr_zipf_counts(n, theta, seed, draws, buf, top)
        return [buf[i] for i in range(top)]
    finally:
        free(buf)


def run(*, bint nwr, int threads, double duration_s=1.0, long txns_per_thread=0,
        double epoch_ms=40.0, uint64_t records=100000, int ops_per_txn=4,
        mix=(50, 50, 0), double theta=0.9, int value_size=8, uint64_t seed=1,
        int nwr_retries=8, int sample_every=8, long trace_cap=0):
    """One benchmark run.  With ``trace_cap`` > 0 the result also carries
    ``trace``, a list of (kind, txn, key, a, epoch) events, and workers
    yield between operations."""
    cdef nwr_params p
    cdef nwr_result r
    p.nwr = nwr
    p.threads = threads
    p.duration_s = duration_s
    p.txns_per_thread = txns_per_thread
    p.epoch_ms = epoch_ms
    p.records = records
    p.ops_per_txn = ops_per_txn
    p.mix_read, p.mix_blind, p.mix_rmw = mix
    p.theta = theta
    p.value_size = value_size
    p.seed = seed
    p.nwr_retries = nwr_retries
    p.sample_every = sample_every
    p.trace_cap = trace_cap if trace_cap > 0 else 0
    p.trace = <nwr_event *>malloc(p.trace_cap * sizeof(nwr_event)) if p.trace_cap else NULL
    if p.trace_cap and p.trace == NULL:
        raise MemoryError("trace buffer")
    cdef int rc
    cdef long i
    try:
        with nogil:
            rc = nwr_run(&p, &r)
        events = None
        if rc == 0 and p.trace != NULL and r.trace_len >= 0:
            events = [(EVENTS[p.trace[i].kind], p.trace[i].txn, p.trace[i].key, p.trace[i].a, p.trace[i].epoch)
                      for i in range(r.trace_len)]
    finally:
        free(p.trace)
    if rc == -1:
        raise ValueError("invalid benchmark parameters")
    if rc != 0:
        raise MemoryError("benchmark core could not allocate the table")
    return {
        "committed_baseline": r.committed_baseline,
        "committed_nwr": r.committed_nwr,
        "aborted": r.aborted,
        "nwr_attempts": r.nwr_attempts,
        "fallbacks": {name: r.fallbacks[i] for i, name in enumerate(FALLBACKS)},
        "ticks": {name: r.ticks[i] for i, name in enumerate(PHASES)},
        "sampled": r.sampled,
        "log_entries": r.log_entries,
        "elapsed_s": r.elapsed_s,
        "epochs": r.epochs,
        "trace": events,
        "trace_overflow": bool(trace_cap > 0 and r.trace_len < 0),
    }
