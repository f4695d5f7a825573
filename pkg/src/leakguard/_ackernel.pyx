# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled scan loops over the dense Aho-Corasick transition table."""
from libc.stdlib cimport calloc, free
from libc.stdint cimport int32_t, uint8_t


def search(const int32_t[::1] delta, const int32_t[::1] out_start,
           const int32_t[::1] out_ids, const uint8_t[::1] payload):
    cdef Py_ssize_t i, k, n = payload.shape[0]
    cdef int32_t s = 0
    found = []
    for i in range(n):
        s = delta[(s << 8) | payload[i]]
        if out_start[s] != out_start[s + 1]:
            for k in range(out_start[s], out_start[s + 1]):
                found.append((out_ids[k], i))
    return found


def matched(const int32_t[::1] delta, const int32_t[::1] out_start,
            const int32_t[::1] out_ids, const int32_t[::1] pat_len,
            const uint8_t[::1] anchor, const uint8_t[::1] payload):
    cdef Py_ssize_t i, k, n = payload.shape[0], npat = pat_len.shape[0]
    cdef int32_t s = 0, pid
    cdef uint8_t a
    cdef uint8_t* seen
    if npat == 0 or n == 0:
        return []
    seen = <uint8_t*> calloc(npat, 1)
    if seen == NULL:
        raise MemoryError()
    try:
        for i in range(n):
            s = delta[(s << 8) | payload[i]]
            for k in range(out_start[s], out_start[s + 1]):
                pid = out_ids[k]
                a = anchor[pid]
                if a:
                    if (a & 1) and i + 1 != pat_len[pid]:
                        continue
                    if (a & 2) and i != n - 1:
                        continue
                seen[pid] = 1
        return [k for k in range(npat) if seen[k]]
    finally:
        free(seen)
