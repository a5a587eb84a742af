# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: the keyed mixer and the message-space scorer.

Must stay bit-identical to codemark._kernels_py.
"""
from libc.stdint cimport uint32_t, uint64_t

import numpy as np

BACKEND_NAME = "compiled"

cdef uint64_t CHAIN_SEED = 0x9E3779B97F4A7C15u


cdef inline uint64_t _mix64(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9u
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBu
    return z ^ (z >> 31)


def mix64(z):
    return int(_mix64(<uint64_t> z))


def hash_bit_scalar(token, message, prev, kf, threshold):
    cdef uint64_t h = _mix64(CHAIN_SEED ^ <uint64_t> token)
    h = _mix64(h ^ <uint64_t> message)
    h = _mix64(h ^ <uint64_t> prev)
    h = _mix64(h ^ <uint64_t> kf)
    return 1 if h < <uint64_t> threshold else 0


def pair_prefixes(tokens):
    cdef uint64_t[::1] toks = np.ascontiguousarray(tokens, dtype=np.uint64)
    out_arr = np.empty(toks.shape[0], dtype=np.uint64)
    cdef uint64_t[::1] out = out_arr
    cdef Py_ssize_t i
    with nogil:
        for i in range(toks.shape[0]):
            out[i] = _mix64(CHAIN_SEED ^ toks[i])
    return out_arr


def wm_fill(message, prev, kf, threshold, size):
    cdef uint64_t m = <uint64_t> message
    cdef uint64_t p = <uint64_t> prev
    cdef uint64_t k = <uint64_t> kf
    cdef uint64_t thr = <uint64_t> threshold
    cdef Py_ssize_t n = size
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t w
    cdef uint64_t h
    with nogil:
        for w in range(n):
            h = _mix64(CHAIN_SEED ^ <uint64_t> w)
            h = _mix64(h ^ m)
            h = _mix64(h ^ p)
            h = _mix64(h ^ k)
            out[w] = 1.0 if h < thr else 0.0
    return out_arr


def score_range(h1, prevs, counts, m_start, n_msgs, kf, threshold):
    cdef uint64_t[::1] h1v = np.ascontiguousarray(h1, dtype=np.uint64)
    cdef uint64_t[::1] pv = np.ascontiguousarray(prevs, dtype=np.uint64)
    cdef uint32_t[::1] cv = np.ascontiguousarray(counts, dtype=np.uint32)
    cdef uint64_t start = <uint64_t> m_start
    cdef Py_ssize_t n = n_msgs
    cdef uint64_t k = <uint64_t> kf
    cdef uint64_t thr = <uint64_t> threshold
    out_arr = np.zeros(n, dtype=np.uint32)
    cdef uint32_t[::1] out = out_arr
    cdef Py_ssize_t j, i, L = h1v.shape[0]
    cdef uint64_t m, h
    cdef uint32_t s
    with nogil:
        for j in range(n):
            m = start + <uint64_t> j
            s = 0
            for i in range(L):
                h = _mix64(h1v[i] ^ m)
                h = _mix64(h ^ pv[i])
                h = _mix64(h ^ k)
                if h < thr:
                    s += cv[i]
            out[j] = s
    return out_arr


def beats_range(h1, prevs, counts, m_start, n_msgs, kf, threshold, limit, strict):
    cdef uint64_t[::1] h1v = np.ascontiguousarray(h1, dtype=np.uint64)
    cdef uint64_t[::1] pv = np.ascontiguousarray(prevs, dtype=np.uint64)
    cdef uint32_t[::1] cv = np.ascontiguousarray(counts, dtype=np.uint32)
    cdef uint64_t start = <uint64_t> m_start
    cdef Py_ssize_t n = n_msgs
    cdef uint64_t k = <uint64_t> kf
    cdef uint64_t thr = <uint64_t> threshold
    cdef uint32_t lim = <uint32_t> limit
    cdef bint want_strict = 1 if strict else 0
    cdef Py_ssize_t j, i, L = h1v.shape[0]
    cdef uint64_t m, h
    cdef uint32_t s
    cdef long long found = -1
    with nogil:
        for j in range(n):
            m = start + <uint64_t> j
            s = 0
            for i in range(L):
                h = _mix64(h1v[i] ^ m)
                h = _mix64(h ^ pv[i])
                h = _mix64(h ^ k)
                if h < thr:
                    s += cv[i]
            if (s > lim) if want_strict else (s >= lim):
                found = <long long> m
                break
    return int(found)
