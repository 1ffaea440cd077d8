# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled packet-matching kernel; same contract as ``_kernels_py.eval_chains``."""

import numpy as np
from libc.stdint cimport int64_t

DEF MAX_DEPTH = 32

cdef enum:
    SRC_LO = 0
    SRC_HI = 1
    DST_LO = 2
    DST_HI = 3
    PROTO = 4
    PORT_LO = 5
    PORT_HI = 6
    ACTION = 7
    TARGET = 8

cdef enum:
    DROP = 0
    ACCEPT = 1
    JUMP = 2
    RETURN = 3


def eval_chains(const int64_t[:, ::1] rows, const int64_t[::1] chain_start,
                const int64_t[::1] chain_end, packets, int default=DROP):
    cdef const int64_t[:, ::1] pk = np.ascontiguousarray(packets, dtype=np.int64).reshape(-1, 4)
    cdef Py_ssize_t n = pk.shape[0]
    out = np.empty(n, dtype=np.int8)
    cdef signed char[::1] res = out
    cdef Py_ssize_t i, r, sp
    cdef int64_t s, d, p, port, chain, act
    cdef Py_ssize_t stack_r[MAX_DEPTH]
    cdef int64_t stack_c[MAX_DEPTH]
    cdef int verdict
    cdef bint overflow = False

    with nogil:
        for i in range(n):
            s = pk[i, 0]
            d = pk[i, 1]
            p = pk[i, 2]
            port = pk[i, 3]
            verdict = default
            chain = 0
            r = chain_start[0]
            sp = 0
            while True:
                if r >= chain_end[chain]:
                    if sp == 0:
                        break
                    sp -= 1
                    chain = stack_c[sp]
                    r = stack_r[sp]
                    continue
                if (rows[r, SRC_LO] <= s and s <= rows[r, SRC_HI]
                        and rows[r, DST_LO] <= d and d <= rows[r, DST_HI]
                        and (rows[r, PROTO] < 0 or rows[r, PROTO] == p)
                        and rows[r, PORT_LO] <= port and port <= rows[r, PORT_HI]):
                    act = rows[r, ACTION]
                    if act == ACCEPT or act == DROP:
                        verdict = <int>act
                        break
                    elif act == JUMP:
                        if sp >= MAX_DEPTH:
                            overflow = True
                            break
                        stack_c[sp] = chain
                        stack_r[sp] = r + 1
                        sp += 1
                        chain = rows[r, TARGET]
                        r = chain_start[chain]
                        continue
                    else:
                        if sp == 0:
                            break
                        sp -= 1
                        chain = stack_c[sp]
                        r = stack_r[sp]
                        continue
                r += 1
            res[i] = <signed char>verdict
            if overflow:
                break
    if overflow:
        raise RecursionError("chain nesting deeper than %d" % MAX_DEPTH)
    return out
