"""Reference implementation of the packet-matching kernel (numpy, no compiled code).

Semantics must stay identical to ``_kernels.pyx``; the test-suite runs both.
"""

from __future__ import annotations

import numpy as np

SRC_LO, SRC_HI, DST_LO, DST_HI, PROTO, PORT_LO, PORT_HI, ACTION, TARGET = range(9)
DROP, ACCEPT, JUMP, RETURN = 0, 1, 2, 3
MAX_DEPTH = 32


def _row_mask(row, src, dst, proto, port):
    m = (src >= row[SRC_LO]) & (src <= row[SRC_HI])
    m &= (dst >= row[DST_LO]) & (dst <= row[DST_HI])
    if row[PROTO] >= 0:
        m &= proto == row[PROTO]
    m &= (port >= row[PORT_LO]) & (port <= row[PORT_HI])
    return m


def eval_chains(rows, chain_start, chain_end, packets, default=DROP):
    """First-match verdict (DROP/ACCEPT) of every packet row ``(src, dst, proto, port)``.

    Chain 0 is the entry chain; JUMP enters ``rows[r, TARGET]`` and RETURN (or
    falling off a sub-chain) resumes after the jump.  Falling off the entry
    chain yields ``default``.
    """
    packets = np.asarray(packets, dtype=np.int64).reshape(-1, 4)
    src, dst, proto, port = packets.T
    verdict = np.full(len(packets), default, dtype=np.int8)

    def run(chain, active, depth):
        if depth > MAX_DEPTH:
            raise RecursionError("chain nesting deeper than %d" % MAX_DEPTH)
        live = active.copy()
        back = np.zeros_like(active)
        for r in range(chain_start[chain], chain_end[chain]):
            if not live.any():
                break
            row = rows[r]
            m = live & _row_mask(row, src, dst, proto, port)
            if not m.any():
                continue
            act = row[ACTION]
            if act == ACCEPT or act == DROP:
                verdict[m] = act
                live &= ~m
            elif act == RETURN:
                back |= m
                live &= ~m
            else:
                returned = run(int(row[TARGET]), m, depth + 1)
                live &= ~(m & ~returned)
        return back | live

    if len(packets):
        run(0, np.ones(len(packets), dtype=bool), 0)
    return verdict
