import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polref import kernels
from polref.backends import ACCEPT, DROP, JUMP, RETURN

BACKENDS = sorted(kernels.BACKENDS)


def interpret(rows, starts, ends, pkt, default=DROP):
    """Straight-line reference: explicit call stack, one packet."""
    stack = []
    chain, r = 0, int(starts[0])
    while True:
        if r >= ends[chain]:
            if not stack:
                return default
            chain, r = stack.pop()
            continue
        row = rows[r]
        s, d, p, q = pkt
        hit = (row[0] <= s <= row[1] and row[2] <= d <= row[3]
               and (row[4] < 0 or row[4] == p) and row[5] <= q <= row[6])
        if not hit:
            r += 1
            continue
        act = row[7]
        if act in (DROP, ACCEPT):
            return int(act)
        if act == RETURN:
            if not stack:
                return default
            chain, r = stack.pop()
            continue
        stack.append((chain, r + 1))
        chain = int(row[8])
        r = int(starts[chain])


@st.composite
def tables(draw):
    n_chains = draw(st.integers(1, 4))
    rows, starts, ends = [], [], []
    for c in range(n_chains):
        starts.append(len(rows))
        for _ in range(draw(st.integers(0, 5))):
            s = sorted(draw(st.lists(st.integers(0, 15), min_size=2, max_size=2)))
            d = sorted(draw(st.lists(st.integers(0, 15), min_size=2, max_size=2)))
            q = sorted(draw(st.lists(st.integers(0, 7), min_size=2, max_size=2)))
            # jumps only go forward, so nesting is finite
            acts = [DROP, ACCEPT, RETURN] + ([JUMP] if c + 1 < n_chains else [])
            act = draw(st.sampled_from(acts))
            target = draw(st.integers(c + 1, n_chains - 1)) if act == JUMP else -1
            rows.append([s[0], s[1], d[0], d[1], draw(st.integers(-1, 3)), q[0], q[1], act, target])
        ends.append(len(rows))
    return (np.array(rows, dtype=np.int64).reshape(-1, 9),
            np.array(starts, dtype=np.int64), np.array(ends, dtype=np.int64))


PACKETS = np.array([(s, d, p, q) for s in range(0, 16, 3) for d in range(0, 16, 2)
                    for p in range(4) for q in range(0, 8, 3)], dtype=np.int64)


@pytest.mark.parametrize("name", BACKENDS)
@settings(max_examples=200, deadline=None)
@given(table=tables(), default=st.sampled_from([DROP, ACCEPT]))
def test_kernel_matches_reference(name, table, default):
    rows, starts, ends = table
    got = kernels.get_backend(name).eval_chains(rows, starts, ends, PACKETS, default)
    want = [interpret(rows, starts, ends, tuple(p), default) for p in PACKETS]
    assert got.tolist() == want


@pytest.mark.parametrize("name", BACKENDS)
def test_jump_return_semantics(name):
    ev = kernels.get_backend(name).eval_chains
    rows = np.array([
        [0, 9, 0, 9, -1, 0, 9, JUMP, 1],    # main: 0-9 go to sub
        [0, 99, 0, 99, -1, 0, 99, DROP, -1],
        [5, 5, 0, 99, -1, 0, 99, RETURN, -1],  # sub: 5 bounces back
        [0, 99, 0, 99, 0, 0, 99, ACCEPT, -1],  # tcp only
    ], dtype=np.int64)
    starts, ends = np.array([0, 2]), np.array([2, 4])
    pkts = np.array([[1, 1, 0, 1], [5, 1, 0, 1], [1, 1, 1, 1], [50, 1, 0, 1]], dtype=np.int64)
    # tcp from 1 accepted; 5 returns to main and hits drop; udp falls off sub then drops
    assert ev(rows, starts, ends, pkts).tolist() == [ACCEPT, DROP, DROP, DROP]
    assert ev(rows[:0], np.array([0]), np.array([0]), pkts, ACCEPT).tolist() == [ACCEPT] * 4


@pytest.mark.parametrize("name", BACKENDS)
def test_runaway_recursion(name):
    rows = np.array([[0, 9, 0, 9, -1, 0, 9, JUMP, 0]], dtype=np.int64)
    with pytest.raises(RecursionError):
        kernels.get_backend(name).eval_chains(rows, np.array([0]), np.array([1]), np.array([[1, 1, 0, 1]]))


def test_default_backend_selection():
    assert kernels.BACKEND in kernels.BACKENDS
    assert kernels.get_backend() is kernels.BACKENDS[kernels.BACKEND]
