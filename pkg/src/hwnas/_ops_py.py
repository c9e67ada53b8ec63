"""Pure-numpy fallback for the compiled sorting kernel.

Same contract as hwnas._ops: objectives are minimization-normalized and the
result is the Pareto rank per row. The dominance matrix is built in row
chunks to keep peak memory bounded for large trial logs.
"""

import numpy as np

_CHUNK = 256


def nondominated_rank(pts: np.ndarray) -> np.ndarray:
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    n = pts.shape[0]
    ranks = np.full(n, -1, dtype=np.int32)
    if n == 0:
        return ranks

    dom = np.zeros((n, n), dtype=bool)
    for lo in range(0, n, _CHUNK):
        hi = min(lo + _CHUNK, n)
        block = pts[lo:hi, None, :]  # (chunk, 1, m)
        le = (block <= pts[None, :, :]).all(axis=2)
        lt = (block < pts[None, :, :]).any(axis=2)
        dom[lo:hi] = le & lt
    np.fill_diagonal(dom, False)

    count = dom.sum(axis=0).astype(np.int64)
    rank = 0
    unassigned = ranks < 0
    while unassigned.any():
        front = unassigned & (count == 0)
        ranks[front] = rank
        count -= dom[front].sum(axis=0)
        unassigned &= ~front
        rank += 1
    return ranks
