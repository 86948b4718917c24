"""Pure numpy/Python implementations of the compiled kernels.

Same signatures and results as ``engnn._kernels``; used when the extension
is not built, and as the reference in the kernel tests.
"""

import numpy as np


def csr_rowsum(indptr, indices, x):
    rows = len(indptr) - 1
    out = np.zeros((rows, x.shape[1]), dtype=np.float64)
    if len(indices) == 0:
        return out
    gathered = x[indices]
    nonempty = indptr[:-1] < indptr[1:]
    # reduceat misbehaves on empty segments, so only feed it the non-empty starts
    out[nonempty] = np.add.reduceat(gathered, indptr[:-1][nonempty], axis=0)
    return out


def walk_counts(indptr, indices, k, closed):
    n = len(indptr) - 1
    counts = np.zeros(n, dtype=np.int64)
    adj = [indices[indptr[u]:indptr[u + 1]].tolist() for u in range(n)]
    adj_sets = [set(a) for a in adj]
    path = []
    on_path = [False] * n

    def walk(start):
        u = path[-1]
        if len(path) == k:
            if not closed or start in adj_sets[u]:
                for t in path:
                    counts[t] += 1
            return
        for v in adj[u]:
            if on_path[v] or (closed and v < start):
                continue
            path.append(v)
            on_path[v] = True
            walk(start)
            on_path[v] = False
            path.pop()

    for s in range(n):
        path.append(s)
        on_path[s] = True
        walk(s)
        on_path[s] = False
        path.pop()
    return counts // 2
