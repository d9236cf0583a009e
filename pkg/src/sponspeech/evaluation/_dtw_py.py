"""Pure-Python DTW kernel, the fallback when the compiled extension is absent.

Same step rules and tie-breaking as the Cython kernel: steps (1,1), (1,0),
(0,1); ties prefer the diagonal, then advancing the first index.
"""

import numpy as np


def dtw_path(cost):
    cost = np.asarray(cost, dtype=np.float64)
    n, m = cost.shape
    acc = np.empty((n, m), dtype=np.float64)
    acc[0, 0] = cost[0, 0]
    for j in range(1, m):
        acc[0, j] = acc[0, j - 1] + cost[0, j]
    for i in range(1, n):
        acc[i, 0] = acc[i - 1, 0] + cost[i, 0]
        row = acc[i]
        prev = acc[i - 1]
        ci = cost[i]
        for j in range(1, m):
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if row[j - 1] < best:
                best = row[j - 1]
            row[j] = ci[j] + best

    path = [(n - 1, m - 1)]
    i, j = n - 1, m - 1
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            best = acc[i - 1, j - 1]
            bi, bj = i - 1, j - 1
            if acc[i - 1, j] < best:
                best = acc[i - 1, j]
                bi, bj = i - 1, j
            if acc[i, j - 1] < best:
                bi, bj = i, j - 1
            i, j = bi, bj
        path.append((i, j))
    path.reverse()
    return np.asarray(path, dtype=np.int64), float(acc[n - 1, m - 1])
