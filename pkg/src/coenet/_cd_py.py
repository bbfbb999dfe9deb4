"""Pure-Python coordinate descent, used when the compiled kernel is absent."""

import numpy as np


def _sweep(X, w, r, beta, l1, l2, xwx, idx):
    worst = 0.0
    for j in idx:
        denom = xwx[j] + l2[j]
        if denom <= 0.0:
            continue
        col = X[:, j]
        old = beta[j]
        g = np.dot(w * col, r) + xwx[j] * old
        new = np.sign(g) * max(abs(g) - l1[j], 0.0) / denom
        diff = new - old
        if diff != 0.0:
            beta[j] = new
            r -= col * diff
            worst = max(worst, abs(diff) * np.sqrt(xwx[j]))
    return worst


def cd_solve(X, w, r, beta, l1, l2, xwx, tol, max_sweeps):
    """Minimize ``0.5 sum w r^2 + sum l1 |b| + 0.5 sum l2 b^2`` in place.

    Same contract as the compiled kernel.
    """
    P = X.shape[1]
    everyone = range(P)
    active = beta != 0
    sweeps = 0
    while sweeps < max_sweeps:
        worst = _sweep(X, w, r, beta, l1, l2, xwx, everyone)
        sweeps += 1
        now = beta != 0
        stable = np.array_equal(now, active)
        active = now
        if worst < tol and stable:
            break
        idx = np.flatnonzero(active)
        while sweeps < max_sweeps:
            worst = _sweep(X, w, r, beta, l1, l2, xwx, idx)
            sweeps += 1
            if worst < tol:
                break
    return sweeps
