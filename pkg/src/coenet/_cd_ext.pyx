# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled cyclic coordinate descent for penalized weighted least squares."""

from libc.math cimport fabs, sqrt


cdef inline double _soft(double z, double gamma) nogil:
    if z > gamma:
        return z - gamma
    if z < -gamma:
        return z + gamma
    return 0.0


cdef double _sweep(const double[::1, :] X, const double[::1] w, double[::1] r,
                   double[::1] beta, const double[::1] l1, const double[::1] l2,
                   const double[::1] xwx, const unsigned char[::1] mask) nogil:
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t P = X.shape[1]
    cdef Py_ssize_t i, j
    cdef double g, old, new, diff, change, worst = 0.0
    for j in range(P):
        if not mask[j] or xwx[j] + l2[j] <= 0.0:
            continue
        old = beta[j]
        g = 0.0
        for i in range(n):
            g += w[i] * X[i, j] * r[i]
        g += xwx[j] * old
        new = _soft(g, l1[j]) / (xwx[j] + l2[j])
        diff = new - old
        if diff != 0.0:
            beta[j] = new
            for i in range(n):
                r[i] -= X[i, j] * diff
            change = fabs(diff) * sqrt(xwx[j])
            if change > worst:
                worst = change
    return worst


def cd_solve(const double[::1, :] X, const double[::1] w, double[::1] r,
             double[::1] beta, const double[::1] l1, const double[::1] l2,
             const double[::1] xwx, double tol, int max_sweeps):
    """Minimize ``0.5 sum w r^2 + sum l1 |b| + 0.5 sum l2 b^2`` in place.

    ``r`` is the working residual ``z - X beta`` and is kept in sync with
    ``beta``.  Returns the number of sweeps performed.
    """
    cdef Py_ssize_t P = X.shape[1]
    cdef Py_ssize_t j
    cdef int sweeps = 0
    cdef double worst
    cdef bint stable
    cdef unsigned char[::1] everyone = bytearray(b"\x01" * P)
    cdef unsigned char[::1] active = bytearray(P)
    with nogil:
        while sweeps < max_sweeps:
            worst = _sweep(X, w, r, beta, l1, l2, xwx, everyone)
            sweeps += 1
            stable = True
            for j in range(P):
                if (beta[j] != 0.0) != (active[j] != 0):
                    stable = False
                active[j] = beta[j] != 0.0
            if worst < tol and stable:
                break
            while sweeps < max_sweeps:
                worst = _sweep(X, w, r, beta, l1, l2, xwx, active)
                sweeps += 1
                if worst < tol:
                    break
    return sweeps
