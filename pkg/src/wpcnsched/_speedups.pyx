# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled solver kernels; mirrors _speedups_py exactly (same algorithm,
same operation order) so both backends agree to rounding."""

from libc.math cimport log1p, fabs, isnan, NAN
from libc.stdlib cimport malloc, free

BACKEND_NAME = "cython"


cdef double _solve_tau(double c, double target, double rel_tol, int max_iter) noexcept nogil:
    cdef double hi, lo, tau, u, lg, f, fp, step, new
    cdef int k
    if not c > target:
        return NAN
    hi = c * target / (c - target)
    lo = hi * target / (c + target)
    tau = lo
    for k in range(max_iter):
        u = c / tau
        lg = log1p(u)
        f = tau * lg - target
        fp = lg - u / (1.0 + u)
        step = f / fp
        new = tau - step
        if new > hi:
            new = 0.5 * (tau + hi)
        if fabs(new - tau) <= rel_tol * tau:
            return new
        tau = new
    return tau


cdef double _it_duration(double tau0, double alpha, double beta, double theta,
                         double target, double rel_tol, int max_iter) noexcept nogil:
    if tau0 >= theta:
        return beta
    return _solve_tau(alpha * tau0, target, rel_tol, max_iter)


cdef double _total_length(double tau0, double[::1] alpha, double[::1] beta,
                          double[::1] theta, double target, double rel_tol,
                          int max_iter) noexcept nogil:
    # summed in ascending tau order so the result is independent of user order
    cdef Py_ssize_t n = alpha.shape[0]
    cdef double total = tau0
    cdef double tau
    cdef Py_ssize_t i, j
    cdef double* taus = <double*> malloc(n * sizeof(double))
    if taus == NULL:
        return NAN
    for i in range(n):
        tau = _it_duration(tau0, alpha[i], beta[i], theta[i], target, rel_tol, max_iter)
        if isnan(tau):
            free(taus)
            return NAN
        j = i
        while j > 0 and taus[j - 1] > tau:
            taus[j] = taus[j - 1]
            j -= 1
        taus[j] = tau
    for i in range(n):
        total += taus[i]
    free(taus)
    return total


cdef double _dsign(double x, double guard, double[::1] alpha, double[::1] beta,
                   double[::1] theta, double target, double rel_tol,
                   int max_iter, double diff_step_rel) noexcept nogil:
    cdef double h = diff_step_rel * x
    if x - h <= guard:
        return -1.0
    return (_total_length(x + h, alpha, beta, theta, target, rel_tol, max_iter)
            - _total_length(x - h, alpha, beta, theta, target, rel_tol, max_iter))


def solve_tau_nats(double c, double target, double rel_tol, int max_iter):
    return _solve_tau(c, target, rel_tol, max_iter)


def it_duration_nats(double tau0, double alpha, double beta, double theta,
                     double target, double rel_tol, int max_iter):
    return _it_duration(tau0, alpha, beta, theta, target, rel_tol, max_iter)


def total_length_nats(double tau0, double[::1] alpha, double[::1] beta,
                      double[::1] theta, double target, double rel_tol,
                      int max_iter):
    return _total_length(tau0, alpha, beta, theta, target, rel_tol, max_iter)


def bisect_eh_nats(double[::1] alpha, double[::1] beta, double[::1] theta,
                   double target, double rel_tol, int max_iter,
                   double bracket_eps, double diff_step_rel):
    cdef Py_ssize_t n = alpha.shape[0]
    cdef double lower_raw = 0.0, upper = 0.0, b
    cdef double lower, guard, lo, hi, mid
    cdef int it = 0
    cdef Py_ssize_t i
    if n == 0:
        return 0.0, 0, True
    for i in range(n):
        b = target / alpha[i]
        if b > lower_raw:
            lower_raw = b
        if theta[i] > upper:
            upper = theta[i]
    lower = lower_raw * (1.0 + bracket_eps)
    if lower >= upper:
        return upper, 0, True
    guard = lower_raw * (1.0 + 1e-12)
    if _dsign(lower, guard, alpha, beta, theta, target, rel_tol, max_iter, diff_step_rel) >= 0.0:
        return lower, 0, True
    if _dsign(upper, guard, alpha, beta, theta, target, rel_tol, max_iter, diff_step_rel) <= 0.0:
        return upper, 0, True
    lo = lower
    hi = upper
    while hi - lo > rel_tol * hi and it < max_iter:
        mid = 0.5 * (lo + hi)
        if _dsign(mid, guard, alpha, beta, theta, target, rel_tol, max_iter, diff_step_rel) < 0.0:
            lo = mid
        else:
            hi = mid
        it += 1
    return 0.5 * (lo + hi), it, hi - lo <= rel_tol * hi
