# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; see ``_pykernels`` for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def adam_update(double[::1] param, double[::1] grad, double[::1] m, double[::1] v,
                double lr, double beta1, double beta2, double eps,
                double bias1, double bias2):
    cdef Py_ssize_t i, n = param.shape[0]
    cdef double g, c1 = 1.0 - beta1, c2 = 1.0 - beta2
    for i in range(n):
        g = grad[i]
        m[i] = m[i] * beta1 + c1 * g
        v[i] = v[i] * beta2 + c2 * g * g
        param[i] = param[i] - lr * (m[i] / bias1) / (sqrt(v[i] / bias2) + eps)


def polyak_update(double[::1] target, double[::1] source, double tau):
    cdef Py_ssize_t i, n = target.shape[0]
    cdef double keep = 1.0 - tau
    for i in range(n):
        target[i] = target[i] * keep + tau * source[i]


def slot_schedule(long long start_us, const long long[::1] arrival_us,
                  const long long[::1] req_batch, const long long[::1] batch_group,
                  const long long[::1] batch_tm_us, const long long[::1] group_mc,
                  long long fixed_us, const double[::1] slo_us):
    cdef Py_ssize_t n_groups = group_mc.shape[0]
    cdef Py_ssize_t nb = batch_group.shape[0]
    cdef Py_ssize_t nr = arrival_us.shape[0]
    cdef Py_ssize_t g, i, j, k, best, total_inst = 0
    for g in range(n_groups):
        total_inst += group_mc[g]
    offsets_arr = np.zeros(n_groups + 1, dtype=np.int64)
    cdef long long[::1] offsets = offsets_arr
    for g in range(n_groups):
        offsets[g + 1] = offsets[g] + group_mc[g]
    free_arr = np.full(total_inst, start_us, dtype=np.int64)
    cdef long long[::1] free = free_arr

    begin_arr = np.empty(nb, dtype=np.int64)
    end_arr = np.empty(nb, dtype=np.int64)
    cdef long long[::1] begin = begin_arr
    cdef long long[::1] end = end_arr
    for j in range(nb):
        g = batch_group[j]
        best = offsets[g]
        for i in range(offsets[g] + 1, offsets[g + 1]):
            if free[i] < free[best]:
                best = i
        begin[j] = free[best]
        end[j] = free[best] + batch_tm_us[j]
        free[best] = end[j]

    wait_arr = np.empty(nr, dtype=np.int64)
    total_arr = np.empty(nr, dtype=np.int64)
    viol_arr = np.zeros(nr, dtype=np.uint8)
    cdef long long[::1] wait = wait_arr
    cdef long long[::1] total = total_arr
    cdef unsigned char[::1] violated = viol_arr
    for k in range(nr):
        j = req_batch[k]
        wait[k] = begin[j] - arrival_us[k]
        total[k] = fixed_us + wait[k] + batch_tm_us[j]
        if total[k] > slo_us[k]:
            violated[k] = 1
    return begin_arr, end_arr, wait_arr, total_arr, viol_arr
