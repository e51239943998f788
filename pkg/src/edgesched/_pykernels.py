"""Reference implementations of the hot kernels (numpy / plain Python).

Every function here has a twin in ``_ckernels.pyx`` with the same signature.
The Adam, Polyak and schedule kernels are written so both backends perform
the same floating point operations in the same order, which keeps results
bit-identical across backends.
"""

import numpy as np


def adam_update(param, grad, m, v, lr, beta1, beta2, eps, bias1, bias2):
    """In-place Adam step on flat float64 buffers."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    param -= lr * (m / bias1) / (np.sqrt(v / bias2) + eps)


def polyak_update(target, source, tau):
    """target <- (1 - tau) * target + tau * source, in place."""
    target *= 1.0 - tau
    target += tau * source


def slot_schedule(start_us, arrival_us, req_batch, batch_group, batch_tm_us,
                  group_mc, fixed_us, slo_us):
    """Place batches on per-group instances and compose request latencies.

    Batches are taken in order; each goes to the earliest-free instance of its
    group (lowest index on ties). Returns ``(begin, end, wait, total, violated)``
    where the first two are per batch and the rest per request.
    """
    n_groups = len(group_mc)
    free = [[int(start_us)] * int(group_mc[g]) for g in range(n_groups)]
    nb = len(batch_group)
    begin = np.empty(nb, dtype=np.int64)
    end = np.empty(nb, dtype=np.int64)
    for j in range(nb):
        inst = free[int(batch_group[j])]
        best = 0
        for i in range(1, len(inst)):
            if inst[i] < inst[best]:
                best = i
        begin[j] = inst[best]
        end[j] = inst[best] + int(batch_tm_us[j])
        inst[best] = int(end[j])
    nr = len(arrival_us)
    wait = np.empty(nr, dtype=np.int64)
    total = np.empty(nr, dtype=np.int64)
    violated = np.zeros(nr, dtype=np.uint8)
    for k in range(nr):
        j = int(req_batch[k])
        w = int(begin[j]) - int(arrival_us[k])
        wait[k] = w
        total[k] = int(fixed_us) + w + int(batch_tm_us[j])
        if total[k] > slo_us[k]:
            violated[k] = 1
    return begin, end, wait, total, violated
