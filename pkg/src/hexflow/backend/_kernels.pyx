# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled attention kernels: scaled-dot-product forward and backward.

Loop structure mirrors backend.pure.  Dot products accumulate in the array
dtype (so the f32 path vectorizes); the softmax normalizer runs in double.
Results can differ from the numpy twin in the last few ulps at f32.

Preconditions shared with the pure twin: every row has at least one visible
key, and the backward output buffers arrive zero-filled.
"""

from libc.math cimport exp


ctypedef fused real:
    float
    double


def sdpa_forward_impl(real[:, :, :, ::1] q, real[:, :, :, ::1] k,
                      real[:, :, :, ::1] v, const unsigned char[:, ::1] key_mask,
                      double scale, bint use_mask,
                      real[:, :, :, ::1] ctx, real[:, :, :, ::1] probs):
    cdef Py_ssize_t R = q.shape[0], H = q.shape[1], T = q.shape[2], D = q.shape[3]
    cdef Py_ssize_t r, h, t, u, c
    cdef real acc, p
    cdef double s, mx, tot
    cdef bint found
    with nogil:
        for r in range(R):
            for h in range(H):
                # raw scaled scores, branch-free (masked ones fixed up below)
                for t in range(T):
                    for u in range(T):
                        acc = 0
                        for c in range(D):
                            acc = acc + q[r, h, t, c] * k[r, h, u, c]
                        probs[r, h, t, u] = <real> (acc * scale)
                for t in range(T):
                    found = False
                    mx = 0
                    for u in range(T):
                        if use_mask and key_mask[r, u]:
                            continue
                        s = probs[r, h, t, u]
                        if not found or s > mx:
                            mx = s
                            found = True
                    tot = 0
                    for u in range(T):
                        if use_mask and key_mask[r, u]:
                            probs[r, h, t, u] = 0
                            continue
                        s = exp(<double> probs[r, h, t, u] - mx)
                        probs[r, h, t, u] = <real> s
                        tot += s
                    for u in range(T):
                        probs[r, h, t, u] = <real> (probs[r, h, t, u] / tot)
                # mix: ctx[t, :] = sum_u probs[t, u] * v[u, :]
                for t in range(T):
                    for c in range(D):
                        ctx[r, h, t, c] = 0
                    for u in range(T):
                        p = probs[r, h, t, u]
                        if p != 0:
                            for c in range(D):
                                ctx[r, h, t, c] = ctx[r, h, t, c] + p * v[r, h, u, c]


def sdpa_backward_impl(real[:, :, :, ::1] d_ctx, real[:, :, :, ::1] q,
                       real[:, :, :, ::1] k, real[:, :, :, ::1] v,
                       real[:, :, :, ::1] probs, double scale,
                       real[:, :, :, ::1] dq, real[:, :, :, ::1] dk,
                       real[:, :, :, ::1] dv, real[:, ::1] ds_buf):
    """dq/dk/dv must arrive zero-filled; ds_buf is (T, T) scratch."""
    cdef Py_ssize_t R = q.shape[0], H = q.shape[1], T = q.shape[2], D = q.shape[3]
    cdef Py_ssize_t r, h, t, u, c
    cdef real acc, p, sds
    cdef double row
    with nogil:
        for r in range(R):
            for h in range(H):
                # dv[u, :] += probs[t, u] * d_ctx[t, :]
                for t in range(T):
                    for u in range(T):
                        p = probs[r, h, t, u]
                        if p != 0:
                            for c in range(D):
                                dv[r, h, u, c] = dv[r, h, u, c] + p * d_ctx[r, h, t, c]
                # ds = probs * (d_ctx @ v^T - rowdot) * scale
                for t in range(T):
                    for u in range(T):
                        acc = 0
                        for c in range(D):
                            acc = acc + d_ctx[r, h, t, c] * v[r, h, u, c]
                        ds_buf[t, u] = acc
                    row = 0
                    for u in range(T):
                        row += <double> ds_buf[t, u] * <double> probs[r, h, t, u]
                    for u in range(T):
                        ds_buf[t, u] = <real> (probs[r, h, t, u]
                                               * (ds_buf[t, u] - row) * scale)
                # dq[t, :] += ds[t, u] * k[u, :]; dk[u, :] += ds[t, u] * q[t, :]
                for t in range(T):
                    for u in range(T):
                        sds = ds_buf[t, u]
                        if sds != 0:
                            for c in range(D):
                                dq[r, h, t, c] = dq[r, h, t, c] + sds * k[r, h, u, c]
                                dk[r, h, u, c] = dk[r, h, u, c] + sds * q[r, h, t, c]
