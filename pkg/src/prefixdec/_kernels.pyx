# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled split-attention kernel.

Per (query, head): one sequential pass over ascending token index with
an online softmax (running max, rescaled exp-sum, rescaled accumulator).
Score math runs in double regardless of storage dtype.
"""

from libc.math cimport exp, INFINITY

ctypedef fused real:
    float
    double


def pac_kernel(real[:, :, ::1] q, real[:, :, ::1] k, real[:, :, ::1] v,
               const long long[::1] visible, double scale,
               real[:, :, ::1] out, real[:, ::1] max_score, real[:, ::1] exp_sum):
    cdef Py_ssize_t n_q = q.shape[0], h_q = q.shape[1], d = q.shape[2]
    cdef Py_ssize_t h_kv = k.shape[1]
    cdef Py_ssize_t g = h_q // h_kv
    cdef Py_ssize_t i, h, kh, j, x, vis
    cdef double score, m, s, w, r
    with nogil:
        for i in range(n_q):
            vis = <Py_ssize_t> visible[i]
            for h in range(h_q):
                kh = h // g
                m = -INFINITY
                s = 0.0
                for x in range(d):
                    out[i, h, x] = 0.0
                for j in range(vis):
                    score = 0.0
                    for x in range(d):
                        score += (<double> q[i, h, x]) * (<double> k[j, kh, x])
                    score *= scale
                    if score <= m:
                        w = exp(score - m)
                        s += w
                        for x in range(d):
                            out[i, h, x] += (<real> w) * v[j, kh, x]
                    else:
                        # new running max: rescale what we have (r is 0 on
                        # the first visible token, where m is still -inf)
                        r = exp(m - score)
                        s = s * r + 1.0
                        for x in range(d):
                            out[i, h, x] = out[i, h, x] * (<real> r) + v[j, kh, x]
                        m = score
                for x in range(d):
                    out[i, h, x] /= (<real> s)
                max_score[i, h] = <real> m
                exp_sum[i, h] = <real> s
