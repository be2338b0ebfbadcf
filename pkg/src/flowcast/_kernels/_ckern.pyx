# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: valid temporal convolution (forward and backward)
and even-odd point-in-ring tests. Signatures mirror ``_npk``."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def conv1d_forward(double[:, :, :, ::1] x, double[:, :, ::1] w, double[::1] b):
    cdef Py_ssize_t nb = x.shape[0], ci = x.shape[1], t_in = x.shape[2], n = x.shape[3]
    cdef Py_ssize_t co = w.shape[0], k = w.shape[2], t_out = t_in - k + 1
    out_arr = np.empty((nb, co, t_out, n), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t ib, io, it, iv, ic, ik
    cdef double wv

    for ib in range(nb):
        for io in range(co):
            for it in range(t_out):
                for iv in range(n):
                    out[ib, io, it, iv] = b[io]
            for ic in range(ci):
                for ik in range(k):
                    wv = w[io, ic, ik]
                    for it in range(t_out):
                        for iv in range(n):
                            out[ib, io, it, iv] += x[ib, ic, it + ik, iv] * wv
    return out_arr


def conv1d_grad_input(double[:, :, :, ::1] g, double[:, :, ::1] w, Py_ssize_t t_in):
    cdef Py_ssize_t nb = g.shape[0], co = g.shape[1], t_out = g.shape[2], n = g.shape[3]
    cdef Py_ssize_t ci = w.shape[1], k = w.shape[2]
    gx_arr = np.zeros((nb, ci, t_in, n), dtype=np.float64)
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef Py_ssize_t ib, io, ic, ik, it, iv
    cdef double wv

    for ib in range(nb):
        for io in range(co):
            for ic in range(ci):
                for ik in range(k):
                    wv = w[io, ic, ik]
                    for it in range(t_out):
                        for iv in range(n):
                            gx[ib, ic, it + ik, iv] += g[ib, io, it, iv] * wv
    return gx_arr


def conv1d_grad_weights(double[:, :, :, ::1] x, double[:, :, :, ::1] g):
    cdef Py_ssize_t nb = x.shape[0], ci = x.shape[1], t_in = x.shape[2], n = x.shape[3]
    cdef Py_ssize_t co = g.shape[1], t_out = g.shape[2], k = t_in - t_out + 1
    gw_arr = np.zeros((co, ci, k), dtype=np.float64)
    gb_arr = np.zeros(co, dtype=np.float64)
    cdef double[:, :, ::1] gw = gw_arr
    cdef double[::1] gb = gb_arr
    cdef Py_ssize_t ib, io, ic, ik, it, iv
    cdef double acc

    for ib in range(nb):
        for io in range(co):
            for it in range(t_out):
                for iv in range(n):
                    gb[io] += g[ib, io, it, iv]
            for ic in range(ci):
                for ik in range(k):
                    acc = 0.0
                    for it in range(t_out):
                        for iv in range(n):
                            acc += x[ib, ic, it + ik, iv] * g[ib, io, it, iv]
                    gw[io, ic, ik] += acc
    return gw_arr, gb_arr


def points_in_ring(double[:, ::1] ring, double[:, ::1] pts):
    cdef Py_ssize_t n_edges = ring.shape[0] - 1, m = pts.shape[0]
    res_arr = np.zeros(m, dtype=np.bool_)
    cdef cnp.uint8_t[::1] res = res_arr.view(np.uint8)
    cdef Py_ssize_t i, e
    cdef double px, py, x1, y1, x2, y2, cross, x_int
    cdef bint inside, on_edge

    for i in range(m):
        px = pts[i, 0]
        py = pts[i, 1]
        inside = False
        on_edge = False
        for e in range(n_edges):
            x1 = ring[e, 0]
            y1 = ring[e, 1]
            x2 = ring[e + 1, 0]
            y2 = ring[e + 1, 1]
            cross = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
            if cross == 0.0 and min(x1, x2) <= px <= max(x1, x2) and min(y1, y2) <= py <= max(y1, y2):
                on_edge = True
                break
            if (y1 > py) != (y2 > py):
                x_int = (x2 - x1) * (py - y1) / (y2 - y1) + x1
                if px < x_int:
                    inside = not inside
        res[i] = on_edge or inside
    return res_arr
