# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled splatting kernels: front-to-back alpha blending and its adjoint.

Semantics match splatpm._kernels.python splat for splat; the Python module
is the readable reference.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt

cnp.import_array()

cdef double CUTOFF_MSQ = 9.0


def forward(
    const double[:, ::1] means2,
    const double[:, ::1] conics,
    const double[::1] depths,
    const double[::1] opacities,
    const double[:, ::1] colors,
    const long[::1] order,
    const long[:, ::1] bboxes,
    int width,
    int height,
    const double[::1] background,
    double alpha_cap,
):
    cdef cnp.ndarray[double, ndim=3] color_arr = np.zeros((height, width, 3))
    cdef cnp.ndarray[double, ndim=2] depth_arr = np.zeros((height, width))
    cdef cnp.ndarray[double, ndim=2] accum_arr = np.zeros((height, width))
    cdef cnp.ndarray[long, ndim=1] contrib_arr = np.zeros(means2.shape[0], dtype=np.int64)
    cdef double[:, :, ::1] color = color_arr
    cdef double[:, ::1] depth_sum = depth_arr
    cdef double[:, ::1] accum = accum_arr
    cdef long[::1] contrib = contrib_arr
    cdef cnp.ndarray[double, ndim=2] transmit_arr = np.ones((height, width))
    cdef double[:, ::1] transmit = transmit_arr

    cdef Py_ssize_t idx, k, x, y
    cdef long x0, x1, y0, y1
    cdef double mx, my, a, b, c, op, dk, cr, cg, cb
    cdef double dx, dy, msq, alpha, t, w
    cdef long count

    for idx in range(order.shape[0]):
        k = order[idx]
        x0 = bboxes[k, 0]
        x1 = bboxes[k, 1]
        y0 = bboxes[k, 2]
        y1 = bboxes[k, 3]
        if x0 >= x1 or y0 >= y1:
            continue
        mx = means2[k, 0]
        my = means2[k, 1]
        a = conics[k, 0]
        b = conics[k, 1]
        c = conics[k, 2]
        op = opacities[k]
        dk = depths[k]
        cr = colors[k, 0]
        cg = colors[k, 1]
        cb = colors[k, 2]
        count = 0
        for y in range(y0, y1):
            dy = (y + 0.5) - my
            for x in range(x0, x1):
                dx = (x + 0.5) - mx
                msq = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
                if msq > CUTOFF_MSQ:
                    continue
                alpha = op * exp(-0.5 * msq)
                if alpha > alpha_cap:
                    alpha = alpha_cap
                if alpha <= 0.0:
                    continue
                count += 1
                t = transmit[y, x]
                w = alpha * t
                color[y, x, 0] += w * cr
                color[y, x, 1] += w * cg
                color[y, x, 2] += w * cb
                depth_sum[y, x] += w * dk
                accum[y, x] += w
                transmit[y, x] = t * (1.0 - alpha)
        contrib[k] = count

    for y in range(height):
        for x in range(width):
            t = transmit[y, x]
            color[y, x, 0] += background[0] * t
            color[y, x, 1] += background[1] * t
            color[y, x, 2] += background[2] * t

    return color_arr, depth_arr, accum_arr, contrib_arr


def backward(
    const double[:, ::1] means2,
    const double[:, ::1] conics,
    const double[::1] depths,
    const double[::1] opacities,
    const double[:, ::1] colors,
    const long[::1] order,
    const long[:, ::1] bboxes,
    int width,
    int height,
    const double[::1] background,
    double alpha_cap,
    const double[:, :, ::1] grad_image,
):
    cdef Py_ssize_t k_total = means2.shape[0]
    cdef cnp.ndarray[double, ndim=2] gmean_arr = np.zeros((k_total, 2))
    cdef cnp.ndarray[double, ndim=2] gcov_arr = np.zeros((k_total, 3))
    cdef cnp.ndarray[double, ndim=1] gopac_arr = np.zeros(k_total)
    cdef cnp.ndarray[double, ndim=2] gcolor_arr = np.zeros((k_total, 3))
    cdef double[:, ::1] grad_mean2 = gmean_arr
    cdef double[:, ::1] grad_cov2 = gcov_arr
    cdef double[::1] grad_opac = gopac_arr
    cdef double[:, ::1] grad_color = gcolor_arr

    cdef cnp.ndarray[double, ndim=2] transmit_arr = np.ones((height, width))
    cdef double[:, ::1] t_run = transmit_arr
    cdef cnp.ndarray[double, ndim=3] suffix_arr = np.empty((height, width, 3))
    cdef double[:, :, ::1] suffix = suffix_arr

    cdef Py_ssize_t idx, k, x, y
    cdef long x0, x1, y0, y1
    cdef double mx, my, a, b, c, op, cr, cg, cb
    cdef double dx, dy, msq, gval, alpha, t, w, one_minus
    cdef double g0, g1, g2, d_alpha, v0, v1, coef

    # Sweep 1: final transmittance.
    for idx in range(order.shape[0]):
        k = order[idx]
        x0 = bboxes[k, 0]
        x1 = bboxes[k, 1]
        y0 = bboxes[k, 2]
        y1 = bboxes[k, 3]
        if x0 >= x1 or y0 >= y1:
            continue
        mx = means2[k, 0]
        my = means2[k, 1]
        a = conics[k, 0]
        b = conics[k, 1]
        c = conics[k, 2]
        op = opacities[k]
        for y in range(y0, y1):
            dy = (y + 0.5) - my
            for x in range(x0, x1):
                dx = (x + 0.5) - mx
                msq = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
                if msq > CUTOFF_MSQ:
                    continue
                alpha = op * exp(-0.5 * msq)
                if alpha > alpha_cap:
                    alpha = alpha_cap
                if alpha <= 0.0:
                    continue
                t_run[y, x] *= 1.0 - alpha

    for y in range(height):
        for x in range(width):
            t = t_run[y, x]
            suffix[y, x, 0] = background[0] * t
            suffix[y, x, 1] = background[1] * t
            suffix[y, x, 2] = background[2] * t

    # Sweep 2: back to front.
    for idx in range(order.shape[0] - 1, -1, -1):
        k = order[idx]
        x0 = bboxes[k, 0]
        x1 = bboxes[k, 1]
        y0 = bboxes[k, 2]
        y1 = bboxes[k, 3]
        if x0 >= x1 or y0 >= y1:
            continue
        mx = means2[k, 0]
        my = means2[k, 1]
        a = conics[k, 0]
        b = conics[k, 1]
        c = conics[k, 2]
        op = opacities[k]
        cr = colors[k, 0]
        cg = colors[k, 1]
        cb = colors[k, 2]
        for y in range(y0, y1):
            dy = (y + 0.5) - my
            for x in range(x0, x1):
                dx = (x + 0.5) - mx
                msq = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
                if msq > CUTOFF_MSQ:
                    continue
                gval = exp(-0.5 * msq)
                alpha = op * gval
                if alpha > alpha_cap:
                    alpha = alpha_cap
                if alpha <= 0.0:
                    continue
                one_minus = 1.0 - alpha
                t = t_run[y, x] / one_minus
                t_run[y, x] = t
                w = alpha * t
                g0 = grad_image[y, x, 0]
                g1 = grad_image[y, x, 1]
                g2 = grad_image[y, x, 2]
                grad_color[k, 0] += g0 * w
                grad_color[k, 1] += g1 * w
                grad_color[k, 2] += g2 * w
                if op * gval < alpha_cap:
                    d_alpha = (
                        g0 * (cr * t - suffix[y, x, 0] / one_minus)
                        + g1 * (cg * t - suffix[y, x, 1] / one_minus)
                        + g2 * (cb * t - suffix[y, x, 2] / one_minus)
                    )
                    grad_opac[k] += d_alpha * gval
                    v0 = a * dx + b * dy
                    v1 = b * dx + c * dy
                    coef = d_alpha * alpha
                    grad_mean2[k, 0] += coef * v0
                    grad_mean2[k, 1] += coef * v1
                    grad_cov2[k, 0] += 0.5 * coef * v0 * v0
                    grad_cov2[k, 1] += 0.5 * coef * v0 * v1
                    grad_cov2[k, 2] += 0.5 * coef * v1 * v1
                suffix[y, x, 0] += w * cr
                suffix[y, x, 1] += w * cg
                suffix[y, x, 2] += w * cb

    return gmean_arr, gcov_arr, gopac_arr, gcolor_arr
