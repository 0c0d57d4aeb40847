# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops for the hot image kernels.

Same contracts as numpy_backend: dense 2-D convolution, windowed box
sums, and the per-pixel varying-kernel gather used by the layered
renderer. float32 pixels, float64 accumulation.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

NAME = "native"


cdef inline Py_ssize_t _reflect(Py_ssize_t i, Py_ssize_t n) noexcept nogil:
    # symmetric boundary, matching np.pad(mode="symmetric")
    while i < 0 or i >= n:
        if i < 0:
            i = -i - 1
        if i >= n:
            i = 2 * n - 1 - i
    return i


def convolve2d(image, kernel, mode="mirror"):
    """Same-size 2-D convolution of an (H, W) or (H, W, C) image."""
    if mode not in ("mirror", "zero"):
        raise ValueError(f"unknown boundary mode {mode!r}")
    k = np.ascontiguousarray(kernel, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] % 2 == 0 or k.shape[1] % 2 == 0:
        raise ValueError("kernel must be 2-D with odd side lengths")
    img = np.asarray(image)
    squeeze = img.ndim == 2
    a = np.ascontiguousarray(img[:, :, None] if squeeze else img, dtype=np.float32)
    out = np.empty_like(a)

    cdef const float[:, :, ::1] src = a
    cdef float[:, :, ::1] dst = out
    cdef const double[:, ::1] kv = k
    cdef Py_ssize_t h = a.shape[0], w = a.shape[1], nc = a.shape[2]
    cdef Py_ssize_t ry = k.shape[0] // 2, rx = k.shape[1] // 2
    cdef bint mirror = mode == "mirror"
    cdef Py_ssize_t y, x, c, dy, dx, sy, sx
    cdef double acc

    with nogil:
        for y in range(h):
            for x in range(w):
                for c in range(nc):
                    acc = 0.0
                    for dy in range(2 * ry + 1):
                        sy = y + ry - dy
                        if sy < 0 or sy >= h:
                            if not mirror:
                                continue
                            sy = _reflect(sy, h)
                        for dx in range(2 * rx + 1):
                            sx = x + rx - dx
                            if sx < 0 or sx >= w:
                                if not mirror:
                                    continue
                                sx = _reflect(sx, w)
                            acc += kv[dy, dx] * src[sy, sx, c]
                    dst[y, x, c] = <float> acc
    return out[:, :, 0] if squeeze else out


def box_sum(image, radius):
    """Sum over the (2*radius+1)^2 window centered at each pixel.

    Pixels outside the image contribute zero. Returns float64.
    """
    cdef Py_ssize_t rad = radius
    if rad < 0:
        raise ValueError("radius must be nonnegative")
    a = np.ascontiguousarray(image, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("box_sum expects a 2-D array")
    if rad == 0:
        return a.copy()

    cdef Py_ssize_t h = a.shape[0], w = a.shape[1]
    integ = np.zeros((h + 1, w + 1), dtype=np.float64)
    cdef double[:, ::1] s = integ
    cdef const double[:, ::1] av = a
    out = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t y, x, y0, y1, x0, x1

    with nogil:
        for y in range(h):
            for x in range(w):
                s[y + 1, x + 1] = av[y, x] + s[y, x + 1] + s[y + 1, x] - s[y, x]
        for y in range(h):
            y0 = y - rad
            if y0 < 0:
                y0 = 0
            y1 = y + rad + 1
            if y1 > h:
                y1 = h
            for x in range(w):
                x0 = x - rad
                if x0 < 0:
                    x0 = 0
                x1 = x + rad + 1
                if x1 > w:
                    x1 = w
                o[y, x] = s[y1, x1] - s[y0, x1] - s[y1, x0] + s[y0, x0]
    return out


def varying_convolve(image, kernel_idx, kernels, mode="mirror"):
    """Spatially varying convolution: pixel (y, x) uses kernels[kernel_idx[y, x]].

    Kernels are packed into one (n, kmax, kmax) block so the per-pixel
    gather stays a flat nogil loop.
    """
    if mode not in ("mirror", "zero"):
        raise ValueError(f"unknown boundary mode {mode!r}")
    idx = np.ascontiguousarray(kernel_idx, dtype=np.int32)
    if idx.ndim != 2:
        raise ValueError("kernel_idx must be 2-D")
    img = np.asarray(image)
    squeeze = img.ndim == 2
    a = np.ascontiguousarray(img[:, :, None] if squeeze else img, dtype=np.float32)
    if a.shape[0] != idx.shape[0] or a.shape[1] != idx.shape[1]:
        raise ValueError("image and kernel_idx shapes disagree")

    cdef Py_ssize_t n = len(kernels)
    halfs = np.empty(n, dtype=np.int64)
    cdef Py_ssize_t j, kmax = 1
    for j in range(n):
        k = np.asarray(kernels[j])
        if k.ndim != 2 or k.shape[0] != k.shape[1] or k.shape[0] % 2 == 0:
            raise ValueError("kernels must be odd square 2-D arrays")
        halfs[j] = k.shape[0] // 2
        if k.shape[0] > kmax:
            kmax = k.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ValueError("kernel_idx out of range")
    packed = np.zeros((n, kmax, kmax), dtype=np.float64)
    for j in range(n):
        k = np.asarray(kernels[j], dtype=np.float64)
        packed[j, : k.shape[0], : k.shape[1]] = k

    out = np.empty_like(a)
    cdef const float[:, :, ::1] src = a
    cdef float[:, :, ::1] dst = out
    cdef const double[:, :, ::1] kp = packed
    cdef const int[:, ::1] iv = idx
    cdef const long long[::1] hv = halfs
    cdef Py_ssize_t h = a.shape[0], w = a.shape[1], nc = a.shape[2]
    cdef bint mirror = mode == "mirror"
    cdef Py_ssize_t y, x, c, dy, dx, sy, sx, r, ki
    cdef double acc

    with nogil:
        for y in range(h):
            for x in range(w):
                ki = iv[y, x]
                r = hv[ki]
                for c in range(nc):
                    acc = 0.0
                    for dy in range(2 * r + 1):
                        sy = y + r - dy
                        if sy < 0 or sy >= h:
                            if not mirror:
                                continue
                            sy = _reflect(sy, h)
                        for dx in range(2 * r + 1):
                            sx = x + r - dx
                            if sx < 0 or sx >= w:
                                if not mirror:
                                    continue
                                sx = _reflect(sx, w)
                            acc += kp[ki, dy, dx] * src[sy, sx, c]
                    dst[y, x, c] = <float> acc
    return out[:, :, 0] if squeeze else out
