# Compiled im2col/col2im used by the convolution layer.  The Python-level
# wrappers in kernels.py validate shapes/dtypes and allocate outputs; these
# loops assume C-contiguous inputs and in-range extents.

ctypedef fused real:
    float
    double


def im2col(real[:, :, :, ::1] xp, Py_ssize_t k, Py_ssize_t stride,
           real[:, :, ::1] cols):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1]
    cdef Py_ssize_t hp = xp.shape[2], wp = xp.shape[3]
    cdef Py_ssize_t oh = (hp - k) // stride + 1
    cdef Py_ssize_t ow = (wp - k) // stride + 1
    cdef Py_ssize_t i, j, ky, kx, y, x, row, base, ih
    for i in range(n):
        for j in range(c):
            for ky in range(k):
                for kx in range(k):
                    row = (j * k + ky) * k + kx
                    for y in range(oh):
                        ih = y * stride + ky
                        base = y * ow
                        for x in range(ow):
                            cols[i, row, base + x] = xp[i, j, ih, x * stride + kx]


def col2im(real[:, :, ::1] cols, real[:, :, :, ::1] xp, Py_ssize_t k,
           Py_ssize_t stride):
    # Accumulates into xp, which the caller zero-initializes.  For a fixed
    # destination the (ky, kx) contributions arrive in increasing order,
    # matching the numpy fallback so the two backends agree bitwise.
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1]
    cdef Py_ssize_t hp = xp.shape[2], wp = xp.shape[3]
    cdef Py_ssize_t oh = (hp - k) // stride + 1
    cdef Py_ssize_t ow = (wp - k) // stride + 1
    cdef Py_ssize_t i, j, ky, kx, y, x, row, base, ih
    for i in range(n):
        for j in range(c):
            for ky in range(k):
                for kx in range(k):
                    row = (j * k + ky) * k + kx
                    for y in range(oh):
                        ih = y * stride + ky
                        base = y * ow
                        for x in range(ow):
                            xp[i, j, ih, x * stride + kx] += cols[i, row, base + x]
