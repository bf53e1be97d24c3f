# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled gather/scatter loops for separable-kernel gridding.

Each sample m has, per grid axis, ``J`` neighbour indices (already wrapped
into ``[0, K)``) and ``J`` real kernel weights.  ``interp*`` gathers
``sum_j w[m, j] * grid[idx[m, j]]`` and ``spread*`` is its exact transpose.
Leading axis of ``grid``/``data`` is a batch (coils, images).
"""

ctypedef double complex cplx


def interp2(const cplx[:, :, ::1] grid,
            const Py_ssize_t[:, ::1] i0, const double[:, ::1] w0,
            const Py_ssize_t[:, ::1] i1, const double[:, ::1] w1,
            cplx[:, ::1] out):
    cdef Py_ssize_t nb = grid.shape[0], m_tot = i0.shape[0]
    cdef Py_ssize_t j0 = i0.shape[1], j1 = i1.shape[1]
    cdef Py_ssize_t b, m, a, c, ia
    cdef cplx acc, row
    with nogil:
        for b in range(nb):
            for m in range(m_tot):
                acc = 0
                for a in range(j0):
                    ia = i0[m, a]
                    row = 0
                    for c in range(j1):
                        row = row + w1[m, c] * grid[b, ia, i1[m, c]]
                    acc = acc + w0[m, a] * row
                out[b, m] = acc


def spread2(const cplx[:, ::1] data,
            const Py_ssize_t[:, ::1] i0, const double[:, ::1] w0,
            const Py_ssize_t[:, ::1] i1, const double[:, ::1] w1,
            cplx[:, :, ::1] grid):
    cdef Py_ssize_t nb = data.shape[0], m_tot = i0.shape[0]
    cdef Py_ssize_t j0 = i0.shape[1], j1 = i1.shape[1]
    cdef Py_ssize_t b, m, a, c, ia
    cdef cplx v, va
    with nogil:
        for b in range(nb):
            for m in range(m_tot):
                v = data[b, m]
                for a in range(j0):
                    ia = i0[m, a]
                    va = w0[m, a] * v
                    for c in range(j1):
                        grid[b, ia, i1[m, c]] += w1[m, c] * va


def interp3(const cplx[:, :, :, ::1] grid,
            const Py_ssize_t[:, ::1] i0, const double[:, ::1] w0,
            const Py_ssize_t[:, ::1] i1, const double[:, ::1] w1,
            const Py_ssize_t[:, ::1] i2, const double[:, ::1] w2,
            cplx[:, ::1] out):
    cdef Py_ssize_t nb = grid.shape[0], m_tot = i0.shape[0]
    cdef Py_ssize_t j0 = i0.shape[1], j1 = i1.shape[1], j2 = i2.shape[1]
    cdef Py_ssize_t b, m, a, c, e, ia, ic
    cdef cplx acc, plane, row
    with nogil:
        for b in range(nb):
            for m in range(m_tot):
                acc = 0
                for a in range(j0):
                    ia = i0[m, a]
                    plane = 0
                    for c in range(j1):
                        ic = i1[m, c]
                        row = 0
                        for e in range(j2):
                            row = row + w2[m, e] * grid[b, ia, ic, i2[m, e]]
                        plane = plane + w1[m, c] * row
                    acc = acc + w0[m, a] * plane
                out[b, m] = acc


def spread3(const cplx[:, ::1] data,
            const Py_ssize_t[:, ::1] i0, const double[:, ::1] w0,
            const Py_ssize_t[:, ::1] i1, const double[:, ::1] w1,
            const Py_ssize_t[:, ::1] i2, const double[:, ::1] w2,
            cplx[:, :, :, ::1] grid):
    cdef Py_ssize_t nb = data.shape[0], m_tot = i0.shape[0]
    cdef Py_ssize_t j0 = i0.shape[1], j1 = i1.shape[1], j2 = i2.shape[1]
    cdef Py_ssize_t b, m, a, c, e, ia, ic
    cdef cplx v, va, vc
    with nogil:
        for b in range(nb):
            for m in range(m_tot):
                v = data[b, m]
                for a in range(j0):
                    ia = i0[m, a]
                    va = w0[m, a] * v
                    for c in range(j1):
                        ic = i1[m, c]
                        vc = w1[m, c] * va
                        for e in range(j2):
                            grid[b, ia, ic, i2[m, e]] += w2[m, e] * vc
