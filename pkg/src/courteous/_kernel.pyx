# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled objective kernel.

A :class:`Problem` owns the static description of one horizon optimization
(initial states, fixed controls of non-decision agents, vehicle limits and a
list of cost terms) and evaluates the objective for candidate decision
vectors.  ``courteous._kernel_py`` mirrors this interface in numpy.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, tan, exp, sqrt, log1p, fabs, M_PI

cnp.import_array()

DEF NFEAT = 5
DEF EXP_CAP = 700.0


cdef inline double _clamp(double v, double lo, double hi) noexcept nogil:
    if v < lo:
        return lo
    if v > hi:
        return hi
    return v


cdef inline double _wrap(double h) noexcept nogil:
    while h > M_PI:
        h -= 2.0 * M_PI
    while h <= -M_PI:
        h += 2.0 * M_PI
    return h


cdef inline double _softplus(double x, double temp) noexcept nogil:
    cdef double r = x / temp
    if r > 30.0:
        return x
    return temp * log1p(exp(r))


cdef class Problem:
    cdef double[:, ::1] x0
    cdef double[:, :, ::1] U0
    cdef double[:, :, ::1] U
    cdef double[:, :, ::1] X
    cdef int[::1] dec
    cdef double[:, ::1] veh
    cdef double[:, ::1] dims
    cdef double dt
    cdef int M, N, K, T
    cdef int[::1] t_persp
    cdef double[:, ::1] t_w
    cdef double[::1] t_vd
    cdef double[:, ::1] t_prev
    cdef double[:, ::1] t_mask
    cdef double[::1] t_scale
    cdef double[::1] t_offset
    cdef int[::1] t_hinge
    cdef double[::1] t_lanew
    cdef int[::1] t_path_off
    cdef double[:, ::1] path
    cdef double temp
    cdef double kappa
    cdef double[:, ::1] F
    cdef double[::1] totals
    cdef double[:, :, ::1] gX
    cdef double[:, :, ::1] gU

    def __init__(self, x0, U0, dec, veh, dims, double dt, t_persp, t_w, t_vd,
                 t_prev, t_mask, t_scale, t_offset, t_hinge, t_lanew,
                 t_path_off, path, double temp=0.0, double goal_smooth=0.0):
        self.x0 = np.ascontiguousarray(x0, dtype=np.float64)
        self.U0 = np.ascontiguousarray(U0, dtype=np.float64)
        self.U = np.array(self.U0, dtype=np.float64, copy=True)
        self.M = self.U0.shape[0]
        self.N = self.U0.shape[1]
        self.X = np.zeros((self.M, self.N + 1, 4), dtype=np.float64)
        self.dec = np.ascontiguousarray(dec, dtype=np.int32)
        self.K = self.dec.shape[0]
        self.veh = np.ascontiguousarray(veh, dtype=np.float64)
        self.dims = np.ascontiguousarray(dims, dtype=np.float64)
        self.dt = dt
        self.t_persp = np.ascontiguousarray(t_persp, dtype=np.int32)
        self.T = self.t_persp.shape[0]
        self.t_w = np.ascontiguousarray(t_w, dtype=np.float64)
        self.t_vd = np.ascontiguousarray(t_vd, dtype=np.float64)
        self.t_prev = np.ascontiguousarray(t_prev, dtype=np.float64)
        self.t_mask = np.ascontiguousarray(t_mask, dtype=np.float64)
        self.t_scale = np.ascontiguousarray(t_scale, dtype=np.float64)
        self.t_offset = np.ascontiguousarray(t_offset, dtype=np.float64)
        self.t_hinge = np.ascontiguousarray(t_hinge, dtype=np.int32)
        self.t_lanew = np.ascontiguousarray(t_lanew, dtype=np.float64)
        self.t_path_off = np.ascontiguousarray(t_path_off, dtype=np.int32)
        self.path = np.ascontiguousarray(path, dtype=np.float64).reshape(-1, 2)
        self.temp = temp
        self.kappa = goal_smooth
        self.F = np.zeros((self.T, NFEAT), dtype=np.float64)
        self.totals = np.zeros(self.T, dtype=np.float64)
        self.gX = np.zeros((self.M, self.N + 1, 4), dtype=np.float64)
        self.gU = np.zeros((self.M, self.N, 2), dtype=np.float64)

    @property
    def size(self):
        return self.K * self.N * 2

    cdef void _load(self, const double[::1] z) noexcept nogil:
        cdef int m, k, a, c, idx = 0
        for m in range(self.M):
            for k in range(self.N):
                self.U[m, k, 0] = self.U0[m, k, 0]
                self.U[m, k, 1] = self.U0[m, k, 1]
        for a in range(self.K):
            m = self.dec[a]
            for k in range(self.N):
                for c in range(2):
                    self.U[m, k, c] = z[idx]
                    idx += 1

    cdef void _rollout(self) noexcept nogil:
        cdef int m, k
        cdef double x, y, h, v, acc, st
        for m in range(self.M):
            x = self.x0[m, 0]
            y = self.x0[m, 1]
            h = self.x0[m, 2]
            v = self.x0[m, 3]
            self.X[m, 0, 0] = x
            self.X[m, 0, 1] = y
            self.X[m, 0, 2] = h
            self.X[m, 0, 3] = v
            for k in range(self.N):
                acc = _clamp(self.U[m, k, 0], self.veh[m, 2], self.veh[m, 3])
                st = _clamp(self.U[m, k, 1], -self.veh[m, 4], self.veh[m, 4])
                x = self.X[m, k, 0] + v * cos(h) * self.dt
                y = self.X[m, k, 1] + v * sin(h) * self.dt
                h = _wrap(h + v / self.veh[m, 0] * tan(st) * self.dt)
                v = _clamp(v + acc * self.dt, 0.0, self.veh[m, 1])
                self.X[m, k + 1, 0] = x
                self.X[m, k + 1, 1] = y
                self.X[m, k + 1, 2] = h
                self.X[m, k + 1, 3] = v

    cdef double _path_dist(self, int t, double px, double py) noexcept nogil:
        cdef int i, lo = self.t_path_off[t], hi = self.t_path_off[t + 1]
        cdef double best = 1e300, ax, ay, bx, by, dx, dy, L2, s, qx, qy, d2
        if hi - lo == 1:
            dx = px - self.path[lo, 0]
            dy = py - self.path[lo, 1]
            return sqrt(dx * dx + dy * dy)
        for i in range(lo, hi - 1):
            ax = self.path[i, 0]
            ay = self.path[i, 1]
            bx = self.path[i + 1, 0]
            by = self.path[i + 1, 1]
            dx = bx - ax
            dy = by - ay
            L2 = dx * dx + dy * dy
            if L2 > 0.0:
                s = _clamp(((px - ax) * dx + (py - ay) * dy) / L2, 0.0, 1.0)
            else:
                s = 0.0
            qx = px - (ax + s * dx)
            qy = py - (ay + s * dy)
            d2 = qx * qx + qy * qy
            if d2 < best:
                best = d2
        return sqrt(best)

    cdef double _path_dist_grad(self, int t, double px, double py,
                                double* gx, double* gy) noexcept nogil:
        """Distance to the polyline and its gradient w.r.t. (px, py)."""
        cdef int i, lo = self.t_path_off[t], hi = self.t_path_off[t + 1]
        cdef double best = 1e300, ax, ay, bx, by, dx, dy, L2, s, qx, qy, d2, bqx = 0.0, bqy = 0.0
        if hi - lo == 1:
            bqx = px - self.path[lo, 0]
            bqy = py - self.path[lo, 1]
            best = bqx * bqx + bqy * bqy
        else:
            for i in range(lo, hi - 1):
                ax = self.path[i, 0]
                ay = self.path[i, 1]
                bx = self.path[i + 1, 0]
                by = self.path[i + 1, 1]
                dx = bx - ax
                dy = by - ay
                L2 = dx * dx + dy * dy
                if L2 > 0.0:
                    s = _clamp(((px - ax) * dx + (py - ay) * dy) / L2, 0.0, 1.0)
                else:
                    s = 0.0
                qx = px - (ax + s * dx)
                qy = py - (ay + s * dy)
                d2 = qx * qx + qy * qy
                if d2 < best:
                    best = d2
                    bqx = qx
                    bqy = qy
        best = sqrt(best)
        if best > 0.0:
            gx[0] = bqx / best
            gy[0] = bqy / best
        else:
            gx[0] = 0.0
            gy[0] = 0.0
        return best

    cdef void _features(self) noexcept nogil:
        cdef int t, p, k, j
        cdef double a, s, ap, sp, px, py, ph, pv, ch, sh, dx, dy, dl, dn, Ls, Ws, d, fs, e
        for t in range(self.T):
            p = self.t_persp[t]
            for j in range(NFEAT):
                self.F[t, j] = 0.0
            ap = self.t_prev[t, 0]
            sp = self.t_prev[t, 1]
            for k in range(self.N):
                a = _clamp(self.U[p, k, 0], self.veh[p, 2], self.veh[p, 3])
                s = _clamp(self.U[p, k, 1], -self.veh[p, 4], self.veh[p, 4])
                px = self.X[p, k + 1, 0]
                py = self.X[p, k + 1, 1]
                ph = self.X[p, k + 1, 2]
                pv = self.X[p, k + 1, 3]
                self.F[t, 0] += (pv - self.t_vd[t]) * (pv - self.t_vd[t])
                self.F[t, 1] += ((a - ap) / self.dt) * ((a - ap) / self.dt)
                self.F[t, 2] += ((s - sp) / self.dt) * ((s - sp) / self.dt)
                if self.t_path_off[t + 1] > self.t_path_off[t]:
                    d = self._path_dist(t, px, py)
                    if self.kappa > 0.0:
                        d = sqrt(d * d + self.kappa * self.kappa) - self.kappa
                    e = d / self.t_lanew[t]
                    if e > EXP_CAP:
                        e = EXP_CAP
                    self.F[t, 3] += exp(e)
                ch = cos(ph)
                sh = sin(ph)
                fs = 0.0
                for j in range(self.M):
                    if j == p or self.t_mask[t, j] == 0.0:
                        continue
                    dx = self.X[j, k + 1, 0] - px
                    dy = self.X[j, k + 1, 1] - py
                    dl = ch * dx + sh * dy
                    dn = -sh * dx + ch * dy
                    Ls = 0.5 * (self.dims[p, 0] + self.dims[j, 0])
                    Ws = 0.5 * (self.dims[p, 1] + self.dims[j, 1])
                    d = sqrt((dl / Ls) * (dl / Ls) + (dn / Ws) * (dn / Ws))
                    fs += self.t_mask[t, j] * exp(-d)
                self.F[t, 4] += fs
                ap = a
                sp = s

    cdef double _objective(self) noexcept nogil:
        cdef int t, j
        cdef double c, total = 0.0
        self._rollout()
        self._features()
        for t in range(self.T):
            c = 0.0
            for j in range(NFEAT):
                c += self.t_w[t, j] * self.F[t, j]
            self.totals[t] = c
            if self.t_hinge[t]:
                c = c - self.t_offset[t]
                if self.temp > 0.0:
                    c = _softplus(c, self.temp)
                elif c < 0.0:
                    c = 0.0
            total += self.t_scale[t] * c
        return total

    cdef void _backward(self) noexcept nogil:
        """Adjoint sweep: fills gU with d(objective)/d(raw controls).

        Call right after ``_objective``. Clamps pass gradient only inside
        their interval; the hinge passes it only when active.
        """
        cdef int t, p, k, j, m
        cdef double dJ, r, a, s, ap, sp, px, py, ph, pv, ch, sh, dx, dy, dl, dn
        cdef double Ls, Ws, d, e, w, gdx, gdy, gxv, gyv, gdl, gdn, dist
        cdef double x, y, h, v, acc, st, pre, lam_x, lam_y, lam_h, lam_v, c
        for m in range(self.M):
            for k in range(self.N + 1):
                for j in range(4):
                    self.gX[m, k, j] = 0.0
            for k in range(self.N):
                self.gU[m, k, 0] = 0.0
                self.gU[m, k, 1] = 0.0
        for t in range(self.T):
            dJ = self.t_scale[t]
            if self.t_hinge[t]:
                c = self.totals[t] - self.t_offset[t]
                if self.temp > 0.0:
                    r = c / self.temp
                    if r > 30.0:
                        dJ *= 1.0
                    else:
                        dJ *= 1.0 / (1.0 + exp(-r))
                elif c <= 0.0:
                    dJ = 0.0
            if dJ == 0.0:
                continue
            p = self.t_persp[t]
            ap = self.t_prev[t, 0]
            sp = self.t_prev[t, 1]
            for k in range(self.N):
                a = _clamp(self.U[p, k, 0], self.veh[p, 2], self.veh[p, 3])
                s = _clamp(self.U[p, k, 1], -self.veh[p, 4], self.veh[p, 4])
                px = self.X[p, k + 1, 0]
                py = self.X[p, k + 1, 1]
                ph = self.X[p, k + 1, 2]
                pv = self.X[p, k + 1, 3]
                self.gX[p, k + 1, 3] += dJ * self.t_w[t, 0] * 2.0 * (pv - self.t_vd[t])
                w = dJ * self.t_w[t, 1] * 2.0 * (a - ap) / (self.dt * self.dt)
                self.gU[p, k, 0] += w
                if k > 0:
                    self.gU[p, k - 1, 0] -= w
                w = dJ * self.t_w[t, 2] * 2.0 * (s - sp) / (self.dt * self.dt)
                self.gU[p, k, 1] += w
                if k > 0:
                    self.gU[p, k - 1, 1] -= w
                if self.t_path_off[t + 1] > self.t_path_off[t] and self.t_w[t, 3] != 0.0:
                    dist = self._path_dist_grad(t, px, py, &gdx, &gdy)
                    r = 1.0
                    if self.kappa > 0.0:
                        d = sqrt(dist * dist + self.kappa * self.kappa)
                        r = dist / d
                        dist = d - self.kappa
                    e = dist / self.t_lanew[t]
                    if e < EXP_CAP:
                        w = dJ * self.t_w[t, 3] * exp(e) * r / self.t_lanew[t]
                        self.gX[p, k + 1, 0] += w * gdx
                        self.gX[p, k + 1, 1] += w * gdy
                if self.t_w[t, 4] != 0.0:
                    ch = cos(ph)
                    sh = sin(ph)
                    for j in range(self.M):
                        if j == p or self.t_mask[t, j] == 0.0:
                            continue
                        dx = self.X[j, k + 1, 0] - px
                        dy = self.X[j, k + 1, 1] - py
                        dl = ch * dx + sh * dy
                        dn = -sh * dx + ch * dy
                        Ls = 0.5 * (self.dims[p, 0] + self.dims[j, 0])
                        Ws = 0.5 * (self.dims[p, 1] + self.dims[j, 1])
                        d = sqrt((dl / Ls) * (dl / Ls) + (dn / Ws) * (dn / Ws))
                        if d <= 0.0:
                            continue
                        w = -dJ * self.t_w[t, 4] * self.t_mask[t, j] * exp(-d) / d
                        gdl = w * dl / (Ls * Ls)
                        gdn = w * dn / (Ws * Ws)
                        gxv = gdl * ch - gdn * sh
                        gyv = gdl * sh + gdn * ch
                        self.gX[j, k + 1, 0] += gxv
                        self.gX[j, k + 1, 1] += gyv
                        self.gX[p, k + 1, 0] -= gxv
                        self.gX[p, k + 1, 1] -= gyv
                        self.gX[p, k + 1, 2] += gdl * dn - gdn * dl
                ap = a
                sp = s
        # back through the dynamics
        for m in range(self.M):
            for k in range(self.N - 1, -1, -1):
                x = self.X[m, k, 0]
                y = self.X[m, k, 1]
                h = self.X[m, k, 2]
                v = self.X[m, k, 3]
                acc = self.U[m, k, 0]
                st = self.U[m, k, 1]
                lam_x = self.gX[m, k + 1, 0]
                lam_y = self.gX[m, k + 1, 1]
                lam_h = self.gX[m, k + 1, 2]
                lam_v = self.gX[m, k + 1, 3]
                a = _clamp(acc, self.veh[m, 2], self.veh[m, 3])
                s = _clamp(st, -self.veh[m, 4], self.veh[m, 4])
                pre = v + a * self.dt
                if pre < 0.0 or pre > self.veh[m, 1]:
                    lam_v = 0.0
                self.gX[m, k, 0] += lam_x
                self.gX[m, k, 1] += lam_y
                self.gX[m, k, 2] += lam_h + (-lam_x * sin(h) + lam_y * cos(h)) * v * self.dt
                self.gX[m, k, 3] += (lam_x * cos(h) + lam_y * sin(h)) * self.dt \
                    + lam_h * tan(s) / self.veh[m, 0] * self.dt + lam_v
                self.gU[m, k, 0] += lam_v * self.dt
                self.gU[m, k, 1] += lam_h * v / self.veh[m, 0] * self.dt / (cos(s) * cos(s))
                if acc < self.veh[m, 2] or acc > self.veh[m, 3]:
                    self.gU[m, k, 0] = 0.0
                if st < -self.veh[m, 4] or st > self.veh[m, 4]:
                    self.gU[m, k, 1] = 0.0

    def value_and_grad(self, z):
        """Objective and its analytic gradient w.r.t. the decision vector."""
        cdef double[::1] zz = np.ascontiguousarray(z, dtype=np.float64).ravel()
        cdef int a, m, k, idx = 0
        self._load(zz)
        cdef double val = self._objective()
        self._backward()
        out = np.empty(self.K * self.N * 2, dtype=np.float64)
        cdef double[::1] g = out
        for a in range(self.K):
            m = self.dec[a]
            for k in range(self.N):
                g[idx] = self.gU[m, k, 0]
                g[idx + 1] = self.gU[m, k, 1]
                idx += 2
        return val, out

    def value(self, z):
        cdef double[::1] zz = np.ascontiguousarray(z, dtype=np.float64).ravel()
        self._load(zz)
        return self._objective()

    def values(self, Z):
        cdef double[:, ::1] ZZ = np.ascontiguousarray(Z, dtype=np.float64)
        cdef int b, B = ZZ.shape[0]
        out = np.empty(B, dtype=np.float64)
        cdef double[::1] o = out
        for b in range(B):
            self._load(ZZ[b])
            o[b] = self._objective()
        return out

    def fd_grad(self, z, double h=1e-5):
        """Central finite-difference gradient of the objective."""
        cdef double[::1] zz = np.array(z, dtype=np.float64).ravel()
        cdef int i, D = zz.shape[0]
        cdef double orig, fp, fm
        out = np.empty(D, dtype=np.float64)
        cdef double[::1] g = out
        for i in range(D):
            orig = zz[i]
            zz[i] = orig + h
            self._load(zz)
            fp = self._objective()
            zz[i] = orig - h
            self._load(zz)
            fm = self._objective()
            zz[i] = orig
            g[i] = (fp - fm) / (2.0 * h)
        return out

    def evaluate(self, z):
        """Return (states, feature sums per term, raw term totals) for ``z``."""
        cdef double[::1] zz = np.ascontiguousarray(z, dtype=np.float64).ravel()
        self._load(zz)
        self._objective()
        return (np.array(self.X, copy=True), np.array(self.F, copy=True),
                np.array(self.totals, copy=True))
