"""Pure-numpy fallback for the compiled objective kernel.

Same constructor and methods as the Cython ``Problem``; candidate batches are
vectorized over their leading axis instead of looped in C.
"""
import numpy as np

NFEAT = 5
EXP_CAP = 700.0


def _wrap(h):
    h = np.where(h > np.pi, h - 2.0 * np.pi, h)
    return np.where(h <= -np.pi, h + 2.0 * np.pi, h)


class Problem:
    def __init__(self, x0, U0, dec, veh, dims, dt, t_persp, t_w, t_vd,
                 t_prev, t_mask, t_scale, t_offset, t_hinge, t_lanew,
                 t_path_off, path, temp=0.0, goal_smooth=0.0):
        self.x0 = np.asarray(x0, dtype=np.float64)
        self.U0 = np.asarray(U0, dtype=np.float64)
        self.M, self.N = self.U0.shape[:2]
        self.dec = np.asarray(dec, dtype=np.int64)
        self.K = len(self.dec)
        self.veh = np.asarray(veh, dtype=np.float64)
        self.dims = np.asarray(dims, dtype=np.float64)
        self.dt = float(dt)
        self.t_persp = np.asarray(t_persp, dtype=np.int64)
        self.T = len(self.t_persp)
        self.t_w = np.asarray(t_w, dtype=np.float64).reshape(self.T, NFEAT)
        self.t_vd = np.asarray(t_vd, dtype=np.float64)
        self.t_prev = np.asarray(t_prev, dtype=np.float64).reshape(self.T, 2)
        self.t_mask = np.asarray(t_mask, dtype=np.float64).reshape(self.T, self.M)
        self.t_scale = np.asarray(t_scale, dtype=np.float64)
        self.t_offset = np.asarray(t_offset, dtype=np.float64)
        self.t_hinge = np.asarray(t_hinge, dtype=np.int64)
        self.t_lanew = np.asarray(t_lanew, dtype=np.float64)
        self.t_path_off = np.asarray(t_path_off, dtype=np.int64)
        self.path = np.asarray(path, dtype=np.float64).reshape(-1, 2)
        self.temp = float(temp)
        self.kappa = float(goal_smooth)

    @property
    def size(self):
        return self.K * self.N * 2

    def _controls(self, Z):
        B = Z.shape[0]
        U = np.broadcast_to(self.U0, (B,) + self.U0.shape).copy()
        if self.K:
            U[:, self.dec] = Z.reshape(B, self.K, self.N, 2)
        lo = np.stack([self.veh[:, 2], -self.veh[:, 4]], axis=-1)[None, :, None, :]
        hi = np.stack([self.veh[:, 3], self.veh[:, 4]], axis=-1)[None, :, None, :]
        return np.clip(U, lo, hi)

    def _rollout(self, Uc):
        B = Uc.shape[0]
        X = np.empty((B, self.M, self.N + 1, 4))
        X[:, :, 0] = self.x0
        wb, vmax = self.veh[:, 0], self.veh[:, 1]
        for k in range(self.N):
            x, y, h, v = (X[:, :, k, i] for i in range(4))
            X[:, :, k + 1, 0] = x + v * np.cos(h) * self.dt
            X[:, :, k + 1, 1] = y + v * np.sin(h) * self.dt
            X[:, :, k + 1, 2] = _wrap(h + v / wb * np.tan(Uc[:, :, k, 1]) * self.dt)
            X[:, :, k + 1, 3] = np.clip(v + Uc[:, :, k, 0] * self.dt, 0.0, vmax)
        return X

    def _path_dist(self, t, px, py):
        pts = self.path[self.t_path_off[t]:self.t_path_off[t + 1]]
        if len(pts) == 1:
            return np.hypot(px - pts[0, 0], py - pts[0, 1])
        a, b = pts[:-1], pts[1:]
        d = b - a
        L2 = np.einsum("ij,ij->i", d, d)
        rel_x = px[..., None] - a[:, 0]
        rel_y = py[..., None] - a[:, 1]
        s = np.where(L2 > 0, (rel_x * d[:, 0] + rel_y * d[:, 1]) / np.where(L2 > 0, L2, 1.0), 0.0)
        s = np.clip(s, 0.0, 1.0)
        qx = rel_x - s * d[:, 0]
        qy = rel_y - s * d[:, 1]
        return np.sqrt(np.min(qx * qx + qy * qy, axis=-1))

    def _path_dist_grad(self, t, px, py):
        """Distance to the polyline and its unit gradient, for 1-D points."""
        pts = self.path[self.t_path_off[t]:self.t_path_off[t + 1]]
        if len(pts) == 1:
            qx, qy = px - pts[0, 0], py - pts[0, 1]
        else:
            a, d = pts[:-1], pts[1:] - pts[:-1]
            L2 = np.einsum("ij,ij->i", d, d)
            rel_x = px[:, None] - a[:, 0]
            rel_y = py[:, None] - a[:, 1]
            s = np.where(L2 > 0, (rel_x * d[:, 0] + rel_y * d[:, 1]) / np.where(L2 > 0, L2, 1.0), 0.0)
            s = np.clip(s, 0.0, 1.0)
            qx_all = rel_x - s * d[:, 0]
            qy_all = rel_y - s * d[:, 1]
            i = np.argmin(qx_all ** 2 + qy_all ** 2, axis=1)
            r = np.arange(len(px))
            qx, qy = qx_all[r, i], qy_all[r, i]
        dist = np.hypot(qx, qy)
        safe = np.where(dist > 0, dist, 1.0)
        return dist, np.where(dist > 0, qx / safe, 0.0), np.where(dist > 0, qy / safe, 0.0)

    def _features(self, X, Uc):
        B = X.shape[0]
        F = np.zeros((B, self.T, NFEAT))
        for t in range(self.T):
            p = self.t_persp[t]
            u = Uc[:, p]
            prev = np.concatenate(
                [np.broadcast_to(self.t_prev[t], (B, 1, 2)), u[:, :-1]], axis=1)
            du = (u - prev) / self.dt
            S = X[:, p, 1:]
            F[:, t, 0] = np.sum((S[..., 3] - self.t_vd[t]) ** 2, axis=1)
            F[:, t, 1] = np.sum(du[..., 0] ** 2, axis=1)
            F[:, t, 2] = np.sum(du[..., 1] ** 2, axis=1)
            if self.t_path_off[t + 1] > self.t_path_off[t]:
                d = self._path_dist(t, S[..., 0], S[..., 1])
                if self.kappa > 0.0:
                    d = np.sqrt(d * d + self.kappa ** 2) - self.kappa
                e = d / self.t_lanew[t]
                F[:, t, 3] = np.sum(np.exp(np.minimum(e, EXP_CAP)), axis=1)
            ch, sh = np.cos(S[..., 2]), np.sin(S[..., 2])
            for j in range(self.M):
                if j == p or self.t_mask[t, j] == 0.0:
                    continue
                dx = X[:, j, 1:, 0] - S[..., 0]
                dy = X[:, j, 1:, 1] - S[..., 1]
                dl = ch * dx + sh * dy
                dn = -sh * dx + ch * dy
                Ls = 0.5 * (self.dims[p, 0] + self.dims[j, 0])
                Ws = 0.5 * (self.dims[p, 1] + self.dims[j, 1])
                d = np.sqrt((dl / Ls) ** 2 + (dn / Ws) ** 2)
                F[:, t, 4] += self.t_mask[t, j] * np.sum(np.exp(-d), axis=1)
        return F

    def _evaluate(self, Z):
        Uc = self._controls(Z)
        X = self._rollout(Uc)
        F = self._features(X, Uc)
        totals = np.einsum("btf,tf->bt", F, self.t_w)
        c = totals.copy()
        hinge = self.t_hinge.astype(bool)
        if hinge.any():
            shifted = c[:, hinge] - self.t_offset[hinge]
            if self.temp > 0.0:
                r = shifted / self.temp
                soft = self.temp * np.log1p(np.exp(np.minimum(r, 30.0)))
                c[:, hinge] = np.where(r > 30.0, shifted, soft)
            else:
                c[:, hinge] = np.maximum(shifted, 0.0)
        return X, F, totals, c @ self.t_scale

    def value_and_grad(self, z):
        z = np.asarray(z, dtype=np.float64).reshape(1, -1)
        Uraw = np.broadcast_to(self.U0, (1,) + self.U0.shape).copy()
        if self.K:
            Uraw[:, self.dec] = z.reshape(1, self.K, self.N, 2)
        Uc = self._controls(z)
        X, F, totals, vals = self._evaluate(z)
        X, Uc, Uraw, totals = X[0], Uc[0], Uraw[0], totals[0]
        gX = np.zeros_like(X)
        gU = np.zeros_like(Uc)
        dt = self.dt
        for t in range(self.T):
            dJ = self.t_scale[t]
            if self.t_hinge[t]:
                c = totals[t] - self.t_offset[t]
                if self.temp > 0.0:
                    r = c / self.temp
                    dJ *= 1.0 if r > 30.0 else 1.0 / (1.0 + np.exp(-r))
                elif c <= 0.0:
                    dJ = 0.0
            if dJ == 0.0:
                continue
            p = self.t_persp[t]
            w = self.t_w[t]
            S = X[p, 1:]
            gX[p, 1:, 3] += dJ * w[0] * 2.0 * (S[:, 3] - self.t_vd[t])
            u = Uc[p]
            du = u - np.vstack([self.t_prev[t], u[:-1]])
            gk = dJ * w[1:3] * 2.0 * du / dt ** 2
            gU[p] += gk
            gU[p, :-1] -= gk[1:]
            if self.t_path_off[t + 1] > self.t_path_off[t] and w[3] != 0.0:
                dist, gx, gy = self._path_dist_grad(t, S[:, 0], S[:, 1])
                r = 1.0
                if self.kappa > 0.0:
                    d = np.sqrt(dist * dist + self.kappa ** 2)
                    r, dist = dist / d, d - self.kappa
                e = dist / self.t_lanew[t]
                c = np.where(e < EXP_CAP, dJ * w[3] * r * np.exp(np.minimum(e, EXP_CAP))
                             / self.t_lanew[t], 0.0)
                gX[p, 1:, 0] += c * gx
                gX[p, 1:, 1] += c * gy
            if w[4] == 0.0:
                continue
            ch, sh = np.cos(S[:, 2]), np.sin(S[:, 2])
            for j in range(self.M):
                if j == p or self.t_mask[t, j] == 0.0:
                    continue
                dx = X[j, 1:, 0] - S[:, 0]
                dy = X[j, 1:, 1] - S[:, 1]
                dl = ch * dx + sh * dy
                dn = -sh * dx + ch * dy
                Ls = 0.5 * (self.dims[p, 0] + self.dims[j, 0])
                Ws = 0.5 * (self.dims[p, 1] + self.dims[j, 1])
                d = np.sqrt((dl / Ls) ** 2 + (dn / Ws) ** 2)
                safe = np.where(d > 0, d, 1.0)
                c = np.where(d > 0, -dJ * w[4] * self.t_mask[t, j] * np.exp(-d) / safe, 0.0)
                gdl = c * dl / Ls ** 2
                gdn = c * dn / Ws ** 2
                gxv = gdl * ch - gdn * sh
                gyv = gdl * sh + gdn * ch
                gX[j, 1:, 0] += gxv
                gX[j, 1:, 1] += gyv
                gX[p, 1:, 0] -= gxv
                gX[p, 1:, 1] -= gyv
                gX[p, 1:, 2] += gdl * dn - gdn * dl
        wb, vmax = self.veh[:, 0], self.veh[:, 1]
        for k in range(self.N - 1, -1, -1):
            h, v = X[:, k, 2], X[:, k, 3]
            a, s = Uc[:, k, 0], Uc[:, k, 1]
            lx, ly, lh, lv = gX[:, k + 1].T
            pre = v + a * dt
            lv = np.where((pre < 0.0) | (pre > vmax), 0.0, lv)
            gX[:, k, 0] += lx
            gX[:, k, 1] += ly
            gX[:, k, 2] += lh + (-lx * np.sin(h) + ly * np.cos(h)) * v * dt
            gX[:, k, 3] += (lx * np.cos(h) + ly * np.sin(h)) * dt + lh * np.tan(s) / wb * dt + lv
            gU[:, k, 0] += lv * dt
            gU[:, k, 1] += lh * v / wb * dt / np.cos(s) ** 2
        lo = np.stack([self.veh[:, 2], -self.veh[:, 4]], axis=-1)[:, None, :]
        hi = np.stack([self.veh[:, 3], self.veh[:, 4]], axis=-1)[:, None, :]
        gU[(Uraw < lo) | (Uraw > hi)] = 0.0
        return float(vals[0]), gU[self.dec].ravel()

    def value(self, z):
        return float(self.values(np.asarray(z, dtype=np.float64).reshape(1, -1))[0])

    def values(self, Z):
        Z = np.asarray(Z, dtype=np.float64)
        Z = Z.reshape(Z.shape[0] if Z.ndim == 2 else -1, self.size)
        return self._evaluate(Z)[3]

    def fd_grad(self, z, h=1e-5):
        z = np.asarray(z, dtype=np.float64).ravel()
        D = z.size
        E = np.eye(D) * h
        vals = self.values(np.concatenate([z + E, z - E]))
        return (vals[:D] - vals[D:]) / (2.0 * h)

    def evaluate(self, z):
        z = np.asarray(z, dtype=np.float64).reshape(1, -1)
        X, F, totals, _ = self._evaluate(z)
        return X[0], F[0], totals[0]
