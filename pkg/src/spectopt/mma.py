"""Method of moving asymptotes for box-bounded, constrained minimisation.

Implements the standard MMA subproblem (Svanberg 1987, 2007 formulation)
with a primal-dual Newton sub-solver. The update is deterministic: the same
inputs and internal state always produce the same step.
"""
from __future__ import annotations

import numpy as np

_RAA0 = 1e-5
_ALBEFA = 0.1
_ASYINIT = 0.5
_ASYINCR = 1.2
_ASYDECR = 0.7
_EPSIMIN = 1e-7
_SUB_MAX_OUTER = 60
_SUB_MAX_INNER = 50


class MovingAsymptotes:
    """Stateful MMA driver for n variables and m inequality constraints."""

    def __init__(self, n: int, m: int, move: float = 0.2,
                 xmin: float = 0.0, xmax: float = 1.0, c_penalty: float = 1000.0):
        self.n = n
        self.m = m
        self.move = move
        self.xmin = np.full(n, float(xmin))
        self.xmax = np.full(n, float(xmax))
        self.low = self.xmin.copy()
        self.upp = self.xmax.copy()
        self.xold1 = None
        self.xold2 = None
        self.iteration = 0
        self.a0 = 1.0
        self.a = np.zeros(m)
        self.c = np.full(m, c_penalty)
        self.d = np.ones(m)

    def reset_asymptotes(self) -> None:
        self.low = self.xmin.copy()
        self.upp = self.xmax.copy()
        self.xold1 = None
        self.xold2 = None
        self.iteration = 0

    def step(self, x: np.ndarray, df0dx: np.ndarray, fval: np.ndarray,
             dfdx: np.ndarray) -> np.ndarray:
        """One MMA update; returns the subproblem minimiser within bounds."""
        x = np.asarray(x, dtype=float)
        df0dx = np.asarray(df0dx, dtype=float)
        fval = np.atleast_1d(np.asarray(fval, dtype=float))
        dfdx = np.atleast_2d(np.asarray(dfdx, dtype=float))
        self.iteration += 1
        xmami = np.maximum(self.xmax - self.xmin, 1e-5)

        if self.iteration <= 2 or self.xold2 is None:
            self.low = x - _ASYINIT * xmami
            self.upp = x + _ASYINIT * xmami
        else:
            zzz = (x - self.xold1) * (self.xold1 - self.xold2)
            factor = np.ones(self.n)
            factor[zzz > 0.0] = _ASYINCR
            factor[zzz < 0.0] = _ASYDECR
            self.low = x - factor * (self.xold1 - self.low)
            self.upp = x + factor * (self.upp - self.xold1)
            self.low = np.clip(self.low, x - 10.0 * xmami, x - 0.01 * xmami)
            self.upp = np.clip(self.upp, x + 0.01 * xmami, x + 10.0 * xmami)

        alfa = np.maximum.reduce(
            [self.xmin, self.low + _ALBEFA * (x - self.low), x - self.move * xmami]
        )
        beta = np.minimum.reduce(
            [self.xmax, self.upp - _ALBEFA * (self.upp - x), x + self.move * xmami]
        )

        ux1 = self.upp - x
        xl1 = x - self.low
        ux2, xl2 = ux1**2, xl1**2
        p0 = np.maximum(df0dx, 0.0)
        q0 = np.maximum(-df0dx, 0.0)
        pq0 = 0.001 * (p0 + q0) + _RAA0 / xmami
        p0 = (p0 + pq0) * ux2
        q0 = (q0 + pq0) * xl2
        P = np.maximum(dfdx, 0.0)
        Q = np.maximum(-dfdx, 0.0)
        PQ = 0.001 * (P + Q) + _RAA0 / xmami[None, :]
        P = (P + PQ) * ux2[None, :]
        Q = (Q + PQ) * xl2[None, :]
        b = P @ (1.0 / ux1) + Q @ (1.0 / xl1) - fval

        xnew = _subsolve(self, alfa, beta, p0, q0, P, Q, b)
        if not np.all(np.isfinite(xnew)):
            # A degenerate subproblem: reject the step and restart asymptotes.
            self.reset_asymptotes()
            return x.copy()
        self.xold2 = None if self.xold1 is None else self.xold1
        self.xold1 = x.copy()
        return xnew


def _subsolve(mma: MovingAsymptotes, alfa, beta, p0, q0, P, Q, b) -> np.ndarray:
    """Primal-dual Newton solve of the separable MMA subproblem."""
    m, n = mma.m, mma.n
    low, upp = mma.low, mma.upp
    a0, a, c, d = mma.a0, mma.a, mma.c, mma.d
    epsi = 1.0
    x = 0.5 * (alfa + beta)
    y = np.ones(m)
    z = 1.0
    lam = np.ones(m)
    xsi = np.maximum(1.0 / (x - alfa), 1.0)
    eta = np.maximum(1.0 / (beta - x), 1.0)
    mu = np.maximum(1.0, 0.5 * c)
    zet = 1.0
    s = np.ones(m)

    def residuals(x, y, z, lam, xsi, eta, mu, zet, s, epsi):
        ux1, xl1 = upp - x, x - low
        plam = p0 + P.T @ lam
        qlam = q0 + Q.T @ lam
        gvec = P @ (1.0 / ux1) + Q @ (1.0 / xl1)
        dpsidx = plam / ux1**2 - qlam / xl1**2
        rex = dpsidx - xsi + eta
        rey = c + d * y - mu - lam
        rez = a0 - zet - a @ lam
        relam = gvec - a * z - y + s - b
        rexsi = xsi * (x - alfa) - epsi
        reeta = eta * (beta - x) - epsi
        remu = mu * y - epsi
        rezet = zet * z - epsi
        res = lam * s - epsi
        residu = np.concatenate(
            [rex, rey, [rez], relam, rexsi, reeta, remu, [rezet], res]
        )
        return residu

    for _ in range(_SUB_MAX_OUTER):
        residu = residuals(x, y, z, lam, xsi, eta, mu, zet, s, epsi)
        residunorm = np.linalg.norm(residu)
        residumax = np.abs(residu).max()
        inner = 0
        while residumax > 0.9 * epsi and inner < _SUB_MAX_INNER:
            inner += 1
            ux1, xl1 = upp - x, x - low
            ux2, xl2 = ux1**2, xl1**2
            ux3, xl3 = ux1 * ux2, xl1 * xl2
            plam = p0 + P.T @ lam
            qlam = q0 + Q.T @ lam
            gvec = P @ (1.0 / ux1) + Q @ (1.0 / xl1)
            GG = P / ux2[None, :] - Q / xl2[None, :]
            dpsidx = plam / ux2 - qlam / xl2
            delx = dpsidx - epsi / (x - alfa) + epsi / (beta - x)
            dely = c + d * y - lam - epsi / y
            delz = a0 - a @ lam - epsi / z
            dellam = gvec - a * z - y - b + epsi / lam
            diagx = 2.0 * (plam / ux3 + qlam / xl3) + xsi / (x - alfa) + eta / (beta - x)
            diagy = d + mu / y
            diaglam = s / lam
            diaglamyi = diaglam + 1.0 / diagy

            if m < n:
                blam = dellam + dely / diagy - GG @ (delx / diagx)
                Alam = np.diag(diaglamyi) + (GG / diagx[None, :]) @ GG.T
                AA = np.zeros((m + 1, m + 1))
                AA[:m, :m] = Alam
                AA[:m, m] = a
                AA[m, :m] = a
                AA[m, m] = -zet / z
                bb = np.concatenate([blam, [delz]])
                try:
                    solut = np.linalg.solve(AA, bb)
                except np.linalg.LinAlgError:
                    return np.full(n, np.nan)
                dlam = solut[:m]
                dz = solut[m]
                dx = -delx / diagx - (GG.T @ dlam) / diagx
            else:
                diaglamyiinv = 1.0 / diaglamyi
                dellamyi = dellam + dely / diagy
                Axx = np.diag(diagx) + (GG.T * diaglamyiinv[None, :]) @ GG
                azz = zet / z + a @ (a * diaglamyiinv)
                axz = -GG.T @ (a * diaglamyiinv)
                bx = delx + GG.T @ (dellamyi * diaglamyiinv)
                bz = delz - a @ (dellamyi * diaglamyiinv)
                AA = np.zeros((n + 1, n + 1))
                AA[:n, :n] = Axx
                AA[:n, n] = axz
                AA[n, :n] = axz
                AA[n, n] = azz
                bb = np.concatenate([-bx, [-bz]])
                try:
                    solut = np.linalg.solve(AA, bb)
                except np.linalg.LinAlgError:
                    return np.full(n, np.nan)
                dx = solut[:n]
                dz = solut[n]
                dlam = (GG @ dx) * diaglamyiinv - dz * (a * diaglamyiinv) + dellamyi * diaglamyiinv

            dy = -dely / diagy + dlam / diagy
            dxsi = -xsi + epsi / (x - alfa) - (xsi * dx) / (x - alfa)
            deta = -eta + epsi / (beta - x) + (eta * dx) / (beta - x)
            dmu = -mu + epsi / y - (mu * dy) / y
            dzet = -zet + epsi / z - zet * dz / z
            ds = -s + epsi / lam - (s * dlam) / lam

            xx = np.concatenate([y, [z], lam, xsi, eta, mu, [zet], s])
            dxx = np.concatenate([dy, [dz], dlam, dxsi, deta, dmu, [dzet], ds])

            stepxx = -1.01 * dxx / xx
            stmxx = stepxx.max()
            stepalfa = -1.01 * dx / (x - alfa)
            stmalfa = stepalfa.max()
            stepbeta = 1.01 * dx / (beta - x)
            stmbeta = stepbeta.max()
            steg = 1.0 / max(stmalfa, stmbeta, stmxx, 1.0)

            xold, yold, zold = x, y, z
            lamold, xsiold, etaold = lam, xsi, eta
            muold, zetold, sold = mu, zet, s

            itto = 0
            resinew = 2.0 * residunorm
            while resinew > residunorm and itto < 50:
                itto += 1
                x = xold + steg * dx
                y = yold + steg * dy
                z = zold + steg * dz
                lam = lamold + steg * dlam
                xsi = xsiold + steg * dxsi
                eta = etaold + steg * deta
                mu = muold + steg * dmu
                zet = zetold + steg * dzet
                s = sold + steg * ds
                residu = residuals(x, y, z, lam, xsi, eta, mu, zet, s, epsi)
                resinew = np.linalg.norm(residu)
                steg = steg / 2.0
            residunorm = resinew
            residumax = np.abs(residu).max()
        epsi = 0.1 * epsi
        if epsi < _EPSIMIN:
            break
    return x
