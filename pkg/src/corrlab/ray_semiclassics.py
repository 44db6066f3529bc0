"""Hamiltonian rays, actions, Lyapunov/Ehrenfest times and symbol transport.

Phase-space points are ``z = (x, xi)`` with ``x, xi`` in ``R^d``; the flow
is ``x' = dH0/dxi``, ``xi' = -dH0/dx``.  Symbols are callables
``a(x, xi)`` taking arrays of shape ``(n, d)`` and returning ``(n,)``.
"""
import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm
from scipy.optimize import root

from .waveguide_dispersion import TabulatedHamiltonian


@dataclass
class HamiltonianField:
    """Principal symbol ``H0`` with derivatives, and damping symbol ``h1 <= -k``.

    ``H(x, xi)`` returns ``(n,)``; ``grad(x, xi)`` returns ``(H_x, H_xi)``
    each ``(n, d)``; ``hess(x, xi)`` returns ``(n, 2d, 2d)`` ordered
    ``(x, xi)``.  ``h1`` is a negative constant or a callable.  ``bounds``
    is an optional ``(lo, hi)`` box for ``x``; ``xi_bound`` caps ``|xi|``
    in shooting searches.
    """

    d: int
    H: Callable
    grad: Callable
    hess: Callable
    h1: object = -1.0
    bounds: Optional[tuple] = None
    energy: Optional[tuple] = None
    xi_bound: float = 4.0
    name: str = "custom"

    def damping(self, x, xi) -> np.ndarray:
        if callable(self.h1):
            return np.asarray(self.h1(x, xi), float)
        return np.full(np.shape(x)[0], float(self.h1))

    @property
    def k(self) -> Optional[float]:
        return None if callable(self.h1) else -float(self.h1)

    def inside(self, x) -> np.ndarray:
        if self.bounds is None:
            return np.ones(np.shape(x)[0], bool)
        lo, hi = (np.broadcast_to(np.asarray(b, float), (self.d,)) for b in self.bounds)
        return np.all((x >= lo) & (x <= hi), axis=-1)

    def gradient_error(self, x, xi, h: float = 1e-6) -> float:
        """Max relative mismatch between ``grad`` and central differences of ``H``."""
        x, xi = np.atleast_2d(x).astype(float), np.atleast_2d(xi).astype(float)
        gx, gxi = self.grad(x, xi)
        num = np.concatenate([gx, gxi], axis=1)
        fd = np.empty_like(num)
        for j in range(2 * self.d):
            e = np.zeros(2 * self.d)
            e[j] = h
            zp = np.concatenate([x, xi], axis=1) + e
            zm = np.concatenate([x, xi], axis=1) - e
            fd[:, j] = (self.H(zp[:, :self.d], zp[:, self.d:])
                        - self.H(zm[:, :self.d], zm[:, self.d:])) / (2 * h)
        return float(np.max(np.abs(num - fd)) / max(1.0, np.max(np.abs(num))))

    # factories ------------------------------------------------------------

    @classmethod
    def free(cls, d: int = 1, c: float = 1.0, **kw) -> "HamiltonianField":
        """``H0 = c |xi|^2``."""
        def H(x, xi):
            return c * np.sum(xi ** 2, axis=-1)

        def grad(x, xi):
            return np.zeros_like(x), 2 * c * xi

        def hess(x, xi):
            n = np.shape(x)[0]
            m = np.zeros((n, 2 * d, 2 * d))
            m[:, d:, d:] = 2 * c * np.eye(d)
            return m

        return cls(d, H, grad, hess, name="free", **kw)

    @classmethod
    def harmonic(cls, d: int = 1, **kw) -> "HamiltonianField":
        """``H0 = |xi|^2 + |x|^2``: rotation with period ``pi``."""
        def H(x, xi):
            return np.sum(xi ** 2 + x ** 2, axis=-1)

        def grad(x, xi):
            return 2 * x, 2 * xi

        def hess(x, xi):
            n = np.shape(x)[0]
            return np.broadcast_to(2 * np.eye(2 * d), (n, 2 * d, 2 * d)).copy()

        return cls(d, H, grad, hess, name="harmonic", **kw)

    @classmethod
    def pendulum(cls, d: int = 1, **kw) -> "HamiltonianField":
        """``H0 = |xi|^2 - sum cos x_j``; saddles at ``x_j = pi`` with exponent ``sqrt(2)``."""
        def H(x, xi):
            return np.sum(xi ** 2 - np.cos(x), axis=-1)

        def grad(x, xi):
            return np.sin(x), 2 * xi

        def hess(x, xi):
            n = np.shape(x)[0]
            m = np.zeros((n, 2 * d, 2 * d))
            idx = np.arange(d)
            m[:, idx, idx] = np.cos(x)
            m[:, d + idx, d + idx] = 2.0
            return m

        return cls(d, H, grad, hess, name="pendulum", **kw)

    @classmethod
    def tabulated(cls, table: TabulatedHamiltonian, **kw) -> "HamiltonianField":
        """One horizontal dimension, ``H0 = H(x, |xi|)`` from the interpolant's derivatives."""
        def H(x, xi):
            return table.derivative(x[:, 0], np.abs(xi[:, 0]))

        def grad(x, xi):
            s = np.sign(xi[:, 0])
            gx = table.derivative(x[:, 0], np.abs(xi[:, 0]), dx=1)
            gxi = s * table.derivative(x[:, 0], np.abs(xi[:, 0]), dxi=1)
            return gx[:, None], gxi[:, None]

        def hess(x, xi):
            a = np.abs(xi[:, 0])
            s = np.sign(xi[:, 0])
            m = np.zeros((x.shape[0], 2, 2))
            m[:, 0, 1] = m[:, 1, 0] = s * table.derivative(x[:, 0], a, dxi=1, dx=1)
            m[:, 1, 1] = table.derivative(x[:, 0], a, dxi=2)
            return m

        lo, hi = float(table.x.min()), float(table.x.max())
        kw.setdefault("bounds", None if lo == hi else (lo, hi))
        kw.setdefault("xi_bound", float(table.xi.max()))
        return cls(1, H, grad, hess, name="tabulated", **kw)


J_CACHE = {}


def symplectic_J(d: int) -> np.ndarray:
    if d not in J_CACHE:
        J_CACHE[d] = np.block([[np.zeros((d, d)), np.eye(d)], [-np.eye(d), np.zeros((d, d))]])
    return J_CACHE[d]


@dataclass
class RayTrajectory:
    t: np.ndarray
    x: np.ndarray
    xi: np.ndarray
    S: np.ndarray
    D: np.ndarray
    M: np.ndarray
    energy_drift: float = 0.0
    tol: float = 1e-10

    def symplectic_error(self) -> float:
        """``max |det M - 1|`` and ``||M^T J M - J||`` over outputs."""
        d = self.x.shape[1]
        J = symplectic_J(d)
        det = np.abs(np.linalg.det(self.M) - 1.0)
        form = np.abs(np.einsum("nji,jk,nkl->nil", self.M, J, self.M) - J).max(axis=(1, 2))
        return float(max(det.max(), form.max()))

    def to_csv(self, path) -> Path:
        path = Path(path)
        d = self.x.shape[1]
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{j}" for j in range(d)] + [f"xi{j}" for j in range(d)]
                       + ["S", "D"])
            for n in range(self.t.size):
                w.writerow([repr(float(v)) for v in
                            np.concatenate([[self.t[n]], self.x[n], self.xi[n],
                                            [self.S[n], self.D[n]]])])
        return path


def _ray_rhs(field: HamiltonianField, variational: bool):
    d = field.d
    J = symplectic_J(d)

    def rhs(t, y):
        x, xi = y[None, :d], y[None, d:2 * d]
        gx, gxi = field.grad(x, xi)
        out = [gxi[0], -gx[0]]
        if variational:
            M = y[2 * d:2 * d + 4 * d * d].reshape(2 * d, 2 * d)
            out.append((J @ field.hess(x, xi)[0] @ M).ravel())
        out.append([float(xi[0] @ gxi[0] - field.H(x, xi)[0])])
        out.append([float(field.damping(x, xi)[0])])
        return np.concatenate(out)

    return rhs


def integrate_flow(field: HamiltonianField, z0, t_end: float, tol: float = 1e-10,
                   t_eval: Optional[np.ndarray] = None, variational: bool = True,
                   max_refine: int = 4) -> RayTrajectory:
    """Integrate the ray, its tangent flow, the action and the damping integral.

    Negative ``t_end`` integrates backwards.  When the relative energy drift
    exceeds ``tol`` the solve is repeated with a ten times tighter
    tolerance (at most ``max_refine`` times).
    """
    if not 1e-12 <= tol <= 1e-4:
        raise ValueError("tol must lie in [1e-12, 1e-4]")
    d = field.d
    z0 = np.asarray(z0, float).ravel()
    if z0.size != 2 * d:
        raise ValueError(f"z0 must have {2 * d} entries")
    if not field.inside(z0[None, :d])[0]:
        raise ValueError("initial point outside the domain")
    y0 = [z0]
    if variational:
        y0.append(np.eye(2 * d).ravel())
    y0.append([0.0, 0.0])
    y0 = np.concatenate(y0)
    if t_eval is None:
        t_eval = np.array([0.0, t_end]) if t_end != 0 else np.array([0.0])
    events = None
    if field.bounds is not None:
        lo, hi = (np.broadcast_to(np.asarray(b, float), (d,)) for b in field.bounds)

        def leave(t, y):
            return min(np.min(y[:d] - lo), np.min(hi - y[:d]))
        leave.terminal = True
        events = leave
    e0 = field.H(z0[None, :d], z0[None, d:])[0]
    rtol = tol
    for _ in range(max_refine + 1):
        if t_end == 0:
            ys = y0[:, None]
            break
        sol = solve_ivp(_ray_rhs(field, variational), (0.0, t_end), y0, method="DOP853",
                        t_eval=t_eval, rtol=rtol, atol=rtol * 1e-2, events=events)
        if sol.status == -1:
            raise RuntimeError(f"flow integration failed (step-size underflow): {sol.message}")
        if sol.status == 1:
            raise ValueError(f"ray left the domain at t = {sol.t_events[0][0]:g}")
        ys = sol.y
        e = field.H(ys[:d].T, ys[d:2 * d].T)
        drift = float(np.max(np.abs(e - e0)) / max(1.0, abs(e0)))
        if drift <= tol or rtol <= 1e-14:
            break
        rtol = max(rtol / 10, 1e-14)
    else:
        raise RuntimeError("energy drift above tolerance after refinement")
    e = field.H(ys[:d].T, ys[d:2 * d].T)
    drift = float(np.max(np.abs(e - e0)))
    n = ys.shape[1]
    if variational:
        M = ys[2 * d:2 * d + 4 * d * d].T.reshape(n, 2 * d, 2 * d)
    else:
        M = np.broadcast_to(np.eye(2 * d), (n, 2 * d, 2 * d))
    return RayTrajectory(np.asarray(t_eval, float), ys[:d].T, ys[d:2 * d].T, ys[-2], ys[-1], M,
                         drift, tol)


# ---------------------------------------------------------------------------
# two-point problems


@dataclass
class TwoPointRay:
    xi0: np.ndarray
    xi1: np.ndarray
    S: float
    jacobian: np.ndarray  # d x(t) / d xi0
    conjugate: bool


def action_two_point(field: HamiltonianField, y, x, t: float, shooting_tol: float = 1e-12,
                     xi_box: Optional[float] = None, starts: int = 9,
                     conjugate_tol: float = 1e-6) -> list:
    """All rays from ``y`` to ``x`` in time ``t`` found by multi-start shooting.

    Each solution carries its action ``S(t, x, y)``, final momentum and
    the block ``dx(t)/dxi(0)`` of the monodromy; ``conjugate`` is set when
    ``|det| < conjugate_tol * max(1, ||block||)^d``.
    """
    if not t > 0:
        raise ValueError("t must be positive")
    d = field.d
    y = np.atleast_1d(np.asarray(y, float))
    x = np.atleast_1d(np.asarray(x, float))
    box = 1.2 * field.xi_bound if xi_box is None else xi_box
    grid = np.linspace(-box, box, starts)
    seeds = np.stack(np.meshgrid(*([grid] * d), indexing="ij"), -1).reshape(-1, d)
    tol = max(min(shooting_tol * 1e-2, 1e-10), 1e-12)

    def shoot(eta):
        tr = integrate_flow(field, np.concatenate([y, eta]), t, tol=tol)
        return tr.x[-1] - x, tr.M[-1][:d, d:], tr

    found = []
    for s in seeds:
        try:
            sol = root(lambda e: shoot(e)[0], s, jac=lambda e: shoot(e)[1], method="hybr",
                       tol=shooting_tol)
        except (ValueError, RuntimeError):
            continue
        res, jac, tr = shoot(sol.x)
        if np.max(np.abs(res)) > max(shooting_tol, 1e-10) * max(1.0, np.max(np.abs(x))) * 10:
            continue
        if np.any(np.abs(sol.x) > box):
            continue
        if any(np.max(np.abs(f.xi0 - sol.x)) < 1e-6 * max(1.0, box) for f in found):
            continue
        det = abs(np.linalg.det(jac))
        conj = det < conjugate_tol * max(1.0, np.linalg.norm(jac)) ** d
        found.append(TwoPointRay(sol.x, tr.xi[-1], float(tr.S[-1]), jac, bool(conj)))
        if conj:
            break
    if not found:
        raise ValueError("no ray joins y to x in the searched momentum box")
    return found


def free_action(x, y, t: float, c: float = 1.0) -> float:
    """``|x - y|^2 / (4 c t)`` for ``H0 = c |xi|^2``."""
    return float(np.sum((np.asarray(x) - np.asarray(y)) ** 2) / (4 * c * t))


def wkb_phase_predict(field: HamiltonianField, y, x, tau: float, eps: float,
                      period: Optional[float] = None, windings: int = 2) -> dict:
    """Phases ``S/eps mod 2 pi`` of the rays from ``y`` to ``x`` (and periodic images).

    The dominant ray is the one with the smallest ``|det dx/dxi0|`` (largest
    amplitude).  Amplitudes scale as ``eps^{-d/2}``.
    """
    targets = [np.atleast_1d(np.asarray(x, float))]
    if period is not None:
        base = targets[0]
        targets = [base + n * period for n in range(-windings, windings + 1)]
    rays = []
    for tgt in targets:
        try:
            found = action_two_point(field, y, tgt, tau)
        except ValueError:
            continue
        for r in found:
            if r.conjugate:
                raise ValueError("non-generic triple: conjugate points along a ray")
            rays.append((tgt, r))
    if not rays:
        raise ValueError("no ray found")
    phases = [float(np.mod(r.S / eps, 2 * np.pi)) for _, r in rays]
    amps = [abs(np.linalg.det(r.jacobian)) ** -0.5 for _, r in rays]
    dom = int(np.argmax(amps))
    return {"phases": phases, "actions": [r.S for _, r in rays], "amplitudes": amps,
            "dominant": dom, "dominant_phase": phases[dom],
            "amplitude_order": eps ** (-field.d / 2)}


# ---------------------------------------------------------------------------
# Lyapunov and Ehrenfest times


def ehrenfest_time(eps: float, Lambda: float) -> float:
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    return float(abs(np.log(eps)) / Lambda) if Lambda > 0 else float("inf")


def tangent_growth(field: HamiltonianField, z0, horizon: float, segment: float = 1.0,
                   tol: float = 1e-10):
    """Cumulative ``log ||dPhi_t v||`` of the leading direction, with renormalization."""
    d = field.d
    z = np.asarray(z0, float)
    n = max(1, int(np.ceil(horizon / segment)))
    h = horizon / n
    Q = np.eye(2 * d)
    logs = np.zeros(n + 1)
    total = 0.0
    gx, gxi = field.grad(z[None, :d], z[None, d:])
    # equilibria are invariant; roundoff would otherwise push the ray off them
    step = None
    if max(np.abs(gx).max(), np.abs(gxi).max()) <= 1e-12:
        step = expm(h * symplectic_J(d) @ field.hess(z[None, :d], z[None, d:])[0])
    for i in range(n):
        if step is None:
            tr = integrate_flow(field, z, h, tol=tol)
            z = np.concatenate([tr.x[-1], tr.xi[-1]])
            Q, R = np.linalg.qr(tr.M[-1] @ Q)
        else:
            Q, R = np.linalg.qr(step @ Q)
        total += np.log(abs(R[0, 0]))
        logs[i + 1] = total
    return np.linspace(0, horizon, n + 1), logs


def sample_shell(field: HamiltonianField, I: tuple, n: int, seed: int = 0,
                 x_box: Optional[tuple] = None) -> np.ndarray:
    """Rejection-sample ``n`` points with ``H0`` in ``I``."""
    rng = np.random.default_rng(seed)
    d = field.d
    lo, hi = x_box if x_box is not None else (field.bounds if field.bounds else (-np.pi, np.pi))
    out = []
    tries = 0
    while len(out) < n:
        tries += 1
        if tries > 1000:
            raise ValueError("energy shell not found in the sampling box")
        x = rng.uniform(lo, hi, (256, d))
        xi = rng.uniform(-field.xi_bound, field.xi_bound, (256, d))
        e = field.H(x, xi)
        keep = (e >= I[0]) & (e <= I[1])
        out.extend(np.concatenate([x, xi], axis=1)[keep])
    return np.asarray(out[:n])


def lyapunov_and_ehrenfest(field: HamiltonianField, I: tuple, horizon: float, eps: float,
                           samples: int = 8, extra_points: Sequence = (), safety: float = 0.1,
                           gamma: float = 0.25, seed: int = 0,
                           x_box: Optional[tuple] = None) -> dict:
    """Growth-rate fit of the tangent flow on ``H0^{-1}(I)``.

    ``Lambda = (1 + safety) * max fitted rate``.  A flow whose growth stays
    below ``2 log(1 + horizon)`` over the horizon is polynomial and flagged
    non-hyperbolic (infinite Ehrenfest time).  A fit with ``R^2 < 0.9``
    marks ``Lambda`` as an upper bound only.
    """
    if not 0 < gamma < 0.5:
        raise ValueError("gamma must lie in (0, 1/2)")
    pts = list(sample_shell(field, I, samples, seed, x_box)) if samples else []
    pts += [np.asarray(p, float) for p in extra_points]
    if not pts:
        raise ValueError("no sample points")
    rates, r2s, growths = [], [], []
    for z in pts:
        t, logs = tangent_growth(field, z, horizon)
        slope, icpt = np.polyfit(t, logs, 1)
        pred = slope * t + icpt
        ss = np.sum((logs - logs.mean()) ** 2)
        r2 = 1 - np.sum((logs - pred) ** 2) / ss if ss > 0 else 0.0
        rates.append(max(slope, 0.0))
        r2s.append(r2)
        growths.append(logs[-1])
    best = int(np.argmax(rates))
    fit = float(rates[best])
    hyperbolic = max(growths) >= 2 * np.log(1 + horizon)
    Lam = (1 + safety) * fit
    T_e = ehrenfest_time(eps, Lam) if hyperbolic and Lam > 0 else float("inf")
    return {"Lambda_fit": fit, "Lambda": Lam if hyperbolic else 0.0, "r2": float(r2s[best]),
            "upper_bound_only": bool(r2s[best] < 0.9), "hyperbolic": bool(hyperbolic),
            "T_Ehrenfest": T_e, "T_gamma": (0.5 - gamma) * T_e, "gamma": gamma,
            "samples": len(pts)}


# ---------------------------------------------------------------------------
# symbol transport


def _backward_batch(field: HamiltonianField, X, XI, t: float, tol: float, dense: bool = False):
    """Backward flow of many nodes at once: returns final ``(x, xi, D)`` or a dense solution."""
    d = field.d
    X = np.asarray(X, float).reshape(-1, d)
    XI = np.asarray(XI, float).reshape(-1, d)
    n = X.shape[0]

    def rhs(s, y):
        x = y[:n * d].reshape(n, d)
        xi = y[n * d:2 * n * d].reshape(n, d)
        gx, gxi = field.grad(x, xi)
        # integrate in s = -time so the solver steps forward
        return np.concatenate([-gxi.ravel(), gx.ravel(), field.damping(x, xi)])

    y0 = np.concatenate([X.ravel(), XI.ravel(), np.zeros(n)])
    if t == 0:
        return X, XI, np.zeros(n), None
    sol = solve_ivp(rhs, (0.0, t), y0, method="DOP853", rtol=tol, atol=tol * 1e-2,
                    dense_output=dense)
    if sol.status != 0:
        raise RuntimeError(f"backward flow failed: {sol.message}")
    yf = sol.y[:, -1]
    return (yf[:n * d].reshape(n, d), yf[n * d:2 * n * d].reshape(n, d), yf[2 * n * d:],
            sol.sol if dense else None)


def egorov_transport(field: HamiltonianField, a: Callable, t: float, X, XI,
                     tol: float = 1e-11) -> np.ndarray:
    """``a0(t)(z) = exp(2 int_{-t}^0 h1(Phi_s z) ds) a(Phi_{-t} z)`` at grid nodes.

    Nodes whose backward ray leaves the domain get 0 (``a`` is compactly
    supported inside it).
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    X = np.asarray(X, float)
    shape = X.shape if field.d == 1 else X.shape[:-1]
    xb, xib, D, _ = _backward_batch(field, X, XI, t, tol)
    out = np.exp(2 * D) * np.asarray(a(xb, xib), float)
    out = np.where(field.inside(xb), out, 0.0)
    return out.reshape(shape)


def pi_symbol(field: HamiltonianField, l2: Callable, T: float, X, XI, tol: float = 1e-8,
              max_level: int = 14, flow_tol: float = 1e-11) -> np.ndarray:
    """``pi(z) = int_0^T exp(2 int_{-t}^0 h1(Phi_s z) ds) l2(Phi_{-t} z, -H0(z)) dt``.

    Composite Simpson on a doubling time grid, refined until the Richardson
    estimate ``|S_2n - S_n| / 15`` is below ``tol`` at every node; the
    backward flow is evaluated through the integrator's dense output.
    ``l2(x, xi, omega)`` is the source symbol.
    """
    if not T >= 0:
        raise ValueError("T must be >= 0")
    d = field.d
    X = np.asarray(X, float)
    shape = X.shape if d == 1 else X.shape[:-1]
    x0 = X.reshape(-1, d)
    xi0 = np.asarray(XI, float).reshape(-1, d)
    n = x0.shape[0]
    if T == 0:
        return np.zeros(shape)
    omega = -field.H(x0, xi0)
    _, _, _, dense = _backward_batch(field, x0, xi0, T, flow_tol, dense=True)

    def integrand(s):
        y = dense(s)
        x = y[:n * d].reshape(n, d)
        xi = y[n * d:2 * n * d].reshape(n, d)
        val = np.exp(2 * y[2 * n * d:]) * np.asarray(l2(x, xi, omega), float)
        return np.where(field.inside(x), val, 0.0)

    cache = {}

    def f(i, m):
        key = (i * (2 ** max_level) // m)
        if key not in cache:
            cache[key] = integrand(T * i / m)
        return cache[key]

    def simpson(m):
        h = T / m
        acc = f(0, m) + f(m, m)
        for i in range(1, m):
            acc = acc + (4 if i % 2 else 2) * f(i, m)
        return acc * h / 3

    m = 2
    prev = simpson(m)
    for _ in range(max_level - 1):
        m *= 2
        cur = simpson(m)
        err = np.max(np.abs(cur - prev)) / 15
        if err < tol:
            out = cur + (cur - prev) / 15
            return np.maximum(out, 0.0).reshape(shape) if np.all(out >= -tol) else out.reshape(shape)
        prev = cur
    raise RuntimeError(f"pi-symbol quadrature did not converge (error {err:.2e})")


def symbol_grid_csv(X, XI, values, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "xi", "value"])
        for x, xi, v in zip(np.ravel(X), np.ravel(XI), np.ravel(values)):
            w.writerow([repr(float(x)), repr(float(xi)), repr(float(v))])
    return path
