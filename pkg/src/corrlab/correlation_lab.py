"""Noise cross-correlations: estimators, exact covariance formulas and checks.

Convention: ``C_{A,B}(tau) = E[u(A, t + tau) conj(u(B, t))]``, so that the
stationary covariance operator is ``C(tau) = Omega(tau) Pi`` for ``tau``
beyond the source correlation time and ``C(-tau) = C(tau)^*``.
"""
import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .propagation import (FieldTrajectory, FirstOrderModel, SecondOrderModel,
                          TwoComponentModel, greens_function, simulate_stations)
from .spectral_core import wave_kernels
from .stochastic_source import CovarianceKernel, NoiseSpec, covariance_kernel

PROVENANCES = ("empirical", "theoretical_quadrature", "closed_form")


@dataclass
class CorrelationFunction:
    """Correlations on a uniform lag grid.

    ``values`` has shape ``(n_pairs, n_lags)`` for scalar outputs and
    ``(n_pairs, n_lags, c, c)`` for matrix-valued ones.
    """

    tau: np.ndarray
    pairs: list
    values: np.ndarray
    provenance: str = "theoretical_quadrature"
    sigma: Optional[np.ndarray] = None
    T: Optional[float] = None
    realizations: int = 0

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        self.tau = np.asarray(self.tau, float)
        self.pairs = [tuple(int(v) for v in p) for p in self.pairs]
        if self.tau.size > 2:
            d = np.diff(self.tau)
            if np.max(np.abs(d - d[0])) > 1e-9 * max(1.0, abs(d[0])):
                raise ValueError("lag grid must be uniform")

    @property
    def lag_spacing(self) -> float:
        return float(self.tau[1] - self.tau[0])

    def pair(self, A: int, B: int) -> np.ndarray:
        return self.values[self.pairs.index((A, B))]

    def pair_sigma(self, A: int, B: int) -> np.ndarray:
        if self.sigma is None:
            raise ValueError("no Monte Carlo error attached")
        return self.sigma[self.pairs.index((A, B))]

    def hermitian_error(self) -> float:
        """``max |C_{A,B}(-tau) - C_{B,A}(tau)^*|`` over pairs present in both orders."""
        flip = self.tau[::-1]
        if np.max(np.abs(flip + self.tau)) > 1e-9 * max(1.0, np.max(np.abs(self.tau))):
            raise ValueError("lag grid is not symmetric about 0")
        err = 0.0
        for A, B in self.pairs:
            if (B, A) not in self.pairs:
                continue
            lhs = self.pair(A, B)[::-1]
            rhs = self.pair(B, A)
            if rhs.ndim == 3:
                rhs = np.swapaxes(rhs, 1, 2)
            err = max(err, float(np.max(np.abs(lhs - rhs.conj()))))
        return err

    def to_csv(self, path) -> Path:
        """Columns ``pair_id, tau, re, im, sigma`` (components appended to the pair id)."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["pair_id", "tau", "re", "im", "sigma"])
            for p, (A, B) in enumerate(self.pairs):
                vals = self.values[p]
                sig = None if self.sigma is None else self.sigma[p]
                comps = [((), "")] if vals.ndim == 1 else [
                    ((j, k), f":{j}{k}") for j in range(vals.shape[1]) for k in range(vals.shape[2])]
                for idx, suffix in comps:
                    for l, t in enumerate(self.tau):
                        v = vals[(l,) + idx]
                        s = "" if sig is None else repr(float(sig[(l,) + idx]))
                        w.writerow([f"{A}-{B}{suffix}", repr(float(t)), repr(float(v.real)),
                                    repr(float(v.imag)), s])
        return path


def symmetric_lags(max_lag: float, spacing: float) -> np.ndarray:
    n = int(round(max_lag / spacing))
    return np.arange(-n, n + 1) * spacing


# ---------------------------------------------------------------------------
# empirical estimator


def _lagged_products(x: np.ndarray, y: np.ndarray, max_lag: int) -> np.ndarray:
    """``sum_n x[n + l] conj(y[n])`` for ``l = -max_lag..max_lag`` via FFT."""
    n = x.size
    nfft = 1 << int(np.ceil(np.log2(n + max_lag + 1)))
    fx = np.fft.fft(x, nfft)
    fy = np.fft.fft(y, nfft)
    r = np.fft.ifft(fx * fy.conj())
    return np.concatenate([r[nfft - max_lag:], r[:max_lag + 1]])


def empirical_correlation(trajs: Union[FieldTrajectory, Sequence[FieldTrajectory]],
                          pairs: Sequence[tuple], max_lag: float,
                          window: Optional[tuple] = None, lag_stride: int = 1,
                          component: int = 0) -> CorrelationFunction:
    """Time-averaged correlation ``C_T``, averaged over realizations.

    Each lag is normalized by its own number of overlapping samples.  With
    several realizations ``sigma`` is the standard error of the mean,
    ``sqrt(mean |C_T - mean|^2 / R)``, taken across realizations.

    ``window = (T_start, T)`` in absolute time; defaults to the whole record.
    """
    if isinstance(trajs, FieldTrajectory):
        trajs = [trajs]
    dt = trajs[0].dt
    first = trajs[0]
    if window is None:
        start, length = first.t0, (first.steps - 1) * dt
    else:
        start, length = float(window[0]), float(window[1])
    if start < first.t0 - 1e-9 * max(1.0, first.t0):
        raise ValueError("window starts before the end of the burn-in")
    i0 = int(round((start - first.t0) / dt))
    n = int(round(length / dt)) + 1
    m = int(round(max_lag / dt))
    if not max_lag < length / 4:
        raise ValueError("window too short: max_lag must be below T/4")
    est = []
    for traj in trajs:
        if traj.dt != dt:
            raise ValueError("realizations have different dt")
        if i0 + n > traj.steps:
            raise ValueError("window extends past the end of the trajectory")
        row = []
        for A, B in pairs:
            x = traj.station_series(A, component)[i0:i0 + n]
            y = traj.station_series(B, component)[i0:i0 + n]
            row.append(_lagged_products(x, y, m))
        est.append(row)
    counts = n - np.abs(np.arange(-m, m + 1))
    est = np.asarray(est) / counts  # (R, P, L)
    centre = m % lag_stride
    lags = np.arange(-m, m + 1)[centre::lag_stride]
    est = est[:, :, centre::lag_stride]
    mean = est.mean(axis=0)
    sigma = None
    if len(trajs) > 1:
        sigma = np.sqrt(np.mean(np.abs(est - mean) ** 2, axis=0) * len(trajs) / (len(trajs) - 1)
                        / len(trajs))
    return CorrelationFunction(lags * dt, list(pairs), mean, "empirical", sigma,
                               T=length, realizations=len(trajs))


# ---------------------------------------------------------------------------
# exact covariance in eigen-coordinates


class _StationaryCovariance:
    """Stationary covariance of the modal state driven by a separable kernel.

    In eigen-coordinates ``z_i`` of the block generator (eigenvalue
    ``lam_i``, forcing gain ``b_i``), with ``K`` represented on its tap grid
    as impulses ``w_l delta(t - tau_l)``,

        E z_i(tau) conj(z_j(0)) = b_i conj(b_j) S_ij
            sum_l w_l exp(lam_i (tau - tau_l)) exp(kappa s_l) / (-kappa),

    with ``kappa = lam_i + conj(lam_j)`` and ``s_l = max(0, tau_l - tau)``.
    For ``tau >= t0`` every ``s_l`` vanishes and the sum factors as
    ``Omega(tau) Pi`` with ``Pi`` the value at ``tau = 0``.
    """

    def __init__(self, model, ck: CovarianceKernel, tol: float = 1e-10):
        if isinstance(model, SecondOrderModel) and not model.constant:
            raise ValueError("variable-coefficient models are not diagonalizable mode-wise")
        lam, v, vinv = model.eig()
        nm, nc = lam.shape
        b = np.einsum("mij,mj->mi", vinv, model.forcing_vector())
        self.lam = lam.reshape(-1)
        self.nc = nc
        self.mode_of = np.repeat(np.arange(nm), nc)
        self.v = v
        s = ck.spatial_matrix()
        bb = b.reshape(-1)
        self.weight = np.outer(bb, bb.conj()) * s[np.ix_(self.mode_of, self.mode_of)]
        kappa = self.lam[:, None] + self.lam[None, :].conj()
        active = np.abs(self.weight) > tol * max(np.max(np.abs(self.weight)), 1e-300)
        if np.any(active & (kappa.real >= -1e-14)):
            raise ValueError("a forced mode does not decay (e.g. the zero mode): "
                             "no stationary covariance; exclude it with the source band")
        self.weight = np.where(active, self.weight, 0.0)
        self.kappa = np.where(active, kappa, -1.0)
        self.tl = ck.lag_times
        self.wl = ck.quadrature_weights
        self.t0 = ck.t0

    def eigen_block(self, tau: float) -> np.ndarray:
        """``E z(tau) z(0)^*`` for ``tau >= 0``."""
        acc = np.zeros_like(self.weight)
        for tl, wl in zip(self.tl, self.wl):
            s0 = max(0.0, tl - tau)
            acc += wl * np.exp(self.lam * (tau - tl))[:, None] * np.exp(self.kappa * s0)
        return self.weight * acc / (-self.kappa)

    def readout(self, rows: np.ndarray) -> np.ndarray:
        """Map readout rows over ``(mode, comp)`` to rows over eigen-coordinates."""
        nm = self.v.shape[0]
        r = rows.reshape(rows.shape[0], nm, self.nc)
        return np.einsum("pmc,mck->pmk", r, self.v).reshape(rows.shape[0], -1)

    def kernel(self, tau: np.ndarray, left: np.ndarray, right: np.ndarray) -> np.ndarray:
        """``L C(tau) R^*`` for readouts ``L``, ``R`` over ``(mode, comp)``; shape ``(n_tau, p, q)``."""
        lz, rz = self.readout(left), self.readout(right)
        out = np.empty((len(tau), left.shape[0], right.shape[0]), dtype=complex)
        for i, t in enumerate(tau):
            if t >= 0:
                out[i] = lz @ self.eigen_block(t) @ rz.conj().T
            else:
                out[i] = (rz @ self.eigen_block(-t) @ lz.conj().T).conj().T
        return out


def _station_readout(model, stations, components) -> np.ndarray:
    """Rows ``e_m(A) delta_{c, c_out}`` over ``(mode, comp)``, ordered (station, component)."""
    rows = model.dec.station_rows(stations)
    nc = model.n_comp
    out = np.zeros((len(stations) * len(components), rows.shape[1], nc), dtype=complex)
    for s in range(len(stations)):
        for k, c in enumerate(components):
            out[s * len(components) + k, :, c] = rows[s]
    return out.reshape(out.shape[0], -1)


def theoretical_correlation(model, ck: CovarianceKernel, tau: np.ndarray,
                            pairs: Sequence[tuple],
                            components: Optional[Sequence[int]] = None) -> CorrelationFunction:
    """Exact stationary correlation ``C_{A,B}(tau)`` of the causal solution."""
    tau = np.asarray(tau, float)
    comps = tuple(model.output_components if components is None else components)
    cov = _StationaryCovariance(model, ck)
    stations = sorted({s for p in pairs for s in p})
    rows = _station_readout(model, stations, comps)
    full = cov.kernel(tau, rows, rows)
    nc = len(comps)
    vals = []
    for A, B in pairs:
        ia, ib = stations.index(A) * nc, stations.index(B) * nc
        block = full[:, ia:ia + nc, ib:ib + nc]
        vals.append(block[:, 0, 0] if nc == 1 else block)
    return CorrelationFunction(tau, list(pairs), np.asarray(vals), "theoretical_quadrature")


def stationary_covariance(model, ck: CovarianceKernel) -> np.ndarray:
    """``Pi = C(0)`` as a matrix over ``(mode, comp)``."""
    cov = _StationaryCovariance(model, ck)
    n = cov.lam.size
    return cov.kernel(np.array([0.0]), np.eye(n), np.eye(n))[0]


def exact_scalar_formula(model: FirstOrderModel, spec: NoiseSpec, tau: np.ndarray,
                         pairs: Sequence[tuple]) -> CorrelationFunction:
    """``C(tau) = (1/2k) F Omega(tau)`` for ``tau > t0`` and constant damping ``k``.

    ``F`` is diagonal in the modes: ``S_mm`` times the lag-grid Fourier
    transform of ``Psi(t) e^{k t}`` taken at frequency ``-H0/eps``.
    """
    if not isinstance(model, FirstOrderModel):
        raise TypeError("exact scalar formula needs a first-order model")
    h1 = model.h1_values()
    if np.ptp(h1) > 0:
        raise ValueError("exact scalar formula needs constant damping")
    tau = np.asarray(tau, float)
    if np.any(tau <= spec.t0):
        raise ValueError(f"formula holds for tau > t0 = {spec.t0:g}")
    ck = covariance_kernel(spec, model.dec)
    if not ck.diagonal:
        raise ValueError("exact scalar formula needs a translation-invariant source")
    k = -float(h1[0])
    omega = model.h0_values() / model.eps
    tl, wl = ck.lag_times, ck.quadrature_weights
    ft = np.exp(k * tl)[None, :] * np.exp(1j * omega[:, None] * tl[None, :]) @ wl
    F = ck.spatial * ft
    lam = -1j * omega - k
    vals = []
    for A, B in pairs:
        kern = model.dec.basis[A] * model.dec.basis[B].conj() * F / (2 * k)
        vals.append(np.exp(np.outer(tau, lam)) @ kern)
    return CorrelationFunction(tau, list(pairs), np.asarray(vals), "closed_form")


def white_noise_closed_form(model: SecondOrderModel, tau, A: int, B: int) -> np.ndarray:
    """White-noise correlation of ``u_tt + 2a u_t - Lap u = f``.

    ``e^{-a|tau|}/(4a) [mu^{-1} (cos|tau|Q + a sin|tau|Q / Q)](A, B)``,
    summed over the modes with ``mu > 0`` (the zero mode has no stationary
    state under white forcing).
    """
    if not isinstance(model, SecondOrderModel) or not model.constant:
        raise TypeError("closed form needs a second-order model with constant a")
    a = float(model.a)
    dec = model.dec
    mu = dec.eigenvalues
    keep = mu > 0
    t = np.abs(np.atleast_1d(np.asarray(tau, float)))
    wk = wave_kernels(mu[None, keep] - a * a, t[:, None], a)
    kern = dec.basis[A, keep] * dec.basis[B, keep].conj() / (4 * a * mu[keep])
    out = (wk.cos_part + a * wk.sinc_part) @ kern
    return out if np.ndim(tau) else out[0]


def white_noise_closed_form_derivative(model: SecondOrderModel, tau, A: int, B: int) -> np.ndarray:
    """Term-wise analytic ``d/dtau`` of :func:`white_noise_closed_form` for ``tau > 0``.

    Uses ``d cos(tQ)/dt = -Q^2 sin(tQ)/Q``, ``d (sin(tQ)/Q)/dt = cos(tQ)`` and
    the product rule on the envelope.
    """
    a = float(model.a)
    dec = model.dec
    mu = dec.eigenvalues
    keep = mu > 0
    q2 = mu[keep] - a * a
    t = np.atleast_1d(np.asarray(tau, float))
    if np.any(t <= 0):
        raise ValueError("analytic derivative is evaluated for tau > 0")
    wk = wave_kernels(q2[None, :], t[:, None], a)
    c, s = wk.cos_part, wk.sinc_part
    envelope = -a * (c + a * s)
    bracket = -q2 * s + a * c
    kern = dec.basis[A, keep] * dec.basis[B, keep].conj() / (4 * a * mu[keep])
    return (envelope + bracket) @ kern


def green_without_zero_mode(model: SecondOrderModel, t, A: int, B: int) -> np.ndarray:
    """``G_a(t; A, B)`` with the ``mu = 0`` mode removed, matching the closed form."""
    g = greens_function(model, t, A, B)
    dec = model.dec
    zero = dec.eigenvalues == 0
    if np.any(zero):
        a = float(model.a)
        tt = np.atleast_1d(t)
        s = np.asarray(wave_kernels(-a * a, np.where(tt > 0, tt, 0.0), a).sinc_part)
        g = g - np.where(tt > 0, s, 0.0) * np.sum(dec.basis[A, zero] * dec.basis[B, zero].conj())
    return g


def derivative_green_identity(model: SecondOrderModel, tau: np.ndarray, A: int, B: int,
                              steps: Sequence[float] = (1e-2, 5e-3, 2.5e-3)) -> dict:
    """Check ``dC/dtau = -G_a(tau)/(4a)`` for ``tau > 0`` (``+G_a(-tau)/(4a)`` for ``tau < 0``).

    Returns the analytic (term-wise) residual, central-difference residuals
    for each step ``h``, their fitted order and the mirrored residual.
    """
    tau = np.asarray(tau, float)
    if np.any(tau <= 0):
        raise ValueError("tau grid must lie in (0, horizon]")
    a = float(model.a)
    target = -green_without_zero_mode(model, tau, A, B) / (4 * a)
    scale = max(np.max(np.abs(target)), 1e-300)
    analytic = np.max(np.abs(white_noise_closed_form_derivative(model, tau, A, B) - target))
    fd = []
    for h in steps:
        if np.any(tau - h <= 0):
            raise ValueError("differencing step reaches tau <= 0")
        d = (white_noise_closed_form(model, tau + h, A, B)
             - white_noise_closed_form(model, tau - h, A, B)) / (2 * h)
        fd.append(float(np.max(np.abs(d - target))))
    order = float(np.polyfit(np.log(steps), np.log(fd), 1)[0])
    h = steps[-1]
    dneg = (white_noise_closed_form(model, -tau + h, A, B)
            - white_noise_closed_form(model, -tau - h, A, B)) / (2 * h)
    mirrored = float(np.max(np.abs(dneg + target)))
    return {"test": "derivative_green_identity", "analytic_residual": float(analytic),
            "relative_analytic_residual": float(analytic / scale),
            "steps": list(map(float, steps)), "fd_residuals": fd, "order": order,
            "mirrored_residual": mirrored}


def identity_report(name: str, residual: float, tolerance: float) -> dict:
    return {"test": name, "residual": float(residual), "tolerance": float(tolerance),
            "pass": bool(residual <= tolerance)}


def write_report(reports: Sequence[dict], path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(list(reports), indent=2))
    return path


# ---------------------------------------------------------------------------
# travel time


def _bandpass(y: np.ndarray, dt: float, band: Optional[tuple]) -> np.ndarray:
    """Zero-phase band-pass over the lag axis (brick-wall in angular frequency)."""
    if band is None:
        return y
    n = y.size
    f = np.fft.fft(y)
    w = np.abs(2 * np.pi * np.fft.fftfreq(n, dt))
    lo, hi = band
    f[(w < lo) | (w > hi)] = 0.0
    return np.fft.ifft(f)


def pick_travel_time(corr: CorrelationFunction, pair: tuple, band: Optional[tuple] = None,
                     derivative_order: int = 1, snr_min: float = 3.0) -> dict:
    """Arrival time as the largest ``|d^n C/dtau^n|`` over ``tau > 0``.

    ``band`` is an angular-frequency interval for the zero-phase smoothing.
    ``snr`` is the peak of the smoothed derivative over the median of the
    raw derivative on ``tau > 0``.  Identical stations are flagged
    degenerate instead of picked.
    """
    A, B = pair
    dt = corr.lag_spacing
    if A == B:
        return {"tau": float("nan"), "amplitude": float("nan"), "snr": float("nan"),
                "degenerate": True}
    y = corr.pair(A, B)
    if y.ndim != 1:
        raise ValueError("travel-time picking needs a scalar correlation")
    raw = y
    smooth = _bandpass(y, dt, band)
    for _ in range(derivative_order):
        raw = np.gradient(raw, dt)
        smooth = np.gradient(smooth, dt)
    pos = corr.tau > 0
    # drop the outermost lag where one-sided differences are used
    pos[-derivative_order:] = False
    mag = np.abs(smooth[pos])
    i = int(np.argmax(mag))
    floor = np.median(np.abs(raw[pos]))
    snr = float(mag[i] / floor) if floor > 0 else float("inf")
    if not snr >= snr_min:
        raise ValueError(f"no reliable arrival (snr {snr:.2f} < {snr_min:g})")
    return {"tau": float(corr.tau[pos][i]), "amplitude": float(mag[i]), "snr": snr,
            "degenerate": i == 0}


# ---------------------------------------------------------------------------
# ergodic convergence


def ergodic_convergence(trajs: Sequence[FieldTrajectory], pair: tuple, lag: float,
                        T_list: Sequence[float]) -> dict:
    """Variance across realizations of ``C_T(lag)`` against ``T``.

    Each ``T`` uses the prefix window ``[t0, t0 + T]`` of every record.
    The slope of ``log Var`` on ``log T`` is returned with its standard
    error from ``se(log s^2) = sqrt(2/(R-1))`` for Gaussian samples.
    """
    T_list = np.asarray(sorted(T_list), float)
    R = len(trajs)
    if T_list.size < 3 or T_list[-1] / T_list[0] < 16:
        raise ValueError("need >= 3 window lengths spanning a factor >= 16")
    if R < 2:
        raise ValueError("need at least two realizations")
    dt = trajs[0].dt
    A, B = pair
    l = int(round(lag / dt))
    var = []
    for T in T_list:
        n = int(round(T / dt))
        vals = []
        for tr in trajs:
            if n > tr.steps:
                raise ValueError("record shorter than the largest window")
            x = tr.station_series(A)
            y = tr.station_series(B)
            if l >= 0:
                vals.append(np.mean(x[l:n] * y[:n - l].conj()))
            else:
                vals.append(np.mean(x[:n + l] * y[-l:n].conj()))
        vals = np.asarray(vals)
        var.append(float(np.mean(np.abs(vals - vals.mean()) ** 2) * R / (R - 1)))
    var = np.asarray(var)
    out = {"T": T_list.tolist(), "variance": var.tolist(), "realizations": R}
    if np.any(var <= 1e-300):
        out.update(slope=float("nan"), slope_stderr=float("nan"), degenerate=True)
        return out
    x = np.log(T_list)
    slope, icpt = np.polyfit(x, np.log(var), 1)
    se = np.sqrt(2.0 / (R - 1)) / np.sqrt(np.sum((x - x.mean()) ** 2))
    out.update(slope=float(slope), intercept=float(icpt), slope_stderr=float(se),
               degenerate=False)
    return out


# ---------------------------------------------------------------------------
# branch-resolved correlations


def _branch_readout(model: TwoComponentModel, station: int, branch: int,
                    projector: str = "exact") -> np.ndarray:
    """Row over ``(mode, comp)`` reading branch ``branch`` of ``U`` at ``station``.

    ``projector="exact"`` uses the dual eigenvectors of the damped block;
    ``"principal"`` uses the unitary polarizations of the undamped symbol.
    """
    if projector == "exact":
        _, left = model.branch_eigenbasis()
        w = left[:, branch, :]
    elif projector == "principal":
        w = model.branch_basis()[:, :, branch].conj()
    else:
        raise ValueError(f"unknown projector {projector!r}")
    row = model.dec.station_rows([station])[0][:, None] * w
    return row.reshape(1, -1)


def branch_correlation(model: TwoComponentModel, ck: CovarianceKernel, tau: np.ndarray,
                       A: int, B: int, projector: str = "exact") -> np.ndarray:
    """``C^{j,k}_{A,B}(tau)`` for branches ``j, k`` in ``(+, -)``; shape ``(n_tau, 2, 2)``."""
    cov = _StationaryCovariance(model, ck)
    left = np.vstack([_branch_readout(model, A, j, projector) for j in range(2)])
    right = np.vstack([_branch_readout(model, B, k, projector) for k in range(2)])
    return cov.kernel(np.asarray(tau, float), left, right)


def exclusion_resolved(spec: NoiseSpec, B: int, radius: float) -> bool:
    """Whether the grid resolves a source-free ball of ``radius`` around ``B``."""
    h = max(spec.domain.spacing)
    win = spec.window_values()
    if win is None:
        return False
    pts = spec.domain.points()
    ext = np.asarray(spec.domain.extent)
    d = np.abs(pts - pts[B])
    d = np.minimum(d, ext - d) if spec.domain.fourier else d
    dist = np.sqrt(np.sum(d ** 2, axis=1))
    inside = dist < radius
    return bool(radius >= 2 * h and np.all(win[inside] == 0))


def cross_branch_correlation(model: TwoComponentModel, spec: NoiseSpec, tau: np.ndarray,
                             A: int, B: int, exclusion_radius: Optional[float] = None,
                             projector: str = "exact", check_window: bool = True) -> dict:
    """Ratio ``max|C^{+,-}_{A,B}| / max|C^{+,+}_{A,B}|`` over lags ``tau > 0``.

    Positive lags are those where ``B`` is observed first; a source-free
    neighbourhood of ``B`` then removes the boundary term of the time
    integral.  ``ratio_all_lags`` includes ``tau < 0`` for reference.
    ``check_window=False`` skips the exclusion check (control runs).
    """
    if not isinstance(model, TwoComponentModel):
        raise TypeError("cross-branch correlation needs a two-component model")
    radius = 4 * spec.eps if exclusion_radius is None else exclusion_radius
    if check_window and not exclusion_resolved(spec, B, radius):
        raise ValueError("source exclusion around B is missing or not resolved by the grid")
    tau = np.asarray(tau, float)
    pos = tau > 0
    if not np.any(pos):
        raise ValueError("lag grid has no positive lags")
    ck = covariance_kernel(spec, model.dec)
    c = branch_correlation(model, ck, tau, A, B, projector)
    pp = float(np.max(np.abs(c[pos, 0, 0])))
    pm = float(np.max(np.abs(c[pos, 0, 1])))
    every = float(np.max(np.abs(c[:, 0, 1])) / np.max(np.abs(c[:, 0, 0])))
    return {"eps": model.eps, "ratio": pm / pp, "max_pp": pp, "max_pm": pm,
            "ratio_all_lags": every, "projector": projector}


def simulate_branches(model: TwoComponentModel, spec: NoiseSpec, steps: int, A: int, B: int,
                      realizations: int, burn_in: Optional[float] = None,
                      projector: str = "exact") -> list:
    """Branch-resolved series on channels ``0..3 = [+A, -A, +B, -B]`` per realization."""
    rows = np.vstack([_branch_readout(model, s, j, projector) for s in (A, B) for j in range(2)])
    out = []
    for r in range(realizations):
        tr = simulate_stations(model, spec, steps, [A], realization_index=r, burn_in=burn_in,
                               readout=rows.reshape(4, model.dec.n_modes, model.n_comp))
        out.append(tr)
    return out
