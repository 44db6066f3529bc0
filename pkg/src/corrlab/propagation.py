"""Damped evolution groups, causal solutions and Green's functions.

Three constant-coefficient model families share one modal representation:
each Laplacian mode ``m`` carries a small block generator ``G_m`` (1x1 or
2x2) and a forcing vector ``B_m`` so that the modal state obeys
``y' = G_m y + B_m f_m``.

* :class:`FirstOrderModel` -- ``u_t + (i/eps) Op(H0 + eps H1) u = f``.
* :class:`SecondOrderModel` -- ``u_tt + 2 a u_t - Lap u = f`` (state ``(u, u_t)``).
* :class:`TwoComponentModel` -- the first-order reduction
  ``U = (eps sqrt(-Lap) u, -i eps u_t)`` of the second-order model.

The damping coefficient ``a`` follows the ``u_tt + 2 a u_t`` convention in
all Green's-function and correlation identities.
"""
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np
from scipy import signal

from .spectral_core import SpectralDecomposition, wave_kernels
from .stochastic_source import NoiseSpec, SourceTrajectory, stream_source


class _ModalModel:
    """Shared machinery for models whose generator is block diagonal in modes."""

    n_comp = 1
    output_components = (0,)
    variant = ""

    def generator(self) -> np.ndarray:
        raise NotImplementedError

    def forcing_vector(self) -> np.ndarray:
        raise NotImplementedError

    def propagator(self, t: float) -> np.ndarray:
        """Exact ``Omega(t)`` per mode, shape ``(n_modes, c, c)``."""
        lam, v, vinv = self.eig()
        return np.einsum("mij,mj,mjk->mik", v, np.exp(lam * t), vinv)

    def eig(self):
        """Per-mode eigen-decomposition ``G = V diag(lam) V^-1`` (cached)."""
        cached = getattr(self, "_eig_cache", None)
        if cached is not None:
            return cached
        g = self.generator()
        if g.shape[1] == 1:
            lam = g[:, :, 0]
            v = np.ones_like(g)
            vinv = np.ones_like(g)
        else:
            lam, v = np.linalg.eig(g)
            vinv = np.linalg.inv(v)
            cond = np.linalg.cond(v)
            if np.any(cond > 1e10):
                raise ValueError("critically damped mode: block generator is defective")
        object.__setattr__(self, "_eig_cache", (lam, v, vinv))
        return lam, v, vinv

    @property
    def decay_rate(self) -> float:
        """Uniform exponential decay rate of ``Omega(t)`` (``1/T_att``)."""
        return float(np.min(-np.max(self.energy_eigenvalues().real, axis=1)))

    def energy_eigenvalues(self) -> np.ndarray:
        lam, _, _ = self.eig()
        return lam

    @property
    def T_att(self) -> float:
        return 1.0 / self.decay_rate

    def describe(self) -> dict:
        raise NotImplementedError

    def model_hash(self) -> str:
        blob = json.dumps(self.describe(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class FirstOrderModel(_ModalModel):
    """Scalar semiclassical model; mode factor ``exp(-i H0(eps k) t/eps + h1(eps k) t)``.

    ``h0`` and ``h1`` take scaled wave vectors ``xi`` of shape
    ``(n_modes, ndim)``; ``h1`` may also be a negative constant.
    """

    dec: SpectralDecomposition
    h0: Callable
    h1: Union[float, Callable] = -1.0
    eps: float = 1.0
    variant = "first_order_scalar"

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if np.max(self.h1_values()) >= 0:
            raise ValueError("damping symbol h1 must be strictly negative")

    @property
    def xi(self) -> np.ndarray:
        return self.eps * self.dec.wavevectors

    def h0_values(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.h0(self.xi), float), (self.dec.n_modes,))

    def h1_values(self) -> np.ndarray:
        if callable(self.h1):
            return np.broadcast_to(np.asarray(self.h1(self.xi), float), (self.dec.n_modes,))
        return np.full(self.dec.n_modes, float(self.h1))

    @property
    def damping_floor(self) -> float:
        return float(-np.max(self.h1_values()))

    def generator(self) -> np.ndarray:
        return (-1j * self.h0_values() / self.eps + self.h1_values())[:, None, None]

    def forcing_vector(self) -> np.ndarray:
        return np.ones((self.dec.n_modes, 1), dtype=complex)

    def propagator(self, t: float) -> np.ndarray:
        return np.exp(self.generator() * t)

    def describe(self) -> dict:
        return {"variant": self.variant, "eps": self.eps,
                "h0": self.h0_values().tolist(), "h1": self.h1_values().tolist(),
                "domain": self.dec.domain.to_dict()}


@dataclass(frozen=True, eq=False)
class SecondOrderModel(_ModalModel):
    """``u_tt + 2 a u_t - Lap u = f`` with constant ``a`` or a grid function ``a(x)``."""

    dec: SpectralDecomposition
    a: Union[float, np.ndarray] = 0.5
    eps: float = 1.0
    n_comp = 2
    output_components = (0,)
    variant = "second_order"

    def __post_init__(self):
        if np.min(np.asarray(self.a)) <= 0:
            raise ValueError("damping must be strictly positive everywhere")
        if np.ndim(self.a) not in (0,) and np.size(self.a) != self.dec.basis.shape[0]:
            raise ValueError("a(x) must be sampled on the grid")

    @property
    def constant(self) -> bool:
        return np.ndim(self.a) == 0

    @property
    def damping_floor(self) -> float:
        return float(np.min(self.a))

    def _require_constant(self):
        if not self.constant:
            raise ValueError("operation needs constant damping a")

    def generator(self) -> np.ndarray:
        self._require_constant()
        mu = self.dec.eigenvalues
        g = np.zeros((mu.size, 2, 2), dtype=complex)
        g[:, 0, 1] = 1.0
        g[:, 1, 0] = -mu
        g[:, 1, 1] = -2.0 * self.a
        return g

    def forcing_vector(self) -> np.ndarray:
        b = np.zeros((self.dec.n_modes, 2), dtype=complex)
        b[:, 1] = 1.0
        return b

    def propagator(self, t: float) -> np.ndarray:
        """Closed-form 2x2 mode solution built from the wave kernels."""
        self._require_constant()
        mu = self.dec.eigenvalues
        a = float(self.a)
        wk = wave_kernels(mu - a * a, np.full(mu.shape, float(t)), a)
        c, s = np.asarray(wk.cos_part), np.asarray(wk.sinc_part)
        out = np.empty((mu.size, 2, 2), dtype=complex)
        out[:, 0, 0] = c + a * s
        out[:, 0, 1] = s
        out[:, 1, 0] = -mu * s
        out[:, 1, 1] = c - a * s
        return out

    def energy_eigenvalues(self) -> np.ndarray:
        # variable damping: the floor min a(x) sets the guaranteed rate
        return _wave_exponents(self.dec.eigenvalues, float(np.min(self.a)))

    def describe(self) -> dict:
        return {"variant": self.variant, "a": np.asarray(self.a).tolist(), "eps": self.eps,
                "domain": self.dec.domain.to_dict()}


@dataclass(frozen=True, eq=False)
class TwoComponentModel(_ModalModel):
    """First-order system for ``U = (eps sqrt(mu) u, -i eps u_t)``.

    Per mode ``Hhat = [[0, -eps sqrt(mu)], [-eps sqrt(mu), -2 i eps a]]`` and
    ``U_t = -(i/eps) Hhat U + (0, -i eps f)``.
    """

    dec: SpectralDecomposition
    a: float = 0.5
    eps: float = 1.0
    n_comp = 2
    output_components = (0, 1)
    variant = "two_component"

    def __post_init__(self):
        if np.ndim(self.a) != 0:
            raise ValueError("two-component reduction needs constant damping")
        if self.a <= 0:
            raise ValueError("damping must be strictly positive")

    @property
    def damping_floor(self) -> float:
        return float(self.a)

    def hamiltonian_blocks(self) -> np.ndarray:
        r = self.eps * np.sqrt(self.dec.eigenvalues)
        h = np.zeros((r.size, 2, 2), dtype=complex)
        h[:, 0, 1] = -r
        h[:, 1, 0] = -r
        h[:, 1, 1] = -2j * self.eps * self.a
        return h

    def generator(self) -> np.ndarray:
        return -1j / self.eps * self.hamiltonian_blocks()

    def forcing_vector(self) -> np.ndarray:
        b = np.zeros((self.dec.n_modes, 2), dtype=complex)
        b[:, 1] = -1j * self.eps
        return b

    def propagator(self, t: float) -> np.ndarray:
        second = SecondOrderModel(self.dec, self.a, self.eps).propagator(t)
        r = self.eps * np.sqrt(self.dec.eigenvalues)
        d = -1j * self.eps
        out = np.empty_like(second)
        out[:, 1, 1] = second[:, 1, 1]
        out[:, 0, 0] = second[:, 0, 0]
        out[:, 0, 1] = r * second[:, 0, 1] / d
        nz = r > 0
        out[:, 1, 0] = 0.0
        out[nz, 1, 0] = d * second[nz, 1, 0] / r[nz]
        out[~nz, 0, 0] = 1.0
        return out

    def energy_eigenvalues(self) -> np.ndarray:
        return _wave_exponents(self.dec.eigenvalues, self.a)

    def branch_basis(self) -> np.ndarray:
        """Unitary per-mode diagonalizer of the principal symbol.

        Columns are the ``+sqrt(mu)`` and ``-sqrt(mu)`` polarizations
        ``(1, -1)/sqrt(2)`` and ``(1, 1)/sqrt(2)``; the zero mode keeps the
        component basis and is a separate one-dimensional block.
        """
        n = self.dec.n_modes
        v = np.empty((n, 2, 2), dtype=complex)
        v[:] = np.array([[1.0, 1.0], [-1.0, 1.0]]) / np.sqrt(2.0)
        v[self.dec.eigenvalues == 0] = np.eye(2)
        return v

    def branch_values(self) -> np.ndarray:
        r = self.eps * np.sqrt(self.dec.eigenvalues)
        return np.stack([r, -r], axis=1)

    def branch_eigenbasis(self):
        """Exact eigenvectors of the damped block, ordered (+, -).

        Returns right eigenvectors ``R[m, :, j]`` and dual rows ``L[m, j, :]``
        with ``L R = I``.  The ``+`` branch is the eigenvalue ``-a - i q``
        continuing ``+sqrt(mu)``.  Unlike :meth:`branch_basis` these also
        diagonalize the damping term, so the projectors are oblique.  The
        zero mode keeps the component basis.
        """
        lam, v, vinv = self.eig()
        order = np.argsort(lam.imag, axis=1, kind="stable")
        rows = np.arange(lam.shape[0])[:, None]
        right = np.swapaxes(np.swapaxes(v, 1, 2)[rows, order], 1, 2)
        left = vinv[rows, order]
        zero = self.dec.eigenvalues == 0
        right[zero] = np.eye(2)
        left[zero] = np.eye(2)
        return right, left

    def branch_projectors(self) -> np.ndarray:
        v = self.branch_basis()
        return np.einsum("mik,mjk->mkij", v, v.conj())

    def describe(self) -> dict:
        return {"variant": self.variant, "a": float(self.a), "eps": self.eps,
                "domain": self.dec.domain.to_dict()}


def _wave_exponents(mu: np.ndarray, a: float) -> np.ndarray:
    """Exponents ``-a +- sqrt(a^2 - mu)`` per mode; the zero mode keeps only ``-2a``."""
    root = np.sqrt((a * a - mu).astype(complex))
    lam = np.stack([-a + root, -a - root], axis=1)
    lam[mu == 0, 0] = -np.inf
    return lam


DampedWaveModel = Union[FirstOrderModel, SecondOrderModel, TwoComponentModel]


def two_component_reduce(model: SecondOrderModel, eps: Optional[float] = None) -> TwoComponentModel:
    """Reduce a constant-coefficient second-order model to the two-component system."""
    if not isinstance(model, SecondOrderModel):
        raise TypeError("expects a SecondOrderModel")
    if not model.constant:
        raise ValueError("variable damping a(x) has no exact two-component reduction")
    return TwoComponentModel(model.dec, float(model.a), model.eps if eps is None else eps)


def to_energy_coordinates(model: SecondOrderModel, state: np.ndarray) -> np.ndarray:
    """Map modal ``(u, u_t)`` to ``(eps sqrt(mu) u, -i eps u_t)``."""
    r = model.eps * np.sqrt(model.dec.eigenvalues)
    return np.stack([r * state[..., 0], -1j * model.eps * state[..., 1]], axis=-1)


# ---------------------------------------------------------------------------
# evolution


def _check_state(model, state):
    state = np.asarray(state, dtype=complex)
    n = model.dec.basis.shape[0]
    if state.shape != (model.n_comp, n):
        raise ValueError(f"state must have shape ({model.n_comp}, {n})")
    return state


def _variable_damping_step(model: SecondOrderModel, coef: np.ndarray, dt: float) -> np.ndarray:
    """Strang step: half damping in space, exact undamped wave in modes, half damping."""
    dec = model.dec
    decay = np.exp(-2.0 * np.asarray(model.a) * dt / 2)
    ut = dec.synthesize(coef[..., 1]) * decay
    coef = np.stack([coef[..., 0], dec.coefficients(ut)], axis=-1)
    undamped = SecondOrderModel(dec, 1e-300).propagator(dt)
    coef = np.einsum("mij,...mj->...mi", undamped, coef)
    ut = dec.synthesize(coef[..., 1]) * decay
    return np.stack([coef[..., 0], dec.coefficients(ut)], axis=-1)


def evolve(model: DampedWaveModel, state: np.ndarray, t: float,
           max_step: Optional[float] = None) -> np.ndarray:
    """Apply ``Omega(t)`` to a grid state of shape ``(n_comp, n_points)``."""
    if t < 0:
        raise ValueError("evolution is a semigroup: t must be >= 0")
    state = _check_state(model, state)
    dec = model.dec
    coef = dec.coefficients(state).T  # (modes, comp)
    if isinstance(model, SecondOrderModel) and not model.constant:
        h = 0.1 / float(np.max(model.a)) if max_step is None else max_step
        n = max(1, int(np.ceil(t / h)))
        for _ in range(n):
            coef = _variable_damping_step(model, coef, t / n)
    else:
        coef = np.einsum("mij,mj->mi", model.propagator(t), coef)
    return dec.synthesize(coef.T)


# ---------------------------------------------------------------------------
# causal solutions


@dataclass
class FieldTrajectory:
    """Station time series ``series[n, s, c]`` at times ``t0 + n dt``."""

    dt: float
    stations: list
    series: np.ndarray
    t0: float = 0.0
    burn_in: float = 0.0
    seed: int = 0
    realization_index: int = 0
    model_hash: str = ""
    snapshots: Optional[np.ndarray] = None
    snapshot_stride: int = 0

    @property
    def steps(self) -> int:
        return self.series.shape[0]

    def station_series(self, station: int, component: int = 0) -> np.ndarray:
        return self.series[:, self.stations.index(station), component]

    def save(self, prefix) -> Path:
        prefix = Path(prefix)
        np.save(prefix.with_suffix(".npy"), self.series)
        manifest = {"dt": self.dt, "stations": list(map(int, self.stations)),
                    "seed": int(self.seed), "realization_index": int(self.realization_index),
                    "model_hash": self.model_hash, "t0": self.t0, "burn_in": self.burn_in,
                    "shape": list(self.series.shape), "dtype": str(self.series.dtype)}
        path = prefix.with_suffix(".json")
        path.write_text(json.dumps(manifest, indent=2))
        return path

    @classmethod
    def load(cls, prefix) -> "FieldTrajectory":
        prefix = Path(prefix)
        m = json.loads(prefix.with_suffix(".json").read_text())
        return cls(m["dt"], m["stations"], np.load(prefix.with_suffix(".npy")), m["t0"],
                   m["burn_in"], m["seed"], m["realization_index"], m["model_hash"])


class ModalIntegrator:
    """Streaming exact-propagator integrator with midpoint Duhamel forcing.

    ``y_{n+1} = P y_n + c g_n`` per mode with ``P = Omega(dt)`` and
    ``c = Omega(dt/2) B dt``.  Each mode runs as a rational filter
    ``adj(zI - P) c / det(zI - P)``, which stays exact for defective
    (critically damped) blocks.
    """

    def __init__(self, model: DampedWaveModel, dt: float, stations: Sequence[int],
                 components: Optional[Sequence[int]] = None,
                 readout: Optional[np.ndarray] = None):
        if isinstance(model, SecondOrderModel) and not model.constant:
            raise ValueError("use causal_solve for variable damping")
        # readout[p, m, c] maps the modal state to output channel p
        self.readout = None if readout is None else np.asarray(readout, dtype=complex)
        self.model = model
        self.dt = dt
        self.stations = list(stations)
        self.components = tuple(model.output_components if components is None else components)
        p = model.propagator(dt)
        c = np.einsum("mij,mj->mi", model.propagator(dt / 2), model.forcing_vector()) * dt
        nm, nc = c.shape
        self.filters = []
        for m in range(nm):
            if nc == 1:
                den = np.array([1.0, -p[m, 0, 0]])
                nums = [np.array([c[m, 0], 0.0])]
            else:
                P, cm = p[m], c[m]
                den = np.array([1.0, -(P[0, 0] + P[1, 1]), P[0, 0] * P[1, 1] - P[0, 1] * P[1, 0]])
                nums = [np.array([cm[0], P[0, 1] * cm[1] - P[1, 1] * cm[0], 0.0]),
                        np.array([cm[1], P[1, 0] * cm[0] - P[0, 0] * cm[1], 0.0])]
            self.filters.append((den, nums))
        self.state = [[np.zeros(len(den) - 1, dtype=complex) for _ in nums]
                      for den, nums in self.filters]
        self.rows = model.dec.station_rows(self.stations)

    def feed(self, forcing: np.ndarray) -> np.ndarray:
        """Advance over a chunk of grid forcing; returns states after each step at stations."""
        g = self.model.dec.coefficients(forcing)  # (n, modes)
        n = g.shape[0]
        comps = range(self.model.n_comp) if self.readout is not None else self.components
        y = np.zeros((n, len(self.filters), len(comps)), dtype=complex)
        for m, (den, nums) in enumerate(self.filters):
            if not np.any(g[:, m]) and not any(np.any(z) for z in self.state[m]):
                continue
            for k, comp in enumerate(comps):
                y[:, m, k], self.state[m][comp] = signal.lfilter(
                    nums[comp], den, g[:, m], zi=self.state[m][comp])
        if self.readout is not None:
            return np.einsum("pmc,nmc->np", self.readout, y)[:, :, None]
        return np.einsum("sm,nmc->nsc", self.rows, y)


def causal_solve(model: DampedWaveModel, source: Union[SourceTrajectory, Iterable],
                 stations: Sequence[int], burn_in: Optional[float] = None,
                 stationary: bool = True, dt: Optional[float] = None,
                 components: Optional[Sequence[int]] = None,
                 readout: Optional[np.ndarray] = None) -> FieldTrajectory:
    """Causal solution sampled at stations.

    With ``stationary=True`` the first ``burn_in`` (default ``8 T_att``) of
    the record is discarded; a burn-in shorter than ``5 T_att`` is refused.
    With ``stationary=False`` the record starts at ``t = 0`` from rest.
    The sample at index ``n`` is the state at time ``n dt`` (``u(0) = 0``).
    A ``readout[p, m, c]`` array replaces station sampling by custom
    channels (e.g. branch amplitudes); the channels are then numbered
    ``0..p-1`` in ``stations`` with a single component.
    """
    if isinstance(source, SourceTrajectory):
        dt = source.dt
        chunks = [source.values]
        seed, ridx = source.seed, source.realization_index
    else:
        if dt is None:
            raise ValueError("dt is required for chunked sources")
        chunks = source
        seed, ridx = 0, 0
    if stationary:
        burn_in = 8.0 * model.T_att if burn_in is None else float(burn_in)
        if burn_in < 5.0 * model.T_att:
            raise ValueError(
                f"burn-in {burn_in:g} is shorter than 5 T_att = {5 * model.T_att:g}: "
                "stationarity not reached")
    else:
        burn_in = 0.0
    skip = int(round(burn_in / dt))
    comps = tuple(model.output_components if components is None else components)
    if readout is not None:
        stations, comps = list(range(np.shape(readout)[0])), (0,)
    pieces = [np.zeros((1, len(stations), len(comps)), dtype=complex)]
    if isinstance(model, SecondOrderModel) and not model.constant:
        if readout is not None:
            raise ValueError("custom readouts need a constant-coefficient model")
        values = np.concatenate([np.asarray(c) for c in chunks], axis=0)
        pieces.append(_variable_solve(model, values, dt, stations, comps))
    else:
        integ = ModalIntegrator(model, dt, stations, comps, readout)
        for chunk in chunks:
            pieces.append(integ.feed(np.asarray(chunk)))
    series = np.concatenate(pieces, axis=0)
    if series.shape[0] - 1 <= skip:
        raise ValueError("source is shorter than the burn-in")
    series = series[skip:]
    return FieldTrajectory(dt, list(stations), series, t0=skip * dt, burn_in=burn_in,
                           seed=seed, realization_index=ridx, model_hash=model.model_hash())


def _variable_solve(model, values, dt, stations, comps):
    dec = model.dec
    h = 0.1 / float(np.max(model.a))
    sub = max(1, int(np.ceil(dt / h)))
    coef = np.zeros((dec.n_modes, 2), dtype=complex)
    rows = dec.station_rows(stations)
    out = np.empty((values.shape[0], len(stations), len(comps)), dtype=complex)
    g = dec.coefficients(values)
    for n in range(values.shape[0]):
        # midpoint forcing: half step, kick, half step
        for _ in range(sub):
            coef = _variable_damping_step(model, coef, dt / (2 * sub))
        coef[:, 1] += g[n] * dt
        for _ in range(sub):
            coef = _variable_damping_step(model, coef, dt / (2 * sub))
        out[n] = rows @ coef[:, list(comps)]
    return out


def simulate_stations(model: DampedWaveModel, spec: NoiseSpec, steps: int,
                      stations: Sequence[int], realization_index: int = 0,
                      burn_in: Optional[float] = None, chunk: int = 65536,
                      components: Optional[Sequence[int]] = None,
                      readout: Optional[np.ndarray] = None) -> FieldTrajectory:
    """Draw a source realization and solve causally, streaming in chunks.

    ``steps`` counts recorded samples after the burn-in.
    """
    burn = 8.0 * model.T_att if burn_in is None else burn_in
    total = steps + int(round(burn / spec.dt))
    chunks = stream_source(spec, total, realization_index, chunk, model.dec)
    traj = causal_solve(model, chunks, stations, burn_in=burn, dt=spec.dt, components=components,
                        readout=readout)
    traj.seed = spec.seed
    traj.realization_index = realization_index
    traj.series = traj.series[:steps]
    return traj


# ---------------------------------------------------------------------------
# Green's function and attenuation


def greens_function(model: SecondOrderModel, t, A: int, B: int) -> np.ndarray:
    """Causal Green's function ``Y(t) [e^{-a t} sin(tQ)/Q](A, B)``, ``Q^2 = -Lap - a^2``."""
    if not isinstance(model, SecondOrderModel):
        raise TypeError("Green's function is defined for the second-order model")
    model._require_constant()
    dec = model.dec
    t = np.atleast_1d(np.asarray(t, float))
    a = float(model.a)
    mu = dec.eigenvalues
    kern = dec.basis[A] * dec.basis[B].conj()
    tt = np.where(t > 0, t, 0.0)
    s = np.asarray(wave_kernels(mu[None, :] - a * a, tt[:, None], a).sinc_part)
    g = s @ kern
    g[t <= 0] = 0.0
    return g


@dataclass
class AttenuationReport:
    rate: float
    C: float
    degenerate: bool = False
    per_mode_rate: Optional[np.ndarray] = None


def attenuation_check(model: DampedWaveModel, horizon: float,
                      state: Optional[np.ndarray] = None, samples: int = 64) -> AttenuationReport:
    """Fit the decay rate of ``||Omega(t)||`` (mode-max norm, energy norm for waves).

    Each mode is sampled at multiples of its own oscillation period, where
    the bounded oscillatory factor repeats, so exact exponential decay is
    recovered exactly.
    """
    if horizon < 3.0 * model.T_att:
        raise ValueError("horizon must be at least 3 T_att")
    if isinstance(model, SecondOrderModel):
        model = two_component_reduce(model)
    if state is not None:
        coef = model.dec.coefficients(_check_state(model, state)).T
        if not np.any(np.abs(coef) > 0):
            return AttenuationReport(float("nan"), float("nan"), degenerate=True)
    lam = model.energy_eigenvalues()
    osc = np.max(np.abs(lam.imag), axis=1)
    rates = np.empty(model.dec.n_modes)
    consts = np.empty(model.dec.n_modes)
    for m in range(model.dec.n_modes):
        period = 2 * np.pi / osc[m] if osc[m] > 1e-12 else np.inf
        if period <= horizon:
            # whole periods only, covering at least the horizon
            nper = max(1, int(np.ceil(horizon / samples / period)))
            times = np.arange(samples + 1) * nper * period
        else:
            times = np.linspace(0.0, horizon, samples + 1)
        norms = np.array([_mode_norm(model, m, t, None if state is None else coef[m])
                          for t in times])
        keep = times >= times[-1] / 2
        if np.all(norms[keep] == 0):
            rates[m] = np.inf
            consts[m] = 0.0
            continue
        slope = np.polyfit(times[keep], np.log(norms[keep]), 1)[0]
        rates[m] = -slope
        consts[m] = np.max(norms * np.exp(rates[m] * times))
    rate = float(np.min(rates))
    return AttenuationReport(rate, float(np.max(consts[np.isfinite(consts)])), False, rates)


def _mode_norm(model, m, t, vec):
    block = model.propagator(t)[m]
    if isinstance(model, TwoComponentModel) and model.dec.eigenvalues[m] == 0:
        block = block[1:, 1:]
        vec = None if vec is None else vec[1:]
    if vec is None:
        return np.linalg.norm(block, 2)
    n0 = np.linalg.norm(vec)
    return np.linalg.norm(block @ vec) / n0 if n0 > 0 else 0.0
