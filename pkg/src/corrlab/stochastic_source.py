"""Stationary random sources built by filtering a discrete white noise.

A source is ``f = W(x) * (Phi (*) Op(l) chi_I w)``: a spectral band
projection, a Fourier multiplier ``l(eps k)``, an optional spatial window and
a causal temporal FIR filter with taps ``Phi`` (continuous-time units, tap
spacing ``dt``).
"""
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import signal

from .spectral_core import DiscreteDomain, SpectralDecomposition, build_laplacian


def make_rng(seed: int, realization_index: int = 0) -> np.random.Generator:
    """Counter-based stream keyed on ``(seed, realization_index)``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(realization_index)])
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class NoiseSpec:
    """Recipe for a filtered-noise source.

    ``band`` is ``None`` (all modes) or a closed interval applied to
    ``band_symbol(eps*k)`` (default: the Laplacian eigenvalue).  ``taps``
    defaults to the identity filter ``[1/dt]``.  ``multiplier`` maps scaled
    wave vectors ``xi = eps*k`` (shape ``(modes, ndim)``) to real values;
    ``multiplier_table`` maps integer mode tuples to values and takes
    precedence (it is what JSON round-trips).  ``window`` maps grid points
    to a real spatial weight.
    """

    domain: DiscreteDomain
    dt: float
    band: Optional[tuple] = None
    taps: Optional[np.ndarray] = None
    multiplier: Optional[Callable] = None
    multiplier_table: Optional[dict] = None
    window: Optional[Callable] = None
    window_table: Optional[np.ndarray] = None
    band_symbol: Optional[Callable] = None
    eps: float = 1.0
    seed: int = 0
    real: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.band is not None:
            lo, hi = (float(b) for b in self.band)
            if not hi >= lo:
                raise ValueError("band must be a closed interval lo <= hi")
            self.band = (lo, hi)
        if self.taps is None:
            self.taps = np.array([1.0 / self.dt])
        self.taps = np.atleast_1d(np.asarray(self.taps, dtype=float))
        if self.taps.ndim != 1 or self.taps.size == 0 or not np.all(np.isfinite(self.taps)):
            raise ValueError("taps must be a finite 1-D sequence")

    @property
    def t0(self) -> float:
        """Support bound of the source covariance in time."""
        return self.taps.size * self.dt

    @property
    def _unit_taps(self) -> bool:
        return self.taps.size == 1 and abs(self.taps[0] * self.dt - 1.0) < 1e-14

    @property
    def is_identity(self) -> bool:
        return (self.band is None and self.multiplier is None and self.multiplier_table is None
                and self.window is None and self.window_table is None
                and self._unit_taps)

    def decomposition(self) -> SpectralDecomposition:
        return build_laplacian(self.domain)

    def band_mask(self, dec: SpectralDecomposition) -> np.ndarray:
        if self.band is None:
            return np.ones(dec.n_modes)
        if self.band_symbol is None:
            vals = dec.eigenvalues
        else:
            vals = np.asarray(self.band_symbol(self.eps * dec.wavevectors), float)
        lo, hi = self.band
        return ((vals >= lo) & (vals <= hi)).astype(float)

    def mode_multiplier(self, dec: SpectralDecomposition) -> np.ndarray:
        """Band projector times the symbol, one real value per mode."""
        m = self.band_mask(dec)
        if self.multiplier_table is not None:
            table = {tuple(int(v) for v in np.atleast_1d(k)): float(x)
                     for k, x in self.multiplier_table.items()}
            m = m * np.array([table.get(tuple(int(v) for v in k), 0.0) for k in dec.integer_modes])
        elif self.multiplier is not None:
            vals = np.asarray(self.multiplier(self.eps * dec.wavevectors), float)
            m = m * np.broadcast_to(vals, m.shape)
        if not np.all(np.isfinite(m)):
            raise ValueError("multiplier is not finite on the modes")
        return m

    def window_values(self) -> Optional[np.ndarray]:
        if self.window_table is not None:
            w = np.asarray(self.window_table, float)
        elif self.window is not None:
            w = np.asarray(self.window(self.domain.points()), float)
        else:
            return None
        return np.broadcast_to(w, (self.domain.n_points,)).copy()

    def to_dict(self) -> dict:
        dec = self.decomposition()
        m = self.mode_multiplier(dec)
        out = {
            "domain": self.domain.to_dict(),
            "dt": self.dt,
            "band": None if self.band is None else list(self.band),
            "taps": self.taps.tolist(),
            "multiplier_table": {
                "modes": dec.integer_modes.tolist(),
                "values": m.tolist(),
            },
            "window_table": None if self.window_values() is None else self.window_values().tolist(),
            "eps": self.eps,
            "seed": int(self.seed),
            "real": bool(self.real),
        }
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSpec":
        table = None
        if d.get("multiplier_table") is not None:
            mt = d["multiplier_table"]
            table = {tuple(k): v for k, v in zip(mt["modes"], mt["values"])}
        # the serialized table already contains the band projection
        return cls(
            domain=DiscreteDomain.from_dict(d["domain"]),
            dt=d["dt"],
            band=None,
            taps=np.asarray(d["taps"]),
            multiplier_table=table,
            window_table=None if d.get("window_table") is None else np.asarray(d["window_table"]),
            eps=d.get("eps", 1.0),
            seed=d.get("seed", 0),
            real=d.get("real", False),
        )

    @classmethod
    def from_json(cls, text: str) -> "NoiseSpec":
        return cls.from_dict(json.loads(text))


@dataclass
class SourceTrajectory:
    """Discrete-time realization of a source: ``values[n]`` holds ``f`` on ``[n dt, (n+1) dt)``."""

    dt: float
    values: np.ndarray
    spec: Optional[NoiseSpec] = None
    realization_index: int = 0
    seed: int = 0

    @property
    def steps(self) -> int:
        return self.values.shape[0]

    def save(self, prefix) -> Path:
        """Write ``<prefix>.npy`` and a JSON sidecar manifest."""
        prefix = Path(prefix)
        np.save(prefix.with_suffix(".npy"), self.values)
        manifest = {
            "dt": self.dt,
            "steps": self.steps,
            "shape": list(self.values.shape),
            "dtype": str(self.values.dtype),
            "seed": int(self.seed),
            "realization_index": int(self.realization_index),
            "spec": None if self.spec is None else self.spec.to_dict(),
        }
        path = prefix.with_suffix(".json")
        path.write_text(json.dumps(manifest, indent=2))
        return path

    @classmethod
    def load(cls, prefix) -> "SourceTrajectory":
        prefix = Path(prefix)
        manifest = json.loads(prefix.with_suffix(".json").read_text())
        values = np.load(prefix.with_suffix(".npy"))
        spec = None if manifest["spec"] is None else NoiseSpec.from_dict(manifest["spec"])
        return cls(manifest["dt"], values, spec, manifest["realization_index"], manifest["seed"])


def sample_white_noise(domain: DiscreteDomain, dt: float, steps: int, seed: int,
                       realization_index: int = 0, real: bool = False) -> SourceTrajectory:
    """Discrete space-time white noise of variance ``1/(dt*cell_volume)``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    rng = make_rng(seed, realization_index)
    scale = 1.0 / np.sqrt(dt * domain.cell_volume)
    shape = (int(steps), domain.n_points)
    return SourceTrajectory(dt, _draw(rng, shape, scale, real), None, realization_index, seed)


def _draw(rng, shape, scale, real):
    # row-major draws keep chunked streams identical to one-shot draws
    if real:
        return scale * rng.standard_normal(shape)
    z = rng.standard_normal(shape + (2,))
    return (scale / np.sqrt(2.0)) * (z[..., 0] + 1j * z[..., 1])


def stream_source(spec: NoiseSpec, steps: int, realization_index: int = 0,
                  chunk: int = 65536, dec: Optional[SpectralDecomposition] = None):
    """Yield the filtered source of :func:`sample_source` in time chunks.

    The concatenated chunks equal ``sample_source(spec, steps, ...).values``
    (up to floating-point summation order of the spatial filter).
    """
    dec = dec or spec.decomposition()
    rng = make_rng(spec.seed, realization_index)
    scale = 1.0 / np.sqrt(spec.dt * spec.domain.cell_volume)
    m = spec.mode_multiplier(dec)
    win = spec.window_values()
    fir = None if spec._unit_taps else spec.taps * spec.dt
    zi = None
    done = 0
    while done < steps:
        n = min(chunk, steps - done)
        values = _draw(rng, (n, spec.domain.n_points), scale, spec.real)
        if not spec.is_identity:
            if not np.all(m == 1.0):
                values = dec.synthesize(dec.coefficients(values) * m)
            if win is not None:
                values = values * win
            if fir is not None:
                if zi is None:
                    zi = np.zeros((fir.size - 1, values.shape[1]), dtype=complex)
                values, zi = signal.lfilter(fir, [1.0], values, axis=0, zi=zi)
            if spec.real:
                values = np.real(values)
        done += n
        yield values


def apply_filters(w: SourceTrajectory, spec: NoiseSpec,
                  dec: Optional[SpectralDecomposition] = None) -> SourceTrajectory:
    """Band projection, symbol, window and causal temporal filter."""
    if not np.isclose(w.dt, spec.dt, rtol=1e-12, atol=0):
        raise ValueError("trajectory dt does not match the spec")
    if spec.taps.size > w.steps:
        raise ValueError("temporal filter is longer than the trajectory")
    if w.values.shape[1] != spec.domain.n_points:
        raise ValueError("trajectory does not live on the spec domain")
    if spec.is_identity:
        return SourceTrajectory(w.dt, w.values.copy(), spec, w.realization_index, w.seed)
    dec = dec or spec.decomposition()
    values = w.values
    m = spec.mode_multiplier(dec)
    if not np.all(m == 1.0):
        values = dec.synthesize(dec.coefficients(values) * m)
    win = spec.window_values()
    if win is not None:
        values = values * win
    if not spec._unit_taps:
        values = signal.lfilter(spec.taps * spec.dt, [1.0], values, axis=0)
    if spec.real or np.isrealobj(w.values):
        if np.max(np.abs(np.imag(values)), initial=0.0) > 1e-9 * max(np.max(np.abs(values)), 1.0):
            raise ValueError("filters do not preserve realness (use an even symbol)")
        values = np.real(values)
    return SourceTrajectory(w.dt, values, spec, w.realization_index, w.seed)


def sample_source(spec: NoiseSpec, steps: int, realization_index: int = 0,
                  dec: Optional[SpectralDecomposition] = None) -> SourceTrajectory:
    """White noise from the spec seed, filtered by the spec."""
    w = sample_white_noise(spec.domain, spec.dt, steps, spec.seed, realization_index, spec.real)
    return apply_filters(w, spec, dec)


@dataclass
class CovarianceKernel:
    """Separable covariance ``K(t) = Psi(t) S`` of a filtered source.

    ``psi`` is the raw discrete autocorrelation of the taps at integer lags
    ``lags``; the continuous-time profile is ``Psi(l dt) = dt * psi[l]``.
    ``spatial`` is the modal covariance ``S``: a vector when diagonal, else
    a Hermitian matrix.
    """

    lags: np.ndarray
    psi: np.ndarray
    dt: float
    spatial: np.ndarray
    t0: float

    @property
    def diagonal(self) -> bool:
        return self.spatial.ndim == 1

    @property
    def profile(self) -> np.ndarray:
        return self.dt * self.psi

    @property
    def lag_times(self) -> np.ndarray:
        return self.lags * self.dt

    @property
    def quadrature_weights(self) -> np.ndarray:
        """Weights of the lag sum replacing ``int du K(u)``."""
        return self.dt * self.profile

    def spatial_matrix(self) -> np.ndarray:
        return np.diag(self.spatial) if self.diagonal else self.spatial

    def at(self, t: float) -> np.ndarray:
        """Modal operator ``K(t)`` (zero outside the support)."""
        if abs(t) >= self.t0:
            return np.zeros_like(self.spatial_matrix())
        lag = t / self.dt
        l = int(round(lag))
        if abs(lag - l) > 1e-9:
            raise ValueError("K is only defined on the tap grid")
        i = np.searchsorted(self.lags, l)
        return self.profile[i] * self.spatial_matrix()


def covariance_kernel(spec: NoiseSpec, dec: Optional[SpectralDecomposition] = None) -> CovarianceKernel:
    """Analytic covariance of the filtered source in modal coordinates."""
    dec = dec or spec.decomposition()
    taps = spec.taps
    psi = np.correlate(taps, taps, mode="full")
    lags = np.arange(-(taps.size - 1), taps.size)
    m = spec.mode_multiplier(dec)
    win = spec.window_values()
    if win is None:
        spatial = m ** 2
    else:
        # G maps white-noise mode coefficients to source mode coefficients
        g = (dec.basis.conj().T * (dec.weights * win)) @ dec.basis * m[None, :]
        spatial = g @ g.conj().T
    return CovarianceKernel(lags, psi, spec.dt, spatial, spec.t0)


@dataclass
class PowerSpectrum:
    """Averaged Wigner density on ``(x, xi)``; ``xi`` lies on the half lattice."""

    x: np.ndarray
    xi_axes: list
    density: np.ndarray
    cell: float

    def total_mass(self) -> float:
        return float(np.sum(self.density) * self.cell)

    def xi_marginal(self) -> np.ndarray:
        """Density integrated over x."""
        h = self.cell / np.prod([a[1] - a[0] for a in self.xi_axes])
        return self.density.sum(axis=0) * h


def _lattice_layout(dec: SpectralDecomposition):
    kint = dec.integer_modes
    half = kint.max(axis=0)
    shape = tuple(2 * h + 1 for h in half)
    index = tuple((kint[:, j] + half[j]) for j in range(kint.shape[1]))
    return half, shape, index


def wigner_transform(dec: SpectralDecomposition, field: np.ndarray, eps: float) -> PowerSpectrum:
    """Discrete Wigner density of one field (or the sum over a stack of fields)."""
    if not dec.fourier_multiplier:
        raise ValueError("Wigner transform needs a translation-invariant (Fourier) domain")
    fields = np.atleast_2d(np.asarray(field, dtype=complex))
    half, shape, index = _lattice_layout(dec)
    ndim = len(shape)
    coef = dec.coefficients(fields)
    acc = None
    for c in coef:
        a = np.zeros((dec.basis.shape[0],) + shape, dtype=complex)
        a[(slice(None),) + index] = dec.basis * c[None, :]
        w = signal.fftconvolve(a, a.conj(), axes=tuple(range(1, ndim + 1)))
        acc = w if acc is None else acc + w
    xi_axes = []
    dxi = []
    for j in range(ndim):
        step = eps * np.pi / dec.domain.extent[j]
        p = np.arange(-2 * half[j], 2 * half[j] + 1)
        xi_axes.append(p * step)
        dxi.append(step)
    cell = dec.domain.cell_volume * float(np.prod(dxi))
    density = np.real(acc) / float(np.prod(dxi))
    return PowerSpectrum(dec.domain.points(), xi_axes, density, cell)


def empirical_power_spectrum(realizations: Sequence[SourceTrajectory], eps: float,
                             dec: Optional[SpectralDecomposition] = None,
                             stride: int = 1) -> PowerSpectrum:
    """Average Wigner density over realizations and sampled times.

    Snapshots of a white-in-time source carry variance ``1/dt``; each
    snapshot density is multiplied by ``dt`` so the result is normalized
    per unit time.
    """
    if len(realizations) < 2:
        raise ValueError("need at least two realizations")
    domain = realizations[0].spec.domain if realizations[0].spec is not None else None
    if dec is None:
        if domain is None:
            raise ValueError("pass a decomposition for trajectories without a spec")
        dec = build_laplacian(domain)
    total = None
    count = 0
    for traj in realizations:
        snaps = traj.values[::stride]
        ps = wigner_transform(dec, snaps, eps)
        total = ps.density * traj.dt if total is None else total + ps.density * traj.dt
        count += snaps.shape[0]
    return PowerSpectrum(ps.x, ps.xi_axes, total / count, ps.cell)


# ---------------------------------------------------------------------------
# smooth multipliers and windows


def smooth_step(s) -> np.ndarray:
    """``C^inf`` step: 0 for ``s <= 0``, 1 for ``s >= 1``."""
    s = np.asarray(s, float)

    def f(t):
        return np.where(t > 0, np.exp(-1.0 / np.maximum(t, 1e-300)), 0.0)

    return f(s) / (f(s) + f(1 - s))


def bump_multiplier(lo: float, hi: float) -> Callable:
    """``C^inf`` bump in ``|xi|`` supported on ``(lo, hi)`` with peak 1."""
    if not 0 <= lo < hi:
        raise ValueError("bump needs 0 <= lo < hi")

    def m(xi):
        r = np.sqrt(np.sum(np.atleast_2d(xi) ** 2, axis=1))
        x = (r - lo) / (hi - lo)
        out = np.zeros_like(r)
        s = (x > 0) & (x < 1)
        out[s] = np.exp(4.0 - 1.0 / (x[s] * (1 - x[s])))
        return out

    return m


def exclusion_window(domain: DiscreteDomain, center: int, radius: float,
                     ramp: float) -> np.ndarray:
    """Window vanishing within ``radius`` of grid point ``center``, rising to 1 over ``ramp``."""
    if not radius > 0 or not ramp > 0:
        raise ValueError("radius and ramp must be positive")
    pts = domain.points()
    d = np.abs(pts - pts[center])
    if domain.fourier:
        ext = np.asarray(domain.extent)
        d = np.minimum(d, ext - d)
    dist = np.sqrt(np.sum(d ** 2, axis=1))
    return smooth_step((dist - radius) / ramp)
