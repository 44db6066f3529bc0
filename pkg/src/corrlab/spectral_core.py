"""Discrete domains and exact spectral representations of the Laplacian.

Fourier domains (circle, torus) use the continuum symbols ``|k|^2`` of the
periodic Laplacian; the Neumann interval uses cosine modes sampled at cell
midpoints.  Every decomposition carries a dense orthonormal basis so that
operator functions and station kernels are plain matrix products.
"""
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

MAX_DENSE_MODES = 4096

DOMAIN_KINDS = ("circle_1d", "torus_2d", "interval_neumann_1d")


@dataclass(frozen=True)
class DiscreteDomain:
    """A uniformly sampled compact domain.

    Parameters
    ----------
    kind : str
        One of ``circle_1d``, ``torus_2d`` or ``interval_neumann_1d``.
    counts : tuple of int
        Number of grid points per axis.
    extent : tuple of float, optional
        Physical length per axis.  Defaults to ``2*pi`` on Fourier domains
        and ``pi`` on the Neumann interval.
    modes : tuple of int, optional
        Mode count per axis, at most ``counts``.  Fourier truncations are
        symmetric about ``k = 0`` so the count is odd; an even grid drops
        its Nyquist mode by default.
    """

    kind: str
    counts: tuple
    extent: Optional[tuple] = None
    modes: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in DOMAIN_KINDS:
            raise ValueError(f"unknown domain kind {self.kind!r}")
        counts = tuple(int(c) for c in np.atleast_1d(self.counts))
        ndim = 2 if self.kind == "torus_2d" else 1
        if len(counts) == 1 and ndim == 2:
            counts = counts * 2
        if len(counts) != ndim:
            raise ValueError(f"{self.kind} needs {ndim} grid counts, got {counts}")
        if any(c <= 0 for c in counts):
            raise ValueError("zero-size domain")
        if any(c < 2 for c in counts):
            raise ValueError("mode_count must be >= 2 per axis")
        if self.modes is None:
            modes = tuple(c - 1 if self.fourier and c % 2 == 0 else c for c in counts)
        else:
            modes = tuple(int(m) for m in np.atleast_1d(self.modes))
            if len(modes) == 1 and ndim == 2:
                modes = modes * 2
        if len(modes) != ndim or any(m < 1 or m > c for m, c in zip(modes, counts)):
            raise ValueError("mode counts must lie in [1, grid count] per axis")
        if self.fourier and any(m % 2 == 0 for m in modes):
            raise ValueError(
                "Fourier domains need an odd mode count so the truncation is "
                "symmetric about k=0")
        if self.extent is None:
            default = np.pi if self.kind == "interval_neumann_1d" else 2 * np.pi
            extent = (default,) * ndim
        else:
            extent = tuple(float(e) for e in np.atleast_1d(self.extent))
            if len(extent) == 1 and ndim == 2:
                extent = extent * 2
        if len(extent) != ndim or any(not e > 0 for e in extent):
            raise ValueError("extent must be positive per axis")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "extent", extent)
        object.__setattr__(self, "modes", modes)

    @property
    def fourier(self) -> bool:
        return self.kind in ("circle_1d", "torus_2d")

    @property
    def ndim(self) -> int:
        return len(self.counts)

    @property
    def spacing(self) -> tuple:
        return tuple(e / c for e, c in zip(self.extent, self.counts))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def n_points(self) -> int:
        return int(np.prod(self.counts))

    @property
    def n_modes(self) -> int:
        return int(np.prod(self.modes))

    def axes(self):
        """Grid coordinates per axis."""
        out = []
        for c, h in zip(self.counts, self.spacing):
            j = np.arange(c, dtype=float)
            out.append((j + 0.5) * h if self.kind == "interval_neumann_1d" else j * h)
        return out

    def points(self) -> np.ndarray:
        """Grid points as an array of shape ``(n_points, ndim)`` (C order)."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "counts": list(self.counts), "extent": list(self.extent),
                "modes": list(self.modes)}

    @classmethod
    def from_dict(cls, d: dict) -> "DiscreteDomain":
        return cls(d["kind"], tuple(d["counts"]), tuple(d["extent"]) if d.get("extent") else None,
                   tuple(d["modes"]) if d.get("modes") else None)


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenvalues and orthonormal eigenmodes of a self-adjoint operator.

    ``basis[:, m]`` is the m-th mode sampled on the grid; orthonormality is
    with respect to ``sum(weights * conj(e_m) * e_n)``.  ``wavevectors`` is
    set on Fourier and cosine domains (physical units), ``None`` for dense
    operator decompositions.
    """

    domain: DiscreteDomain
    eigenvalues: np.ndarray
    basis: np.ndarray
    weights: np.ndarray
    wavevectors: Optional[np.ndarray] = None
    integer_modes: Optional[np.ndarray] = None
    fourier_multiplier: bool = False

    @property
    def n_modes(self) -> int:
        return self.eigenvalues.size

    def coefficients(self, field: np.ndarray) -> np.ndarray:
        """Mode coefficients ``<e_m, u>`` of fields with trailing grid axis."""
        field = np.asarray(field)
        if field.shape[-1] != self.basis.shape[0]:
            raise ValueError(
                f"field has {field.shape[-1]} grid values, domain has {self.basis.shape[0]}")
        return (field * self.weights) @ self.basis.conj()

    def synthesize(self, coef: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`coefficients`."""
        return np.asarray(coef) @ self.basis.T

    def station_rows(self, stations: Sequence[int]) -> np.ndarray:
        """Mode values ``e_m(A)`` at grid indices, shape ``(n_stations, n_modes)``."""
        idx = np.asarray(stations, dtype=int)
        if idx.size and (idx.min() < 0 or idx.max() >= self.basis.shape[0]):
            raise ValueError("station index outside the grid")
        return self.basis[idx]

    def orthonormality_error(self) -> float:
        gram = (self.basis.conj().T * self.weights) @ self.basis
        return float(np.max(np.abs(gram - np.eye(self.n_modes))))


def _fourier_axis_modes(count: int) -> np.ndarray:
    half = (count - 1) // 2
    return np.arange(-half, half + 1)


def build_laplacian(domain: DiscreteDomain) -> SpectralDecomposition:
    """Exact spectral decomposition of ``-Laplacian`` on a discrete domain."""
    pts = domain.points()
    weights = np.full(domain.n_points, domain.cell_volume)
    if domain.fourier:
        grids = np.meshgrid(*[_fourier_axis_modes(c) for c in domain.modes], indexing="ij")
        kint = np.stack([g.ravel() for g in grids], axis=-1)
        scale = np.array([2 * np.pi / e for e in domain.extent])
        kvec = kint * scale
        mu = np.sum(kvec ** 2, axis=1)
        volume = float(np.prod(domain.extent))
        basis = np.exp(1j * pts @ kvec.T) / np.sqrt(volume)
    else:
        (length,) = domain.extent
        kint = np.arange(domain.modes[0])[:, None]
        kvec = kint * (np.pi / length)
        mu = kvec[:, 0] ** 2
        basis = np.cos(pts[:, :1] * kvec[:, 0][None, :]) * np.sqrt(2.0 / length)
        basis[:, 0] = 1.0 / np.sqrt(length)
        basis = basis.astype(complex)
    keys = [kint[:, j] for j in reversed(range(kint.shape[1]))]
    order = np.lexsort(keys + [np.round(mu, 12)])
    return SpectralDecomposition(
        domain=domain,
        eigenvalues=mu[order],
        basis=basis[:, order],
        weights=weights,
        wavevectors=kvec[order],
        integer_modes=kint[order],
        fourier_multiplier=domain.fourier,
    )


def decompose_operator(domain: DiscreteDomain, matrix: np.ndarray,
                       weights: Optional[np.ndarray] = None) -> SpectralDecomposition:
    """Dense eigendecomposition of an operator self-adjoint in the weighted product."""
    matrix = np.asarray(matrix)
    n = matrix.shape[0]
    if n > MAX_DENSE_MODES:
        raise ValueError(f"dense path capped at {MAX_DENSE_MODES} modes")
    if n != domain.n_points:
        raise ValueError("operator size does not match the domain")
    w = np.full(n, domain.cell_volume) if weights is None else np.asarray(weights, float)
    sw = np.sqrt(w)
    sym = (sw[:, None] * matrix) / sw[None, :]
    sym = 0.5 * (sym + sym.conj().T)
    vals, vecs = np.linalg.eigh(sym)
    basis = vecs / sw[:, None]
    return SpectralDecomposition(domain, vals, basis.astype(complex), w)


@dataclass(frozen=True)
class WaveKernelValue:
    """Damped wave kernels ``e^{-d t} cos(t sqrt(q2))`` and ``e^{-d t} sin(t sqrt(q2))/sqrt(q2)``."""

    cos_part: np.ndarray
    sinc_part: np.ndarray


def wave_kernels(q2, t, damping=0.0) -> WaveKernelValue:
    """Entire wave kernels of ``q2``, optionally multiplied by ``exp(-damping*t)``.

    Negative ``q2`` gives the cosh/sinh continuation; the exponentials are
    combined with the damping factor before evaluation so that large
    ``-q2 t^2`` does not overflow when the product is finite.
    """
    q2, t = np.broadcast_arrays(np.asarray(q2, float), np.asarray(t, float))
    damping = np.broadcast_to(np.asarray(damping, float), q2.shape)
    s = np.sqrt(np.abs(q2))
    x = t * s
    env = np.exp(-damping * t)
    cos_part = np.empty(q2.shape)
    sinc_part = np.empty(q2.shape)

    osc = q2 > 0
    cos_part[osc] = np.cos(x[osc]) * env[osc]
    sinc_part[osc] = np.sin(x[osc]) / s[osc] * env[osc]

    flat = q2 == 0
    cos_part[flat] = env[flat]
    sinc_part[flat] = t[flat] * env[flat]

    small = (q2 < 0) & (x <= 20.0)
    cos_part[small] = np.cosh(x[small]) * env[small]
    sinc_part[small] = np.sinh(x[small]) / s[small] * env[small]

    big = (q2 < 0) & (x > 20.0)
    up = np.exp(x[big] - damping[big] * t[big])
    down = np.exp(-x[big] - damping[big] * t[big])
    cos_part[big] = 0.5 * (up + down)
    sinc_part[big] = 0.5 * (up - down) / s[big]
    if cos_part.ndim == 0:
        return WaveKernelValue(float(cos_part), float(sinc_part))
    return WaveKernelValue(cos_part, sinc_part)


def apply_operator_function(dec: SpectralDecomposition, f: Callable, field: np.ndarray) -> np.ndarray:
    """Return ``f(-Laplacian) u`` through the spectral decomposition."""
    vals = np.asarray(f(dec.eigenvalues), dtype=complex)
    vals = np.broadcast_to(vals, dec.eigenvalues.shape)
    if not np.all(np.isfinite(vals)):
        raise ValueError("operator function is not finite on the spectrum")
    return dec.synthesize(vals * dec.coefficients(np.asarray(field, dtype=complex)))
