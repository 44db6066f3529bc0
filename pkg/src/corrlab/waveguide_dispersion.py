"""Trapped surface-wave modes of a layered half-space.

The vertical operator is ``L v = -(N v')' + N xi^2 v`` on ``Z <= 0`` with
``N v' = 0`` at the surface.  Below ``Z0`` the profile is the constant
``N_inf``, so trapped modes (eigenvalues below ``N_inf xi^2``) decay like
``exp(beta (Z - Z0))`` with ``beta^2 = xi^2 - lambda/N_inf`` and the
half-line is truncated with a Dirichlet condition once that decay is
negligible.
"""
import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import interpolate
from scipy.linalg import eigh_tridiagonal
from scipy.optimize import brentq

THRESHOLD_MARGIN = 1e-3
DECAY_TOL = 1e-8
OVERLAP_MIN = 0.8


@dataclass
class VelocityProfile:
    """``N(x, Z)`` with ``N = N_inf`` for ``Z <= Z0``.

    ``func(x, Z)`` must accept a scalar ``x`` and an array ``Z``.  ``knots``
    lists interior depths where ``N`` or its derivative jumps; grids align
    ``Z0`` with a node and ``knots`` are kept for bookkeeping.
    """

    func: Callable
    N_inf: float
    Z0: float
    knots: tuple = ()

    def __post_init__(self):
        if not self.N_inf > 0:
            raise ValueError("N_inf must be positive")
        if not self.Z0 < 0:
            raise ValueError("Z0 must be negative")

    def __call__(self, x, Z) -> np.ndarray:
        Z = np.asarray(Z, float)
        return np.where(Z <= self.Z0, self.N_inf, np.asarray(self.func(x, Z), float))

    def N0(self, x, samples: int = 4001) -> float:
        z = np.concatenate([np.linspace(self.Z0, 0.0, samples), np.asarray(self.knots, float)])
        return float(np.min(self(x, z)))

    def validate(self, x, samples: int = 4001) -> None:
        z = np.linspace(self.Z0, 0.0, samples)
        vals = self(x, z)
        if not np.all(np.isfinite(vals)) or np.min(vals) <= 0:
            raise ValueError("N must be finite and positive")

    def has_well(self, x) -> bool:
        return self.N0(x) < self.N_inf

    @classmethod
    def square_well(cls, N0: float, N_inf: float, Z0: float) -> "VelocityProfile":
        return cls(lambda x, Z: np.full(np.shape(Z), float(N0)), N_inf, Z0)

    @classmethod
    def from_dict(cls, d: dict) -> "VelocityProfile":
        """Piecewise-linear ``N(Z)`` knots per x-station, linear in ``x`` between stations.

        ``{"N_inf": .., "Z0": .., "stations": [{"x": .., "Z": [...], "N": [...]}, ...]}``
        with each station's ``Z`` ascending inside ``[Z0, 0]``.
        """
        N_inf, Z0 = float(d["N_inf"]), float(d["Z0"])
        st = sorted(d["stations"], key=lambda s: s["x"])
        xs = np.array([s["x"] for s in st], float)
        tables = []
        knots = set()
        for s in st:
            z, n = np.asarray(s["Z"], float), np.asarray(s["N"], float)
            if z.size < 2 or np.any(np.diff(z) <= 0):
                raise ValueError("station depths must be strictly ascending")
            if z[0] > Z0 + 1e-12 or z[-1] < -1e-12:
                raise ValueError("station knots must cover [Z0, 0]")
            tables.append((z, n))
            knots.update(z.tolist())

        def func(x, Z):
            Z = np.asarray(Z, float)
            vals = np.array([np.interp(Z, z, n) for z, n in tables])
            if xs.size == 1:
                return vals[0]
            j = np.clip(np.searchsorted(xs, x) - 1, 0, xs.size - 2)
            w = np.clip((x - xs[j]) / (xs[j + 1] - xs[j]), 0.0, 1.0)
            return (1 - w) * vals[j] + w * vals[j + 1]

        return cls(func, N_inf, Z0, tuple(sorted(knots)))

    @classmethod
    def from_json(cls, text: str) -> "VelocityProfile":
        return cls.from_dict(json.loads(text))


@dataclass
class VerticalGrid:
    """Uniform nodes ``Z_i = -i h``, ``i = 0..n-1``; Dirichlet at ``Z_n = Z_bot``."""

    h: float
    n: int

    @property
    def Z(self) -> np.ndarray:
        return -self.h * np.arange(self.n)

    @property
    def Z_bot(self) -> float:
        return -self.h * self.n

    @property
    def weights(self) -> np.ndarray:
        w = np.full(self.n, self.h)
        w[0] = self.h / 2
        return w

    @classmethod
    def aligned(cls, Z0: float, per_layer: int, Z_bot: float) -> "VerticalGrid":
        """Spacing ``|Z0|/per_layer`` so that ``Z0`` is a node."""
        h = abs(Z0) / per_layer
        return cls(h, int(np.ceil(abs(Z_bot) / h)))


def assemble(profile: VelocityProfile, x: float, xi: float, grid: VerticalGrid):
    """Symmetric tridiagonal form ``W^{-1/2} (K + W diag(N xi^2)) W^{-1/2}``.

    ``K`` is the conservative three-point stiffness with face values
    ``N(Z_{i+1/2})`` and the half cell at ``Z = 0`` carrying the Neumann
    condition.  Node values of ``N`` are cell averages of the two quarter
    points so a jump at a node is split evenly.  Returns ``(diag, offdiag)``.
    """
    h, n = grid.h, grid.n
    Z = grid.Z
    face = profile(x, Z - h / 2)  # face below node i, i = 0..n-1
    upper = np.concatenate([[0.0], face[:-1]])  # face above node i (none at the top)
    node = 0.5 * (profile(x, Z - h / 4) + profile(x, np.minimum(Z + h / 4, 0.0)))
    node[0] = profile(x, np.array([-h / 4]))[0]
    w = grid.weights
    kdiag = (upper + face) / h
    koff = -face[:-1] / h
    diag = kdiag / w + node * xi ** 2
    off = koff / np.sqrt(w[:-1] * w[1:])
    return diag, off


def _solve(profile, x, xi, grid, margin):
    diag, off = assemble(profile, x, xi, grid)
    lo = profile.N0(x) * xi ** 2
    hi = profile.N_inf * xi ** 2 * (1 - margin)
    if not hi > lo:
        return np.empty(0), np.empty((grid.n, 0))
    try:
        vals, vecs = eigh_tridiagonal(diag, off, select="v", select_range=(lo, hi))
    except ValueError:
        return np.empty(0), np.empty((grid.n, 0))
    # back to v = W^{-1/2} y, unit in the discrete weighted norm
    vecs = vecs / np.sqrt(grid.weights)[:, None]
    vecs = vecs * np.sign(vecs[0])[None, :]
    return vals, vecs


def required_depth(profile: VelocityProfile, xi: float, lam_max: float,
                   tol: float = 1e-12) -> float:
    """Depth below ``Z0`` where ``exp(-2 beta depth)`` drops below ``tol``."""
    beta = np.sqrt(max(xi ** 2 - lam_max / profile.N_inf, 0.0))
    if beta == 0:
        raise ValueError("eigenvalue at the continuum threshold has no decay")
    return float(np.log(1 / tol) / (2 * beta))


@dataclass
class SLResult:
    """Trapped eigenpairs at one ``(x, xi)``; ``vectors[:, j]`` is unit in ``sum(W v^2)``."""

    x: float
    xi: float
    eigenvalues: np.ndarray
    vectors: np.ndarray
    grid: VerticalGrid
    bottom_mass: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def Z(self) -> np.ndarray:
        return self.grid.Z


def sturm_liouville_eigs(profile: VelocityProfile, x: float, xi: float,
                         Z_bot: Optional[float] = None, nodes: Optional[int] = None,
                         per_layer: int = 400, margin: float = THRESHOLD_MARGIN,
                         allow_empty: bool = False) -> SLResult:
    """Trapped eigenvalues of ``L_{x, xi}`` below ``N_inf xi^2 (1 - margin)``.

    With ``Z_bot`` unset, a first solve on a coarse grid finds the largest
    trapped eigenvalue and the depth is chosen from its decay rate.
    ``nodes`` (if given) overrides ``per_layer`` as the total node count.
    An empty spectrum raises unless ``allow_empty`` is set.
    """
    if not xi > 0:
        raise ValueError("xi must be positive")
    profile.validate(x)
    if not profile.has_well(x):
        if allow_empty:
            return SLResult(float(x), float(xi), np.empty(0), np.empty((0, 0)), VerticalGrid(1.0, 0))
        raise ValueError("no trapped modes (N0 >= N_inf: no well)")
    if Z_bot is None:
        worst = profile.N_inf * xi ** 2 * (1 - margin)
        coarse = VerticalGrid.aligned(profile.Z0, 50,
                                      profile.Z0 - required_depth(profile, xi, worst))
        vals, _ = _solve(profile, x, xi, coarse, margin)
        lam_max = vals.max() if vals.size else worst
        Z_bot = profile.Z0 - max(abs(profile.Z0), required_depth(profile, xi, lam_max))
    if not Z_bot < profile.Z0:
        raise ValueError("Z_bot must lie below Z0")
    if nodes is not None:
        if nodes < 200:
            raise ValueError("nodes must be >= 200")
        per_layer = max(1, int(round(nodes * abs(profile.Z0) / abs(Z_bot))))
    grid = VerticalGrid.aligned(profile.Z0, per_layer, Z_bot)
    vals, vecs = _solve(profile, x, xi, grid, margin)
    if vals.size == 0:
        if allow_empty:
            return SLResult(float(x), float(xi), vals, vecs, grid)
        raise ValueError("no trapped modes")
    deep = grid.Z < grid.Z_bot + 0.1 * (profile.Z0 - grid.Z_bot)
    mass = np.sum((grid.weights[deep, None]) * vecs[deep] ** 2, axis=0)
    if np.any(mass > DECAY_TOL):
        raise ValueError(f"insufficient decay margin: bottom mass {mass.max():.2e} > {DECAY_TOL:g}")
    return SLResult(float(x), float(xi), vals, vecs, grid, mass)


def rayleigh_quotients(profile: VelocityProfile, res: SLResult) -> np.ndarray:
    diag, off = assemble(profile, res.x, res.xi, res.grid)
    y = res.vectors * np.sqrt(res.grid.weights)[:, None]
    ly = diag[:, None] * y
    ly[:-1] += off[:, None] * y[1:]
    ly[1:] += off[:, None] * y[:-1]
    return np.sum(y * ly, axis=0) / np.sum(y * y, axis=0)


def group_velocity(profile: VelocityProfile, res: SLResult) -> np.ndarray:
    """Hellmann-Feynman ``d omega/d xi = xi <N phi, phi> / omega``."""
    grid = res.grid
    node = 0.5 * (profile(res.x, grid.Z - grid.h / 4)
                  + profile(res.x, np.minimum(grid.Z + grid.h / 4, 0.0)))
    node[0] = profile(res.x, np.array([-grid.h / 4]))[0]
    nphi = np.sum(grid.weights[:, None] * node[:, None] * res.vectors ** 2, axis=0)
    dlam = 2 * res.xi * nphi
    return dlam / (2 * np.sqrt(res.eigenvalues))


# ---------------------------------------------------------------------------
# dispersion tables


@dataclass
class DispersionTable:
    """Tracked branches ``lambda[x, xi, branch]`` (NaN where a branch is absent)."""

    x: np.ndarray
    xi: np.ndarray
    eigenvalues: np.ndarray
    group_velocities: np.ndarray
    births: list
    Z_bot: float
    nodes: int
    N0: np.ndarray
    N_inf: float

    @property
    def n_branches(self) -> int:
        return self.eigenvalues.shape[2]

    def mode_counts(self) -> np.ndarray:
        return np.sum(np.isfinite(self.eigenvalues), axis=2)

    def omega(self) -> np.ndarray:
        return np.sqrt(self.eigenvalues)

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "xi", "branch", "lambda", "omega", "group_velocity"])
            for i, x in enumerate(self.x):
                for k, xi in enumerate(self.xi):
                    for j in range(self.n_branches):
                        lam = self.eigenvalues[i, k, j]
                        if np.isfinite(lam):
                            w.writerow([repr(float(x)), repr(float(xi)), j, repr(float(lam)),
                                        repr(float(np.sqrt(lam))),
                                        repr(float(self.group_velocities[i, k, j]))])
        return path


def dispersion_table(profile: VelocityProfile, x, xi_grid: Sequence[float],
                     per_layer: int = 200, margin: float = THRESHOLD_MARGIN) -> DispersionTable:
    """Eigenvalues on a ``xi`` grid, tracked across ``xi`` by eigenvector overlap.

    One vertical grid (deep enough for the smallest ``xi``) serves the whole
    table so consecutive eigenvectors can be compared directly.  A mode
    whose best overlap with the previous ``xi`` is below 0.8 starts a new
    branch and is recorded in ``births``.
    """
    xs = np.atleast_1d(np.asarray(x, float))
    xi_grid = np.asarray(xi_grid, float)
    if np.any(xi_grid <= 0) or np.any(np.diff(xi_grid) <= 0):
        raise ValueError("xi grid must be positive and ascending")
    depth = required_depth(profile, xi_grid[0], profile.N_inf * xi_grid[0] ** 2 * (1 - margin))
    grid = VerticalGrid.aligned(profile.Z0, per_layer, profile.Z0 - max(abs(profile.Z0), depth))
    rows = []
    births = []
    for x0 in xs:
        profile.validate(x0)
        if not profile.has_well(x0):
            raise ValueError(f"no well at x = {x0:g}")
        tracks = []  # list of dicts: branch id -> (lambda, vg) per xi index
        prev_vecs, prev_ids = None, []
        n_ids = 0
        for k, xi in enumerate(xi_grid):
            vals, vecs = _solve(profile, x0, xi, grid, margin)
            res = SLResult(x0, xi, vals, vecs, grid)
            vg = group_velocity(profile, res) if vals.size else np.empty(0)
            ids = []
            used = set()
            for j in range(vals.size):
                best, who = 0.0, None
                if prev_vecs is not None and prev_vecs.shape[1]:
                    ov = np.abs((grid.weights * vecs[:, j]) @ prev_vecs)
                    for c in np.argsort(ov)[::-1]:
                        if prev_ids[c] not in used:
                            best, who = ov[c], prev_ids[c]
                            break
                if best > OVERLAP_MIN:
                    ids.append(who)
                    used.add(who)
                else:
                    ids.append(n_ids)
                    if k > 0:
                        births.append({"x": float(x0), "xi": float(xi), "branch": n_ids})
                    n_ids += 1
            tracks.append({b: (vals[j], vg[j]) for j, b in enumerate(ids)})
            prev_vecs, prev_ids = vecs, ids
        rows.append((tracks, n_ids))
    nb = max(n for _, n in rows)
    lam = np.full((xs.size, xi_grid.size, nb), np.nan)
    vgs = np.full_like(lam, np.nan)
    for i, (tracks, _) in enumerate(rows):
        for k, tr in enumerate(tracks):
            for b, (l, g) in tr.items():
                lam[i, k, b] = l
                vgs[i, k, b] = g
    return DispersionTable(xs, xi_grid, lam, vgs, births, grid.Z_bot, grid.n,
                           np.array([profile.N0(x0) for x0 in xs]), profile.N_inf)


@dataclass
class TabulatedHamiltonian:
    """``H0(x, xi) = sqrt(lambda_j(x, xi))``: cubic in ``xi``, linear in ``x``."""

    x: np.ndarray
    xi: np.ndarray
    values: np.ndarray  # (n_x, n_xi)
    branch: int

    def __post_init__(self):
        self._splines = [interpolate.CubicSpline(self.xi, v) for v in self.values]

    def _weights(self, x):
        x = np.asarray(x, float)
        if self.x.size == 1:
            return np.zeros(x.shape, int), np.zeros(x.shape)
        j = np.clip(np.searchsorted(self.x, x, side="right") - 1, 0, self.x.size - 2)
        w = (x - self.x[j]) / (self.x[j + 1] - self.x[j])
        return j, w

    def derivative(self, x, xi, dxi: int = 0, dx: int = 0) -> np.ndarray:
        """Partial derivatives up to ``dx <= 1`` (piecewise linear in ``x``)."""
        x, xi = np.broadcast_arrays(np.asarray(x, float), np.asarray(xi, float))
        if dx > 1:
            return np.zeros(x.shape)
        j, w = self._weights(x)
        out = np.empty(x.shape)
        for idx in np.ndindex(x.shape):
            s0 = self._splines[j[idx]](xi[idx], dxi)
            if self.x.size == 1:
                out[idx] = 0.0 if dx else s0
                continue
            s1 = self._splines[j[idx] + 1](xi[idx], dxi)
            out[idx] = (s1 - s0) / (self.x[j[idx] + 1] - self.x[j[idx]]) if dx else (1 - w[idx]) * s0 + w[idx] * s1
        return out

    def __call__(self, x, xi) -> np.ndarray:
        return self.derivative(x, xi)

    def to_dict(self) -> dict:
        return {"x": self.x.tolist(), "xi": self.xi.tolist(), "values": self.values.tolist(),
                "branch": self.branch, "interpolation": {"xi": "cubic", "x": "linear"}}

    @classmethod
    def from_dict(cls, d: dict) -> "TabulatedHamiltonian":
        return cls(np.asarray(d["x"], float), np.asarray(d["xi"], float),
                   np.asarray(d["values"], float), int(d["branch"]))


def effective_hamiltonian_export(table: DispersionTable, branch: int) -> TabulatedHamiltonian:
    """Sampled ``H0 = sqrt(lambda_branch)`` over the table grid."""
    if not 0 <= branch < table.n_branches:
        raise ValueError(f"no branch {branch}")
    lam = table.eigenvalues[:, :, branch]
    if not np.all(np.isfinite(lam)):
        raise ValueError(f"branch {branch} has holes on the requested grid")
    return TabulatedHamiltonian(table.x.copy(), table.xi.copy(), np.sqrt(lam), branch)


def square_well_eigenvalues(N0: float, N_inf: float, depth: float, xi: float) -> np.ndarray:
    """Trapped eigenvalues of a square well from its transcendental equation.

    Inside the layer ``v = cos(kappa Z)`` with ``lambda = N0 (kappa^2 + xi^2)``;
    continuity of ``v`` and ``N v'`` at ``Z = -depth`` against the decaying
    tail gives ``N0 kappa sin(kappa L) = N_inf beta cos(kappa L)``, one root
    per interval ``(j pi, (j + 1/2) pi) / L``, found by a bracketing root solve.
    """
    if not 0 < N0 < N_inf:
        raise ValueError("square well needs 0 < N0 < N_inf")
    L = float(depth)
    kmax = xi * np.sqrt(N_inf / N0 - 1)

    def f(k):
        beta = np.sqrt(max(xi ** 2 - N0 * (k ** 2 + xi ** 2) / N_inf, 0.0))
        return N0 * k * np.sin(k * L) - N_inf * beta * np.cos(k * L)

    out = []
    j = 0
    while j * np.pi / L < kmax:
        lo = j * np.pi / L + 1e-14
        hi = min((j + 0.5) * np.pi / L, kmax) - 1e-14
        if hi > lo and f(lo) * f(hi) < 0:
            k = brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
            out.append(N0 * (k ** 2 + xi ** 2))
        j += 1
    return np.asarray(out)
