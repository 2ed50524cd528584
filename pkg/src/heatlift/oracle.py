"""Independent ground-truth generators.

Three oracles with no shared code paths against the evaluators they check:

* `mc_density` simulates the diffusion generated by the sum of squares of the
  fields (Euler-Maruyama, counter-based RNG streams) and bins the terminal
  points; the saturated kernel is its transition density.
* `fd_cauchy_solver` marches the degenerate heat equation with explicit
  central differences; it checks the Cauchy-potential solver.
* `fd_derivative` applies nested central differences along the exact flow
  curves of the base fields, with a Richardson error estimate; it checks the
  representation formulas for derivatives.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .carnot import flow_with_time
from .fields import VectorField
from .poly import PolyMap, Poly


def max_threads() -> int:
    """Worker cap for path-parallel runs; HH_THREADS mirrors --threads."""
    try:
        return max(1, int(os.environ.get("HH_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class DiffusionConfig:
    """Euler-Maruyama settings; the seed keys counter-based RNG streams."""

    fields: list[VectorField]
    dt: float
    paths: int
    seed: int
    chunk: int = 250_000

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.paths < 1:
            raise ValueError("paths must be positive")


@dataclass
class DensityEstimate:
    box: list[tuple[float, float]]
    bins: tuple[int, ...]
    density: np.ndarray
    stderr: np.ndarray
    counts: np.ndarray
    paths: int
    seed: int
    dt: float
    inside_fraction: float

    def bin_centers(self, axis: int) -> np.ndarray:
        lo, hi = self.box[axis]
        edges = np.linspace(lo, hi, self.bins[axis] + 1)
        return 0.5 * (edges[:-1] + edges[1:])

    @property
    def empty_bins(self) -> int:
        return int(np.sum(self.counts == 0))

    @property
    def stability_warning(self) -> bool:
        # mass leaving the query box wholesale usually means dt is too coarse
        # for the field growth (or the box is simply misplaced)
        return self.inside_fraction < 0.5

    def to_json(self) -> dict:
        return {
            "box": [[float(a), float(b)] for a, b in self.box],
            "bins": list(self.bins),
            "density": self.density.tolist(),
            "stderr": self.stderr.tolist(),
            "counts": self.counts.tolist(),
            "paths": self.paths,
            "seed": self.seed,
            "dt": self.dt,
            "inside_fraction": self.inside_fraction,
            "empty_bins": self.empty_bins,
            "stability_warning": self.stability_warning,
        }


def ito_drift(fields: list[VectorField]) -> PolyMap:
    """Drift making the Ito SDE with sqrt(2) X_j noise match sum X_j^2.

    The generator of dY = b dt + sqrt(2) sum_j X_j dW^j is
    b . grad + sum_j (X_j . grad)^2 - sum_j ((DX_j) X_j) . grad, so
    b = sum_j (DX_j) X_j; with sqrt(2)-scaled noise the Stratonovich
    half cancels the scaling squared.
    """
    n = fields[0].n
    comps = [Poly.zero(n) for _ in range(n)]
    for X in fields:
        for l in range(n):
            for k in range(n):
                if not X.components[k].is_zero():
                    comps[l] = comps[l] + X.components[k] * X.components[l].partial(k)
    return PolyMap(comps)


def mc_density(
    cfg: DiffusionConfig,
    start,
    t0: float,
    t1: float,
    box,
    bins,
) -> DensityEstimate:
    """Terminal-density histogram of the diffusion started at ``start``.

    Deterministic given (seed, config): path chunks draw from Philox streams
    keyed by (seed, chunk index), so the schedule cannot change the numbers.
    """
    if t1 <= t0:
        raise ValueError("need t1 > t0")
    fields = cfg.fields
    n = fields[0].n
    start = np.asarray(start, dtype=float).reshape(n)
    box = [(float(a), float(b)) for a, b in box]
    bins = tuple(int(b) for b in bins)
    nsteps = int(round((t1 - t0) / cfg.dt))
    if abs(nsteps * cfg.dt - (t1 - t0)) > 1e-9 * (t1 - t0):
        raise ValueError("dt must divide the time interval")
    drift = ito_drift(fields)
    drift_is_zero = all(c.is_zero() for c in drift.components)
    field_maps = [PolyMap(list(X.components)) for X in fields]
    const_fields = [
        np.array([float(c.constant_term()) for c in X.components])
        if all(c.is_constant() for c in X.components) else None
        for X in fields
    ]
    sqrt2dt = math.sqrt(2.0 * cfg.dt)

    edges = [np.linspace(lo, hi, nb + 1) for (lo, hi), nb in zip(box, bins)]

    def run_chunk(ci: int) -> np.ndarray:
        npaths = min(cfg.chunk, cfg.paths - ci * cfg.chunk)
        rng = np.random.Generator(
            np.random.Philox(key=np.array([cfg.seed, ci], dtype=np.uint64))
        )
        Y = np.tile(start, (npaths, 1))
        for _ in range(nsteps):
            dW = rng.standard_normal((npaths, len(fields))) * sqrt2dt
            step = np.zeros_like(Y)
            for j, X in enumerate(fields):
                if const_fields[j] is not None:
                    step += dW[:, j: j + 1] * const_fields[j][None, :]
                else:
                    step += dW[:, j: j + 1] * field_maps[j](Y)
            if not drift_is_zero:
                step += cfg.dt * drift(Y)
            Y += step
        H, _ = np.histogramdd(Y, bins=edges)
        return H

    n_chunks = (cfg.paths + cfg.chunk - 1) // cfg.chunk
    workers = min(max_threads(), n_chunks)
    if workers > 1:
        # chunk streams are keyed by (seed, chunk), so scheduling cannot
        # change the result; summation order is fixed by the chunk index
        with ThreadPoolExecutor(max_workers=workers) as pool:
            histos = list(pool.map(run_chunk, range(n_chunks)))
    else:
        histos = [run_chunk(ci) for ci in range(n_chunks)]
    counts = np.zeros(bins)
    for H in histos:
        counts += H
    total_inside = int(counts.sum())

    vol = math.prod((hi - lo) / nb for (lo, hi), nb in zip(box, bins))
    p = counts / cfg.paths
    density = p / vol
    stderr = np.sqrt(np.maximum(p * (1.0 - p), 0.0) / cfg.paths) / vol
    return DensityEstimate(
        box=box, bins=bins, density=density, stderr=stderr, counts=counts,
        paths=cfg.paths, seed=cfg.seed, dt=cfg.dt,
        inside_fraction=total_inside / cfg.paths,
    )


class CFLError(ValueError):
    pass


def fd_cauchy_solver(
    box,
    shape,
    phi,
    T: float,
    coefficients=None,
    dt: float | None = None,
    safety: float = 0.9,
):
    """Explicit finite-difference solution of u_t = sum_i a_i(x) d^2_i u.

    Second-order central differences in space, forward Euler in time,
    Dirichlet zero closure at the far field (the true solutions decay).
    ``coefficients`` maps the mesh to the diagonal coefficients a_i; the
    default is the degenerate pair (1, x1^2).  Rejects time steps violating
    the CFL bound.  Returns (axes, U) at time T.
    """
    box = [(float(a), float(b)) for a, b in box]
    shape = tuple(int(s) for s in shape)
    ndim = len(box)
    axes = [np.linspace(lo, hi, s) for (lo, hi), s in zip(box, shape)]
    hs = [ax[1] - ax[0] for ax in axes]
    mesh = np.meshgrid(*axes, indexing="ij")
    if coefficients is None:
        if ndim != 2:
            raise ValueError("default coefficients are the 2-d degenerate pair")
        coefficients = lambda m: (np.ones_like(m[0]), m[0] ** 2)
    coefs = [np.asarray(c, dtype=float) for c in coefficients(mesh)]

    stability = sum(2.0 * np.max(c) / h**2 for c, h in zip(coefs, hs))
    dt_max = safety / stability
    if dt is None:
        nsteps = max(1, int(math.ceil(T / dt_max)))
        dt = T / nsteps
    else:
        nsteps = int(round(T / dt))
        if abs(nsteps * dt - T) > 1e-9 * T:
            raise ValueError("dt must divide T")
        if dt > dt_max:
            raise CFLError(f"dt={dt:g} violates the CFL bound {dt_max:g}")

    U = np.asarray(phi(mesh) if callable(phi) else phi, dtype=float).copy()
    if U.shape != tuple(shape):
        raise ValueError("initial datum does not match the grid")

    inner = tuple(slice(1, -1) for _ in range(ndim))
    for _ in range(nsteps):
        lap = np.zeros_like(U)
        for ax in range(ndim):
            up = [slice(1, -1)] * ndim
            dn = [slice(1, -1)] * ndim
            up[ax] = slice(2, None)
            dn[ax] = slice(0, -2)
            second = (U[tuple(up)] - 2.0 * U[inner] + U[tuple(dn)]) / hs[ax] ** 2
            lap[inner] += coefs[ax][inner] * second
        U = U + dt * lap
        # Dirichlet far-field closure
        for ax in range(ndim):
            lo = [slice(None)] * ndim
            hi = [slice(None)] * ndim
            lo[ax], hi[ax] = 0, -1
            U[tuple(lo)] = 0.0
            U[tuple(hi)] = 0.0
    return axes, U


def grid_lookup(axes, U, point) -> float:
    """Multilinear interpolation on the FD grid."""
    point = np.asarray(point, dtype=float)
    idx = []
    wts = []
    for ax, x in zip(axes, point):
        i = int(np.clip(np.searchsorted(ax, x) - 1, 0, len(ax) - 2))
        w = (x - ax[i]) / (ax[i + 1] - ax[i])
        idx.append(i)
        wts.append(np.clip(w, 0.0, 1.0))
    out = 0.0
    for corner in np.ndindex(*(2,) * len(axes)):
        weight = math.prod(w if c else 1 - w for c, w in zip(corner, wts))
        out += weight * U[tuple(i + c for i, c in zip(idx, corner))]
    return float(out)


class StencilError(RuntimeError):
    pass


def fd_derivative(
    fn,
    fields: list[VectorField],
    word: tuple[int, ...],
    point,
    h: float = 2e-2,
    tol: float | None = None,
):
    """Nested central differences of fn along field-flow directions.

    ``fn`` maps a batch of points (M, n) to (M,) values; ``word`` holds
    1-based indices into ``fields``, read left to right as operators (the
    flow of a later letter is applied outside earlier ones).  Returns
    (value, error_estimate) from one Richardson extrapolation step; raises
    when a requested tolerance is exceeded by the estimate.
    """
    point = np.asarray(point, dtype=float)
    if not word:
        val = float(np.atleast_1d(fn(point[None, :]))[0])
        return val, 0.0
    flows = [flow_with_time(fields[i - 1]) for i in word]

    def shifted(pt, steps):
        out = pt[None, :]
        for flow, s in zip(flows, steps):
            arg = np.concatenate([out, [[s]]], axis=1)
            out = np.atleast_2d(flow(arg))
        return out[0]

    def stencil(step):
        pts = []
        coefs = []
        for signs in np.ndindex(*(2,) * len(word)):
            steps = [step if sg == 0 else -step for sg in signs]
            coefs.append(math.prod([1.0 if sg == 0 else -1.0 for sg in signs]))
            pts.append(shifted(point, steps))
        vals = np.asarray(fn(np.array(pts)), dtype=float)
        return float(np.dot(coefs, vals)) / (2.0 * step) ** len(word)

    d1 = stencil(h)
    d2 = stencil(h / 2.0)
    value = (4.0 * d2 - d1) / 3.0
    err = abs(d2 - d1) / 3.0
    if tol is not None and err > tol:
        raise StencilError(f"finite-difference error estimate {err:g} exceeds {tol:g}")
    return value, err


def fd_time_derivative(fn_scalar, t: float, order: int = 1, h: float | None = None):
    """Central time differences with one Richardson step; returns (value, err)."""
    if order == 0:
        return float(fn_scalar(t)), 0.0
    if order > 2:
        raise NotImplementedError("time derivatives implemented up to order 2")
    h = h if h is not None else 0.02 * max(abs(t), 0.1)
    h = min(h, abs(t) / 4) if t > 0 else h

    def diff(step):
        if order == 1:
            return (fn_scalar(t + step) - fn_scalar(t - step)) / (2 * step)
        return (fn_scalar(t + step) - 2.0 * fn_scalar(t) + fn_scalar(t - step)) / step**2

    d1, d2 = diff(h), diff(h / 2.0)
    return (4.0 * d2 - d1) / 3.0, abs(d2 - d1) / 3.0
