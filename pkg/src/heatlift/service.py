"""FastAPI service wrapping the toolkit.

The lifting construction is expensive and exact; evaluations against a built
lift are cheap and many.  The service holds built lifts (and their fitted
kernels) in a small cache keyed by the canonical system document and exposes
every pipeline stage as an endpoint; the CLI is a thin client over this app.
"""

from __future__ import annotations

import io
import json
from functools import lru_cache

import numpy as np
from fastapi import FastAPI
from fastapi.responses import JSONResponse, PlainTextResponse
from pydantic import BaseModel, ConfigDict, Field, field_validator

from . import __version__
from .carnot import LiftError
from .cauchy import (BoundedInitialDatum, constant_datum, gaussian_datum,
                     reproduction_check, solve_cauchy, tabulated_datum)
from .kernel import HeatKernel, KernelError
from .oracle import DiffusionConfig, fd_cauchy_solver, grid_lookup, mc_density
from .quadrature import QuadratureError
from .saturation import DerivativeSpec, PoleError, SaturatedKernel
from .systems import FieldSystem, SystemError, build_system, builtin_system, parse_system
from .verify import VerifySuite, profile


class SystemDoc(BaseModel):
    """Inline system document or the name of a built-in one."""

    model_config = ConfigDict(extra="forbid")
    builtin: str | None = None
    n: int | None = None
    weights: list[str] | None = None
    fields: list[list[str]] | None = None

    def resolve(self) -> FieldSystem:
        if self.builtin is not None:
            return builtin_system(self.builtin)
        doc = {k: v for k, v in self.model_dump().items()
               if k != "builtin" and v is not None}
        return parse_system(doc)


class LiftRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    system: SystemDoc
    include_group: bool = True


class VerifyRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    system: SystemDoc
    profile: str = "default"
    thorough: bool = False
    seed: int = 7


class KernelEvalRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    system: SystemDoc
    t: float
    point: list[float]
    tol: float = Field(default=1e-9, gt=0)


class KernelSelftestRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    system: SystemDoc
    tol_sym: float = Field(default=1e-6, gt=0)
    tol_hom: float = Field(default=1e-6, gt=0)
    tol_mass: float = Field(default=1e-4, gt=0)
    tol_pde: float = Field(default=1e-3, gt=0)


class DerivSpecDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")
    alpha: int = 0
    beta: int = 0
    y_word: list[int] = Field(default_factory=list)
    x_word: list[int] = Field(default_factory=list)


class GammaEvalRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    system: SystemDoc
    pole_t: float
    pole_x: list[float]
    at_s: float
    at_y: list[float]
    deriv: DerivSpecDoc | None = None
    tol: float = Field(default=1e-6, gt=0)


class GammaGridRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    system: SystemDoc
    pole_t: float
    pole_x: list[float]
    s: float
    y_min: list[float]
    y_max: list[float]
    shape: list[int]
    fast: bool = True

    @field_validator("shape")
    @classmethod
    def _positive(cls, v):
        if any(s < 2 for s in v):
            raise ValueError("grid shape entries must be >= 2")
        return v


class CauchyRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    system: SystemDoc
    datum: str = "gauss"  # one | zero | gauss | JSON text of a tabulated grid
    t: float = Field(gt=0)
    x: list[float]
    tol: float = Field(default=1e-5, gt=0)


class CauchyGridRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    system: SystemDoc
    datum: str = "gauss"
    t: float = Field(gt=0)
    points: list[list[float]]
    tol: float = Field(default=1e-5, gt=0)


class ReproductionRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    system: SystemDoc
    x: list[float]
    y: list[float]
    s: float = Field(gt=0)
    t: float = Field(gt=0)


class OracleMCRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    system: SystemDoc
    start: list[float]
    t0: float = 0.0
    t1: float = 1.0
    dt: float = Field(default=1e-3, gt=0)
    paths: int = Field(default=100_000, ge=1)
    seed: int = 20240117
    box: list[list[float]]
    bins: list[int]


class OracleFDRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    box: list[list[float]]
    shape: list[int]
    T: float = Field(gt=0)
    datum: str = "gauss"
    probes: list[list[float]] = Field(default_factory=list)


def _resolve_datum(spec: str, n: int) -> BoundedInitialDatum:
    if spec == "one":
        return constant_datum(1.0, n)
    if spec == "zero":
        return constant_datum(0.0, n)
    if spec == "gauss":
        return gaussian_datum(n)
    try:
        doc = json.loads(spec)
    except json.JSONDecodeError:
        raise SystemError(f"unknown datum {spec!r}; use one|zero|gauss or a "
                          "tabulated-grid JSON document")
    return tabulated_datum(doc)


@lru_cache(maxsize=8)
def _runtime(canonical: str):
    """Built lift plus fitted kernel and saturated evaluator, cached."""
    system = parse_system(json.loads(canonical))
    lift = build_system(system)
    if lift.group is None:
        return lift, None, None
    kernel = HeatKernel(lift.group)
    kernel.ensure_table()
    sat = SaturatedKernel(lift.group, kernel)
    return lift, kernel, sat


def runtime_for(system: FieldSystem):
    return _runtime(system.canonical_json())


def _require_kernel(sat):
    if sat is None:
        raise KernelError("no kernel family available for this system "
                          "(N = n, or step >= 3 without an external kernel)")


def create_app() -> FastAPI:
    app = FastAPI(title="heatlift", version=__version__)

    @app.exception_handler(SystemError)
    async def _bad_system(request, exc):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.exception_handler(PoleError)
    async def _pole(request, exc):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.exception_handler(ValueError)
    async def _bad_value(request, exc):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.exception_handler(KernelError)
    async def _no_kernel(request, exc):
        return JSONResponse(status_code=409, content={"error": str(exc)})

    @app.exception_handler(QuadratureError)
    async def _no_convergence(request, exc):
        return JSONResponse(status_code=409,
                            content={"error": str(exc), "kind": "non-convergence"})

    @app.exception_handler(LiftError)
    async def _lift_failed(request, exc):
        return JSONResponse(status_code=500, content={"error": str(exc)})

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/lift")
    def lift(req: LiftRequest):
        system = req.system.resolve()
        result = build_system(system)
        out = {"report": result.report()}
        if req.include_group and result.group is not None:
            out["group"] = result.group.to_json()
        return out

    @app.post("/verify")
    def verify(req: VerifyRequest):
        system = req.system.resolve()
        suite = VerifySuite(system, tols=profile(req.profile), seed=req.seed)
        return suite.run(thorough=req.thorough)

    @app.post("/kernel/eval")
    def kernel_eval(req: KernelEvalRequest):
        system = req.system.resolve()
        _, kernel, _ = runtime_for(system)
        _require_kernel(kernel)
        if len(req.point) != kernel.group.N:
            raise SystemError(f"point must have {kernel.group.N} coordinates")
        value = float(kernel.values(req.t, np.array([req.point]), rel_tol=req.tol)[0])
        return {"t": req.t, "point": req.point, "value": value,
                "family": kernel.family, "Q": float(kernel.Qf)}

    @app.post("/kernel/selftest")
    def kernel_selftest(req: KernelSelftestRequest):
        system = req.system.resolve()
        _, kernel, _ = runtime_for(system)
        _require_kernel(kernel)
        report = kernel.selftest(tol_sym=req.tol_sym, tol_hom=req.tol_hom,
                                 tol_mass=req.tol_mass, tol_pde=req.tol_pde)
        report["family"] = kernel.family
        report["gauss_c"] = kernel.gauss_c or kernel.fit_gauss_c()
        return report

    @app.post("/gamma/eval")
    def gamma_eval(req: GammaEvalRequest):
        system = req.system.resolve()
        _, _, sat = runtime_for(system)
        _require_kernel(sat)
        if req.deriv is None or (
            not req.deriv.y_word and not req.deriv.x_word
            and req.deriv.alpha == 0 and req.deriv.beta == 0
        ):
            value = sat.gamma(req.pole_t, req.pole_x, req.at_s, req.at_y,
                              rel_tol=req.tol)
        else:
            spec = DerivativeSpec(alpha=req.deriv.alpha, beta=req.deriv.beta,
                                  y_word=tuple(req.deriv.y_word),
                                  x_word=tuple(req.deriv.x_word))
            value = sat.derivative(spec, req.pole_t, req.pole_x,
                                   req.at_s, req.at_y, rel_tol=req.tol)
        return {"value": value, "beta": sat.beta, "gauss_c": sat.gauss_c}

    @app.post("/gamma/grid", response_class=PlainTextResponse)
    def gamma_grid(req: GammaGridRequest):
        system = req.system.resolve()
        _, _, sat = runtime_for(system)
        _require_kernel(sat)
        n = system.n
        if not (len(req.y_min) == len(req.y_max) == len(req.shape) == n):
            raise SystemError(f"grid spec must have {n} entries per axis")
        axes = [np.linspace(a, b, s) for a, b, s in zip(req.y_min, req.y_max, req.shape)]
        mesh = np.meshgrid(*axes, indexing="ij")
        flat = np.stack([m.ravel() for m in mesh], axis=-1)
        tau = req.s - req.pole_t
        if tau <= 0:
            vals = np.zeros(flat.shape[0])
        elif req.fast:
            vals, _ = sat.gamma_tau_frozen(tau, req.pole_x, flat)
        else:
            vals = sat.gamma_tau(tau, req.pole_x, flat)
        buf = io.StringIO()
        cols = ",".join(f"y{i + 1}" for i in range(n))
        buf.write(f"s,{cols},gamma\n")
        for row, v in zip(flat, vals):
            ys = ",".join(f"{c:.17g}" for c in row)
            buf.write(f"{req.s:.17g},{ys},{v:.17g}\n")
        return buf.getvalue()

    @app.post("/cauchy/solve")
    def cauchy_solve(req: CauchyRequest):
        system = req.system.resolve()
        _, _, sat = runtime_for(system)
        _require_kernel(sat)
        datum = _resolve_datum(req.datum, system.n)
        value = solve_cauchy(sat, datum, req.t, req.x, rel_tol=req.tol)
        return {"t": req.t, "x": req.x, "value": value, "datum": datum.name,
                "bound": datum.bound}

    @app.post("/cauchy/grid", response_class=PlainTextResponse)
    def cauchy_grid(req: CauchyGridRequest):
        system = req.system.resolve()
        _, _, sat = runtime_for(system)
        _require_kernel(sat)
        datum = _resolve_datum(req.datum, system.n)
        buf = io.StringIO()
        cols = ",".join(f"x{i + 1}" for i in range(system.n))
        buf.write(f"t,{cols},u\n")
        for point in req.points:
            value = solve_cauchy(sat, datum, req.t, point, rel_tol=req.tol)
            xs = ",".join(f"{c:.17g}" for c in point)
            buf.write(f"{req.t:.17g},{xs},{value:.17g}\n")
        return buf.getvalue()

    @app.post("/cauchy/reproduction")
    def cauchy_reproduction(req: ReproductionRequest):
        system = req.system.resolve()
        _, _, sat = runtime_for(system)
        _require_kernel(sat)
        lhs, rhs, err = reproduction_check(sat, req.x, req.y, req.s, req.t)
        return {"lhs": lhs, "rhs": rhs, "quad_error": err,
                "rel_difference": abs(lhs - rhs) / max(abs(lhs), 1e-300)}

    @app.post("/oracle/mc")
    def oracle_mc(req: OracleMCRequest):
        system = req.system.resolve()
        cfg = DiffusionConfig(fields=system.fields, dt=req.dt,
                              paths=req.paths, seed=req.seed)
        est = mc_density(cfg, req.start, req.t0, req.t1,
                         [tuple(b) for b in req.box], tuple(req.bins))
        out = est.to_json()
        out["config"] = {"dt": req.dt, "paths": req.paths, "seed": req.seed,
                         "t0": req.t0, "t1": req.t1,
                         "system": system.to_json()}
        return out

    @app.post("/oracle/fd")
    def oracle_fd(req: OracleFDRequest):
        datum = _resolve_datum(req.datum, len(req.box))

        def phi(mesh):
            flat = np.stack([m.ravel() for m in mesh], axis=-1)
            return datum(flat).reshape(mesh[0].shape)

        axes, U = fd_cauchy_solver([tuple(b) for b in req.box],
                                   tuple(req.shape), phi, req.T)
        probes = {}
        for p in req.probes:
            probes[",".join(f"{c:g}" for c in p)] = grid_lookup(axes, U, p)
        return {
            "T": req.T,
            "box": req.box,
            "shape": req.shape,
            "datum": datum.name,
            "max_value": float(np.max(U)),
            "min_value": float(np.min(U)),
            "probes": probes,
        }

    return app


app = create_app()
