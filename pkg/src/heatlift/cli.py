"""Command-line interface: a thin client over the service app.

Every subcommand builds a request, sends it through the service (in-process
by default, or to a remote instance with --server), and prints the JSON or
CSV response.  Exit codes: 0 pass, 1 check failure, 2 usage error,
3 numeric non-convergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_NON_CONVERGENCE = 3


def _system_doc(spec: str) -> dict:
    """Resolve a system argument: a JSON file path or a builtin name."""
    from .systems import BUILTIN_SYSTEMS, SystemError, loads_system

    if spec.startswith("builtin:"):
        spec = spec.split(":", 1)[1]
    path = Path(spec)
    if path.exists():
        system = loads_system(path.read_text(encoding="utf-8"), name=str(path))
        return system.to_json()
    if spec in BUILTIN_SYSTEMS:
        return {"builtin": spec}
    raise SystemError(f"{spec!r} is neither a readable file nor a builtin system "
                      f"({sorted(BUILTIN_SYSTEMS)})")


def _floats(text: str) -> list[float]:
    return [float(tok) for tok in text.replace(",", " ").split()]


def _ints(text: str) -> list[int]:
    return [int(tok) for tok in text.replace(",", " ").split()]


def _parse_deriv(text: str) -> dict:
    """Parse 'alpha=1 beta=0 y=1,2 x=1' into a derivative spec document."""
    out = {"alpha": 0, "beta": 0, "y_word": [], "x_word": []}
    for token in text.replace(";", " ").split():
        if "=" not in token:
            raise ValueError(f"bad derivative token {token!r}")
        key, val = token.split("=", 1)
        if key in ("alpha", "beta"):
            out[key] = int(val)
        elif key in ("y", "y_word"):
            out["y_word"] = _ints(val)
        elif key in ("x", "x_word"):
            out["x_word"] = _ints(val)
        else:
            raise ValueError(f"unknown derivative key {key!r}")
    return out


class Client:
    """HTTP-ish client: in-process ASGI by default, remote with --server."""

    def __init__(self, server: str | None):
        if server:
            import httpx

            self._client = httpx.Client(base_url=server, timeout=600.0)
        else:
            from starlette.testclient import TestClient

            from .service import create_app

            self._client = TestClient(create_app(), raise_server_exceptions=False)

    def post(self, path: str, payload: dict):
        return self._client.post(path, json=payload)

    def get(self, path: str):
        return self._client.get(path)


def _emit(text: str, out_path: str | None):
    if out_path:
        Path(out_path).write_text(text, encoding="utf-8")
    else:
        print(text)


def _handle(resp, out_path=None, check_key=None, csv=False) -> int:
    if resp.status_code in (400, 422):
        print(f"error: {_error_text(resp)}", file=sys.stderr)
        return EXIT_USAGE
    if resp.status_code == 409:
        print(f"error: {_error_text(resp)}", file=sys.stderr)
        return EXIT_NON_CONVERGENCE
    if resp.status_code != 200:
        print(f"error: HTTP {resp.status_code}: {_error_text(resp)}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    if csv:
        _emit(resp.text, out_path)
        return EXIT_OK
    doc = resp.json()
    _emit(json.dumps(doc, indent=1, sort_keys=True), out_path)
    if check_key is not None and not doc.get(check_key, True):
        return EXIT_CHECK_FAILED
    return EXIT_OK


def _error_text(resp) -> str:
    try:
        doc = resp.json()
        return doc.get("error") or json.dumps(doc)
    except Exception:
        return resp.text[:400]


def _print_check_table(doc: dict, file):
    """Human-readable companion to the JSON verify report."""
    checks = doc.get("checks", [])
    if not checks:
        return
    width = max(len(c["name"]) for c in checks)
    print(f"{'check'.ljust(width)}  status   measured      tol", file=file)
    for c in checks:
        measured = "-" if c["measured"] is None else f"{c['measured']:.3e}"
        tol = "-" if c["tol"] is None else f"{c['tol']:.3e}"
        print(f"{c['name'].ljust(width)}  {c['status']:<8} {measured:<13} {tol}",
              file=file)
    print(f"overall: {'pass' if doc.get('pass') else 'FAIL'} "
          f"({doc.get('elapsed_seconds', '?')}s)", file=file)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="heatlift",
        description="Carnot-group liftings and global heat kernels for "
                    "homogeneous degenerate operators",
    )
    ap.add_argument("--server", help="use a remote service instead of in-process")
    ap.add_argument("--threads", type=int, help="worker cap (mirrors HH_THREADS)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("lift", help="build and verify the Carnot lifting")
    p.add_argument("system", help="system JSON file or builtin name")
    p.add_argument("-o", "--output", help="write the JSON report here")
    p.add_argument("--no-group", action="store_true",
                   help="omit the full group document from the output")

    p = sub.add_parser("verify", help="run the property suite")
    p.add_argument("system")
    p.add_argument("--profile", default="default")
    p.add_argument("--thorough", action="store_true",
                   help="include the Monte Carlo cross-check")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("-o", "--output")

    p = sub.add_parser("kernel", help="lifted-kernel operations")
    ksub = p.add_subparsers(dest="kernel_command", required=True)
    pe = ksub.add_parser("eval", help="evaluate gamma(t, g)")
    pe.add_argument("system")
    pe.add_argument("--t", type=float, required=True)
    pe.add_argument("--point", required=True, help="comma-separated coordinates")
    pe.add_argument("--tol", type=float, default=1e-9)
    pe.add_argument("-o", "--output")
    ps = ksub.add_parser("selftest", help="check the kernel contract")
    ps.add_argument("system")
    ps.add_argument("--tol-sym", type=float, default=1e-6)
    ps.add_argument("--tol-hom", type=float, default=1e-6)
    ps.add_argument("--tol-mass", type=float, default=1e-4)
    ps.add_argument("--tol-pde", type=float, default=1e-3)
    ps.add_argument("-o", "--output")

    p = sub.add_parser("gamma", help="saturated-kernel operations")
    gsub = p.add_subparsers(dest="gamma_command", required=True)
    ge = gsub.add_parser("eval", help="evaluate Gamma or one of its derivatives")
    ge.add_argument("system")
    ge.add_argument("--pole", required=True, help="t,x1,...,xn")
    ge.add_argument("--at", required=True, help="s,y1,...,yn")
    ge.add_argument("--deriv", help="e.g. 'alpha=1 beta=0 y=1 x=2'")
    ge.add_argument("--tol", type=float, default=1e-6)
    ge.add_argument("-o", "--output")
    gg = gsub.add_parser("grid", help="CSV sweep of Gamma over a y-grid")
    gg.add_argument("system")
    gg.add_argument("--pole", required=True, help="t,x1,...,xn")
    gg.add_argument("--s", type=float, required=True)
    gg.add_argument("--ymin", required=True)
    gg.add_argument("--ymax", required=True)
    gg.add_argument("--shape", required=True, help="e.g. 41,41")
    gg.add_argument("--exact", action="store_true",
                    help="per-point adaptive quadrature instead of the fast sweep")
    gg.add_argument("-o", "--output")

    p = sub.add_parser("cauchy", help="solve the homogeneous Cauchy problem")
    p.add_argument("system")
    p.add_argument("--datum", default="gauss",
                   help="one|zero|gauss or a tabulated-grid JSON file")
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--x", required=True,
                   help="point 'x1,x2'; several points joined by ';' emit CSV")
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("-o", "--output")

    p = sub.add_parser("oracle", help="independent ground-truth generators")
    osub = p.add_subparsers(dest="oracle_command", required=True)
    om = osub.add_parser("mc", help="Monte Carlo diffusion density")
    om.add_argument("system")
    om.add_argument("--start", required=True)
    om.add_argument("--t0", type=float, default=0.0)
    om.add_argument("--t1", type=float, default=1.0)
    om.add_argument("--dt", type=float, default=1e-3)
    om.add_argument("--paths", type=int, default=100_000)
    om.add_argument("--seed", type=int, default=20240117)
    om.add_argument("--box", required=True, help="per-axis 'lo,hi' joined by ';'")
    om.add_argument("--bins", required=True)
    om.add_argument("-o", "--output")
    of = osub.add_parser("fd", help="finite-difference parabolic solver")
    of.add_argument("--box", required=True, help="per-axis 'lo,hi' joined by ';'")
    of.add_argument("--shape", required=True)
    of.add_argument("--T", type=float, required=True)
    of.add_argument("--datum", default="gauss")
    of.add_argument("--probe", action="append", default=[],
                    help="point to report (repeatable)")
    of.add_argument("-o", "--output")

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8711)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.threads is not None:
        os.environ["HH_THREADS"] = str(args.threads)

    if args.command == "serve":
        import uvicorn

        from .service import create_app

        uvicorn.run(create_app(), host=args.host, port=args.port)
        return EXIT_OK

    from .systems import SystemError

    try:
        client = Client(args.server)
        if args.command == "lift":
            resp = client.post("/lift", {
                "system": _system_doc(args.system),
                "include_group": not args.no_group,
            })
            return _handle(resp, args.output)

        if args.command == "verify":
            resp = client.post("/verify", {
                "system": _system_doc(args.system),
                "profile": args.profile,
                "thorough": args.thorough,
                "seed": args.seed,
            })
            if resp.status_code == 200:
                _print_check_table(resp.json(), file=sys.stderr)
            return _handle(resp, args.output, check_key="pass")

        if args.command == "kernel":
            if args.kernel_command == "eval":
                resp = client.post("/kernel/eval", {
                    "system": _system_doc(args.system),
                    "t": args.t,
                    "point": _floats(args.point),
                    "tol": args.tol,
                })
                return _handle(resp, args.output)
            resp = client.post("/kernel/selftest", {
                "system": _system_doc(args.system),
                "tol_sym": args.tol_sym,
                "tol_hom": args.tol_hom,
                "tol_mass": args.tol_mass,
                "tol_pde": args.tol_pde,
            })
            return _handle(resp, args.output, check_key="pass")

        if args.command == "gamma":
            pole = _floats(args.pole)
            if args.gamma_command == "eval":
                at = _floats(args.at)
                payload = {
                    "system": _system_doc(args.system),
                    "pole_t": pole[0],
                    "pole_x": pole[1:],
                    "at_s": at[0],
                    "at_y": at[1:],
                    "tol": args.tol,
                }
                if args.deriv:
                    payload["deriv"] = _parse_deriv(args.deriv)
                resp = client.post("/gamma/eval", payload)
                return _handle(resp, args.output)
            resp = client.post("/gamma/grid", {
                "system": _system_doc(args.system),
                "pole_t": pole[0],
                "pole_x": pole[1:],
                "s": args.s,
                "y_min": _floats(args.ymin),
                "y_max": _floats(args.ymax),
                "shape": _ints(args.shape),
                "fast": not args.exact,
            })
            return _handle(resp, args.output, csv=True)

        if args.command == "cauchy":
            datum = args.datum
            if datum not in ("one", "zero", "gauss") and Path(datum).exists():
                datum = Path(datum).read_text(encoding="utf-8")
            points = [_floats(chunk) for chunk in args.x.split(";")]
            if len(points) > 1:
                resp = client.post("/cauchy/grid", {
                    "system": _system_doc(args.system),
                    "datum": datum,
                    "t": args.t,
                    "points": points,
                    "tol": args.tol,
                })
                return _handle(resp, args.output, csv=True)
            resp = client.post("/cauchy/solve", {
                "system": _system_doc(args.system),
                "datum": datum,
                "t": args.t,
                "x": points[0],
                "tol": args.tol,
            })
            return _handle(resp, args.output)

        if args.command == "oracle":
            if args.oracle_command == "mc":
                resp = client.post("/oracle/mc", {
                    "system": _system_doc(args.system),
                    "start": _floats(args.start),
                    "t0": args.t0,
                    "t1": args.t1,
                    "dt": args.dt,
                    "paths": args.paths,
                    "seed": args.seed,
                    "box": [_floats(b) for b in args.box.split(";")],
                    "bins": _ints(args.bins),
                })
                return _handle(resp, args.output)
            resp = client.post("/oracle/fd", {
                "box": [_floats(b) for b in args.box.split(";")],
                "shape": _ints(args.shape),
                "T": args.T,
                "datum": args.datum,
                "probes": [_floats(p) for p in args.probe],
            })
            return _handle(resp, args.output)
    except SystemError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE

    ap.error(f"unknown command {args.command!r}")
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
