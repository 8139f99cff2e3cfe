"""Nuclear spin diffusion in a quantum dot: scenarios, sweeps, D fields, pair rates.

Heavy modules are imported after argument parsing so that ``--threads`` can
still set the BLAS / numba thread counts.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

THREAD_ENV = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS")
ENV_THREADS = "OVERHAUSER_THREADS"


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI config file ([dot], [constants], [rates], [mesh], [solver], [initial])")
    p.add_argument("--out", help="output directory (or file for dfield)")
    p.add_argument("--mesh-h", type=float, help="mesh spacing in nm (overrides mesh.nodes)")
    p.add_argument("--scheme", choices=("explicit", "adi"), help="time stepping scheme")
    p.add_argument("--threads", type=int, help=f"worker threads (also ${ENV_THREADS})")
    p.add_argument("--seed", type=int, help="reserved; nothing is stochastic")
    p.add_argument("--strict", action=argparse.BooleanOptionalAction, default=True,
                   help="reject unknown config keys (default on)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="overhauser", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a named scenario and check its expectations")
    p.add_argument("--scenario", required=True)
    _common(p)

    p = sub.add_parser("sweep", help="t_half and D_eff over one parameter")
    p.add_argument("--param", required=True, choices=("B0", "r0", "electron", "A0"))
    p.add_argument("--values", required=True, help="comma separated, e.g. 0.01,0.02")
    p.add_argument("--scenario", default="fig3", help="base decay scenario (default fig3)")
    _common(p)

    p = sub.add_parser("dfield", help="build the diffusion field and write dfield.csv")
    _common(p)

    p = sub.add_parser("rates", help="A_ik, C_ik, g_ik, W_ik for one lattice pair")
    p.add_argument("--pair", nargs=2, type=int, required=True, metavar=("I", "K"))
    p.add_argument("--extent-nm", type=float, default=5.0,
                   help="half width of the indexed lattice box (x fastest, then y, z)")
    _common(p)

    p = sub.add_parser("oracle-check", help="network vs PDE on scaled dots")
    p.add_argument("--l0-sites", type=float, default=8.0)
    p.add_argument("--half-width", type=int, default=80, help="patch half width in sites")
    p.add_argument("--form", choices=("nondivergence", "divergence"))
    _common(p)
    return ap


def _threads(args) -> int | None:
    n = args.threads
    if n is None and os.environ.get(ENV_THREADS):
        n = int(os.environ[ENV_THREADS])
    if n is not None:
        for var in THREAD_ENV:
            os.environ[var] = str(n)
    return n


def _cli_overrides(args, threads) -> dict:
    o = {}
    if args.scheme:
        o["solver.scheme"] = args.scheme
    if getattr(args, "form", None):
        o["solver.form"] = args.form
    if threads is not None:
        o["run.threads"] = threads
    if args.seed is not None:
        o["run.seed"] = args.seed
    return o


def _mesh_override(args, raw_cfg_half_width: float) -> dict:
    if args.mesh_h is None:
        return {}
    n = int(round(2 * raw_cfg_half_width / args.mesh_h)) + 1
    return {"mesh.nodes": n}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = _threads(args)

    from .config import ConfigError, merge_layers, read_ini, resolve

    try:
        raw = read_ini(args.config) if args.config else {}
        cli = _cli_overrides(args, threads)
        probe = resolve(merge_layers(raw, cli), strict=args.strict)
        cli.update(_mesh_override(args, probe.get("mesh", "half_width_nm")))
        if args.command == "run":
            return _run(args, raw, cli)
        if args.command == "sweep":
            return _sweep(args, raw, cli)
        if args.command == "dfield":
            return _dfield(args, raw, cli)
        if args.command == "rates":
            return _rates(args, raw, cli)
        return _oracle(args, raw, cli)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    except (KeyError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _run(args, raw, cli) -> int:
    from .scenarios import run_scenario

    res = run_scenario(args.scenario, out=args.out, config_raw=raw, cli_overrides=cli,
                       strict=args.strict)
    for lab, c in res.cases.items():
        extra = []
        if c.t_half is not None:
            extra.append(f"t_half = {c.t_half:.6g} s")
        if c.fit is not None:
            extra.append(f"D_eff = {c.fit.D_eff:.6g} nm^2/s")
        if c.error:
            extra.append(f"error: {c.error}")
        if extra:
            print(f"{res.scenario.id}/{lab}: " + ", ".join(extra))
    print(f"background D = {res.background:.6g} nm^2/s")
    for a in res.assertions:
        print(f"{'PASS' if a['passed'] else 'FAIL'} {a['name']}: {a['detail']}")
    if args.out:
        print(f"wrote {len(res.files)} files to {args.out}")
    return 0 if res.passed else 1


def _sweep(args, raw, cli) -> int:
    from pathlib import Path

    from .scenarios import parse_values, sweep, write_sweep

    rows = sweep(args.param, parse_values(args.param, args.values), args.scenario, raw, cli,
                 strict=args.strict)
    print(f"{args.param},t_half_s,D_eff_nm2_per_s,error")
    for r in rows:
        th = "" if r.t_half is None else repr(r.t_half)
        de = "" if r.D_eff is None else repr(r.D_eff)
        print(f"{r.value},{th},{de},{r.error}")
    if args.out:
        write_sweep(Path(args.out) / "sweep.csv", args.param, rows)
    return 0 if all(r.t_half is not None and not r.error for r in rows) else 1


def _dfield(args, raw, cli) -> int:
    from pathlib import Path

    from .config import derived_quantities, make_manifest, merge_layers, resolve
    from .dfield import background_D, build_field
    from .output import write_dfield, write_json

    t0 = time.perf_counter()
    cfg = resolve(merge_layers(raw, cli), strict=args.strict)
    m = cfg.values["mesh"]
    f = build_field(cfg.mesh, cfg.dot, cfg.rates, m["z_eval_nm"], m["layer_average"])
    bg = background_D(cfg.dot, cfg.rates)
    print(f"D(0,0) = {f.at(0, 0):.6g}, min {f.values.min():.6g}, max {f.max:.6g}, "
          f"background {bg:.6g} nm^2/s")
    if args.out:
        out = Path(args.out)
        path = out if out.suffix == ".csv" else out / "dfield.csv"
        write_dfield(path, f)
        derived = derived_quantities(cfg)
        derived["background_D_nm2_per_s"] = bg
        write_json(path.parent / "manifest.json",
                   make_manifest(cfg, derived, {"wall_s": time.perf_counter() - t0},
                                 {"command": "dfield", "field": f.metadata}))
    return 0


def _rates(args, raw, cli) -> int:
    from .config import merge_layers, resolve
    from .model import LatticeSpec, Site, lattice_indices
    from .rates import pair_report

    cfg = resolve(merge_layers(raw, cli), strict=args.strict)
    dot, p = cfg.dot, cfg.rates
    spec = LatticeSpec.box(2 * args.extent_nm, 2 * args.extent_nm, dot)
    idx = lattice_indices(spec)
    for n in args.pair:
        if not 0 <= n < len(idx):
            raise ValueError(f"site index {n} outside the {len(idx)}-site lattice")
    i, k = (Site(n, *(float(v) for v in idx[n] * dot.a0)) for n in args.pair)
    rep = pair_report(i, k, dot, p)
    rep["pos_i_nm"] = [i.x, i.y, i.z]
    rep["pos_k_nm"] = [k.x, k.y, k.z]
    rep["units"] = "rad/s"
    print(json.dumps(rep, indent=2))
    return 0


def _oracle(args, raw, cli) -> int:
    from dataclasses import replace
    from pathlib import Path

    from .config import merge_layers, resolve
    from .model import ElectronConfig
    from .oracle import compare_network_pde, scaled_dot
    from .output import write_csv, write_json
    from .rates import RateParams

    cfg = resolve(merge_layers(raw, cli), strict=args.strict)
    r = cfg.values["rates"]
    form = cfg.values["solver"]["form"]
    sd = scaled_dot(cfg.dot, args.l0_sites)
    cases = {"bulk": replace(sd, electron=ElectronConfig.absent()), "dot": sd}
    results = []
    for lab, d in cases.items():
        p = RateParams.for_dot(d, r["pair_cutoff_a0"], r["broadening_cutoff_a0"], 0)
        c = compare_network_pde(d, p, args.half_width, form=form, label=lab)
        results.append(c)
        s = c.summary()
        print(f"{'PASS' if c.passed else 'FAIL'} {lab}: max rel error {s['max_rel_error']:.3%} "
              f"(tol {c.tolerance:.0%}), t_half network {c.t_half_network:.4g} s, "
              f"pde {c.t_half_pde if c.t_half_pde is None else round(c.t_half_pde, 6)} s, "
              f"drift {c.drift:.2e}, {c.n_sites} sites")
        if args.out:
            write_csv(Path(args.out) / f"oracle_{lab}.csv", ["t_s", "hz_network", "hz_pde"],
                      [c.t, c.h_network, c.h_pde])
    if args.out:
        write_json(Path(args.out) / "oracle_report.json",
                   {"form": form, "l0_sites": args.l0_sites, "config": cfg.as_dict(),
                    "scaled_dot": {"l0_nm": sd.l0, "A0_ueV": sd.A0_ueV, "B0_T": sd.B0},
                    "results": [c.summary() for c in results]})
    return 0 if all(c.passed for c in results) else 1


if __name__ == "__main__":
    sys.exit(main())
