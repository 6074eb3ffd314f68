"""``srheat`` command line.

Reports go to stdout as canonical JSON (sorted keys, fixed float repr). With
``--out DIR`` the report, any CSV tables and a ``manifest.json`` are written
there; only the manifest carries a timestamp, so reports from identical runs
are byte-identical.

Exit codes: 0 all checks passed, 1 a check failed, 2 usage or input error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checks import CHECKS, DEFAULTS, _clean, run_check
from .corpus import corpus_list, load_corpus, load_model
from .errors import (
    GridError,
    HormanderViolation,
    IllConditioned,
    ModelError,
    NonpositiveDensity,
    SRHeatError,
    StabilityError,
)

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

NUMERICAL_ERRORS = (StabilityError, IllConditioned, GridError, FloatingPointError, np.linalg.LinAlgError,
                    OverflowError, ZeroDivisionError)


class UsageError(Exception):
    pass


def dumps(obj):
    return json.dumps(_clean(obj), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _sha(text):
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _load_spec(args):
    if bool(args.model) == bool(args.corpus):
        raise UsageError("give exactly one of --model PATH or --corpus NAME")
    try:
        if args.corpus:
            return load_corpus(args.corpus)
        return load_model(args.model)
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from exc
    except (OSError, json.JSONDecodeError, ValueError, TypeError) as exc:
        raise UsageError(f"cannot read model: {exc}") from exc


def _load_config(args):
    if not args.config:
        return {}
    try:
        with open(args.config, encoding="utf-8") as f:
            cfg = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    return cfg


def _seed(args, cfg):
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    if not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
        raise UsageError("seed must be an unsigned 64-bit integer")
    return seed


def _point(spec, cfg):
    p = cfg.get("point")
    if p is None:
        return spec.base_point
    if len(p) != spec.dim:
        raise UsageError(f"point has {len(p)} coordinates, model has dimension {spec.dim}")
    from fractions import Fraction

    return tuple(Fraction(str(v)) for v in p)


SIMULATE_DEFAULTS = {"method": "mc", "t": 1.0, "source": None, "targets": None, "n_paths": 100_000,
                     "dt_ratio": 500, "grid_h": None, "box": None, "n_batches": 20, "scheme": "cn"}


# --- subcommands ---------------------------------------------------------------------

def cmd_flag(spec, cfg, args):
    from .flag import is_regular

    pt = _point(spec, cfg)
    flag = spec.flag(pt)
    regular, witness = is_regular(spec.fields, pt, rng_seed=_seed(args, cfg))
    report = {"command": "flag", "model": spec.name, "point": [str(c) for c in pt], **flag.to_json(),
              "frame": [{"depth": d, "field": X.to_str()} for X, d in flag.bracket_frame],
              "frame_words": [list(map(int, w)) if isinstance(w, (tuple, list)) else w
                              for w in flag.bracket_words],
              "regular": regular,
              "regularity_witness": None if witness is None else [str(c) for c in witness]}
    return report, True, {}


def cmd_nilpotentize(spec, cfg, args):
    from .charts import privileged_chart, verify_orders
    from .nilpotent import check_divergence_free, nilpotentize

    flag = spec.flag(_point(spec, cfg))
    chart = privileged_chart(spec.fields, flag, point=flag.point, trunc_order=cfg.get("trunc"))
    S = nilpotentize(spec.fields, drift=spec.drift, chart=chart, drift_in_D2=spec.drift_class == "D2",
                     density=spec.density)
    ok, res = check_divergence_free(S)
    orders, orders_ok = verify_orders(chart, spec.fields)
    report = {
        "command": "nilpotentize",
        "model": spec.name,
        "flag": flag.to_json(),
        "chart": {"translation": chart.is_translation, "orders": list(orders), "orders_ok": orders_ok,
                  "trunc_order": chart.trunc_order},
        "nilpotent": S.to_json(),
        "divergence_free": ok,
        "divergence": [p.to_json() for p in res],
    }
    return report, ok and orders_ok, {}


def cmd_simulate(spec, cfg, args):
    from .heat.finite_difference import GridSpec, fd_kernel
    from .heat.montecarlo import mc_kernel

    sim = {**SIMULATE_DEFAULTS, **cfg.get("simulate", {})}
    model = spec.heat_model(box=sim["box"])
    t = float(sim["t"])
    src = np.asarray(sim["source"] if sim["source"] is not None else [float(c) for c in spec.base_point], float)
    targets = np.atleast_2d(np.asarray(sim["targets"] if sim["targets"] is not None else [src], float))
    seed = _seed(args, cfg)
    if sim["method"] == "mc":
        est = mc_kernel(model, t, src, targets, n_paths=int(sim["n_paths"]), dt=t / int(sim["dt_ratio"]),
                        seed=seed, n_batches=int(sim["n_batches"]))
    elif sim["method"] == "fd":
        from .checks import _default_grid

        h = sim["grid_h"] if sim["grid_h"] is not None else _default_grid(spec.dim)
        est = fd_kernel(model, t, GridSpec(model.box_lo, model.box_hi, h), src, targets,
                        dt=t / int(sim["dt_ratio"]), scheme=sim["scheme"])
    else:
        raise UsageError(f"unknown simulate method {sim['method']!r}")
    report = {"command": "simulate", "model": spec.name, "settings": sim, "seed": seed, "estimate": est.to_json()}
    report["estimate"]["meta"].pop("error", None)
    csv = est.to_csv()
    gp = ("set datafile separator ','\nset key autotitle columnhead\n"
          f"plot 'kernel.csv' using 1:{spec.dim + 1}:{spec.dim + 2} with yerrorbars title 'e(t, source, x)'\n")
    return report, True, {"kernel.csv": csv, "kernel.gp": gp}


def cmd_verify(spec, cfg, args):
    names = []
    if args.check:
        names = [c.strip() for c in args.check.split(",") if c.strip()]
    elif cfg.get("checks"):
        names = list(cfg["checks"])
    if not names:
        raise UsageError(f"select checks with --check NAME[,NAME...]; available: {', '.join(CHECKS)}")
    bad = [n for n in names if n not in CHECKS]
    if bad:
        raise UsageError(f"unknown check(s) {', '.join(bad)}; available: {', '.join(CHECKS)}")
    seed = _seed(args, cfg)
    results, files, all_ok = [], {}, True
    settings = cfg.get("settings", {})
    for n in names:
        r = run_check(n, spec, settings.get(n), args.tolerance_scale, seed)
        all_ok &= bool(r.passed)
        results.append(r.to_json())
        if n == "expansion":
            rep = r.metrics["report"]
            rows = ["eps,pair,value,stderr"]
            for e, vs, ss in zip(rep["eps_grid"], rep["values"], rep["errors"]):
                rows += [f"{e!r},{p},{v!r},{s_!r}" for p, (v, s_) in enumerate(zip(vs, ss))]
            files["expansion.csv"] = "\n".join(rows) + "\n"
            files["expansion.gp"] = ("set datafile separator ','\nset xlabel 'eps'\n"
                                     "plot 'expansion.csv' using 1:($2==0?$3:1/0):4 with yerrorbars "
                                     "title 'rescaled kernel, pair 0'\n")
    report = {"command": "verify", "model": spec.name, "seed": seed, "tolerance_scale": args.tolerance_scale,
              "checks": results, "passed": all_ok}
    return report, all_ok, files


COMMANDS = {"flag": cmd_flag, "nilpotentize": cmd_nilpotentize, "simulate": cmd_simulate, "verify": cmd_verify}


def _effective_config(cmd, cfg, args, seed):
    """The configuration actually used, with every default filled in."""
    eff = dict(cfg)
    eff["seed"] = seed
    if cmd in ("flag", "nilpotentize"):
        eff.setdefault("point", None)
        if cmd == "nilpotentize":
            eff.setdefault("trunc", None)
    elif cmd == "simulate":
        eff["simulate"] = {**SIMULATE_DEFAULTS, **cfg.get("simulate", {})}
    elif cmd == "verify":
        names = [c for c in (args.check or "").split(",") if c] or list(cfg.get("checks", []))
        eff["checks"] = names
        eff["settings"] = {n: _clean(_merge_defaults(n, cfg.get("settings", {}).get(n))) for n in names if n in DEFAULTS}
    return eff


def _merge_defaults(name, over):
    from .checks import _merge

    return _merge(DEFAULTS[name], over)


def _write_outputs(out, cmd, report_text, files, spec, cfg, args, seed):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report_text, encoding="utf-8")
    hashes = {"report.json": _sha(report_text)}
    for name, text in files.items():
        (out / name).write_text(text, encoding="utf-8")
        hashes[name] = _sha(text)
    manifest = {
        "command": cmd,
        "version": __version__,
        "model": spec.name if spec is not None else None,
        "model_sha256": _sha(json.dumps(spec.to_json(), sort_keys=True)) if spec is not None else None,
        "seed": seed,
        "config": _effective_config(cmd, cfg, args, seed),
        "tolerance_scale": args.tolerance_scale,
        "threads": os.environ.get("SRHEAT_THREADS", "1"),
        "files": hashes,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    (out / "manifest.json").write_text(dumps(manifest), encoding="utf-8")


def build_parser():
    p = argparse.ArgumentParser(prog="srheat", description="Sub-Riemannian flags, nilpotent approximations and "
                                                          "small-time heat-kernel checks.")
    p.add_argument("--version", action="version", version=f"srheat {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, model=True):
        if model:
            g = sp.add_mutually_exclusive_group()
            g.add_argument("--model", metavar="PATH", help="model JSON file")
            g.add_argument("--corpus", metavar="NAME", help="built-in model name")
        sp.add_argument("--config", metavar="PATH", help="JSON run configuration")
        sp.add_argument("--seed", type=int, default=None, help="RNG seed (unsigned 64-bit)")
        sp.add_argument("--out", metavar="DIR", help="write report, tables and manifest here")
        sp.add_argument("--check", metavar="NAME[,NAME...]", help="checks to run (verify)")
        sp.add_argument("--tolerance-scale", type=float, default=1.0, help="multiply every tolerance")

    for name, text in [("flag", "growth vector, weights, Q and adapted frame"),
                       ("nilpotentize", "privileged chart and nilpotent approximation"),
                       ("simulate", "heat-kernel estimate (Monte Carlo or finite differences)"),
                       ("verify", "run named checks; exit 0 iff all pass")]:
        common(sub.add_parser(name, help=text))
    cp = sub.add_parser("corpus", help="list built-in models")
    common(cp, model=False)
    cp.add_argument("--show", metavar="NAME", help="print one model file")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    spec = None
    seed = None
    try:
        if args.tolerance_scale <= 0:
            raise UsageError("--tolerance-scale must be positive")
        cfg = _load_config(args)
        if args.command == "corpus":
            if args.show:
                try:
                    report = load_corpus(args.show).to_json()
                except KeyError as exc:
                    raise UsageError(str(exc.args[0])) from exc
            else:
                report = {"command": "corpus", "models": corpus_list()}
            ok, files = True, {}
        else:
            spec = _load_spec(args)
            seed = _seed(args, cfg)
            threads = cfg.get("threads")
            if threads is not None and "SRHEAT_THREADS" not in os.environ:
                os.environ["SRHEAT_THREADS"] = str(int(threads))
            with np.errstate(over="raise", invalid="raise", divide="ignore"):
                report, ok, files = COMMANDS[args.command](spec, cfg, args)
            report["model_sha256"] = _sha(json.dumps(spec.to_json(), sort_keys=True))
            report["version"] = __version__
    except UsageError as exc:
        print(f"srheat: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ModelError, NonpositiveDensity, HormanderViolation) as exc:
        print(f"srheat: model error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NUMERICAL_ERRORS as exc:
        print(f"srheat: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except SRHeatError as exc:
        print(f"srheat: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    text = dumps(report)
    sys.stdout.write(text)
    if args.out:
        _write_outputs(args.out, args.command, text, files, spec, cfg if args.command != "corpus" else {}, args, seed)
    return EXIT_PASS if ok else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
