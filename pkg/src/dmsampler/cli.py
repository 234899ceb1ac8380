"""Command-line interface.

Exit status: 0 on success, 1 on user error (bad flags, config or input),
2 on numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import latent_harmonics as lh
from .datasets import DEFAULT_T_RANGE, gen_s_curve, read_csv, write_csv
from .errors import NumericError, UserError
from .pipeline import (
    AMBIENT_HEADER,
    METHODS,
    PipelineConfig,
    _Run,
    _prepare,
    evaluate_files,
    load_config,
    run,
)

EXIT_OK, EXIT_USER, EXIT_NUMERIC = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Reports bad input through an exception instead of exiting with status 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _seed(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dmsampler", description="Manifold-constrained generative sampling.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    g = sub.add_parser("gen-data", help="sample the S-curve benchmark")
    g.add_argument("--n", type=int, default=3000)
    g.add_argument("--t-range", type=float, nargs=2, default=list(DEFAULT_T_RANGE), metavar=("LO", "HI"))
    g.add_argument("--seed", type=_seed, default=0)
    g.add_argument("--out", required=True)

    for name, helptext in (("fit", "fit Diffusion Maps and Latent Harmonics"),
                           ("sample", "run a full sampling pipeline")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config")
        s.add_argument("--data", help="training CSV (overrides the config)")
        s.add_argument("--seed", type=_seed)
        s.add_argument("--out")
        if name == "sample":
            s.add_argument("--method", choices=METHODS)

    lf = sub.add_parser("lift", help="map latent points to ambient space with a fitted model")
    lf.add_argument("--model", required=True, help="gh_model.json")
    lf.add_argument("--latent", required=True, help="latent CSV")
    lf.add_argument("--out", required=True, help="output directory")

    e = sub.add_parser("eval", help="compare two sample CSVs")
    e.add_argument("--a", required=True)
    e.add_argument("--b", required=True)
    e.add_argument("--s-curve", action="store_true", help="also report distance to the S-curve")
    e.add_argument("--out", help="output directory (default: directory of --a)")
    return p


def _config(args, method=None) -> PipelineConfig:
    d = {}
    if args.config:
        d = load_config(args.config).to_dict()
    if method is not None:
        d["method"] = method
    if args.seed is not None:
        d["seed"] = args.seed
    if args.out is not None:
        d["out"] = args.out
    if args.data is not None:
        d.setdefault("data", {})["path"] = args.data
    return PipelineConfig.from_dict(d)


def _cmd_gen_data(args):
    X, t = gen_s_curve(args.n, tuple(args.t_range), args.seed)
    out = Path(args.out)
    write_csv(out / "data.csv", X, AMBIENT_HEADER)
    write_csv(out / "data_t.csv", t[:, None], ["t"])
    print(f"wrote {X.shape[0]} rows to {out / 'data.csv'}")


def _cmd_fit(args):
    cfg = _config(args)
    r = _Run(cfg)
    _, model, latent, gh = _prepare(r)
    print(f"selected coordinates {list(model.selected)}; {gh.n_basis} harmonics; artifacts in {r.out}")


def _cmd_sample(args):
    cfg = _config(args, args.method)
    rep = run(cfg)
    print(json.dumps({"method": rep.method, "counts": rep.counts, "ks": rep.ks,
                      "distance": rep.distance}))


def _cmd_lift(args):
    with open(args.model) as fh:
        try:
            gh = lh.GHModel.from_dict(json.load(fh))
        except (KeyError, ValueError, TypeError) as exc:
            raise UserError(f"{args.model} is not a latent-harmonics model: {exc}") from None
    phi, _ = read_csv(args.latent)
    if phi.shape[1] != gh.train_latent.shape[1]:
        raise UserError(f"latent CSV has {phi.shape[1]} columns, model expects {gh.train_latent.shape[1]}")
    X = lh.lift(gh, phi)
    d = X.shape[1]
    header = AMBIENT_HEADER if d == 3 else [f"x{i}" for i in range(d)]
    write_csv(Path(args.out) / "lifted.csv", X, header)
    print(f"lifted {X.shape[0]} points")


def _cmd_eval(args):
    out = Path(args.out) if args.out else Path(args.a).parent
    rep = evaluate_files(args.a, args.b, out / "metrics.json", s_curve=args.s_curve)
    print(json.dumps(rep))


_COMMANDS = {"gen-data": _cmd_gen_data, "fit": _cmd_fit, "sample": _cmd_sample,
             "lift": _cmd_lift, "eval": _cmd_eval}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USER
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        _COMMANDS[args.command](args)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except (NumericError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
