"""Command-line front end.

Subcommands: ``density``, ``coeffs``, ``bench``, ``laplace``, ``sample``.
Exit status is 0 on success, 1 for invalid input and 2 for numerical
failure. All output is CSV on stdout or ``--output``.
"""

from __future__ import annotations

import argparse
import csv
import io
import secrets
import sys
from dataclasses import replace

from . import bench, sln, tilt
from .config import ESTIMATORS, load_config, parse_config
from .errors import NumericalError, ValidationError
from .mvn import RngStream
from .tilt import TiltedModel


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def _fmt(value) -> str:
    return repr(float(value))


def _csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _spec_text(args) -> str:
    if args.mu is None or args.s2 is None:
        raise ValidationError("give --test, --config, or both --mu and --s2")
    lines = [f"mu = {args.mu}", f"sigma_diag = {args.s2}"]
    if args.n is not None:
        lines.append(f"n = {args.n}")
    if args.rho is not None:
        lines.append(f"rho = {args.rho}")
    if args.clayton is not None:
        lines += ["copula = clayton", f"copula_theta = {args.clayton}"]
    return "\n".join(lines) + "\n"


def resolve_case(args) -> bench.TestCase:
    """TestCase from --test, --config or inline flags, with CLI overrides applied."""
    if args.test is not None:
        case = bench.get_case(args.test)
    else:
        if args.config is not None:
            config = load_config(args.config)
        else:
            config = parse_config(_spec_text(args))
        case = bench.TestCase.from_config(config)
    over = {}
    if getattr(args, "K", None) is not None:
        over["K"] = {"default": args.K}
    if getattr(args, "R", None) is not None:
        over["R"] = args.R
    if getattr(args, "theta", None) is not None:
        over["theta"] = args.theta
    if getattr(args, "order", None) is not None:
        over["H"] = args.order
    return replace(case, **over) if over else case


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    seed = secrets.randbits(63)
    print(f"seed: {seed}", file=sys.stderr)
    return seed


def cmd_density(args) -> str:
    case = resolve_case(args)
    seed = _seed(args)
    xs = bench.metric_grid(case.upper)
    if args.estimator == "oracle":
        vals = bench.case_oracle(case, seed).values
    else:
        est = bench.build_estimator(case, args.estimator, seed, clip_negative=args.clip_negative)
        vals = est(xs)
    if not args.with_oracle:
        return _csv(("x", "f_hat"), ((_fmt(x), _fmt(v)) for x, v in zip(xs, vals)))
    ref = bench.case_oracle(case, seed).values
    return _csv(("x", "f_hat", "f_oracle", "diff"),
                ((_fmt(x), _fmt(v), _fmt(r), _fmt(v - r)) for x, v, r in zip(xs, vals, ref)))


def cmd_coeffs(args) -> str:
    case = resolve_case(args)
    if args.estimator not in ("normal", "gamma"):
        raise ValidationError("coeffs needs --estimator normal or gamma")
    est = bench.build_estimator(case, args.estimator, _seed(args))
    return _csv(("k", "a_k"), ((k, _fmt(a)) for k, a in enumerate(est.coeffs)))


def cmd_bench(args) -> str:
    seed = _seed(args)
    names = args.test or list(bench.TEST_NAMES)
    rows = []
    for name in names:
        case = bench.get_case(name)
        ests = args.estimators.split(",") if args.estimators else None
        if ests:
            ests = [e for e in ests if e in case.estimators]
        rows += bench.run_test(case, ests, seed, timing=args.timing)
    return bench.rows_to_csv(rows)


def cmd_laplace(args) -> str:
    case = resolve_case(args)
    H = args.order if args.order is not None else tilt.default_order(case.spec.n)
    stream = None
    if H is None or float(H) ** case.spec.n > tilt.MAX_TENSOR_NODES:
        stream = RngStream(_seed(args), 0)
    model = TiltedModel(case.spec, args.theta if args.theta is not None else 1.0)
    res = tilt.laplace_estimate(model, args.i, H, stream)
    return _csv(("i", "L_hat", "L_tilde", "I"),
                [(res.i, _fmt(res.l_hat), _fmt(res.l_tilde), _fmt(res.correction))])


def cmd_sample(args) -> str:
    case = resolve_case(args)
    s = sln.sample_sln(case.spec, args.count, RngStream(_seed(args), 0))
    return "".join(f"{v!r}\n" for v in s.tolist())


def _add_spec_flags(p, *, estimator=False):
    src = p.add_argument_group("model")
    src.add_argument("--test", help="registry case, e.g. 1 or test1")
    src.add_argument("--config", help="path to a key = value config file")
    src.add_argument("--n", type=int)
    src.add_argument("--mu", help="mean vector, comma separated (scalar broadcasts)")
    src.add_argument("--s2", help="diagonal of Sigma, comma separated")
    src.add_argument("--rho", type=float, help="equicorrelation")
    src.add_argument("--clayton", type=float, help="Clayton copula parameter")
    p.add_argument("--seed", type=int)
    p.add_argument("--output", "-o")
    if estimator:
        p.add_argument("--estimator", default="normal", choices=ESTIMATORS + ("oracle",))
        p.add_argument("--K", type=int)
        p.add_argument("--R", type=int)
        p.add_argument("--theta", type=float)
        p.add_argument("--order", type=int, help="Gauss-Hermite order H")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="slnexpand", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("density", help="density estimate on the metric grid")
    _add_spec_flags(p, estimator=True)
    p.add_argument("--with-oracle", action="store_true")
    p.add_argument("--clip-negative", action="store_true")
    p.set_defaults(func=cmd_density)

    p = sub.add_parser("coeffs", help="expansion coefficients")
    _add_spec_flags(p, estimator=True)
    p.set_defaults(func=cmd_coeffs)

    p = sub.add_parser("bench", help="L2 benchmark rows")
    p.add_argument("--test", action="append", help="repeatable; default all")
    p.add_argument("--estimators", help="comma separated subset")
    p.add_argument("--timing", action="store_true", help="fill runtime_ms")
    p.add_argument("--seed", type=int)
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("laplace", help="L_hat_i, L_tilde_i and I_i")
    _add_spec_flags(p)
    p.add_argument("--theta", type=float, default=1.0)
    p.add_argument("--i", type=int, default=0)
    p.add_argument("--order", type=int, help="Gauss-Hermite order H")
    p.set_defaults(func=cmd_laplace)

    p = sub.add_parser("sample", help="draws of S, one per line")
    _add_spec_flags(p)
    p.add_argument("--count", "--R", type=int, default=1000)
    p.set_defaults(func=cmd_sample)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        text = args.func(args)
        if args.output:
            with open(args.output, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
        return 0
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except BrokenPipeError:
        sys.stderr.close()
        return 0


if __name__ == "__main__":
    sys.exit(main())
