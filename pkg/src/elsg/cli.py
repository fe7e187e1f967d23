"""Command line entry point ``elsg``.

Exit codes: 0 success, 1 usage or configuration error, 2 assumption or
synthesis failure, 3 safety violation in a filtered run, 4 failed property.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import yaml

from .config import SCENARIOS, RunConfig
from .errors import ConfigurationError, ElsgError
from .sim import atomic_write

EXIT_OK, EXIT_USAGE, EXIT_ASSUMPTION, EXIT_SAFETY, EXIT_PROPERTY = 0, 1, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _resolve(rc, path):
    if path is None or os.path.isabs(path) or rc.source is None:
        return path
    return os.path.join(os.path.dirname(os.path.abspath(rc.source)), path)


def _base_dir(rc):
    return None if rc.source is None else os.path.dirname(os.path.abspath(rc.source))


def _load(args):
    return RunConfig.load(args.config)


def _stored_bound(rc, cfg):
    """Sampling constants from the synth report when it matches ``cfg``."""
    from .synthesis import SamplingBound

    for path in (rc.params_file, rc["output"]["report"]):
        path = _resolve(rc, path)
        if not path or not os.path.exists(path):
            continue
        with open(path) as fh:
            doc = yaml.safe_load(fh) or {}
        p, samp = doc.get("params", {}), doc.get("sampling")
        if not samp or samp.get("lip_factor") != rc["synthesis"]["lip_factor"]:
            return None
        same = all(p.get(k) == getattr(cfg, k) for k in ("gamma", "nu", "delta", "eta_bar"))
        same = same and str(p.get("alpha")) == str(cfg.alpha) and str(p.get("beta")) == str(cfg.beta)
        return SamplingBound(**samp["constants"]) if same else None
    return None


def cmd_synth(args):
    from .runner import synthesize

    rc = _load(args)
    rep, extra = synthesize(rc)
    doc = rep.to_dict()
    if extra:
        doc["sampling"] = extra
    path = _resolve(rc, args.report or rc["output"]["report"])
    atomic_write(path, yaml.safe_dump(doc, sort_keys=False))
    c = rep.chosen
    g1, g2, g3 = rep.gamma_stars
    nu1, nu2 = rep.nu_interval
    print(f"epsilon   {rep.epsilon:.6g}")
    print(f"gamma*    {g1:.6g} {g2:.6g} {g3:.6g}")
    print(f"delta*    {rep.delta_star:.6g}")
    print(f"nu range  [{nu1:.6g}, {nu2:.6g}]")
    print(f"eta*      {rep.eta_star:.6g}")
    print(f"chosen    gamma={c.gamma:.6g} nu={c.nu:.6g} delta={c.delta:.6g} eta_bar={c.eta_bar:.6g}")
    if extra:
        print(f"sampling  eta({extra['T']:g}) = {extra['eta_of_T']:.6g}, T_max = {extra['T_max']:.6g}")
        if not extra["sampling_ok"]:
            print(f"warning: T = {extra['T']:g} exceeds T_max; zcbf-sampled runs will be refused",
                  file=sys.stderr)
    print(f"report    {path}")
    return EXIT_OK


def cmd_simulate(args):
    from .runner import simulate

    rc = _load(args)
    mode = args.mode or rc["simulation"]["mode"]
    cfg = None
    if mode != "nominal-only":
        cfg = rc.barrier_params(_base_dir(rc))
        if cfg is None:
            raise ConfigurationError("no barrier parameters found: run `elsg synth -c "
                                     f"{args.config}` first or fill the params section")
    bound = _stored_bound(rc, cfg) if mode == "zcbf-sampled" else None
    t0 = time.perf_counter()
    tr = simulate(rc, cfg=cfg, mode=mode, duration=args.duration, bound=bound)
    elapsed = time.perf_counter() - t0
    path = _resolve(rc, args.trace or rc["output"]["trace"])
    tr.to_csv(path)
    wq, wv, wu = tr.worst()
    print(f"mode      {mode}")
    print(f"steps     {len(tr.t)} ({elapsed:.2f} s)")
    print(f"worst     Q {wq:.3e}  V {wv:.3e}  U {wu:.3e}")
    if mode != "nominal-only":
        print(f"exits     {tr.substep_exits} substep states outside H^delta, {tr.n_fallback} fallbacks")
    print(f"trace     {path}")
    plots = args.plots or rc["output"]["plots_dir"]
    if plots:
        from .plotting import plot_trace

        files = plot_trace(tr, rc.spec(), _resolve(rc, plots))
        print(f"plots     {len(files)} files in {_resolve(rc, plots)}")
    if tr.aborted:
        print("error: integration diverged", file=sys.stderr)
        return EXIT_SAFETY
    if tr.failed:
        print("error: safety constraint violated", file=sys.stderr)
        return EXIT_SAFETY
    return EXIT_OK


def cmd_verify(args):
    from .verify import run_suite

    rc = _load(args)
    cfg = rc.barrier_params(_base_dir(rc))
    if cfg is None:
        raise ConfigurationError(f"no barrier parameters found: run `elsg synth -c {args.config}` first")
    b = rc["barrier"]
    margin = cfg.eta_bar
    if rc["simulation"]["mode"] == "zcbf-continuous":
        margin = 0.0
    results = run_suite(rc.model(), cfg, rc.spec(), margin, b["delta0"], b["eta0"], grid=args.grid,
                        n_random=args.samples, qp_instances=args.qp_instances, seed=args.seed)
    for r in results:
        print(r.line())
        for c in r.counterexamples:
            print(f"      counterexample {c}")
    out = args.report or rc["output"]["verify_report"]
    if out:
        doc = [{"name": r.name, "passed": r.passed, "worst_margin": r.worst, "checked": r.checked,
                "counterexamples": r.counterexamples} for r in results]
        atomic_write(_resolve(rc, out), yaml.safe_dump(doc, sort_keys=False))
    return EXIT_OK if all(r.passed for r in results) else EXIT_PROPERTY


def cmd_config(args):
    rc = RunConfig.from_dict({"scenario": args.scenario})
    text = f"scenario: {args.scenario}\n" + rc.dump()
    if args.output:
        atomic_write(args.output, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser():
    p = _Parser(prog="elsg", description="Barrier-function safety filters for Euler-Lagrange systems.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="synthesize barrier parameters and write a report")
    s.add_argument("-c", "--config", required=True)
    s.add_argument("--report", help="report path (default: output.report)")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("simulate", help="closed-loop simulation to a CSV trace")
    s.add_argument("-c", "--config", required=True)
    s.add_argument("--mode", choices=("nominal-only", "zcbf-continuous", "zcbf-sampled"))
    s.add_argument("--duration", type=float)
    s.add_argument("--trace", help="CSV path (default: output.trace)")
    s.add_argument("--plots", metavar="DIR", help="write SVG charts into DIR")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("verify", help="grid and random property checks")
    s.add_argument("-c", "--config", required=True)
    s.add_argument("--grid", type=int, default=50, help="points per axis of each joint grid")
    s.add_argument("--samples", type=int, default=10_000)
    s.add_argument("--qp-instances", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--report", help="YAML results path")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("config", help="print a built-in scenario as a full configuration")
    s.add_argument("--scenario", required=True, choices=sorted(SCENARIOS))
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_config)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ElsgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
