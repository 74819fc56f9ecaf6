"""Command line front end.

Every flag can also be set through an ``IHMM_<NAME>`` environment variable
(for example ``IHMM_PARTICLES=2000``).  Precedence: command line, then
environment, then built-in default.
"""

import argparse
import json
import logging
import math
import os
import sys

import numpy as np

from . import gibbs, storage
from .dp_vb import VBPrior, run_vem
from .engine import Engine
from .errors import ConfigError, IHMMError
from .hierarchy import BarrierSchedule
from .rng import stream
from .simulate import DemographicsSpec, SegmentSpec, bounded_gamma, gen_population
from .smoother import matched_accuracy, smooth
from .types import CovariateLayout, HyperParams

log = logging.getLogger("ihmm_stream")

# flag -> (type, default)
SETTINGS = {
    "particles": (int, 500),
    "seed": (int, 0),
    "barrier_period": (float, 25.0),
    "k_trunc": (int, 20),
    "checkpoint": (str, None),
    "strict": ("flag", False),
    "fidelity_weights": ("flag", False),
    "out": (str, None),
    "demographics": (str, None),
    "hyper": (str, None),
}

TRUE_WORDS = {"1", "true", "yes", "on"}
FALSE_WORDS = {"0", "false", "no", "off", ""}


def env_value(name, kind, environ):
    raw = environ.get("IHMM_" + name.upper())
    if raw is None:
        return None
    if kind == "flag":
        low = raw.strip().lower()
        if low in TRUE_WORDS:
            return True
        if low in FALSE_WORDS:
            return False
        raise ConfigError(f"IHMM_{name.upper()}={raw!r} is not a boolean")
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"IHMM_{name.upper()}={raw!r} is not a valid {kind.__name__}") from None


def resolve(args, environ=None):
    """Fill unset options from the environment, then from defaults."""
    environ = os.environ if environ is None else environ
    for name, (kind, default) in SETTINGS.items():
        if not hasattr(args, name):
            continue
        if getattr(args, name) is None:
            val = env_value(name, kind, environ)
            setattr(args, name, default if val is None else val)
    return args


def add_common(p, *names):
    for name in names:
        flag = "--" + name.replace("_", "-")
        kind = SETTINGS[name][0]
        if kind == "flag":
            p.add_argument(flag, action="store_const", const=True, default=None)
        else:
            p.add_argument(flag, type=kind, default=None)


def build_parser():
    ap = argparse.ArgumentParser(prog="ihmm-stream", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic population as JSONL")
    p.add_argument("--users", type=int, default=5)
    p.add_argument("--t", type=int, default=100)
    p.add_argument("--states", type=int, default=2)
    p.add_argument("--n-tags", type=int, default=0)
    p.add_argument("--plain", type=int, default=0, metavar="D",
                   help="emit plain covariate vectors x=(1, u) of length D instead of named fields")
    p.add_argument("--truth", default=None, help="ground-truth sidecar path")
    p.add_argument("--demographics-out", default=None)
    add_common(p, "seed", "out")

    for name, helptext in (("filter", "run the particle filter over an event file"),
                           ("smooth", "filter, then draw smoothed state paths")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("events", nargs="?", default="-")
        add_common(p, "particles", "seed", "barrier_period", "k_trunc", "checkpoint", "strict",
                   "fidelity_weights", "out", "demographics", "hyper")
        if name == "smooth":
            p.add_argument("--paths", type=int, default=None)
            p.add_argument("--truth", default=None)

    p = sub.add_parser("vb", help="fit the truncated DP Gaussian mixture")
    p.add_argument("data", nargs="?", default=None,
                   help="JSONL of vectors; omitted -> Lambda summaries from --checkpoint")
    p.add_argument("--max-iter", type=int, default=500)
    add_common(p, "seed", "k_trunc", "checkpoint", "out", "hyper")

    p = sub.add_parser("gibbs-check", help="compare the collapsed Gibbs sampler with enumeration")
    p.add_argument("--sweeps", type=int, default=20000)
    p.add_argument("--mode", choices=("augmented", "logit"), default="augmented")
    p.add_argument("--tolerance", type=float, default=0.05)
    add_common(p, "seed", "out")

    p = sub.add_parser("report", help="summarize a checkpoint")
    add_common(p, "checkpoint", "out")
    return ap


# --- helpers --------------------------------------------------------------------

def emit_report(obj, out):
    text = json.dumps(obj, indent=2, sort_keys=True, default=_jsonable)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        sys.stdout.write(text + "\n")


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    raise TypeError(f"not serializable: {type(v)}")


def make_hp(args, d, d_D):
    extra = {}
    if args.hyper:
        with open(args.hyper, encoding="utf-8") as fh:
            extra = json.load(fh)
        if not isinstance(extra, dict):
            raise ConfigError("--hyper file must hold a JSON object")
    extra = {**extra, "d": d, "d_D": d_D}
    for key, val in (("B", getattr(args, "particles", None)), ("seed", args.seed),
                     ("K_trunc", getattr(args, "k_trunc", None)),
                     ("fidelity_weights", getattr(args, "fidelity_weights", None))):
        if val is not None:
            extra[key] = val
    try:
        return HyperParams(**extra)
    except TypeError as exc:
        raise ConfigError(f"bad hyperparameters: {exc}") from None


def load_events(args):
    src = sys.stdin if args.events == "-" else args.events
    if src is sys.stdin:
        lines = sys.stdin.read().splitlines(keepends=True)
        layout = storage.infer_layout(iter(lines)) if lines else None
        reader = storage.ingest(iter(lines), layout, strict=args.strict)
    else:
        layout = storage.infer_layout(src)
        reader = storage.ingest(src, layout, strict=args.strict)
    records = sorted(reader, key=lambda r: (r.t, r.user_id))
    return records, layout, reader.stats


def engine_for(args, records, layout, record=False):
    demo = storage.read_demographics(args.demographics) if args.demographics else {}
    if args.checkpoint and os.path.exists(args.checkpoint):
        eng = Engine.from_state_dict(storage.load_checkpoint(args.checkpoint))
        done = {u: c.t for u, c in eng.clouds.items()}
        records = [r for r in records if r.t > done.get(r.user_id, 0)]
        return eng, records
    if records:
        d = records[0].x.shape[0]
    else:
        d = layout.d if layout is not None else 1
    d_D = len(next(iter(demo.values()))) if demo else 0
    hp = make_hp(args, d, d_D)
    barrier = BarrierSchedule(args.barrier_period if args.barrier_period > 0 else math.inf)
    return Engine(hp, barrier=barrier, demographics=demo, record=record), records


# --- commands -------------------------------------------------------------------

def cmd_simulate(args):
    K = args.states
    if args.plain:
        layout, d = args.plain, args.plain
    else:
        layout = CovariateLayout(n_tags=args.n_tags)
        d = layout.d
    P2 = 2 * d
    # two segments that differ in their baseline propensity
    means = np.zeros((2, P2))
    if args.plain:
        means[:, 0] = (1.0, -1.0)
    else:
        eff = np.zeros((2, d))
        eff[:, 0] = (1.0, -1.0)
        eff[:, 2:] = np.array([0.5, -0.5])[:, None] / (d - 2)
        means[:, :d] = bounded_gamma(eff, layout, args.t)
    means[:, d:] = -4.0
    covs = np.tile(np.diag(np.r_[np.full(d, 0.01), np.full(d, 0.01)]), (2, 1, 1))
    shift = np.zeros((K, P2))
    shift[:, 0] = np.linspace(1.5, -1.5, K) if K > 1 else 0.0
    Delta = np.zeros((P2, 1))
    Delta[0, 0] = 0.5
    ds = gen_population(args.users, SegmentSpec([0.5, 0.5], means, covs), DemographicsSpec(1, "binary"),
                        args.seed, Delta=Delta, K_states=K, state_shift=shift, T=args.t, layout=layout)
    fields = ds.fields if ds.fields else None
    if args.out:
        storage.emit(ds.records, args.out, fields)
    else:
        storage.emit(ds.records, sys.stdout, fields)
    if args.truth:
        storage.write_truth(ds, args.truth)
    if args.demographics_out:
        storage.write_demographics(ds.demographics, args.demographics_out)
    return 0


def cmd_filter(args, smooth_paths=False):
    records, layout, stats = load_events(args)
    eng, records = engine_for(args, records, layout, record=smooth_paths)
    eng.run(records).finish()
    rep = eng.report()
    rep["ingest"] = stats.as_dict()
    if smooth_paths:
        truth = storage.read_truth(args.truth)[0] if args.truth else {}
        for uid, cloud in sorted(eng.clouds.items()):
            if not cloud.snapshots:
                continue
            sm = smooth(cloud.snapshots, stream(eng.seed, uid, "smooth"), n_paths=args.paths)
            path = sm.modal_path()
            entry = rep["users"][uid]
            entry["smoothed_path"] = path.tolist()
            entry["smoothed_marginals"] = sm.marginals().round(6).tolist()
            if uid in truth and len(truth[uid]["states"]) == len(path):
                entry["matched_accuracy"] = matched_accuracy(path, truth[uid]["states"])
    if args.checkpoint:
        storage.save_checkpoint(args.checkpoint, eng.state_dict())
        rep["checkpoint"] = args.checkpoint
    emit_report(rep, args.out)
    return 0


def _read_vectors(path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, text in enumerate(fh, 1):
            if not text.strip():
                continue
            obj = json.loads(text)
            vec = obj.get("v") if isinstance(obj, dict) else obj
            if not isinstance(vec, list):
                raise storage.SchemaError("expected a list or an object with 'v'", lineno)
            rows.append(vec)
    return np.asarray(rows, dtype=float)


def cmd_vb(args):
    if args.data:
        data = _read_vectors(args.data)
        D = data.shape[1]
        if D % 2:
            prior = VBPrior(np.zeros(D), 0.1, D + 2.0, np.eye(D) * (D + 2.0))
        else:
            prior = VBPrior.from_hp(make_hp(args, D // 2, 0))
    elif args.checkpoint:
        eng = Engine.from_state_dict(storage.load_checkpoint(args.checkpoint))
        _, data = eng.collect()
        prior = VBPrior.from_hp(eng.hp)
    else:
        raise ConfigError("vb needs a data file or --checkpoint")
    vp = run_vem(data, prior, stream(args.seed, "vb"), K_trunc=args.k_trunc, max_iter=args.max_iter)
    keep = vp.Nk > 1.0
    emit_report({"n": int(data.shape[0]), "clusters": int(keep.sum()),
                 "weights": vp.expected_theta()[keep], "means": vp.m[keep],
                 "elbo": vp.elbo_trace[-1], "iterations": len(vp.elbo_trace) - 1}, args.out)
    return 0


def cmd_gibbs_check(args):
    inst = gibbs.bundled_instance()
    exact = gibbs.exact_posterior(inst, labels="labeled")
    res = gibbs.collapsed_gibbs(inst, args.sweeps, stream(args.seed, "gibbs"), mode=args.mode)
    emp = gibbs.empirical_distribution(res.paths)
    tv = gibbs.total_variation(exact, emp)
    ok = tv <= args.tolerance
    emit_report({"instance": {"y": list(inst.y), "beta": list(inst.beta), "alpha": inst.alpha},
                 "sweeps": args.sweeps, "mode": args.mode, "total_variation": tv,
                 "tolerance": args.tolerance, "passed": bool(ok),
                 "exact_marginals": gibbs.site_marginals(exact, inst.T, inst.K),
                 "gibbs_marginals": gibbs.site_marginals(emp, inst.T, inst.K)}, args.out)
    return 0 if ok else 1


def cmd_report(args):
    if not args.checkpoint:
        raise ConfigError("report needs --checkpoint")
    eng = Engine.from_state_dict(storage.load_checkpoint(args.checkpoint))
    emit_report(eng.report(), args.out)
    return 0


COMMANDS = {"simulate": cmd_simulate, "filter": cmd_filter,
            "smooth": lambda a: cmd_filter(a, smooth_paths=True),
            "vb": cmd_vb, "gibbs-check": cmd_gibbs_check, "report": cmd_report}


def main(argv=None, environ=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        resolve(args, environ)
        return COMMANDS[args.command](args)
    except IHMMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
