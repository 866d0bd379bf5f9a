"""Command-line entry point.

Subcommands: synth, train, eval, episode, gradcheck, solver-bench.
Machine-readable output (JSON/CSV) goes to stdout or the file named by a
flag; human-readable progress goes to stderr. Exit codes: 0 success,
1 check failure, 2 usage, 3 I/O or malformed file, 4 numerical divergence,
5 data mismatch.

Commands accept ``--config FILE`` with flat ``key = value`` lines (see
CONFIG_DEFAULTS for the keys); explicit flags win over the file.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .data import SyntheticSpec, read_naeb, sample_episode, synth_generate, write_naeb
from .errors import (CapacityError, DataMismatchError, DegenerateInputError,
                     DivergenceError, FormatError, NodeAdapterError, UsageError)
from .evaluation import VARIANTS, ablation_run, evaluate
from .field import SupportContext, field_eval
from .gradcheck import run_all
from .ode import METHODS, SolverConfig, integrate, solver_benchmark
from .prototypes import fuse, fusion_coefficients, textual_prototype, visual_prototype
from .training import TrainConfig, load_napm, save_napm, train

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_DIVERGED = 4
EXIT_MISMATCH = 5

CONFIG_DEFAULTS = {
    # synthetic data
    "classes": 10, "dim": 32, "shots": 16, "queries": 20, "prompts": 5,
    "visual_noise": 0.25, "textual_noise": 0.15, "bias": 0.3,
    # training
    "epochs": 20, "lr0": 1e-3, "lr_min": 0.0, "tau": 0.01, "eta": 0.1,
    "horizon": 30.0, "weight_decay": 0.01, "beta1": 0.9, "beta2": 0.999,
    "eps": 1e-8, "embed_dim": 1024,
    # solver
    "method": "rk4", "steps": 30, "t0": 0.0, "tm": 30.0,
    # shared
    "seed": 0,
}


def read_config(path):
    """Parse flat `key = value` lines; unknown keys are rejected."""
    values = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, _, raw = line.partition("=")
            key = key.strip()
            if key not in CONFIG_DEFAULTS:
                raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
            default = CONFIG_DEFAULTS[key]
            raw = raw.strip()
            try:
                values[key] = type(default)(raw) if not isinstance(default, str) else raw
            except ValueError:
                raise UsageError(f"{path}:{lineno}: bad value {raw!r} for {key}")
    return values


def settings_from(args):
    """Layer CONFIG_DEFAULTS < config file < explicit flags."""
    merged = dict(CONFIG_DEFAULTS)
    if getattr(args, "config", None):
        merged.update(read_config(args.config))
    for key in CONFIG_DEFAULTS:
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
    return merged


def _solver_config(s) -> SolverConfig:
    return SolverConfig(method=s["method"], steps=s["steps"], t0=s["t0"], tm=s["tm"])


def _train_config(s) -> TrainConfig:
    return TrainConfig(
        epochs=s["epochs"], lr0=s["lr0"], lr_min=s["lr_min"], tau=s["tau"],
        eta=s["eta"], horizon=s["horizon"], weight_decay=s["weight_decay"],
        beta1=s["beta1"], beta2=s["beta2"], eps=s["eps"], seed=s["seed"],
        embed_dim=s["embed_dim"], solver=_solver_config(s))


def _emit(text, path=None):
    if path:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        print(text)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args):
    s = settings_from(args)
    spec = SyntheticSpec(
        classes=s["classes"], dim=s["dim"], shots=s["shots"],
        queries_per_class=s["queries"], prompts_per_class=s["prompts"],
        visual_noise=s["visual_noise"], textual_noise=s["textual_noise"],
        support_bias=s["bias"], seed=s["seed"])
    spec.validate()
    support, query, prompts = synth_generate(spec)
    os.makedirs(args.out, exist_ok=True)
    manifest = {}
    for name, es in (("support", support), ("query", query), ("prompts", prompts)):
        path = os.path.join(args.out, f"{name}.naeb")
        write_naeb(es, path)
        manifest[name] = {"path": path, "rows": es.n_rows, "dim": es.dim,
                          "classes": es.n_classes, "modality": es.modality}
    manifest["seed"] = spec.seed
    print(json.dumps(manifest, sort_keys=True, separators=(",", ":")))
    print(f"wrote 3 NAEB files to {args.out}", file=sys.stderr)


def cmd_train(args):
    s = settings_from(args)
    cfg = _train_config(s)
    support = read_naeb(args.support)
    prompts = read_naeb(args.prompts)

    metrics_path = args.metrics or (args.out + ".metrics.jsonl")
    with open(metrics_path, "w", encoding="utf-8") as metrics:
        header = {"epochs": cfg.epochs, "lr0": cfg.lr0, "seed": cfg.seed,
                  "solver": cfg.solver.method, "steps": cfg.solver.steps}
        metrics.write(json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n")

        def on_epoch(rec):
            metrics.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")
            print(f"epoch {rec['epoch']:3d}  loss {rec['loss']:.6f}  "
                  f"support_acc {rec['support_acc']:.4f}", file=sys.stderr)

        model = train(support, prompts, cfg, on_epoch=on_epoch)
    save_napm(model, args.out)
    print(f"model written to {args.out}", file=sys.stderr)


def _variant_prototypes(variant, model, support, prompts):
    if variant == "TP+VP+NODE":
        if model is None:
            raise UsageError("variant TP+VP+NODE needs --model")
        return model.prototypes
    if support is None or prompts is None:
        raise UsageError(f"variant {variant} needs --support and --prompts")
    p_t = textual_prototype(prompts)
    p_v = visual_prototype(support)
    if variant == "TP":
        return p_t
    if variant == "VP":
        return p_v
    u0 = np.zeros((1, support.dim))
    return fuse(p_t, p_v, fusion_coefficients(p_v, u0)).matrix


def cmd_eval(args):
    s = settings_from(args)
    query = read_naeb(args.query)
    model = load_napm(args.model) if args.model else None
    support = read_naeb(args.support) if args.support else None
    prompts = read_naeb(args.prompts) if args.prompts else None

    if args.ablation:
        if support is None or prompts is None:
            raise UsageError("--ablation needs --support and --prompts")
        cfg = _train_config(s)
        reports = ablation_run(support, prompts, query, cfg, seed=s["seed"])
        text = "\n".join(r.to_json() for r in reports)
        for r in reports:
            print(f"{r.variant:12s} accuracy {r.accuracy:.4f}", file=sys.stderr)
    else:
        variant = args.variant or "TP+VP+NODE"
        if variant not in VARIANTS:
            raise UsageError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
        if variant == "TP+VP+NODE" and model is not None:
            report = evaluate(model, query, seed=s["seed"], variant=variant)
        else:
            protos = _variant_prototypes(variant, model, support, prompts)
            report = evaluate(protos, query, seed=s["seed"], variant=variant)
        text = report.to_json()
        print(f"{report.variant:12s} accuracy {report.accuracy:.4f}", file=sys.stderr)
        if args.confusion_csv:
            with open(args.confusion_csv, "w", encoding="utf-8") as f:
                f.write(report.confusion_csv())
    _emit(text, args.report)


def cmd_episode(args):
    s = settings_from(args)
    visual = read_naeb(args.visual)
    textual = read_naeb(args.textual)
    model = load_napm(args.model) if args.model else None
    threads = int(os.environ.get("NODE_ADAPTER_THREADS", "1"))

    def one(index):
        ep = sample_episode(visual, textual, args.way, args.shot,
                            s["queries"], seed=s["seed"] + index)
        p_t = textual_prototype(ep.prompts)
        p_v = visual_prototype(ep.support)
        u0 = np.zeros((1, ep.support.dim))
        protos = fuse(p_t, p_v, fusion_coefficients(p_v, u0)).matrix
        if model is not None:
            ctx = SupportContext.from_embedding_set(ep.support)
            protos, _ = integrate(
                lambda p, t: field_eval(p, t, ctx, model.field_params),
                protos, model.config.solver)
        return evaluate(protos, ep.query, seed=s["seed"] + index).accuracy

    indices = range(args.episodes)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            accs = list(pool.map(one, indices))
    else:
        accs = [one(i) for i in indices]
    out = {"episodes": args.episodes, "way": args.way, "shot": args.shot,
           "mean_accuracy": float(np.mean(accs)) if accs else 0.0,
           "std_accuracy": float(np.std(accs)) if accs else 0.0,
           "accuracies": accs}
    print(json.dumps(out, sort_keys=True, separators=(",", ":")))
    print(f"{args.episodes} episodes: mean accuracy {out['mean_accuracy']:.4f}",
          file=sys.stderr)


def cmd_gradcheck(args):
    errors = run_all(seed=args.seed, n=args.way, d=args.dim_size,
                     s=args.samples, de=args.embed_size, steps=args.ode_steps)
    worst = max(errors.values())
    for name in sorted(errors):
        print(f"{name:24s} {errors[name]:.3e}", file=sys.stderr)
    print(json.dumps({"errors": errors, "threshold": args.threshold,
                      "max": worst}, sort_keys=True))
    if worst >= args.threshold:
        print(f"FAIL: max relative error {worst:.3e} >= {args.threshold}",
              file=sys.stderr)
        return EXIT_CHECK_FAILED
    print(f"OK: max relative error {worst:.3e} < {args.threshold}", file=sys.stderr)
    return EXIT_OK


def cmd_solver_bench(args):
    steps = [int(x) for x in args.steps.split(",") if x]
    if not steps or any(x < 1 for x in steps):
        raise UsageError(f"bad --steps list {args.steps!r}")
    rows = solver_benchmark(steps)
    lines = ["method,steps,h,global_error"]
    lines += [f"{m},{n},{h:.10g},{e:.12e}" for m, n, h, e in rows]
    _emit("\n".join(lines) + "\n", args.out)


# ---------------------------------------------------------------------------
# wiring


def build_parser():
    parser = argparse.ArgumentParser(
        prog="node-adapter",
        description="Prototype refinement over precomputed vision-language embeddings")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config(p):
        p.add_argument("--config", help="flat key = value configuration file")
        p.add_argument("--seed", type=int, default=None)

    p_synth = sub.add_parser("synth", help="generate a synthetic benchmark")
    add_config(p_synth)
    p_synth.add_argument("--out", required=True, help="output directory")
    p_synth.add_argument("--classes", type=int, default=None)
    p_synth.add_argument("--dim", type=int, default=None)
    p_synth.add_argument("--shots", type=int, default=None)
    p_synth.add_argument("--queries", type=int, default=None)
    p_synth.add_argument("--prompts", type=int, default=None)
    p_synth.add_argument("--visual-noise", dest="visual_noise", type=float, default=None)
    p_synth.add_argument("--textual-noise", dest="textual_noise", type=float, default=None)
    p_synth.add_argument("--bias", type=float, default=None)
    p_synth.set_defaults(fn=cmd_synth)

    def add_train_flags(p):
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--lr0", type=float, default=None)
        p.add_argument("--lr-min", dest="lr_min", type=float, default=None)
        p.add_argument("--tau", type=float, default=None)
        p.add_argument("--eta", type=float, default=None)
        p.add_argument("--horizon", type=float, default=None)
        p.add_argument("--weight-decay", dest="weight_decay", type=float, default=None)
        p.add_argument("--embed-dim", dest="embed_dim", type=int, default=None)
        p.add_argument("--method", choices=METHODS, default=None)
        p.add_argument("--steps", type=int, default=None)
        p.add_argument("--t0", type=float, default=None)
        p.add_argument("--tm", type=float, default=None)

    p_train = sub.add_parser("train", help="train a model from NAEB files")
    add_config(p_train)
    p_train.add_argument("--support", required=True)
    p_train.add_argument("--prompts", required=True)
    p_train.add_argument("--out", required=True, help="model file to write")
    p_train.add_argument("--metrics", help="JSONL metrics path (default: <out>.metrics.jsonl)")
    add_train_flags(p_train)
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate prototypes on a query set")
    add_config(p_eval)
    p_eval.add_argument("--model")
    p_eval.add_argument("--query", required=True)
    p_eval.add_argument("--support")
    p_eval.add_argument("--prompts")
    p_eval.add_argument("--variant", default=None,
                        help="TP, VP, TP+VP or TP+VP+NODE (default)")
    p_eval.add_argument("--ablation", action="store_true",
                        help="evaluate all four variants (trains the NODE one)")
    p_eval.add_argument("--report", help="write JSON here instead of stdout")
    p_eval.add_argument("--confusion-csv", dest="confusion_csv")
    add_train_flags(p_eval)
    p_eval.set_defaults(fn=cmd_eval)

    p_ep = sub.add_parser("episode", help="episodic N-way K-shot evaluation")
    add_config(p_ep)
    p_ep.add_argument("--visual", required=True)
    p_ep.add_argument("--textual", required=True)
    p_ep.add_argument("--way", type=int, required=True)
    p_ep.add_argument("--shot", type=int, required=True)
    p_ep.add_argument("--queries", type=int, default=None)
    p_ep.add_argument("--episodes", type=int, default=100)
    p_ep.add_argument("--model", help="refine prototypes with this trained field")
    p_ep.set_defaults(fn=cmd_episode)

    p_gc = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p_gc.add_argument("--seed", type=int, default=0)
    p_gc.add_argument("--threshold", type=float, default=1e-4)
    p_gc.add_argument("--way", type=int, default=3, help="classes in the test instance")
    p_gc.add_argument("--dim-size", dest="dim_size", type=int, default=4)
    p_gc.add_argument("--samples", type=int, default=4)
    p_gc.add_argument("--embed-size", dest="embed_size", type=int, default=4)
    p_gc.add_argument("--ode-steps", dest="ode_steps", type=int, default=8)
    p_gc.set_defaults(fn=cmd_gradcheck)

    p_sb = sub.add_parser("solver-bench", help="solver error-vs-steps CSV")
    p_sb.add_argument("--steps", default="8,16,32,64,128,256",
                      help="comma-separated step counts")
    p_sb.add_argument("--out", help="CSV path (default: stdout)")
    p_sb.set_defaults(fn=cmd_solver_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        code = args.fn(args)
        return EXIT_OK if code is None else code
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataMismatchError, CapacityError, DegenerateInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except NodeAdapterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
