"""Deterministic benchmark runner.

Subcommands:

- ``bench``: run a (methods x tasks x seeds) sweep and emit a CSV or
  markdown table with one detail row per run plus one mean±std aggregate row
  per (method, task).
- ``align``: train full fine-tuning and a rank-1 learned compression on a
  task, then report the alignment of candidate compression vectors with the
  principal components of the full weight update.
- ``gradcheck``: run the finite-difference oracle suite over every method.

Results are byte-reproducible: by default the wall_ms column is written as 0
(real timing is opt-in via ``--measure-time`` and breaks byte identity; the
step-time comparison harness lives in ``train.time_adapter_steps``).
Aggregates are computed over the 6-significant-digit values that appear in
the detail rows, so the table is exactly self-consistent.

Options for ``bench`` may also come from a plain ``key=value`` file passed
as ``--config``; explicit flags override file entries.
"""

from __future__ import annotations

import argparse
import statistics
import sys

from .adapters import METHOD_NAMES, kind_from_name
from .analysis import gradcheck_suite, pca_alignment, write_alignment_csv
from .linalg import STREAM_ALIGNMENT, Rng
from .train import TASK_KINDS, TaskSpec, TrainConfig, fit, train_run

BENCH_COLUMNS = ("method", "task", "seed", "params", "flops_mult", "flops_add",
                 "final_train_loss", "final_val_loss", "best_val_loss", "wall_ms",
                 "status")

_BENCH_DEFAULTS = {
    "methods": "ilora,lora,vera,dora,mora1,mora6,bitfit,difffit,all",
    "task": "teacher_rank1_sum",
    "k": 32,
    "d": 32,
    "n_train": 256,
    "n_val": 64,
    "input_dist": "gaussian",
    "noise_std": 0.0,
    "steps": 2000,
    "seeds": "0,1,2,3",
    "lr": 1e-2,
    "optimizer": "adamw",
    "weight_decay": 0.0,
    "batch": 0,
    "out": None,
    "format": "csv",
    "measure_time": False,
}

_BENCH_TYPES = {
    "k": int, "d": int, "n_train": int, "n_val": int, "noise_std": float,
    "steps": int, "lr": float, "weight_decay": float, "batch": int,
    "measure_time": lambda s: s.strip().lower() in ("1", "true", "yes"),
}


class BenchSpec:
    """Validated description of one benchmark sweep."""

    def __init__(self, methods, tasks, seeds, steps=2000, lr=1e-2, optimizer="adamw",
                 weight_decay=0.0, batch=0, fmt="csv", measure_time=False):
        if not methods or not tasks or not seeds:
            raise ValueError("methods, tasks and seeds must all be nonempty")
        for name in methods:
            kind_from_name(name)  # validates
        if len({t.kind for t in tasks}) != len(tasks):
            raise ValueError("tasks must have distinct kinds (they label the task column)")
        if fmt not in ("csv", "markdown"):
            raise ValueError(f"format must be csv or markdown, got {fmt!r}")
        self.methods = list(methods)
        self.tasks = list(tasks)
        self.seeds = [int(s) for s in seeds]
        self.steps = int(steps)
        self.lr = float(lr)
        self.optimizer = optimizer
        self.weight_decay = float(weight_decay)
        self.batch = int(batch)
        self.fmt = fmt
        self.measure_time = bool(measure_time)


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def run_bench(spec: BenchSpec) -> list[list[str]]:
    """Execute the sweep; returns formatted rows (details then aggregates)."""
    details: dict[tuple[str, str], list[list[str]]] = {}
    for method in sorted(spec.methods):
        for task in sorted(spec.tasks, key=lambda t: t.kind):
            rows = []
            for seed in sorted(spec.seeds):
                cfg = TrainConfig(
                    task=TaskSpec(task.kind, task.k, task.d, task.n_train, task.n_val,
                                  task.input_dist, task.noise_std, seed=seed),
                    method=kind_from_name(method),
                    optimizer=spec.optimizer,
                    lr=spec.lr,
                    weight_decay=spec.weight_decay,
                    batch=spec.batch,
                    steps=spec.steps,
                    seed=seed,
                )
                res = train_run(cfg)
                wall = res.wall_ms if spec.measure_time else 0.0
                rows.append([
                    res.method, res.task, str(seed), str(res.params),
                    str(res.flops_mult), str(res.flops_add),
                    _fmt(res.final_train_loss), _fmt(res.final_val_loss),
                    _fmt(res.best_val_loss), _fmt(wall), res.status,
                ])
            details[(method, task.kind)] = rows

    out: list[list[str]] = []
    for key in sorted(details):
        out.extend(details[key])
    for key in sorted(details):
        out.append(_aggregate(details[key]))
    return out


def _aggregate(rows: list[list[str]]) -> list[str]:
    """mean±std row over the printed (6-digit) detail values of one group."""

    def agg(col: int) -> str:
        vals = [float(r[col]) for r in rows]
        mean = statistics.fmean(vals)
        std = statistics.stdev(vals) if len(vals) > 1 else 0.0
        return f"{_fmt(mean)}±{_fmt(std)}"

    first = rows[0]
    status = "ok" if all(r[10] == "ok" for r in rows) else "diverged"
    return [first[0], first[1], "agg", first[3], first[4], first[5],
            agg(6), agg(7), agg(8), agg(9), status]


def emit_table(rows: list[list[str]], fmt: str) -> str:
    """Render rows under the fixed schema as CSV or markdown text."""
    if not rows:
        raise ValueError("refusing to emit an empty table")
    if fmt == "csv":
        lines = [",".join(BENCH_COLUMNS)]
        lines.extend(",".join(row) for row in rows)
        return "\n".join(lines) + "\n"
    if fmt == "markdown":
        lines = ["| " + " | ".join(BENCH_COLUMNS) + " |",
                 "|" + "|".join([" --- "] * len(BENCH_COLUMNS)) + "|"]
        lines.extend("| " + " | ".join(row) + " |" for row in rows)
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown format {fmt!r}")


def _load_config(path: str) -> dict:
    values: dict = {}
    with open(path) as f:
        for raw in f:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {line!r} is not key=value")
            key, val = (part.strip() for part in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in _BENCH_DEFAULTS:
                raise ValueError(f"unknown config key {key!r}")
            values[key] = _BENCH_TYPES.get(key, str)(val)
    return values


def _add_bench_parser(sub) -> None:
    p = sub.add_parser("bench", help="run a method sweep and emit a result table")
    p.add_argument("--config", help="key=value defaults file (flags override)")
    p.add_argument("--methods", default=argparse.SUPPRESS,
                   help=f"comma list from {','.join(METHOD_NAMES)}")
    p.add_argument("--task", default=argparse.SUPPRESS,
                   help=f"comma list from {','.join(TASK_KINDS)}")
    p.add_argument("--k", type=int, default=argparse.SUPPRESS)
    p.add_argument("--d", type=int, default=argparse.SUPPRESS)
    p.add_argument("--n-train", dest="n_train", type=int, default=argparse.SUPPRESS)
    p.add_argument("--n-val", dest="n_val", type=int, default=argparse.SUPPRESS)
    p.add_argument("--input-dist", dest="input_dist", default=argparse.SUPPRESS)
    p.add_argument("--noise-std", dest="noise_std", type=float, default=argparse.SUPPRESS)
    p.add_argument("--steps", type=int, default=argparse.SUPPRESS)
    p.add_argument("--seeds", default=argparse.SUPPRESS, help="comma list, default 0,1,2,3")
    p.add_argument("--lr", type=float, default=argparse.SUPPRESS)
    p.add_argument("--optimizer", choices=("sgd", "adamw"), default=argparse.SUPPRESS)
    p.add_argument("--weight-decay", dest="weight_decay", type=float, default=argparse.SUPPRESS)
    p.add_argument("--batch", type=int, default=argparse.SUPPRESS)
    p.add_argument("--out", default=argparse.SUPPRESS, help="output path (stdout if omitted)")
    p.add_argument("--format", choices=("csv", "markdown"), default=argparse.SUPPRESS)
    p.add_argument("--measure-time", dest="measure_time", action="store_true",
                   default=argparse.SUPPRESS,
                   help="record real wall times (breaks byte reproducibility)")


def _cmd_bench(args) -> int:
    opts = dict(_BENCH_DEFAULTS)
    if getattr(args, "config", None):
        opts.update(_load_config(args.config))
    opts.update({k: v for k, v in vars(args).items() if k not in ("command", "config")})

    tasks = [TaskSpec(kind, opts["k"], opts["d"], opts["n_train"], opts["n_val"],
                      opts["input_dist"], opts["noise_std"])
             for kind in str(opts["task"]).split(",")]
    spec = BenchSpec(
        methods=[m for m in str(opts["methods"]).split(",") if m],
        tasks=tasks,
        seeds=[int(s) for s in str(opts["seeds"]).split(",") if s != ""],
        steps=opts["steps"],
        lr=opts["lr"],
        optimizer=opts["optimizer"],
        weight_decay=opts["weight_decay"],
        batch=opts["batch"],
        fmt=opts["format"],
        measure_time=opts["measure_time"],
    )
    text = emit_table(run_bench(spec), spec.fmt)
    if opts["out"]:
        with open(opts["out"], "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_align(args) -> int:
    task = TaskSpec(args.task, args.k, args.d, args.n_train, args.n_val,
                    args.input_dist, args.noise_std, seed=args.seed)
    full_layer, full_res = fit(TrainConfig(task, kind_from_name("all"),
                                           steps=args.steps, lr=args.lr, seed=args.seed))
    lora_layer, _ = fit(TrainConfig(task, kind_from_name("lora"),
                                    steps=args.steps, lr=args.lr, seed=args.seed))
    if full_res.status != "ok":
        print("full fine-tuning run diverged; no report written", file=sys.stderr)
        return 1
    dW = full_layer.adapter.trainables["delta_W"]
    learned = lora_layer.adapter.trainables["A"][0]
    report = pca_alignment(dW, learned_a=learned, rng=Rng(args.seed, STREAM_ALIGNMENT))
    write_alignment_csv([report], args.out)
    top = {name: cos[0] for name, cos in report.cosines.items()}
    print(f"wrote {args.out}; |cos(candidate, top PC)|: "
          + ", ".join(f"{k}={v:.3f}" for k, v in top.items()))
    return 0


def _cmd_gradcheck(args) -> int:
    kinds = None if args.all or args.kind is None else [args.kind]
    results = gradcheck_suite(k=args.k, d=args.d, n_states=args.states)
    failed = False
    for name, err in results.items():
        if kinds is not None and name not in kinds:
            continue
        ok = err <= 1e-6
        failed |= not ok
        print(f"{name:>14s}  max rel err {err:.3e}  {'ok' if ok else 'FAIL'}")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vlra", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    _add_bench_parser(sub)

    p = sub.add_parser("align", help="principal-component alignment study of a full update")
    p.add_argument("--task", default="teacher_rank1_sum", choices=TASK_KINDS)
    p.add_argument("--k", type=int, default=32)
    p.add_argument("--d", type=int, default=32)
    p.add_argument("--n-train", dest="n_train", type=int, default=256)
    p.add_argument("--n-val", dest="n_val", type=int, default=64)
    p.add_argument("--input-dist", dest="input_dist", default="gaussian")
    p.add_argument("--noise-std", dest="noise_std", type=float, default=0.0)
    p.add_argument("--steps", type=int, default=3000)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="align.csv")

    p = sub.add_parser("gradcheck", help="finite-difference oracle suite")
    p.add_argument("--all", action="store_true", help="check every method (default)")
    p.add_argument("--kind", default=None, help="check a single method")
    p.add_argument("--k", type=int, default=7)
    p.add_argument("--d", type=int, default=5)
    p.add_argument("--states", type=int, default=3)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "bench":
            return _cmd_bench(args)
        if args.command == "align":
            return _cmd_align(args)
        return _cmd_gradcheck(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
