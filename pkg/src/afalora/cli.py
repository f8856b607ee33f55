"""``afalora`` command line: train | sweep | merge | eval | report.

Errors go to stderr as ``afalora: error[<category>]: <message>`` with a
category-specific exit code.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from . import config as cfgmod
from .checkpoint import (CheckpointError, atomic_write, load_checkpoint,
                         model_from_checkpoint, model_to_checkpoint, save_checkpoint)
from .config import ConfigError, RunConfig
from .estimator import AdapterRegressor
from .experiments import gen_task, placement_sweep
from .models import merge_model
from .reports import (SWEEP_COLUMNS, TRAIN_COLUMNS, fmt_float, read_csv, render_table,
                      sweep_summary, train_plot, write_sweep_csv, write_train_csv)
from .training import UnmergeableError, evaluate

logger = logging.getLogger("afalora")

EXIT_CODES = {
    "runtime": 1,
    "config": 2,
    "io": 3,
    "checkpoint": 3,
    "unmergeable": 4,
}


class CLIError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--placement", choices=[
        "none", "sigma-a-b", "a-sigma-b", "a-b-sigma", "sigma-a-sigma-b",
        "a-sigma-b-sigma", "sigma-a-b-sigma", "sigma-a-sigma-b-sigma"])
    p.add_argument("--activation", choices=["identity", "relu", "silu", "gelu"])
    p.add_argument("--rank", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--start-frac", type=float)
    p.add_argument("--end-frac", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--dora", action="store_true", default=None)
    p.add_argument("--trainable-base", action="store_true", default=None)
    p.add_argument("--out", help="output directory")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key, e.g. --set schedule.kind=constant")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="afalora", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one run; writes checkpoint and per-step CSV")
    _add_common(p)

    p = sub.add_parser("sweep", help="placement/activation/decay grid with full and LoRA baselines")
    _add_common(p)

    p = sub.add_parser("merge", help="fold a finished adapter checkpoint into dense weights")
    _add_common(p)
    p.add_argument("--checkpoint", help="adapter checkpoint (default: <out>/<name>.afal)")
    p.add_argument("--output", help="merged checkpoint path (default: <out>/<name>_merged.afal)")

    p = sub.add_parser("eval", help="print the eval-set loss of a checkpoint")
    p.add_argument("checkpoint")

    p = sub.add_parser("report", help="render CSVs to text tables and SVG plots")
    p.add_argument("csv", nargs="+")
    p.add_argument("--out", help="directory for rendered files (default: next to each CSV)")
    return parser


def _overrides(args) -> dict[str, str]:
    out = {}
    for flag, key in cfgmod.FLAG_KEYS.items():
        val = getattr(args, flag, None)
        if val is not None:
            out[key] = str(val).lower() if isinstance(val, bool) else str(val)
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_run_config(args) -> RunConfig:
    return cfgmod.parse_config(args.config, _overrides(args))


def _config_from_meta(meta: dict) -> RunConfig:
    known = cfgmod._known_keys()
    return cfgmod.parse_config(None, {k: v for k, v in meta.items() if k in known})


def _paths(cfg: RunConfig) -> tuple[Path, str]:
    out = Path(cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    return out, cfg.run.name


def cmd_train(args) -> int:
    cfg = load_run_config(args)
    out, name = _paths(cfg)
    task = gen_task(cfg.task)
    est = AdapterRegressor(base_layers=task.base_layers, **cfg.estimator_params())
    est.fit(task.X_train, task.y_train, eval_set=(task.X_eval, task.y_eval))
    rep = est.report_

    meta = {k: cfgmod._format(v) for k, v in cfgmod.to_dict(cfg).items()}
    meta.update({
        "checkpoint.kind": "adapter",
        "state.final_beta": fmt_float(rep.final_beta),
        "state.mergeable": str(rep.mergeable).lower(),
        "state.final_eval_loss": fmt_float(rep.final_eval_loss),
    })
    ckpt_path = out / f"{name}.afal"
    save_checkpoint(ckpt_path, model_to_checkpoint(est.model_, meta))
    csv_path = out / f"{name}_train.csv"
    write_train_csv(rep, csv_path)
    summary = {
        "steps": cfg.train.steps,
        "final_beta": fmt_float(rep.final_beta),
        "final_train_loss": fmt_float(rep.records[-1].train_loss),
        "final_eval_loss": fmt_float(rep.final_eval_loss),
        "mergeable": str(rep.mergeable).lower(),
        "merge_deviation": fmt_float(rep.merge_deviation),
        "merged_checksum": rep.merged_checksum or "",
        "wall_clock_s": f"{rep.wall_clock:.3f}",
        "checkpoint": str(ckpt_path),
        "train_csv": str(csv_path),
    }
    text = "".join(f"{k}={v}\n" for k, v in summary.items())
    atomic_write(out / f"{name}_summary.txt", text.encode())
    sys.stdout.write(text)
    return 0


def cmd_merge(args) -> int:
    cfg = load_run_config(args)
    out, name = _paths(cfg)
    src = Path(args.checkpoint) if args.checkpoint else out / f"{name}.afal"
    if not src.exists():
        raise CLIError("io", f"checkpoint not found: {src}")
    ckpt = load_checkpoint(src)
    if ckpt.meta.get("checkpoint.kind") != "adapter":
        raise CLIError("checkpoint", f"{src} is not an adapter checkpoint")
    if ckpt.meta.get("state.mergeable") != "true":
        raise UnmergeableError(
            f"run ended with beta={ckpt.meta.get('state.final_beta')} and non-linear adapters; "
            "refusing to merge"
        )
    merged = merge_model(model_from_checkpoint(ckpt))
    meta = {k: v for k, v in ckpt.meta.items() if not k.startswith(("layer", "model."))}
    meta["checkpoint.kind"] = "merged"
    dst = Path(args.output) if args.output else src.with_name(src.stem + "_merged.afal")
    save_checkpoint(dst, model_to_checkpoint(merged, meta))
    print(f"merged={dst}")
    return 0


def cmd_eval(args) -> int:
    path = Path(args.checkpoint)
    if not path.exists():
        raise CLIError("io", f"checkpoint not found: {path}")
    ckpt = load_checkpoint(path)
    cfg = _config_from_meta(ckpt.meta)
    model = model_from_checkpoint(ckpt)
    beta = float(ckpt.meta.get("state.final_beta", "0")) if ckpt.meta.get("checkpoint.kind") == "adapter" else 0.0
    task = gen_task(cfg.task)
    loss = evaluate(model, (task.X_eval.T, task.y_eval.T), "mse", beta=beta)
    print(fmt_float(loss))
    return 0


def cmd_sweep(args) -> int:
    cfg = load_run_config(args)
    out, name = _paths(cfg)
    sw = cfg.sweep
    t0 = time.perf_counter()
    result = placement_sweep(cfg.task, cfg.train_settings(), placements=sw.placements,
                             activations=sw.activations, end_fracs=sw.end_fracs,
                             n_seeds=sw.n_seeds, seed0=sw.seed0, kind=sw.kind)
    csv_path = out / f"{name}_sweep.csv"
    write_sweep_csv(result, csv_path)
    table = sweep_summary(result)
    atomic_write(out / f"{name}_sweep.txt", table.encode())
    sys.stdout.write(table)
    sys.stdout.write(f"sweep_csv={csv_path}\nelapsed_s={time.perf_counter() - t0:.1f}\n")
    return 0


def cmd_report(args) -> int:
    for src in map(Path, args.csv):
        if not src.exists():
            raise CLIError("io", f"CSV not found: {src}")
        header, rows = read_csv(src)
        dest = Path(args.out) if args.out else src.parent
        dest.mkdir(parents=True, exist_ok=True)
        if tuple(header) == TRAIN_COLUMNS:
            table = render_table(header, [[r[c] for c in header] for r in rows])
            atomic_write(dest / f"{src.stem}.txt", table.encode())
            atomic_write(dest / f"{src.stem}.svg", train_plot(rows, title=src.stem).encode())
            final = rows[-1] if rows else {}
            print(f"{src}: {len(rows)} steps, final beta={final.get('beta')}, "
                  f"final loss={final.get('train_loss')} -> {dest / (src.stem + '.svg')}")
        elif tuple(header) == SWEEP_COLUMNS:
            table = render_table(header, [[r[c] for c in header] for r in rows],
                                 align="llrrrrr")
            atomic_write(dest / f"{src.stem}.txt", table.encode())
            sys.stdout.write(table)
        else:
            raise CLIError("io", f"{src}: unrecognised CSV header {header}")
    return 0


COMMANDS = {"train": cmd_train, "sweep": cmd_sweep, "merge": cmd_merge, "eval": cmd_eval,
            "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except CLIError as exc:
        return _fail(exc.category, str(exc))
    except ConfigError as exc:
        return _fail("config", str(exc))
    except UnmergeableError as exc:
        return _fail("unmergeable", str(exc))
    except CheckpointError as exc:
        return _fail("checkpoint", f"{type(exc).__name__}: {exc}")
    except (FileNotFoundError, PermissionError) as exc:
        return _fail("io", str(exc))
    except (ValueError, RuntimeError, FloatingPointError) as exc:
        return _fail("runtime", f"{type(exc).__name__}: {exc}")


def _fail(category: str, message: str) -> int:
    print(f"afalora: error[{category}]: {message}", file=sys.stderr)
    return EXIT_CODES[category]


if __name__ == "__main__":
    raise SystemExit(main())
