"""Command-line interface.

Exit codes: 0 on success, 2 on configuration errors (bad config text,
unknown keys, architecture mismatches), 3 on data-format errors (broken
sequence files or checkpoints, missing inputs).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from stepseq import data as datamod
from stepseq import harness as harnessmod
from stepseq import metrics as metricsmod
from stepseq import seso as sesomod
from stepseq.checkpoint import (
    CheckpointFormatError,
    checkpoint_from_seso,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
)
from stepseq.configio import (
    ConfigError,
    benchmark_spec_from_text,
    benchmark_spec_to_text,
    train_config_from_text,
)
from stepseq.data import BenchmarkSpec, DataFormatError
from stepseq.harness import (
    TABLE2_ROWS,
    GridRow,
    HarnessOptions,
    RunManifest,
    arch_config,
    table2_harness,
    table3_harness,
    size_sweep,
)
from stepseq.training import ArchitectureMismatchError, TrainConfig, train_step_model


def _read_train_config(path: str | None) -> tuple[TrainConfig, dict]:
    if path is None:
        return TrainConfig(), {}
    return train_config_from_text(Path(path).read_text())


def _feature_width(data_dir: str) -> int:
    entries = datamod.read_manifest(Path(data_dir) / "manifest.tsv")
    return datamod.read_sequence(Path(data_dir) / entries[0].path).n_features


def cmd_gen_data(args) -> int:
    if args.spec:
        spec = benchmark_spec_from_text(Path(args.spec).read_text())
    else:
        spec = BenchmarkSpec()
    out = Path(args.out)
    manifest = datamod.generate_benchmark(spec, out)
    (out / "benchmark.cfg").write_text(benchmark_spec_to_text(spec))
    entries = datamod.read_manifest(manifest)
    print(f"wrote {len(entries)} sequences under {out}")
    return 0


def cmd_pretrain_seso(args) -> int:
    tcfg, extras = _read_train_config(args.config)
    table = sesomod.build_permutation_table(
        extras.get("perm_p", 24), extras.get("perm_seed", 0)
    )
    train = datamod.load_split(args.data, args.domain, "train")
    val = datamod.load_split(args.data, args.domain, "val")
    config = arch_config(args.arch, _feature_width(args.data), args.hidden)
    model, history = sesomod.pretrain_seso(train, val, config, tcfg, table)
    save_checkpoint(args.out, checkpoint_from_seso(model, table))
    last = history.val_accuracy[-1] if len(history) else float("nan")
    print(f"saved {args.out} (final sorting val accuracy {last:.3f})")
    return 0


def cmd_train(args) -> int:
    tcfg, _ = _read_train_config(args.config)
    config = arch_config(args.arch, _feature_width(args.data), args.hidden)
    train = datamod.load_split(args.data, args.domain, "train")
    val = datamod.load_split(args.data, args.domain, "val")
    init_backbone = None
    if args.init != "random":
        from stepseq.checkpoint import backbone_tensors

        ckpt = load_checkpoint(args.init)
        for name in ("kind", "input_dim", "hidden", "kernel_sizes", "lstm_layers"):
            if getattr(ckpt.config, name) != getattr(config, name):
                raise ArchitectureMismatchError(
                    f"{args.init}: checkpoint {name}={getattr(ckpt.config, name)!r} "
                    f"does not match --arch {args.arch}"
                )
        init_backbone = backbone_tensors(ckpt)
    model, history = train_step_model(train, val, config, tcfg, init_backbone)
    save_checkpoint(args.out, model)
    best = max(history.val_accuracy) if len(history) else float("nan")
    print(f"saved {args.out} (best val accuracy {best:.3f})")
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    model = model_from_checkpoint(ckpt)
    dataset = datamod.load_split(args.data, args.domain, args.split)
    report = metricsmod.evaluate(model, dataset)

    lines = ["run_id,domain,arch,init,seed,epoch,split,metric,value"]
    kind = model.config.kind
    lines.append(
        f"eval,{args.domain},{kind},ckpt,0,0,{args.split},accuracy,{report.pooled_accuracy!r}"
    )
    for seq, acc in zip(dataset, report.per_video_accuracy):
        lines.append(
            f"{seq.id},{args.domain},{kind},ckpt,0,0,{args.split},video_accuracy,{acc!r}"
        )
    lines.append("# confusion matrix, rows = true step, columns = predicted")
    for row in report.confusion.counts:
        lines.append(",".join(str(int(c)) for c in row))
    Path(args.report).write_text("\n".join(lines) + "\n")
    print(f"{args.split} accuracy {report.pooled_accuracy:.4f} over {len(dataset)} videos")
    return 0


def _options_from_args(args) -> HarnessOptions:
    return HarnessOptions(
        epochs=args.epochs,
        pretrain_epochs=args.pretrain_epochs,
        hidden=args.hidden,
        perm_p=args.perm_p,
        perm_seed=args.perm_seed,
    )


def _require_benchmark_args(args) -> None:
    if not args.benchmark or not args.out:
        raise ConfigError("--benchmark and --out are required (or pass --manifest)")


def cmd_table2(args) -> int:
    if args.manifest:
        m = RunManifest.load(args.manifest)
        rows = tuple(GridRow(**r) for r in m.extra["rows"])
        table2_harness(
            m.benchmark, m.out, rows=rows, seeds=tuple(m.seeds),
            options=HarnessOptions.from_dict(m.options),
            cache_dir=m.extra.get("cache_dir"),
        )
        return 0
    _require_benchmark_args(args)
    rows = TABLE2_ROWS
    if args.rows:
        wanted = set(args.rows.split(","))
        unknown = wanted - {r.row_id for r in TABLE2_ROWS}
        if unknown:
            raise ConfigError(f"unknown grid rows: {sorted(unknown)}")
        rows = tuple(r for r in TABLE2_ROWS if r.row_id in wanted)
    table2_harness(
        args.benchmark, args.out, rows=rows,
        seeds=tuple(range(args.seeds)), options=_options_from_args(args),
    )
    print(f"results under {args.out}")
    return 0


def cmd_sweep(args) -> int:
    if args.manifest:
        m = RunManifest.load(args.manifest)
        size_sweep(
            m.benchmark, m.out,
            sizes=[s if s == "all" else int(s) for s in m.extra["sizes"]],
            domains=m.extra["domains"], arches=tuple(m.extra["arches"]),
            seeds=tuple(m.seeds), options=HarnessOptions.from_dict(m.options),
            clamp_sizes=m.extra.get("clamp_sizes", False),
            cache_dir=m.extra.get("cache_dir"),
        )
        return 0
    _require_benchmark_args(args)
    sizes = [s if s == "all" else int(s) for s in args.sizes.split(",")]
    size_sweep(
        args.benchmark, args.out, sizes=sizes,
        domains=args.domains.split(",") if args.domains else None,
        seeds=tuple(range(args.seeds)), options=_options_from_args(args),
        clamp_sizes=args.clamp_sizes,
    )
    print(f"results under {args.out}")
    return 0


def cmd_table3(args) -> int:
    if args.manifest:
        m = RunManifest.load(args.manifest)
        table3_harness(
            m.benchmark, m.out, seeds=tuple(m.seeds), arch=m.extra["arch"],
            options=HarnessOptions.from_dict(m.options),
            cache_dir=m.extra.get("cache_dir"),
        )
        return 0
    _require_benchmark_args(args)
    table3_harness(
        args.benchmark, args.out, seeds=tuple(range(args.seeds)), arch=args.arch,
        options=_options_from_args(args),
    )
    print(f"results under {args.out}")
    return 0


def _add_harness_options(sub) -> None:
    sub.add_argument("--epochs", type=int, default=100)
    sub.add_argument("--pretrain-epochs", type=int, default=50)
    sub.add_argument("--hidden", type=int, default=128)
    sub.add_argument("--perm-p", type=int, default=24)
    sub.add_argument("--perm-seed", type=int, default=0)
    sub.add_argument("--manifest", help="rerun from a saved manifest.json")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stepseq", description="Per-second workflow step recognition toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic benchmark")
    p.add_argument("--spec", help="benchmark spec file (run-config text)")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("pretrain-seso", help="self-supervised sorting pretraining")
    p.add_argument("--data", required=True)
    p.add_argument("--domain", default="source")
    p.add_argument("--arch", default="tsan")
    p.add_argument("--hidden", type=int, default=128)
    p.add_argument("--config", help="train config file")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_pretrain_seso)

    p = sub.add_parser("train", help="train a step model")
    p.add_argument("--data", required=True)
    p.add_argument("--domain", required=True)
    p.add_argument("--arch", required=True)
    p.add_argument("--hidden", type=int, default=128)
    p.add_argument("--init", default="random", help="'random' or a checkpoint path")
    p.add_argument("--config", help="train config file")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--domain", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--report", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("table2", help="architecture comparison grid")
    p.add_argument("--benchmark")
    p.add_argument("--out")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--rows", help="comma-separated grid row ids (default: all)")
    _add_harness_options(p)
    p.set_defaults(fn=cmd_table2)

    p = sub.add_parser("sweep", help="training-set-size sweep")
    p.add_argument("--benchmark")
    p.add_argument("--out")
    p.add_argument("--sizes", default="5,10,50,all")
    p.add_argument("--domains", help="comma-separated target domains")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument(
        "--clamp-sizes", action="store_true",
        help="drop sizes larger than a domain's training set instead of failing",
    )
    _add_harness_options(p)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("table3", help="sorting-task source-vs-target study")
    p.add_argument("--benchmark")
    p.add_argument("--out")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--arch", default="tsan")
    _add_harness_options(p)
    p.set_defaults(fn=cmd_table3)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ArchitectureMismatchError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataFormatError, CheckpointFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
