"""Experiment harnesses: architecture grid, training-set-size sweep, and
the sorting-task source-vs-target study.

Every harness decomposes into independent cells (one training run each),
executed by a small process pool capped by the TSAN_LAB_THREADS
environment variable. Each cell writes its result atomically under
<out>/cells/, keyed by a deterministic id, so interrupted harnesses
resume where they stopped and reruns are cheap. A harness is fully
described by its RunManifest (manifest.json in the output directory);
rerunning from the manifest reproduces every CSV byte for byte.

Transfer semantics on the synthetic benchmark: "transfer" rows acquire
their initialization on the source domain, either by supervised step
training (random-init rows) or by sorting-task pretraining (seso rows),
and are then finetuned on each target with a fresh head. The baseline
row trains on the target alone and never touches source data.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from stepseq import data as datamod
from stepseq import metrics as metricsmod
from stepseq import seso as sesomod
from stepseq.checkpoint import (
    Checkpoint,
    backbone_tensors,
    checkpoint_from_seso,
    load_checkpoint,
    save_checkpoint,
)
from stepseq.models import ModelConfig
from stepseq.training import (
    ArchitectureMismatchError,
    TrainConfig,
    train_step_model,
)

THREADS_ENV = "TSAN_LAB_THREADS"

ARCH_KEYS = ("conv1d-k5", "conv1d-k25", "conv1d-k39", "conv-ensemble", "lstm1", "lstm2", "tsan")


def arch_config(arch: str, input_dim: int, hidden: int = 128) -> ModelConfig:
    """ModelConfig for one of the named architecture grid entries."""
    if arch.startswith("conv1d-k"):
        k = int(arch.removeprefix("conv1d-k"))
        return ModelConfig("conv1d", input_dim, hidden=hidden, kernel_sizes=(k,))
    if arch == "conv-ensemble":
        return ModelConfig("conv_ensemble", input_dim, hidden=hidden)
    if arch == "lstm1":
        return ModelConfig("lstm", input_dim, hidden=hidden, lstm_layers=1)
    if arch == "lstm2":
        return ModelConfig("lstm", input_dim, hidden=hidden, lstm_layers=2)
    if arch == "tsan":
        return ModelConfig("tsan", input_dim, hidden=hidden)
    raise ValueError(f"unknown architecture {arch!r}, expected one of {ARCH_KEYS}")


@dataclass(frozen=True)
class GridRow:
    row_id: str
    arch: str
    seso: bool
    transfer: bool


TABLE2_ROWS = (
    GridRow("baseline-lstm1", "lstm1", seso=False, transfer=False),
    GridRow("conv1d-k5", "conv1d-k5", seso=False, transfer=True),
    GridRow("conv1d-k25", "conv1d-k25", seso=False, transfer=True),
    GridRow("conv1d-k39", "conv1d-k39", seso=False, transfer=True),
    GridRow("conv-ensemble", "conv-ensemble", seso=False, transfer=True),
    GridRow("lstm1", "lstm1", seso=False, transfer=True),
    GridRow("lstm1-seso", "lstm1", seso=True, transfer=True),
    GridRow("lstm2", "lstm2", seso=False, transfer=True),
    GridRow("lstm2-seso", "lstm2", seso=True, transfer=True),
    GridRow("tsan", "tsan", seso=False, transfer=True),
    GridRow("tsan-seso", "tsan", seso=True, transfer=True),
)


@dataclass
class HarnessOptions:
    epochs: int = 100  # step training, the paper protocol
    pretrain_epochs: int = 50  # source initialization budget (ours)
    hidden: int = 128
    perm_p: int = 24
    perm_seed: int = 0
    subset_seed: int = 77  # nesting order for size sweeps

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "HarnessOptions":
        return cls(**d)


@dataclass
class RunManifest:
    kind: str
    benchmark: str
    out: str
    seeds: list[int]
    options: dict
    extra: dict = field(default_factory=dict)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(dataclasses.asdict(self), sort_keys=True, indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# cell execution


def worker_count() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    return max(1, min(os.cpu_count() or 1, 4))


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def execute_job(job: dict) -> dict:
    """Run one harness cell; results are cached by the cell's output file."""
    result_path = Path(job["result_path"])
    if result_path.exists():
        return json.loads(result_path.read_text())
    result = _JOB_OPS[job["op"]](job)
    result_path.parent.mkdir(parents=True, exist_ok=True)
    _atomic_write_text(result_path, json.dumps(result, sort_keys=True))
    return result


def _load_splits(benchmark: str, domain: str):
    train = datamod.load_split(benchmark, domain, "train")
    val = datamod.load_split(benchmark, domain, "val")
    return train, val


def _feature_width(benchmark: str) -> int:
    entries = datamod.read_manifest(Path(benchmark) / "manifest.tsv")
    return datamod.read_sequence(Path(benchmark) / entries[0].path).n_features


def _job_pretrain_seso(job: dict) -> dict:
    train, val = _load_splits(job["benchmark"], job["domain"])
    config = arch_config(job["arch"], _feature_width(job["benchmark"]), job["hidden"])
    table = sesomod.build_permutation_table(job["perm_p"], job["perm_seed"])
    model, history = sesomod.pretrain_seso(
        train, val, config,
        TrainConfig(epochs=job["epochs"], seed=job["seed"]),
        table,
    )
    ckpt_path = Path(job["ckpt_path"])
    ckpt_path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt_path, checkpoint_from_seso(model, table))
    return {
        "ckpt": str(ckpt_path),
        "train_loss": history.train_loss,
        "val_accuracy": history.val_accuracy,
    }


def _job_train_source_supervised(job: dict) -> dict:
    train, val = _load_splits(job["benchmark"], "source")
    config = arch_config(job["arch"], _feature_width(job["benchmark"]), job["hidden"])
    model, history = train_step_model(
        train, val, config, TrainConfig(epochs=job["epochs"], seed=job["seed"])
    )
    ckpt_path = Path(job["ckpt_path"])
    ckpt_path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt_path, model)
    return {
        "ckpt": str(ckpt_path),
        "train_loss": history.train_loss,
        "val_accuracy": history.val_accuracy,
    }


def _resolve_init(job: dict, config: ModelConfig):
    init = job["init"]
    if init == "random":
        return None
    ckpt = load_checkpoint(init)
    for name in ("kind", "input_dim", "hidden", "kernel_sizes", "lstm_layers"):
        if getattr(ckpt.config, name) != getattr(config, name):
            raise ArchitectureMismatchError(
                f"checkpoint {init}: {name}={getattr(ckpt.config, name)!r} does not "
                f"match requested {getattr(config, name)!r}"
            )
    return backbone_tensors(ckpt)


def nested_subset(train: list, size: int, subset_seed: int) -> list:
    """First `size` items of a fixed seeded order; larger sizes extend
    smaller ones."""
    order = np.random.default_rng(subset_seed).permutation(len(train))
    return [train[i] for i in order[:size]]


def _job_train_step(job: dict) -> dict:
    benchmark = job["benchmark"]
    domain = job["domain"]
    train, val = _load_splits(benchmark, domain)
    if job.get("subset_size") is not None:
        size = job["subset_size"]
        if size > len(train):
            raise ValueError(
                f"{domain}: subset of {size} exceeds the {len(train)}-video training set"
            )
        train = nested_subset(train, size, job["subset_seed"])
    config = arch_config(job["arch"], _feature_width(benchmark), job["hidden"])
    model, history = train_step_model(
        train, val, config,
        TrainConfig(epochs=job["epochs"], seed=job["seed"]),
        init_backbone=_resolve_init(job, config),
    )
    test = datamod.load_split(benchmark, domain, "test")
    report = metricsmod.evaluate(model, test)
    return {
        "test_accuracy": report.pooled_accuracy,
        "confusion": report.confusion.counts.tolist(),
        "train_ids": [seq.id for seq in train],
        "train_loss": history.train_loss,
        "val_accuracy": history.val_accuracy,
    }


_JOB_OPS = {
    "pretrain_seso": _job_pretrain_seso,
    "train_source_supervised": _job_train_source_supervised,
    "train_step": _job_train_step,
}


def run_jobs(jobs: list[dict], workers: int | None = None) -> dict[str, dict]:
    """Execute cells (cache-aware), possibly in parallel; results by id."""
    workers = worker_count() if workers is None else workers
    pending = [j for j in jobs if not Path(j["result_path"]).exists()]
    results: dict[str, dict] = {}
    if len(pending) > 1 and workers > 1:
        os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
        os.environ.setdefault("OMP_NUM_THREADS", "1")
        with ProcessPoolExecutor(
            max_workers=min(workers, len(pending)), mp_context=get_context("spawn")
        ) as pool:
            for job, result in zip(pending, pool.map(execute_job, pending)):
                results[job["job_id"]] = result
    for job in jobs:
        if job["job_id"] not in results:
            results[job["job_id"]] = execute_job(job)
    return results


# ---------------------------------------------------------------------------
# shared stage builders


def _seso_job(benchmark, cells_dir, domain, arch, seed, opt: HarnessOptions) -> dict:
    job_id = f"seso_{domain}_{arch}_e{opt.pretrain_epochs}_p{opt.perm_p}_h{opt.hidden}_s{seed}"
    return {
        "op": "pretrain_seso",
        "job_id": job_id,
        "benchmark": str(benchmark),
        "domain": domain,
        "arch": arch,
        "seed": seed,
        "epochs": opt.pretrain_epochs,
        "hidden": opt.hidden,
        "perm_p": opt.perm_p,
        "perm_seed": opt.perm_seed,
        "ckpt_path": str(Path(cells_dir) / f"{job_id}.ckpt"),
        "result_path": str(Path(cells_dir) / f"{job_id}.json"),
    }


def _sup_job(benchmark, cells_dir, arch, seed, opt: HarnessOptions) -> dict:
    job_id = f"sup_source_{arch}_e{opt.pretrain_epochs}_h{opt.hidden}_s{seed}"
    return {
        "op": "train_source_supervised",
        "job_id": job_id,
        "benchmark": str(benchmark),
        "arch": arch,
        "seed": seed,
        "epochs": opt.pretrain_epochs,
        "hidden": opt.hidden,
        "ckpt_path": str(Path(cells_dir) / f"{job_id}.ckpt"),
        "result_path": str(Path(cells_dir) / f"{job_id}.json"),
    }


def _step_job(
    benchmark, cells_dir, run_id, domain, arch, seed, init, opt: HarnessOptions,
    subset_size=None,
) -> dict:
    # Result files are keyed by the cell's semantic content, not by the
    # harness-facing run id, so identical runs requested by different
    # harnesses share one cached computation.
    semantic = "|".join(
        str(part)
        for part in (
            Path(benchmark).resolve(), domain, arch, seed, opt.epochs, opt.hidden,
            init, subset_size, opt.subset_seed,
        )
    )
    digest = hashlib.sha256(semantic.encode()).hexdigest()[:16]
    return {
        "op": "train_step",
        "job_id": run_id,
        "benchmark": str(benchmark),
        "domain": domain,
        "arch": arch,
        "seed": seed,
        "epochs": opt.epochs,
        "hidden": opt.hidden,
        "init": init,
        "subset_size": subset_size,
        "subset_seed": opt.subset_seed,
        "result_path": str(Path(cells_dir) / f"step_{digest}.json"),
    }


def _fmt(value: float) -> str:
    return repr(float(value))


def _write_metrics_csv(path: Path, rows: list[tuple]) -> None:
    lines = ["run_id,domain,arch,init,seed,epoch,split,metric,value"]
    for row in rows:
        lines.append(",".join(str(c) for c in row))
    _atomic_write_text(path, "\n".join(lines) + "\n")


def _history_rows(run_id, domain, arch, init, seed, result) -> list[tuple]:
    rows = []
    for epoch, (loss, acc) in enumerate(
        zip(result["train_loss"], result["val_accuracy"]), start=1
    ):
        rows.append((run_id, domain, arch, init, seed, epoch, "train", "loss", _fmt(loss)))
        rows.append((run_id, domain, arch, init, seed, epoch, "val", "accuracy", _fmt(acc)))
    if "test_accuracy" in result:
        rows.append(
            (run_id, domain, arch, init, seed, 0, "test", "accuracy", _fmt(result["test_accuracy"]))
        )
    return rows


def _median(values) -> float:
    return float(statistics.median(values))


def _target_domains(benchmark) -> list[str]:
    domains = datamod.benchmark_domains(benchmark)
    return [d for d in domains if d != "source"]


# ---------------------------------------------------------------------------
# table 2 analog: architecture grid


def table2_harness(
    benchmark,
    out_dir,
    rows: tuple[GridRow, ...] = TABLE2_ROWS,
    seeds: tuple[int, ...] = (0, 1, 2),
    options: HarnessOptions | None = None,
    workers: int | None = None,
    cache_dir=None,
) -> dict:
    """Train every grid row on each target domain and tabulate test
    accuracy plus the cross-target average."""
    opt = options or HarnessOptions()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cells = Path(cache_dir) if cache_dir else out_dir / "cells"
    targets = _target_domains(benchmark)

    RunManifest(
        kind="table2",
        benchmark=str(benchmark),
        out=str(out_dir),
        seeds=list(seeds),
        options=opt.to_dict(),
        extra={"rows": [dataclasses.asdict(r) for r in rows], "cache_dir": str(cells)},
    ).save(out_dir / "manifest.json")

    pretrain_jobs: dict[tuple, dict] = {}
    for row in rows:
        if not row.transfer:
            continue
        for seed in seeds:
            if row.seso:
                pretrain_jobs[("seso", row.arch, seed)] = _seso_job(
                    benchmark, cells, "source", row.arch, seed, opt
                )
            else:
                pretrain_jobs[("sup", row.arch, seed)] = _sup_job(
                    benchmark, cells, row.arch, seed, opt
                )
    run_jobs(list(pretrain_jobs.values()), workers)

    stage2 = []
    init_label = {}
    for row in rows:
        for domain in targets:
            for seed in seeds:
                if not row.transfer:
                    init, label = "random", "random"
                elif row.seso:
                    init = pretrain_jobs[("seso", row.arch, seed)]["ckpt_path"]
                    label = "seso:source"
                else:
                    init = pretrain_jobs[("sup", row.arch, seed)]["ckpt_path"]
                    label = "sup:source"
                run_id = f"t2_{row.row_id}_{domain}_s{seed}"
                init_label[run_id] = label
                stage2.append(
                    _step_job(benchmark, cells, run_id, domain, row.arch, seed, init, opt)
                )
    results = run_jobs(stage2, workers)

    metric_rows = []
    table: dict[str, dict] = {}
    for row in rows:
        per_domain = {}
        per_seed_avg = []
        for seed in seeds:
            accs = []
            for domain in targets:
                run_id = f"t2_{row.row_id}_{domain}_s{seed}"
                acc = results[run_id]["test_accuracy"]
                accs.append(acc)
                per_domain.setdefault(domain, []).append(acc)
                metric_rows.extend(
                    _history_rows(
                        run_id, domain, row.arch, init_label[run_id], seed, results[run_id]
                    )
                )
            per_seed_avg.append(float(np.mean(accs)))
        table[row.row_id] = {
            **{d: _median(per_domain[d]) for d in targets},
            "avg": _median(per_seed_avg),
            "avg_per_seed": per_seed_avg,
        }

    _write_metrics_csv(out_dir / "metrics.csv", metric_rows)
    _write_results_table(out_dir, table, targets, seeds)
    return table


def _write_results_table(out_dir: Path, table: dict, targets: list[str], seeds) -> None:
    header = ["row", *targets, "avg"]
    csv_lines = [",".join(header)]
    txt_lines = [" | ".join(f"{h:>14}" for h in header)]
    for row_id, cells in table.items():
        values = [cells[d] for d in targets] + [cells["avg"]]
        csv_lines.append(",".join([row_id, *(_fmt(v) for v in values)]))
        txt_lines.append(
            " | ".join([f"{row_id:>14}"] + [f"{100 * v:>13.1f}%" for v in values])
        )
    _atomic_write_text(out_dir / "results.csv", "\n".join(csv_lines) + "\n")
    _atomic_write_text(out_dir / "results.txt", "\n".join(txt_lines) + "\n")


# ---------------------------------------------------------------------------
# fig 3 A-C analog: training-set-size sweep


def size_sweep(
    benchmark,
    out_dir,
    sizes: list,
    domains: list[str] | None = None,
    arches: tuple[str, ...] = ("lstm1", "tsan"),
    seeds: tuple[int, ...] = (0, 1, 2),
    options: HarnessOptions | None = None,
    workers: int | None = None,
    clamp_sizes: bool = False,
    cache_dir=None,
) -> dict:
    """Accuracy as a function of nested training subset size, with a
    fixed test set and sorting-pretrained initialization."""
    opt = options or HarnessOptions()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cells = Path(cache_dir) if cache_dir else out_dir / "cells"
    domains = domains or _target_domains(benchmark)

    RunManifest(
        kind="sweep",
        benchmark=str(benchmark),
        out=str(out_dir),
        seeds=list(seeds),
        options=opt.to_dict(),
        extra={"sizes": [str(s) for s in sizes], "domains": domains, "arches": list(arches),
               "clamp_sizes": clamp_sizes, "cache_dir": str(cells)},
    ).save(out_dir / "manifest.json")

    resolved: dict[str, list[int]] = {}
    for domain in domains:
        n_train = len(datamod.load_split(benchmark, domain, "train"))
        sizes_num = []
        for s in sizes:
            if s == "all":
                sizes_num.append(n_train)
            else:
                s = int(s)
                if s > n_train:
                    if clamp_sizes:
                        continue  # dropped; "all" covers the top end
                    raise ValueError(
                        f"{domain}: size {s} exceeds the {n_train}-video training set"
                    )
                sizes_num.append(s)
        deduped = sorted(set(sizes_num))
        if sizes_num != sorted(sizes_num):
            raise ValueError(f"sizes must be ascending, got {sizes}")
        resolved[domain] = deduped

    stage1 = {
        (arch, seed): _seso_job(benchmark, cells, "source", arch, seed, opt)
        for arch in arches
        for seed in seeds
    }
    run_jobs(list(stage1.values()), workers)

    stage2 = []
    for domain in domains:
        for arch in arches:
            for size in resolved[domain]:
                for seed in seeds:
                    ckpt = stage1[(arch, seed)]["ckpt_path"]
                    run_id = f"sw_{arch}_{domain}_n{size}_s{seed}"
                    stage2.append(
                        _step_job(
                            benchmark, cells, run_id, domain, arch, seed, ckpt, opt,
                            subset_size=size,
                        )
                    )
    results = run_jobs(stage2, workers)

    metric_rows = []
    curves: dict = {}
    csv_lines = ["domain,arch,size,accuracy_median,accuracies"]
    for domain in domains:
        for arch in arches:
            per_size = []
            for size in resolved[domain]:
                accs = []
                for seed in seeds:
                    run_id = f"sw_{arch}_{domain}_n{size}_s{seed}"
                    accs.append(results[run_id]["test_accuracy"])
                    metric_rows.extend(
                        _history_rows(run_id, domain, arch, "seso:source", seed, results[run_id])
                    )
                per_size.append((size, _median(accs), accs))
                csv_lines.append(
                    f"{domain},{arch},{size},{_fmt(_median(accs))},"
                    + ";".join(_fmt(a) for a in accs)
                )
            curves[(domain, arch)] = per_size

    _write_metrics_csv(out_dir / "metrics.csv", metric_rows)
    _atomic_write_text(out_dir / "results.csv", "\n".join(csv_lines) + "\n")
    txt = ["domain           arch     size  median-accuracy"]
    for (domain, arch), per_size in curves.items():
        for size, med, _ in per_size:
            txt.append(f"{domain:>14} {arch:>8} {size:>6}  {100 * med:>6.1f}%")
    _atomic_write_text(out_dir / "results.txt", "\n".join(txt) + "\n")

    # nested-subset audit: ids of smaller subsets are contained in larger
    for domain in domains:
        prev: set | None = None
        for size in resolved[domain]:
            ids = set(results[f"sw_{arches[0]}_{domain}_n{size}_s{seeds[0]}"]["train_ids"])
            if prev is not None and not prev.issubset(ids):
                raise AssertionError(f"nesting violated for {domain} at size {size}")
            prev = ids
    return curves


# ---------------------------------------------------------------------------
# table 3 / fig 3 D analog: sorting-task source vs target


def table3_harness(
    benchmark,
    out_dir,
    seeds: tuple[int, ...] = (0, 1, 2),
    arch: str = "tsan",
    options: HarnessOptions | None = None,
    workers: int | None = None,
    cache_dir=None,
) -> dict:
    """Pretrain the sorting task on source vs on each target, finetune on
    the target step task, and compare."""
    opt = options or HarnessOptions()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cells = Path(cache_dir) if cache_dir else out_dir / "cells"
    targets = _target_domains(benchmark)

    RunManifest(
        kind="table3",
        benchmark=str(benchmark),
        out=str(out_dir),
        seeds=list(seeds),
        options=opt.to_dict(),
        extra={"arch": arch, "cache_dir": str(cells)},
    ).save(out_dir / "manifest.json")

    stage1 = {}
    for domain in ["source", *targets]:
        for seed in seeds:
            stage1[(domain, seed)] = _seso_job(benchmark, cells, domain, arch, seed, opt)
    seso_by_id = run_jobs(list(stage1.values()), workers)
    seso_results = {
        key: seso_by_id[job["job_id"]] for key, job in stage1.items()
    }

    stage2 = []
    for domain in targets:
        for pretrain_domain in (domain, "source"):
            for seed in seeds:
                ckpt = stage1[(pretrain_domain, seed)]["ckpt_path"]
                run_id = f"t3_{domain}_from-{pretrain_domain}_s{seed}"
                stage2.append(
                    _step_job(benchmark, cells, run_id, domain, arch, seed, ckpt, opt)
                )
    results = run_jobs(stage2, workers)

    metric_rows = []
    for domain in ["source", *targets]:
        for seed in seeds:
            res = seso_results[(domain, seed)]
            metric_rows.extend(
                _history_rows(f"seso_{domain}_s{seed}", domain, arch, "random", seed, res)
            )

    table: dict = {}
    csv_lines = ["step_domain,seso_domain,accuracy_median,accuracies"]
    for domain in targets:
        for pretrain_domain in (domain, "source"):
            accs = []
            for seed in seeds:
                run_id = f"t3_{domain}_from-{pretrain_domain}_s{seed}"
                accs.append(results[run_id]["test_accuracy"])
                metric_rows.extend(
                    _history_rows(
                        run_id, domain, arch, f"seso:{pretrain_domain}", seed, results[run_id]
                    )
                )
            table[(domain, pretrain_domain)] = _median(accs)
            csv_lines.append(
                f"{domain},{pretrain_domain},{_fmt(_median(accs))},"
                + ";".join(_fmt(a) for a in accs)
            )

    # epochs until the sorting task first reaches 50% validation accuracy
    half_lines = ["domain,seed,epochs_to_half"]
    epochs_to_half: dict = {}
    for domain in ["source", *targets]:
        per_seed = []
        for seed in seeds:
            curve = seso_results[(domain, seed)]["val_accuracy"]
            reached = next((i + 1 for i, v in enumerate(curve) if v >= 0.5), None)
            per_seed.append(reached)
            half_lines.append(f"{domain},{seed},{'' if reached is None else reached}")
        epochs_to_half[domain] = per_seed

    _write_metrics_csv(out_dir / "metrics.csv", metric_rows)
    _atomic_write_text(out_dir / "results.csv", "\n".join(csv_lines) + "\n")
    _atomic_write_text(out_dir / "epochs_to_half.csv", "\n".join(half_lines) + "\n")
    txt = ["step-domain      seso-domain     median-accuracy"]
    for (domain, pre), med in table.items():
        txt.append(f"{domain:>14} {pre:>14} {100 * med:>10.1f}%")
    _atomic_write_text(out_dir / "results.txt", "\n".join(txt) + "\n")
    return {"table": table, "epochs_to_half": epochs_to_half, "runs": results}
