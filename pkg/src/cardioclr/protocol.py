"""Experiment orchestration: pretrain once per (SSL set, policy, seed), then
round-robin the frozen encoder over every downstream dataset, evaluating each
trained head in-distribution and on the other labeled datasets (OOD). Every
result lands in an append-only CSV ledger keyed by a stable experiment id, so
interrupted sweeps resume without repeating work.
"""

from __future__ import annotations

import csv
import hashlib
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .augment import parse_policy
from .config import (
    RunConfig,
    config_hash,
    downstream_config,
    encoder_config,
    pretrain_config,
)
from .contrastive import freeze_encoder, pretrain
from .downstream import TaskSpec, evaluate, train_baseline, train_head
from .errors import ConfigError, DataError, FormatError, NumericError
from .nn import build_ssl_graph, load_checkpoint, save_checkpoint
from .signal_io import LABELED_TAGS, UNLABELED_TAGS, read_window_store, split_indices

LEDGER_HEADER = (
    "experiment_id,ssl_set,policy,downstream,task,eval_dataset,eval_kind,"
    "accuracy,micro_f1,macro_f1,seed,checkpoint,status"
)
LEDGER_COLUMNS = LEDGER_HEADER.split(",")

IN_DISTRIBUTION = "in_distribution"
OOD = "ood"
BASELINE_POLICY = "baseline"


@dataclass
class LedgerRow:
    experiment_id: str
    ssl_set: str
    policy: str
    downstream: str
    task: str
    eval_dataset: str
    eval_kind: str
    accuracy: Optional[float]
    micro_f1: Optional[float]
    macro_f1: Optional[float]
    seed: int
    checkpoint: str
    status: str = "ok"

    @property
    def is_no_ds(self) -> bool:
        """True when the encoder never saw the downstream dataset."""
        return self.downstream not in self.ssl_set.split("+")

    def to_csv_fields(self) -> list[str]:
        def num(v):
            return "" if v is None else f"{v:.6f}"

        return [
            self.experiment_id, self.ssl_set, self.policy, self.downstream,
            self.task, self.eval_dataset, self.eval_kind,
            num(self.accuracy), num(self.micro_f1), num(self.macro_f1),
            str(self.seed), self.checkpoint, self.status,
        ]

    @classmethod
    def from_csv_fields(cls, fields: Sequence[str]) -> "LedgerRow":
        if len(fields) != len(LEDGER_COLUMNS):
            raise FormatError(f"ledger row has {len(fields)} fields, expected {len(LEDGER_COLUMNS)}")

        def num(text):
            return None if text == "" else float(text)

        return cls(
            experiment_id=fields[0], ssl_set=fields[1], policy=fields[2],
            downstream=fields[3], task=fields[4], eval_dataset=fields[5],
            eval_kind=fields[6], accuracy=num(fields[7]), micro_f1=num(fields[8]),
            macro_f1=num(fields[9]), seed=int(fields[10]), checkpoint=fields[11],
            status=fields[12],
        )


def write_ledger(path, rows: Sequence[LedgerRow]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LEDGER_COLUMNS)
    for row in rows:
        writer.writerow(row.to_csv_fields())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue(), encoding="utf-8")


def read_ledger(path) -> list[LedgerRow]:
    path = Path(path)
    if not path.exists():
        return []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != LEDGER_COLUMNS:
            raise FormatError(f"{path}: unexpected ledger header")
        return [LedgerRow.from_csv_fields(row) for row in reader]


# ---------------------------------------------------------------------------
# Plans
# ---------------------------------------------------------------------------


@dataclass
class ExperimentPlan:
    ssl_sets: list[tuple[str, ...]]
    policies: list[str]
    tasks: list[TaskSpec]
    seeds: list[int]
    baseline_runs: int = 5

    def __post_init__(self):
        if not self.policies:
            raise ConfigError("plan needs at least one policy")
        if not self.tasks:
            raise ConfigError("plan needs at least one downstream task")
        if not self.seeds:
            raise ConfigError("plan needs at least one seed")
        for policy in self.policies:
            parse_policy(policy)

    def entries(self):
        for ssl_set in self.ssl_sets:
            for policy in self.policies:
                for seed in self.seeds:
                    yield ssl_set, policy, seed


def parse_plan_text(text: str) -> ExperimentPlan:
    sections: dict[str, list[str]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if current not in ("ssl_sets", "policies", "tasks", "seeds", "options"):
                raise ConfigError(f"plan line {lineno}: unknown section [{current}]")
            sections.setdefault(current, [])
            continue
        if current is None:
            raise ConfigError(f"plan line {lineno}: content outside any [section]")
        sections[current].append(line)

    for required in ("ssl_sets", "policies", "tasks", "seeds"):
        if not sections.get(required):
            raise ConfigError(f"plan is missing a non-empty [{required}] section")

    ssl_sets = [tuple(tok.strip() for tok in line.split("+")) for line in sections["ssl_sets"]]
    tasks = []
    for line in sections["tasks"]:
        tag, _, task_type = line.partition(":")
        tasks.append(TaskSpec(tag.strip(), task_type.strip() or "binary"))
    seeds = [int(line) for line in sections["seeds"]]
    baseline_runs = 5
    for line in sections.get("options", []):
        key, _, value = line.partition("=")
        key = key.strip()
        if key == "baseline_runs":
            baseline_runs = int(value.strip())
        else:
            raise ConfigError(f"unknown plan option {key!r}")
    return ExperimentPlan(
        ssl_sets=ssl_sets,
        policies=sections["policies"],
        tasks=tasks,
        seeds=seeds,
        baseline_runs=baseline_runs,
    )


def parse_plan(path) -> ExperimentPlan:
    return parse_plan_text(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Ids, cycles, round-robin
# ---------------------------------------------------------------------------


def stable_hash(*parts) -> str:
    blob = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def experiment_id(cfg_hash: str, ssl_set: Sequence[str], policy: str, downstream: str,
                  task_type: str, seed: int) -> str:
    """Stable id of one experiment; embeds the resolved-config hash so records
    from different configurations never collide."""
    return stable_hash(cfg_hash, "+".join(ssl_set), policy, downstream, task_type, seed)


def derived_seed(*parts) -> int:
    return int(stable_hash(*parts), 16) & 0x7FFFFFFF


def leave_dataset_out_cycles(
    labeled: Sequence[str] = LABELED_TAGS,
    unlabeled: Sequence[str] = UNLABELED_TAGS,
) -> list[tuple[str, ...]]:
    """The full-set cycle plus one cycle per left-out labeled dataset. The
    unlabeled pretraining corpora are always included."""
    everything = tuple(unlabeled) + tuple(labeled)
    cycles = [everything]
    for omit in labeled:
        cycles.append(tuple(tag for tag in everything if tag != omit))
    return cycles


def round_robin(tasks: Sequence[TaskSpec]) -> list[TaskSpec]:
    """One downstream pass per labeled dataset, reusing the same encoder."""
    seen = set()
    ordered = []
    for task in tasks:
        if task.dataset_tag in seen:
            raise ConfigError(f"duplicate downstream dataset {task.dataset_tag!r}")
        seen.add(task.dataset_tag)
        ordered.append(task)
    return ordered


# ---------------------------------------------------------------------------
# Stores and splits
# ---------------------------------------------------------------------------


class WindowStores:
    """Lazy cache over the per-dataset window stores under one root."""

    def __init__(self, root):
        self.root = Path(root)
        self._cache: dict[str, tuple[np.ndarray, list]] = {}

    def load(self, tag: str):
        if tag not in self._cache:
            store = self.root / tag
            if not (store / "windows.json").exists():
                raise DataError(f"no window store for dataset {tag!r} under {self.root}")
            self._cache[tag] = read_window_store(store)
        return self._cache[tag]


def downstream_splits(metas, plan_seed: int, tag: str, granularity: str):
    """70/20/10 split indices; depends only on (seed, tag, granularity) so the
    test split is identical for every policy and SSL set under one seed."""
    seed = derived_seed("split", plan_seed, tag, granularity)
    return split_indices(metas, (0.7, 0.2, 0.1), seed, granularity)


# ---------------------------------------------------------------------------
# Running experiments
# ---------------------------------------------------------------------------


def _pretrain_encoder(ssl_set, policy_text, seed, stores, cfg, out_dir):
    """Pretrain (or reload) the encoder for one (ssl_set, policy, seed)."""
    cfg_hash = config_hash(cfg)
    enc_id = stable_hash("encoder", cfg_hash, "+".join(ssl_set), policy_text, seed)
    enc_path = Path(out_dir) / "encoders" / f"{enc_id}.ckpt"
    if enc_path.exists():
        graph, _ = load_checkpoint(enc_path)
        return graph, str(enc_path), enc_id
    pools = [stores.load(tag)[0] for tag in ssl_set]
    windows = np.concatenate(pools, axis=0)
    graph = build_ssl_graph(encoder_config(cfg), seed=derived_seed("init", enc_id))
    policy = parse_policy(policy_text)
    graph, history = pretrain(graph, windows, policy, pretrain_config(cfg, seed=seed))
    graph = freeze_encoder(graph)
    save_checkpoint(
        enc_path,
        graph,
        extra={
            "config_hash": cfg_hash,
            "ssl_set": "+".join(ssl_set),
            "policy": policy_text,
            "seed": seed,
            "epochs_trained": len(history),
            "best_val_loss": min(h.val_loss for h in history),
            "encoder_id": enc_id,
        },
    )
    return graph, str(enc_path), enc_id


def _planned_evals(tasks: Sequence[TaskSpec]):
    """(downstream task, eval dataset, eval kind) triples for one experiment.

    OOD evaluation reuses the trained head on other labeled datasets, which is
    only label-compatible for 1-logit (binary) heads; wider `all` heads are
    evaluated in-distribution only.
    """
    ordered = round_robin(tasks)
    plan = []
    for task in ordered:
        plan.append((task, task.dataset_tag, IN_DISTRIBUTION))
        if task.n_out == 1:
            for other in ordered:
                if other.dataset_tag != task.dataset_tag:
                    plan.append((task, other.dataset_tag, OOD))
    return plan


def run_experiment(
    ssl_set: tuple[str, ...],
    policy_text: str,
    seed: int,
    tasks: Sequence[TaskSpec],
    stores: WindowStores,
    cfg: RunConfig,
    out_dir,
) -> list[LedgerRow]:
    """Execute one plan entry end to end and return its ledger rows.

    A numeric failure in any sub-step marks every remaining evaluation of the
    entry as failed rather than silently dropping it, so sweep statistics
    keep the full denominator.
    """
    out_dir = Path(out_dir)
    cfg_hash = config_hash(cfg)
    evals = _planned_evals(tasks)
    rows: list[LedgerRow] = []

    def fail_remaining(done_count):
        for task, eval_tag, kind in evals[done_count:]:
            rows.append(
                LedgerRow(
                    experiment_id=experiment_id(cfg_hash, ssl_set, policy_text,
                                                task.dataset_tag, task.task_type, seed),
                    ssl_set="+".join(ssl_set),
                    policy=policy_text,
                    downstream=task.dataset_tag,
                    task=task.task_type,
                    eval_dataset=eval_tag,
                    eval_kind=kind,
                    accuracy=None, micro_f1=None, macro_f1=None,
                    seed=seed, checkpoint="", status="failed",
                )
            )

    try:
        graph, _, enc_id = _pretrain_encoder(
            ssl_set, policy_text, seed, stores, cfg, out_dir
        )
    except NumericError:
        fail_remaining(0)
        return rows

    done = 0
    current_task = None
    try:
        for task, eval_tag, kind in evals:
            if kind == IN_DISTRIBUTION:
                current_task = task
                x, metas = stores.load(task.dataset_tag)
                tr, va, te = downstream_splits(metas, seed, task.dataset_tag, cfg.split_granularity)
                y = task.encode(metas)
                head_seed = derived_seed("head", enc_id, str(task), seed)
                ds_cfg = downstream_config(cfg, seed=head_seed)
                graph, _ = train_head(
                    graph, task, (x[tr], y[tr]), (x[va], y[va]), ds_cfg
                )
                exp_id = experiment_id(cfg_hash, ssl_set, policy_text,
                                       task.dataset_tag, task.task_type, seed)
                # ledger and metadata keep paths relative to the sweep root,
                # so artifacts stay byte-identical wherever the sweep runs
                model_rel = f"models/{exp_id}.ckpt"
                save_checkpoint(
                    out_dir / model_rel, graph,
                    extra={
                        "config_hash": cfg_hash,
                        "encoder_checkpoint": f"encoders/{enc_id}.ckpt",
                        "encoder_id": enc_id,
                        "policy": policy_text,
                        "task": str(task),
                        "seed": seed,
                    },
                )
                metrics = evaluate(graph, x[te], [metas[i] for i in te], task)
            else:
                ood_task = TaskSpec(eval_tag, "binary")
                x, metas = stores.load(eval_tag)
                _, _, te = downstream_splits(metas, seed, eval_tag, cfg.split_granularity)
                metrics = evaluate(graph, x[te], [metas[i] for i in te], ood_task)
                exp_id = experiment_id(cfg_hash, ssl_set, policy_text,
                                       current_task.dataset_tag, current_task.task_type, seed)
                model_rel = f"models/{exp_id}.ckpt"
            rows.append(
                LedgerRow(
                    experiment_id=exp_id,
                    ssl_set="+".join(ssl_set),
                    policy=policy_text,
                    downstream=current_task.dataset_tag,
                    task=current_task.task_type,
                    eval_dataset=eval_tag,
                    eval_kind=kind,
                    accuracy=metrics.accuracy,
                    micro_f1=metrics.micro_f1,
                    macro_f1=metrics.macro_f1,
                    seed=seed,
                    checkpoint=model_rel,
                    status="ok",
                )
            )
            done += 1
    except NumericError:
        fail_remaining(done)
    return rows


def run_baseline(
    task: TaskSpec,
    seed: int,
    tasks: Sequence[TaskSpec],
    stores: WindowStores,
    cfg: RunConfig,
    out_dir,
) -> list[LedgerRow]:
    """One fully-supervised baseline replicate, evaluated ID and OOD."""
    out_dir = Path(out_dir)
    cfg_hash = config_hash(cfg)
    x, metas = stores.load(task.dataset_tag)
    tr, va, te = downstream_splits(metas, seed, task.dataset_tag, cfg.split_granularity)
    y = task.encode(metas)
    graph = build_ssl_graph(encoder_config(cfg), seed=derived_seed("baseline-init", cfg_hash, str(task), seed))
    graph.drop_head()
    ds_cfg = downstream_config(cfg, seed=derived_seed("baseline-head", cfg_hash, str(task), seed))
    graph, _ = train_baseline(graph, task, (x[tr], y[tr]), (x[va], y[va]), ds_cfg)

    exp_id = experiment_id(cfg_hash, ("none",), BASELINE_POLICY, task.dataset_tag, task.task_type, seed)
    model_rel = f"models/{exp_id}.ckpt"
    save_checkpoint(out_dir / model_rel, graph, extra={
        "config_hash": cfg_hash, "policy": BASELINE_POLICY, "task": str(task), "seed": seed,
    })

    rows = []
    evals = [(task.dataset_tag, IN_DISTRIBUTION)]
    if task.n_out == 1:
        evals += [(t.dataset_tag, OOD) for t in tasks if t.dataset_tag != task.dataset_tag]
    for eval_tag, kind in evals:
        ex, emetas = stores.load(eval_tag)
        _, _, ete = downstream_splits(emetas, seed, eval_tag, cfg.split_granularity)
        eval_task = task if kind == IN_DISTRIBUTION else TaskSpec(eval_tag, "binary")
        metrics = evaluate(graph, ex[ete], [emetas[i] for i in ete], eval_task)
        rows.append(
            LedgerRow(
                experiment_id=exp_id, ssl_set="none", policy=BASELINE_POLICY,
                downstream=task.dataset_tag, task=task.task_type,
                eval_dataset=eval_tag, eval_kind=kind,
                accuracy=metrics.accuracy, micro_f1=metrics.micro_f1,
                macro_f1=metrics.macro_f1, seed=seed,
                checkpoint=model_rel, status="ok",
            )
        )
    return rows


def run_plan(
    plan: ExperimentPlan,
    stores: WindowStores,
    cfg: RunConfig,
    out_dir,
    jobs: int = 1,
) -> list[LedgerRow]:
    """Run every plan entry not already in the ledger; returns all rows.

    Entries are independent jobs; with jobs > 1 they run on a thread pool and
    their rows are merged in plan order, keeping the ledger deterministic.
    """
    out_dir = Path(out_dir)
    ledger_path = out_dir / "ledger.csv"
    rows = read_ledger(ledger_path)
    existing = {row.experiment_id for row in rows}

    cfg_hash = config_hash(cfg)
    pending = []
    for ssl_set, policy, seed in plan.entries():
        ids = {
            experiment_id(cfg_hash, ssl_set, policy, t.dataset_tag, t.task_type, seed)
            for t in plan.tasks
        }
        if not ids <= existing:
            pending.append((ssl_set, policy, seed))

    def job(entry):
        ssl_set, policy, seed = entry
        return run_experiment(ssl_set, policy, seed, plan.tasks, stores, cfg, out_dir)

    if jobs > 1 and len(pending) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(job, pending))
    else:
        results = [job(entry) for entry in pending]
    for new_rows in results:
        rows.extend(new_rows)

    for task in plan.tasks:
        for rep in range(plan.baseline_runs):
            rep_seed = derived_seed("baseline-rep", plan.seeds[0], str(task), rep)
            exp_id = experiment_id(cfg_hash, ("none",), BASELINE_POLICY,
                                   task.dataset_tag, task.task_type, rep_seed)
            if exp_id in existing:
                continue
            rows.extend(run_baseline(task, rep_seed, plan.tasks, stores, cfg, out_dir))

    write_ledger(ledger_path, rows)
    return rows


def select_best(rows: Sequence[LedgerRow], metric: str = "micro_f1") -> list[LedgerRow]:
    """Per (ssl_set, downstream, task) group, the policy whose in-distribution
    metric is highest; ties break toward the lexicographically smaller policy."""
    if not rows:
        raise DataError("no records to select from")
    groups: dict[tuple, LedgerRow] = {}
    for row in rows:
        if row.eval_kind != IN_DISTRIBUTION or row.status != "ok":
            continue
        key = (row.ssl_set, row.downstream, row.task)
        value = getattr(row, metric)
        incumbent = groups.get(key)
        if incumbent is None:
            groups[key] = row
            continue
        best_value = getattr(incumbent, metric)
        if value > best_value or (value == best_value and row.policy < incumbent.policy):
            groups[key] = row
    return [groups[key] for key in sorted(groups)]
