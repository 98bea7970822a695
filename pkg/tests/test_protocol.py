"""Tests for plans, cycles, the experiment runner and the results ledger."""

import numpy as np
import pytest

from cardioclr import protocol
from cardioclr.config import RunConfig
from cardioclr.downstream import TaskSpec
from cardioclr.errors import ConfigError, DataError, NumericError
from cardioclr.nn import load_checkpoint
from cardioclr.protocol import (
    ExperimentPlan,
    LedgerRow,
    WindowStores,
    downstream_splits,
    experiment_id,
    leave_dataset_out_cycles,
    parse_plan_text,
    read_ledger,
    round_robin,
    run_experiment,
    run_plan,
    select_best,
    write_ledger,
)
from cardioclr.signal_io import LabeledWindow, write_window_store

TEST_CFG = RunConfig(
    pretrain_batch_size=8,
    pretrain_max_epochs=2,
    pretrain_patience=1,
    warmup_epochs=1,
    peak_lr=0.01,
    head_max_epochs=2,
    head_patience=1,
    adam_lr=1e-3,
    channels=(2, 2),
    kernels=(8, 4),
    pool_widths=(50, 40),
    projection_dim=8,
)

_TAG_LABELS = {
    "pascal": ("Normal", "Murmur"),
    "physionet2016": ("normal", "abnormal"),
    "physionet2022": ("absent", "present"),
}


def _store_windows(tag, n_recordings, per_recording, seed):
    rng = np.random.default_rng(seed)
    windows = []
    for r in range(n_recordings):
        if tag in _TAG_LABELS:
            normal_label, abnormal_label = _TAG_LABELS[tag]
            original = normal_label if r % 2 == 0 else abnormal_label
            binary = "normal" if r % 2 == 0 else "abnormal"
        else:
            original = binary = None
        for w in range(per_recording):
            windows.append(
                LabeledWindow(
                    samples=rng.uniform(-0.5, 0.5, 10000).astype(np.float32),
                    record_id=f"{tag}_{r:03d}",
                    dataset_tag=tag if tag in _TAG_LABELS else tag,
                    window_index=w,
                    original_label=original,
                    binary_label=binary,
                )
            )
    return windows


@pytest.fixture(scope="module")
def stores_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("stores")
    for i, tag in enumerate(["ephnogram", "fpcgdb"]):
        write_window_store(root / tag, _store_windows(tag, 8, 4, seed=i))
    for i, tag in enumerate(_TAG_LABELS):
        write_window_store(root / tag, _store_windows(tag, 12, 4, seed=10 + i))
    return root


THREE_TASKS = [
    TaskSpec("pascal", "binary"),
    TaskSpec("physionet2016", "binary"),
    TaskSpec("physionet2022", "binary"),
]


class TestCycles:
    def test_four_cycles(self):
        cycles = leave_dataset_out_cycles()
        assert len(cycles) == 4

    def test_unlabeled_always_included(self):
        for cycle in leave_dataset_out_cycles():
            assert "ephnogram" in cycle and "fpcgdb" in cycle

    def test_omitted_are_exactly_the_labeled(self):
        cycles = leave_dataset_out_cycles()
        full = set(cycles[0])
        omitted = [tuple(full - set(c)) for c in cycles[1:]]
        assert sorted(o[0] for o in omitted) == ["pascal", "physionet2016", "physionet2022"]
        assert all(len(o) == 1 for o in omitted)


class TestRoundRobin:
    def test_three_datasets_three_passes(self):
        assert len(round_robin(THREE_TASKS)) == 3

    def test_single_dataset_single_pass(self):
        assert len(round_robin(THREE_TASKS[:1])) == 1

    def test_duplicate_dataset_rejected(self):
        with pytest.raises(ConfigError):
            round_robin([THREE_TASKS[0], THREE_TASKS[0]])


class TestSplitsAndIds:
    def test_split_depends_only_on_seed_tag_granularity(self, stores_root):
        _, metas = WindowStores(stores_root).load("pascal")
        a = downstream_splits(metas, 7, "pascal", "per_recording")
        b = downstream_splits(metas, 7, "pascal", "per_recording")
        c = downstream_splits(metas, 8, "pascal", "per_recording")
        assert a == b
        assert a != c

    def test_experiment_id_stability_and_separation(self):
        base = experiment_id("abc", ("ephnogram",), "none|rev", "pascal", "binary", 1)
        assert base == experiment_id("abc", ("ephnogram",), "none|rev", "pascal", "binary", 1)
        assert base != experiment_id("abc", ("ephnogram",), "none|rev", "pascal", "binary", 2)
        assert base != experiment_id("zzz", ("ephnogram",), "none|rev", "pascal", "binary", 1)


class TestRunExperiment:
    def test_record_counts_and_ood_targets(self, stores_root, tmp_path):
        rows = run_experiment(
            ("ephnogram", "fpcgdb"), "none|rev", 3, THREE_TASKS,
            WindowStores(stores_root), TEST_CFG, tmp_path,
        )
        assert len(rows) == 9  # 3 downstream x (1 ID + 2 OOD)
        pascal_ood = {
            r.eval_dataset for r in rows
            if r.downstream == "pascal" and r.eval_kind == "ood"
        }
        assert pascal_ood == {"physionet2016", "physionet2022"}
        assert all(r.status == "ok" for r in rows)
        id_rows = [r for r in rows if r.eval_kind == "in_distribution"]
        assert len(id_rows) == 3
        assert all(r.eval_dataset == r.downstream for r in id_rows)
        assert all(r.is_no_ds for r in rows)  # encoder never saw labeled data

    def test_single_downstream_has_no_ood_records(self, stores_root, tmp_path):
        rows = run_experiment(
            ("ephnogram",), "none|rev", 6, THREE_TASKS[:1],
            WindowStores(stores_root), TEST_CFG, tmp_path,
        )
        assert len(rows) == 1
        assert rows[0].eval_kind == "in_distribution"

    def test_ood_eval_shares_no_record_ids_with_downstream_train_val(self, stores_root, tmp_path):
        stores = WindowStores(stores_root)
        rows = run_experiment(
            ("ephnogram",), "none|rev", 7, THREE_TASKS,
            stores, TEST_CFG, tmp_path,
        )
        for row in rows:
            if row.eval_kind != "ood":
                continue
            _, ds_metas = stores.load(row.downstream)
            tr, va, _ = downstream_splits(ds_metas, row.seed, row.downstream,
                                          TEST_CFG.split_granularity)
            train_val_ids = {ds_metas[i].record_id for i in tr} | {
                ds_metas[i].record_id for i in va
            }
            _, ood_metas = stores.load(row.eval_dataset)
            ood_ids = {m.record_id for m in ood_metas}
            assert not train_val_ids & ood_ids

    def test_round_robin_reuses_encoder(self, stores_root, tmp_path):
        rows = run_experiment(
            ("ephnogram",), "none|inv", 4, THREE_TASKS,
            WindowStores(stores_root), TEST_CFG, tmp_path,
        )
        encoder_ids = set()
        for row in rows:
            if row.eval_kind == "in_distribution":
                _, meta = load_checkpoint(tmp_path / row.checkpoint)
                encoder_ids.add(meta["extra"]["encoder_id"])
        assert len(encoder_ids) == 1

    def test_numeric_failure_marks_all_rows(self, stores_root, tmp_path, monkeypatch):
        def explode(*a, **k):
            raise NumericError("forced failure")

        monkeypatch.setattr(protocol, "_pretrain_encoder", explode)
        rows = run_experiment(
            ("ephnogram",), "none|rev", 5, THREE_TASKS,
            WindowStores(stores_root), TEST_CFG, tmp_path,
        )
        assert len(rows) == 9
        assert all(r.status == "failed" for r in rows)
        assert all(r.accuracy is None for r in rows)


class TestRunPlan:
    def test_two_policy_plan_yields_18_records(self, stores_root, tmp_path):
        plan = ExperimentPlan(
            ssl_sets=[("ephnogram", "fpcgdb")],
            policies=["none|rev", "none|inv"],
            tasks=THREE_TASKS,
            seeds=[1],
            baseline_runs=0,
        )
        rows = run_plan(plan, WindowStores(stores_root), TEST_CFG, tmp_path / "out")
        assert len(rows) == 18

        ledger_rows = read_ledger(tmp_path / "out" / "ledger.csv")
        assert len(ledger_rows) == 18
        combos = {(r.policy, r.downstream, r.eval_dataset, r.seed) for r in ledger_rows}
        assert len(combos) == 18  # every combination exactly once

    def test_rerun_is_idempotent(self, stores_root, tmp_path):
        plan = ExperimentPlan(
            ssl_sets=[("ephnogram",)],
            policies=["none|rev"],
            tasks=THREE_TASKS[:2],
            seeds=[2],
            baseline_runs=0,
        )
        out = tmp_path / "out"
        first = run_plan(plan, WindowStores(stores_root), TEST_CFG, out)
        second = run_plan(plan, WindowStores(stores_root), TEST_CFG, out)
        assert len(first) == len(second)
        assert [r.to_csv_fields() for r in first] == [r.to_csv_fields() for r in second]

    def test_parallel_jobs_match_serial(self, stores_root, tmp_path):
        plan = ExperimentPlan(
            ssl_sets=[("ephnogram",), ("fpcgdb",)],
            policies=["none|rev"],
            tasks=THREE_TASKS[:2],
            seeds=[5],
            baseline_runs=0,
        )
        serial = run_plan(plan, WindowStores(stores_root), TEST_CFG, tmp_path / "serial", jobs=1)
        threaded = run_plan(plan, WindowStores(stores_root), TEST_CFG, tmp_path / "jobs2", jobs=2)
        assert [r.to_csv_fields() for r in serial] == [r.to_csv_fields() for r in threaded]
        ledger_a = (tmp_path / "serial" / "ledger.csv").read_bytes()
        ledger_b = (tmp_path / "jobs2" / "ledger.csv").read_bytes()
        assert ledger_a == ledger_b

    def test_plan_parsing(self):
        plan = parse_plan_text(
            """
            # tiny plan
            [ssl_sets]
            ephnogram+fpcgdb
            [policies]
            lp(500,450)|flip(0.5)
            none|rev
            [tasks]
            pascal:binary
            physionet2016:binary
            [seeds]
            7
            8
            [options]
            baseline_runs = 2
            """
        )
        assert plan.ssl_sets == [("ephnogram", "fpcgdb")]
        assert len(plan.policies) == 2
        assert len(plan.tasks) == 2
        assert plan.seeds == [7, 8]
        assert plan.baseline_runs == 2
        assert len(list(plan.entries())) == 4  # 1 ssl_set x 2 policies x 2 seeds

    def test_bad_plan_policy_rejected(self):
        with pytest.raises(Exception):
            parse_plan_text("[ssl_sets]\nephnogram\n[policies]\nnot-a-policy!!\n[tasks]\npascal:binary\n[seeds]\n1\n")


class TestLedgerAndSelect:
    def _row(self, policy, downstream="pascal", kind="in_distribution", micro=0.5, **kw):
        defaults = dict(
            experiment_id="e" + policy.replace("|", "_"),
            ssl_set="ephnogram+fpcgdb",
            policy=policy,
            downstream=downstream,
            task="binary",
            eval_dataset=downstream if kind == "in_distribution" else "physionet2016",
            eval_kind=kind,
            accuracy=micro,
            micro_f1=micro,
            macro_f1=micro,
            seed=1,
            checkpoint="x.ckpt",
            status="ok",
        )
        defaults.update(kw)
        return LedgerRow(**defaults)

    def test_ledger_round_trip_with_commas_in_policy(self, tmp_path):
        rows = [self._row("lp(500,450)|flip(0.5)"), self._row("none|rev", micro=0.7)]
        path = tmp_path / "ledger.csv"
        write_ledger(path, rows)
        header = path.read_text().splitlines()[0]
        assert header == protocol.LEDGER_HEADER
        loaded = read_ledger(path)
        assert [r.to_csv_fields() for r in loaded] == [r.to_csv_fields() for r in rows]

    def test_is_no_ds(self):
        row = self._row("none|rev", ssl_set="ephnogram+fpcgdb+pascal")
        assert not row.is_no_ds
        row2 = self._row("none|rev", ssl_set="ephnogram+fpcgdb")
        assert row2.is_no_ds

    def test_select_best_single(self):
        row = self._row("none|rev")
        assert select_best([row]) == [row]

    def test_select_best_prefers_higher_metric(self):
        rows = [self._row("none|rev", micro=0.8), self._row("none|inv", micro=0.7)]
        assert select_best(rows)[0].policy == "none|rev"

    def test_select_best_tie_breaks_lexicographically(self):
        rows = [self._row("none|rev", micro=0.8), self._row("none|inv", micro=0.8)]
        assert select_best(rows)[0].policy == "none|inv"

    def test_select_best_ignores_ood_and_failures(self):
        rows = [
            self._row("none|rev", micro=0.6),
            self._row("none|inv", kind="ood", micro=0.99),
            self._row("none|flip(0.5)", micro=0.9, status="failed"),
        ]
        assert select_best(rows)[0].policy == "none|rev"

    def test_select_best_empty_raises(self):
        with pytest.raises(DataError):
            select_best([])
