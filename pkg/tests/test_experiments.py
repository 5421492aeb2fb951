import csv

import numpy as np
import pytest
import yaml
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sdalr.errors import ConfigError, DataError
from sdalr.experiments import (
    ABLATION_LADDER,
    ExperimentSpec,
    ReportTable,
    apply_overrides,
    export_embeddings,
    inspect_pseudo_labels,
    load_domain,
    parse_assignments,
    report,
    run_ablation,
    run_matrix,
    run_sweep,
)
from sdalr.network import EncoderConfig, SDALRNet
from sdalr.signals import DomainShift, SynthConfig, synth_benchmark
from sdalr.training import AdaptationConfig, RunRecord

pytestmark = pytest.mark.filterwarnings("ignore:classes .* have no reliable pseudo-labels")

TINY = dict(stem_channels=4, stage_channels=[4, 8, 8, 8], feature_dim=8)


def tiny_spec(tmp_path, **kw):
    base = dict(
        dataset="synth",
        tasks=["S->T", "S->U"],
        synth=dict(samples_per_class=50, window_len=64),
        synth_domains={"S": {}, "T": {"speed_factor": 1.35, "noise_factor": 3.0}, "U": {"noise_factor": 2.0}},
        adaptation=dict(source_epochs=1, target_epochs=1, batch_size=50),
        encoder=TINY,
        output_dir=str(tmp_path / "out"),
    )
    base.update(kw)
    return ExperimentSpec.from_dict(base)


# --- spec ------------------------------------------------------------------------


def test_spec_rejects_unknown_keys_and_bad_domains(tmp_path):
    with pytest.raises(ConfigError, match="unknown"):
        ExperimentSpec.from_dict({"datasett": "pu"})
    with pytest.raises(ConfigError, match="references domain"):
        tiny_spec(tmp_path, tasks=["S->X"])
    with pytest.raises(ConfigError):
        ExperimentSpec.from_dict({"dataset": "pu", "tasks": ["B1->B2"], "data_root": "x"})
    with pytest.raises(ConfigError):
        ExperimentSpec.from_dict({"dataset": "cwru"})
    with pytest.raises(ConfigError, match="unknown adaptation"):
        ExperimentSpec.from_dict({"adaptation": {"gamma": 1}})


def test_sweep_axis_rules(tmp_path):
    with pytest.raises(ConfigError):
        tiny_spec(tmp_path, sweep="alpha")
    with pytest.raises(ConfigError, match="both swept and fixed"):
        tiny_spec(tmp_path, sweep="beta", adaptation=dict(beta=0.3))
    assert tiny_spec(tmp_path, sweep="beta").sweep_points() == (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
    assert tiny_spec(tmp_path, sweep="threshold").sweep_points() == (0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95)


def test_default_real_data_tasks_follow_table_order():
    spec = ExperimentSpec.from_dict({"dataset": "pu", "data_root": "x"})
    assert [str(t) for t in spec.task_list()] == ["A1→A2", "A1→A3", "A2→A1", "A2→A3", "A3→A1", "A3→A2"]
    jnu = ExperimentSpec.from_dict({"dataset": "jnu", "data_root": "x"})
    assert str(jnu.task_list()[0]) == "B1→B2" and len(jnu.task_list()) == 6


def test_resolved_spec_embeds_defaults_and_round_trips(tmp_path):
    spec = tiny_spec(tmp_path)
    r = spec.resolved()
    assert r["adaptation"]["beta"] == 0.6 and r["adaptation"]["source_epochs"] == 1
    assert r["encoder"]["feature_dim"] == 8
    back = ExperimentSpec.from_dict(yaml.safe_load(yaml.safe_dump(r)))
    assert back.digest() == spec.digest()
    assert tiny_spec(tmp_path, seeds=[1]).digest() != spec.digest()


def test_example_configs_parse():
    from pathlib import Path

    root = Path(__file__).resolve().parents[1] / "configs"
    names = sorted(p.name for p in root.glob("*.yaml"))
    assert {"synth.yaml", "pu.yaml", "jnu.yaml"} <= set(names)
    for name in names:
        ExperimentSpec.load(root / name)


def test_overrides():
    assert parse_assignments(["adaptation.beta=0.3", "seeds=[0, 1]", "dataset=pu"]) == {
        "adaptation.beta": 0.3, "seeds": [0, 1], "dataset": "pu"}
    with pytest.raises(ConfigError):
        parse_assignments(["nonsense"])
    raw = {"adaptation": {"alpha": 0.2}}
    out = apply_overrides(raw, {"adaptation.beta": 0.3, "encoder.feature_dim": 8})
    assert out == {"adaptation": {"alpha": 0.2, "beta": 0.3}, "encoder": {"feature_dim": 8}}
    assert raw == {"adaptation": {"alpha": 0.2}}


def test_load_reports_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        ExperimentSpec.load(tmp_path / "nope.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("dataset: [unclosed")
    with pytest.raises(ConfigError):
        ExperimentSpec.load(bad)


def test_synth_domains_match_benchmark_draws(tmp_path):
    spec = ExperimentSpec.from_dict({"synth": {"samples_per_class": 50}})
    src, tgt = synth_benchmark(SynthConfig(samples_per_class=50), DomainShift(1.35, 3.0), seed=2)
    np.testing.assert_array_equal(load_domain(spec, "S", 2).waveforms, src.waveforms)
    np.testing.assert_array_equal(load_domain(spec, "T", 2).waveforms, tgt.waveforms)


# --- report table -------------------------------------------------------------------


@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 6)), elements=st.floats(0, 100)))
def test_table_average_is_mean_of_task_cells(cells):
    t = ReportTable("", [f"r{i}" for i in range(cells.shape[0])], [f"c{j}" for j in range(cells.shape[1])], cells)
    for i in range(cells.shape[0]):
        assert abs(t.average[i] - sum(cells[i]) / cells.shape[1]) <= 1e-9


def test_table_formats(tmp_path):
    t = ReportTable("demo", ["a", "b"], ["S→T", "S→U"], np.array([[90.0, 80.0], [100.0, 95.5]]))
    t.to_csv(tmp_path / "t.csv")
    back = ReportTable.from_csv(tmp_path / "t.csv")
    np.testing.assert_array_equal(back.cells, t.cells)
    assert back.rows == ["a", "b"] and back.columns == ["S→T", "S→U"]
    md = t.to_markdown()
    assert "| Method | S→T | S→U | Average |" in md and "97.75" in md
    assert t.to_text().splitlines()[1].startswith("Method")


# --- drivers ----------------------------------------------------------------------


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_matrix_end_to_end(tmp_path):
    spec = tiny_spec(tmp_path)
    table = run_matrix(spec)
    out = tmp_path / "out"
    assert table.rows == ["source-only", "sdalr"] and table.columns == ["S→T", "S→U"]
    assert np.all((table.cells >= 0) & (table.cells <= 100))
    for name in ("experiment.yaml", "matrix.csv", "matrix.md", "matrix.txt"):
        assert (out / name).is_file()
    run = out / "runs" / "sdalr" / "S_to_T" / "seed0"
    for name in ("config.yaml", "run_record.json", "metrics.jsonl", "confusion.csv", "target.pt"):
        assert (run / name).is_file()
    assert len(list((out / "sources").glob("S-seed0-*/source.pt"))) == 1  # shared by both tasks
    rebuilt = report(out)
    np.testing.assert_array_equal(rebuilt.cells, table.cells)
    rows = _read_csv(out / "matrix.csv")
    for row in rows:
        assert abs(float(row["average"]) - (float(row["S→T"]) + float(row["S→U"])) / 2) <= 1e-9


def test_existing_output_needs_overwrite(tmp_path):
    spec = tiny_spec(tmp_path, tasks=["S->T"])
    run_matrix(spec)
    with pytest.raises(ConfigError, match="overwrite"):
        run_matrix(spec)
    run_matrix(spec.replace(overwrite=True))


def test_strict_rerun_gives_identical_table(tmp_path):
    adaptation = dict(source_epochs=1, target_epochs=1, batch_size=50, strict_determinism=True)
    a = run_matrix(tiny_spec(tmp_path / "a", tasks=["S->T"], adaptation=adaptation))
    b = run_matrix(tiny_spec(tmp_path / "b", tasks=["S->T"], adaptation=adaptation))
    np.testing.assert_array_equal(a.cells, b.cells)


def test_ablation_ladder(tmp_path):
    table = run_ablation(tiny_spec(tmp_path, tasks=["S->T"]))
    assert table.rows == [name for name, _ in ABLATION_LADDER] and len(table.rows) == 4
    first = yaml.safe_load((tmp_path / "out/runs/lsc+im/S_to_T/seed0/config.yaml").read_text())
    flags = first["adaptation"]
    assert (flags["use_car"], flags["use_voting"], flags["use_uem"]) == (False, False, False)
    assert flags["use_lsc"] and flags["use_im"]
    assert first["config_hash"] == AdaptationConfig.from_dict(flags).digest()
    last = yaml.safe_load((tmp_path / "out/runs/+voting+uem/S_to_T/seed0/config.yaml").read_text())
    assert last["config_hash"] != first["config_hash"]


def test_sweep_csv_rows_are_points_times_tasks(tmp_path):
    spec = tiny_spec(tmp_path, sweep="threshold", sweep_values=[0.5, 0.7], seeds=[0, 1])
    table = run_sweep(spec)
    assert table.rows == ["threshold=0.5", "threshold=0.7"]
    rows = _read_csv(tmp_path / "out" / "sweep.csv")
    assert len(rows) == 2 * 2
    assert {r["n_seeds"] for r in rows} == {"2"}
    assert "±" in table.to_markdown()


def test_eval_holdout_scores_on_unseen_split(tmp_path):
    run_matrix(tiny_spec(tmp_path, tasks=["S->T"], eval_holdout=0.25))
    rec = RunRecord.load(tmp_path / "out/runs/sdalr/S_to_T/seed0/run_record.json")
    held_out = 4 * round(0.25 * 50)  # stratified per class, half-to-even rounding
    assert np.asarray(rec.final["confusion"]).sum() == held_out == 48
    assert rec.epochs[0]["balanced_size"] >= 200 - held_out


def test_missing_dataset_root_fails_before_training(tmp_path):
    spec = ExperimentSpec.from_dict({"dataset": "pu", "data_root": str(tmp_path / "nowhere"),
                                     "output_dir": str(tmp_path / "out")})
    with pytest.raises(DataError, match="does not exist"):
        run_matrix(spec)
    assert not (tmp_path / "out").exists()


def test_report_needs_experiment_dir(tmp_path):
    with pytest.raises(DataError):
        report(tmp_path)


# --- exports ------------------------------------------------------------------------


@pytest.fixture(scope="module")
def target_data():
    return synth_benchmark(SynthConfig(samples_per_class=50, window_len=64), seed=0)[1]


def test_export_embeddings(tmp_path, target_data):
    model = SDALRNet(4, 64).eval()
    labels = np.arange(len(target_data)) % 4
    path = export_embeddings(model, target_data, tmp_path / "emb.csv", pseudo_labels=labels)
    rows = list(csv.reader(open(path)))
    assert len(rows) == len(target_data) + 1
    assert rows[0][:3] == ["id", "true_label", "pseudo_label"]
    assert len(rows[0]) - 3 == 256
    again = export_embeddings(model, target_data, tmp_path / "emb2.csv", pseudo_labels=labels)
    assert path.read_text() == again.read_text()


def test_export_embeddings_plot_and_unlabeled(tmp_path, target_data):
    pytest.importorskip("matplotlib")
    model = SDALRNet(4, 64, EncoderConfig(**TINY)).eval()
    path = export_embeddings(model, target_data.without_labels(), tmp_path / "e.csv", plot=tmp_path / "e.png")
    first = next(iter(_read_csv(path)))
    assert first["true_label"] == "" and first["pseudo_label"] == ""
    assert (tmp_path / "e.png").stat().st_size > 0


def test_export_embeddings_reports_path_on_io_error(tmp_path, target_data):
    blocker = tmp_path / "file"
    blocker.write_text("")
    model = SDALRNet(4, 64, EncoderConfig(**TINY)).eval()
    with pytest.raises(DataError, match="file/emb.csv"):
        export_embeddings(model, target_data, blocker / "emb.csv")


def test_inspect_pseudo_labels(tmp_path, target_data):
    model = SDALRNet(4, 64, EncoderConfig(**TINY)).eval()
    path = inspect_pseudo_labels(model, target_data, AdaptationConfig(), tmp_path / "pl.csv")
    rows = _read_csv(path)
    assert len(rows) == len(target_data)
    assert set(rows[0]) >= {"label", "similarity", "ballot_original", "ballot_cyclic_shift"}
    for r in rows:
        if int(r["label"]) != -1:
            ballots = [int(r[f"ballot_{k}"]) for k in ("original", "flip", "random_zero", "cyclic_shift")]
            assert ballots.count(int(r["label"])) > 2
