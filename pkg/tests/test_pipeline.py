import json
import shutil
from pathlib import Path

import numpy as np
import pytest
import yaml

from idsframe import audit, cli, pipeline, reaggregate
from idsframe import config as cfgmod


def desk_cfg(data_dir: Path, out: Path, **over) -> dict:
    raw = {
        "dataset": {"id": "nsl_kdd", "paths": [str(data_dir / "train.txt")]},
        "samplesets": {"counts": [120, 13]},
        "stage1": {"k": 4},
        "stage2": {"epochs": 2, "batch_size": 32},
        "stage3": {"train_paths": [str(data_dir / "train.txt")], "test_paths": [str(data_dir / "test.txt")],
                   "classifier": {"epochs": 3}},
        "output_dir": str(out),
    }
    for k, v in over.items():
        raw.setdefault(k, {}).update(v) if isinstance(v, dict) else raw.__setitem__(k, v)
    return cfgmod.resolve(raw)


@pytest.fixture(scope="module")
def desk_run(nsl_like_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("runs")
    cfg = desk_cfg(nsl_like_dir, out)
    audit.reset()
    man = pipeline.run_pipeline(cfg)
    return cfg, man, list(audit.violations())


def test_desk_run_structure(desk_run):
    cfg, man, _ = desk_run
    run = Path(man.run_dir)
    assert man.complete
    folds = sorted(p.name for p in run.glob("fold_*"))
    assert folds == ["fold_0", "fold_1", "fold_2"]
    for f in folds:
        for m in pipeline.METHODS:
            assert (run / f / m / "scores.csv").exists()
            assert (run / f / m / "roc.csv").exists()
            assert man.steps[f"{f}/{m}"].status == "done"
        assert (run / f / "proposed" / "selection.json").exists()
    agg = json.loads((run / "report" / "aggregate.json").read_text())
    assert sorted(agg["grand_mean"]) == sorted(pipeline.METHODS)
    assert agg["partial"] is False
    assert len(agg["per_fold"]) == 12
    table = (run / "report" / "auc_table.txt").read_text().splitlines()
    assert table[3].split()[1:] == ["KMeans", "GANomaly", "OCSVM", "Proposed"]
    assert len(table[4].split()) == 5


def test_no_label_reads_in_training(desk_run):
    assert desk_run[2] == []


def test_reaggregate_matches(desk_run):
    ok, diffs = reaggregate.compare(desk_run[1].run_dir)
    assert ok, diffs


def test_rerun_is_cached_and_identical(desk_run, tmp_path):
    cfg, man, _ = desk_run
    before = Path(man.run_dir, "report", "aggregate.json").read_bytes()
    again = pipeline.run_pipeline(cfg)
    assert again.steps["ingest"].status in ("done", "cached")
    assert Path(again.run_dir, "report", "aggregate.json").read_bytes() == before


def test_fresh_run_is_byte_identical(desk_run, nsl_like_dir, tmp_path):
    cfg, man, _ = desk_run
    other = pipeline.run_pipeline(desk_cfg(nsl_like_dir, tmp_path))
    for name in ("aggregate.json", "auc_table.txt", "tpr_fpr_table.txt"):
        assert Path(other.run_dir, "report", name).read_bytes() == Path(man.run_dir, "report", name).read_bytes()


def test_partial_report_after_losing_a_method(desk_run, tmp_path):
    cfg, man, _ = desk_run
    copy = tmp_path / Path(man.run_dir).name
    shutil.copytree(man.run_dir, copy)
    shutil.rmtree(copy / "fold_1" / "ocsvm")
    (copy / "report" / "aggregate.json").unlink()
    assert pipeline.report(copy) == pipeline.EXIT_PARTIAL
    agg = json.loads((copy / "report" / "aggregate.json").read_text())
    assert agg["missing"] == ["fold_1/ocsvm"]
    row = (copy / "report" / "auc_table.txt").read_text().splitlines()[4].split()
    assert row[3] == pipeline.GAP
    assert pipeline.report(man.run_dir) == pipeline.EXIT_OK


def test_resume_after_interrupted_method(desk_run, tmp_path):
    cfg, man, _ = desk_run
    cfg2 = dict(cfg, output_dir=str(tmp_path))
    copy = tmp_path / Path(man.run_dir).name
    shutil.copytree(man.run_dir, copy)
    (copy / "fold_2" / "proposed" / ".done").unlink()
    stamp = (copy / "fold_0" / "proposed" / "scores.csv").stat().st_mtime_ns
    resumed = pipeline.run_pipeline(cfg2)
    assert resumed.complete
    assert (copy / "fold_0" / "proposed" / "scores.csv").stat().st_mtime_ns == stamp
    assert (copy / "report" / "aggregate.json").read_bytes() == Path(man.run_dir, "report", "aggregate.json").read_bytes()


def test_missing_dataset_path_creates_nothing(tmp_path):
    with pytest.raises(cfgmod.ConfigError, match="not found"):
        cfgmod.resolve({"dataset": {"id": "nsl_kdd", "paths": [str(tmp_path / "nope.txt")]},
                        "output_dir": str(tmp_path / "runs")})
    assert not (tmp_path / "runs").exists()


def test_config_validation():
    with pytest.raises(cfgmod.ConfigError, match="unknown"):
        cfgmod.resolve({"dataset": {"paths": ["x"]}, "stage9": {}}, check_paths=False)
    with pytest.raises(cfgmod.ConfigError, match="counts"):
        cfgmod.resolve({"dataset": {"id": "mine", "paths": ["x"]}}, check_paths=False)
    cfg = cfgmod.resolve({"dataset": {"id": "cic_ids2018", "paths": ["x"]}}, check_paths=False)
    assert cfg["samplesets"]["use"] == [0] and cfg["dataset"]["row_cap"] == 300_000
    assert cfgmod.resolve({"dataset": {"id": "nsl_kdd", "paths": ["x"]}}, scale="full",
                          check_paths=False)["samplesets"]["use"] == [0, 1, 2, 3, 4]
    a = cfgmod.resolve({"dataset": {"id": "nsl_kdd", "paths": ["x"]}, "output_dir": "a"}, check_paths=False)
    b = cfgmod.resolve({"dataset": {"id": "nsl_kdd", "paths": ["x"]}, "output_dir": "b"}, check_paths=False)
    assert cfgmod.config_hash(a) == cfgmod.config_hash(b)


def test_stage3_nsl_confusion_4x4(nsl_like_dir, tmp_path):
    man = pipeline.run_stage3(desk_cfg(nsl_like_dir, tmp_path))
    d = json.loads(Path(man.run_dir, "stage3", "confusion.json").read_text())
    assert d["categories"] == ["DoS", "Probe", "R2L", "U2R"]
    assert np.array(d["matrix"]).shape == (4, 4)
    ll = json.loads(Path(man.run_dir, "stage3", "logloss.json").read_text())
    assert sum(ll["test_counts"]) == np.array(d["matrix"]).sum()
    assert len(set(ll["resampled_counts"])) <= 2


def test_stage3_ton_confusion_7x7(ton_like_dir, tmp_path):
    cfg = cfgmod.resolve({
        "dataset": {"id": "ton_iot_win10", "paths": [str(ton_like_dir / "windows10.csv")]},
        "stage3": {"classifier": {"epochs": 3}}, "output_dir": str(tmp_path)})
    assert cfg["stage3"]["split"] == "holdout"
    man = pipeline.run_stage3(cfg)
    d = json.loads(Path(man.run_dir, "stage3", "confusion.json").read_text())
    assert np.array(d["matrix"]).shape == (7, 7)
    assert (Path(man.run_dir, "stage3", "predictions.csv")).exists()


def test_cli_round_trip(nsl_like_dir, tmp_path, capsys):
    conf = {
        "dataset": {"id": "nsl_kdd", "paths": "train.txt"},
        "samplesets": {"counts": [120, 13]},
        "stage1": {"k": 4},
        "stage2": {"epochs": 1},
        "baselines": {"methods": ["kmeans", "ocsvm"]},
        "output_dir": str(tmp_path / "runs"),
    }
    shutil.copy(nsl_like_dir / "train.txt", tmp_path / "train.txt")
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(conf))
    assert cli.main(["samplesets", "--config", str(path)]) == 0
    assert "120 normal + 13 anomalous" in capsys.readouterr().out
    assert cli.main(["run", "--config", str(path)]) == 0
    out = capsys.readouterr().out
    assert "Area under the ROC curve" in out
    assert cli.main(["report", "--config", str(path)]) == 0
    assert cli.main(["reaggregate", "--config", str(path)]) == 0
    table = capsys.readouterr().out
    assert "n/a" in table  # GANomaly column was not run


def test_cli_errors_exit_1(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump({"dataset": {"id": "nsl_kdd", "paths": "missing.txt"}}))
    assert cli.main(["run", "--config", str(path)]) == 1
    assert "not found" in capsys.readouterr().err


def test_cli_synth(tmp_path):
    assert cli.main(["synth", "nsl_kdd", "--out", str(tmp_path), "--normal", "40", "--anomalous", "8"]) == 0
    assert len((tmp_path / "train.txt").read_text().splitlines()) == 48


def test_parallel_workers_match_serial(desk_run, nsl_like_dir, tmp_path):
    cfg, man, _ = desk_run
    par = pipeline.run_pipeline(desk_cfg(nsl_like_dir, tmp_path), workers=2)
    assert par.complete
    assert Path(par.run_dir, "report", "aggregate.json").read_bytes() == \
        Path(man.run_dir, "report", "aggregate.json").read_bytes()


def test_k_sweep_writes_one_run_per_k(nsl_like_dir, tmp_path, capsys):
    conf = {
        "dataset": {"id": "nsl_kdd", "paths": str(nsl_like_dir / "train.txt")},
        "samplesets": {"counts": [120, 13]},
        "stage2": {"epochs": 1},
        "baselines": {"methods": ["kmeans"]},
        "output_dir": str(tmp_path / "runs"),
    }
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(conf))
    assert cli.main(["run", "--config", str(path), "--k-sweep", "2", "3"]) == 0
    out = capsys.readouterr().out
    tables = list((tmp_path / "runs").glob("k_sweep_*.txt"))
    assert len(tables) == 1
    rows = [ln.split() for ln in tables[0].read_text().splitlines()[3:]]
    assert [r[0] for r in rows] == ["2", "3"]
    assert rows[0][1] != rows[1][1]  # distinct run directories
    for r in rows:
        cfg = json.loads((tmp_path / "runs" / r[1] / "config.json").read_text())
        assert cfg["stage1"]["k"] == int(r[0])
        assert len(r) == 4  # k, run, proposed, KMeans-only
    assert tables[0].name in out


def test_desk_scale_shortens_stage2_unless_set(nsl_like_dir, tmp_path):
    base = {"dataset": {"id": "nsl_kdd", "paths": str(nsl_like_dir / "train.txt")}, "output_dir": str(tmp_path)}
    assert cfgmod.resolve(dict(base, scale="desk"))["stage2"]["epochs"] == cfgmod.DESK_STAGE2_EPOCHS
    assert cfgmod.resolve(dict(base, scale="full"))["stage2"]["epochs"] == 50
    assert cfgmod.resolve(dict(base, scale="desk", stage2={"epochs": 7}))["stage2"]["epochs"] == 7
