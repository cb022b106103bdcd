import json

import pandas as pd
import pytest
import yaml

from run import main
from src.exceptions import DimensionMismatchError, IhvpError
from src.models.experiment import load_experiment_config
from src.services.experiment_service import ExperimentService
from src.services.synthetic import synth_blobs
from src.services.data_io import save_dataset

SMALL = {
    "seed": 0,
    "data": {"generator": "blobs", "n_train": 40, "n_test": 20, "dim": 3, "separation": 1.0},
    "model": {"l2_damp": 0.01, "damp_in_loss": True},
    "attack": {
        "c_grid": [0.5], "k_grid": [3], "steps": 3, "num_inits": 1, "learning_rates": [0.1],
        "num_targets": 2, "target_sizes": [2], "scale_lambdas": [0.5, 4.0],
    },
}

FAIRNESS = {
    "seed": 0,
    "data": {"generator": "biased_groups", "n_train": 80, "n_test": 40, "dim": 3},
    "fairness": {"lambda_grid": [2.0], "l2_reg": 0.01},
}


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    """在临时目录中运行命令"""
    monkeypatch.chdir(tmp_path)
    return tmp_path


def write_config(path, payload):
    path.write_text(yaml.safe_dump(payload, allow_unicode=True), encoding="utf-8")
    return str(path)


def test_unknown_key_exit_code(workdir):
    """测试未知配置项返回退出码 2"""
    path = write_config(workdir / "bad.yaml", {**SMALL, "attack": {"xxx": 1}})
    assert main(["train", "--config", path]) == 2


def test_missing_data_file_exit_code(workdir):
    """测试数据文件不存在返回退出码 3"""
    path = write_config(workdir / "files.yaml", {"data": {"train_path": "nope.csv", "test_path": "nope.csv"}})
    assert main(["train", "--config", path]) == 3


def test_train_writes_model_and_report(workdir):
    """测试训练命令写出模型、报告与耗时文件"""
    path = write_config(workdir / "exp.yaml", SMALL)
    assert main(["train", "--config", path, "--out", "out"]) == 0
    assert (workdir / "out" / "model.json").exists()
    report = json.loads((workdir / "out" / "train.json").read_text(encoding="utf-8"))
    assert report["command"] == "train"
    assert report["rows"][0]["converged"] is True
    assert "out_dir" not in report["config"]
    assert (workdir / "out" / "train.json.timings.json").exists()


def test_train_from_csv_files(workdir):
    """测试从 CSV 文件读取数据"""
    data = synth_blobs(60, 3, seed=5)
    save_dataset(data.subset(range(40)), workdir / "train.csv")
    save_dataset(data.subset(range(40, 60)), workdir / "test.csv")
    path = write_config(workdir / "files.yaml", {"data": {"train_path": "train.csv", "test_path": "test.csv"}})
    assert main(["train", "--config", path, "--out", "out"]) == 0


def test_influence_csv(workdir):
    """测试影响分数 CSV 的列与排名"""
    path = write_config(workdir / "exp.yaml", SMALL)
    assert main(["influence", "--config", path, "--out", "out"]) == 0
    frame = pd.read_csv(workdir / "out" / "influence.csv")
    assert list(frame.columns) == ["index", "score", "rank"]
    assert len(frame) == 40
    assert sorted(frame["rank"]) == list(range(1, 41))
    top = frame.loc[frame["rank"] == 1, "score"].iloc[0]
    assert top == frame["score"].max()


def test_attack_scale_deterministic(workdir):
    """测试相同配置与种子下报告逐字节一致"""
    path = write_config(workdir / "exp.yaml", SMALL)
    assert main(["attack-scale", "--config", path, "--out", "a"]) == 0
    assert main(["attack-scale", "--config", path, "--out", "b", "--threads", "2"]) == 0
    first = (workdir / "a" / "attack_scale.json").read_bytes()
    assert first == (workdir / "b" / "attack_scale.json").read_bytes()
    rows = json.loads(first)["rows"]
    assert [row["lambda"] for row in rows] == [0.5, 4.0]
    assert all(row["predictionsIdentical"] for row in rows)


def test_tampered_report_rejected(workdir):
    """测试篡改后的报告无法通过聚合校验"""
    report = {
        "command": "attack-target",
        "config": {"attack": {"acc_budget": 0.03}},
        "rows": [{"C": 0.5, "k": 3, "finalRank": 10, "finalRankBudget": 10, "deltaAccBudget": 0.0,
                  "success": True, "successBudget": False}],
        "summary": [],
    }
    path = workdir / "attack_target.json"
    path.write_text(json.dumps(report), encoding="utf-8")
    assert main(["report", str(path), "--out", "curves"]) == 3


def test_error_categories(workdir, mocker):
    """测试数值错误与未预期异常的退出码"""
    path = write_config(workdir / "exp.yaml", SMALL)
    mocker.patch.dict('run.COMMANDS', {'train': mocker.Mock(side_effect=IhvpError("未收敛", 1.0, 5))})
    assert main(["train", "--config", path]) == 4
    mocker.patch.dict('run.COMMANDS', {'train': mocker.Mock(side_effect=RuntimeError("意外"))})
    assert main(["train", "--config", path]) == 1


@pytest.mark.slow
def test_attack_pipeline_and_report(workdir):
    """测试单目标、多目标攻击与聚合"""
    path = write_config(workdir / "exp.yaml", SMALL)
    assert main(["attack-target", "--config", path, "--out", "out", "--threads", "2"]) == 0
    assert main(["attack-multi", "--config", path, "--out", "out"]) == 0
    target = json.loads((workdir / "out" / "attack_target.json").read_text(encoding="utf-8"))
    assert len(target["rows"]) == 2
    for row in target["rows"]:
        assert row["finalRank"] <= row["initialRank"]
        assert row["success"] == (row["finalRank"] <= row["k"])
    multi = json.loads((workdir / "out" / "attack_multi.json").read_text(encoding="utf-8"))
    assert multi["rows"][0]["targetSize"] == 2
    assert main(["report", "out/attack_target.json", "out/attack_multi.json", "--out", "curves"]) == 0
    curve = pd.read_csv(workdir / "curves" / "attack_curve.csv")
    assert list(curve.columns) == ["C", "k", "successRate", "successRateBudget", "deltaAcc"]
    assert len(curve) == 1


@pytest.mark.slow
def test_attack_sweep_over_radius(workdir):
    """测试 C 网格扫描：每个 C 一行汇总，C=0.5 的成功率不低于 C=0.05"""
    sweep = {
        "seed": 0,
        "data": {"generator": "blobs"},
        "attack": {"c_grid": [0.05, 0.1, 0.2, 0.5], "k_grid": [10], "num_targets": 10, "steps": 50},
    }
    path = write_config(workdir / "sweep.yaml", sweep)
    assert main(["attack-target", "--config", path, "--out", "out", "--threads", "4"]) == 0
    summary = json.loads((workdir / "out" / "attack_target.json").read_text(encoding="utf-8"))["summary"]
    rates = {row["C"]: row["successRate"] for row in summary}
    assert sorted(rates) == [0.05, 0.1, 0.2, 0.5]
    assert rates[0.5] >= rates[0.05]


@pytest.mark.slow
def test_fairness_pipeline_and_report(workdir):
    """测试公平性流程与聚合"""
    path = write_config(workdir / "fair.yaml", FAIRNESS)
    assert main(["fairness", "--config", path, "--out", "out"]) == 0
    report = json.loads((workdir / "out" / "fairness.json").read_text(encoding="utf-8"))
    assert [row["lambda"] for row in report["rows"]] == [1.0, 2.0]
    assert report["rows"][0]["success"] is False
    assert main(["report", "out/fairness.json", "--out", "curves"]) == 0
    curve = pd.read_csv(workdir / "curves" / "fairness_curve.csv")
    assert list(curve["lambda"]) == [1.0, 2.0]


def test_fairness_requires_groups(workdir):
    """测试缺少分组时公平性命令返回数据错误"""
    path = write_config(workdir / "exp.yaml", SMALL)
    assert main(["fairness", "--config", path, "--out", "out"]) == 3


def test_fairness_preset_dimension_mismatch(workdir):
    """测试命名预设与特征维度不符时返回数据错误"""
    payload = {**FAIRNESS, "fairness": {**FAIRNESS["fairness"], "preset": "adult"}}
    path = write_config(workdir / "preset.yaml", payload)
    assert main(["fairness", "--config", path, "--out", "out"]) == 3
    with pytest.raises(DimensionMismatchError):
        ExperimentService(load_experiment_config(path)).cmd_fairness()
    assert not (workdir / "out" / "fairness.json").exists()
