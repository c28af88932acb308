"""End-to-end runs of the command-line surface on a small synthetic log."""

import struct

import pytest

from app.cli import main
from app.config import EMBED_DIM
from app.ingest import load_dataset_with_settings
from app.train import load_checkpoint


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    events, data, model = root / "events.csv", root / "data.tlds", root / "model.tlnt"
    synth = ["synth", "--out", str(events), "--sessions", "300", "--items", "30",
             "--mean-len", "4", "--seed", "7"]
    assert main(synth) == 0
    assert main(["prepare", "--input", str(events), "--out", str(data),
                 "--min-item-support", "2"]) == 0
    assert main(["train", "--data", str(data), "--out", str(model), "--d", "4",
                 "--epochs", "1", "--batch", "16", "--threads", "1"]) == 0
    return {"root": root, "events": events, "data": data, "model": model}


def test_synth_is_reproducible(tmp_path, workspace):
    again = tmp_path / "again.csv"
    main(["synth", "--out", str(again), "--sessions", "300", "--items", "30",
          "--mean-len", "4", "--seed", "7"])
    assert again.read_bytes() == workspace["events"].read_bytes()
    assert again.read_text().startswith("# sessions=300\n# items=30\n")


def test_prepare_prints_summary_and_is_reproducible(tmp_path, workspace, capsys):
    out = tmp_path / "again.tlds"
    assert main(["prepare", "--input", str(workspace["events"]), "--out", str(out),
                 "--min-item-support", "2"]) == 0
    assert "head items:" in capsys.readouterr().out
    assert out.read_bytes() == workspace["data"].read_bytes()


def test_train_prints_epoch_rows_and_is_reproducible(tmp_path, workspace, capsys):
    out = tmp_path / "again.tlnt"
    assert main(["train", "--data", str(workspace["data"]), "--out", str(out), "--d", "4",
                 "--epochs", "1", "--batch", "16", "--threads", "2"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "epoch,train_loss,valid_mrr@20"
    assert [line.split(",")[0] for line in lines[1:]] == ["0", "1"]
    assert out.read_bytes() == workspace["model"].read_bytes()


def test_train_without_pm(tmp_path, workspace):
    out = tmp_path / "nopm.tlnt"
    assert main(["train", "--data", str(workspace["data"]), "--out", str(out), "--d", "4",
                 "--epochs", "0", "--no-pm"]) == 0
    assert load_checkpoint(out).config.use_pm is False


def test_eval_writes_five_rows_per_k(workspace, capsys):
    report = workspace["root"] / "report.csv"
    assert main(["eval", "--data", str(workspace["data"]), "--model", str(workspace["model"]),
                 "--method", "tailnet", "--k", "20", "--out", str(report)]) == 0
    rows = [line for line in report.read_text().splitlines() if not line.startswith("#")]
    assert len(rows) == 1 + 5
    assert "recall@20" in capsys.readouterr().out


def test_eval_both_model_variants(workspace):
    outputs = {}
    for method in ("tailnet", "tailnet-proportion"):
        path = workspace["root"] / f"{method}.csv"
        assert main(["eval", "--data", str(workspace["data"]), "--model",
                     str(workspace["model"]), "--method", method, "--out", str(path)]) == 0
        outputs[method] = path.read_text().replace(method, "")
    assert outputs["tailnet"] != outputs["tailnet-proportion"]


def test_eval_baselines_without_model(workspace):
    path = workspace["root"] / "baselines.xlsx"
    assert main(["eval", "--data", str(workspace["data"]), "--method", "pop,spop,itemknn",
                 "--out", str(path)]) == 0
    assert path.exists()


def test_recommend(workspace, capsys):
    item = load_checkpoint(workspace["model"]).catalog.id_of[0]
    args = ["recommend", "--model", str(workspace["model"]), "--session", item, "--k", "5"]
    assert main(args) == 0
    first = capsys.readouterr().out
    lines = first.splitlines()
    assert len(lines) == 6
    assert all(line.rsplit(",", 1)[1] in ("HEAD", "TAIL") for line in lines[:5])
    assert lines[5].startswith("factors: r_head=")
    assert main(args) == 0
    assert capsys.readouterr().out == first


# ---------------------------------------------------------------------------
# Exit codes
# ---------------------------------------------------------------------------

def test_zero_sessions_is_a_user_error(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path / "x.csv"), "--sessions", "0"]) == 2
    assert "ERROR:" in capsys.readouterr().err


def test_empty_input_file(tmp_path, capsys):
    empty = tmp_path / "empty.csv"
    empty.write_bytes(b"")
    assert main(["prepare", "--input", str(empty), "--out", str(tmp_path / "d.tlds")]) == 2
    assert "no events parsed" in capsys.readouterr().err


def test_missing_input_file(tmp_path):
    assert main(["prepare", "--input", str(tmp_path / "nope.csv"),
                 "--out", str(tmp_path / "d.tlds")]) == 2


def test_unknown_item_names_it(workspace, capsys):
    assert main(["recommend", "--model", str(workspace["model"]), "--session", "ghost"]) == 2
    assert "ghost" in capsys.readouterr().err


def test_truncated_checkpoint(tmp_path, workspace):
    broken = tmp_path / "broken.tlnt"
    broken.write_bytes(workspace["model"].read_bytes()[:100])
    assert main(["recommend", "--model", str(broken), "--session", "x"]) == 2


def test_model_methods_need_model(workspace):
    assert main(["eval", "--data", str(workspace["data"]), "--method", "tailnet"]) == 2


def test_unknown_method(workspace):
    assert main(["eval", "--data", str(workspace["data"]), "--method", "magic"]) == 2


def test_internal_errors_exit_with_one(workspace, monkeypatch):
    def boom(*args, **kwargs):
        raise RuntimeError("boom")

    monkeypatch.setattr("app.analysis.compare", boom)
    assert main(["eval", "--data", str(workspace["data"]), "--method", "pop"]) == 1


def _break_first_id(path, item_id: str):
    data = path.read_bytes()
    raw = item_id.encode("utf-8")
    at = data.index(struct.pack("<I", len(raw)) + raw) + 4
    path.write_bytes(data[:at] + b"\xff" + data[at + 1:])


def test_corrupt_id_table_is_a_user_error(tmp_path, workspace, capsys):
    item = load_checkpoint(workspace["model"]).catalog.id_of[0]
    data, model = tmp_path / "bad.tlds", tmp_path / "bad.tlnt"
    data.write_bytes(workspace["data"].read_bytes())
    model.write_bytes(workspace["model"].read_bytes())
    _break_first_id(data, item)
    _break_first_id(model, item)
    assert main(["eval", "--data", str(data), "--method", "pop"]) == 2
    assert "UTF-8" in capsys.readouterr().err
    assert main(["recommend", "--model", str(model), "--session", item]) == 2


def test_artifacts_carry_the_resolved_settings(tmp_path, workspace):
    text = workspace["events"].read_text()
    assert "# min_item_support=" in text and "# ks=" in text

    _, settings = load_dataset_with_settings(workspace["data"])
    assert settings["min_item_support"] == 2
    assert settings["test_window_seconds"] == 86_400
    assert settings["d"] == EMBED_DIM and "threads" not in settings

    report = tmp_path / "report.csv"
    main(["eval", "--data", str(workspace["data"]), "--method", "pop", "--k", "5,20",
          "--out", str(report)])
    header = [line for line in report.read_text().splitlines() if line.startswith("#")]
    assert "# ks=5,20" in header
    assert "# head_fraction=0.2" in header
