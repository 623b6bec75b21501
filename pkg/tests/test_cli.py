import json
import sqlite3

import pytest

from crosslens.cli import DEFAULTS, build_parser, load_statements, main, resolve, run_config
from crosslens.provider import Tier

from conftest import snapshot


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_inspect_prints_preview(capsys, workspace):
    code, out, _ = run(capsys, "inspect", "--workspace", workspace, "--max-examples", 1)
    assert code == 0
    assert "csv.sales.user_id TEXT [4 distinct]: u1" in out
    assert "u2" not in out.split("csv.sales.user_id", 1)[1].splitlines()[0]


def test_link_prints_hint_and_dumps_graph(capsys, workspace, tmp_path):
    code, out, _ = run(capsys, "link", "--workspace", workspace, "--dump-graph", tmp_path / "g.json")
    assert code == 0
    assert out.startswith("You must JOIN ON: csv.sales.user_id = sqlite.users.users.customer_id")
    assert json.loads((tmp_path / "g.json").read_text())["edges"]


def test_link_k_limits_lines(capsys, tmp_path):
    (tmp_path / "a.csv").write_text("user_id,order_id\n" + "".join(f"u{i},o{i}\n" for i in range(20)))
    (tmp_path / "b.csv").write_text("user_id,order_id\n" + "".join(f"u{i},o{i}\n" for i in range(20)))
    _, out_all, _ = run(capsys, "link", "--workspace", tmp_path)
    code, out, _ = run(capsys, "link", "--workspace", tmp_path, "--k", 1)
    assert code == 0
    assert len([l for l in out_all.splitlines() if l.startswith("You must JOIN ON: ")]) >= 2
    assert [l for l in out.splitlines() if l.startswith("You must JOIN ON: ")] == [
        "You must JOIN ON: csv.a.order_id = csv.b.order_id"
    ]


def test_link_no_edges(capsys, tmp_path):
    (tmp_path / "a.csv").write_text("x\n1\n")
    code, out, _ = run(capsys, "link", "--workspace", tmp_path)
    assert (code, out.strip()) == (0, "No cross-source joins discovered.")


@pytest.mark.parametrize(
    "argv",
    [
        ["link", "--theta", "1.01"],
        ["link", "--wn", "0.7", "--wv", "0.7"],
        ["link", "--k", "0"],
        ["analyze", "--goal", "g", "--out", "OUT", "--provider-mode", "REPLAY", "--cassette", "missing.json"],
        ["analyze", "--goal", "g", "--out", "WS/out"],
        ["analyze", "--out", "OUT"],
    ],
)
def test_input_errors_exit_2(capsys, workspace, tmp_path, argv):
    argv = [a.replace("OUT", str(tmp_path / "out")).replace("WS", str(workspace)) for a in argv]
    argv = [argv[0], "--workspace", str(workspace), *argv[1:]]
    before = snapshot(workspace)
    code, _, err = run(capsys, *argv)
    assert code == 2 and err.startswith("error:")
    assert snapshot(workspace) == before


def test_dump_graph_inside_workspace_rejected(capsys, workspace):
    before = snapshot(workspace)
    code, _, err = run(capsys, "link", "--workspace", workspace, "--dump-graph", workspace / "g.json")
    assert code == 2 and "inside the workspace" in err
    assert snapshot(workspace) == before


def test_missing_and_empty_workspace(capsys, tmp_path):
    assert run(capsys, "inspect", "--workspace", tmp_path / "nope")[0] == 2
    code, out, _ = run(capsys, "inspect", "--workspace", tmp_path)
    assert (code, out.strip()) == (0, "no sources found")


def test_live_without_env_exits_2(capsys, workspace, tmp_path, monkeypatch):
    monkeypatch.delenv("LLM_API_KEY", raising=False)
    code, _, err = run(capsys, "analyze", "--workspace", workspace, "--out", tmp_path / "o", "--goal", "g",
                       "--provider-mode", "live")
    assert code == 2 and "LLM_API_KEY" in err
    assert not (tmp_path / "o").exists()


def test_config_file_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"theta": 0.7, "max-examples": 2, "k": 2}))
    args = resolve(build_parser().parse_args(["--config", str(cfg), "analyze", "--workspace", "w", "--k", "4"]))
    assert (args.theta, args.k, args.max_retries) == (0.7, 4, DEFAULTS["max_retries"])
    args = resolve(build_parser().parse_args(["link", "--workspace", "w"]))
    assert (args.theta, args.k) == (DEFAULTS["theta"], DEFAULTS["k"])


def test_bad_config_file(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text("[1, 2]")
    assert run(capsys, "--config", cfg, "inspect", "--workspace", tmp_path)[0] == 2
    assert run(capsys, "--config", tmp_path / "none.json", "inspect", "--workspace", tmp_path)[0] == 2


def test_synth_then_verify(capsys, tmp_path):
    code, out, _ = run(capsys, "synth", "--spec", "retail", "--out", tmp_path)
    assert code == 0 and "- basket_value shows an increasing trend" in out
    code, out, _ = run(capsys, "verify", "--workspace", tmp_path / "workspace", "--ground-truth", tmp_path / "ground_truth.json")
    assert code == 0
    assert all(line.startswith("PASS ") for line in out.strip().splitlines())


def test_verify_failure_exits_1(capsys, tmp_path):
    run(capsys, "synth", "--spec", "linkage_recall", "--out", tmp_path)
    con = sqlite3.connect(tmp_path / "workspace" / "registry.db")
    con.execute("DELETE FROM registry")
    con.commit()
    con.close()
    code, out, _ = run(capsys, "verify", "--workspace", tmp_path / "workspace", "--ground-truth", tmp_path / "ground_truth.json")
    assert code == 1 and "FAIL join" in out


def test_synth_seed_override_and_unknown_spec(capsys, tmp_path):
    run(capsys, "synth", "--spec", "retail", "--out", tmp_path / "a", "--seed", 5)
    assert json.loads((tmp_path / "a" / "ground_truth.json").read_text())["seed"] == 5
    assert run(capsys, "synth", "--spec", "nope", "--out", tmp_path / "b")[0] == 2


def test_score_identical_is_one(capsys, tmp_path):
    (tmp_path / "gt.txt").write_text("DAU rose in Q2\nChurn fell\n")
    code, out, _ = run(capsys, "score", "--ground-truth", tmp_path / "gt.txt", "--predicted", tmp_path / "gt.txt")
    assert code == 0
    assert out.splitlines()[-1] == "mean: 1.0"


def test_score_empty_ground_truth_exits_2(capsys, tmp_path):
    (tmp_path / "gt.json").write_text("[]")
    (tmp_path / "p.txt").write_text("x\n")
    assert run(capsys, "score", "--ground-truth", tmp_path / "gt.json", "--predicted", tmp_path / "p.txt")[0] == 2


def test_load_statements_formats(tmp_path):
    (tmp_path / "a.json").write_text(json.dumps({"insights": [{"statement": "s1"}, "s2"]}))
    (tmp_path / "b.json").write_text(json.dumps({"statements": ["t"]}))
    (tmp_path / "c.txt").write_text("one\n\n two \n")
    assert load_statements(tmp_path / "a.json") == ["s1", "s2"]
    assert load_statements(tmp_path / "b.json") == ["t"]
    assert load_statements(tmp_path / "c.txt") == ["one", "two"]


def test_analyze_offline_writes_artifacts_without_touching_workspace(capsys, tmp_path):
    run(capsys, "synth", "--spec", "retail", "--out", tmp_path / "fx")
    ws = tmp_path / "fx" / "workspace"
    before = snapshot(ws)
    code, out, err = run(capsys, "analyze", "--workspace", ws, "--out", tmp_path / "run",
                         "--goal", "How does basket_value change over time and across store, and what drives it",
                         "--dump-plan")
    assert code == 0, err
    assert json.loads(out)["goal"].startswith("How does basket_value")
    for name in ("report.md", "report.json", "plan.json"):
        assert (tmp_path / "run" / name).is_file()
    assert list((tmp_path / "run" / "charts").glob("*.svg"))
    assert snapshot(ws) == before


def test_unknown_command_is_usage_error():
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 2


def test_link_top_hint_is_planted_pair(capsys, tmp_path):
    run(capsys, "synth", "--spec", "linkage_recall", "--out", tmp_path)
    truth = json.loads((tmp_path / "ground_truth.json").read_text())
    a, b = truth["joins"][0]["aliases"]
    code, out, _ = run(capsys, "link", "--workspace", tmp_path / "workspace", "--k", 1)
    assert code == 0
    assert out.strip() == f"You must JOIN ON: {a} = {b}"


def test_model_names_reach_the_provider(tmp_path):
    from crosslens.pipeline import build_provider

    args = resolve(build_parser().parse_args(
        ["analyze", "--workspace", str(tmp_path / "ws"), "--out", str(tmp_path / "o"), "--goal", "g",
         "--cheap-model", "small-1", "--strong-model", "big-2"]
    ))
    policy = build_provider(run_config(args)).policy
    assert (policy.cheap_model, policy.strong_model) == ("small-1", "big-2")
    defaults = resolve(build_parser().parse_args(["analyze", "--workspace", str(tmp_path / "ws"), "--out", str(tmp_path / "o"), "--goal", "g"]))
    assert build_provider(run_config(defaults)).policy.model_for(Tier.STRONG) == "strong-model"
