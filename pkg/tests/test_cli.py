import hashlib
import io
import json
import os

import pytest

from leakguard.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, PROMPT_TEXT, main
from leakguard.model import parse_dataset, write_dataset
from leakguard.tracegen import GenConfig

SMALL = GenConfig(num_apps=4, num_domains=8, packets_per_app=80, seed=11)


def run(capsys, *argv, stdin=None, monkeypatch=None):
    if stdin is not None:
        monkeypatch.setattr("sys.stdin", io.StringIO(stdin))
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def tree_hashes(root):
    out = {}
    for d, _, files in os.walk(root):
        for f in files:
            p = os.path.join(d, f)
            out[os.path.relpath(p, root)] = hashlib.sha256(open(p, "rb").read()).hexdigest()
    return out


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "gen.json"
    cfg.write_text(json.dumps(SMALL.to_json()))
    assert main(["gen", "--config", str(cfg), "--out", str(root / "data.jsonl")]) == EXIT_OK
    assert main(["train", "--data", str(root / "data.jsonl"), "--out", str(root / "models")]) == EXIT_OK
    return root


def test_usage_errors(capsys):
    assert run(capsys, "gen", "--out", "x")[0] == EXIT_USAGE
    assert run(capsys)[0] == EXIT_USAGE
    assert run(capsys, "eval", "--data", "x", "--method", "9")[0] == EXIT_USAGE
    assert run(capsys, "detect", "--data", "x", "--models", "m", "--interactive", "--policy", "all-allow")[0] \
        == EXIT_USAGE


def test_data_errors(capsys, tmp_path, workspace):
    assert run(capsys, "train", "--data", tmp_path / "missing.jsonl", "--out", tmp_path / "m")[0] == EXIT_DATA
    bad = tmp_path / "bad.jsonl"
    bad.write_text("not json\n")
    assert run(capsys, "eval", "--data", bad)[0] == EXIT_DATA
    assert run(capsys, "gen", "--config", tmp_path / "nope.json", "--out", tmp_path / "d")[0] == EXIT_DATA
    assert run(capsys, "detect", "--data", workspace / "data.jsonl", "--models", tmp_path / "none")[0] == EXIT_DATA


def test_gen_deterministic(capsys, tmp_path, workspace):
    code, out, _ = run(capsys, "gen", "--config", workspace / "gen.json", "--out", tmp_path / "a.jsonl")
    assert code == EXIT_OK and "packets with leaks" in out
    run(capsys, "gen", "--config", workspace / "gen.json", "--out", tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes() \
        == (workspace / "data.jsonl").read_bytes()
    run(capsys, "gen", "--config", workspace / "gen.json", "--seed", 12, "--out", tmp_path / "c.jsonl")
    assert (tmp_path / "c.jsonl").read_bytes() != (tmp_path / "a.jsonl").read_bytes()


def test_train_deterministic(capsys, tmp_path, workspace):
    code, out, _ = run(capsys, "train", "--data", workspace / "data.jsonl", "--out", tmp_path / "m")
    assert code == EXIT_OK
    assert "reduction factor" in out and "loaded feature count" in out and "of traffic" in out
    assert (tmp_path / "m" / "registry.json").exists()
    assert tree_hashes(tmp_path / "m") == tree_hashes(workspace / "models")


def test_detect_clean(capsys, tmp_path, workspace):
    data = parse_dataset(workspace / "data.jsonl")
    clean = data.subset(r for r in data.records if not r.labels and b"user" not in r.payload)
    write_dataset(clean, tmp_path / "clean.jsonl")
    code, out, _ = run(capsys, "detect", "--data", tmp_path / "clean.jsonl", "--models", workspace / "models",
                       "--log", tmp_path / "log.jsonl")
    assert code == EXIT_OK
    assert sum(1 for line in open(tmp_path / "log.jsonl") if line.strip()) == \
        int(out.split("detections=")[1].split()[0])


def test_detect_all_allow_string_match(capsys, tmp_path, workspace):
    data = parse_dataset(workspace / "data.jsonl")
    code, out, _ = run(capsys, "detect", "--data", workspace / "data.jsonl", "--models", workspace / "models",
                       "--policy", "all-allow", "--log", tmp_path / "log.jsonl", "--out", tmp_path / "fwd.jsonl")
    assert code == EXIT_OK and "dropped=0" in out
    entries = {e["packet_id"]: e for e in map(json.loads, open(tmp_path / "log.jsonl"))}
    for r in data.records:
        pre = {t.name for t in r.labels if t.predefined}
        if pre:
            got = {x["type"] for x in entries[r.id]["types"] if x["method"] == "StringMatch"}
            assert got == pre
    assert parse_dataset(tmp_path / "fwd.jsonl") == data


def test_detect_interactive_hash(capsys, monkeypatch, tmp_path, workspace):
    data = parse_dataset(workspace / "data.jsonl")
    code, out, err = run(capsys, "detect", "--data", workspace / "data.jsonl", "--models", workspace / "models",
                         "--interactive", "--log", tmp_path / "log.jsonl", "--out", tmp_path / "fwd.jsonl",
                         stdin="h\n" * 500, monkeypatch=monkeypatch)
    assert code == EXIT_OK, err
    pairs = set()
    for e in map(json.loads, open(tmp_path / "log.jsonl")):
        pairs |= {(e["app"], x["type"]) for x in e["types"]}
    prompts = [line for line in err.replace("? ", "?\n").splitlines() if line.startswith("[a]llow")]
    assert len(prompts) == len(set(prompts)) == len(pairs)
    assert set(prompts) == {PROMPT_TEXT.format(app=a, type=t).strip() for a, t in pairs}
    lits = [v for vals in data.literals(predefined_only=True).values() for v in vals]
    fwd = parse_dataset(tmp_path / "fwd.jsonl")
    assert all(not any(v in r.payload for v in lits) for r in fwd.records)
    assert "hashed=" in out and int(out.split("hashed=")[1].split()[0]) > 0
    # every remembered rule is the scripted answer
    assert all(line.endswith(": hash") for line in out.splitlines() if line.startswith("rule "))


def test_detect_interactive_runs_out_of_answers(capsys, monkeypatch, workspace):
    code, _, err = run(capsys, "detect", "--data", workspace / "data.jsonl", "--models", workspace / "models",
                       "--interactive", stdin="", monkeypatch=monkeypatch)
    assert code == EXIT_DATA and "no answer" in err


def test_detect_workers_match_serial(capsys, tmp_path, workspace):
    for w in (1, 4):
        run(capsys, "detect", "--data", workspace / "data.jsonl", "--models", workspace / "models",
            "--policy", "all-block", "--workers", w, "--log", tmp_path / f"log{w}.jsonl")
    strip = [[{k: v for k, v in json.loads(line).items() if k != "us"} for line in open(tmp_path / f"log{w}.jsonl")]
             for w in (1, 4)]
    assert strip[0] == strip[1]


def test_eval_shape(capsys, tmp_path, workspace):
    code, out, _ = run(capsys, "eval", "--data", workspace / "data.jsonl", "--k", 3, "--json", tmp_path / "r.json")
    assert code == EXIT_OK
    for s in ("scheme binary", "scheme leak", "scheme combined"):
        assert s in out
    for m in range(1, 7):
        assert sum(1 for line in out.splitlines() if line.startswith(f"{m} ")) == 3
    first = (tmp_path / "r.json").read_bytes()
    assert len(json.loads(first)["reports"]) == 6 * 3 * 3
    run(capsys, "eval", "--data", workspace / "data.jsonl", "--k", 3, "--json", tmp_path / "r.json")
    assert (tmp_path / "r.json").read_bytes() == first


def test_graph(capsys, tmp_path, workspace):
    code, out, _ = run(capsys, "graph", "--data", workspace / "data.jsonl", "--format", "json", "--communities",
                       "--out", tmp_path / "g.json")
    assert code == EXIT_OK and "modularity=" in out
    obj = json.loads((tmp_path / "g.json").read_text())
    assert all("community" in n for n in obj["nodes"])
    data = parse_dataset(workspace / "data.jsonl")
    write_dataset(data.subset(r for r in data.records if not r.labels), tmp_path / "clean.jsonl")
    code, _, _ = run(capsys, "graph", "--data", tmp_path / "clean.jsonl", "--out", tmp_path / "g.dot")
    text = (tmp_path / "g.dot").read_text()
    assert code == EXIT_OK and "--" not in text and "[pii=" in text


def test_bench(capsys):
    assert run(capsys, "bench", "--iters", 0)[0] == EXIT_USAGE
    code, out, _ = run(capsys, "bench", "--iters", 50, "--payload-size", 400, "--patterns", 50)
    assert code == EXIT_OK
    for name in ("DPI", "parse", "multi-label"):
        assert name in out
