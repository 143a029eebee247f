import json
import subprocess
import sys

import pydot
import pytest

from profilewall.cli import main
from profilewall.harness import FIXTURES
from profilewall.packets import save_trace

from conftest import PROFILES
from test_fsm import FIG5

FIG3 = str(PROFILES / "fig3-minimal.yaml")
PLUG = str(PROFILES / "tplink-hs110.yaml")

INVALID = """device-info: {name: broken, mac: "02:00:00:00:00:01", ipv4: 192.168.1.2}
interactions:
  i:
    p: {protocols: {tcp: {dst-port: 70000}}}
"""


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_check_valid_is_silent(capsys):
    assert run(capsys, "check", FIG3) == (0, "", "")


def test_check_whole_directory(capsys):
    code, _, err = run(capsys, "check", str(PROFILES))
    assert code == 0, err


def test_check_dangling_include(tmp_path, capsys):
    f = tmp_path / "d.yaml"
    f.write_text(open(FIG3).read().replace("patterns.dns-p", "patterns.nowhere"))
    code, _, err = run(capsys, "check", str(f))
    assert code == 2 and "patterns.nowhere" in err


def test_check_reports_only_the_invalid_profile(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text(INVALID)
    code, _, err = run(capsys, "check", FIG3, str(bad))
    assert code == 1
    assert "bad.yaml" in err and "fig3" not in err


def test_check_missing_file(capsys):
    assert run(capsys, "check", "/nonexistent.yaml")[0] == 2


@pytest.fixture
def fig5_file(tmp_path):
    f = tmp_path / "fig5.yaml"
    f.write_text(FIG5)
    return str(f)


def test_compile_json(fig5_file, capsys):
    code, out, _ = run(capsys, "compile", fig5_file)
    assert code == 0
    (doc,) = [json.loads(line) for line in out.splitlines()]
    assert len(doc["states"]) == 4 and len(doc["transitions"]) == 8 and doc["v"] == 1


def test_compile_one_document_per_interaction(capsys):
    code, out, _ = run(capsys, "compile", PLUG)
    assert code == 0 and len(out.splitlines()) == 13
    code, out, _ = run(capsys, "compile", PLUG, "--interaction", "local-control")
    assert json.loads(out)["interaction"] == "local-control"
    assert run(capsys, "compile", PLUG, "--interaction", "nope")[0] == 2


def test_compile_dot_parses(fig5_file, capsys):
    code, out, _ = run(capsys, "compile", fig5_file, "--format", "dot")
    assert code == 0
    (graph,) = pydot.graph_from_dot_data(out)
    assert len(graph.get_edges()) == 8 and len(graph.get_nodes()) >= 4


def test_compile_unknown_format(fig5_file, capsys):
    assert run(capsys, "compile", fig5_file, "--format", "xml")[0] == 2


def test_run_a3(tmp_path, capsys):
    trace = tmp_path / "a3.pcap"
    assert run(capsys, "attack", "A3", "--out", str(trace))[0] == 0
    code, out, _ = run(capsys, "run", "--profiles", str(PROFILES), "--trace", str(trace))
    report = json.loads(out)
    assert code == 0 and (report["accepted"], report["dropped"]) == (0, 5)
    assert report["per_reason"] == {"WRONG_STATE": 5}


def test_run_with_expected_sidecar(tmp_path, capsys):
    trace = tmp_path / "a1.jsonl"
    run(capsys, "attack", "A1", "--out", str(trace))
    side = str(trace) + ".labels.json"
    log = tmp_path / "log.jsonl"
    code, out, _ = run(capsys, "run", "--profiles", str(PROFILES / "hue-bridge.yaml"), "--trace", str(trace),
                       "--expected", side, "--log", str(log))
    assert code == 0 and json.loads(out)["mismatches"] == []
    lines = log.read_text().splitlines()
    assert len(lines) == 1000 and json.loads(lines[0])["decision"] == "ACCEPT"
    data = json.loads(open(side).read())
    flip = data["expected"].index("DROP")
    data["expected"][3] = "DROP"
    data["expected"][flip] = "ACCEPT"
    bad = tmp_path / "bad.labels.json"
    bad.write_text(json.dumps(data))
    code, out, err = run(capsys, "run", "--profiles", str(PROFILES / "hue-bridge.yaml"), "--trace", str(trace),
                         "--expected", str(bad))
    assert code == 1 and json.loads(out)["mismatches"] == [3, flip]
    assert f"3, {flip}" in err


def test_run_missing_trace(capsys):
    assert run(capsys, "run", "--profiles", PLUG, "--trace", "/nonexistent.pcap")[0] == 2


def test_run_missing_arguments(capsys):
    assert run(capsys, "run", "--profiles", PLUG)[0] == 2


def test_fuzz_is_byte_identical(tmp_path, capsys):
    outs = []
    for k in range(2):
        path = tmp_path / f"f{k}.pcap"
        code, out, _ = run(capsys, "fuzz", "--fixture", "local-control", "--seed", "7", "--min-packets", "200",
                           "--out", str(path))
        assert code == 0 and json.loads(out)["seed"] == 7
        outs.append((path.read_bytes(), (tmp_path / f"f{k}.pcap.labels.json").read_bytes()))
    assert outs[0] == outs[1]


def test_fuzz_then_run_agrees(tmp_path, capsys):
    path = tmp_path / "f.jsonl"
    run(capsys, "fuzz", "--fixture", "cloud-connection", "--seed", "3", "--out", str(path))
    code, out, _ = run(capsys, "run", "--profiles", PLUG, "--trace", str(path),
                       "--expected", str(path) + ".labels.json")
    assert code == 0 and json.loads(out)["mismatches"] == []


def test_fuzz_from_trace_file(tmp_path, capsys):
    base = tmp_path / "base.pcap"
    save_trace(FIXTURES["local-control"].trace(100), base)
    out_path = tmp_path / "o.jsonl"
    code, out, _ = run(capsys, "fuzz", "--trace", str(base), "--profiles", PLUG, "--out", str(out_path),
                       "--edit-fraction", "0.5")
    assert code == 0 and json.loads(out)["edits"] >= 50
    assert run(capsys, "fuzz", "--trace", str(base), "--out", str(out_path))[0] == 2
    assert run(capsys, "fuzz", "--fixture", "nope", "--out", str(out_path))[0] == 2
    assert run(capsys, "fuzz", "--fixture", "local-control", "--edit-fraction", "2", "--out", str(out_path))[0] == 2


def test_attack_a1_has_1000_packets(tmp_path, capsys):
    code, out, _ = run(capsys, "attack", "A1", "--duration", "1", "--out", str(tmp_path / "a1.pcap"))
    s = json.loads(out)
    assert code == 0 and s["packets"] == 1000 and s["expected_accept"] == 110


def test_attack_bad_params(tmp_path, capsys):
    assert run(capsys, "attack", "A1", "--pps", "0", "--out", str(tmp_path / "x.pcap"))[0] == 2


def test_bench_categories_partition_the_trace(tmp_path, capsys):
    trace = tmp_path / "mixed.pcap"
    save_trace(FIXTURES["mixed-home"].trace(10_000), trace)
    n = len(FIXTURES["mixed-home"].trace(10_000))
    code, out, _ = run(capsys, "bench", "--profiles", str(PROFILES), "--trace", str(trace), "--config",
                       str(PROFILES / "config.yaml"))
    s = json.loads(out)
    assert code == 0 and sum(s["categories"].values()) == n == s["packets"] >= 10_000
    assert all(s["categories"][c] > 0 for c in "ABCD")
    assert s["latency_us"]["mean"] > 0 and s["repeat"] == 1


def test_bench_repeat_validation(tmp_path, capsys):
    assert run(capsys, "bench", "--profiles", PLUG, "--trace", "x.pcap", "--repeat", "0")[0] == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "profilewall", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("profilewall ")
