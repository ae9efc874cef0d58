import json

import pytest

from seqadjust.cli import main
from seqadjust.io import write_csv
from seqadjust.simulate import GRAPH_DIR, gen_setup1

FIG = {name: str(GRAPH_DIR / f"{name}.graph") for name in ("setup2", "collider", "butterfly", "setup1")}


@pytest.fixture(scope="module")
def setup1_csv(tmp_path_factory):
    data, _ = gen_setup1(400, seed=8)
    path = tmp_path_factory.mktemp("data") / "setup1.csv"
    write_csv(data, path)
    return str(path)


def estimate(csv_path, *extra):
    return ["estimate", "--data", csv_path, "--graph", FIG["setup1"], "--folds", "2",
            "--bootstrap-B", "10", "--seed", "1", *extra]


class TestGraphCheck:
    def test_admissible(self, capsys):
        assert main(["graph", "check", FIG["setup1"], "--pair", "W1|Z1,Z2"]) == 0
        out = capsys.readouterr().out
        assert out.count("PASS") == 3
        assert "not admissible" not in out

    def test_butterfly_fails(self, capsys):
        assert main(["graph", "check", FIG["butterfly"], "--pair", "|C1,C2"]) == 1
        assert "FAIL" in capsys.readouterr().out

    def test_malformed_graph(self, tmp_path, capsys):
        bad = tmp_path / "bad.graph"
        bad.write_text("node A role=exposure\nnode Y role=outcome\nnode R role=selection\nA -> Q\n")
        assert main(["graph", "check", str(bad), "--pair", "|"]) == 2
        assert "line 4" in capsys.readouterr().err

    def test_unknown_node(self, capsys):
        assert main(["graph", "check", FIG["setup1"], "--pair", "Q|"]) == 2

    def test_missing_file(self, capsys):
        assert main(["graph", "check", "/nonexistent.graph", "--pair", "|"]) == 2


class TestGraphPairs:
    def test_setup2(self, capsys):
        assert main(["graph", "pairs", FIG["setup2"]]) == 0
        assert capsys.readouterr().out.split() == ["({B1};{C2})", "({B1,C1,C2};{})"]

    def test_collider_json(self, capsys):
        assert main(["graph", "pairs", FIG["collider"], "--json"]) == 0
        assert json.loads(capsys.readouterr().out) == {"pairs": [{"W": [], "Z": ["C2"]}]}

    def test_empty_warns(self, capsys):
        assert main(["graph", "pairs", FIG["butterfly"], "--json"]) == 0
        cap = capsys.readouterr()
        assert json.loads(cap.out) == {"pairs": []}
        assert "warning" in cap.err


class TestEstimate:
    def test_all_methods(self, setup1_csv, capsys):
        assert main(estimate(setup1_csv, "--method", "all", "--format", "json")) == 0
        reports = json.loads(capsys.readouterr().out)["reports"]
        methods = [r["method"].lower().replace("-", "") for r in reports]
        assert methods == ["tsr", "dipw", "sr", "cd", "tmle1r", "tmlecc"]
        # the single-regression TMLEs adjust for W only
        assert [r["pair"] for r in reports] == ["({W1};{Z1,Z2})"] * 4 + ["({W1};{})"] * 2

    def test_table(self, setup1_csv, capsys):
        assert main(estimate(setup1_csv)) == 0
        out = capsys.readouterr().out
        assert out.splitlines()[0].startswith("method")
        assert "tsr" in out.lower()

    def test_force_banner(self, setup1_csv, capsys):
        assert main(estimate(setup1_csv, "--pair", "W1|")) == 1
        assert main(estimate(setup1_csv, "--pair", "W1|", "--force")) == 0
        cap = capsys.readouterr()
        assert cap.out.startswith("WARNING: pair ({W1};{}) is NOT s-admissible")
        assert "WARNING" in cap.err

    def test_force_without_graph(self, setup1_csv, capsys):
        args = ["estimate", "--data", setup1_csv, "--pair", "W1|Z1,Z2", "--folds", "2",
                "--seed", "1"]
        assert main(args) == 2
        assert main(args + ["--force", "--format", "csv"]) == 0
        assert "admissibility not checked" in capsys.readouterr().out

    def test_missing_binding_column(self, tmp_path, capsys):
        path = tmp_path / "x.csv"
        path.write_text("A,R,Y\n1,1,2\n0,0,\n")
        assert main(estimate(str(path))) == 2
        assert "W1" in capsys.readouterr().err

    @pytest.mark.parametrize("flag,value", [("--trunc", "0.5"), ("--trunc", "0"),
                                            ("--folds", "1"), ("--bootstrap-B", "5")])
    def test_ranges(self, setup1_csv, flag, value, capsys):
        assert main(estimate(setup1_csv, flag, value)) == 2

    def test_deterministic_output_file(self, setup1_csv, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        assert main(estimate(setup1_csv, "--format", "json", "--eif", "--output", str(a))) == 0
        assert main(estimate(setup1_csv, "--format", "json", "--eif", "--output", str(b))) == 0
        assert a.read_bytes() == b.read_bytes()
        assert len(json.loads(a.read_text())["reports"][0]["eif"]) == 400

    def test_no_pair_exists(self, setup1_csv, capsys):
        args = ["estimate", "--data", setup1_csv, "--graph", FIG["butterfly"]]
        assert main(args) == 1


class TestSimulate:
    CONFIG = {"scenario": "I-a", "n": 200, "reps": 2, "folds": 2, "bootstrap_B": 0,
              "estimators": ["TSR", "unadjusted"]}

    def run(self, tmp_path, out, *extra):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(self.CONFIG))
        return main(["simulate", "--config", str(cfg), "--seed", "4",
                     "--output-dir", str(out), *extra])

    def test_byte_identical(self, tmp_path, capsys):
        assert self.run(tmp_path, tmp_path / "one") == 0
        assert self.run(tmp_path, tmp_path / "two") == 0
        for ext in ("json", "csv"):
            a = (tmp_path / "one" / f"I-a_summary.{ext}").read_bytes()
            b = (tmp_path / "two" / f"I-a_summary.{ext}").read_bytes()
            assert a == b
        assert "TSR" in capsys.readouterr().out

    def test_env_output_dir(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("SEQADJUST_OUTPUT_DIR", str(tmp_path / "env"))
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(self.CONFIG))
        assert main(["simulate", "--config", str(cfg), "--seed", "4", "--format", "csv",
                     "--stem", "s"]) == 0
        assert (tmp_path / "env" / "s.csv").exists()
        assert not (tmp_path / "env" / "s.json").exists()

    def test_unknown_scenario(self, capsys):
        assert main(["simulate", "--scenario", "I-z"]) == 2

    def test_bad_config(self, tmp_path, capsys):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"scenario": "I-a", "estimators": ["DML"]}))
        assert main(["simulate", "--config", str(cfg)]) == 2

    def test_nothing_to_run(self, capsys):
        assert main(["simulate"]) == 2


def test_no_command(capsys):
    assert main([]) == 2
