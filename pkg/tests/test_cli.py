import csv
import json
import subprocess
import sys

import pytest

from dwlab.cli import main, validate_spec


def write_spec(path, text):
    path.write_text(text)
    return str(path)


MOMENTS_SPEC = """\
subcommand = "moments"
seed = 5
d = 2
times = [1.0]
points = [[0.0, 0.0]]
"""

HIT_SPEC = """\
subcommand = "hit"
seed = 5
d = 2
N = 150
t = 1.0
eps = [0.5]
n_reps = 300
atoms = [[1.0, 0.0, 0.0]]
"""


class TestValidate:
    def test_clean_spec(self):
        spec = {"subcommand": "moments", "seed": 1, "d": 2}
        assert validate_spec(spec)["ok"]

    def test_missing_seed(self):
        rep = validate_spec({"subcommand": "moments", "d": 2})
        assert not rep["ok"]
        assert any("seed" in v for v in rep["violations"])

    def test_unknown_subcommand(self):
        rep = validate_spec({"subcommand": "frobnicate", "seed": 1, "d": 2})
        assert any("subcommand" in v for v in rep["violations"])

    def test_dimension_gates(self):
        base = {"seed": 1, "N": 100, "t": 1.0, "n_reps": 500,
                "atoms": [[1.0, 0.0, 0.0]], "eps": [0.1]}
        rep = validate_spec({**base, "subcommand": "cd", "d": 2})
        assert any("requires d >= 3" in v for v in rep["violations"])
        rep = validate_spec({**base, "subcommand": "palm", "d": 3})
        assert any("requires d = 2" in v for v in rep["violations"])

    def test_empty_eps_grid(self):
        spec = {"subcommand": "hit", "seed": 1, "d": 2, "N": 100, "t": 1.0,
                "n_reps": 500, "atoms": [[1.0, 0.0, 0.0]], "eps": []}
        rep = validate_spec(spec)
        assert not rep["ok"]

    def test_atom_arity(self):
        spec = {"subcommand": "hit", "seed": 1, "d": 2, "N": 100, "t": 1.0,
                "n_reps": 500, "atoms": [[1.0, 0.0]], "eps": [0.1]}
        assert not validate_spec(spec)["ok"]

    def test_m_table_eps_range(self):
        spec = {"subcommand": "m-table", "seed": 1, "d": 2, "N": 100,
                "eps": [0.6, 0.1]}
        rep = validate_spec(spec)
        assert any("(0, 1/2)" in v for v in rep["violations"])


class TestMainMoments:
    def test_known_value(self, tmp_path):
        spec = write_spec(tmp_path / "s.toml", MOMENTS_SPEC)
        out = tmp_path / "out"
        assert main(["--spec", spec, "--out", str(out)]) == 0
        rows = list(csv.DictReader(open(out / "results.csv")))
        assert float(rows[0]["heat_kernel"]) == pytest.approx(0.1591549, abs=1e-6)
        assert float(rows[0]["extinction_probability"]) == pytest.approx(
            0.3678794, abs=1e-6
        )

    def test_artifacts_present(self, tmp_path):
        spec = write_spec(tmp_path / "s.toml", MOMENTS_SPEC)
        out = tmp_path / "out"
        main(["--spec", spec, "--out", str(out), "--emit-plot-script"])
        assert (out / "results.csv").exists()
        assert (out / "summary.json").exists()
        assert (out / "schema.json").exists()
        assert (out / "plot.script").exists()
        schema = json.loads((out / "schema.json").read_text())
        assert schema["columns"][-2:] == ["seed", "spec_hash"]

    def test_validate_mode(self, tmp_path, capsys):
        spec = write_spec(tmp_path / "s.toml", MOMENTS_SPEC)
        assert main(["--spec", spec, "--validate"]) == 0
        assert json.loads(capsys.readouterr().out)["ok"]

    def test_invalid_spec_exit_code(self, tmp_path, capsys):
        spec = write_spec(
            tmp_path / "s.toml", MOMENTS_SPEC.replace("seed = 5\n", "")
        )
        assert main(["--spec", spec, "--out", str(tmp_path / "o")]) == 2
        assert "seed" in capsys.readouterr().err

    def test_malformed_toml(self, tmp_path, capsys):
        spec = write_spec(tmp_path / "s.toml", "subcommand = [unclosed")
        assert main(["--spec", spec, "--out", str(tmp_path / "o")]) == 2


class TestDeterminism:
    def test_byte_identity_across_threads(self, tmp_path):
        spec = write_spec(tmp_path / "s.toml", HIT_SPEC)
        blobs = []
        for k, threads in enumerate(("1", "4")):
            out = tmp_path / f"out{k}"
            assert main(["--spec", spec, "--out", str(out), "--threads", threads]) == 0
            blobs.append(
                tuple((out / f).read_bytes() for f in ("results.csv", "summary.json", "schema.json"))
            )
        assert blobs[0] == blobs[1]

    def test_seed_override_changes_results(self, tmp_path):
        spec = write_spec(tmp_path / "s.toml", HIT_SPEC)
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        main(["--spec", spec, "--out", str(out1)])
        main(["--spec", spec, "--out", str(out2), "--seed", "99"])
        assert (out1 / "results.csv").read_bytes() != (out2 / "results.csv").read_bytes()
        s2 = json.loads((out2 / "summary.json").read_text())
        assert s2["seed"] == 99

    def test_rerun_is_byte_identical(self, tmp_path):
        spec = write_spec(tmp_path / "s.toml", HIT_SPEC)
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        main(["--spec", spec, "--out", str(out1)])
        main(["--spec", spec, "--out", str(out2)])
        assert (out1 / "results.csv").read_bytes() == (out2 / "results.csv").read_bytes()


class TestSubcommands:
    def test_forest_check(self, tmp_path):
        spec = write_spec(
            tmp_path / "s.toml",
            """\
subcommand = "forest-check"
seed = 5
d = 2
N = 150
t = 1.0
n_reps = 300
atoms = [[1.0, 0.0, 0.0]]
""",
        )
        out = tmp_path / "out"
        assert main(["--spec", spec, "--out", str(out)]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["ks_p"] > 0.001
        assert summary["identity_z"] < 5.0

    def test_multiplicity_window_guard_exit_2(self, tmp_path, capsys):
        spec = write_spec(
            tmp_path / "s.toml",
            """\
subcommand = "multiplicity"
seed = 5
d = 2
N = 100
t = 1.0
h = 0.2
eps = [0.1]
n_reps = 200
atoms = [[1.0, 0.0, 0.0]]
""",
        )
        assert main(["--spec", spec, "--out", str(tmp_path / "o")]) == 2

    def test_extinction_curve(self, tmp_path):
        spec = write_spec(
            tmp_path / "s.toml",
            """\
subcommand = "extinction"
seed = 5
d = 2
N = 100
t_grid = [1.0, 4.0]
radius = 0.5
n_reps = 300
atoms = [[1.0, 0.0, 0.0]]
""",
        )
        out = tmp_path / "out"
        assert main(["--spec", spec, "--out", str(out)]) == 0
        rows = list(csv.DictReader(open(out / "results.csv")))
        assert len(rows) == 2
        assert float(rows[1]["hit_prob"]) < float(rows[0]["hit_prob"])


def test_console_script_entrypoint(tmp_path):
    spec = tmp_path / "s.toml"
    spec.write_text(MOMENTS_SPEC)
    out = tmp_path / "out"
    r = subprocess.run(
        [sys.executable, "-m", "dwlab.cli", "--spec", str(spec), "--out", str(out)],
        capture_output=True,
    )
    assert r.returncode == 0
    assert (out / "results.csv").exists()
