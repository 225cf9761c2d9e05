"""Command-line behavior: exit codes, output routing, byte determinism.

Every command echoes its resolved configuration to stderr and reserves
stdout for the primary output, so stdout from two identical invocations
must match byte for byte. Tests drive main() in process.
"""

import json

import pytest

from spiralarm.cli import main
from spiralarm.solver import SceneObject
from spiralarm.storage import (design_hash, load_design, load_episode,
                               save_scene, scene_hash)

DESIGN_ARGS = ["design", "--taper", "15", "--length", "80", "--tip-width", "4"]


@pytest.fixture(scope="module")
def design_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "arm80.json"
    assert main(DESIGN_ARGS + ["--out", str(path)]) == 0
    return path


@pytest.fixture(scope="module")
def empty_scene_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "empty.json"
    save_scene(path, [])
    return path


@pytest.fixture(scope="module")
def probe_scene_file(tmp_path_factory):
    # overlaps the straightened arm, so the sweep cannot miss it
    path = tmp_path_factory.mktemp("cli") / "probe.json"
    save_scene(path, [SceneObject.probe((60.0, 10.0), 8.0, 0.01)])
    return path


class TestDesignCommand:
    def test_writes_a_loadable_document(self, design_file):
        from spiralarm.geometry import robot_length
        design, material = load_design(design_file)
        built = robot_length(design.params, design.params.theta0)
        assert built == pytest.approx(80.0, abs=1e-9)
        assert material is None

    def test_stdout_is_pure_json_config_goes_to_stderr(self, capsys):
        assert main(DESIGN_ARGS) == 0
        out, err = capsys.readouterr()
        doc = json.loads(out)
        assert doc["kind"] == "design"
        assert "taper=15.0" in err
        assert "root_width_mm" in err

    def test_reruns_are_byte_identical(self, capsys, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        assert main(DESIGN_ARGS + ["--out", str(a)]) == 0
        first = capsys.readouterr()
        assert main(DESIGN_ARGS + ["--out", str(b)]) == 0
        second = capsys.readouterr()
        assert a.read_bytes() == b.read_bytes()
        assert first.out == second.out

    def test_profile_and_mesh_sidecars(self, tmp_path, capsys):
        svg = tmp_path / "cut.svg"
        txt = tmp_path / "cut.txt"
        stl = tmp_path / "arm.stl"
        rc = main(DESIGN_ARGS + ["--out", str(tmp_path / "d.json"),
                                 "--profile-out", str(svg),
                                 "--mesh-out", str(stl)])
        assert rc == 0
        assert svg.read_text().startswith("<?xml")
        assert stl.read_text().startswith("solid ")
        rc = main(DESIGN_ARGS + ["--out", str(tmp_path / "d2.json"),
                                 "--profile-out", str(txt)])
        assert rc == 0
        assert not txt.read_text().startswith("<?xml")
        capsys.readouterr()

    def test_zero_taper_is_infeasible(self, capsys):
        assert main(["design", "--taper", "0"]) == 2
        assert "infeasible" in capsys.readouterr().err

    def test_usage_errors(self, capsys):
        assert main(["design"]) == 1                      # taper is required
        assert main(["design", "--taper", "15", "--no-such-flag"]) == 1
        assert main(["no-such-command"]) == 1
        assert main([]) == 1
        capsys.readouterr()


class TestAnalyzeCommand:
    def test_table_layout(self, design_file, capsys):
        assert main(["analyze", str(design_file)]) == 0
        out = capsys.readouterr().out
        lines = out.strip().split("\n")
        design, _ = load_design(design_file)
        header = [ln for ln in lines if ln.startswith("#")]
        rows = [ln for ln in lines if not ln.startswith("#")]
        assert any("taper_deg" in ln for ln in header)
        assert any("deformation_rate" in ln for ln in header)
        assert rows[0].startswith("unit,")
        assert len(rows) - 1 == len(design.units)

    def test_byte_identical_reruns(self, design_file, capsys):
        assert main(["analyze", str(design_file)]) == 0
        first = capsys.readouterr().out
        assert main(["analyze", str(design_file)]) == 0
        assert capsys.readouterr().out == first

    def test_missing_file_is_a_usage_error(self, tmp_path, capsys):
        assert main(["analyze", str(tmp_path / "nope.json")]) == 1
        capsys.readouterr()

    def test_corrupt_document_is_infeasible(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert main(["analyze", str(bad)]) == 2
        capsys.readouterr()


class TestWorkspaceCommand:
    def test_samples_and_header(self, design_file, capsys):
        rc = main(["workspace", str(design_file), "--samples", "20"])
        assert rc == 0
        out = capsys.readouterr().out
        lines = out.strip().split("\n")
        assert lines[0].startswith("# samples: 20")
        dropped = int(lines[0].rsplit("dropped:", 1)[1])
        data = [ln for ln in lines if "," in ln and not ln.startswith("#")]
        assert len(data) - 1 == 20 - dropped   # minus the column header

    def test_seed_controls_the_draw(self, design_file, capsys):
        args = ["workspace", str(design_file), "--samples", "8"]
        assert main(args) == 0
        first = capsys.readouterr().out
        assert main(args) == 0
        assert capsys.readouterr().out == first
        assert main(args + ["--seed", "7"]) == 0
        assert capsys.readouterr().out != first


class TestEpisodeCommands:
    def test_grasp_without_objects_fails_with_no_contact(
            self, design_file, empty_scene_file, capsys):
        rc = main(["grasp", str(design_file), str(empty_scene_file)])
        assert rc == 3
        assert "failure (no contact)" in capsys.readouterr().out

    def test_probe_detects_and_logs(self, design_file, probe_scene_file,
                                    tmp_path, capsys):
        log = tmp_path / "episode.csv"
        rc = main(["probe", str(design_file), str(probe_scene_file),
                   "--out", str(log)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "outcome: success" in out
        assert "detection_t=" in out
        loaded = load_episode(log)
        design, material = load_design(design_file)
        assert loaded.design_hash == design_hash(design, material)
        from spiralarm.storage import load_scene
        assert loaded.scene_hash == scene_hash(load_scene(probe_scene_file))
        assert loaded.episode.rows

    def test_unknown_config_key_is_infeasible(self, design_file,
                                              empty_scene_file, tmp_path,
                                              capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text('{"bogus_knob": 1}')
        rc = main(["grasp", str(design_file), str(empty_scene_file),
                   "--config", str(cfg)])
        assert rc == 2
        assert "bad controller config" in capsys.readouterr().err


class TestTeleopCommand:
    def test_unresolvable_host_is_an_io_error(self, design_file,
                                              empty_scene_file, capsys):
        rc = main(["teleop", str(design_file), str(empty_scene_file),
                   "--host", "999.999.999.999"])
        assert rc == 1
        capsys.readouterr()
