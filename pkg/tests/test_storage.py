"""Document round-trips, format guards, and episode log integrity.

Round-trip exactness is the load-bearing property: a reloaded design must
reproduce every float bit for bit, since downstream hashes and replays key
off those values.
"""
import json
import math

import numpy as np
import pytest

from spiralarm.chain import MaterialConfig
from spiralarm.control import ControllerConfig, EpisodeOutcome, EpisodeRow, GraspEpisode, GraspPhase
from spiralarm.geometry import design_from_spec, exact_length_spec
from spiralarm.solver import SceneObject
from spiralarm.storage import (
    FORMAT_VERSION,
    SceneContent,
    StorageError,
    design_from_document,
    design_hash,
    design_to_document,
    load_design,
    load_episode,
    load_scene,
    save_design,
    save_episode,
    save_scene,
    scene_from_document,
    scene_hash,
    scene_to_document,
)


def sample_design(length=250.0, tip=5.5, taper_deg=15.0):
    return design_from_spec(exact_length_spec(length, tip, math.radians(taper_deg)))


def designs_equal(a, b):
    assert a.params.a == b.params.a
    assert a.params.b == b.params.b
    assert a.params.theta0 == b.params.theta0
    assert a.params.delta_theta == b.params.delta_theta
    assert a.params.theta0_presnap == b.params.theta0_presnap
    for field in ("robot_length", "tip_width", "taper_angle", "delta_theta",
                  "cable_count", "layer_fraction", "cable_diameter"):
        assert getattr(a.spec, field) == getattr(b.spec, field)
    assert len(a.units) == len(b.units)
    for ua, ub in zip(a.units, b.units):
        assert ua.index == ub.index
        assert ua.scale == ub.scale
        assert ua.width == ub.width
        assert np.array_equal(ua.quad_left, ub.quad_left)
        assert np.array_equal(ua.quad_right, ub.quad_right)
        assert np.array_equal(ua.hinge_point, ub.hinge_point)
        assert np.array_equal(ua.cable_holes, ub.cable_holes)
    assert np.array_equal(a.layer_thickness_per_joint, b.layer_thickness_per_joint)
    assert np.array_equal(a.gap_per_joint, b.gap_per_joint)
    assert a.cable_count == b.cable_count


class TestDesignDocuments:
    def test_round_trip_file_bit_exact(self, tmp_path):
        design = sample_design()
        mat = MaterialConfig(elastic_modulus=26.0, depth=12.5)
        path = tmp_path / "d.json"
        save_design(path, design, mat)
        loaded, loaded_mat = load_design(path)
        designs_equal(design, loaded)
        assert loaded_mat.elastic_modulus == 26.0
        assert loaded_mat.depth == 12.5

    def test_round_trip_many_designs(self):
        # bit-exactness must hold across the whole design space, not one point
        rng = np.random.default_rng(7)
        for _ in range(100):
            length = float(rng.uniform(120.0, 400.0))
            tip = float(rng.uniform(3.0, 9.0))
            taper = float(rng.uniform(4.0, 20.0))
            design = sample_design(length, tip, taper)
            loaded, _ = design_from_document(design_to_document(design))
            designs_equal(design, loaded)

    def test_material_optional(self):
        doc = design_to_document(sample_design())
        assert doc["material"] is None
        _, mat = design_from_document(doc)
        assert mat is None

    def test_missing_format_version(self):
        doc = design_to_document(sample_design())
        del doc["format_version"]
        with pytest.raises(StorageError, match="format_version"):
            design_from_document(doc)

    def test_rejects_future_major(self):
        doc = design_to_document(sample_design())
        doc["format_version"] = "2.0"
        with pytest.raises(StorageError, match="2.0"):
            design_from_document(doc)

    def test_accepts_newer_minor(self):
        doc = design_to_document(sample_design())
        doc["format_version"] = "1.9"
        design_from_document(doc)

    def test_wrong_kind(self):
        doc = design_to_document(sample_design())
        doc["kind"] = "scene"
        with pytest.raises(StorageError):
            design_from_document(doc)

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "d.json"
        save_design(path, sample_design())
        text = path.read_text()
        path.write_text(text[: len(text) // 2])
        with pytest.raises(StorageError):
            load_design(path)

    def test_hash_stable_and_discriminating(self):
        d15 = sample_design(taper_deg=15.0)
        d10 = sample_design(taper_deg=10.0)
        assert design_hash(d15) == design_hash(d15)
        assert design_hash(d15) != design_hash(d10)

    def test_hash_ignores_provenance(self, monkeypatch):
        design = sample_design()
        before = design_hash(design)
        monkeypatch.setenv("SOURCE_DATE_EPOCH", "1234567890")
        assert design_hash(design) == before


class TestSceneDocuments:
    def scene(self):
        return SceneContent(
            objects=(
                SceneObject.disk((120.0, -15.0), 20.0, friction_mu=0.3),
                SceneObject.polygon([(-20.0, -50.0), (300.0, -50.0), (300.0, -35.0)]),
                SceneObject.probe((90.0, 87.0), 8.0, 0.01),
            ),
            gravity=False,
            workspace_bounds=(-50.0, 320.0, -60.0, 140.0),
        )

    def test_round_trip(self, tmp_path):
        path = tmp_path / "s.json"
        save_scene(path, self.scene())
        loaded = load_scene(path)
        orig = self.scene()
        assert len(loaded.objects) == 3
        for a, b in zip(orig.objects, loaded.objects):
            assert a.kind == b.kind
            assert a.friction_mu == b.friction_mu
            if a.kind == "polygon":
                assert np.array_equal(a.vertices, b.vertices)
            else:
                assert np.array_equal(a.center, b.center)
                assert a.radius == b.radius
        assert loaded.objects[2].stiffness == 0.01
        assert loaded.gravity is False
        assert loaded.workspace_bounds == orig.workspace_bounds

    def test_bare_object_list_accepted(self):
        doc = scene_to_document([SceneObject.disk((0.0, 0.0), 5.0)])
        assert scene_from_document(doc).objects[0].kind == "disk"

    def test_unknown_object_type_reports_position(self):
        doc = scene_to_document(self.scene())
        doc["objects"][1] = {"kind": "capsule", "center": [0, 0], "radius": 1}
        with pytest.raises(StorageError, match=r"objects\[1\].*capsule"):
            scene_from_document(doc)

    def test_missing_field_reports_position(self):
        doc = scene_to_document(self.scene())
        del doc["objects"][0]["radius"]
        with pytest.raises(StorageError, match=r"objects\[0\]"):
            scene_from_document(doc)

    def test_bad_bounds(self):
        doc = scene_to_document(self.scene())
        doc["workspace_bounds"] = [1.0, 2.0, 3.0]
        with pytest.raises(StorageError, match="workspace_bounds"):
            scene_from_document(doc)

    def test_hash_ignores_provenance(self, monkeypatch):
        before = scene_hash(self.scene())
        monkeypatch.setenv("SOURCE_DATE_EPOCH", "22")
        assert scene_hash(self.scene()) == before


def synthetic_episode(n=5, dt=0.01):
    # hand-built rows exercise the text format without running the solver
    rows = []
    phases = [GraspPhase.PACKING] + [GraspPhase.REACHING] * (n - 1)
    for i in range(n):
        x = 0.1 + 0.2 * i  # accumulates representation error on purpose
        rows.append(EpisodeRow(
            t=i * dt, phase=phases[i],
            target_lengths=(200.0 + x, 409.0 - x),
            lengths=(200.0 + x * (1 + 1e-16), 409.0 - x),
            tensions=(math.pi * i, 1e-17 * i),
            currents=(math.pi * i, 1e-17 * i),
            tip_pose=(253.2, -1e-9, 0.3 * i),
            contact_arc=0.0))
    outcome = EpisodeOutcome(False, "no contact")
    return GraspEpisode(rows=tuple(rows), outcome=outcome,
                        contact_threshold=6.5e-6,
                        config=ControllerConfig(), seed=3)


class TestEpisodeLogs:
    def test_round_trip_bit_exact(self, tmp_path):
        ep = synthetic_episode()
        path = tmp_path / "e.log"
        save_episode(path, ep, design_hash=64 * "a", scene_hash=64 * "b")
        loaded = load_episode(path)
        assert loaded.design_hash == 64 * "a"
        assert loaded.scene_hash == 64 * "b"
        assert loaded.episode.seed == 3
        assert loaded.episode.contact_threshold == ep.contact_threshold
        assert loaded.episode.outcome == ep.outcome
        assert loaded.episode.config == ep.config
        assert len(loaded.episode.rows) == len(ep.rows)
        for a, b in zip(ep.rows, loaded.episode.rows):
            assert a == b

    def test_save_is_deterministic(self, tmp_path):
        ep = synthetic_episode()
        p1, p2 = tmp_path / "1.log", tmp_path / "2.log"
        save_episode(p1, ep, 64 * "a", 64 * "b")
        save_episode(p2, ep, 64 * "a", 64 * "b")
        assert p1.read_bytes() == p2.read_bytes()

    def test_rows_must_advance_in_time(self, tmp_path):
        ep = synthetic_episode()
        stuck = GraspEpisode(rows=(ep.rows[0], ep.rows[0]), outcome=ep.outcome,
                             contact_threshold=ep.contact_threshold,
                             config=ep.config, seed=ep.seed)
        with pytest.raises(StorageError, match="time"):
            save_episode(tmp_path / "e.log", stuck, 64 * "a", 64 * "b")

    def test_load_rejects_shuffled_rows(self, tmp_path):
        path = tmp_path / "e.log"
        save_episode(path, synthetic_episode(), 64 * "a", 64 * "b")
        lines = path.read_text().splitlines()
        lines[1], lines[2] = lines[2], lines[1]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(StorageError, match="time"):
            load_episode(path)

    def test_load_rejects_mangled_header(self, tmp_path):
        path = tmp_path / "e.log"
        save_episode(path, synthetic_episode(), 64 * "a", 64 * "b")
        lines = path.read_text().splitlines()
        header = json.loads(lines[0])
        del header["format_version"]
        lines[0] = json.dumps(header)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(StorageError, match="format_version"):
            load_episode(path)
