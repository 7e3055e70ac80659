"""Tests for the stage runner and its manifest."""
import numpy as np
import pytest

from gshell import formats
from gshell.config import PipelineSpec, StageSpec, load_pipeline_spec, pipeline_spec_from_dict
from gshell.errors import FormatError, InvalidArgumentError
from gshell.pipeline import MANIFEST_NAME, check_stage_types, manifest_hashes, run_pipeline
from gshell.utils import CONFIG_DIR, stage_rng


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _small_hemisphere(output_dir):
    return pipeline_spec_from_dict(
        {
            "output_dir": str(output_dir),
            "seed": 3,
            "stages": [
                {"kind": "gen", "config": {"shape": "hemisphere", "resolution": 6, "points": 500}},
                {
                    "kind": "fit",
                    "config": {"resolution": 6, "iterations": 3, "samples_per_iter": 200, "eval_samples": 500, "log_every": 1},
                },
                {"kind": "extract", "config": {"boundary": True}},
                {"kind": "check"},
                {"kind": "winding", "config": {"samples": 50}},
                {"kind": "metrics", "config": {"samples": 500}},
                {"kind": "tensorize"},
            ],
        }
    )


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------

class TestRunPipeline:
    def test_empty_stage_list(self, tmp_path):
        manifest = run_pipeline(PipelineSpec(stages=[], output_dir=tmp_path))
        assert manifest["status"] == "ok"
        assert manifest["artifacts"] == []
        assert (tmp_path / MANIFEST_NAME).exists()

    def test_gen_extract_check(self, tmp_path):
        spec = PipelineSpec(
            stages=[
                StageSpec("gen", {"shape": "sphere", "resolution": 16}),
                StageSpec("extract", {"mode": "watertight"}),
                StageSpec("check"),
            ],
            output_dir=tmp_path,
        )
        manifest = run_pipeline(spec)
        assert [a["path"] for a in manifest["artifacts"]] == ["gen.grid.json", "extract.obj", "check.json"]
        assert [s["status"] for s in manifest["stages"]] == ["ok", "ok", "ok"]
        report = formats.read_report(tmp_path / "check.json")
        assert report["euler_characteristic"] == 2
        assert report["is_closed"]
        assert formats.read_report(tmp_path / MANIFEST_NAME) == manifest

    def test_full_small_pipeline_is_reproducible(self, tmp_path):
        first = run_pipeline(_small_hemisphere(tmp_path / "a"))
        second = run_pipeline(_small_hemisphere(tmp_path / "b"))
        assert first["status"] == "ok"
        assert "extract.boundary.json" in manifest_hashes(first)
        assert "tensorize.gsp" in manifest_hashes(first)
        assert manifest_hashes(first) == manifest_hashes(second)

    def test_missing_input_is_rejected_before_running(self, tmp_path):
        spec = PipelineSpec(stages=[StageSpec("extract")], output_dir=tmp_path / "out")
        with pytest.raises(InvalidArgumentError, match="no earlier stage"):
            run_pipeline(spec)
        assert not (tmp_path / "out").exists()

    def test_unknown_kind(self, tmp_path):
        with pytest.raises(InvalidArgumentError, match="unknown kind"):
            check_stage_types(PipelineSpec(stages=[StageSpec("render")], output_dir=tmp_path))

    def test_fit_from_points_file_needs_no_producer(self, tmp_path):
        spec = PipelineSpec(stages=[StageSpec("fit", {"points_file": "cloud.ply"})], output_dir=tmp_path)
        check_stage_types(spec)

    def test_failing_stage_is_recorded(self, tmp_path):
        bad = tmp_path / "cloud.ply"
        bad.write_text("not a point cloud\n")
        spec = PipelineSpec(
            stages=[
                StageSpec("gen", {"shape": "sphere", "resolution": 4}),
                StageSpec("fit", {"points_file": str(bad), "resolution": 4, "iterations": 2}),
            ],
            output_dir=tmp_path / "out",
        )
        with pytest.raises(FormatError):
            run_pipeline(spec)
        manifest = formats.read_report(tmp_path / "out" / MANIFEST_NAME)
        assert manifest["status"] == "failed"
        assert [s["status"] for s in manifest["stages"]] == ["ok", "failed"]
        assert "FormatError" in manifest["error"]


# ---------------------------------------------------------------------------
# Spec loading
# ---------------------------------------------------------------------------

class TestPipelineSpec:
    def test_yaml(self, tmp_path):
        path = tmp_path / "pipeline.yaml"
        path.write_text("output_dir: out\nseed: 5\nstages:\n  - kind: gen\n    config:\n      shape: sphere\n  - kind: extract\n    name: mesh\n")
        spec = load_pipeline_spec(path)
        assert spec.output_dir == tmp_path / "out"
        assert spec.seed == 5
        assert [s.name for s in spec.stages] == ["gen", "mesh"]
        assert spec.stages[0].config == {"shape": "sphere"}

    @pytest.mark.parametrize("name", ["hemisphere_pipeline.yaml", "sphere_check_pipeline.yaml"])
    def test_bundled_specs_type_check(self, name):
        spec = load_pipeline_spec(CONFIG_DIR / name)
        check_stage_types(spec)
        assert spec.output_dir.is_relative_to(CONFIG_DIR)

    def test_duplicate_names(self):
        with pytest.raises(InvalidArgumentError, match="unique"):
            pipeline_spec_from_dict({"stages": [{"kind": "check"}, {"kind": "check"}]})

    def test_stage_without_kind(self):
        with pytest.raises(FormatError):
            pipeline_spec_from_dict({"stages": [{"config": {}}]})

    def test_bad_yaml(self, tmp_path):
        path = tmp_path / "pipeline.yaml"
        path.write_text("stages:\n  - kind: gen\n   bad: [\n")
        with pytest.raises(FormatError):
            load_pipeline_spec(path)


class TestStageRng:
    def test_same_key_same_stream(self):
        a = stage_rng(1, "fit", 2).random(5)
        b = stage_rng(1, "fit", 2).random(5)
        assert np.array_equal(a, b)

    def test_keys_are_independent(self):
        base = stage_rng(1, "fit", 2).random(5)
        assert not np.array_equal(base, stage_rng(2, "fit", 2).random(5))
        assert not np.array_equal(base, stage_rng(1, "gen", 2).random(5))
        assert not np.array_equal(base, stage_rng(1, "fit", 3).random(5))
