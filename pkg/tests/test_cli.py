"""CLI: end-to-end runs, coverage verification, exports, exit codes."""

from __future__ import annotations

import json
import socket
import zipfile
from pathlib import Path

import pytest
from click.testing import CliRunner

from analogykit.cli import main
from analogykit.model import PipelineSession

WATER_CHECKLIST_DOC = {
    "analogy_id": "water1",
    "items": [
        {"canonical": "two water tanks", "aliases": ["water tanks"], "criticality": "required"},
        {"canonical": "connecting tube", "aliases": ["narrow tube"], "criticality": "required"},
        {
            "canonical": "water level difference",
            "aliases": ["one tank fuller", "fuller than the other"],
            "criticality": "required",
        },
        {"canonical": "water flow", "aliases": ["flowing water"], "criticality": "required"},
    ],
}


@pytest.fixture
def runner():
    return CliRunner()


class TestRun:
    def test_mock_end_to_end(self, runner, tmp_path):
        out = tmp_path / "artifacts"
        result = runner.invoke(
            main,
            ["run", "--concept", "Newton's First Law", "--subject", "physics",
             "--mock", "--out", str(out)],
        )
        assert result.exit_code == 0, result.output
        images = sorted(p.name for p in out.glob("scene_*.png"))
        assert images == ["scene_1.png", "scene_2.png", "scene_3.png", "scene_4.png"]
        assert (out / "storyboard.json").exists()
        assert (out / "storyboard.md").exists()
        assert (out / "session.json").exists()
        videos = list(out.glob("video.*"))
        assert len(videos) == 1

        session = json.loads((out / "session.json").read_text())
        assert session["state"] == "video_ready"
        assert len(session["analogies"]) == 3

    def test_same_seed_reruns_byte_identical(self, runner, tmp_path):
        outs = [tmp_path / "one", tmp_path / "two"]
        for out in outs:
            result = runner.invoke(
                main,
                ["run", "--concept", "Newton's First Law", "--mock",
                 "--seed", "0", "--out", str(out)],
            )
            assert result.exit_code == 0, result.output
        first = (outs[0] / "storyboard.json").read_bytes()
        second = (outs[1] / "storyboard.json").read_bytes()
        assert first == second

    def test_choose_index(self, runner, tmp_path):
        out = tmp_path / "choice"
        result = runner.invoke(
            main,
            ["run", "--concept", "Newton's First Law", "--mock", "--choose", "2",
             "--out", str(out)],
        )
        assert result.exit_code == 0, result.output
        session = json.loads((out / "session.json").read_text())
        chosen = session["chosen_analogy_id"]
        titles = {a["id"]: a["title"] for a in session["analogies"]}
        assert titles[chosen] == "Pushing a stalled car"

    def test_empty_concept_usage_error(self, runner, tmp_path):
        result = runner.invoke(
            main, ["run", "--concept", "", "--mock", "--out", str(tmp_path / "x")]
        )
        assert result.exit_code == 2

    def test_choose_out_of_range_usage_error(self, runner, tmp_path):
        result = runner.invoke(
            main,
            ["run", "--concept", "Gravity", "--mock", "--choose", "5",
             "--out", str(tmp_path / "x")],
        )
        assert result.exit_code == 2

    def test_rejected_concept_stage_failure(self, runner, tmp_path):
        result = runner.invoke(
            main, ["run", "--concept", "asdfgh", "--mock", "--out", str(tmp_path / "x")]
        )
        assert result.exit_code == 4
        assert "rejected" in result.output

    def test_mock_needs_no_network(self, runner, tmp_path, monkeypatch):
        def refuse(*args, **kwargs):
            raise AssertionError("network access attempted during --mock run")

        monkeypatch.setattr(socket.socket, "connect", refuse)
        monkeypatch.setattr(socket, "create_connection", refuse)
        result = runner.invoke(
            main,
            ["run", "--concept", "Recursion", "--subject", "programming",
             "--mock", "--out", str(tmp_path / "offline")],
        )
        assert result.exit_code == 0, result.output

    def test_fallback_archive_shape(self, runner, tmp_path):
        out = tmp_path / "archive"
        result = runner.invoke(
            main, ["run", "--concept", "Gravity", "--mock", "--out", str(out)]
        )
        assert result.exit_code == 0, result.output
        video = next(iter(out.glob("video.*")))
        if video.suffix == ".zip":
            names = zipfile.ZipFile(video).namelist()
            assert "manifest.json" in names
            assert len([n for n in names if n.startswith("keyframes/")]) == 20


class TestCoverageVerify:
    def write_inputs(self, tmp_path, caption: str):
        checklist = tmp_path / "checklist.json"
        checklist.write_text(json.dumps(WATER_CHECKLIST_DOC))
        text = tmp_path / "caption.txt"
        text.write_text(caption)
        return checklist, text

    def test_missing_tube_reported(self, runner, tmp_path):
        checklist, text = self.write_inputs(
            tmp_path, "two water tanks, one fuller than the other"
        )
        result = runner.invoke(
            main, ["coverage", "verify", "--checklist", str(checklist), "--text", str(text)]
        )
        assert result.exit_code == 0, result.output
        report = json.loads(result.output[: result.output.rindex("}") + 1])
        assert "connecting tube" in report["missing_required"]

    def test_empty_text_all_missing(self, runner, tmp_path):
        checklist, text = self.write_inputs(tmp_path, "")
        result = runner.invoke(
            main, ["coverage", "verify", "--checklist", str(checklist), "--text", str(text)]
        )
        assert result.exit_code == 0
        report = json.loads(result.output[: result.output.rindex("}") + 1])
        assert report["coverage_ratio"] == 0.0
        assert len(report["missing_required"]) == 4

    def test_full_coverage_ratio_one(self, runner, tmp_path):
        checklist, text = self.write_inputs(
            tmp_path,
            "two water tanks joined by a narrow tube, one tank fuller, "
            "with flowing water between them",
        )
        result = runner.invoke(
            main, ["coverage", "verify", "--checklist", str(checklist), "--text", str(text)]
        )
        assert result.exit_code == 0
        report = json.loads(result.output)
        assert report["coverage_ratio"] == 1.0
        assert report["missing_required"] == []

    def test_missing_file_usage_error(self, runner, tmp_path):
        result = runner.invoke(
            main,
            ["coverage", "verify", "--checklist", str(tmp_path / "nope.json"),
             "--text", str(tmp_path / "nope.txt")],
        )
        assert result.exit_code == 2


class TestExport:
    def run_pipeline(self, runner, tmp_path) -> tuple[str, Path]:
        out = tmp_path / "run"
        data_root = tmp_path / "store"
        result = runner.invoke(
            main,
            ["run", "--concept", "Newton's First Law", "--mock",
             "--out", str(out), "--data-root", str(data_root)],
        )
        assert result.exit_code == 0, result.output
        session = json.loads((out / "session.json").read_text())
        return session["id"], data_root

    def test_markdown_export(self, runner, tmp_path):
        session_id, data_root = self.run_pipeline(runner, tmp_path)
        result = runner.invoke(
            main,
            ["export", "--session", session_id, "--format", "markdown",
             "--data-root", str(data_root)],
        )
        assert result.exit_code == 0, result.output
        assert result.output.count("![Scene") == 4
        assert "# Newton's First Law" in result.output

    def test_doc_export_round_trips(self, runner, tmp_path):
        session_id, data_root = self.run_pipeline(runner, tmp_path)
        out_file = tmp_path / "session-export.json"
        result = runner.invoke(
            main,
            ["export", "--session", session_id, "--format", "doc",
             "--out", str(out_file), "--data-root", str(data_root)],
        )
        assert result.exit_code == 0, result.output
        doc = json.loads(out_file.read_text())
        restored = PipelineSession.from_doc(doc)
        assert restored.to_doc() == doc
        assert restored.id == session_id

    def test_unknown_session_exit_3(self, runner, tmp_path):
        result = runner.invoke(
            main,
            ["export", "--session", "doesnotexist", "--data-root",
             str(tmp_path / "empty-store")],
        )
        assert result.exit_code == 3
