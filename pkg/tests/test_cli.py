"""CLI command behavior, exit codes and help golden files."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from aleks.cli import build_parser, main

from conftest import normalized_ledger_file, scripted_run, write_vineyard_csv

DATA_DIR = Path(__file__).parent / "data"


def write_responses_file(path: Path, responses: dict) -> Path:
    with open(path, "w") as fh:
        for (role, iteration, attempt), completion in responses.items():
            fh.write(
                json.dumps(
                    {
                        "role": role,
                        "iteration": iteration,
                        "attempt": attempt,
                        "completion": completion,
                    }
                )
                + "\n"
            )
    return path


@pytest.fixture
def scripted_setup(tmp_path):
    """A config file wired to a scripted backend plus a dataset."""
    csv = write_vineyard_csv(tmp_path / "vineyard.csv")
    responses = scripted_run(3, stop_after=True, recommend=3)
    responses_file = write_responses_file(tmp_path / "responses.jsonl", responses)
    config = tmp_path / "run.toml"
    config.write_text(
        f'workspace = "{tmp_path / "ws"}"\n'
        "[backend]\n"
        'kind = "scripted"\n'
        f'responses_file = "{responses_file}"\n'
    )
    return csv, config, tmp_path / "ws"


class TestHelpGolden:
    @pytest.mark.parametrize(
        "name", ["main", "run", "repeat", "replay", "export", "report", "cross_year"]
    )
    def test_help_matches_golden(self, name, monkeypatch):
        monkeypatch.setenv("COLUMNS", "80")
        parser = build_parser()
        if name == "main":
            rendered = parser.format_help()
        else:
            choices = parser._subparsers._group_actions[0].choices
            rendered = choices[name.replace("_", "-")].format_help()
        golden = (DATA_DIR / f"help_{name}.txt").read_text()
        assert rendered == golden

    def test_every_documented_flag_listed(self):
        text = "".join(
            (DATA_DIR / f"help_{n}.txt").read_text()
            for n in ("run", "repeat", "replay", "export", "report", "cross_year")
        )
        for flag in (
            "--config",
            "--question",
            "--data",
            "--workspace",
            "--preset",
            "--budget",
            "--backend",
            "--repeat",
            "--parallel",
            "--delta",
        ):
            assert flag in text


class TestRunCommand:
    def test_scripted_run_exits_zero(self, scripted_setup, capsys):
        csv, config, workspace = scripted_setup
        code = main(
            [
                "run",
                "--config",
                str(config),
                "--question",
                "predict grbd-infected grapevines in 2023",
                "--data",
                str(csv),
            ]
        )
        assert code == 0
        assert (workspace / "report.txt").exists()
        assert "Recommended iteration: 3" in capsys.readouterr().out

    def test_relative_workspace_and_data_paths(self, scripted_setup, monkeypatch, tmp_path):
        csv, config, workspace = scripted_setup
        monkeypatch.chdir(tmp_path)
        rel_config = tmp_path / "rel.toml"
        rel_config.write_text(
            config.read_text().replace(str(workspace), "relws")
        )
        code = main(
            [
                "run",
                "--config",
                str(rel_config),
                "--question",
                "predict grbd-infected grapevines in 2023",
                "--data",
                csv.name,
            ]
        )
        assert code == 0
        assert (tmp_path / "relws" / "report.json").exists()

    def test_missing_dataset_is_config_error(self, scripted_setup, capsys):
        _, config, _ = scripted_setup
        code = main(
            ["run", "--config", str(config), "--question", "q 2023", "--data", "absent.csv"]
        )
        assert code == 1
        assert "absent.csv" in capsys.readouterr().err

    def test_scripted_miss_is_backend_error(self, tmp_path, capsys):
        csv = write_vineyard_csv(tmp_path / "v.csv")
        responses_file = write_responses_file(tmp_path / "r.jsonl", {})
        config = tmp_path / "c.toml"
        config.write_text(
            f'workspace = "{tmp_path / "ws"}"\n[backend]\nkind = "scripted"\n'
            f'responses_file = "{responses_file}"\n'
        )
        code = main(["run", "--config", str(config), "--question", "q 2023", "--data", str(csv)])
        assert code == 3

    def test_halted_run_exits_two(self, tmp_path):
        csv = write_vineyard_csv(tmp_path / "v.csv")
        garbage = {("data-analyst", 1, a): "word salad" for a in (1, 2, 3, 4)}
        responses_file = write_responses_file(tmp_path / "r.jsonl", garbage)
        config = tmp_path / "c.toml"
        config.write_text(
            f'workspace = "{tmp_path / "ws"}"\n[backend]\nkind = "scripted"\n'
            f'responses_file = "{responses_file}"\n'
        )
        code = main(["run", "--config", str(config), "--question", "q 2023", "--data", str(csv)])
        assert code == 2

    def test_unknown_preset_rejected_by_parser(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["run", "--preset", "exp9", "--question", "q"])


class TestRepeatCommand:
    def test_two_runs_and_aggregate(self, scripted_setup):
        csv, config, workspace = scripted_setup
        code = main(
            [
                "repeat",
                "--config",
                str(config),
                "--question",
                "predict grbd in 2023",
                "--data",
                str(csv),
                "--repeat",
                "2",
            ]
        )
        assert code == 0
        assert (workspace / "run_01" / "report.json").exists()
        assert (workspace / "run_02" / "report.json").exists()
        assert (workspace / "frequency.csv").exists()

    def test_parallel_children(self, scripted_setup):
        csv, config, workspace = scripted_setup
        code = main(
            [
                "repeat",
                "--config",
                str(config),
                "--question",
                "predict grbd in 2023",
                "--data",
                str(csv),
                "--repeat",
                "3",
                "--parallel",
            ]
        )
        assert code == 0
        for k in (1, 2, 3):
            assert (workspace / f"run_{k:02d}" / "report.json").exists()


class TestWorkspaceCommands:
    @pytest.fixture
    def finished(self, scripted_setup):
        csv, config, workspace = scripted_setup
        assert (
            main(
                [
                    "run",
                    "--config",
                    str(config),
                    "--question",
                    "predict grbd-infected grapevines in 2023",
                    "--data",
                    str(csv),
                ]
            )
            == 0
        )
        return csv, config, workspace

    def test_report_command(self, finished, capsys):
        _, _, workspace = finished
        assert main(["report", "--workspace", str(workspace)]) == 0
        assert "Recommended iteration" in capsys.readouterr().out

    def test_report_missing_workspace(self, tmp_path):
        assert main(["report", "--workspace", str(tmp_path)]) == 2

    def test_export_heatmap(self, finished, capsys):
        csv, _, workspace = finished
        assert main(["export", "heatmap", "--workspace", str(workspace), "--data", str(csv)]) == 0
        lines = (workspace / "heatmap.csv").read_text().strip().splitlines()
        assert len(lines) == 2 + 3  # two header rows + one row per iteration

    def test_export_frequency(self, finished):
        _, _, workspace = finished
        assert main(["export", "frequency", "--workspace", str(workspace)]) == 0
        assert (workspace / "frequency.csv").read_text().startswith("feature,kind,frequency")

    def test_export_empty_workspace(self, tmp_path):
        assert main(["export", "heatmap", "--workspace", str(tmp_path)]) == 2

    def test_cross_year_identity(self, finished, capsys):
        csv, _, workspace = finished
        assert main(["cross-year", "--workspace", str(workspace), "--data", str(csv), "--delta", "0"]) == 0
        out = capsys.readouterr().out
        assert "model_type" in out or "regression" in out

    def test_cross_year_out_of_range(self, finished):
        csv, _, workspace = finished
        assert (
            main(["cross-year", "--workspace", str(workspace), "--data", str(csv), "--delta", "10"])
            == 2
        )

    def test_replay_reproduces_ledger(self, finished):
        csv, _, workspace = finished
        code = main(
            [
                "replay",
                "--workspace",
                str(workspace),
                "--question",
                "predict grbd-infected grapevines in 2023",
                "--data",
                str(csv),
            ]
        )
        assert code == 0
        original = normalized_ledger_file(workspace / "ledger.jsonl")
        replayed = normalized_ledger_file(workspace / "replay" / "ledger.jsonl")
        assert replayed == original
