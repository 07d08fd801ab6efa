"""End-to-end command tests: exit codes, artifacts, and run determinism.

Everything drives main() in-process so coverage and monkeypatching work; no
subprocesses are spawned.
"""

import json
import math

import pytest

import corpus
from sqldecomp.cli import (
    EXIT_CASES,
    EXIT_CONFIG,
    EXIT_OK,
    ConfigError,
    RunConfig,
    _task_seed,
    build_parser,
    main,
    make_config,
)


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    monkeypatch.delenv("SQLDECOMP_ENDPOINT", raising=False)
    monkeypatch.delenv("SQLDECOMP_API_KEY", raising=False)


@pytest.fixture(scope="module")
def small_tasks(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "tasks.jsonl"
    corpus.write_tasks_file(corpus.CORPUS[:4], path)
    return path


def run(argv):
    return main([str(a) for a in argv])


class TestArgumentPlumbing:
    def test_no_command_is_a_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            run([])
        assert exc.value.code == 2

    def test_seed_mixing_is_stable_per_task(self):
        assert _task_seed(0, "retail_001") == _task_seed(0, "retail_001")
        assert _task_seed(0, "retail_001") != _task_seed(0, "retail_002")
        assert _task_seed(1, "retail_001") != _task_seed(0, "retail_001")
        assert 0 <= _task_seed(123, "anything") <= 0x7FFFFFFF

    def test_config_file_fills_gaps_but_flags_win(self, tmp_path, small_tasks, db_root):
        config_file = tmp_path / "run.json"
        config_file.write_text(json.dumps({"noise": 0.5, "seed": 7, "weights": [0.5, 0.25, 0.25]}))
        parser = build_parser()
        args = parser.parse_args(
            [
                "--config",
                str(config_file),
                "synthesize",
                "--tasks",
                str(small_tasks),
                "--db-root",
                str(db_root),
                "--out",
                str(tmp_path / "out"),
                "--noise",
                "0.2",
            ]
        )
        config = make_config(args)
        assert config.noise == 0.2  # explicit flag
        assert config.seed == 7  # from file
        assert config.weights == (0.5, 0.25, 0.25)

    def test_validation_failures_name_the_key(self):
        with pytest.raises(ConfigError, match="noise"):
            RunConfig(noise=1.5).validate()
        with pytest.raises(ConfigError, match="backend"):
            RunConfig(backend="imaginary").validate()
        with pytest.raises(ConfigError, match="weights"):
            RunConfig(weights=(0.5, 0.5, 0.5)).validate()
        with pytest.raises(ConfigError, match="transcript"):
            RunConfig(backend="replay").validate()
        with pytest.raises(ConfigError, match="record"):
            RunConfig(record="t.jsonl", jobs=2).validate()
        with pytest.raises(ConfigError, match="endpoint"):
            RunConfig(backend="http").validate()

    def test_bad_weights_text_is_a_config_error(self, capsys, tmp_path, small_tasks, db_root):
        code = run(
            [
                "synthesize",
                "--tasks",
                small_tasks,
                "--db-root",
                db_root,
                "--out",
                tmp_path / "out",
                "--weights",
                "0.5,0.5",
            ]
        )
        assert code == EXIT_CONFIG
        assert "weights" in capsys.readouterr().err


class TestAstCommands:
    def test_parse_prints_keys(self, capsys):
        assert run(["ast", "parse", "--sql", "SELECT name FROM users"]) == EXIT_OK
        payload = json.loads(capsys.readouterr().out)
        assert payload["nodes"] == [
            "Clause:FROM",
            "Clause:SELECT",
            "Operand:name",
            "Operand:users",
        ]
        assert ["Clause:SELECT", "Clause:FROM"] in payload["edges"]

    def test_sim_prints_the_worked_example_scores(self, capsys):
        code = run(
            [
                "ast",
                "sim",
                "--sql",
                "SELECT name FROM users",
                "--sql2",
                "SELECT name FROM users WHERE age > 18",
            ]
        )
        assert code == EXIT_OK
        payload = json.loads(capsys.readouterr().out)
        assert payload["sim_node"] == 0.38888888888888884
        assert payload["sim_struct"] == 0.5
        assert payload["reward"] == 0.41666666666666663

    def test_diff_lists_key_differences(self, capsys):
        code = run(
            [
                "ast",
                "diff",
                "--sql",
                "SELECT name FROM users",
                "--sql2",
                "SELECT age FROM users",
            ]
        )
        assert code == EXIT_OK
        payload = json.loads(capsys.readouterr().out)
        assert payload["nodes"]["only_left"] == ["Operand:name"]
        assert payload["nodes"]["only_right"] == ["Operand:age"]
        assert payload["nodes"]["shared"] == 3

    def test_unparseable_sql_is_a_config_error(self, capsys):
        assert run(["ast", "parse", "--sql", "SELECT FROM WHERE (("]) == EXIT_CONFIG
        assert "offset 7" in capsys.readouterr().err


class TestLossCommands:
    def test_sft_worked_example(self, capsys, tmp_path):
        batch = tmp_path / "batch.json"
        batch.write_text(json.dumps({"examples": [[math.log(0.5), math.log(0.5)]]}))
        assert run(["loss", "sft", "--batch", batch]) == EXIT_OK
        payload = json.loads(capsys.readouterr().out)
        assert payload["loss"] == pytest.approx(2 * math.log(2), abs=1e-12)

    def test_mdpo_ln2_fixture(self, capsys, tmp_path):
        batch = tmp_path / "batch.json"
        batch.write_text(
            json.dumps(
                {
                    "beta": 0.2,
                    "pairs": [
                        {
                            "policy_winner": 2.0,
                            "policy_loser": 1.0,
                            "ref_winner": 1.0,
                            "ref_loser": 0.5,
                            "margin": 0.2 * (1.0 - 0.5),
                        }
                    ],
                }
            )
        )
        assert run(["loss", "mdpo", "--batch", batch]) == EXIT_OK
        payload = json.loads(capsys.readouterr().out)
        assert abs(payload["loss"] - math.log(2)) < 1e-12
        assert set(payload["gradients"]) == {"policy_w", "policy_l", "ref_w", "ref_l"}

    def test_dpo_ignores_margins(self, capsys, tmp_path):
        batch = tmp_path / "batch.json"
        batch.write_text(
            json.dumps(
                {
                    "pairs": [
                        {
                            "policy_winner": 1.4,
                            "policy_loser": 0.3,
                            "ref_winner": 1.1,
                            "ref_loser": 0.2,
                            "margin": 0.9,
                        }
                    ]
                }
            )
        )
        assert run(["loss", "dpo", "--batch", batch]) == EXIT_OK
        with_margin = json.loads(capsys.readouterr().out)
        batch.write_text(
            json.dumps(
                {
                    "pairs": [
                        {
                            "policy_winner": 1.4,
                            "policy_loser": 0.3,
                            "ref_winner": 1.1,
                            "ref_loser": 0.2,
                        }
                    ]
                }
            )
        )
        assert run(["loss", "dpo", "--batch", batch]) == EXIT_OK
        without_margin = json.loads(capsys.readouterr().out)
        assert with_margin == without_margin

    def test_malformed_batch_is_a_config_error(self, capsys, tmp_path):
        batch = tmp_path / "batch.json"
        batch.write_text(json.dumps({"pairs": []}))
        assert run(["loss", "mdpo", "--batch", batch]) == EXIT_CONFIG
        assert "batch" in capsys.readouterr().err


class TestDemosCommands:
    @pytest.fixture()
    def pool_file(self, tmp_path):
        from sqldecomp.demopool import save_pool, seed_pool

        path = tmp_path / "pool.jsonl"
        save_pool(seed_pool(), path)
        return path

    def test_embed_select_retrieve_round_trip(self, capsys, tmp_path, pool_file):
        cache = tmp_path / "cache.jsonl"
        assert run(["demos", "embed", "--pool", pool_file, "--cache", cache]) == EXIT_OK
        embed_payload = json.loads(capsys.readouterr().out)
        assert embed_payload == {"count": 3, "dim": 256, "model_tag": "trigram-256"}

        # Re-embedding is idempotent.
        assert run(["demos", "embed", "--pool", pool_file, "--cache", cache]) == EXIT_OK
        assert json.loads(capsys.readouterr().out)["count"] == 3

        assert (
            run(["demos", "select", "--pool", pool_file, "--sql", "SELECT COUNT(*) FROM users"])
            == EXIT_OK
        )
        picked = json.loads(capsys.readouterr().out)
        assert len(picked) == 3 and all("question" in p for p in picked)

        assert (
            run(
                [
                    "demos",
                    "retrieve",
                    "--pool",
                    pool_file,
                    "--cache",
                    cache,
                    "--query",
                    "how many customers are there",
                ]
            )
            == EXIT_OK
        )
        rows = json.loads(capsys.readouterr().out)
        assert len(rows) == 3
        assert all(set(r) == {"question", "gold_sql", "score"} for r in rows)


@pytest.fixture(scope="module")
def fixture_files(tmp_path_factory):
    out = tmp_path_factory.mktemp("evalcli")
    tasks = out / "gold.jsonl"
    preds = out / "pred.jsonl"
    corpus.write_tasks_file(corpus.EX_TASKS, tasks)
    corpus.write_predictions_file(corpus.EX_PREDICTIONS, preds)
    return tasks, preds


class TestEvalCommand:
    def test_mismatches_exit_1_and_report_lands(self, capsys, tmp_path, db_root, fixture_files):
        tasks, preds = fixture_files
        report = tmp_path / "report.json"
        code = run(
            ["eval", "--pred", preds, "--gold", tasks, "--db-root", db_root, "--report", report]
        )
        assert code == EXIT_CASES
        assert "13/20 = 65.00%" in capsys.readouterr().out
        payload = json.loads(report.read_text())
        assert payload["total"]["ex"] == 65.0
        assert "config" in payload
        assert report.with_suffix(".csv").is_file()
        assert report.with_suffix(".png").is_file()

    def test_eval_reports_are_bit_identical_across_runs(self, tmp_path, db_root, fixture_files):
        # Same argv twice: the config echo contains the paths, so the only
        # honest comparison is a rerun into the same location.
        tasks, preds = fixture_files
        report = tmp_path / "report.json"
        argv = ["eval", "--pred", preds, "--gold", tasks, "--db-root", db_root, "--report", report]
        run(argv)
        snapshots = [
            (report.read_bytes(), report.with_suffix(".csv").read_bytes(), report.with_suffix(".png").read_bytes())
        ]
        run(argv)
        snapshots.append(
            (report.read_bytes(), report.with_suffix(".csv").read_bytes(), report.with_suffix(".png").read_bytes())
        )
        assert snapshots[0] == snapshots[1]

    def test_missing_prediction_file_is_a_config_error(self, capsys, tmp_path, db_root, fixture_files):
        tasks, _ = fixture_files
        code = run(
            ["eval", "--pred", tmp_path / "nope.jsonl", "--gold", tasks, "--db-root", db_root]
        )
        assert code == EXIT_CONFIG
        assert "pred" in capsys.readouterr().err


class TestPipeline:
    def synthesize(self, tmp_path, small_tasks, db_root, out_name, **overrides):
        argv = [
            "synthesize",
            "--tasks",
            small_tasks,
            "--db-root",
            db_root,
            "--out",
            tmp_path / out_name,
            "--rounds",
            "2",
            "--noise",
            "0.3",
            "--seed",
            "0",
        ]
        for key, value in overrides.items():
            argv += [f"--{key}", value]
        return run(argv), tmp_path / out_name

    def test_synthesize_infer_eval_chain(self, capsys, tmp_path, small_tasks, db_root):
        code, out = self.synthesize(tmp_path, small_tasks, db_root, "synth")
        assert code == EXIT_OK  # noise 0.3 still solves everything within budget
        for name in (
            "sft.jsonl",
            "pairs.jsonl",
            "manifest.json",
            "pool.jsonl",
            "summary.json",
            "rounds.csv",
            "tasks.csv",
            "rounds.png",
            "expansion.png",
        ):
            assert (out / name).is_file(), name
        assert list((out / "trees").glob("*.json"))
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["counts"]["sft"] >= 4  # one trajectory per solved task at least

        # The grown pool feeds inference through the embedding cache.
        cache = tmp_path / "cache.jsonl"
        assert run(["demos", "embed", "--pool", out / "pool.jsonl", "--cache", cache]) == EXIT_OK
        capsys.readouterr()

        preds = tmp_path / "predictions.jsonl"
        code = run(
            [
                "infer",
                "--tasks",
                small_tasks,
                "--db-root",
                db_root,
                "--out",
                preds,
                "--pool",
                out / "pool.jsonl",
                "--cache",
                cache,
                "--seed",
                "0",
            ]
        )
        assert code == EXIT_OK
        assert preds.is_file()
        assert (tmp_path / "predictions.jsonl.manifest.json").is_file()
        lines = [json.loads(line) for line in preds.read_text().splitlines()]
        assert [r["task_id"] for r in lines] == [t.task_id for t in corpus.CORPUS[:4]]

        report = tmp_path / "report.json"
        code = run(
            [
                "eval",
                "--pred",
                preds,
                "--gold",
                small_tasks,
                "--db-root",
                db_root,
                "--report",
                report,
            ]
        )
        assert code == EXIT_OK  # oracle-derived predictions all execute to gold
        assert "4/4 = 100.00%" in capsys.readouterr().out

    def test_pipeline_runs_are_bit_identical(self, tmp_path, small_tasks, db_root):
        code_a, out_a = self.synthesize(tmp_path, small_tasks, db_root, "a")
        code_b, out_b = self.synthesize(tmp_path, small_tasks, db_root, "b")
        assert code_a == code_b == EXIT_OK
        for name in ("sft.jsonl", "pairs.jsonl", "pool.jsonl", "rounds.csv", "tasks.csv"):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes(), name

    def test_infer_without_cache_names_the_fix(self, capsys, tmp_path, small_tasks, db_root):
        code = run(
            [
                "infer",
                "--tasks",
                small_tasks,
                "--db-root",
                db_root,
                "--out",
                tmp_path / "p.jsonl",
                "--pool",
                tmp_path / "missing_pool.jsonl",
                "--cache",
                tmp_path / "missing_cache.jsonl",
            ]
        )
        assert code == EXIT_CONFIG
        assert "demos embed" in capsys.readouterr().err

    def test_credential_never_reaches_artifacts(self, monkeypatch, tmp_path, small_tasks, db_root):
        secret = "sk-super-secret-value"
        monkeypatch.setenv("SQLDECOMP_API_KEY", secret)
        code, out = self.synthesize(tmp_path, small_tasks, db_root, "keyed")
        assert code == EXIT_OK
        for artifact in out.rglob("*"):
            if artifact.is_file() and artifact.suffix in (".json", ".jsonl", ".csv"):
                assert secret not in artifact.read_text(encoding="utf-8"), artifact
        for manifest_name in ("manifest.json", "summary.json"):
            echo = json.loads((out / manifest_name).read_text())["config"]
            assert "api_key" not in echo


class TestReplay:
    def test_recorded_synthesis_replays_identically(self, tmp_path, small_tasks, db_root):
        transcript = tmp_path / "transcript.jsonl"
        argv = [
            "synthesize",
            "--tasks",
            small_tasks,
            "--db-root",
            db_root,
            "--rounds",
            "1",
            "--noise",
            "0.3",
            "--seed",
            "0",
        ]
        code = run(argv + ["--out", tmp_path / "rec", "--record", transcript])
        assert code in (EXIT_OK, EXIT_CASES)
        assert transcript.is_file()

        code = run(
            argv
            + [
                "--out",
                tmp_path / "rep",
                "--backend",
                "replay",
                "--transcript",
                transcript,
            ]
        )
        assert code in (EXIT_OK, EXIT_CASES)
        for name in ("sft.jsonl", "pairs.jsonl"):
            assert (tmp_path / "rec" / name).read_bytes() == (tmp_path / "rep" / name).read_bytes()
