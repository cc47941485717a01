import json

import numpy as np
import pytest

from lowtide.cli import main
from lowtide.scores import load_score_matrix


def write_config(tmp_path, name="config.json", **overrides):
    cfg = {
        "source": {"kind": "spike", "m": 8, "lam": 0.7, "seed": 1},
        "scheme": {"variant": "simplex", "delta": 0.0},
        "sideinfo": {"scheme": "fresh", "key": "12345", "k": 7},
        "gen": {"n": 10, "sequences": 1, "seed": 4},
    }
    cfg.update(overrides)
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


class TestGen:
    def test_minimal_config(self, tmp_path):
        config = write_config(tmp_path)
        out = tmp_path / "stream.jsonl"
        assert main(["gen", "--config", str(config), "--out", str(out)]) == 0
        records = [json.loads(line) for line in out.read_text().splitlines()]
        assert len(records) == 1
        assert len(records[0]["tokens"]) == 10
        assert records[0]["n"] == 10
        assert (tmp_path / "stream.jsonl.scores").exists()

    def test_byte_identical_reruns(self, tmp_path):
        config = write_config(tmp_path)
        out_a = tmp_path / "a.jsonl"
        out_b = tmp_path / "b.jsonl"
        main(["gen", "--config", str(config), "--out", str(out_a)])
        main(["gen", "--config", str(config), "--out", str(out_b)])
        assert out_a.read_bytes() == out_b.read_bytes()
        assert (tmp_path / "a.jsonl.scores").read_bytes() == (
            tmp_path / "b.jsonl.scores"
        ).read_bytes()

    def test_bad_lambda_exit_2(self, tmp_path, capsys):
        config = write_config(
            tmp_path, **{"source": {"kind": "spike", "m": 8, "lam": 0.3}}
        )
        out = tmp_path / "stream.jsonl"
        assert main(["gen", "--config", str(config), "--out", str(out)]) == 2
        assert "source.lam" in capsys.readouterr().err

    def test_unknown_key_exit_2(self, tmp_path, capsys):
        config = write_config(tmp_path, extra_section={"x": 1})
        out = tmp_path / "stream.jsonl"
        assert main(["gen", "--config", str(config), "--out", str(out)]) == 2
        assert "extra_section" in capsys.readouterr().err

    def test_sideinfo_k_mismatch_exit_2(self, tmp_path):
        config = write_config(
            tmp_path, sideinfo={"scheme": "fresh", "key": "1", "k": 5}
        )
        out = tmp_path / "stream.jsonl"
        assert main(["gen", "--config", str(config), "--out", str(out)]) == 2


class TestDetect:
    def _generate(self, tmp_path):
        config = write_config(tmp_path, gen={"n": 100, "sequences": 3, "seed": 9})
        stream = tmp_path / "stream.jsonl"
        main(["gen", "--config", str(config), "--out", str(stream)])
        return config, stream, tmp_path / "stream.jsonl.scores"

    def test_round_trip_reports(self, tmp_path):
        config, stream, scores = self._generate(tmp_path)
        report_path = tmp_path / "report.json"
        code = main(
            [
                "detect",
                "--stream",
                str(stream),
                "--scores",
                str(scores),
                "--config",
                str(config),
                "--json",
                str(report_path),
            ]
        )
        assert code == 0
        reports = json.loads(report_path.read_text())
        assert len(reports) == 3
        for report in reports:
            assert report["n"] == 100
            assert 0 < report["p_value"] <= 1
            # watermarked at lam=0.7: should be detected comfortably
            assert report["p_value"] < 1e-2

    def test_detected_scores_match_generation(self, tmp_path):
        from lowtide.cli import Experiment, load_config
        from lowtide.harness import generate

        config, stream, scores = self._generate(tmp_path)
        report_path = tmp_path / "report.json"
        main(
            [
                "detect",
                "--stream",
                str(stream),
                "--scores",
                str(scores),
                "--config",
                str(config),
                "--json",
                str(report_path),
            ]
        )
        reports = json.loads(report_path.read_text())
        exp = Experiment(load_config(str(config)))
        for i, report in enumerate(reports):
            result = generate(
                exp.source, exp.scheme, exp.score, exp.side, exp.n, seed=exp.seed + i
            )
            assert report["per_token_scores"] == [s.score for s in result.trace]

    def test_truncated_stream_exit_4(self, tmp_path, capsys):
        config, stream, scores = self._generate(tmp_path)
        data = stream.read_text()
        stream.write_text(data[: len(data) // 2].rsplit("\n", 1)[0] + '\n{"tokens": [1,')
        code = main(
            ["detect", "--stream", str(stream), "--scores", str(scores), "--config", str(config)]
        )
        assert code == 4
        assert "invalid JSON" in capsys.readouterr().err

    def test_score_matrix_mismatch_exit_4(self, tmp_path, capsys):
        config, stream, scores = self._generate(tmp_path)
        other_cfg = write_config(
            tmp_path,
            name="other.json",
            source={"kind": "spike", "m": 16, "lam": 0.7},
            sideinfo={"scheme": "fresh", "key": "12345", "k": 15},
        )
        other_stream = tmp_path / "other.jsonl"
        main(["gen", "--config", str(other_cfg), "--out", str(other_stream)])
        code = main(
            [
                "detect",
                "--stream",
                str(stream),
                "--scores",
                str(tmp_path / "other.jsonl.scores"),
                "--config",
                str(config),
            ]
        )
        assert code == 4
        assert "does not match" in capsys.readouterr().err

    def test_wrong_key_mostly_undetected(self, tmp_path):
        config = write_config(
            tmp_path,
            gen={"n": 60, "sequences": 30, "seed": 0},
            sideinfo={"scheme": "fresh", "key": "12345", "k": 7},
        )
        stream = tmp_path / "stream.jsonl"
        main(["gen", "--config", str(config), "--out", str(stream)])
        wrong = write_config(
            tmp_path,
            name="wrong.json",
            gen={"n": 60, "sequences": 30, "seed": 0},
            sideinfo={"scheme": "fresh", "key": "777777", "k": 7},
        )
        # strip per-record side configs so detection falls back to the config key
        records = [json.loads(line) for line in stream.read_text().splitlines()]
        for record in records:
            record.pop("side_cfg")
        stream.write_text("\n".join(json.dumps(r) for r in records) + "\n")
        report_path = tmp_path / "report.json"
        main(
            [
                "detect",
                "--stream",
                str(stream),
                "--scores",
                str(tmp_path / "stream.jsonl.scores"),
                "--config",
                str(wrong),
                "--json",
                str(report_path),
            ]
        )
        reports = json.loads(report_path.read_text())
        fraction_quiet = np.mean([r["p_value"] > 0.01 for r in reports])
        assert fraction_quiet >= 0.9


class TestSweep:
    def test_csv_contract(self, tmp_path):
        config = write_config(
            tmp_path,
            sweep={
                "schemes": ["simplex", "red-green"],
                "deltas": [0.0],
                "n": 25,
                "trials": 5,
                "seed": 2,
            },
        )
        out = tmp_path / "table.csv"
        assert main(["sweep", "--config", str(config), "--out", str(out)]) == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "scheme,delta,ce_mean,ce_se,nlp_mean,nlp_se,wms_mean,wms_se,trials"
        assert len(lines) == 3
        assert lines[1].startswith("simplex,0,")

    def test_threads_do_not_change_output(self, tmp_path):
        config = write_config(
            tmp_path,
            sweep={"schemes": ["simplex"], "deltas": [0.0, 0.2], "n": 20, "trials": 4, "seed": 0},
        )
        out_a = tmp_path / "a.csv"
        out_b = tmp_path / "b.csv"
        main(["sweep", "--config", str(config), "--out", str(out_a), "--threads", "1"])
        main(["sweep", "--config", str(config), "--out", str(out_b), "--threads", "2"])
        assert out_a.read_text() == out_b.read_text()


class TestVerify:
    def test_plotkin_suite_exits_zero(self, tmp_path):
        out = tmp_path / "report.json"
        assert main(["verify", "--suite", "plotkin", "--out", str(out)]) == 0
        report = json.loads(out.read_text())
        assert all(c["passed"] for c in report["certificates"])
        assert all(c["value"] == c["expected"] for c in report["certificates"])

    def test_tail_suite_gaussian_oracle(self, tmp_path):
        out = tmp_path / "report.json"
        assert main(["verify", "--suite", "tail", "--out", str(out)]) == 0
        report = json.loads(out.read_text())
        gaussian = next(c for c in report["certificates"] if "gaussian" in c["name"])
        assert gaussian["value"] == pytest.approx(0.5642, abs=0.01)

    def test_spike_oracle_suite(self, tmp_path):
        out = tmp_path / "report.json"
        assert main(["verify", "--suite", "spike-oracle", "--out", str(out)]) == 0


class TestAttackCommand:
    def test_attack_round_trip(self, tmp_path):
        config = write_config(tmp_path, gen={"n": 30, "sequences": 2, "seed": 3})
        stream = tmp_path / "stream.jsonl"
        main(["gen", "--config", str(config), "--out", str(stream)])
        out = tmp_path / "attacked.jsonl"
        code = main(
            [
                "attack",
                "--stream",
                str(stream),
                "--out",
                str(out),
                "--kind",
                "delete",
                "--rate",
                "0.2",
                "--seed",
                "5",
            ]
        )
        assert code == 0
        records = [json.loads(line) for line in out.read_text().splitlines()]
        assert len(records) == 2
        for record in records:
            assert record["n"] == len(record["tokens"]) <= 30

    def test_attacked_stream_still_detectable_at_low_rate(self, tmp_path):
        config = write_config(tmp_path, gen={"n": 80, "sequences": 1, "seed": 3})
        stream = tmp_path / "stream.jsonl"
        main(["gen", "--config", str(config), "--out", str(stream)])
        out = tmp_path / "attacked.jsonl"
        main(
            [
                "attack",
                "--stream",
                str(stream),
                "--out",
                str(out),
                "--kind",
                "substitute",
                "--rate",
                "0.05",
                "--seed",
                "1",
            ]
        )
        report_path = tmp_path / "report.json"
        main(
            [
                "detect",
                "--stream",
                str(out),
                "--scores",
                str(tmp_path / "stream.jsonl.scores"),
                "--config",
                str(config),
                "--json",
                str(report_path),
            ]
        )
        reports = json.loads(report_path.read_text())
        assert reports[0]["p_value"] < 0.01
