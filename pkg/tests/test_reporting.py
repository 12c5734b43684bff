import json
import math

from diamondgmc.reporting import (
    CheckResult,
    ExperimentReport,
    exact_check,
    flagged_check,
    format_float,
    se_check,
    write_csv,
    write_json,
)


class TestChecks:
    def test_exact_check_verdicts(self):
        assert exact_check("x", 1e-13, 1e-12).verdict == "pass"
        assert exact_check("x", 2e-12, 1e-12).verdict == "fail"

    def test_se_check_pass(self):
        c = se_check("m", target=1.0, estimate=1.02, se=0.01, multiplier=4.0)
        assert c.verdict == "pass"
        assert "z = 2.00" in c.detail

    def test_se_check_fail_when_reliable(self):
        c = se_check("m", target=1.0, estimate=1.5, se=0.05, multiplier=4.0)
        assert c.verdict == "fail"

    def test_se_check_flagged_when_unreliable(self):
        # far from target but the SE is a large fraction of the estimate
        c = se_check("m", target=21.0, estimate=4.0, se=0.6, multiplier=4.0)
        assert c.verdict == "flagged"
        assert "reliability" in c.detail

    def test_flagged_check(self):
        assert flagged_check("m", 1.0, 2.0, "tail-dominated").verdict == "flagged"


class TestReport:
    def test_aggregation(self):
        report = ExperimentReport("demo")
        report.add(exact_check("a", 0.0, 1e-12))
        report.add(se_check("b", 21.0, 4.0, 0.6, 4.0))
        assert report.all_passed
        assert [c.name for c in report.flagged] == ["b"]
        payload = report.to_dict()
        assert {c["name"] for c in payload["checks"]} == {"a", "b"}
        assert "arrays" not in payload

    def test_failed_blocks_all_passed(self):
        report = ExperimentReport("demo")
        report.add(CheckResult("bad", "fail"))
        assert not report.all_passed


class TestEmission:
    def test_format_float(self):
        assert format_float(1.0 / 3.0) == "0.33333333333333331"
        assert format_float(math.nan) == "nan"

    def test_csv_and_json_bytes_stable(self, tmp_path):
        csv_path = tmp_path / "t.csv"
        rows = [[1.5, "x"], [2.25, "y"]]
        write_csv(csv_path, ["v", "k"], rows)
        first = csv_path.read_bytes()
        write_csv(csv_path, ["v", "k"], rows)
        assert csv_path.read_bytes() == first

        json_path = tmp_path / "t.json"
        write_json(json_path, {"b": 1, "a": [1.5, None]})
        payload = json.loads(json_path.read_text())
        assert payload == {"b": 1, "a": [1.5, None]}
        blob = json_path.read_bytes()
        write_json(json_path, {"a": [1.5, None], "b": 1})
        assert json_path.read_bytes() == blob  # key order canonicalized
