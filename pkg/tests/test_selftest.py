# Copyright 2026, bilevel-gr authors. All rights reserved.

import pytest

from bilevel_gr.bench.cli import EXIT_OK, EXIT_SELFTEST, main
from bilevel_gr.errors import SelfTestFailedError
from bilevel_gr.selftest import (
    SelfTestCheck,
    SelfTestSuiteReport,
    check_hypergradients,
    check_metrics,
    check_response_identity,
    check_toy_reference,
    run_selftest,
)


class TestSelfTestChecks:
    def test_response_identity(self):
        (check,) = check_response_identity(instances=200)
        assert check.passed, check.message

    def test_metrics(self):
        checks = check_metrics()
        assert all(c.passed for c in checks), [str(c) for c in checks if not c.passed]

    def test_toy_reference_reports_quoted_discrepancy(self):
        (check,) = check_toy_reference()
        assert check.passed
        assert "quoted optimum" in check.message

    def test_hypergradients(self):
        assert all(c.passed for c in check_hypergradients())


class TestSelfTestSuite:
    def test_failed_report_raises(self):
        report = SelfTestSuiteReport(
            [SelfTestCheck(name="ok", passed=True), SelfTestCheck(name="broken", passed=False, message="bad")]
        )
        assert report.failed == ["broken"]
        assert "[FAILED] broken: bad" in str(report)
        with pytest.raises(SelfTestFailedError) as e:
            report.validate()
        assert e.value.report is report

    def test_full_suite(self):
        report = run_selftest()
        assert report.passed, str(report)
        assert report.to_dict()["failed"] == []

    def test_command_line(self, capsys, monkeypatch):
        assert main(["selftest", "--quiet"]) == EXIT_OK
        assert "checks passed" in capsys.readouterr().out

        failing = SelfTestSuiteReport([SelfTestCheck(name="broken", passed=False)])
        monkeypatch.setattr("bilevel_gr.bench.cli.run_selftest", lambda: failing)
        assert main(["selftest", "--quiet"]) == EXIT_SELFTEST
