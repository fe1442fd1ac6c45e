import json

import pytest

from sakdn import verify
from sakdn.errors import ConfigError


@pytest.mark.parametrize("name", sorted(verify.checks(1e-8)))
def test_every_check_passes(name):
    ok, detail = verify.checks(1e-8)[name]()
    assert ok, detail


def test_zero_slope_epsilon_is_caught():
    report = verify.run_suite(slope_epsilon=0.0, only=["slope_denominator_guard"])
    assert not report.passed


def test_report_json_and_selection():
    report = verify.run_suite(only=["gaf_loop_reference", "loss_fixed_points"])
    data = json.loads(report.to_json())
    assert data["passed"] is True
    assert [c["name"] for c in data["checks"]] == ["gaf_loop_reference", "loss_fixed_points"]
    assert all(c["status"] == "pass" for c in data["checks"])


def test_unknown_check_name():
    with pytest.raises(ConfigError):
        verify.run_suite(only=["nope"])


def test_exceptions_become_failures(monkeypatch):
    def boom():
        raise RuntimeError("bad")

    real = verify.checks
    monkeypatch.setattr(verify, "checks", lambda eps: {**real(eps), "boom": boom})
    report = verify.run_suite(only=["boom"])
    assert not report.passed
    assert "bad" in report.checks[0].detail
