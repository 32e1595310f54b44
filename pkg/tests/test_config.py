import pytest

from ssdiff.config import _env_flag, resolve_device


@pytest.mark.parametrize(("raw", "expected"), [("1", True), (" Yes ", True), ("on", True), ("off", False), ("FALSE", False)])
def test_env_flag_words(monkeypatch, raw, expected):
    monkeypatch.setenv("SSDIFF_TEST_FLAG", raw)
    assert _env_flag("SSDIFF_TEST_FLAG", not expected) is expected


@pytest.mark.parametrize("raw", ["", "maybe"])
def test_env_flag_falls_back(monkeypatch, raw):
    monkeypatch.setenv("SSDIFF_TEST_FLAG", raw)
    assert _env_flag("SSDIFF_TEST_FLAG", True) is True
    monkeypatch.delenv("SSDIFF_TEST_FLAG")
    assert _env_flag("SSDIFF_TEST_FLAG", False) is False


def test_explicit_device_wins():
    assert resolve_device(" cpu ") == "cpu"
