import numpy as np
import pytest

from sdrx.channel import AdcConfig, ChannelConfig, SampleBuffer
from sdrx.experiments import Link
from sdrx.signal import Format

_CRITERIA = {}


def rel_rms(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.sqrt(np.mean(np.abs(a - b) ** 2) / np.mean(np.abs(b) ** 2)))


def buffers_from(x, buffer_len, quantize=False):
    """Wrap a float array as consecutive unquantized SampleBuffers."""
    adc = AdcConfig(buffer_len=buffer_len, quantize=quantize)
    n = len(x) // buffer_len
    return [SampleBuffer(x[i * buffer_len : (i + 1) * buffer_len], i, adc) for i in range(n)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def pam4_link():
    return Link.preset(Format.PAM4, osnr_db=14.0, seed=7, buffer_len=8192)


@pytest.fixture(scope="session")
def qam16_link():
    return Link.preset(Format.QAM16, osnr_db=16.0, seed=7, buffer_len=8192)


@pytest.fixture
def measured(request):
    """Attach a measured-value note to the acceptance summary line."""

    def note(text):
        request.node.user_properties.append(("measured", text))

    return note


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    entry = _CRITERIA.setdefault(n, {"title": title, "ok": True, "notes": []})
    if rep.failed or (rep.when == "call" and rep.outcome != "passed"):
        entry["ok"] = False
    if rep.when == "call":
        entry["notes"] += [v for k, v in item.user_properties if k == "measured"]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        notes = "; ".join(dict.fromkeys(e["notes"]))
        tr.write_line(f"criterion {n:>2} {'PASS' if e['ok'] else 'FAIL'}  {e['title']}" + (f"  [{notes}]" if notes else ""))
