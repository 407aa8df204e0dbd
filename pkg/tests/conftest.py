import pytest


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL/SKIP line for an acceptance criterion.

    Usage: ``with criterion(3, "gating") as info: ...``; put measured values
    in ``info`` to have them echoed on the line.
    """
    from contextlib import contextmanager

    @contextmanager
    def record(number, title):
        info = {}
        lines = request.config.acceptance_lines
        try:
            yield info
        except pytest.skip.Exception as exc:
            lines.append(f"criterion {number} ({title}): SKIP {exc.msg}")
            raise
        except BaseException:
            lines.append(f"criterion {number} ({title}): FAIL {_fmt(info)}")
            raise
        lines.append(f"criterion {number} ({title}): PASS {_fmt(info)}")

    return record


def _fmt(info):
    return " ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in info.items())
