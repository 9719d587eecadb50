VERDICTS = []
_config = None


def pytest_configure(config):
    global _config
    _config = config


def record_verdict(number, ok, detail):
    line = f"CRITERION {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    VERDICTS.append(line)
    # the terminal reporter is not captured, so the line shows in plain `pytest -v`
    reporter = _config.pluginmanager.get_plugin("terminalreporter") if _config else None
    if reporter is not None:
        reporter.write_line("")
        reporter.write_line(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS):
            terminalreporter.write_line(line)
