"""Acceptance bookkeeping: one PASS/FAIL line per criterion in the terminal summary.

Tests tagged ``@pytest.mark.acceptance("AC-n")`` count toward criterion AC-n;
a criterion passes only if every one of its tests passed. Tests may attach a
short measurement with ``record_property("detail", ...)``.
"""
import re

_results: dict[str, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(name): counts toward an acceptance criterion")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("acceptance")
        if m:
            item.user_properties.append(("acceptance", m.args[0]))


def pytest_runtest_logreport(report):
    props = dict((k, v) for k, v in report.user_properties if k == "acceptance")
    if "acceptance" not in props:
        return
    if report.when != "call" and not report.failed:
        return
    entry = _results.setdefault(props["acceptance"], {"ok": True, "details": []})
    if report.failed or report.skipped:
        entry["ok"] = False
        if report.failed:
            entry["details"].append(f"{report.nodeid.split('::')[-1]} failed")
    for k, v in report.user_properties:
        if k == "detail":
            entry["details"].append(str(v))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_results, key=lambda s: int(re.sub(r"\D", "", s))):
        r = _results[name]
        detail = "; ".join(r["details"]) or "all checks passed"
        terminalreporter.write_line(f"{name} {'PASS' if r['ok'] else 'FAIL'}: {detail}")
