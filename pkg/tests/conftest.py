import pytest

# criterion id -> list of (passed, detail) from its acceptance tests
_criteria: dict[str, list[tuple[bool, str]]] = {}


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        passed = report.outcome == "passed" and not hasattr(report, "wasxfail")
        detail = props.get("detail", "")
        if hasattr(report, "wasxfail"):
            detail = f"{detail} [known shortfall]".strip()
        _criteria.setdefault(props["criterion"], []).append((passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for cid in sorted(_criteria, key=lambda c: int(c.split()[0])):
        results = _criteria[cid]
        ok = all(p for p, _ in results)
        details = "; ".join(d for _, d in results if d)
        tr.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {cid}: {details}")


@pytest.fixture
def criterion(record_property):
    """Tag a test with its criterion and attach a one-line detail."""
    def tag(cid: str, detail: str = ""):
        record_property("criterion", cid)
        record_property("detail", detail)
    return tag
