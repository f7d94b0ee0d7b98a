from collections import defaultdict

CRITERIA = {
    1: "closing reproduction on the toy contraction",
    2: "drift bound",
    3: "sign bracket",
    4: "twist family axioms",
    5: "flow-box realization",
    6: "contraction propagation",
    7: "ergodic suite",
    8: "chain-rule and domain invariants",
    9: "negative control on interval exchanges",
}

_results: dict[int, list[tuple[str, str]]] = defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if call.when == "call" or (call.when == "setup" and call.excinfo is not None):
        outcome = "pass" if call.excinfo is None else "fail"
        _results[mark.args[0]].append((item.name, outcome))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n, title in CRITERIA.items():
        runs = _results.get(n)
        if not runs:
            tr.write_line(f"criterion {n}: NOT RUN  {title}")
            continue
        failed = [name for name, o in runs if o != "pass"]
        status = "PASS" if not failed else "FAIL"
        extra = f"  (failed: {', '.join(failed)})" if failed else ""
        tr.write_line(f"criterion {n}: {status}  {title}{extra}")
