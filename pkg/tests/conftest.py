def pytest_terminal_summary(terminalreporter):
    import test_acceptance as acc

    if not acc.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(acc.RESULTS):
        terminalreporter.write_line(acc.RESULTS[n])
    for n in sorted(set(acc.TITLES) - set(acc.RESULTS)):
        terminalreporter.write_line(f"criterion {n} ({acc.TITLES[n]}): not run")
