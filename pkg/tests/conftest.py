def pytest_terminal_summary(terminalreporter):
    """Print one PASS/FAIL line per acceptance criterion."""
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if getattr(rep, "when", "call") != "call" and outcome != "error":
                continue
            for key, detail in getattr(rep, "user_properties", []):
                if key.startswith("AC"):
                    lines.append((int(key[2:]), "PASS" if outcome == "passed" else "FAIL", detail))
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n, status, detail in sorted(lines):
        terminalreporter.write_line(f"AC{n} {status}  {detail}")
