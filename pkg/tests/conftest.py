import os

from hypothesis import settings

settings.register_profile("default", deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# criterion number -> list of (passed, description, detail); filled by test_acceptance
ACCEPTANCE: dict[int, list[tuple[bool, str, str]]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        for passed, desc, detail in ACCEPTANCE[num]:
            terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] criterion {num}: {desc} ({detail})")
