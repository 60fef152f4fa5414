"""Collects one verdict line per acceptance criterion for the terminal summary."""

ACCEPTANCE: list[str] = []


def record(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line
