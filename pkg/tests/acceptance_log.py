"""One verdict line per acceptance criterion, printed at the end of the run."""

LINES: dict[int, str] = {}


def record(number: int, title: str, ok: bool, detail: str) -> bool:
    line = f"[{'PASS' if ok else 'FAIL'}] {number:>2} {title}: {detail}"
    LINES[number] = line
    print(line)
    return ok
