"""One pass/fail line per acceptance criterion, printed again in the terminal summary."""

LINES: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    LINES[number] = line
    print(line)
