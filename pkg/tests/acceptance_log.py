"""Collects pass/fail lines per acceptance criterion (one per environment for 8) for the terminal summary."""
LINES = {}


def record(n: int, ok: bool, detail: str) -> str:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    LINES.setdefault(n, []).append(line)
    print(line, flush=True)
    return line
