"""Collects one summary line per acceptance criterion for the terminal report."""

RESULTS = []


def record(cid: str, ok: bool, detail: str, seconds: float) -> bool:
    line = f"{'PASS' if ok else 'FAIL'}  {cid:<4} {detail}  [{seconds:.2f}s]"
    RESULTS.append(line)
    print(line)
    return ok
