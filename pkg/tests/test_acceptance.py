"""Acceptance criteria, one line each.

Run ``pytest tests/test_acceptance.py -v -s`` (or ``python tests/test_acceptance.py``)
to see a PASS/FAIL line per criterion.
"""

import sys
import time

import pytest

from indexforms.cli import _json, _plain, build_config, run_experiment

CRITERIA = {
    1: ("eta closed form", ["eta"]),
    2: ("relative eta additivity", ["relative-eta"]),
    3: ("degree-0 index on the boundary", ["theorem1-deg0"]),
    4: ("degree-0 index on the cylinder", ["aps-index"]),
    5: ("closedness under refinement", ["closedness"]),
    6: ("transgression and its small-time exponent", ["transgression"]),
    7: ("zero and infinity limits", ["time-limits"]),
    8: ("degree-2 quantization", ["theorem1-deg2"]),
    9: ("generalized theorem, degrees 0 and 2", ["theorem2-deg0", "theorem2-deg2"]),
    10: ("pseudo-traces and residue", ["residue"]),
    11: ("Schatten model", ["schatten"]),
    12: ("commutator defect", ["commutator-defect"]),
}
RUNTIME_LIMIT_S = {1: 60.0}


def evaluate(number):
    title, experiments = CRITERIA[number]
    failures, total = [], 0
    start = time.perf_counter()
    for name in experiments:
        report = run_experiment(build_config(name))
        for a in report.assertions:
            total += 1
            if not a.passed:
                failures.append(f"{a.name}: lhs={_json(_plain(a.lhs))} rhs={_json(_plain(a.rhs))} tol={a.tol:g}")
    elapsed = time.perf_counter() - start
    limit = RUNTIME_LIMIT_S.get(number)
    if limit is not None and elapsed > limit:
        failures.append(f"runtime {elapsed:.1f}s exceeds {limit:g}s")
    status = "PASS" if not failures else "FAIL"
    line = f"criterion {number:2d} {status}  {title} ({total - len([f for f in failures if 'runtime' not in f])}/{total} checks)"
    if failures:
        line += "\n    " + "\n    ".join(failures)
    return not failures, line


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number):
    ok, line = evaluate(number)
    print("\n" + line)
    assert ok, line


if __name__ == "__main__":
    results = [evaluate(n) for n in sorted(CRITERIA)]
    for _, line in results:
        print(line)
    sys.exit(0 if all(ok for ok, _ in results) else 1)
