import pytest

from fedl.verify import CHECKS, run_suite


@pytest.mark.parametrize("seed", [0, 7, 2024])
def test_suite_passes(seed):
    results = run_suite(seed)
    assert len(results) == len(CHECKS)
    failed = [r.line() for r in results if not r.passed]
    assert not failed, failed


def test_suite_deterministic():
    a = [(r.name, r.value) for r in run_suite(3)]
    b = [(r.name, r.value) for r in run_suite(3)]
    assert a == b
