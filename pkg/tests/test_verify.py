import pytest

from gemproj.verify import SUITES, run_suite


@pytest.mark.parametrize("suite", SUITES)
def test_suite_passes(suite):
    results = run_suite(suite)
    assert results
    failures = [r.line() for r in results if not r.passed]
    assert not failures, "\n".join(failures)


def test_unknown_suite_raises():
    with pytest.raises(ValueError, match="unknown suite"):
        run_suite("nonsense")
