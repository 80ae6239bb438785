import pytest


@pytest.fixture
def report(capsys):
    """Print one verdict line per acceptance criterion, bypassing output capture."""
    def emit(number: int, passed: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\nCRITERION {number}: {'PASS' if passed else 'FAIL'} - {detail}")
    return emit
