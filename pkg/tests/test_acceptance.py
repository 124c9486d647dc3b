"""The eleven acceptance criteria at their stated tolerances, one test each."""

import pytest

from multitime import selftest

from conftest import ACCEPTANCE_LINES


@pytest.mark.parametrize("criterion", selftest.ALL, ids=lambda fn: fn.__name__)
def test_criterion(criterion):
    result = criterion()
    line = result.line()
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert result.passed, line
