from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def meeting_point_transcript() -> str:
    return (FIXTURES / "transcript_meeting_point.txt").read_text(encoding="utf-8")


@pytest.fixture
def base_digits_transcript() -> str:
    return (FIXTURES / "transcript_base_digits.txt").read_text(encoding="utf-8")
