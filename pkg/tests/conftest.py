"""Shared pytest setup: the project root on ``sys.path`` and a clean lab environment."""

import os
import sys

import pytest

PROJECT_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
if PROJECT_ROOT not in sys.path:
    sys.path.insert(0, PROJECT_ROOT)

from src.config import OUTPUT_DIR_ENV  # noqa: E402


@pytest.fixture(autouse=True)
def clean_lab_environment(monkeypatch):
    """Keeps a developer's ``GFX_LAB_OUTPUT_DIR`` from leaking into tests."""
    monkeypatch.delenv(OUTPUT_DIR_ENV, raising=False)
