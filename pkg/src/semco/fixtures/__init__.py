"""Bundled fixtures: tiny embeddings, graph, label lists and label vectors."""

from pathlib import Path

FIXTURE_DIR = Path(__file__).parent


def path(name: str) -> Path:
    return FIXTURE_DIR / name
