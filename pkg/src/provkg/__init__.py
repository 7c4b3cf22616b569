"""Evidence-traceable temporal knowledge graphs for clinical synthesis."""

from importlib import resources
from pathlib import Path

__version__ = "0.1.0"


def data_path(*parts: str) -> Path:
    """Path to a file shipped under ``provkg/data``."""
    return Path(str(resources.files("provkg").joinpath("data", *parts)))
