"""Shipped scenario files and demand profiles."""

from importlib import resources
from pathlib import Path


def scenario_path(name: str) -> Path:
    """Filesystem path of a shipped scenario or demand file."""
    if not name.endswith((".yaml", ".csv")):
        name = f"{name}.yaml"
    ref = resources.files(__package__) / name
    path = Path(str(ref))
    if not path.exists():
        raise FileNotFoundError(f"no shipped scenario file {name!r}")
    return path


def available() -> list[str]:
    root = Path(str(resources.files(__package__)))
    return sorted(p.name for p in root.iterdir()
                  if p.suffix in (".yaml", ".csv"))
