from pathlib import Path
from typing import Optional

from dynaconf import Dynaconf

DWM_LAB_TOML_KEY = 'dwm-lab'
SETTINGS_DIR = Path(__file__).resolve().parent / "settings"

global_settings = Dynaconf(
    envvar_prefix=False,
    merge_enabled=True,
    settings_files=[str(SETTINGS_DIR / name) for name in ("configuration.toml", "report_templates.toml")],
)


def get_settings():
    """
    Retrieves the current settings.

    Returns:
        Dynaconf: The global settings object holding the twin defaults.
    """
    return global_settings


def find_project_settings(start: Optional[Path] = None) -> Optional[Path]:
    """
    Walk up from start (the working directory by default) to the nearest pyproject.toml that has a
    [tool.dwm-lab] table. The walk stops at the repository root (a directory holding .git).
    """
    here = (start or Path.cwd()).resolve()
    for directory in (here, *here.parents):
        pyproject = directory / "pyproject.toml"
        if pyproject.is_file() and f"[tool.{DWM_LAB_TOML_KEY}" in pyproject.read_text(errors="ignore"):
            return pyproject
        if (directory / ".git").exists():
            return None
    return None


# project-level defaults, e.g. a lab-wide output_dir or seed
pyproject_path = find_project_settings()
if pyproject_path is not None:
    get_settings().load_file(str(pyproject_path), env=f'tool.{DWM_LAB_TOML_KEY}')
