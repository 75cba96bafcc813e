import os
import shutil
from pathlib import Path

import pytest


@pytest.fixture(scope="session")
def cli():
    path = os.environ.get("NIGHTIQ_CLI") or shutil.which("nightiq")
    if not path:
        built = Path(__file__).resolve().parents[2] / "build" / "tools" / "nightiq"
        path = str(built) if built.exists() else None
    if not path:
        pytest.skip("nightiq executable not found (set NIGHTIQ_CLI)")
    return path
