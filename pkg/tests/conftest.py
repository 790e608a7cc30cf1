from __future__ import annotations

from pathlib import Path

import pytest

from saiba_rt.lexicon import BUNDLED_LIBRARY_DIR, load_bundled_libraries
from saiba_rt.markup import parse_fml

ANGER_FML = BUNDLED_LIBRARY_DIR / "anger.fml.xml"


@pytest.fixture(scope="session")
def libs():
    return load_bundled_libraries()


@pytest.fixture(scope="session")
def anger_doc():
    return parse_fml(ANGER_FML.read_text(encoding="utf-8"))


@pytest.fixture
def lib_dir(tmp_path: Path):
    """Writable copy of the bundled libraries for corruption tests."""
    for name in ("faces.lex", "gestuary.lex", "lexicon.lex"):
        (tmp_path / name).write_text((BUNDLED_LIBRARY_DIR / name).read_text(encoding="utf-8"), encoding="utf-8")
    return tmp_path


def pytest_terminal_summary(terminalreporter):
    module = __import__("sys").modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in module.format_results():
        terminalreporter.write_line(line)
