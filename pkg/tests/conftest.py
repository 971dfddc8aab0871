import pytest

_MODULES = pytest.StashKey[list]()


def pytest_collection_finish(session):
    mods = {id(item.module): item.module for item in session.items if hasattr(item, "module")}
    session.config.stash[_MODULES] = list(mods.values())


def pytest_terminal_summary(terminalreporter, config):
    # criterion lines survive output capture by being repeated here
    lines = [line for mod in config.stash.get(_MODULES, []) for line in getattr(mod, "CRITERION_LINES", [])]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
