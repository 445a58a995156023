import numpy as np
import pytest

from hierkg.kg import dataset_from_labels


def toy_hkg():
    train = [
        ("a", "likes", "b", (("since", "c"),), None, None),
        ("b", "likes", "c", (), None, None),
        ("c", "knows", "a", (("via", "b"), ("at", "d")), None, None),
        ("d", "knows", "b", (), None, None),
    ]
    valid = [("a", "knows", "c", (), None, None)]
    test = [("a", "likes", "c", (("since", "b"),), None, None)]
    return dataset_from_labels("hkg", {"train": (train, []), "valid": (valid, []), "test": (test, [])})


def toy_tkg():
    train = [("a", "r", "b", (), 1963, 1963), ("b", "r", "c", (), 1960, 1970), ("c", "s", "a", (), 1970, 1971)]
    test = [("a", "s", "c", (), 1963, 1964)]
    return dataset_from_labels("tkg", {"train": (train, []), "test": (test, [])})


def toy_nkg():
    train = [("a", "r1", "b", (), None, None), ("a", "r2", "b", (), None, None),
             ("b", "r1", "c", (), None, None), ("b", "r2", "c", (), None, None),
             ("c", "r1", "a", (), None, None)]
    nested = [(("a", "r1", "b"), "imply", ("a", "r2", "b"))]
    test_nested = [(("b", "r1", "c"), "imply", ("b", "r2", "c"))]
    return dataset_from_labels("nkg", {"train": (train, nested), "test": ([], test_nested)})


@pytest.fixture
def hkg():
    return toy_hkg()


@pytest.fixture
def tkg():
    return toy_tkg()


@pytest.fixture
def nkg():
    return toy_nkg()


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# -- acceptance summary --------------------------------------------------------
_ACCEPTANCE: dict[str, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if item.module.__name__.endswith("test_acceptance") and item.name.startswith("test_criterion"):
        title = (item.function.__doc__ or item.name).strip().splitlines()[0]
        if rep.when == "call" or (rep.when == "setup" and not rep.passed):
            status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
            _ACCEPTANCE[item.name] = (title, status)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE):
        title, status = _ACCEPTANCE[name]
        terminalreporter.write_line(f"{status}  {title}")
