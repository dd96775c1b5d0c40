import itertools

import pytest

from multimark.histories import EncounterHistory, Event, ObservedClass, ObservedData, classify

TOY_RECORDS = [("00L0L000", 2), ("0000L000", 1), ("00R00000", 1), ("000RR000", 1), ("00SBR000", 1),
               ("S0S00000", 1)]


def all_histories(T):
    """Every history of length T, all-zero included, in lexicographic code order."""
    for codes in itertools.product(range(5), repeat=T):
        yield EncounterHistory(tuple(Event(c) for c in codes))


def first_of_class(T, cls, n):
    return list(itertools.islice((h for h in all_histories(T) if not h.is_zero and classify(h) is cls), n))


def ecocean_shaped(n_left=27, n_right=24, n_sim=45, T=8) -> ObservedData:
    """Distinct histories with the class sizes of the whale-shark data set."""
    hs = (first_of_class(T, ObservedClass.LEFT_ONLY, n_left) + first_of_class(T, ObservedClass.RIGHT_ONLY, n_right)
          + first_of_class(T, ObservedClass.SIMULTANEOUS, n_sim))
    return ObservedData.from_records((h, 1) for h in hs)


@pytest.fixture
def toy():
    return ObservedData.from_records(TOY_RECORDS)


@pytest.fixture(scope="session")
def ecocean():
    return ecocean_shaped()


# one line per acceptance criterion, collected by tests/test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
