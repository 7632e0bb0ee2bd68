import time

from hypothesis import HealthCheck, settings

SESSION_T0 = time.perf_counter()

settings.register_profile(
    "suite",
    max_examples=50,
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.filter_too_much, HealthCheck.too_slow],
)
settings.load_profile("suite")


def pytest_collection_modifyitems(items):
    # acceptance checks close the session so their wall-clock check covers it
    items.sort(key=lambda item: item.path.name == "test_acceptance.py")


def session_elapsed():
    return time.perf_counter() - SESSION_T0
