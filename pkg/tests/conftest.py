import logging
import os
import sys

sys.path.insert(0, os.path.dirname(__file__))


def pytest_configure(config):
    logging.getLogger("viscoplast").setLevel(logging.ERROR)


from hypothesis import HealthCheck, settings  # noqa: E402

settings.register_profile("repro", derandomize=True, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repro")
