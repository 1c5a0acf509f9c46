import time

import pytest

from trendfuzz.campaign import build_campaign
from trendfuzz.config import parse_config
from tests.stubs import sim_config_text

FOUR_HOURS = 4 * 3600


class CampaignRunner:
    """Runs simulated campaigns once per (scenario, policy, seed, overrides) per test session."""

    def __init__(self, root):
        self.root = root
        self.cache = {}

    def __call__(self, scenario, policy="trend", seed=0, budget=FOUR_HOURS, **keys):
        key = (scenario, policy, seed, budget, tuple(sorted(keys.items())))
        if key not in self.cache:
            out = self.root / "-".join(str(k) for k in key[:4]) / str(len(self.cache))
            text = sim_config_text(scenario, out, policy=policy, rng_seed=seed, total_budget=budget, **keys)
            campaign = build_campaign(parse_config(text, environ={}))
            t0 = time.perf_counter()
            result = campaign.run()
            campaign.wall_time = time.perf_counter() - t0
            self.cache[key] = (campaign, result)
        return self.cache[key]


@pytest.fixture(scope="session")
def run_sim(tmp_path_factory):
    return CampaignRunner(tmp_path_factory.mktemp("campaigns"))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
