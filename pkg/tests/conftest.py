import sys
from pathlib import Path

import pytest

# Oracles and the model checker live beside the tests as plain modules.
sys.path.insert(0, str(Path(__file__).parent))

from leaseway.lease_core import LeaseLedger  # noqa: E402
from leaseway.policy_engine import UnusedFor  # noqa: E402

KEY = bytes(range(32))
DAY = 86_400


@pytest.fixture
def ledger():
    led = LeaseLedger(key=KEY)
    led.add_pool("rm", 2)
    return led


@pytest.fixture
def active(ledger):
    """An Active lease rm -> rc with a one-day UnusedFor condition, granted at t=0."""
    lease = ledger.propose_lease("rc", "rm", "rc", (), (UnusedFor(DAY),), 0, lease_id="L")
    lease, token = ledger.accept_lease("L", "rm", 0)
    return lease, token
