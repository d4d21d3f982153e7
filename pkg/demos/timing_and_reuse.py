# coding: utf-8

# # Natural contexts: the timing gate and one exchange per period

# In[1]:

from plbkex.config import ScenarioConfig
from plbkex.protocol import ProtocolParams, may_start
from plbkex.sim import Simulation

params = ProtocolParams(w=100, alpha=10, delta=2, variant="natural")


# Starting is allowed only well inside a period, so an exchange cannot spill
# into the next one.

# In[2]:

allowed = [t for t in range(100) if may_start(t, params)]
print("first", allowed[0], "last", allowed[-1], "count", len(allowed))


# The same pair of endpoints can exchange once per period.

# In[3]:

sim = Simulation(ScenarioConfig(params=params, seed=5))
first = sim.exchange(start_round=30)
second = sim.exchange(start_round=50)
third = sim.exchange(start_round=130)
for name, r in (("first", first), ("second", second), ("third", third)):
    print(name, r.outcome_initiator, r.abort_reason_initiator, r.outcome_responder, r.abort_reason_responder)
