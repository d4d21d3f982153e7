# coding: utf-8

# # Attacks in the simulator
#
# Each run is one seeded world: a fresh ledger, two honest devices, a user
# holding both, and optionally an adversary on the channel.

# In[1]:

from collections import Counter

from plbkex.config import AdversaryConfig, ScenarioConfig
from plbkex.protocol import ProtocolParams
from plbkex.sim import run_scenario, summarize


def scenario(variant, kind="none", strategy=None, runs=200, **kw):
    params = ProtocolParams(variant=variant, **kw.pop("params", {}))
    return ScenarioConfig(params=params, adversary=AdversaryConfig(kind, strategy), runs=runs, seed=1, **kw)


# An honest run accepts on both sides with the same key.

# In[2]:

print(summarize(run_scenario(scenario("oob")))["both_accepted"])


# A man in the middle has to publish under the same context, so whoever
# queries last sees two events.

# In[3]:

for strategy in ("commit-both", "commit-one", "commit-none"):
    reports = run_scenario(scenario("oob", "mitm", strategy))
    reasons = Counter(r.abort_reason_initiator or "-" for r in reports)
    print(strategy, dict(reasons), "violations:", sum(r.soundness_violation for r in reports))


# Impersonation is caught by the user with an out-of-band code, and not at all
# with a natural context.

# In[4]:

for variant in ("oob", "natural"):
    reports = run_scenario(scenario(variant, "impersonate"))
    print(variant, sum(r.impersonation_undetected for r in reports), "of", len(reports), "undetected")


# A user who waits before pressing start opens a gap for an attacker who
# commits early. Anchoring the initiator's window at the round its code was
# issued closes it.

# In[5]:

early = AdversaryConfig("mitm", "commit-one", timing="early")
plain = run_scenario(ScenarioConfig(adversary=early, runs=200, seed=3, user_reaction=3))
anchored = run_scenario(ScenarioConfig(params=ProtocolParams(anchor_initiator_window=True), adversary=early,
                                       runs=200, seed=3, user_reaction=3))
print("plain:", sum(r.soundness_violation for r in plain), "anchored:", sum(r.soundness_violation for r in anchored))
