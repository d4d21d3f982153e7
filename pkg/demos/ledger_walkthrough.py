# coding: utf-8

# # The ledger and its proofs
#
# Events are submitted in one round and published in the next. Every round
# ends with a root over one ordered Merkle tree, and roots are hash-chained.

# In[1]:

import hashlib
import random

from plbkex.ledger import Ledger
from plbkex.merkle import TreeLeaf, verify_range, verify_root_chain
from plbkex.records import Context, context_key_range


# In[2]:

ledger = Ledger(rng=random.Random(7))
ctx = ledger.acquire_context(b"demo")
print("out-of-band code:", ctx.code_text())
digest = hashlib.sha256(b"some key exchange").digest()
receipt = ledger.submit(ctx, digest, principal="alice")
print("visible now:", ledger.query(ctx, 0, ledger.current_time()).events)


# Nothing shows until the round closes.

# In[3]:

ledger.advance_round()
now = ledger.current_time()
res = ledger.query(ctx, 0, now)
print("published in round", res.events[0].round, "as expected", receipt.publication_round)


# The answer comes with a completeness proof against the latest root.

# In[4]:

lo, hi = context_key_range(ctx, 0, now)
leaves = [TreeLeaf.for_event(e) for e in res.events]
print("chain ok:", verify_root_chain(res.roots))
print("range ok:", verify_range(res.roots[-1].tree_root, lo, hi, leaves, res.proof))


# Hiding the event from the answer breaks the proof.

# In[5]:

print("without the event:", verify_range(res.roots[-1].tree_root, lo, hi, [], res.proof))
