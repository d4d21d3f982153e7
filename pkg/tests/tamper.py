"""Single-bit tampering of range proofs, members and roots.

Every bit of the proof's wire encoding is flipped. Length and flag fields go
back through ``CompletenessProof.decode``; payload fields (indices, direction
bytes, sibling hashes, boundary keys and value hashes) are substituted into
the proof object directly, which is what decoding the flipped bytes yields and
skips the parse. ``test_merkle`` checks that equivalence bit by bit.
"""

from plbkex.merkle import BoundaryProof, CompletenessProof, InclusionProof, TreeLeaf
from plbkex.records import DecodeError


def flips(data: bytes):
    for i in range(len(data)):
        for bit in range(8):
            b = bytearray(data)
            b[i] ^= 1 << bit
            yield bytes(b)


def _with_proof(cp, slot, new):
    if slot == "L":
        return CompletenessProof(cp.member_proofs, BoundaryProof(cp.left_boundary.leaf, new), cp.right_boundary)
    if slot == "R":
        return CompletenessProof(cp.member_proofs, cp.left_boundary, BoundaryProof(cp.right_boundary.leaf, new))
    mp = list(cp.member_proofs)
    mp[slot] = new
    return CompletenessProof(tuple(mp), cp.left_boundary, cp.right_boundary)


def _with_leaf(cp, slot, leaf):
    if slot == "L":
        return CompletenessProof(cp.member_proofs, BoundaryProof(leaf, cp.left_boundary.proof), cp.right_boundary)
    return CompletenessProof(cp.member_proofs, cp.left_boundary, BoundaryProof(leaf, cp.right_boundary.proof))


def fields(cp):
    """``(offset, length, rebuild)`` per encoded field; ``rebuild`` None means re-decode."""
    out = []
    off = 0

    def add(length, rebuild):
        nonlocal off
        out.append((off, length, rebuild))
        off += length

    def inclusion(slot, p):
        add(8, lambda b: _with_proof(cp, slot, InclusionProof(int.from_bytes(b, "big"), p.audit_path)))
        add(2, None)
        for k, (d, sib) in enumerate(p.audit_path):
            def set_step(nd, ns, k=k):
                path = list(p.audit_path)
                path[k] = (nd, ns)
                return _with_proof(cp, slot, InclusionProof(p.leaf_index, tuple(path)))
            add(1, lambda b, s=sib, f=set_step: f(b[0], s))
            add(32, lambda b, d=d, f=set_step: f(d, b))

    add(4, None)
    for i, p in enumerate(cp.member_proofs):
        inclusion(i, p)
    for slot, b in (("L", cp.left_boundary), ("R", cp.right_boundary)):
        add(1, None)
        if b is not None:
            leaf = b.leaf
            add(4, None)
            add(len(leaf.key), lambda x, s=slot, v=leaf.value_hash: _with_leaf(cp, s, TreeLeaf(x, v)))
            add(32, lambda x, s=slot, k=leaf.key: _with_leaf(cp, s, TreeLeaf(k, x)))
            inclusion(slot, b.proof)
    assert off == len(cp.encode())
    return out


def tampered_proofs(cp, substitute=True):
    """One proof per flipped bit of ``cp.encode()``, None where decoding fails."""
    data = cp.encode()
    for off, length, rebuild in fields(cp):
        for flipped in flips(data[off:off + length]):
            if rebuild is None or not substitute:
                try:
                    yield CompletenessProof.decode(data[:off] + flipped + data[off + length:])
                except DecodeError:
                    yield None
            else:
                yield rebuild(flipped)


def tampered_members(members):
    for j, m in enumerate(members):
        for k in flips(m.key):
            yield members[:j] + [TreeLeaf(k, m.value_hash)] + members[j + 1:]
        for v in flips(m.value_hash):
            yield members[:j] + [TreeLeaf(m.key, v)] + members[j + 1:]
