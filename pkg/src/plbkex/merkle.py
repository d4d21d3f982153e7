"""Ordered binary Merkle tree with inclusion and range-completeness proofs.

Leaves are kept in strictly ascending key order. Leaf hashes are
``H(0x00 || leaf)`` and interior hashes ``H(0x01 || left || right)``; an odd
node at the end of a level is promoted unchanged, so the tree is a full
binary tree once promoted nodes are collapsed into their only child.

Range proofs do not carry the tree size. Completeness is checked from the
audit-path directions alone: two leaves are neighbours iff their paths split
at one node, the left leaf running down the right edge of the left subtree
and the right leaf down the left edge of the right subtree.
"""

from __future__ import annotations

from bisect import bisect_left, bisect_right
from hashlib import sha256
from dataclasses import dataclass

from .records import (
    HASH_LEN,
    ZERO_HASH,
    DecodeError,
    H,
    LedgerEvent,
    Reader,
    RoundRoot,
    enc,
    u16,
    u32,
    u64,
)

LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"
EMPTY_ROOT = H(LEAF_PREFIX)

# Direction byte records where the sibling sits.
SIBLING_LEFT = 0
SIBLING_RIGHT = 1


class MerkleError(ValueError):
    pass


class UnsortedLeaves(MerkleError):
    pass


class IndexOutOfRange(MerkleError, IndexError):
    pass


class InvalidRange(MerkleError):
    pass


@dataclass(frozen=True)
class TreeLeaf:
    key: bytes
    value_hash: bytes

    def encode(self) -> bytes:
        return enc(self.key) + self.value_hash

    def node_hash(self) -> bytes:
        return H(LEAF_PREFIX, self.encode())

    @classmethod
    def read(cls, r: Reader) -> TreeLeaf:
        return cls(r.blob(), r.take(HASH_LEN))

    @classmethod
    def for_event(cls, event: LedgerEvent) -> TreeLeaf:
        return cls(event.key(), H(event.encode()))


@dataclass(frozen=True)
class InclusionProof:
    leaf_index: int
    audit_path: tuple[tuple[int, bytes], ...]

    def encode(self) -> bytes:
        out = [u64(self.leaf_index), u16(len(self.audit_path))]
        for direction, sibling in self.audit_path:
            out.append(bytes([direction]) + sibling)
        return b"".join(out)

    @classmethod
    def read(cls, r: Reader) -> InclusionProof:
        index = r.u64()
        step = 1 + HASH_LEN
        raw = r.take(step * r.u16())
        return cls(index, tuple((raw[i], raw[i + 1:i + step]) for i in range(0, len(raw), step)))


@dataclass(frozen=True)
class BoundaryProof:
    leaf: TreeLeaf
    proof: InclusionProof


@dataclass(frozen=True)
class CompletenessProof:
    member_proofs: tuple[InclusionProof, ...]
    left_boundary: BoundaryProof | None = None
    right_boundary: BoundaryProof | None = None

    def encode(self) -> bytes:
        out = [u32(len(self.member_proofs))]
        out.extend(p.encode() for p in self.member_proofs)
        for b in (self.left_boundary, self.right_boundary):
            if b is None:
                out.append(b"\x00")
            else:
                out.append(b"\x01" + b.leaf.encode() + b.proof.encode())
        return b"".join(out)

    @classmethod
    def decode(cls, data: bytes) -> CompletenessProof:
        r = Reader(data)
        members = tuple(InclusionProof.read(r) for _ in range(r.u32()))
        bounds = []
        for _ in range(2):
            flag = r.u8()
            if flag == 0:
                bounds.append(None)
            elif flag == 1:
                leaf = TreeLeaf.read(r)
                bounds.append(BoundaryProof(leaf, InclusionProof.read(r)))
            else:
                raise DecodeError("bad boundary flag")
        r.finish()
        return cls(members, bounds[0], bounds[1])


def _check_sorted(leaves) -> None:
    for a, b in zip(leaves, leaves[1:]):
        if not a.key < b.key:
            raise UnsortedLeaves("leaves must be strictly ascending by key")


def tree_levels(leaves) -> list[list[bytes]]:
    """All levels of the tree, leaf hashes first, root level last."""
    _check_sorted(leaves)
    level = [leaf.node_hash() for leaf in leaves]
    levels = [level]
    while len(level) > 1:
        nxt = [H(NODE_PREFIX, level[i], level[i + 1]) for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
        levels.append(level)
    return levels


def root_of(levels: list[list[bytes]]) -> bytes:
    return levels[-1][0] if levels[0] else EMPTY_ROOT


def build_tree(leaves) -> bytes:
    return root_of(tree_levels(leaves))


def path_from_levels(levels: list[list[bytes]], index: int) -> InclusionProof:
    n = len(levels[0])
    if not 0 <= index < n:
        raise IndexOutOfRange(f"leaf index {index} outside tree of {n}")
    path = []
    i = index
    for level in levels[:-1]:
        sib = i ^ 1
        if sib < len(level):
            path.append((SIBLING_LEFT if i & 1 else SIBLING_RIGHT, level[sib]))
        i //= 2
    return InclusionProof(index, tuple(path))


def prove_inclusion(leaves, index: int) -> InclusionProof:
    return path_from_levels(tree_levels(leaves), index)


def _climb(leaf: TreeLeaf, proof: InclusionProof) -> bytes | None:
    h = leaf.node_hash()
    for direction, sibling in proof.audit_path:
        if len(sibling) != HASH_LEN:
            return None
        if direction == SIBLING_LEFT:
            h = sha256(NODE_PREFIX + sibling + h).digest()
        elif direction == SIBLING_RIGHT:
            h = sha256(NODE_PREFIX + h + sibling).digest()
        else:
            return None
    return h


def index_matches_path(proof: InclusionProof) -> bool:
    """Whether ``leaf_index`` is consistent with the path's directions.

    A left sibling means a 1 bit at that level, a right sibling a 0 bit, and
    levels skipped by promotion always carry a 0 bit (a promoted node is the
    last one of an odd-sized level). The tree size is not needed.
    """
    index = proof.leaf_index
    level = 0
    for direction, _ in proof.audit_path:
        if direction == SIBLING_RIGHT:
            if index >> level & 1:
                return False
            level += 1
        else:
            rest = index >> level
            if rest == 0:
                return False
            level += (rest & -rest).bit_length()
    return index >> level == 0


def verify_inclusion(root: bytes, leaf: TreeLeaf, proof: InclusionProof) -> bool:
    return index_matches_path(proof) and _climb(leaf, proof) == root


def _directions(proof: InclusionProof) -> list[int]:
    """Root-first direction sequence."""
    return [d for d, _ in reversed(proof.audit_path)]


def _is_leftmost(dirs) -> bool:
    return all(d == SIBLING_RIGHT for d in dirs)


def _is_rightmost(dirs) -> bool:
    return all(d == SIBLING_LEFT for d in dirs)


def _adjacent(dl: list[int], dr: list[int]) -> bool:
    """Root-first directions of two leaves; true iff the second is the next leaf."""
    m = 0
    while m < len(dl) and m < len(dr) and dl[m] == dr[m]:
        m += 1
    if m == len(dl) or m == len(dr):
        return False
    if dl[m] != SIBLING_RIGHT or dr[m] != SIBLING_LEFT:
        return False
    return _is_rightmost(dl[m + 1:]) and _is_leftmost(dr[m + 1:])


def prove_range_from_levels(leaves, levels, key_lo: bytes, key_hi: bytes):
    """Like :func:`prove_range` but reuses precomputed ``tree_levels``."""
    if key_lo > key_hi:
        raise InvalidRange("key_lo must not exceed key_hi")
    keys = [leaf.key for leaf in leaves]
    i = bisect_left(keys, key_lo)
    j = bisect_right(keys, key_hi)
    members = list(leaves[i:j])
    member_proofs = tuple(path_from_levels(levels, k) for k in range(i, j))
    left = BoundaryProof(leaves[i - 1], path_from_levels(levels, i - 1)) if i > 0 else None
    right = BoundaryProof(leaves[j], path_from_levels(levels, j)) if j < len(leaves) else None
    return members, CompletenessProof(member_proofs, left, right)


def prove_range(leaves, key_lo: bytes, key_hi: bytes):
    """Members with key in ``[key_lo, key_hi]`` and a proof that they are all of them."""
    return prove_range_from_levels(leaves, tree_levels(leaves), key_lo, key_hi)


def _walk(leaf: TreeLeaf, proof: InclusionProof) -> tuple[bytes, list[int]] | None:
    """Climb to a root and collect root-first directions in one pass.

    None if a step is malformed or ``leaf_index`` does not fit the path.
    """
    key = leaf.key
    h = sha256(LEAF_PREFIX + len(key).to_bytes(4, "big") + key + leaf.value_hash).digest()
    index = proof.leaf_index
    level = 0
    dirs = []
    for direction, sibling in proof.audit_path:
        if len(sibling) != HASH_LEN:
            return None
        if direction == SIBLING_RIGHT:
            if index >> level & 1:
                return None
            level += 1
            h = sha256(NODE_PREFIX + h + sibling).digest()
        elif direction == SIBLING_LEFT:
            rest = index >> level
            if rest == 0:
                return None
            level += (rest & -rest).bit_length()
            h = sha256(NODE_PREFIX + sibling + h).digest()
        else:
            return None
        dirs.append(direction)
    if index >> level:
        return None
    dirs.reverse()
    return h, dirs


def verify_range(root: bytes, key_lo: bytes, key_hi: bytes, members, proof: CompletenessProof) -> bool:
    if key_lo > key_hi:
        raise InvalidRange("key_lo must not exceed key_hi")
    members = list(members)
    if len(members) != len(proof.member_proofs):
        return False
    for a, b in zip(members, members[1:]):
        if not a.key < b.key:
            return False
    if any(not key_lo <= m.key <= key_hi for m in members):
        return False
    left, right = proof.left_boundary, proof.right_boundary
    chain = []
    if left is not None:
        if not left.leaf.key < key_lo:
            return False
        chain.append((left.leaf, left.proof))
    chain.extend(zip(members, proof.member_proofs))
    if right is not None:
        if not right.leaf.key > key_hi:
            return False
        chain.append((right.leaf, right.proof))

    if not chain:
        return root == EMPTY_ROOT
    if left is None and chain[0][1].leaf_index != 0:
        return False
    prev_index = prev_dirs = None
    for leaf, p in chain:
        walked = _walk(leaf, p)
        if walked is None or walked[0] != root:
            return False
        dirs = walked[1]
        if prev_dirs is None:
            if left is None and not _is_leftmost(dirs):
                return False
        elif p.leaf_index != prev_index + 1 or not _adjacent(prev_dirs, dirs):
            return False
        prev_index, prev_dirs = p.leaf_index, dirs
    return right is not None or _is_rightmost(prev_dirs)


def verify_root_chain(roots) -> bool:
    """True iff ``roots`` is a gap-free hash chain of consecutive rounds."""
    roots = list(roots)
    if not roots:
        return False
    for r in roots:
        if len(r.tree_root) != HASH_LEN or len(r.prev_hash) != HASH_LEN or r.round < 0:
            return False
    if roots[0].round == 0 and roots[0].prev_hash != ZERO_HASH:
        return False
    for prev, cur in zip(roots, roots[1:]):
        if cur.round != prev.round + 1 or cur.prev_hash != prev.digest():
            return False
    return True
