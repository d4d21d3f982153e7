"""Quick self-check: exhaustive small-tree Merkle suite and a soundness sweep."""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass
from unittest import mock

from . import protocol
from .config import AdversaryConfig, ScenarioConfig
from .merkle import (
    BoundaryProof,
    CompletenessProof,
    MerkleError,
    TreeLeaf,
    build_tree,
    prove_inclusion,
    prove_range,
    verify_inclusion,
    verify_range,
)
from .protocol import ProtocolParams
from .records import DecodeError, H, u64
from .sim import run_scenario


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    detail: str
    seconds: float

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'}  {self.name}: {self.detail} ({self.seconds:.2f}s)"


def small_leaves(n: int) -> list[TreeLeaf]:
    """Leaves with keys 2, 4, ..., 2n so that odd keys fall between them."""
    return [TreeLeaf(u64(2 * (i + 1)), H(b"leaf", u64(i))) for i in range(n)]


def _subset_proof(leaves, subset, lo_idx, hi_idx) -> CompletenessProof:
    """Best-effort proof for an arbitrary claimed member set."""
    members = tuple(prove_inclusion(leaves, i) for i in subset)
    left = BoundaryProof(leaves[lo_idx], prove_inclusion(leaves, lo_idx)) if lo_idx is not None else None
    right = BoundaryProof(leaves[hi_idx], prove_inclusion(leaves, hi_idx)) if hi_idx is not None else None
    return CompletenessProof(members, left, right)


def merkle_exhaustive(max_leaves: int = 5, verify=verify_range) -> tuple[int, list[str]]:
    """Every tree up to ``max_leaves``, every key range, every claimed member subset.

    Returns the number of checks run and a list of failure descriptions.
    """
    checks, failures = 0, []
    for n in range(max_leaves + 1):
        leaves = small_leaves(n)
        root = build_tree(leaves)
        keys = range(1, 2 * n + 2)
        for lo, hi in itertools.combinations_with_replacement(keys, 2):
            klo, khi = u64(lo), u64(hi)
            truth = [i for i in range(n) if lo <= 2 * (i + 1) <= hi]
            members, proof = prove_range(leaves, klo, khi)
            checks += 1
            if [m.key for m in members] != [leaves[i].key for i in truth] or not verify(root, klo, khi, members, proof):
                failures.append(f"n={n} [{lo},{hi}] honest proof rejected")
                continue
            below = [i for i in range(n) if 2 * (i + 1) < lo]
            above = [i for i in range(n) if 2 * (i + 1) > hi]
            honest_bounds = (below[-1] if below else None, above[0] if above else None)
            for size in range(n + 1):
                for subset in itertools.combinations(range(n), size):
                    if list(subset) == truth:
                        continue
                    claimed = [leaves[i] for i in subset]
                    candidates = {honest_bounds}
                    if subset:
                        before = subset[0] - 1 if subset[0] > 0 else None
                        after = subset[-1] + 1 if subset[-1] < n - 1 else None
                        candidates.add((before, after))
                    for lo_idx, hi_idx in candidates:
                        checks += 1
                        forged = _subset_proof(leaves, subset, lo_idx, hi_idx)
                        if verify(root, klo, khi, claimed, forged):
                            failures.append(f"n={n} [{lo},{hi}] accepted wrong set {list(subset)}")
    return checks, failures


def tamper_exhaustive(max_leaves: int = 4, verify=verify_range) -> tuple[int, list[str]]:
    """Flip each bit of the encoded proof, of each member and of the root."""
    checks, failures = 0, []
    for n in range(max_leaves + 1):
        leaves = small_leaves(n)
        root = build_tree(leaves)
        for lo, hi in itertools.combinations_with_replacement(range(1, 2 * n + 2), 2):
            klo, khi = u64(lo), u64(hi)
            members, proof = prove_range(leaves, klo, khi)
            blob = proof.encode()
            for bit in range(len(blob) * 8):
                checks += 1
                mutated = bytearray(blob)
                mutated[bit // 8] ^= 1 << (bit % 8)
                try:
                    bad = CompletenessProof.decode(bytes(mutated))
                except (DecodeError, MerkleError, ValueError):
                    continue
                if verify(root, klo, khi, members, bad):
                    failures.append(f"n={n} [{lo},{hi}] proof bit {bit} flip accepted")
            for m, leaf in enumerate(members):
                for field_name in ("key", "value_hash"):
                    raw = getattr(leaf, field_name)
                    for bit in range(len(raw) * 8):
                        checks += 1
                        flipped = bytearray(raw)
                        flipped[bit // 8] ^= 1 << (bit % 8)
                        changed = list(members)
                        changed[m] = TreeLeaf(**{**leaf.__dict__, field_name: bytes(flipped)})
                        if verify(root, klo, khi, changed, proof):
                            failures.append(f"n={n} [{lo},{hi}] member {m} {field_name} bit {bit} accepted")
            for bit in range(len(root) * 8):
                checks += 1
                flipped = bytearray(root)
                flipped[bit // 8] ^= 1 << (bit % 8)
                if verify(bytes(flipped), klo, khi, members, proof):
                    failures.append(f"n={n} [{lo},{hi}] root bit {bit} accepted")
    return checks, failures


def soundness_sweep(seeds: int = 50) -> tuple[int, list[str]]:
    """MitM strategies on both variants; counts runs where both accept unequal keys."""
    runs, failures = 0, []
    for variant in ("oob", "natural"):
        for strategy in ("commit-both", "commit-one", "commit-none"):
            cfg = ScenarioConfig(params=ProtocolParams(variant=variant),
                                 adversary=AdversaryConfig("mitm", strategy), runs=seeds, seed=1)
            bad = sum(r.soundness_violation for r in run_scenario(cfg))
            runs += seeds
            if bad:
                failures.append(f"{variant}/{strategy}: {bad} soundness violations")
    return runs, failures


def _faulty_verify_range(root, key_lo, key_hi, members, proof) -> bool:
    # Injected mutation: checks member inclusion only, so omissions go unnoticed.
    return all(verify_inclusion(root, leaf, p) for leaf, p in zip(members, proof.member_proofs))


def run_selftest(seeds: int = 50, inject_fault: bool = False) -> list[CheckResult]:
    verify = _faulty_verify_range if inject_fault else verify_range
    results = []

    def timed(name, fn, unit):
        t = time.perf_counter()
        count, failures = fn()
        detail = f"{count} {unit}" if not failures else f"{len(failures)} failures, first: {failures[0]}"
        results.append(CheckResult(name, not failures, detail, time.perf_counter() - t))

    timed("merkle range completeness (<=5 leaves)", lambda: merkle_exhaustive(5, verify), "checks")
    timed("merkle single-bit tampering (<=3 leaves)", lambda: tamper_exhaustive(3, verify), "checks")
    with mock.patch.object(protocol, "verify_range", verify):
        timed("mitm soundness sweep", lambda: soundness_sweep(seeds), "runs")
    return results
