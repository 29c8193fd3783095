"""Subject-level train/val/test splits stratified by diagnosis."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import SplitPlan
from .timeseries_io import Cohort

SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True)
class Split:
    repeat: int
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]

    def parts(self) -> dict[str, tuple[str, ...]]:
        return {"train": self.train, "val": self.val, "test": self.test}


def largest_remainder(n: int, fractions, minimum: int = 0) -> list[int]:
    raw = [n * f for f in fractions]
    counts = [max(int(math.floor(r)), minimum) for r in raw]
    while sum(counts) < n:
        i = max(range(len(raw)), key=lambda k: (raw[k] - counts[k], -k))
        counts[i] += 1
    while sum(counts) > n:
        i = max((k for k in range(len(raw)) if counts[k] > minimum), key=lambda k: (counts[k] - raw[k], k))
        counts[i] -= 1
    return counts


def _interleave(groups: list[list[str]]) -> list[str]:
    groups = sorted((g for g in groups if g), key=len, reverse=True)
    out = []
    for k in range(max((len(g) for g in groups), default=0)):
        out.extend(g[k] for g in groups if k < len(g))
    return out


def _round_robin(members: list[str], quotas: list[int]) -> list[list[str]]:
    left = list(quotas)
    parts: list[list[str]] = [[] for _ in quotas]
    s = 0
    for sid in members:
        while left[s] == 0:
            s = (s + 1) % len(quotas)
        parts[s].append(sid)
        left[s] -= 1
        s = (s + 1) % len(quotas)
    return parts


def make_split(cohort: Cohort, plan: SplitPlan, repeat: int) -> Split:
    """One seeded split.

    Strata are Normal vs impaired (MCI+IMP); an impaired stratum of three or
    more subjects places at least one in every split, with MCI and IMP
    interleaved so both labels spread across splits. Normal subjects fill the
    remaining overall quotas, keeping totals within one subject of the
    requested fractions.
    """
    rng = np.random.default_rng([plan.seed & 0xFFFFFFFFFFFFFFFF, repeat])
    fractions = (plan.train, plan.val, plan.test)

    def shuffled(label):
        ids = [r.subject_id for r in cohort.records if r.diagnosis == label]
        return [ids[i] for i in rng.permutation(len(ids))]

    normal = shuffled("Normal")
    impaired = _interleave([shuffled("MCI"), shuffled("IMP")])
    total = largest_remainder(len(cohort), fractions)
    imp_q = largest_remainder(len(impaired), fractions, minimum=1 if len(impaired) >= 3 else 0)
    norm_q = [max(0, t - i) for t, i in zip(total, imp_q)]
    while sum(norm_q) > len(normal):
        k = max(range(3), key=lambda j: (norm_q[j], j))
        norm_q[k] -= 1
    while sum(norm_q) < len(normal):
        k = min(range(3), key=lambda j: (norm_q[j] + imp_q[j] - total[j], j))
        norm_q[k] += 1
    imp_parts = _round_robin(impaired, imp_q)
    parts = [imp_parts[s] + normal[sum(norm_q[:s]) : sum(norm_q[: s + 1])] for s in range(3)]
    return Split(repeat, *(tuple(sorted(p)) for p in parts))


def split_plan(cohort: Cohort, plan: SplitPlan) -> list[Split]:
    return [make_split(cohort, plan, r) for r in range(plan.n_repeats)]
