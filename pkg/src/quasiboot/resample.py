"""Block and pigeonhole resampling of grouped observation tables.

Every resample is a pure function of the source table and a
:class:`ResamplePlan`. The plan's ``(seed, replicate_index)`` pair keys
an independent random stream, so replicates can be generated in any
order, or on any worker, and still agree bit for bit.

Levels drawn more than once are relabelled ``"<label>#1"``,
``"<label>#2"``, ... so a refit treats each copy as its own block.
Levels drawn exactly once keep their label.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .exceptions import ContractError
from .model_core import GroupingFactor, ObservationTable


class ResampleMode(str, Enum):
    BLOCK = "block"
    PIGEONHOLE = "pigeonhole"


@dataclass(frozen=True)
class ResamplePlan:
    """Everything needed to reproduce one resample."""

    mode: ResampleMode
    factors: tuple
    seed: int
    replicate_index: int

    def __post_init__(self):
        object.__setattr__(self, "mode", ResampleMode(self.mode))
        object.__setattr__(self, "factors", tuple(self.factors))
        need = 1 if self.mode is ResampleMode.BLOCK else 2
        if len(self.factors) != need:
            raise ContractError(f"{self.mode.value} resampling needs {need} factor(s)")
        if self.replicate_index < 0:
            raise ContractError("replicate_index must be non-negative")

    def rng(self):
        return np.random.default_rng([int(self.seed) & (2**64 - 1), int(self.replicate_index)])


@dataclass(frozen=True)
class ResampledTable:
    """A resampled table plus, for each output row, the source row it copies."""

    table: ObservationTable
    source_rows: np.ndarray = field(repr=False)

    @property
    def multiplicity(self):
        """How many times each output row's source row occurs in the output."""
        counts = np.bincount(self.source_rows)
        return counts[self.source_rows]


def entropy(factor: GroupingFactor):
    """Shannon entropy (nats) of the factor's row shares."""
    p = factor.row_shares()
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def select_bootstrap_factor(table: ObservationTable, candidate_factors):
    """Pick the candidate factor with the largest row-share entropy.

    Ties go to the earliest candidate.
    """
    candidate_factors = list(candidate_factors)
    if not candidate_factors:
        raise ContractError("no candidate factors to bootstrap over")
    best, best_h = None, -np.inf
    for name in candidate_factors:
        h = entropy(table.factor(name))
        if h > best_h + 1e-12:
            best, best_h = name, h
    return best


def _copy_labels(levels, draws_per_copy, copy_number, counts):
    """Labels for level copies; ``copy_number`` is 0-based within each level."""
    return tuple(
        levels[lv] if counts[lv] == 1 else f"{levels[lv]}#{c + 1}"
        for lv, c in zip(draws_per_copy, copy_number)
    )


def _compact(name, levels, codes):
    """Rebuild a factor keeping only the levels that still occur."""
    present = np.flatnonzero(np.bincount(codes, minlength=len(levels)))
    remap = np.full(len(levels), -1, dtype=np.intp)
    remap[present] = np.arange(present.size)
    return GroupingFactor(name, tuple(levels[k] for k in present), remap[codes])


def _assemble(table, rows, replaced):
    factors = []
    for f in table.factors:
        if f.name in replaced:
            factors.append(replaced[f.name])
        else:
            factors.append(_compact(f.name, f.levels, f.codes[rows]))
    out = ObservationTable(table.y[rows], table.X[rows], table.columns, tuple(factors))
    return ResampledTable(out, rows)


def block_resample(table: ObservationTable, factor: str, plan: ResamplePlan) -> ResampledTable:
    """Resample whole levels of ``factor`` with replacement.

    ``K`` level draws are made uniformly from the ``K`` source levels;
    each draw contributes every row of that level, in source order.
    Rows are never resampled within a level.
    """
    k = table.factor(factor).n_levels
    return block_from_draws(table, factor, plan.rng().integers(0, k, size=k))


def block_from_draws(table: ObservationTable, factor: str, draws) -> ResampledTable:
    """Block resample for an explicit sequence of drawn level indices."""
    f = table.factor(factor)
    k = f.n_levels
    draws = np.asarray(draws, dtype=np.intp)
    order = np.argsort(f.codes, kind="stable")
    sizes = np.bincount(f.codes, minlength=k)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    lens = sizes[draws]
    total = int(lens.sum())
    # position within the concatenated output -> position in `order`
    block_start = np.repeat(starts[draws], lens)
    within = np.arange(total) - np.repeat(np.cumsum(lens) - lens, lens)
    rows = order[block_start + within]

    counts = np.bincount(draws, minlength=k)
    seen = np.zeros(k, dtype=np.intp)
    copy_no = np.empty(draws.size, dtype=np.intp)
    for j, d in enumerate(draws):
        copy_no[j] = seen[d]
        seen[d] += 1
    labels = _copy_labels(f.levels, draws, copy_no, counts)
    new_codes = np.repeat(np.arange(draws.size), lens)
    new_factor = GroupingFactor(f.name, labels, new_codes)
    return _assemble(table, rows, {f.name: new_factor})


def pigeonhole_resample(table: ObservationTable, factor_a: str, factor_b: str,
                        plan: ResamplePlan) -> ResampledTable:
    """Two-way pigeonhole resample of crossed factors.

    Levels of each factor are drawn independently with replacement. A
    source row whose ``A`` level was drawn ``a`` times and ``B`` level
    ``b`` times appears ``a * b`` times, once for every pairing of an
    ``A`` copy with a ``B`` copy. Pairings absent from the source add
    no rows.
    """
    rng = plan.rng()
    ka, kb = table.factor(factor_a).n_levels, table.factor(factor_b).n_levels
    count_a = np.bincount(rng.integers(0, ka, size=ka), minlength=ka)
    count_b = np.bincount(rng.integers(0, kb, size=kb), minlength=kb)
    return pigeonhole_from_counts(table, factor_a, factor_b, count_a, count_b)


def pigeonhole_from_counts(table: ObservationTable, factor_a: str, factor_b: str,
                           count_a, count_b) -> ResampledTable:
    """Pigeonhole resample given how often each level of each factor was drawn."""
    fa, fb = table.factor(factor_a), table.factor(factor_b)
    count_a = np.asarray(count_a, dtype=np.intp)
    count_b = np.asarray(count_b, dtype=np.intp)

    ca = count_a[fa.codes]
    cb = count_b[fb.codes]
    mult = ca * cb
    rows = np.repeat(np.arange(table.n), mult)
    c = np.arange(rows.size) - np.repeat(np.cumsum(mult) - mult, mult)
    copy_a = c // cb[rows]
    copy_b = c % cb[rows]

    def relabel(f, counts, copy):
        level = f.codes[rows]
        # one output level per (source level, copy number)
        offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
        slot = offsets[level] + copy
        n_slots = int(counts.sum())
        slot_level = np.repeat(np.arange(f.n_levels), counts)
        slot_copy = np.arange(n_slots) - np.repeat(offsets, counts)
        labels = _copy_labels(f.levels, slot_level, slot_copy, counts)
        return _compact(f.name, labels, slot)

    replaced = {fa.name: relabel(fa, count_a, copy_a), fb.name: relabel(fb, count_b, copy_b)}
    return _assemble(table, rows, replaced)


def resample(table: ObservationTable, plan: ResamplePlan) -> ResampledTable:
    if plan.mode is ResampleMode.BLOCK:
        return block_resample(table, plan.factors[0], plan)
    return pigeonhole_resample(table, plan.factors[0], plan.factors[1], plan)
