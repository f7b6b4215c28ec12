"""Labeling functions: rule matching over text, per-LF statistics, majority vote.

Rules are one-class by construction here: a keyword rule matches whole tokens
(case-insensitive, after whitespace/punctuation tokenization), a regex rule is
an any-position search with the raw pattern.
"""

from __future__ import annotations

import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import MatchMatrix, MappingMatrix, Sample
from .errors import ConfigError, DataError
from .seeds import stream
from .text import tokenize

THREADS_ENV = "SEPLL_THREADS"


@dataclass(frozen=True)
class LabelingFunction:
    """One rule assigning a single class when it matches."""

    id: int
    kind: str  # "keyword" | "regex"
    label: int
    terms: tuple[str, ...] = ()
    pattern: str = ""

    def __post_init__(self):
        if self.kind not in ("keyword", "regex"):
            raise ConfigError(f"LF {self.id}: unknown kind {self.kind!r}")
        if self.label < 0:
            raise ConfigError(f"LF {self.id}: negative class index")
        if self.kind == "keyword":
            if not self.terms or any(not t.strip() for t in self.terms):
                raise ConfigError(f"LF {self.id}: keyword rule needs non-empty terms")
        else:
            if not self.pattern:
                raise ConfigError(f"LF {self.id}: regex rule needs a pattern")
            try:
                re.compile(self.pattern)
            except re.error as exc:
                raise ConfigError(f"LF {self.id}: bad regex: {exc}") from exc


def parse_lf_entries(
    entries: Sequence[tuple[str, str]], class_names: Sequence[str]
) -> tuple[LabelingFunction, ...]:
    """Parse config entries of the form ``<kind> <class-name> <terms-or-pattern>``.

    Keyword payloads are comma-separated terms; regex payloads are the raw
    remainder of the line. Class names resolve against ``class_names``.
    """
    index = {name: i for i, name in enumerate(class_names)}
    lfs = []
    for lf_id, (name, value) in enumerate(entries):
        parts = value.strip().split(None, 2)
        if len(parts) != 3:
            raise ConfigError(
                f"LF entry {name!r}: expected '<keyword|regex> <class> <payload>', got {value!r}"
            )
        kind, cls_name, payload = parts
        if cls_name not in index:
            raise ConfigError(f"LF entry {name!r}: unknown class {cls_name!r}")
        if kind == "keyword":
            terms = tuple(t.strip() for t in payload.split(",") if t.strip())
            lfs.append(LabelingFunction(id=lf_id, kind="keyword", label=index[cls_name], terms=terms))
        else:
            lfs.append(
                LabelingFunction(id=lf_id, kind=kind, label=index[cls_name], pattern=payload.strip())
            )
    return tuple(lfs)


def _contains_run(tokens: list[str], run: list[str]) -> bool:
    if len(run) == 1:
        return run[0] in tokens
    span = len(run)
    return any(tokens[i : i + span] == run for i in range(len(tokens) - span + 1))


def _worker_count() -> int:
    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return 1
    try:
        cap = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(1, cap)


def apply_lfs(lfs: Sequence[LabelingFunction], samples: Sequence[Sample]) -> MatchMatrix:
    """Evaluate every rule against every sample.

    Parallel workers (capped by the SEPLL_THREADS environment variable) split
    the samples into contiguous chunks; results merge by sample index so the
    outcome is order-deterministic regardless of worker count.
    """
    compiled = [re.compile(lf.pattern) if lf.kind == "regex" else None for lf in lfs]
    term_runs = [
        [tokenize(t) for t in lf.terms] if lf.kind == "keyword" else None for lf in lfs
    ]

    def match_row(i: int) -> list[int]:
        sample = samples[i]
        tokens = None
        hits = []
        for j, lf in enumerate(lfs):
            if lf.kind == "keyword":
                if tokens is None:
                    tokens = tokenize(sample.text)
                if any(run and _contains_run(tokens, run) for run in term_runs[j]):
                    hits.append(j)
            else:
                try:
                    found = compiled[j].search(sample.text)
                except Exception as exc:
                    raise DataError(
                        f"labeling function {lf.id} failed on sample {sample.id}: {exc}"
                    ) from exc
                if found:
                    hits.append(j)
        return hits

    workers = _worker_count()
    indices = range(len(samples))
    if workers <= 1 or len(samples) < 2 * workers:
        rows = [match_row(i) for i in indices]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(match_row, indices))
    pairs = [(i, j) for i, hits in enumerate(rows) for j in hits]
    arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    return MatchMatrix(n=len(samples), m=len(lfs), pairs=arr)


def mapping_from_lfs(lfs: Sequence[LabelingFunction], c: int) -> MappingMatrix:
    return MappingMatrix(c=c, class_of=np.array([lf.label for lf in lfs], dtype=np.int64))


def majority_vote(match: MatchMatrix, mapping: MappingMatrix, seed: int) -> np.ndarray:
    """Argmax of per-class vote counts.

    Unmatched samples get a uniform random class; ties break uniformly among
    the tied classes. Both draws come from the dedicated "mv-ties" stream and
    are consumed in row order, only on ambiguous rows.
    """
    if match.m != mapping.m:
        raise DataError(f"LF dimension mismatch: matches have m={match.m}, mapping m={mapping.m}")
    votes = match.to_dense() @ mapping.to_dense()
    rng = stream(seed, "mv-ties")
    preds = np.empty(match.n, dtype=np.int64)
    for i in range(match.n):
        row = votes[i]
        tied = np.flatnonzero(row == row.max())
        preds[i] = tied[0] if tied.size == 1 else rng.choice(tied)
    return preds


@dataclass(frozen=True)
class PerLfStats:
    coverage: float
    hits: int
    precision: float | None


@dataclass(frozen=True)
class LfStats:
    per_lf: tuple[PerLfStats, ...]
    coverage: float
    mean_matches_per_matched: float
    conflict_rate: float

    def to_json_dict(self) -> dict:
        return {
            "coverage": self.coverage,
            "mean_matches_per_matched": self.mean_matches_per_matched,
            "conflict_rate": self.conflict_rate,
            "per_lf": [
                {"coverage": p.coverage, "hits": p.hits, "precision": p.precision}
                for p in self.per_lf
            ],
        }


def compute_stats(
    match: MatchMatrix, mapping: MappingMatrix, gold: Sequence[int] | None = None
) -> LfStats:
    """Per-LF coverage/precision and dataset-level coverage, density, conflict rate."""
    if match.m != mapping.m:
        raise DataError(f"LF dimension mismatch: matches have m={match.m}, mapping m={mapping.m}")
    dense = match.to_dense()
    n = match.n
    hits = dense.sum(axis=0).astype(np.int64)
    gold_arr = None
    if gold is not None:
        gold_arr = np.asarray(list(gold), dtype=np.int64)
        if gold_arr.shape[0] != n:
            raise DataError("gold label count does not match sample count")
    per_lf = []
    for j in range(match.m):
        cov = float(hits[j]) / n if n else 0.0
        precision = None
        if gold_arr is not None:
            if hits[j] > 0:
                correct = int(((dense[:, j] > 0) & (gold_arr == mapping.class_of[j])).sum())
                precision = correct / int(hits[j])
        per_lf.append(PerLfStats(coverage=cov, hits=int(hits[j]), precision=precision))
    row_counts = dense.sum(axis=1)
    matched = row_counts > 0
    coverage = float(matched.mean()) if n else 0.0
    mean_matches = float(row_counts[matched].mean()) if matched.any() else 0.0
    class_presence = (dense @ mapping.to_dense()) > 0
    conflicts = class_presence.sum(axis=1) >= 2
    conflict_rate = float(conflicts[matched].mean()) if matched.any() else 0.0
    return LfStats(
        per_lf=tuple(per_lf),
        coverage=coverage,
        mean_matches_per_matched=mean_matches,
        conflict_rate=conflict_rate,
    )
