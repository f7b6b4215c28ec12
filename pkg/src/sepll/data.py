"""Dataset model: splits with weak labels, the one-class LF convention, training
targets, plain-text matrix persistence, and a synthetic corpus generator.

Weak labels arrive as an n x m0 integer matrix per split where -1 means the
labeling function abstained and any other entry is the class it assigned.
Multi-class labeling functions are split into one derived column per
(function, class) pair so that every column of the binary match matrix maps to
exactly one class.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import DataError
from .seeds import stream

SPLIT_NAMES = ("train", "dev", "test")
ABSTAIN = -1


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Sample:
    """One text with an optional gold class (present for dev/test)."""

    id: int
    text: str
    gold_label: int | None = None


@dataclass(frozen=True, eq=False)
class SplitSet:
    """The three splits plus the class inventory and raw per-split weak labels."""

    train: tuple[Sample, ...]
    dev: tuple[Sample, ...]
    test: tuple[Sample, ...]
    class_names: tuple[str, ...]
    raw_weak_labels: Mapping[str, np.ndarray]

    def __post_init__(self):
        if not self.class_names:
            raise DataError("class_names must not be empty")
        widths = set()
        for name in SPLIT_NAMES:
            samples = self.split(name)
            if name not in self.raw_weak_labels:
                raise DataError(f"missing raw weak labels for split {name!r}")
            weak = np.asarray(self.raw_weak_labels[name], dtype=np.int64)
            if weak.ndim != 2:
                raise DataError(f"{name}: weak labels must be a 2-d array")
            if weak.shape[0] != len(samples):
                raise DataError(
                    f"{name}: {len(samples)} samples but {weak.shape[0]} weak-label rows"
                )
            widths.add(weak.shape[1])
            seen_ids = set()
            for s in samples:
                if s.id < 0:
                    raise DataError(f"{name}: sample id {s.id} is negative")
                if s.id in seen_ids:
                    raise DataError(f"{name}: duplicate sample id {s.id}")
                seen_ids.add(s.id)
                if s.gold_label is not None and not (0 <= s.gold_label < self.n_classes):
                    raise DataError(
                        f"{name}: sample {s.id}: class index out of range: {s.gold_label}"
                    )
            bad = (weak != ABSTAIN) & ((weak < 0) | (weak >= self.n_classes))
            if bad.any():
                i, j = np.argwhere(bad)[0]
                raise DataError(
                    f"{name}: sample row {i}, LF {j}: class index out of range: {weak[i, j]}"
                )
            self.raw_weak_labels[name] = _frozen(weak)
        if len(widths) != 1:
            raise DataError(f"inconsistent LF count across splits: {sorted(widths)}")

    def split(self, name: str) -> tuple[Sample, ...]:
        if name not in SPLIT_NAMES:
            raise DataError(f"unknown split {name!r}")
        return getattr(self, name)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def n_raw_lfs(self) -> int:
        return int(self.raw_weak_labels["train"].shape[1])


@dataclass(frozen=True, eq=False)
class MatchMatrix:
    """Binary n x m matrix stored as a sorted, duplicate-free (i, j) pair list."""

    n: int
    m: int
    pairs: np.ndarray  # (nnz, 2) int64, lexicographically sorted

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        if self.n < 0 or self.m < 0:
            raise DataError("matrix dimensions must be non-negative")
        if pairs.size:
            if pairs[:, 0].min() < 0 or pairs[:, 0].max() >= self.n:
                raise DataError("match row index out of range")
            if pairs[:, 1].min() < 0 or pairs[:, 1].max() >= self.m:
                raise DataError("match column index out of range")
            order = np.lexsort((pairs[:, 1], pairs[:, 0]))
            pairs = pairs[order]
            dup = (np.diff(pairs[:, 0]) == 0) & (np.diff(pairs[:, 1]) == 0)
            if dup.any():
                raise DataError("duplicate (sample, LF) match pair")
        object.__setattr__(self, "pairs", _frozen(pairs))

    @classmethod
    def from_pairs(cls, n: int, m: int, pairs: Iterable[tuple[int, int]]) -> "MatchMatrix":
        arr = np.array(sorted(set((int(i), int(j)) for i, j in pairs)), dtype=np.int64)
        return cls(n=n, m=m, pairs=arr.reshape(-1, 2))

    @classmethod
    def from_dense(cls, dense: np.ndarray) -> "MatchMatrix":
        dense = np.asarray(dense)
        return cls(n=dense.shape[0], m=dense.shape[1], pairs=np.argwhere(dense != 0))

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n, self.m), dtype=np.float64)
        if self.pairs.size:
            out[self.pairs[:, 0], self.pairs[:, 1]] = 1.0
        return out

    def row_counts(self) -> np.ndarray:
        counts = np.zeros(self.n, dtype=np.int64)
        if self.pairs.size:
            np.add.at(counts, self.pairs[:, 0], 1)
        return counts

    def __eq__(self, other):
        return (
            isinstance(other, MatchMatrix)
            and self.n == other.n
            and self.m == other.m
            and self.pairs.shape == other.pairs.shape
            and bool(np.all(self.pairs == other.pairs))
        )


@dataclass(frozen=True, eq=False)
class MappingMatrix:
    """One-hot m x c map from LF column to class, stored as a class index per column."""

    c: int
    class_of: np.ndarray  # (m,) int64

    def __post_init__(self):
        class_of = np.asarray(self.class_of, dtype=np.int64).reshape(-1)
        if self.c < 1:
            raise DataError("mapping needs at least one class")
        if class_of.size and (class_of.min() < 0 or class_of.max() >= self.c):
            raise DataError("mapping class index out of range")
        object.__setattr__(self, "class_of", _frozen(class_of))

    @property
    def m(self) -> int:
        return int(self.class_of.shape[0])

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.m, self.c), dtype=np.float64)
        dense[np.arange(self.m), self.class_of] = 1.0
        return dense

    def __eq__(self, other):
        return (
            isinstance(other, MappingMatrix)
            and self.c == other.c
            and self.class_of.shape == other.class_of.shape
            and bool(np.all(self.class_of == other.class_of))
        )


@dataclass(frozen=True, eq=False)
class TargetDistribution:
    """Per-sample distributions over LF columns used as training targets."""

    rows: np.ndarray  # (n, m) float64, each row sums to 1
    unlabeled_mask: np.ndarray  # (n,) bool, true where the sample had no match
    include_unlabeled: bool = True

    def training_indices(self) -> np.ndarray:
        """Rows that enter the training stream under the current policy."""
        if self.include_unlabeled:
            return np.arange(self.rows.shape[0], dtype=np.int64)
        return np.flatnonzero(~self.unlabeled_mask).astype(np.int64)


def build_targets(match: MatchMatrix, include_unlabeled: bool = True) -> TargetDistribution:
    """Row-normalize the match matrix; unmatched rows become uniform 1/m.

    ``include_unlabeled`` does not change the rows, only which of them
    :meth:`TargetDistribution.training_indices` exposes.
    """
    if match.m < 1:
        raise DataError("cannot build targets with zero LF columns")
    dense = match.to_dense()
    counts = dense.sum(axis=1)
    unlabeled = counts == 0
    rows = np.empty_like(dense)
    rows[unlabeled] = 1.0 / match.m
    matched = ~unlabeled
    rows[matched] = dense[matched] / counts[matched, None]
    return TargetDistribution(
        rows=_frozen(rows),
        unlabeled_mask=_frozen(unlabeled),
        include_unlabeled=include_unlabeled,
    )


@dataclass(frozen=True)
class ConversionProvenance:
    """Where each derived one-class column came from, plus dropped originals."""

    columns: tuple[tuple[int, int], ...]  # derived j -> (original LF, class)
    dropped: tuple[int, ...]  # original LFs that never fire anywhere


@dataclass(frozen=True, eq=False)
class ConversionResult:
    match: Mapping[str, MatchMatrix]
    mapping: MappingMatrix
    provenance: ConversionProvenance


def to_one_class_lfs(splits: SplitSet) -> ConversionResult:
    """Split multi-class LFs into derived one-class columns.

    The class inventory of each original LF is collected over all splits
    jointly so every split shares one column layout: original LF order first,
    ascending class within an original LF. LFs that never fire are dropped.
    """
    m0 = splits.n_raw_lfs
    emitted: list[np.ndarray] = []
    for j in range(m0):
        values = [splits.raw_weak_labels[name][:, j] for name in SPLIT_NAMES]
        col = np.concatenate(values) if values else np.empty(0, dtype=np.int64)
        emitted.append(np.unique(col[col != ABSTAIN]))
    columns = [(j, int(cls)) for j in range(m0) for cls in emitted[j]]
    dropped = tuple(j for j in range(m0) if emitted[j].size == 0)
    class_of = np.array([cls for _, cls in columns], dtype=np.int64)
    mapping = MappingMatrix(c=splits.n_classes, class_of=class_of)
    match: dict[str, MatchMatrix] = {}
    for name in SPLIT_NAMES:
        raw = splits.raw_weak_labels[name]
        pairs = []
        for col_idx, (j, cls) in enumerate(columns):
            rows = np.flatnonzero(raw[:, j] == cls)
            pairs.append(np.stack([rows, np.full_like(rows, col_idx)], axis=1))
        stacked = (
            np.concatenate(pairs) if pairs else np.empty((0, 2), dtype=np.int64)
        )
        match[name] = MatchMatrix(n=raw.shape[0], m=len(columns), pairs=stacked)
    return ConversionResult(
        match=match,
        mapping=mapping,
        provenance=ConversionProvenance(columns=tuple(columns), dropped=dropped),
    )


# ---------------------------------------------------------------------------
# synthetic fixture


@dataclass(frozen=True)
class SynthSpec:
    """Class-conditional keyword corpus with independently firing noisy LFs."""

    c: int = 2
    m_per_class: int = 3
    n_train: int = 2000
    n_dev: int = 500
    n_test: int = 500
    lf_accuracy: float = 0.85
    lf_coverage: float = 0.5

    def __post_init__(self):
        if self.c < 2:
            raise DataError("synth needs at least two classes")
        if self.m_per_class < 1:
            raise DataError("synth needs at least one LF per class")
        if not (0.0 < self.lf_accuracy <= 1.0):
            raise DataError("lf_accuracy must be in (0, 1]")
        if not (0.0 < self.lf_coverage <= 1.0):
            raise DataError("lf_coverage must be in (0, 1]")
        if min(self.n_train, self.n_dev, self.n_test) < 0:
            raise DataError("split sizes must be non-negative")


_FILLER = ("the", "and", "of", "to", "a", "in", "it", "is")


def synth_dataset(spec: SynthSpec, seed: int) -> SplitSet:
    """Generate a fixture corpus; each of c*m_per_class LFs fires independently
    with probability lf_coverage and, when firing, emits the true class with
    probability lf_accuracy, otherwise a uniformly random wrong class."""
    rng = stream(seed, "synth")
    m0 = spec.c * spec.m_per_class
    words = [[f"topic{k}word{t}" for t in range(12)] for k in range(spec.c)]
    splits: dict[str, tuple[Sample, ...]] = {}
    weak: dict[str, np.ndarray] = {}
    for name, size in (("train", spec.n_train), ("dev", spec.n_dev), ("test", spec.n_test)):
        labels = rng.integers(spec.c, size=size)
        samples = []
        for i in range(size):
            k = int(labels[i])
            n_kw = int(rng.integers(3, 9))
            tokens = list(rng.choice(words[k], size=n_kw))
            n_fill = int(rng.integers(0, 4))
            tokens += list(rng.choice(_FILLER, size=n_fill))
            if rng.random() < 0.1:  # slight cross-class leakage keeps the text signal non-trivial
                other = int((k + 1 + rng.integers(spec.c - 1)) % spec.c)
                tokens.append(str(rng.choice(words[other])))
            order = rng.permutation(len(tokens))
            samples.append(Sample(id=i, text=" ".join(tokens[t] for t in order), gold_label=k))
        fires = rng.random((size, m0)) < spec.lf_coverage
        correct = rng.random((size, m0)) < spec.lf_accuracy
        offsets = rng.integers(1, spec.c, size=(size, m0))
        emitted = np.where(correct, labels[:, None], (labels[:, None] + offsets) % spec.c)
        weak[name] = np.where(fires, emitted, ABSTAIN).astype(np.int64)
        splits[name] = tuple(samples)
    return SplitSet(
        train=splits["train"],
        dev=splits["dev"],
        test=splits["test"],
        class_names=tuple(f"class_{k}" for k in range(spec.c)),
        raw_weak_labels=weak,
    )


# ---------------------------------------------------------------------------
# dataset file formats


def _read_json(path: Path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:{exc.lineno}: {exc.msg}") from exc


def _load_wrench_split(path: Path) -> tuple[tuple[Sample, ...], np.ndarray]:
    obj = _read_json(path)
    if not isinstance(obj, dict):
        raise DataError(f"{path}: expected a JSON object keyed by sample id")
    samples = []
    rows = []
    width = None
    try:
        keys = sorted(obj.keys(), key=int)
    except ValueError as exc:
        raise DataError(f"{path}: sample ids must be integers: {exc}") from exc
    for key in keys:
        entry = obj[key]
        if not isinstance(entry, dict) or "data" not in entry or "text" not in entry["data"]:
            raise DataError(f"{path}: sample {key}: missing data.text")
        if "weak_labels" not in entry or not isinstance(entry["weak_labels"], list):
            raise DataError(f"{path}: sample {key}: missing weak_labels array")
        label = entry.get("label")
        if label is not None and not isinstance(label, int):
            raise DataError(f"{path}: sample {key}: label must be an integer or null")
        wl = entry["weak_labels"]
        if width is None:
            width = len(wl)
        elif len(wl) != width:
            raise DataError(f"{path}: sample {key}: inconsistent LF count ({len(wl)} != {width})")
        samples.append(Sample(id=int(key), text=str(entry["data"]["text"]), gold_label=label))
        rows.append([int(v) for v in wl])
    arr = np.asarray(rows, dtype=np.int64) if rows else np.empty((0, width or 0), dtype=np.int64)
    return tuple(samples), arr


def _load_jsonl_split(path: Path) -> tuple[tuple[Sample, ...], np.ndarray]:
    samples = []
    rows = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                entry = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: {exc.msg}") from exc
            if "text" not in entry:
                raise DataError(f"{path}:{lineno}: missing text field")
            wl = entry.get("weak_labels", [])
            if not isinstance(wl, list):
                raise DataError(f"{path}:{lineno}: weak_labels must be an array")
            if width is None:
                width = len(wl)
            elif len(wl) != width:
                raise DataError(f"{path}:{lineno}: inconsistent LF count ({len(wl)} != {width})")
            label = entry.get("label")
            if label is not None and not isinstance(label, int):
                raise DataError(f"{path}:{lineno}: label must be an integer or null")
            samples.append(Sample(id=lineno - 1, text=str(entry["text"]), gold_label=label))
            rows.append([int(v) for v in wl])
    arr = np.asarray(rows, dtype=np.int64) if rows else np.empty((0, width or 0), dtype=np.int64)
    return tuple(samples), arr


_SPLIT_FILES = {
    "wrench-json": {"train": ("train.json",), "dev": ("valid.json", "dev.json"), "test": ("test.json",)},
    "jsonl": {"train": ("train.jsonl",), "dev": ("valid.jsonl", "dev.jsonl"), "test": ("test.jsonl",)},
}


def dataset_files(path: str | Path, fmt: str) -> list[Path]:
    """The files a load would read; used for manifest digests."""
    root = Path(path)
    if fmt not in _SPLIT_FILES:
        raise DataError(f"unknown dataset format {fmt!r}")
    found = []
    for candidates in _SPLIT_FILES[fmt].values():
        for name in candidates:
            if (root / name).exists():
                found.append(root / name)
                break
    if (root / "label.json").exists():
        found.append(root / "label.json")
    return found


def load_dataset(path: str | Path, fmt: str = "wrench-json") -> SplitSet:
    """Load a dataset directory in wrench-json or jsonl layout."""
    root = Path(path)
    if not root.is_dir():
        raise DataError(f"{root}: not a dataset directory")
    if fmt not in _SPLIT_FILES:
        raise DataError(f"unknown dataset format {fmt!r}")
    loader = _load_wrench_split if fmt == "wrench-json" else _load_jsonl_split
    parts: dict[str, tuple[Sample, ...]] = {}
    weak: dict[str, np.ndarray] = {}
    any_found = False
    for split, candidates in _SPLIT_FILES[fmt].items():
        for name in candidates:
            f = root / name
            if f.exists():
                parts[split], weak[split] = loader(f)
                any_found = True
                break
        else:
            parts[split], weak[split] = (), np.empty((0, 0), dtype=np.int64)
    if not any_found:
        raise DataError(f"{root}: no split files found for format {fmt!r}")
    widths = {weak[s].shape[1] for s in SPLIT_NAMES if len(parts[s])}
    width = widths.pop() if len(widths) == 1 else None
    if width is None:
        raise DataError(f"{root}: inconsistent LF count across splits")
    for s in SPLIT_NAMES:
        if not len(parts[s]):
            weak[s] = np.empty((0, width), dtype=np.int64)

    label_file = root / "label.json"
    if label_file.exists():
        names_obj = _read_json(label_file)
        if not isinstance(names_obj, dict):
            raise DataError(f"{label_file}: expected an object mapping index to name")
        try:
            items = sorted(((int(k), str(v)) for k, v in names_obj.items()))
        except ValueError as exc:
            raise DataError(f"{label_file}: class indices must be integers: {exc}") from exc
        if [k for k, _ in items] != list(range(len(items))):
            raise DataError(f"{label_file}: class indices must be 0..c-1 without gaps")
        class_names = tuple(name for _, name in items)
    elif fmt == "wrench-json":
        raise DataError(f"{root}: missing label.json companion file")
    else:
        top = -1
        for s in SPLIT_NAMES:
            if weak[s].size:
                top = max(top, int(weak[s].max()))
            for sample in parts[s]:
                if sample.gold_label is not None:
                    top = max(top, sample.gold_label)
        if top < 0:
            raise DataError(f"{root}: cannot infer class count (no labels anywhere)")
        class_names = tuple(f"class_{k}" for k in range(top + 1))

    return SplitSet(
        train=parts["train"],
        dev=parts["dev"],
        test=parts["test"],
        class_names=class_names,
        raw_weak_labels=weak,
    )


def save_dataset(splits: SplitSet, path: str | Path, fmt: str = "wrench-json") -> list[Path]:
    """Write a dataset directory; returns the files written."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    written = []
    label_file = root / "label.json"
    names = {str(i): name for i, name in enumerate(splits.class_names)}
    label_file.write_text(json.dumps(names, sort_keys=True) + "\n", encoding="utf-8")
    written.append(label_file)
    file_names = {"train": "train", "dev": "valid", "test": "test"}
    for split in SPLIT_NAMES:
        samples = splits.split(split)
        weak = splits.raw_weak_labels[split]
        if fmt == "wrench-json":
            obj = {
                str(s.id): {
                    "label": s.gold_label,
                    "weak_labels": [int(v) for v in weak[i]],
                    "data": {"text": s.text},
                }
                for i, s in enumerate(samples)
            }
            f = root / f"{file_names[split]}.json"
            f.write_text(json.dumps(obj, sort_keys=True) + "\n", encoding="utf-8")
        elif fmt == "jsonl":
            lines = [
                json.dumps(
                    {
                        "text": s.text,
                        "label": s.gold_label,
                        "weak_labels": [int(v) for v in weak[i]],
                    },
                    sort_keys=True,
                )
                for i, s in enumerate(samples)
            ]
            f = root / f"{file_names[split]}.jsonl"
            f.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
        else:
            raise DataError(f"unknown dataset format {fmt!r}")
        written.append(f)
    return written


# ---------------------------------------------------------------------------
# plain-text matrix persistence


def write_triplets(match: MatchMatrix, path: str | Path) -> None:
    """UTF-8, LF line endings: a "n m" header then one "i j" line per match."""
    lines = [f"{match.n} {match.m}"]
    lines += [f"{i} {j}" for i, j in match.pairs]
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("utf-8"))


def read_triplets(path: str | Path) -> MatchMatrix:
    text = Path(path).read_bytes().decode("utf-8")
    lines = [ln for ln in text.split("\n") if ln.strip()]
    if not lines:
        raise DataError(f"{path}:1: empty triplet file")
    def parse(lineno: int, line: str) -> tuple[int, int]:
        parts = line.split()
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected two integers, got {line!r}")
        try:
            return int(parts[0]), int(parts[1])
        except ValueError:
            raise DataError(f"{path}:{lineno}: expected two integers, got {line!r}") from None
    n, m = parse(1, lines[0])
    pairs = [parse(k + 2, ln) for k, ln in enumerate(lines[1:])]
    arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    return MatchMatrix(n=n, m=m, pairs=arr)


def write_mapping(mapping: MappingMatrix, path: str | Path) -> None:
    """UTF-8, LF line endings: a "m c" header then one "j class" line per column."""
    lines = [f"{mapping.m} {mapping.c}"]
    lines += [f"{j} {int(cls)}" for j, cls in enumerate(mapping.class_of)]
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("utf-8"))


def read_mapping(path: str | Path) -> MappingMatrix:
    text = Path(path).read_bytes().decode("utf-8")
    lines = [ln for ln in text.split("\n") if ln.strip()]
    if not lines:
        raise DataError(f"{path}:1: empty mapping file")
    head = lines[0].split()
    if len(head) != 2:
        raise DataError(f"{path}:1: expected 'm c' header")
    m, c = int(head[0]), int(head[1])
    class_of = np.full(m, -1, dtype=np.int64)
    for k, ln in enumerate(lines[1:]):
        parts = ln.split()
        if len(parts) != 2:
            raise DataError(f"{path}:{k + 2}: expected 'column class' pair")
        j, cls = int(parts[0]), int(parts[1])
        if not (0 <= j < m):
            raise DataError(f"{path}:{k + 2}: column index out of range: {j}")
        class_of[j] = cls
    if (class_of < 0).any():
        raise DataError(f"{path}: missing class for some columns")
    return MappingMatrix(c=c, class_of=class_of)
