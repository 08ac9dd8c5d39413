"""Dictionary-driven corpus machinery: max-matching annotation, ambiguity
filtering, label projection, dictionary splitting, vocabularies, batching,
and file I/O.

File formats (all UTF-8):
  dictionary  one entry per line:  term <TAB> slot_type
  type map    one line per type:   slot_type <TAB> ne_type   (PV | PK | CG)
  corpus      one token per line:  token <TAB> slot <TAB> ne <TAB> seg,
              blank line between utterances.  The ne column may be "-" for
              corpora without named-entity labels; a "-" seg column is
              derived from the slot column on read.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PAD_TOKEN",
    "UNK_TOKEN",
    "NE_TYPES",
    "Dictionary",
    "TagSet",
    "LabeledExample",
    "AnnotationRejected",
    "CorpusFormatError",
    "Vocab",
    "Batch",
    "tokenize",
    "max_match",
    "annotate",
    "project_labels",
    "derive_seg_labels",
    "split_dictionary",
    "build_vocab",
    "encode_corpus",
    "batches",
    "read_dictionary",
    "write_dictionary",
    "read_type_map",
    "write_type_map",
    "read_corpus",
    "write_corpus",
    "tag_sets_from_corpus",
]

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
NE_TYPES = ("PV", "PK", "CG")


class AnnotationRejected(Exception):
    """Utterance cannot be perfectly matched; `.reason` is 'ambiguous' or 'no-content'."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class CorpusFormatError(Exception):
    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


def tokenize(text: str, mode: str) -> list[str]:
    """Split raw text: one token per non-space character ('char' mode, the
    Chinese-style default) or per whitespace-separated word ('word' mode)."""
    if mode == "char":
        return [c for c in text if not c.isspace()]
    if mode == "word":
        return text.split()
    raise ValueError(f"unknown tokenize mode {mode!r} (expected 'char' or 'word')")


@dataclass
class Dictionary:
    """Term list with slot types, plus the slot-type -> entity-type map."""

    entries: list[tuple[tuple[str, ...], str]]
    type_map: dict[str, str]

    def __post_init__(self):
        seen: dict[tuple[str, ...], str] = {}
        for term, slot_type in self.entries:
            term = tuple(term)
            if not term:
                raise ValueError("dictionary entry with empty term")
            if seen.get(term, slot_type) != slot_type:
                raise ValueError(f"term {''.join(term)!r} has conflicting slot types "
                                 f"{seen[term]!r} and {slot_type!r}")
            seen[term] = slot_type
            if slot_type not in self.type_map:
                raise ValueError(f"slot type {slot_type!r} missing from type map")
        for slot_type, ne_type in self.type_map.items():
            if ne_type not in NE_TYPES:
                raise ValueError(f"type map: {slot_type!r} -> {ne_type!r} not one of {NE_TYPES}")

    @property
    def slot_types(self) -> list[str]:
        return sorted(self.type_map)

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class TagSet:
    """Closed, ordered label vocabulary for one task."""

    task: str
    labels: tuple[str, ...]

    def __post_init__(self):
        if "O" not in self.labels:
            raise ValueError(f"tag set for {self.task!r} must contain O")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError(f"duplicate labels in tag set for {self.task!r}")
        for lab in self.labels:
            if lab in ("O", "B", "I"):
                continue
            if lab[:2] not in ("B-", "I-"):
                raise ValueError(f"malformed label {lab!r} in {self.task} tag set")
            other = ("I-" if lab[0] == "B" else "B-") + lab[2:]
            if other not in self.labels:
                raise ValueError(f"{self.task} tag set has {lab!r} without {other!r}")

    @classmethod
    def for_seg(cls) -> "TagSet":
        return cls("seg", ("O", "B", "I"))

    @classmethod
    def from_types(cls, task: str, types) -> "TagSet":
        labels = ["O"]
        for t in sorted(set(types)):
            labels += [f"B-{t}", f"I-{t}"]
        return cls(task, tuple(labels))

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ValueError(f"label {label!r} not in {self.task} tag set {self.labels}") from None

    def __len__(self) -> int:
        return len(self.labels)


def check_iob(labels) -> None:
    prev = "O"
    for lab in labels:
        if lab.startswith("I"):
            suffix = lab[1:]
            if not (prev.startswith("B") or prev.startswith("I")) or prev[1:] != suffix:
                raise ValueError(f"I tag {lab!r} follows {prev!r}")
        prev = lab


@dataclass
class LabeledExample:
    """One utterance with aligned label rows for the three tasks
    (ne_labels may be None for corpora without entity labels)."""

    tokens: tuple[str, ...]
    slot_labels: tuple[str, ...]
    ne_labels: tuple[str, ...] | None
    seg_labels: tuple[str, ...]

    def __post_init__(self):
        self.tokens = tuple(self.tokens)
        self.slot_labels = tuple(self.slot_labels)
        self.seg_labels = tuple(self.seg_labels)
        if self.ne_labels is not None:
            self.ne_labels = tuple(self.ne_labels)
        n = len(self.tokens)
        for row in (self.slot_labels, self.ne_labels, self.seg_labels):
            if row is not None and len(row) != n:
                raise ValueError(f"label row length {len(row)} != token count {n}")

    def labels_for(self, task: str):
        return {"slot": self.slot_labels, "ne": self.ne_labels, "seg": self.seg_labels}[task]


# ---------------------------------------------------------------------------
# Max-matching annotation
# ---------------------------------------------------------------------------


def max_match(tokens, dictionary: Dictionary) -> list[frozenset]:
    """All maximal segmentations of `tokens` under the dictionary.

    A segmentation is a set of non-overlapping matches (start, stop, slot_type)
    with stop exclusive; maximal segmentations maximize the total number of
    covered positions.  Returning all of them makes ambiguity detectable.
    """
    tokens = tuple(tokens)
    if not tokens:
        raise ValueError("max_match: empty token sequence")
    n = len(tokens)
    terms = {tuple(term): slot_type for term, slot_type in dictionary.entries}
    max_len = max((len(t) for t in terms), default=0)
    starts: list[list[tuple[int, str]]] = [[] for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, min(i + max_len, n) + 1):
            slot_type = terms.get(tokens[i:j])
            if slot_type is not None:
                starts[i].append((j, slot_type))

    best = [0] * (n + 1)  # best[i] = max cover of suffix tokens[i:]
    for i in range(n - 1, -1, -1):
        best[i] = best[i + 1]
        for j, _ in starts[i]:
            best[i] = max(best[i], (j - i) + best[j])

    memo: dict[int, list[tuple]] = {n: [()]}

    def enumerate_from(i: int) -> list[tuple]:
        if i in memo:
            return memo[i]
        out = []
        if best[i + 1] == best[i]:
            out.extend(enumerate_from(i + 1))
        for j, slot_type in starts[i]:
            if (j - i) + best[j] == best[i]:
                match = (i, j, slot_type)
                out.extend((match,) + rest for rest in enumerate_from(j))
        memo[i] = out
        return out

    return [frozenset(seg) for seg in enumerate_from(0)]


def annotate(tokens, dictionary: Dictionary) -> LabeledExample:
    """Label an utterance by max-matching; raises AnnotationRejected unless
    the maximal segmentation is unique (the perfect-match filter) and covers
    at least one position."""
    segmentations = max_match(tokens, dictionary)
    if len(segmentations) != 1:
        raise AnnotationRejected("ambiguous")
    (segmentation,) = segmentations
    if not segmentation:
        raise AnnotationRejected("no-content")
    slot = ["O"] * len(tokens)
    for start, stop, slot_type in segmentation:
        slot[start] = f"B-{slot_type}"
        for k in range(start + 1, stop):
            slot[k] = f"I-{slot_type}"
    ne, seg = project_labels(slot, dictionary.type_map)
    return LabeledExample(tuple(tokens), tuple(slot), ne, seg)


def project_labels(slot_labels, type_map: dict[str, str]):
    """Induce (ne_labels, seg_labels) from slot labels: the chunk type is
    mapped through `type_map` for ne and dropped entirely for seg."""
    check_iob(slot_labels)
    ne, seg = [], []
    for lab in slot_labels:
        if lab == "O":
            ne.append("O")
            seg.append("O")
            continue
        prefix, slot_type = lab[0], lab[2:]
        if slot_type not in type_map:
            raise ValueError(f"slot type {slot_type!r} missing from type map")
        ne.append(f"{prefix}-{type_map[slot_type]}")
        seg.append(prefix)
    return tuple(ne), tuple(seg)


def derive_seg_labels(slot_labels) -> tuple[str, ...]:
    return tuple("O" if lab == "O" else lab[0] for lab in slot_labels)


def split_dictionary(dictionary: Dictionary, seed: int):
    """Seeded partition of the entries into three near-equal disjoint parts
    (two for training-data generation, one for test)."""
    if len(dictionary) < 3:
        raise ValueError(f"cannot split a dictionary of {len(dictionary)} entries into 3 parts")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(dictionary.entries))
    chunks = np.array_split(order, 3)
    return tuple(
        Dictionary([dictionary.entries[i] for i in sorted(chunk)], dict(dictionary.type_map))
        for chunk in chunks
    )


# ---------------------------------------------------------------------------
# Vocabulary, encoding, batching
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]
    lookup: dict[str, int] = field(compare=False, repr=False, default=None)

    def __post_init__(self):
        object.__setattr__(self, "lookup", {tok: i for i, tok in enumerate(self.tokens)})

    def encode(self, tokens) -> np.ndarray:
        unk = self.lookup[UNK_TOKEN]
        return np.array([self.lookup.get(t, unk) for t in tokens], dtype=np.intp)

    def __len__(self) -> int:
        return len(self.tokens)


def build_vocab(token_sequences, min_freq: int = 1) -> Vocab:
    """Frequency-ordered vocabulary (ties alphabetical) behind PAD and UNK."""
    counts = Counter()
    for seq in token_sequences:
        tokens = seq.tokens if isinstance(seq, LabeledExample) else seq
        counts.update(tokens)
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [tok for tok, c in ordered if c >= min_freq]
    return Vocab(tuple([PAD_TOKEN, UNK_TOKEN] + kept))


@dataclass
class Batch:
    token_ids: np.ndarray  # [B x T] padded with PAD id 0
    mask: np.ndarray  # [B x T] bool, True at real positions
    labels: dict[str, np.ndarray]  # task -> [B x T], 0 at padding
    indices: np.ndarray  # positions of the examples in the source corpus

    @property
    def size(self) -> int:
        return self.token_ids.shape[0]


def encode_corpus(examples, vocab: Vocab, tag_sets: dict[str, TagSet]):
    """Encode LabeledExamples into (token ids, per-task label ids)."""
    encoded = []
    for ex in examples:
        labels = {}
        for task, tag_set in tag_sets.items():
            row = ex.labels_for(task)
            if row is None:
                raise ValueError(f"corpus example lacks {task} labels required by the model")
            labels[task] = np.array([tag_set.index(lab) for lab in row], dtype=np.intp)
        encoded.append((vocab.encode(ex.tokens), labels))
    return encoded


def batches(encoded, batch_size: int, seed: int = 0, shuffle: bool = True):
    """Padded batches in a deterministic seeded order; the final short batch
    is emitted."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = np.arange(len(encoded))
    if shuffle:
        order = np.random.default_rng(seed).permutation(len(encoded))
    out = []
    for lo in range(0, len(encoded), batch_size):
        chunk = order[lo : lo + batch_size]
        rows = [encoded[i] for i in chunk]
        t_max = max(len(ids) for ids, _ in rows)
        ids = np.zeros((len(rows), t_max), dtype=np.intp)
        mask = np.zeros((len(rows), t_max), dtype=bool)
        labels = {task: np.zeros((len(rows), t_max), dtype=np.intp) for task in rows[0][1]}
        for b, (tok_ids, lab) in enumerate(rows):
            ids[b, : len(tok_ids)] = tok_ids
            mask[b, : len(tok_ids)] = True
            for task, row in lab.items():
                labels[task][b, : len(row)] = row
        out.append(Batch(ids, mask, labels, chunk))
    return out


def tag_sets_from_corpus(examples, tasks=("seg", "ne", "slot")) -> dict[str, TagSet]:
    """Build per-task tag sets from the labels observed in a corpus."""
    sets: dict[str, TagSet] = {}
    for task in tasks:
        if task == "seg":
            sets[task] = TagSet.for_seg()
            continue
        types = set()
        for ex in examples:
            row = ex.labels_for(task)
            if row is None:
                raise ValueError(f"corpus has no {task} labels")
            types.update(lab[2:] for lab in row if lab != "O")
        sets[task] = TagSet.from_types(task, types)
    return sets


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------


def read_dictionary(path, type_map: dict[str, str], tokenize_mode: str = "char") -> Dictionary:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) != 2:
                raise CorpusFormatError(path, line_no, f"expected 2 tab-separated columns, got {len(cols)}")
            term, slot_type = cols
            if not term or not slot_type:
                raise CorpusFormatError(path, line_no, "empty term or slot type")
            entries.append((tuple(tokenize(term, tokenize_mode)), slot_type))
    try:
        return Dictionary(entries, type_map)
    except ValueError as exc:
        raise CorpusFormatError(path, 0, str(exc)) from exc


def write_dictionary(dictionary: Dictionary, path, tokenize_mode: str = "char") -> None:
    joiner = "" if tokenize_mode == "char" else " "
    with open(path, "w", encoding="utf-8") as fh:
        for term, slot_type in dictionary.entries:
            fh.write(f"{joiner.join(term)}\t{slot_type}\n")


def read_type_map(path) -> dict[str, str]:
    type_map: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) != 2:
                raise CorpusFormatError(path, line_no, f"expected 2 tab-separated columns, got {len(cols)}")
            slot_type, ne_type = cols
            if ne_type not in NE_TYPES:
                raise CorpusFormatError(path, line_no, f"entity type {ne_type!r} not one of {NE_TYPES}")
            if type_map.get(slot_type, ne_type) != ne_type:
                raise CorpusFormatError(path, line_no, f"conflicting entries for {slot_type!r}")
            type_map[slot_type] = ne_type
    return type_map


def write_type_map(type_map: dict[str, str], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for slot_type in sorted(type_map):
            fh.write(f"{slot_type}\t{type_map[slot_type]}\n")


def read_corpus(path, strict_iob: bool = True) -> list[LabeledExample]:
    examples: list[LabeledExample] = []
    tokens, slot, ne, seg = [], [], [], []
    start_line = 1

    def flush(line_no):
        if not tokens:
            return
        dashes = [x == "-" for x in ne]
        if all(dashes):
            ne_row = None
        elif any(dashes):
            raise CorpusFormatError(path, start_line, "mixed '-' and real ne labels in one utterance")
        else:
            ne_row = tuple(ne)
        seg_row = derive_seg_labels(slot) if all(x == "-" for x in seg) else tuple(seg)
        try:
            if strict_iob:
                check_iob(slot)
                if ne_row is not None:
                    check_iob(ne_row)
            example = LabeledExample(tuple(tokens), tuple(slot), ne_row, seg_row)
        except ValueError as exc:
            raise CorpusFormatError(path, start_line, str(exc)) from exc
        examples.append(example)
        for row in (tokens, slot, ne, seg):
            row.clear()

    with open(path, encoding="utf-8") as fh:
        line_no = 0
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                flush(line_no)
                start_line = line_no + 1
                continue
            cols = line.split("\t")
            if len(cols) != 4:
                raise CorpusFormatError(path, line_no, f"expected 4 tab-separated columns, got {len(cols)}")
            if any(not c for c in cols):
                raise CorpusFormatError(path, line_no, "empty column")
            tokens.append(cols[0])
            slot.append(cols[1])
            ne.append(cols[2])
            seg.append(cols[3])
        flush(line_no + 1)
    return examples


def write_corpus(examples, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            ne_row = ex.ne_labels if ex.ne_labels is not None else ["-"] * len(ex.tokens)
            for tok, s, n, g in zip(ex.tokens, ex.slot_labels, ne_row, ex.seg_labels):
                fh.write(f"{tok}\t{s}\t{n}\t{g}\n")
            fh.write("\n")
