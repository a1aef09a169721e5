"""Site-window ingestion, one-hot encoding and stratified splitting.

Windows are fixed-width strings of ``2w+1`` residues centred on a serine or
threonine. Residues past a protein terminus are written as ``-``.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import os
import urllib.request
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

logger = logging.getLogger(__name__)

AMINO_ACIDS = "ACDEFGHIKLMNPQRSTVWY"
UNKNOWN = "X"
PAD = "-"
ALPHABET = AMINO_ACIDS + UNKNOWN + PAD
ALPHABET_INDEX = {ch: i for i, ch in enumerate(ALPHABET)}
SITE_RESIDUES = frozenset("ST")
MAX_WINDOW = 20

FULL_DATASET_URL = (
    "https://raw.githubusercontent.com/PedroSeber/O-GlcNAcylation_Prediction/master/"
    "OVSlab_allSpecies_O-GlcNAcome_PS.csv"
)
FULL_DATASET_ROWS = 558_168
FULL_DATASET_POSITIVES = 13_637

# Counts of characters that fell back to the unknown column, by character.
unknown_residues: Counter = Counter()

_LOOKUP = np.full(256, ALPHABET_INDEX[UNKNOWN], dtype=np.uint8)
for _ch, _i in ALPHABET_INDEX.items():
    _LOOKUP[ord(_ch)] = _i
    _LOOKUP[ord(_ch.lower())] = _i


class DatasetFormatError(ValueError):
    pass


class SplitError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class SiteRecord:
    sequence: str
    label: int
    source_row: int

    @property
    def window(self) -> int:
        return len(self.sequence) // 2


@dataclass(frozen=True)
class EncodedWindow:
    matrix: np.ndarray
    label: int


@dataclass
class SiteDataset:
    """Loaded records plus what the loader had to drop."""

    records: list[SiteRecord]
    window: int
    rejected: int = 0
    rejected_rows: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[SiteRecord]:
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def labels(self) -> np.ndarray:
        return np.fromiter((r.label for r in self.records), dtype=np.int64, count=len(self.records))

    @property
    def sequences(self) -> list[str]:
        return [r.sequence for r in self.records]

    @property
    def n_positive(self) -> int:
        return int(self.labels.sum())

    @property
    def positive_fraction(self) -> float:
        return self.n_positive / len(self.records)

    def tokens(self) -> np.ndarray:
        return tokenize(self.sequences)

    def subset(self, indices) -> "SiteDataset":
        return SiteDataset([self.records[i] for i in indices], self.window)


def fit_window(sequence: str, window: int) -> str:
    """Centre-crop or ``-``-pad an odd-length window to ``2*window+1``."""
    n = len(sequence)
    if n % 2 == 0:
        raise ValueError(f"window string has even length {n}")
    half = n // 2
    if half >= window:
        return sequence[half - window : half + window + 1]
    pad = PAD * (window - half)
    return pad + sequence + pad


def cut_window(protein: str, position: int, window: int) -> str:
    """Window of ``2*window+1`` residues around 0-based ``position``, terminus-padded."""
    if not 0 <= position < len(protein):
        raise IndexError(f"position {position} outside protein of length {len(protein)}")
    left = protein[max(0, position - window) : position]
    right = protein[position + 1 : position + window + 1]
    return PAD * (window - len(left)) + left + protein[position] + right + PAD * (window - len(right))


def site_positions(protein: str) -> list[int]:
    return [i for i, ch in enumerate(protein.upper()) if ch in SITE_RESIDUES]


def _columns(header: list[str]) -> tuple[int, int]:
    names = [h.strip().lower() for h in header]
    try:
        return names.index("sequence"), names.index("label")
    except ValueError:
        raise DatasetFormatError(f"header must contain 'sequence' and 'label' columns, got {header}") from None


def load_dataset(path, window: int = MAX_WINDOW) -> SiteDataset:
    """Read a ``sequence,label`` CSV into records of width ``2*window+1``.

    Rows whose central residue is not S/T are rejected and counted; any other
    malformation raises :class:`DatasetFormatError` naming the file row.
    """
    path = Path(path)
    records: list[SiteRecord] = []
    rejected_rows: list[int] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError(f"{path}: empty file") from None
        seq_col, label_col = _columns(header)
        for row_no, row in enumerate(reader):
            line = row_no + 2
            if not row:
                continue
            if len(row) != len(header):
                raise DatasetFormatError(f"{path}: row {line} has {len(row)} fields, header has {len(header)}")
            seq = row[seq_col].strip().upper()
            label = row[label_col].strip()
            if label not in ("0", "1"):
                raise DatasetFormatError(f"{path}: row {line} label {label!r} is not 0/1")
            if not seq or len(seq) % 2 == 0:
                raise DatasetFormatError(f"{path}: row {line} sequence length {len(seq)} is not odd")
            if seq[len(seq) // 2] not in SITE_RESIDUES:
                rejected_rows.append(row_no)
                continue
            records.append(SiteRecord(fit_window(seq, window), int(label), row_no))
    ds = SiteDataset(records, window, len(rejected_rows), rejected_rows)
    if records:
        logger.info(
            "%s: %d records, %d positive (%.2f%%), %d rejected",
            path.name, len(ds), ds.n_positive, 100 * ds.positive_fraction, ds.rejected,
        )
    return ds


def tokenize(sequences: Sequence[str]) -> np.ndarray:
    """Column indices of shape (N, L); unknown characters map to ``X``."""
    if not sequences:
        return np.zeros((0, 0), dtype=np.uint8)
    length = len(sequences[0])
    joined = "".join(sequences)
    if len(joined) != length * len(sequences):
        raise ValueError("all sequences must have the same length")
    raw = np.frombuffer(joined.encode("latin-1", errors="replace"), dtype=np.uint8)
    tokens = _LOOKUP[raw]
    unknown = tokens == ALPHABET_INDEX[UNKNOWN]
    if unknown.any():
        chars = raw[unknown]
        unexpected = chars[(chars != ord("X")) & (chars != ord("x"))]
        if unexpected.size:
            unknown_residues.update(chr(c) for c in unexpected)
            logger.warning("%d residues outside the alphabet mapped to %r", unexpected.size, UNKNOWN)
    return tokens.reshape(len(sequences), length)


def one_hot(tokens: np.ndarray) -> np.ndarray:
    """(N, L) indices -> (N, L, A) float64 one-hot."""
    return np.eye(len(ALPHABET))[tokens]


def encode(record: SiteRecord | str) -> EncodedWindow:
    seq, label = (record, 0) if isinstance(record, str) else (record.sequence, record.label)
    return EncodedWindow(one_hot(tokenize([seq]))[0], label)


def decode(matrix: np.ndarray) -> str:
    matrix = np.asarray(matrix)
    if not np.all(matrix.sum(axis=1) == 1) or not np.all((matrix == 0) | (matrix == 1)):
        raise ValueError("not a one-hot matrix")
    return "".join(ALPHABET[i] for i in matrix.argmax(axis=1))


# ------------------------------------------------------------------- splits


@dataclass
class DatasetSplit:
    train_indices: np.ndarray
    test_indices: np.ndarray
    folds: list[np.ndarray]
    seed: int

    def fold_train(self, k: int) -> np.ndarray:
        """Training indices with validation fold ``k`` held out."""
        return np.setdiff1d(self.train_indices, self.folds[k])

    def fold_validation(self, k: int) -> np.ndarray:
        return self.folds[k]


def _stratified_deal(indices: np.ndarray, labels: np.ndarray, n_folds: int, rng: np.random.Generator) -> list[np.ndarray]:
    # shuffle within each class, lay positives then negatives end to end, deal round-robin
    order = []
    for cls in (1, 0):
        members = indices[labels[indices] == cls]
        order.append(rng.permutation(members))
    seq = np.concatenate(order)
    return [np.sort(seq[k::n_folds]) for k in range(n_folds)]


def _check_stratifiable(labels: np.ndarray, n_folds: int) -> None:
    n = len(labels)
    if n < 10:
        raise SplitError(f"need at least 10 records to split, got {n}")
    pos = int(labels.sum())
    if min(pos, n - pos) < n_folds:
        raise SplitError(f"cannot stratify {pos} positives / {n - pos} negatives into {n_folds} folds")


def make_split(labels, seed: int = 0, test_fraction: float = 0.2, n_folds: int = 5) -> DatasetSplit:
    """Stratified train/test split with stratified CV folds over the training part."""
    labels = np.asarray(labels, dtype=np.int64)
    _check_stratifiable(labels, n_folds)
    rng = np.random.default_rng(seed)
    all_idx = np.arange(len(labels))
    test = []
    for cls in (1, 0):
        members = rng.permutation(all_idx[labels == cls])
        test.append(members[: int(round(test_fraction * len(members)))])
    test_idx = np.sort(np.concatenate(test))
    train_idx = np.setdiff1d(all_idx, test_idx)
    _check_stratifiable(labels[train_idx], n_folds)
    folds = _stratified_deal(train_idx, labels, n_folds, rng)
    return DatasetSplit(train_idx, test_idx, folds, seed)


def make_nested_splits(labels, seed: int = 0, n_outer: int = 5, n_folds: int = 5) -> list[DatasetSplit]:
    """Outer rotation of the test set; each outer split carries fresh inner CV folds."""
    labels = np.asarray(labels, dtype=np.int64)
    _check_stratifiable(labels, n_outer)
    rng = np.random.default_rng(seed)
    all_idx = np.arange(len(labels))
    outer = _stratified_deal(all_idx, labels, n_outer, rng)
    splits = []
    for k, test_idx in enumerate(outer):
        train_idx = np.setdiff1d(all_idx, test_idx)
        _check_stratifiable(labels[train_idx], n_folds)
        inner_rng = np.random.default_rng([seed, k])
        splits.append(DatasetSplit(train_idx, test_idx, _stratified_deal(train_idx, labels, n_folds, inner_rng), seed))
    return splits


# --------------------------------------------------------- bundled + remote


def bundled_dataset_path() -> Path:
    return Path(str(resources.files("diffmcc") / "data" / "mini_sites.csv"))


def manifest_path() -> Path:
    return Path(str(resources.files("diffmcc") / "data" / "manifest.txt"))


def read_manifest(path=None) -> dict[str, dict[str, str]]:
    """Parse ``[section]`` / ``key = value`` manifest entries."""
    entries: dict[str, dict[str, str]] = {}
    current = None
    for line in Path(path or manifest_path()).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = entries.setdefault(line[1:-1], {})
        elif current is not None:
            key, _, value = line.partition("=")
            current[key.strip()] = value.strip()
    return entries


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def cache_dir() -> Path:
    return Path(os.environ.get("DIFFMCC_HOME", Path.home() / ".cache" / "diffmcc"))


def fetch_dataset(url: str = FULL_DATASET_URL, dest=None, sha256: str | None = None) -> Path:
    """Download (once) into the cache directory; verify the digest when one is known."""
    dest = Path(dest) if dest else cache_dir() / Path(url).name
    if not dest.exists():
        dest.parent.mkdir(parents=True, exist_ok=True)
        tmp = dest.with_suffix(".part")
        urllib.request.urlretrieve(url, tmp)
        tmp.replace(dest)
    if sha256 and sha256_file(dest) != sha256:
        raise DatasetFormatError(f"{dest}: SHA-256 mismatch with manifest")
    return dest


def make_motif_dataset(
    n: int,
    n_positive: int,
    window: int = 5,
    motif: dict[int, str] | None = None,
    noise: float = 0.2,
    seed: int = 0,
    terminus_rate: float = 0.0,
) -> SiteDataset:
    """Synthetic imbalanced site windows with a planted residue motif.

    ``n_positive`` windows carry the motif (offsets relative to the centre).
    A ``noise`` fraction of them is labelled negative, and the same number of
    motif-free windows is labelled positive, so the positive count stays
    ``n_positive``. ``terminus_rate`` pads that fraction of windows on one side.
    """
    motif = motif or {-1: "P", 1: "V", 3: "A"}
    rng = np.random.default_rng(seed)
    length = 2 * window + 1
    letters = np.array(list(AMINO_ACIDS))

    def has_motif(row) -> bool:
        return all(row[window + off] == aa for off, aa in motif.items())

    seqs = rng.choice(letters, size=(n, length))
    seqs[:, window] = rng.choice(np.array(["S", "T"]), size=n)
    for row in seqs:
        while has_motif(row):
            row[window + next(iter(motif))] = rng.choice(letters)
    carriers = rng.choice(n, size=n_positive, replace=False)
    for i in carriers:
        for off, aa in motif.items():
            seqs[i, window + off] = aa
    n_flip = int(round(noise * n_positive))
    labels = np.zeros(n, dtype=np.int64)
    labels[carriers] = 1
    labels[rng.choice(carriers, size=n_flip, replace=False)] = 0
    others = np.setdiff1d(np.arange(n), carriers)
    labels[rng.choice(others, size=n_flip, replace=False)] = 1
    reach = max(abs(o) for o in motif)
    if terminus_rate > 0 and window > reach:
        # pad one side, never over the motif positions
        for i in np.flatnonzero(rng.random(n) < terminus_rate):
            cut = rng.integers(1, window - reach + 1)
            if rng.random() < 0.5:
                seqs[i, :cut] = PAD
            else:
                seqs[i, length - cut :] = PAD
    records = [SiteRecord("".join(row), int(lab), i) for i, (row, lab) in enumerate(zip(seqs, labels))]
    return SiteDataset(records, window)
