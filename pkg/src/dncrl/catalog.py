"""Recommender item catalog: MovieLens parsing, tf-idf genre features, tiers."""
from __future__ import annotations

import csv
import hashlib
import io
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

NO_GENRES = "(no genres listed)"
REWARD_TIERS = (1.0, 10.0, 30.0)
TIER_SHARES = (0.6, 0.3, 0.1)
SIGMOID_SCALE = 5.0


@dataclass
class MovieRecord:
    movie_id: int
    title: str
    genres: list


@dataclass
class Catalog:
    features: np.ndarray      # (B, F), unique rows on the 0.01 grid
    item_rewards: np.ndarray  # (B,)
    vocabulary: list | None = None
    _similarity: np.ndarray | None = None

    @property
    def similarity(self) -> np.ndarray:
        if self._similarity is None:
            self._similarity = similarity_matrix(self.features)
        return self._similarity

    @property
    def shape(self):
        return self.features.shape


def parse_movies_csv(path) -> list[MovieRecord]:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["movieId", "title", "genres"]:
            raise ValueError(f"{path}: expected header movieId,title,genres, got {header}")
        records = []
        for row in reader:
            lineno = reader.line_num
            if not row:
                continue
            if len(row) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            try:
                movie_id = int(row[0])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: bad movieId {row[0]!r}") from None
            genres = [g for g in row[2].split("|") if g] if row[2] != NO_GENRES else [NO_GENRES]
            if not genres:
                raise ValueError(f"{path}:{lineno}: empty genre list")
            records.append(MovieRecord(movie_id, row[1], genres))
    return records


_WORD = re.compile(r"(?u)\b\w\w+\b")


def tokenize(record: MovieRecord, mode: str = "genre") -> list[str]:
    """Genre tokens as listed, or lower-cased word tokens of the genre string."""
    if mode == "genre":
        return list(record.genres)
    if mode == "words":
        return _WORD.findall(" ".join(record.genres).lower())
    raise ValueError(f"unknown tokenizer {mode!r}")


def tfidf_vectorize(records, mode: str = "genre", decimals: int | None = 2):
    """Smoothed-idf tf-idf matrix with L2-normalized rows. Returns (matrix, vocabulary)."""
    docs = [tokenize(r, mode) for r in records]
    if not docs:
        raise ValueError("no records to vectorize")
    vocab = sorted({t for doc in docs for t in doc})
    if not vocab:
        raise ValueError("empty vocabulary")
    col = {t: j for j, t in enumerate(vocab)}
    tf = np.zeros((len(docs), len(vocab)))
    for i, doc in enumerate(docs):
        for t in doc:
            tf[i, col[t]] += 1.0
    n_docs = len(docs)
    df = np.count_nonzero(tf, axis=0)
    idf = np.log((1.0 + n_docs) / (1.0 + df)) + 1.0
    m = tf * idf
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    m = np.divide(m, norms, out=np.zeros_like(m), where=norms > 0)
    if decimals is not None:
        m = np.round(m, decimals)
    return m, vocab


def dedupe_rows(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if len(m) == 0:
        return m
    _, first = np.unique(m, axis=0, return_index=True)
    return m[np.sort(first)]


def tier_rewards(n: int) -> np.ndarray:
    """1 / 10 / 30 for the first 60% / next 30% / last 10% of items (by index)."""
    n_top = int(math.floor(TIER_SHARES[2] * n))
    n_mid = int(math.floor(TIER_SHARES[1] * n))
    n_low = n - n_mid - n_top
    return np.concatenate([np.full(n_low, REWARD_TIERS[0]), np.full(n_mid, REWARD_TIERS[1]),
                           np.full(n_top, REWARD_TIERS[2])])


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity of a zero vector")
    return float(a @ b / (na * nb))


def similarity_matrix(features) -> np.ndarray:
    f = np.asarray(features, dtype=np.float64)
    norms = np.linalg.norm(f, axis=1)
    if np.any(norms == 0):
        raise ValueError("catalog contains a zero row")
    u = f / norms[:, None]
    s = np.clip(u @ u.T, -1.0, 1.0)
    s = 0.5 * (s + s.T)
    np.fill_diagonal(s, 1.0)
    return s


def pick_probability(s):
    """Logistic acceptance probability ``1 / (1 + exp(-5 s))``."""
    return 1.0 / (1.0 + np.exp(-SIGMOID_SCALE * np.asarray(s, dtype=np.float64)))


def build_catalog(records, mode: str = "genre") -> Catalog:
    m, vocab = tfidf_vectorize(records, mode)
    m = dedupe_rows(m)
    m = m[np.linalg.norm(m, axis=1) > 0]
    return Catalog(m, tier_rewards(len(m)), vocab)


def synthetic_catalog(seed: int, n_items: int, n_features: int) -> Catalog:
    """Deterministic sparse non-negative catalog shaped like the genre features."""
    if n_items < 1 or n_features < 1:
        raise ValueError("need at least one item and one feature")
    rng = np.random.default_rng(seed)
    rows = np.zeros((n_items, n_features))
    max_active = min(n_features, 4)
    for i in range(n_items):
        k = int(rng.integers(1, max_active + 1))
        cols = rng.choice(n_features, size=k, replace=False)
        rows[i, cols] = rng.uniform(0.2, 1.0, size=k)
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    rows = dedupe_rows(np.round(rows, 2))
    rows = rows[np.linalg.norm(rows, axis=1) > 0]
    return Catalog(rows, tier_rewards(len(rows)))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def catalog_to_csv(catalog: Catalog) -> str:
    f = catalog.features.shape[1]
    names = catalog.vocabulary or [f"f{j}" for j in range(f)]
    buf = io.StringIO()
    buf.write("# dncrl catalog v1\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(names) + ["reward"])
    for row, reward in zip(catalog.features, catalog.item_rewards):
        w.writerow([f"{v:.2f}" for v in row] + [str(int(reward))])
    return buf.getvalue()


def write_catalog(catalog: Catalog, path, source_hash: str | None = None) -> list[Path]:
    """Write ``catalog.csv`` and, when ``source_hash`` is given, a .npy cache beside it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(catalog_to_csv(catalog))
    written = [path]
    if source_hash:
        cache = path.with_name(f"{path.stem}.{source_hash[:16]}.npy")
        np.save(cache, np.column_stack([catalog.features, catalog.item_rewards]))
        written.append(cache)
    return written


def read_catalog(path) -> Catalog:
    path = Path(path)
    if path.suffix == ".npy":
        arr = np.load(path)
        return Catalog(arr[:, :-1].copy(), arr[:, -1].copy())
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    if not rows:
        raise ValueError(f"{path}: empty catalog")
    header, body = rows[0], rows[1:]
    if header[-1] != "reward":
        raise ValueError(f"{path}: last column must be 'reward'")
    data = np.array([[float(v) for v in r] for r in body]).reshape(len(body), len(header))
    return Catalog(data[:, :-1], data[:, -1], header[:-1])


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def ingest(movies_csv, out_path, mode: str = "genre") -> Catalog:
    records = parse_movies_csv(movies_csv)
    catalog = build_catalog(records, mode)
    write_catalog(catalog, out_path, file_hash(movies_csv))
    return catalog
