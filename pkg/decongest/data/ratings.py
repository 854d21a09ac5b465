# decongest/data/ratings.py
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import structlog

from ..errors import DataError

log = structlog.get_logger()

MIN_RATING = 1.0
MAX_RATING = 5.0


@dataclass(frozen=True, eq=False)
class RatingTriples:
    users: np.ndarray  # row index per rating
    items: np.ndarray  # column index per rating
    ratings: np.ndarray
    timestamps: np.ndarray
    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]

    def __len__(self) -> int:
        return int(self.ratings.shape[0])

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.user_ids), len(self.item_ids)

    def to_matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """(dense ratings, observed indicator); later duplicates overwrite earlier ones."""
        R = np.zeros(self.shape)
        M = np.zeros(self.shape)
        R[self.users, self.items] = self.ratings
        M[self.users, self.items] = 1.0
        return R, M

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RatingTriples):
            return NotImplemented
        return (
            self.user_ids == other.user_ids
            and self.item_ids == other.item_ids
            and np.array_equal(self.users, other.users)
            and np.array_equal(self.items, other.items)
            and np.array_equal(self.ratings, other.ratings)
            and np.array_equal(self.timestamps, other.timestamps)
        )


def _parse_line(line: str, lineno: int) -> tuple[str, str, float, int]:
    parts = line.rstrip("\r\n").split("\t")
    if len(parts) != 4:
        raise DataError(f"line {lineno}: expected 4 tab-separated fields, got {len(parts)}")
    user, item, raw_rating, raw_ts = parts
    if not user or not item:
        raise DataError(f"line {lineno}: empty user or item id")
    try:
        rating = float(raw_rating)
        timestamp = int(raw_ts)
    except ValueError as e:
        raise DataError(f"line {lineno}: {e}") from e
    if not MIN_RATING <= rating <= MAX_RATING:
        raise DataError(f"line {lineno}: rating {rating:g} outside {MIN_RATING:g}..{MAX_RATING:g}")
    return user, item, rating, timestamp


def ingest_ratings(path: Path) -> RatingTriples:
    """Parse a user<TAB>item<TAB>rating<TAB>timestamp file; ids keep first-seen order."""
    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    users: list[int] = []
    items: list[int] = []
    ratings: list[float] = []
    timestamps: list[int] = []

    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            user, item, rating, ts = _parse_line(line, lineno)
            users.append(user_index.setdefault(user, len(user_index)))
            items.append(item_index.setdefault(item, len(item_index)))
            ratings.append(rating)
            timestamps.append(ts)

    if not ratings:
        raise DataError(f"no ratings found in {path}")
    log.info("ratings_ingested", path=str(path), ratings=len(ratings), users=len(user_index), items=len(item_index))
    return RatingTriples(
        users=np.asarray(users, dtype=np.int64),
        items=np.asarray(items, dtype=np.int64),
        ratings=np.asarray(ratings, dtype=float),
        timestamps=np.asarray(timestamps, dtype=np.int64),
        user_ids=tuple(user_index),
        item_ids=tuple(item_index),
    )


def write_ratings(triples: RatingTriples, path: Path) -> None:
    lines = []
    for u, i, r, ts in zip(triples.users, triples.items, triples.ratings, triples.timestamps):
        rating = str(int(r)) if float(r).is_integer() else repr(float(r))
        lines.append(f"{triples.user_ids[u]}\t{triples.item_ids[i]}\t{rating}\t{int(ts)}\n")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("".join(lines), encoding="utf-8")


def synthetic_ratings(
    n_users: int = 400,
    n_items: int = 200,
    d: int = 12,
    density: float = 0.3,
    seed: int = 0,
) -> RatingTriples:
    """Low-rank non-negative ratings on the 1..5 scale, observed at random with every user
    and item rated at least once."""
    rng = np.random.default_rng(seed)
    B = rng.gamma(shape=0.5, scale=1.0, size=(n_users, d))
    X = rng.gamma(shape=0.5, scale=1.0, size=(n_items, d))
    raw = B @ X.T
    lo, hi = raw.min(), raw.max()
    scaled = np.rint(MIN_RATING + (MAX_RATING - MIN_RATING) * (raw - lo) / max(hi - lo, 1e-12))

    observed = rng.uniform(size=raw.shape) < density
    observed[np.arange(n_users), rng.integers(0, n_items, size=n_users)] = True
    observed[rng.integers(0, n_users, size=n_items), np.arange(n_items)] = True
    users, items = np.nonzero(observed)
    return RatingTriples(
        users=users.astype(np.int64),
        items=items.astype(np.int64),
        ratings=scaled[users, items],
        timestamps=np.zeros(users.size, dtype=np.int64),
        user_ids=tuple(str(u + 1) for u in range(n_users)),
        item_ids=tuple(str(i + 1) for i in range(n_items)),
    )
