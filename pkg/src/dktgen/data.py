"""Interaction logs: loading, student-level splits, sequence encoding and a mastery simulator.

A set of interactions is a :class:`pandas.DataFrame` with the canonical columns
``user_id`` (str), ``skill_id`` (str), ``correct`` (int 0/1) and ``overlap_time``
(float, milliseconds). Row order is temporal order.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .numerics import Rng

log = logging.getLogger(__name__)

COLUMNS = ("user_id", "skill_id", "correct", "overlap_time")
UNKNOWN_SKILL = "<unk>"


class SchemaError(ValueError):
    """Input file lacks a mapped column."""


class EncodingError(ValueError):
    """Skill index outside the vocabulary."""


@dataclass(frozen=True)
class Interaction:
    user_id: str
    skill_id: str
    correct: int
    overlap_time: float


@dataclass(frozen=True)
class ColumnMap:
    """Names of the four required columns in a raw file."""

    user_id: str = "user_id"
    skill_id: str = "skill_id"
    correct: str = "correct"
    overlap_time: str = "overlap_time"

    def as_dict(self) -> dict[str, str]:
        return {c: getattr(self, c) for c in COLUMNS}


@dataclass
class LoadResult:
    interactions: pd.DataFrame
    rows_read: int
    rows_dropped: int
    duplicates_removed: int

    @property
    def num_users(self) -> int:
        return int(self.interactions["user_id"].nunique())

    @property
    def num_skills(self) -> int:
        return int(self.interactions["skill_id"].nunique())

    def summary(self) -> dict:
        return {
            "rows_read": self.rows_read,
            "rows_dropped": self.rows_dropped,
            "duplicates_removed": self.duplicates_removed,
            "interactions": len(self.interactions),
            "num_users": self.num_users,
            "num_skills": self.num_skills,
        }


def empty_interactions() -> pd.DataFrame:
    return pd.DataFrame(
        {
            "user_id": pd.Series([], dtype=object),
            "skill_id": pd.Series([], dtype=object),
            "correct": pd.Series([], dtype=np.int64),
            "overlap_time": pd.Series([], dtype=np.float64),
        }
    )


def interactions_frame(rows: Iterable[Interaction]) -> pd.DataFrame:
    rows = list(rows)
    if not rows:
        return empty_interactions()
    return canonicalize(pd.DataFrame([r.__dict__ for r in rows], columns=list(COLUMNS)))


def canonicalize(df: pd.DataFrame) -> pd.DataFrame:
    """Coerce to canonical dtypes and column order, with a fresh RangeIndex."""
    out = pd.DataFrame(
        {
            "user_id": df["user_id"].astype(str).to_numpy(dtype=object),
            "skill_id": df["skill_id"].astype(str).to_numpy(dtype=object),
            "correct": df["correct"].astype(np.int64).to_numpy(),
            "overlap_time": df["overlap_time"].astype(np.float64).to_numpy(),
        }
    )
    return out


def _read_raw(path: Path, usecols: list[str]) -> pd.DataFrame:
    def read(encoding: str) -> pd.DataFrame:
        return pd.read_csv(
            path,
            dtype=str,
            keep_default_na=False,
            encoding=encoding,
            usecols=lambda c: c in usecols,
        )

    try:
        return read("utf-8")
    except UnicodeDecodeError:
        # ASSISTments exports are often latin-1
        log.warning("%s is not valid UTF-8, retrying as latin-1", path)
        return read("latin-1")


def load_interactions(path: str | Path, columns: ColumnMap | None = None) -> LoadResult:
    """Load a delimited log, drop unparseable rows and exact duplicates.

    Raises
    ------
    OSError
        The file cannot be read.
    SchemaError
        The header lacks one of the mapped columns.
    """
    columns = columns or ColumnMap()
    path = Path(path)
    mapping = columns.as_dict()
    try:
        header = [str(h).strip() for h in pd.read_csv(path, nrows=0, encoding="latin-1").columns]
    except pd.errors.EmptyDataError:
        raise SchemaError(f"{path} has no header row") from None
    for canon, raw in mapping.items():
        if raw not in header:
            raise SchemaError(f"column {raw!r} (for {canon}) not found in {path}")

    raw = _read_raw(path, list(mapping.values()))
    df = pd.DataFrame({canon: raw[col].str.strip() for canon, col in mapping.items()})
    rows_read = len(df)

    correct = pd.to_numeric(df["correct"], errors="coerce")
    overlap = pd.to_numeric(df["overlap_time"], errors="coerce")
    ok = (
        (df["user_id"] != "")
        & (df["skill_id"] != "")
        & correct.isin([0, 1])
        & overlap.notna()
        & np.isfinite(overlap)
        & (overlap >= 0)
    )
    dropped = int((~ok).sum())
    if dropped:
        log.warning("dropped %d of %d rows with missing or invalid fields", dropped, rows_read)
    df = df.loc[ok].assign(correct=correct[ok].astype(np.int64), overlap_time=overlap[ok])
    df = canonicalize(df)
    deduped = deduplicate(df)
    return LoadResult(
        interactions=deduped,
        rows_read=rows_read,
        rows_dropped=dropped,
        duplicates_removed=len(df) - len(deduped),
    )


def deduplicate(df: pd.DataFrame) -> pd.DataFrame:
    """Drop rows equal on all four attributes, keeping the first occurrence."""
    return df.drop_duplicates(subset=list(COLUMNS), keep="first").reset_index(drop=True)


def write_interactions(df: pd.DataFrame, path: str | Path) -> None:
    canonicalize(df).to_csv(path, index=False, float_format="%.17g")


def read_canonical(path: str | Path) -> pd.DataFrame:
    """Read a file previously written by :func:`write_interactions`."""
    df = pd.read_csv(
        path,
        dtype={"user_id": str, "skill_id": str, "correct": np.int64, "overlap_time": np.float64},
        keep_default_na=False,
    )
    if df.empty:
        return empty_interactions()
    return canonicalize(df)


# --- splitting --------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.05
    valid_frac: float = 0.20
    test_frac: float = 0.75
    seed: int = 0

    def __post_init__(self):
        fracs = (self.train_frac, self.valid_frac, self.test_frac)
        if min(fracs) <= 0 or abs(sum(fracs) - 1.0) > 1e-12:
            raise ValueError(f"split fractions must be positive and sum to 1, got {fracs}")


def split_counts(num_students: int, spec: SplitSpec) -> tuple[int, int, int]:
    # the epsilon absorbs representation error such as 100 * 0.29 = 28.999...
    n_train = max(1, int(np.floor(num_students * spec.train_frac + 1e-9)))
    n_valid = max(1, int(np.floor(num_students * spec.valid_frac + 1e-9)))
    n_test = num_students - n_train - n_valid
    if n_test < 1:
        raise ValueError(f"{num_students} students cannot fill three splits")
    return n_train, n_valid, n_test


def split_by_student(
    interactions: pd.DataFrame, spec: SplitSpec
) -> tuple[pd.DataFrame, pd.DataFrame, pd.DataFrame]:
    """Shuffle students with ``spec.seed`` and partition them; the remainder goes to test."""
    users = np.array(sorted(interactions["user_id"].unique()), dtype=object)
    if len(users) < 3:
        raise ValueError(f"need at least 3 students to split, got {len(users)}")
    n_train, n_valid, _ = split_counts(len(users), spec)
    order = users[Rng(spec.seed).permutation(len(users))]
    groups = (
        set(order[:n_train]),
        set(order[n_train : n_train + n_valid]),
        set(order[n_train + n_valid :]),
    )
    return tuple(
        interactions[interactions["user_id"].isin(g)].reset_index(drop=True) for g in groups
    )


def write_split_manifest(
    out_dir: str | Path,
    splits: Sequence[pd.DataFrame],
    spec: SplitSpec,
    num_skills: int | None = None,
) -> dict:
    """Write ``{train,valid,test}_users.txt`` plus ``split_summary.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = {"seed": spec.seed, "fractions": [spec.train_frac, spec.valid_frac, spec.test_frac]}
    for name, df in zip(("train", "valid", "test"), splits):
        users = sorted(df["user_id"].unique())
        (out_dir / f"{name}_users.txt").write_text("".join(u + "\n" for u in users))
        summary[name] = {
            "students": len(users),
            "interactions": len(df),
            "skills": int(df["skill_id"].nunique()),
        }
    if num_skills is not None:
        summary["skill_vocabulary_size"] = num_skills
    (out_dir / "split_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return summary


# --- vocabularies and sequences ---------------------------------------------


@dataclass
class Vocabulary:
    """Token <-> index map. Skill vocabularies reserve the last index for unseen skills."""

    tokens: list[str]
    unknown: str | None = None
    _index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self._index = {t: i for i, t in enumerate(self.tokens)}

    @classmethod
    def skills_from(cls, interactions: pd.DataFrame) -> "Vocabulary":
        toks = sorted(set(interactions["skill_id"]) - {UNKNOWN_SKILL})
        return cls(toks + [UNKNOWN_SKILL], unknown=UNKNOWN_SKILL)

    @classmethod
    def users_from(cls, interactions: pd.DataFrame) -> "Vocabulary":
        return cls(sorted(set(interactions["user_id"])))

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, values) -> np.ndarray:
        fallback = self._index[self.unknown] if self.unknown is not None else -1
        out = np.fromiter(
            (self._index.get(v, fallback) for v in values), dtype=np.int64, count=len(values)
        )
        if self.unknown is None and (out < 0).any():
            raise EncodingError("value outside a closed vocabulary")
        return out

    def decode(self, indices) -> np.ndarray:
        toks = np.array(self.tokens, dtype=object)
        return toks[np.asarray(indices, dtype=np.int64)]


@dataclass
class StudentSequence:
    user_id: str
    skills: np.ndarray  # int indices into the skill vocabulary
    correct: np.ndarray  # 0/1, same length

    def __len__(self) -> int:
        return len(self.skills)


@dataclass
class EncodedWindow:
    """Consecutive next-step training examples from one window of a sequence."""

    input_index: np.ndarray
    target_skill: np.ndarray
    target_correct: np.ndarray

    def __len__(self) -> int:
        return len(self.input_index)


def build_sequences(
    interactions: pd.DataFrame, skills: Vocabulary | None = None
) -> list[StudentSequence]:
    """Group rows per user (users sorted, row order kept); users with < 2 rows are dropped."""
    if skills is None:
        skills = Vocabulary.skills_from(interactions)
    if interactions.empty:
        return []
    users = interactions["user_id"].to_numpy(dtype=object)
    skill_idx = skills.encode(interactions["skill_id"].to_numpy(dtype=object))
    correct = interactions["correct"].to_numpy(dtype=np.int64)
    uniq, codes = np.unique(users, return_inverse=True)
    order = np.argsort(codes, kind="stable")
    bounds = np.searchsorted(codes[order], np.arange(len(uniq) + 1))
    seqs = []
    for k, user in enumerate(uniq):
        rows = order[bounds[k] : bounds[k + 1]]
        if len(rows) >= 2:
            seqs.append(StudentSequence(str(user), skill_idx[rows], correct[rows]))
    return seqs


def encode_sequence(
    seq: StudentSequence, num_skills: int, max_len: int = 200
) -> list[EncodedWindow]:
    """Split into non-overlapping windows of ``max_len`` interactions and encode each.

    Input at step t is ``skill + num_skills * correct`` of interaction t-1; the target
    is interaction t. Windows shorter than two interactions produce nothing.
    """
    skills = np.asarray(seq.skills, dtype=np.int64)
    correct = np.asarray(seq.correct, dtype=np.int64)
    if skills.size and (skills.min() < 0 or skills.max() >= num_skills):
        raise EncodingError(f"skill index out of range [0, {num_skills}) for user {seq.user_id}")
    windows = []
    for start in range(0, len(skills), max_len):
        s = skills[start : start + max_len]
        c = correct[start : start + max_len]
        if len(s) < 2:
            continue
        windows.append(EncodedWindow(s[:-1] + num_skills * c[:-1], s[1:].copy(), c[1:].copy()))
    return windows


def decode_input(input_index: np.ndarray, num_skills: int) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of the input encoding: ``(skill, correct)``."""
    input_index = np.asarray(input_index)
    return input_index % num_skills, input_index // num_skills


# --- simulator ----------------------------------------------------------------


def simulate_students(
    num_students: int,
    num_skills: int,
    mastery_params: np.ndarray,
    steps_per_student: int,
    seed: int,
) -> pd.DataFrame:
    """Two-state mastery simulator.

    ``mastery_params`` has one row ``(p_init, p_learn, p_guess, p_slip)`` per skill.
    Each step practices a uniformly drawn skill; the response is correct with
    ``p_guess`` before mastery and ``1 - p_slip`` after, and mastery is then acquired
    with ``p_learn``. Time on task is log-normal, shorter once a skill is mastered.
    """
    params = np.asarray(mastery_params, dtype=np.float64)
    if params.shape != (num_skills, 4):
        raise ValueError(f"mastery_params must have shape ({num_skills}, 4), got {params.shape}")
    if not np.all((params >= 0) & (params <= 1)):
        raise ValueError("mastery probabilities must lie in [0, 1]")
    p_init, p_learn, p_guess, p_slip = params.T
    rng = Rng(seed)
    n, T = num_students, steps_per_student
    skill = rng.integers(0, num_skills, size=(n, T))
    learned = rng.uniform((n, num_skills)) < p_init[None, :]
    u_resp = rng.uniform((n, T))
    u_learn = rng.uniform((n, T))
    z_time = rng.normal((n, T))
    correct = np.zeros((n, T), dtype=np.int64)
    mastered = np.zeros((n, T), dtype=bool)
    rows = np.arange(n)
    for t in range(T):
        k = skill[:, t]
        state = learned[rows, k]
        p_correct = np.where(state, 1.0 - p_slip[k], p_guess[k])
        correct[:, t] = u_resp[:, t] < p_correct
        mastered[:, t] = state
        learned[rows, k] = state | (u_learn[:, t] < p_learn[k])
    overlap = np.exp(np.where(mastered, 9.5, 10.5) + 0.8 * z_time)
    width = len(str(num_students - 1))
    return pd.DataFrame(
        {
            "user_id": np.repeat([f"u{i:0{width}d}" for i in range(n)], T).astype(object),
            "skill_id": np.array([f"k{j}" for j in skill.ravel()], dtype=object),
            "correct": correct.ravel(),
            "overlap_time": overlap.ravel(),
        }
    )


BUNDLED_CORPUS = "sim_corpus.csv.gz"


def bundled_mastery_params(num_skills: int = 20, seed: int = 20240101) -> np.ndarray:
    rng = Rng(seed)
    # columns: p_init, p_learn, p_guess, p_slip. Slow learning keeps students
    # distinguishable for the whole sequence.
    lo = np.array([0.10, 0.02, 0.05, 0.02])
    hi = np.array([0.60, 0.10, 0.25, 0.10])
    return lo + (hi - lo) * rng.uniform((num_skills, 4))


def make_bundled_corpus() -> pd.DataFrame:
    """500 students x 100 steps over 20 skills; the corpus shipped with the package."""
    return simulate_students(500, 20, bundled_mastery_params(), 100, seed=7)


def bundled_corpus_path() -> Path:
    return Path(str(resources.files("dktgen").joinpath("resources", BUNDLED_CORPUS)))
