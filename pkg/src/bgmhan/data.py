"""Applicant profiles: schema, JSONL ingestion, splitting, synthetic generation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .bpe import NAN_TOKEN

TEXT_FIELDS = ("gcea", "gceo", "leadership", "piq")
RECORD_KEYS = ("id",) + TEXT_FIELDS + ("label",)


class RecordError(ValueError):
    """One or more dataset lines could not be parsed; ``errors`` holds (line, message)."""

    def __init__(self, errors: list[tuple[int, str]]):
        self.errors = errors
        msg = "; ".join(f"line {ln}: {m}" for ln, m in errors[:10])
        if len(errors) > 10:
            msg += f"; ... {len(errors) - 10} more"
        super().__init__(msg)


class SplitError(ValueError):
    pass


@dataclass
class Profile:
    id: str
    gcea: str
    gceo: str
    leadership: str
    piq: str
    label: int

    def to_record(self) -> dict:
        return {k: getattr(self, k) for k in RECORD_KEYS}

    def text(self) -> str:
        return " ".join(getattr(self, f) for f in TEXT_FIELDS)


@dataclass
class LoadReport:
    n_records: int = 0
    missing: list = field(default_factory=list)  # (line, profile id, field)


def is_missing(text) -> bool:
    """True for absent text and for text with no sentence content (only spaces and periods)."""
    if text is None or (isinstance(text, float) and math.isnan(text)):
        return True
    return not str(text).replace(".", "").strip()


def handle_missing(profile: Profile) -> Profile:
    """Replace fields that would tokenize to nothing with the literal ``NaN`` token."""
    updates = {f: NAN_TOKEN for f in TEXT_FIELDS if is_missing(getattr(profile, f))}
    return replace(profile, **updates) if updates else profile


def _parse_label(raw):
    if isinstance(raw, bool):
        return None
    if isinstance(raw, int) and raw in (0, 1):
        return raw
    if isinstance(raw, str) and raw.strip() in ("0", "1"):
        return int(raw.strip())
    if isinstance(raw, float) and raw in (0.0, 1.0):
        return int(raw)
    return None


def load_profiles(path, report: LoadReport | None = None) -> list[Profile]:
    """Read one JSON object per line; missing text fields become ``NaN``.

    All malformed lines are collected and raised together as :class:`RecordError`.
    """
    report = report if report is not None else LoadReport()
    profiles = []
    errors: list[tuple[int, str]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                errors.append((lineno, f"not valid JSON ({exc.msg})"))
                continue
            if not isinstance(rec, dict):
                errors.append((lineno, "record is not an object"))
                continue
            if "label" not in rec:
                errors.append((lineno, "missing label"))
                continue
            label = _parse_label(rec["label"])
            if label is None:
                errors.append((lineno, f"label must be 0 or 1, got {rec['label']!r}"))
                continue
            pid = str(rec.get("id", f"line{lineno}"))
            texts = {}
            for f in TEXT_FIELDS:
                val = rec.get(f)
                if val is not None and not isinstance(val, str):
                    errors.append((lineno, f"field {f} must be text"))
                    break
                if is_missing(val):
                    report.missing.append((lineno, pid, f))
                texts[f] = val if val is not None else ""
            else:
                profiles.append(handle_missing(Profile(pid, label=label, **texts)))
    if errors:
        raise RecordError(errors)
    report.n_records = len(profiles)
    return profiles


def dumps_profiles(profiles) -> str:
    return "".join(json.dumps(p.to_record(), ensure_ascii=False) + "\n" for p in profiles)


def save_profiles(profiles, path) -> None:
    Path(path).write_text(dumps_profiles(profiles), encoding="utf-8")


# ---------------------------------------------------------------------------
# splitting


@dataclass
class DatasetSplit:
    train: list
    validation: list
    test: list
    seed: int
    fractions: tuple = (0.90, 0.05, 0.05)

    def parts(self):
        return self.train, self.validation, self.test


def largest_remainder(total: int, fractions) -> list[int]:
    """Integer counts summing to ``total``, each within 1 of ``total * f``.

    Leftover units go to the largest fractional parts; ties to the earlier slot.
    """
    quotas = [total * f for f in fractions]
    counts = [math.floor(q) for q in quotas]
    left = total - sum(counts)
    order = sorted(range(len(fractions)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:left]:
        counts[i] += 1
    return counts


def stratified_split(profiles, fractions=(0.90, 0.05, 0.05), seed: int = 0) -> DatasetSplit:
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise SplitError(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
    rng = np.random.default_rng(seed)
    parts: list[list] = [[], [], []]
    needed = sum(1 for f in fractions if f > 0)
    for label in (0, 1):
        members = [p for p in profiles if p.label == label]
        if len(members) < needed:
            raise SplitError(f"class {label} has {len(members)} samples, need at least {needed}")
        members = [members[i] for i in rng.permutation(len(members))]
        start = 0
        for part, k in zip(parts, largest_remainder(len(members), fractions)):
            part.extend(members[start : start + k])
            start += k
    shuffled = [[part[i] for i in rng.permutation(len(part))] for part in parts]
    return DatasetSplit(*shuffled, seed=seed, fractions=fractions)


# ---------------------------------------------------------------------------
# synthetic generator
#
# Each profile is driven by a hidden ability draw; grades, leadership roles
# and essay openers are sampled around it.  The label comes only from the
# rendered text through latent_score(), so a reader that parses the text
# reproduces the pre-noise label exactly.

H2_SUBJECTS = (
    "Mathematics", "Physics", "Chemistry", "Biology", "Economics",
    "History", "Geography", "Literature", "Computing", "Art",
)
H1_SUBJECTS = ("General Paper", "Project Work", "Mother Tongue", "Chinese", "Malay", "Tamil")
A_GRADES = "EDCBA"  # index + 1 = points
O_SUBJECTS = (
    "English", "Mathematics", "Additional Mathematics", "Physics", "Chemistry",
    "Biology", "Geography", "History", "Literature", "Chinese", "Malay", "Tamil",
)
O_GRADES = ("C6", "C5", "B4", "B3", "A2", "A1")  # index + 1 = points
ROLES = {
    "Member": 0, "Secretary": 1, "Treasurer": 1, "Vice-Captain": 2,
    "Vice-President": 2, "Captain": 3, "President": 3, "Chairperson": 3,
}
LEVELS = {"School": 0, "Zonal": 1, "National": 2, "International": 3}
CATEGORIES = {
    "Sports": ("Floorball", "Basketball", "Netball", "Badminton", "Swimming", "Athletics"),
    "Performing Arts": ("Choir", "Band", "Dance", "Drama", "Orchestra"),
    "Clubs": ("Robotics", "Debate", "Chess", "Photography", "Astronomy"),
    "Service": ("Red Cross", "Scouts", "Student Council", "Peer Support"),
}
SIGNAL_OPENERS = ("Founded", "Led", "Mentored", "Organised", "Initiated", "Spearheaded")
FILLER_OPENERS = ("Enjoyed", "Watched", "Attended", "Joined", "Liked", "Visited")
PIQ_OBJECTS = (
    "a coding workshop", "the recycling drive", "a tuition programme", "our class project",
    "a charity concert", "the science fair", "a community garden", "the school hackathon",
    "an art exhibition", "a reading circle",
)
PIQ_TAILS = (
    "for younger students", "with my friends", "during the holidays", "at {place}",
    "in {place}", "near {place}", "with {name}", "after school",
)
_ONSETS = ("b", "k", "t", "s", "m", "r", "l", "v", "d", "n", "h", "p", "g", "w", "z")
_NUCLEI = ("a", "e", "i", "o", "u", "ai", "ou", "ee")
_CODAS = ("", "n", "m", "r", "l", "s", "k", "ng")

THRESHOLD = 0.55


def _pseudo_word(rng: np.random.Generator) -> str:
    syl = int(rng.integers(2, 4))
    w = "".join(
        _ONSETS[rng.integers(len(_ONSETS))] + _NUCLEI[rng.integers(len(_NUCLEI))] + _CODAS[rng.integers(len(_CODAS))]
        for _ in range(syl)
    )
    return w.capitalize()


def _graded(rng: np.random.Generator, ability: float, levels: int, spread: float = 1.0) -> int:
    """Index in ``range(levels)`` centred on the ability draw."""
    mid = (levels - 1) / 2.0
    v = mid + ability * levels / 4.0 + rng.normal(0.0, spread)
    return int(np.clip(round(v), 0, levels - 1))


def _gcea_text(rng, ability) -> str:
    subjects = rng.choice(len(H2_SUBJECTS), size=3, replace=False)
    parts = [f"H2 {H2_SUBJECTS[i]} {A_GRADES[_graded(rng, ability, 5)]}" for i in subjects]
    parts.append(f"H1 {H1_SUBJECTS[rng.integers(len(H1_SUBJECTS))]} {A_GRADES[_graded(rng, ability, 5)]}")
    return ". ".join(parts) + "."


def _gceo_text(rng, ability) -> str:
    subjects = rng.choice(len(O_SUBJECTS), size=4, replace=False)
    return ". ".join(f"{O_SUBJECTS[i]} {O_GRADES[_graded(rng, ability, 6)]}" for i in subjects) + "."


def _leadership_text(rng, ability) -> str:
    roles = list(ROLES)
    levels = list(LEVELS)
    cats = list(CATEGORIES)
    entries = []
    for _ in range(int(rng.integers(1, 5))):
        role = roles[_graded(rng, ability, len(roles), 1.5)]
        level = levels[_graded(rng, ability, len(levels), 1.0)]
        activity = CATEGORIES[cats[rng.integers(len(cats))]]
        act = activity[rng.integers(len(activity))]
        start = int(rng.integers(2016, 2022))
        entries.append(f"{role} {act} {start}-{start + int(rng.integers(1, 4))} {level}")
    return ". ".join(entries) + "."


def _piq_text(rng, ability) -> str:
    sentences = []
    p_signal = 1.0 / (1.0 + math.exp(-1.5 * ability))
    for _ in range(int(rng.integers(2, 5))):
        opener = (
            SIGNAL_OPENERS[rng.integers(len(SIGNAL_OPENERS))]
            if rng.random() < p_signal
            else FILLER_OPENERS[rng.integers(len(FILLER_OPENERS))]
        )
        tail = PIQ_TAILS[rng.integers(len(PIQ_TAILS))].format(place=_pseudo_word(rng), name=_pseudo_word(rng))
        sentences.append(f"{opener} {PIQ_OBJECTS[rng.integers(len(PIQ_OBJECTS))]} {tail}")
    return ". ".join(sentences) + "."


def _sentences(text: str) -> list[str]:
    if is_missing(text) or text.strip() == NAN_TOKEN:
        return []
    return [s.strip() for s in text.split(".") if s.strip()]


def _mean(xs) -> float:
    return sum(xs) / len(xs) if xs else 0.0


def latent_score(profile: Profile) -> float:
    """Admission score in [0, 1] read back from the profile text.

    Weighted mix of A-Level grades (H1 counting half), O-Level grades,
    leadership seniority (role + level) and the share of essay sentences
    that open with an initiative verb.  Missing fields score 0.
    """
    a_pts, a_w = 0.0, 0.0
    for s in _sentences(profile.gcea):
        words = s.split()
        weight = 0.5 if words[0] == "H1" else 1.0
        a_pts += weight * (A_GRADES.index(words[-1]) + 1)
        a_w += weight
    academic = (a_pts / a_w - 1) / 4 if a_w else 0.0

    o_level = _mean([(O_GRADES.index(s.split()[-1])) / 5 for s in _sentences(profile.gceo)])

    lead = _mean(
        [(ROLES[s.split()[0]] + LEVELS[s.split()[-1]]) / 6 for s in _sentences(profile.leadership)]
    )
    essay = _mean([1.0 if s.split()[0] in SIGNAL_OPENERS else 0.0 for s in _sentences(profile.piq)])
    return 0.35 * academic + 0.15 * o_level + 0.25 * lead + 0.25 * essay


def rule_label(profile: Profile) -> int:
    return int(latent_score(profile) > THRESHOLD)


def generate_synthetic(
    n: int,
    seed: int = 0,
    signal_strength: float = 0.9,
    positive_fraction: float = 0.4,
    blank_fraction: float = 0.05,
) -> list[Profile]:
    """Seeded stand-in dataset with exactly ``round(n * positive_fraction)`` offers.

    With probability ``signal_strength`` a profile keeps its rule label,
    otherwise its label is redrawn at the positive rate, independent of
    the text.  Each text field is blanked with probability ``blank_fraction``.
    """
    if n < 4:
        raise ValueError("need n >= 4 profiles")
    if not 0.0 <= signal_strength <= 1.0:
        raise ValueError(f"signal_strength {signal_strength} outside [0, 1]")
    if not 0.0 < positive_fraction < 1.0:
        raise ValueError(f"positive_fraction {positive_fraction} outside (0, 1)")
    if not 0.0 <= blank_fraction < 1.0:
        raise ValueError(f"blank_fraction {blank_fraction} outside [0, 1)")
    rng = np.random.default_rng(seed)
    n_pos = min(max(round(n * positive_fraction), 1), n - 1)
    quota = {1: n_pos, 0: n - n_pos}
    out: list[Profile] = []
    while quota[0] or quota[1]:
        ability = rng.normal()
        texts = {
            "gcea": _gcea_text(rng, ability),
            "gceo": _gceo_text(rng, ability),
            "leadership": _leadership_text(rng, ability),
            "piq": _piq_text(rng, ability),
        }
        for f in TEXT_FIELDS:
            if rng.random() < blank_fraction:
                texts[f] = ""
        draft = Profile("", label=0, **texts)
        if rng.random() < signal_strength:
            label = rule_label(draft)
        else:
            label = int(rng.random() < positive_fraction)
        if quota[label] == 0:
            continue
        quota[label] -= 1
        out.append(replace(draft, id=f"P{len(out):05d}", label=label))
    return out
