"""Byte-pair encoding: merge learning, encode/decode, vocab files.

Conventions that the merge loop leaves open are fixed here:

* pairs are counted inside whitespace-delimited words only; whitespace
  characters are kept as base symbols so decoding is exact;
* identical adjacent pairs are counted non-overlapping, left to right
  ("aaa" holds one ("a", "a"));
* frequency ties go to the lexicographically smallest (left, right);
* training stops early once no pair occurs at least twice.

Two reserved symbols precede the learned ones: ``<unk>`` (id 0) for
characters never seen in training, and ``NaN`` (id 1) for the missing-field
marker, which always encodes to that single id.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

UNK = "<unk>"
NAN_TOKEN = "NaN"
SPECIALS = (UNK, NAN_TOKEN)
UNK_ID = 0
NAN_ID = 1

_PIECES = re.compile(r"\s|\S+")


class BpeTrainingError(ValueError):
    pass


class VocabParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class DecodeError(ValueError):
    pass


def _split_pieces(text: str) -> list[str]:
    """Whitespace characters one by one, non-whitespace as maximal runs."""
    return _PIECES.findall(text)


def count_pairs(word: list[str], counts: Counter, weight: int = 1) -> None:
    """Add the non-overlapping adjacent-pair counts of one word into ``counts``."""
    last_start: dict[tuple[str, str], int] = {}
    for i in range(len(word) - 1):
        pair = (word[i], word[i + 1])
        prev = last_start.get(pair)
        if prev is not None and prev == i - 1:
            continue
        last_start[pair] = i
        counts[pair] += weight


def merge_word(word: list[str], pair: tuple[str, str], merged: str) -> list[str]:
    a, b = pair
    out = []
    i = 0
    n = len(word)
    while i < n:
        if i < n - 1 and word[i] == a and word[i + 1] == b:
            out.append(merged)
            i += 2
        else:
            out.append(word[i])
            i += 1
    return out


@dataclass
class BpeVocab:
    """Learned base characters plus ordered merges.

    ``symbols`` holds base characters (sorted) followed by merged symbols in
    learning order; token ids are offset by the two reserved symbols.
    """

    base: list[str]
    merges: list[tuple[str, str]]
    target_size: int | None = None
    symbols: list[str] = field(init=False)
    id_of: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.symbols = list(self.base)
        seen = set(self.symbols)
        for a, b in self.merges:
            if a + b not in seen:
                seen.add(a + b)
                self.symbols.append(a + b)
        self.id_of = {}
        for i, sym in enumerate(SPECIALS):
            self.id_of[sym] = i
        for i, sym in enumerate(self.symbols):
            self.id_of.setdefault(sym, i + len(SPECIALS))
        self._ranks = {pair: r for r, pair in enumerate(self.merges)}
        self._cache: dict[str, tuple[int, ...]] = {}

    @property
    def size(self) -> int:
        """Rows needed in an embedding table (reserved + learned symbols)."""
        return len(SPECIALS) + len(self.symbols)

    @property
    def nan_id(self) -> int:
        return NAN_ID

    def symbol(self, token_id: int) -> str:
        if token_id < len(SPECIALS):
            return SPECIALS[token_id]
        return self.symbols[token_id - len(SPECIALS)]

    def encode(self, text: str) -> list[int]:
        return encode(text, self)

    def decode(self, ids) -> str:
        return decode(ids, self)

    def _encode_word(self, word: str) -> tuple[int, ...]:
        hit = self._cache.get(word)
        if hit is not None:
            return hit
        known = self.id_of
        parts = [c if c in known else UNK for c in word]
        ranks = self._ranks
        while len(parts) > 1:
            best = None
            best_rank = None
            for i in range(len(parts) - 1):
                r = ranks.get((parts[i], parts[i + 1]))
                if r is not None and (best_rank is None or r < best_rank):
                    best_rank = r
                    best = (parts[i], parts[i + 1])
            if best is None:
                break
            parts = merge_word(parts, best, best[0] + best[1])
        ids = tuple(known[p] for p in parts)
        self._cache[word] = ids
        return ids


def train_bpe(corpus: str, target_size: int) -> BpeVocab:
    """Learn merges until the vocabulary holds ``target_size`` symbols.

    ``target_size`` counts base characters plus merges (the reserved
    symbols are extra).  The literal word ``NaN`` is reserved and excluded
    from pair counting.
    """
    if not corpus:
        raise BpeTrainingError("cannot train BPE on an empty corpus")
    base = sorted(set(corpus))
    if target_size < len(base):
        raise BpeTrainingError(
            f"target_size {target_size} is below the {len(base)} base characters of the corpus"
        )
    words = Counter(p for p in _split_pieces(corpus) if not p.isspace() and p != NAN_TOKEN)
    segmented = [(list(w), c) for w, c in sorted(words.items())]
    merges: list[tuple[str, str]] = []
    size = len(base)
    known = set(base)
    while size < target_size:
        counts: Counter = Counter()
        for word, c in segmented:
            if len(word) > 1:
                count_pairs(word, counts, c)
        if not counts:
            break
        top = max(counts.values())
        if top < 2:
            break
        pair = min(p for p, c in counts.items() if c == top)
        new = pair[0] + pair[1]
        merges.append(pair)
        segmented = [
            (merge_word(word, pair, new) if len(word) > 1 else word, c) for word, c in segmented
        ]
        if new not in known:
            known.add(new)
            size += 1
    return BpeVocab(base, merges, target_size)


def encode(text: str, vocab: BpeVocab) -> list[int]:
    """Token ids for ``text``; unseen characters become ``UNK_ID``."""
    ids: list[int] = []
    known = vocab.id_of
    for piece in _split_pieces(text):
        if piece.isspace():
            ids.append(known.get(piece, UNK_ID))
        elif piece == NAN_TOKEN:
            ids.append(NAN_ID)
        else:
            ids.extend(vocab._encode_word(piece))
    return ids


def decode(ids, vocab: BpeVocab) -> str:
    out = []
    n = vocab.size
    for i in ids:
        i = int(i)
        if i < 0 or i >= n:
            raise DecodeError(f"token id {i} outside vocabulary of size {n}")
        out.append(vocab.symbol(i))
    return "".join(out)


# ---------------------------------------------------------------------------
# files
#
# Vocab file layout, UTF-8:
#   #bpe-vocab v1
#   #target_size <N>
#   #base <json list of base characters>
#   <left> <right>        one merge per line, learned order
# Merge halves are JSON-escaped only when they contain whitespace or quotes.


def _esc(sym: str) -> str:
    if sym and not any(c.isspace() or c in '"\\' for c in sym):
        return sym
    return json.dumps(sym)


def _split_merge_line(line: str) -> list[str]:
    parts = []
    rest = line
    while rest:
        rest = rest.lstrip(" ")
        if not rest:
            break
        if rest[0] == '"':
            dec = json.JSONDecoder()
            val, end = dec.raw_decode(rest)
            parts.append(val)
            rest = rest[end:]
        else:
            head, _, rest = rest.partition(" ")
            parts.append(head)
    return parts


def save_vocab(vocab: BpeVocab, path) -> None:
    lines = ["#bpe-vocab v1"]
    if vocab.target_size is not None:
        lines.append(f"#target_size {vocab.target_size}")
    lines.append("#base " + json.dumps(vocab.base, ensure_ascii=False))
    lines.extend(f"{_esc(a)} {_esc(b)}" for a, b in vocab.merges)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_vocab(path) -> BpeVocab:
    text = Path(path).read_text(encoding="utf-8")
    base: list[str] | None = None
    target = None
    merges: list[tuple[str, str]] = []
    known: set[str] = set()
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.rstrip("\r")
        if not line:
            continue
        if line.startswith("#bpe-vocab"):
            continue
        if line.startswith("#target_size "):
            try:
                target = int(line.split(" ", 1)[1])
            except ValueError:
                raise VocabParseError("bad target_size", lineno) from None
            continue
        if line.startswith("#base "):
            try:
                base = json.loads(line[len("#base ") :])
            except json.JSONDecodeError as exc:
                raise VocabParseError(f"bad base symbol list ({exc.msg})", lineno) from None
            if not isinstance(base, list) or not all(isinstance(c, str) and len(c) == 1 for c in base):
                raise VocabParseError("base symbols must be single characters", lineno)
            known = set(base)
            continue
        if base is None:
            raise VocabParseError("merge listed before the #base line", lineno)
        try:
            parts = _split_merge_line(line)
        except json.JSONDecodeError:
            raise VocabParseError("unterminated quoted symbol", lineno) from None
        if len(parts) != 2:
            raise VocabParseError(f"expected 'left right', got {line!r}", lineno)
        a, b = parts
        for sym in (a, b):
            if sym not in known:
                raise VocabParseError(f"merge references unknown symbol {sym!r}", lineno)
        merges.append((a, b))
        known.add(a + b)
    if base is None:
        raise VocabParseError("missing #base line")
    return BpeVocab(base, merges, target)


class WordVocab:
    """Whitespace word tokenizer with a frequency-capped vocabulary.

    Stand-in for BPE when that component is ablated: the ``size - 2`` most
    frequent training words get ids, everything else is ``<unk>``.
    Whitespace itself produces no tokens.
    """

    def __init__(self, words: list[str], target_size: int | None = None):
        self.words = list(words)
        self.target_size = target_size
        self.id_of = {sym: i for i, sym in enumerate(SPECIALS)}
        for i, w in enumerate(self.words):
            self.id_of[w] = i + len(SPECIALS)

    @classmethod
    def train(cls, corpus: str, target_size: int) -> "WordVocab":
        counts = Counter(w for w in corpus.split() if w != NAN_TOKEN)
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return cls([w for w, _ in ranked[:target_size]], target_size)

    @property
    def size(self) -> int:
        return len(SPECIALS) + len(self.words)

    @property
    def nan_id(self) -> int:
        return NAN_ID

    def encode(self, text: str) -> list[int]:
        return [self.id_of.get(w, UNK_ID) for w in text.split()]

    def decode(self, ids) -> str:
        out = []
        for i in ids:
            i = int(i)
            if i < 0 or i >= self.size:
                raise DecodeError(f"token id {i} outside vocabulary of size {self.size}")
            out.append(SPECIALS[i] if i < len(SPECIALS) else self.words[i - len(SPECIALS)])
        return " ".join(out)

    def save(self, path) -> None:
        lines = ["#word-vocab v1"]
        if self.target_size is not None:
            lines.append(f"#target_size {self.target_size}")
        lines.extend(self.words)
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "WordVocab":
        target = None
        words = []
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").split("\n"), start=1):
            if not line or line.startswith("#word-vocab"):
                continue
            if line.startswith("#target_size "):
                target = int(line.split(" ", 1)[1])
                continue
            if any(c.isspace() for c in line):
                raise VocabParseError(f"word entry contains whitespace: {line!r}", lineno)
            words.append(line)
        return cls(words, target)


def save_tokenizer(tokenizer, path) -> None:
    if isinstance(tokenizer, WordVocab):
        tokenizer.save(path)
    else:
        save_vocab(tokenizer, path)


def load_tokenizer(path):
    """Load either vocab format, dispatching on the header line."""
    with open(path, encoding="utf-8") as fh:
        head = fh.readline()
    if head.startswith("#word-vocab"):
        return WordVocab.load(path)
    return load_vocab(path)
