"""Straight-line BPE reference used as a test oracle.

Works on the raw corpus as one flat symbol list and recounts every
candidate pair from scratch each iteration by simulating the rewrite, so it
shares no code with the tokenizer under test.
"""


def _joinable(sym: str) -> bool:
    return not sym.isspace()


def pair_frequency(symbols: list[str], a: str, b: str) -> int:
    """How many times rewriting (a, b) left to right would fire."""
    n = i = 0
    while i < len(symbols) - 1:
        if symbols[i] == a and symbols[i + 1] == b and _joinable(a) and _joinable(b):
            n += 1
            i += 2
        else:
            i += 1
    return n


def rewrite(symbols: list[str], a: str, b: str) -> list[str]:
    out, i = [], 0
    while i < len(symbols):
        if i + 1 < len(symbols) and symbols[i] == a and symbols[i + 1] == b:
            out.append(a + b)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return out


def oracle_train(corpus: str, target_size: int) -> list[tuple[str, str]]:
    symbols = list(corpus)
    vocab = set(symbols)
    merges = []
    while len(vocab) < target_size:
        candidates = {
            (symbols[i], symbols[i + 1])
            for i in range(len(symbols) - 1)
            if _joinable(symbols[i]) and _joinable(symbols[i + 1])
        }
        freqs = {p: pair_frequency(symbols, *p) for p in candidates}
        if not freqs or max(freqs.values()) < 2:
            break
        top = max(freqs.values())
        a, b = sorted(p for p, f in freqs.items() if f == top)[0]
        merges.append((a, b))
        symbols = rewrite(symbols, a, b)
        vocab.add(a + b)
    return merges


def oracle_segment(text: str, merges: list[tuple[str, str]]) -> list[str]:
    """Apply every merge in learned order over the whole text."""
    symbols = list(text)
    for a, b in merges:
        symbols = rewrite(symbols, a, b)
    return symbols
