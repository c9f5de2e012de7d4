"""Token distributions, divergences and lexical statistics.

All logarithms are base 2, so the Jensen-Shannon divergence lies in [0, 1] and
similarity is defined as 1 - JSD. Sums go through math.fsum.
"""
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import rel_entr

from config import TokenizerConfig
from errors import EmptyCorpus, NonPositiveAlpha, VocabMismatch
from models import TrajectoryBundle

DEFAULT_TOKENIZER = TokenizerConfig()
LN2 = math.log(2.0)


@lru_cache(maxsize=16)
def _token_re(pattern: str) -> re.Pattern:
    return re.compile(pattern)


def tokenize(text: str, config: Optional[TokenizerConfig] = None) -> List[str]:
    config = config or DEFAULT_TOKENIZER
    if config.lowercase:
        text = text.lower()
    return _token_re(config.pattern).findall(text)


def token_set(text: str, config: Optional[TokenizerConfig] = None) -> FrozenSet[str]:
    return frozenset(tokenize(text, config))


@dataclass(frozen=True)
class Vocabulary:
    tokens: Tuple[str, ...]
    index: Dict[str, int] = field(compare=False, repr=False, default_factory=dict)

    def __post_init__(self):
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary tokens must be unique")
        self.index.update({token: i for i, token in enumerate(self.tokens)})

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index


def vocab_from_tokens(token_lists: Iterable[Iterable[str]]) -> Vocabulary:
    """Vocabulary over already-tokenized segments, in lexicographic order."""
    tokens = set()
    for tokens_of_segment in token_lists:
        tokens.update(tokens_of_segment)
    if not tokens:
        raise EmptyCorpus("no tokens in any segment")
    return Vocabulary(tuple(sorted(tokens)))


def build_vocab(segments: Sequence[str], tokenizer_config: Optional[TokenizerConfig] = None) -> Vocabulary:
    return vocab_from_tokens(tokenize(segment, tokenizer_config) for segment in segments)


def trajectory_vocab(bundle: TrajectoryBundle, tokenizer: Optional[TokenizerConfig] = None) -> Vocabulary:
    """Shared vocabulary of one trajectory: skill body, memos, commands and failed test names."""
    token_lists = [tokenize(memo.raw_text, tokenizer) for memo in bundle.memos]
    token_lists += [tokenize("\n".join(a.commands), tokenizer) for a in bundle.attempts]
    token_lists += [a.failed_tests() for a in bundle.attempts]
    if bundle.skill is not None:
        token_lists.append(tokenize(bundle.skill.body_text, tokenizer))
    return vocab_from_tokens(token_lists)


@dataclass(frozen=True, eq=False)
class TokenDistribution:
    vocab: Vocabulary
    probs: np.ndarray
    alpha: float
    total_raw_count: int

    def __getitem__(self, token: str) -> float:
        return float(self.probs[self.vocab.index[token]])


def distribution_from_tokens(tokens: Iterable[str], vocab: Vocabulary, alpha: float) -> TokenDistribution:
    """Additively smoothed distribution P(w) = (c(w)+a) / (sum c + a|V|); out-of-vocab tokens are ignored."""
    if not alpha > 0:
        raise NonPositiveAlpha(f"alpha must be > 0, got {alpha}")
    if vocab.size == 0:
        raise EmptyCorpus("empty vocabulary")
    counts = np.zeros(vocab.size, dtype=np.float64)
    for token, count in Counter(tokens).items():
        position = vocab.index.get(token)
        if position is not None:
            counts[position] = count
    total = int(counts.sum())
    probs = (counts + alpha) / (total + alpha * vocab.size)
    probs.setflags(write=False)
    return TokenDistribution(vocab=vocab, probs=probs, alpha=alpha, total_raw_count=total)


def distribution(segment: str, vocab: Vocabulary, alpha: float,
                 tokenizer_config: Optional[TokenizerConfig] = None) -> TokenDistribution:
    return distribution_from_tokens(tokenize(segment, tokenizer_config), vocab, alpha)


def _check_same_vocab(p: TokenDistribution, q: TokenDistribution) -> None:
    if p.vocab is not q.vocab and p.vocab.tokens != q.vocab.tokens:
        raise VocabMismatch(f"vocabularies differ ({p.vocab.size} vs {q.vocab.size} tokens)")


def _kl_bits(p: np.ndarray, q: np.ndarray) -> float:
    return max(0.0, math.fsum(rel_entr(p, q)) / LN2)


def kl(p: TokenDistribution, q: TokenDistribution) -> float:
    """KL(p || q) in bits."""
    _check_same_vocab(p, q)
    return _kl_bits(p.probs, q.probs)


def jsd(p: TokenDistribution, q: TokenDistribution) -> float:
    """Jensen-Shannon divergence in bits, symmetric and within [0, 1]."""
    _check_same_vocab(p, q)
    m = (p.probs + q.probs) / 2.0
    value = 0.5 * _kl_bits(p.probs, m) + 0.5 * _kl_bits(q.probs, m)
    return min(1.0, value)


def similarity(p: TokenDistribution, q: TokenDistribution) -> float:
    return 1.0 - jsd(p, q)


def jaccard(a: str, b: str, config: Optional[TokenizerConfig] = None) -> float:
    """Set Jaccard over word tokens; two empty texts count as identical (1.0)."""
    return jaccard_sets(token_set(a, config), token_set(b, config))


def jaccard_sets(left: FrozenSet[str], right: FrozenSet[str]) -> float:
    union = left | right
    if not union:
        return 1.0
    return len(left & right) / len(union)


def entropy(segment: str, config: Optional[TokenizerConfig] = None) -> float:
    """Shannon entropy in bits over raw word frequencies; 0 for an empty segment."""
    counts = Counter(tokenize(segment, config))
    total = sum(counts.values())
    if total == 0:
        return 0.0
    return max(0.0, -math.fsum((c / total) * math.log2(c / total) for c in counts.values()))


def ngrams(tokens: Sequence[str], n: int) -> FrozenSet[Tuple[str, ...]]:
    return frozenset(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def ngram_novelty(prev: str, curr: str, n: int = 3, config: Optional[TokenizerConfig] = None) -> float:
    """Fraction of curr's distinct n-grams that do not occur in prev."""
    current = ngrams(tokenize(curr, config), n)
    if not current:
        return 0.0
    previous = ngrams(tokenize(prev, config), n)
    return len(current - previous) / len(current)


def lexical_density(segment: str, config: Optional[TokenizerConfig] = None) -> Optional[float]:
    tokens = tokenize(segment, config)
    if not tokens:
        return None
    return len(set(tokens)) / len(tokens)
