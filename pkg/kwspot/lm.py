"""lm.py: Backoff n-gram language model.


Author -- KWS team
Created on -- 3/06/24 02:10 PM

Interpolated absolute discounting, stored in ARPA backoff form: every
observed n-gram holds its fully interpolated log10 probability and every
observed context holds its interpolation mass as log10 backoff weight, so
unseen events are scored with the standard backoff recursion. Impossible
events are floored at log10 = -99.


=======  ==========  =================  ================================
Version  Date        Author             Description
=======  ==========  =================  ================================
v0.1     3/06/24     KWS team           Training, scoring.
v0.2     3/07/24     KWS team           ARPA import/export.
=======  ==========  =================  ================================
"""

import math
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Sequence, Tuple

from .constants import SENT_START, SENT_END, UNK, LOG10_FLOOR, DEFAULT_LM_ORDER, DEFAULT_DISCOUNT
from .exceptions import EmptyCorpus, BadFormat

__all__ = ['NGramLM', 'LMState', 'train', 'score_token', 'score_sequence', 'write_arpa', 'read_arpa',
           'char_tokens', 'space_tokens', 'context_mass']
LOG = logging.getLogger('LanguageModel')

LMState = Tuple[str, ...]
Ngram = Tuple[str, ...]


def _log10(value: float) -> float:
    return math.log10(value) if value > 0 else LOG10_FLOOR


def char_tokens(line: str) -> List[str]:
    """Character units of a line, whitespace removed."""
    return [char for char in line if not char.isspace()]


def space_tokens(line: str) -> List[str]:
    """Whitespace separated units, e.g. syllabified text."""
    return line.split()


@dataclass
class NGramLM:
    """Backoff n-gram model over unit strings (log10 values)."""
    order: int
    probs: Dict[Ngram, float]
    backoffs: Dict[Ngram, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.order < 1:
            raise ValueError('order must be >= 1')

    @property
    def vocab(self) -> List[str]:
        return sorted(ngram[0] for ngram in self.probs if len(ngram) == 1)

    def __contains__(self, token):
        return (token,) in self.probs

    def map_token(self, token: str) -> str:
        return token if (token,) in self.probs else UNK

    def initial_state(self, with_boundaries: bool = False) -> LMState:
        return (SENT_START,) if with_boundaries and self.order > 1 else ()

    def prob(self, context: Ngram, token: str) -> float:
        """log10 P(token | context) by backoff; ``token`` must already be mapped."""
        total = 0.0
        while context:
            value = self.probs.get(context + (token,))
            if value is not None:
                return total + value
            total += self.backoffs.get(context, 0.0)
            context = context[1:]
        return total + self.probs.get((token,), self.probs.get((UNK,), LOG10_FLOOR))

    def score_token(self, state: LMState, token: str) -> Tuple[float, LMState]:
        """log10 probability of ``token`` after ``state`` and the next state."""
        token = self.map_token(token)
        logp = self.prob(state, token)
        history = self.order - 1
        next_state = (state + (token,))[-history:] if history else ()
        return logp, next_state

    def score_sequence(self, tokens: Sequence[str], with_boundaries: bool = False) -> float:
        state = self.initial_state(with_boundaries)
        total = 0.0
        for token in tokens:
            logp, state = self.score_token(state, token)
            total += logp
        if with_boundaries:
            logp, _ = self.score_token(state, SENT_END)
            total += logp
        return total

    def count_ngrams(self) -> Dict[int, int]:
        counts = Counter(len(ngram) for ngram in self.probs)
        return {k: counts.get(k, 0) for k in range(1, self.order + 1)}


def score_token(lm: NGramLM, state: LMState, token: str) -> Tuple[float, LMState]:
    return lm.score_token(state, token)


def score_sequence(lm: NGramLM, tokens: Sequence[str], with_boundaries: bool = False) -> float:
    """
    Total log10 probability of ``tokens``.

    :param with_boundaries: wrap in <s> ... </s>; keyword scoring uses ``False``
        and starts from the empty context.
    """
    return lm.score_sequence(tokens, with_boundaries)


def context_mass(lm: NGramLM, context: Ngram) -> float:
    """Total probability mass the model gives all tokens after ``context``."""
    seen = [ngram[-1] for ngram in lm.probs if len(ngram) == len(context) + 1 and ngram[:-1] == context]
    seen = [tok for tok in seen if tok != SENT_START]
    direct = sum(10 ** lm.probs[context + (tok,)] for tok in seen)
    if not context:
        return direct
    lower = sum(10 ** lm.prob(context[1:], tok) for tok in seen)
    return direct + 10 ** lm.backoffs.get(context, 0.0) * (1.0 - lower)


def train(corpus: Iterable[str], order: int = DEFAULT_LM_ORDER, discount: float = DEFAULT_DISCOUNT,
          tokenize: Callable[[str], List[str]] = char_tokens) -> NGramLM:
    """
    Train an interpolated absolute-discounting n-gram model.

    P(w|c) = max(n(c,w) - D, 0) / n(c) + D * N1+(c) / n(c) * P(w|c'), the
    unigram level interpolated with the uniform distribution over the vocabulary
    plus <unk>. Every sentence is wrapped in <s> ... </s>.

    :param corpus: iterable of sentences
    :param order: n-gram order
    :param discount: absolute discount D in [0, 1)
    :param tokenize: sentence -> unit strings
    """
    if order < 1:
        raise ValueError('order must be >= 1')
    if not 0.0 <= discount < 1.0:
        raise ValueError('discount must be in [0, 1)')

    counts: List[Dict[Ngram, Counter]] = [defaultdict(Counter) for _ in range(order + 1)]
    num_sentences = 0
    for line in corpus:
        tokens = tokenize(line)
        if not tokens:
            continue
        num_sentences += 1
        seq = [SENT_START] + tokens + [SENT_END]
        for i in range(1, len(seq)):
            for k in range(1, order + 1):
                if i - k + 1 < 0:
                    break
                counts[k][tuple(seq[i - k + 1:i])][seq[i]] += 1

    if num_sentences == 0:
        ex = EmptyCorpus('Language model corpus holds no sentences')
        LOG.error(ex)
        raise ex

    probs: Dict[Ngram, float] = {}
    backoffs: Dict[Ngram, float] = {}
    linear: Dict[Ngram, float] = {}

    unigrams = counts[1][()]
    total = sum(unigrams.values())
    vocab = sorted(set(unigrams) | {UNK})
    gamma = discount * len(unigrams) / total
    for word in vocab:
        value = max(unigrams.get(word, 0) - discount, 0.0) / total + gamma / len(vocab)
        linear[(word,)] = value
        probs[(word,)] = _log10(value)
    probs[(SENT_START,)] = LOG10_FLOOR

    for k in range(2, order + 1):
        for context, followers in sorted(counts[k].items()):
            total = sum(followers.values())
            gamma = discount * len(followers) / total
            backoffs[context] = _log10(gamma)
            for word, count in followers.items():
                value = (count - discount) / total + gamma * linear[context[1:] + (word,)]
                linear[context + (word,)] = value
                probs[context + (word,)] = _log10(value)

    lm = NGramLM(order, probs, backoffs)
    LOG.info('Trained %d-gram model on %d sentences: %s', order, num_sentences, lm.count_ngrams())
    return lm


# -----------------------------------------------------------------------------
# ARPA
# -----------------------------------------------------------------------------

def write_arpa(lm: NGramLM, path):
    """Write ``lm`` in ARPA text format."""
    by_order = defaultdict(list)
    for ngram, logp in lm.probs.items():
        by_order[len(ngram)].append((ngram, logp))

    with open(path, 'w', encoding='utf-8') as file:
        file.write('\n\\data\\\n')
        for k in range(1, lm.order + 1):
            file.write(f'ngram {k}={len(by_order[k])}\n')
        for k in range(1, lm.order + 1):
            file.write(f'\n\\{k}-grams:\n')
            for ngram, logp in sorted(by_order[k]):
                line = f'{logp!r}\t{" ".join(ngram)}'
                if k < lm.order and ngram in lm.backoffs:
                    line += f'\t{lm.backoffs[ngram]!r}'
                file.write(line + '\n')
        file.write('\n\\end\\\n')


def _bad(path, lineno, message):
    ex = BadFormat(f'{path}:{lineno}: {message}')
    LOG.error(ex)
    return ex


def read_arpa(path) -> NGramLM:
    """Read an ARPA file; header counts must match the sections."""
    declared: Dict[int, int] = {}
    found: Dict[int, int] = defaultdict(int)
    probs: Dict[Ngram, float] = {}
    backoffs: Dict[Ngram, float] = {}
    section = None
    ended = False

    with open(path, encoding='utf-8') as file:
        for lineno, line in enumerate(file, start=1):
            line = line.strip()
            if not line:
                continue
            if ended:
                raise _bad(path, lineno, 'content after \\end\\')
            if line == '\\data\\':
                section = 'data'
            elif line == '\\end\\':
                ended = True
            elif line.startswith('\\') and line.endswith('-grams:'):
                try:
                    section = int(line[1:-len('-grams:')])
                except ValueError:
                    raise _bad(path, lineno, f'bad section header "{line}"') from None
                if section not in declared:
                    raise _bad(path, lineno, f'section {section} not declared in \\data\\')
            elif section == 'data':
                if not line.startswith('ngram ') or '=' not in line:
                    raise _bad(path, lineno, f'bad count line "{line}"')
                key, _, value = line[len('ngram '):].partition('=')
                try:
                    declared[int(key)] = int(value)
                except ValueError:
                    raise _bad(path, lineno, f'bad count line "{line}"') from None
            elif isinstance(section, int):
                fields = line.split()
                if len(fields) not in (section + 1, section + 2):
                    raise _bad(path, lineno, f'expected {section} words in "{line}"')
                ngram = tuple(fields[1:section + 1])
                try:
                    probs[ngram] = float(fields[0])
                    if len(fields) == section + 2:
                        backoffs[ngram] = float(fields[-1])
                except ValueError:
                    raise _bad(path, lineno, f'bad number in "{line}"') from None
                found[section] += 1
            else:
                raise _bad(path, lineno, 'content before \\data\\')

    if not declared:
        raise _bad(path, 0, 'missing \\data\\ section')
    if not ended:
        raise _bad(path, 0, 'missing \\end\\')
    for k, count in declared.items():
        if found.get(k, 0) != count:
            raise _bad(path, 0, f'\\data\\ declares {count} {k}-grams, found {found.get(k, 0)}')

    lm = NGramLM(max(declared), probs, backoffs)
    LOG.debug('Read ARPA model %s: %s', path, lm.count_ngrams())
    return lm
