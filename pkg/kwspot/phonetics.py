"""phonetics.py: Pinyin syllable structure and pronunciation distance.


Author -- KWS team
Created on -- 3/11/24 03:40 PM

Syllables are split into initial, final and tone. Two syllables differ by
the sum of an initial cost, a final cost and a tone cost from a ``CostTable``;
phrases differ by a Levenshtein distance over syllables, normalized by the
longer length.


=======  ==========  =================  ================================
Version  Date        Author             Description
=======  ==========  =================  ================================

"""

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import FrozenSet, List, NamedTuple, Sequence, Tuple

from .exceptions import BadSyllable, ConfigError
from ._utils import get_file_loader

__all__ = ['INITIALS', 'Syllable', 'CostTable', 'parse_syllable', 'syllable_distance', 'phrase_distance',
           'load_cost_table']
LOG = logging.getLogger('Phonetics')

# two-letter initials first so longest match wins
INITIALS = ('zh', 'ch', 'sh', 'b', 'p', 'm', 'f', 'd', 't', 'n', 'l', 'g', 'k', 'h', 'j', 'q', 'x', 'r', 'z',
            'c', 's', 'y', 'w')


class Syllable(NamedTuple):
    initial: str
    final: str
    tone: int


@lru_cache(maxsize=None)
def parse_syllable(text: str) -> Syllable:
    """Split 'zhong1' into ('zh', 'ong', 1); tone 0 is neutral."""
    if not text or not text[-1].isdigit() or not 0 <= int(text[-1]) <= 4:
        raise BadSyllable(f'Syllable "{text}" has no tone digit 0-4')
    body, tone = text[:-1].lower(), int(text[-1])
    initial = next((ini for ini in INITIALS if body.startswith(ini)), '')
    final = body[len(initial):]
    if not final or not final.isalpha():
        raise BadSyllable(f'Syllable "{text}" has no final')
    return Syllable(initial, final, tone)


def _groups(pairs):
    return tuple((frozenset(members), float(cost)) for members, cost in pairs)


@dataclass(frozen=True)
class CostTable:
    """Substitution costs for pinyin components.

    Members of one confusion group substitute at the group cost, any other
    pair at ``substitution``.
    """
    initial_groups: Tuple[Tuple[FrozenSet[str], float], ...] = field(default_factory=lambda: _groups([
        (('zh', 'z'), 0.5), (('ch', 'c'), 0.5), (('sh', 's'), 0.5), (('n', 'l'), 0.5), (('f', 'h'), 0.5)]))
    final_groups: Tuple[Tuple[FrozenSet[str], float], ...] = field(default_factory=lambda: _groups([
        (('in', 'ing'), 0.5), (('en', 'eng'), 0.5), (('an', 'ang'), 0.5)]))
    tone_cost: float = 0.2
    substitution: float = 1.0
    indel: float = 1.0

    def __post_init__(self):
        costs = [self.tone_cost, self.substitution, self.indel]
        costs += [cost for _, cost in self.initial_groups + self.final_groups]
        if any(cost < 0 for cost in costs):
            raise ValueError('costs must be >= 0')

    def _pair(self, groups, a: str, b: str) -> float:
        if a == b:
            return 0.0
        best = self.substitution
        for members, cost in groups:
            if a in members and b in members:
                best = min(best, cost)
        return best

    def initial_cost(self, a: str, b: str) -> float:
        return self._pair(self.initial_groups, a, b)

    def final_cost(self, a: str, b: str) -> float:
        return self._pair(self.final_groups, a, b)


def load_cost_table(path) -> CostTable:
    """
    Read a cost table from a JSON/JSON5/YAML file with the sections::

        initial_groups: {"zh z": 0.5, ...}
        final_groups:   {"in ing": 0.5, ...}
        costs:          {tone: 0.2, substitution: 1.0, indel: 1.0}

    Missing sections keep their defaults.
    """
    path = Path(path)
    with open(path, encoding='utf-8') as file:
        doc = get_file_loader(path.suffix)(file.read()) or {}

    defaults = CostTable()
    try:
        initial = _groups((key.split(), cost) for key, cost in doc['initial_groups'].items()) \
            if 'initial_groups' in doc else defaults.initial_groups
        final = _groups((key.split(), cost) for key, cost in doc['final_groups'].items()) \
            if 'final_groups' in doc else defaults.final_groups
        costs = doc.get('costs', {})
        table = CostTable(initial, final, float(costs.get('tone', defaults.tone_cost)),
                          float(costs.get('substitution', defaults.substitution)),
                          float(costs.get('indel', defaults.indel)))
    except (AttributeError, TypeError, ValueError) as err:
        ex = ConfigError(f'Invalid cost table {path}: {err}')
        LOG.error(ex)
        raise ex from err
    LOG.debug('Loaded cost table %s', path)
    return table


def syllable_distance(a: Syllable, b: Syllable, costs: CostTable) -> float:
    """Initial cost + final cost + tone cost; 0 for identical syllables."""
    dist = costs.initial_cost(a.initial, b.initial) + costs.final_cost(a.final, b.final)
    if a.tone != b.tone:
        dist += costs.tone_cost
    return dist


def phrase_distance(first: Sequence[Syllable], second: Sequence[Syllable], costs: CostTable) -> float:
    """
    Levenshtein distance over syllables divided by the longer length.

    Substitutions cost ``syllable_distance``, insertions and deletions
    ``costs.indel``. Two empty phrases are at distance 0.
    """
    longest = max(len(first), len(second))
    if longest == 0:
        return 0.0

    prev: List[float] = [j * costs.indel for j in range(len(second) + 1)]
    for i, syl_a in enumerate(first, start=1):
        cur = [i * costs.indel]
        for j, syl_b in enumerate(second, start=1):
            sub = syllable_distance(syl_a, syl_b, costs)
            cur.append(min(prev[j - 1] + sub, prev[j] + costs.indel, cur[j - 1] + costs.indel))
        prev = cur
    return prev[-1] / longest
