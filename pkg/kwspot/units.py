"""units.py: Unit inventories, lexicon and tokenization.


Author -- KWS team
Created on -- 3/04/24 08:30 AM

Character and syllable unit sets (blank ``<blk>`` always at index 0), the
character-to-pinyin lexicon, and the text tokenization shared by all stages.
Polyphonic characters keep all pronunciations; syllabification always uses the
first (primary) one.


=======  ==========  =================  ================================
Version  Date        Author             Description
=======  ==========  =================  ================================
v0.1     3/04/24     KWS team           Unit sets, lexicon, tokenization.
v0.2     4/02/24     KWS team           Keep a listed blank on write.
=======  ==========  =================  ================================
"""

import enum
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .constants import BLANK, BLANK_INDEX, COMMENT_PREFIX
from .exceptions import DuplicateUnit, EmptyUnitSet, OutOfVocabulary, BadFormat
from ._utils import read_tsv, write_tsv

__all__ = ['UnitKind', 'UnitSet', 'Lexicon', 'load_unit_set', 'write_unit_set', 'load_lexicon', 'write_lexicon',
           'tokenize_chars', 'detokenize', 'syllabify', 'syllable_strings']
LOG = logging.getLogger('Units')


class UnitKind(str, enum.Enum):
    CHARACTER = 'character'
    SYLLABLE = 'syllable'


@dataclass(frozen=True)
class UnitSet:
    """Ordered unit inventory; unit 0 is the blank.

    ``blank_listed`` records whether the source listed the blank explicitly.
    """
    id: str
    kind: UnitKind
    units: Tuple[str, ...]
    blank_listed: bool = field(default=False, compare=False)
    _index: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.units or self.units[0] != BLANK:
            raise BadFormat(f'Unit set {self.id}: unit 0 must be {BLANK}')
        if len(self.units) < 2:
            raise EmptyUnitSet(f'Unit set {self.id} holds no units besides the blank')
        index = {}
        for i, unit in enumerate(self.units):
            if not unit:
                raise BadFormat(f'Unit set {self.id}: empty unit at index {i}')
            if unit in index:
                raise DuplicateUnit(f'Unit set {self.id}: duplicate unit "{unit}"')
            index[unit] = i
        object.__setattr__(self, '_index', index)

    @classmethod
    def from_units(cls, set_id: str, kind: UnitKind, units: Sequence[str]):
        """Build a unit set from a unit list, prepending the blank if missing."""
        units = tuple(units)
        if not units:
            raise EmptyUnitSet(f'Unit set {set_id} is empty')
        listed = units[0] == BLANK
        if not listed:
            units = (BLANK,) + units
        return cls(set_id, UnitKind(kind), units, listed)

    @property
    def blank_index(self) -> int:
        return BLANK_INDEX

    def __len__(self):
        return len(self.units)

    def __contains__(self, unit):
        return unit in self._index

    def index(self, unit: str) -> int:
        """Id of a unit string; raises ``OutOfVocabulary``."""
        try:
            return self._index[unit]
        except KeyError:
            raise OutOfVocabulary(unit) from None

    def unit(self, idx: int) -> str:
        return self.units[idx]

    def ids(self, units: Sequence[str]) -> List[int]:
        return [self.index(u) for u in units]

    def strings(self, ids: Sequence[int]) -> List[str]:
        return [self.units[i] for i in ids]


def load_unit_set(path, kind=UnitKind.CHARACTER, set_id: Optional[str] = None) -> UnitSet:
    """
    Read a unit inventory file: UTF-8, one unit per line, '#' starts a comment line.

    :param path: unit set file
    :param kind: character or syllable inventory
    :param set_id: id of the set, defaults to the file stem
    :return: ``UnitSet`` with the blank at index 0
    """
    path = Path(path)
    units = []
    with open(path, encoding='utf-8') as file:
        for line in file:
            unit = line.strip()
            if not unit or unit.startswith(COMMENT_PREFIX):
                continue
            units.append(unit)

    if not units:
        ex = EmptyUnitSet(f'Unit set file {path} is empty')
        LOG.error(ex)
        raise ex

    if BLANK in units[1:]:
        ex = BadFormat(f'{path}: {BLANK} may only appear on the first line')
        LOG.error(ex)
        raise ex

    seen = set()
    for unit in units:
        if unit in seen:
            ex = DuplicateUnit(f'{path}: duplicate unit "{unit}"')
            LOG.error(ex)
            raise ex
        seen.add(unit)

    unit_set = UnitSet.from_units(set_id or path.stem, kind, units)
    LOG.debug('Loaded %s unit set %s with %d units', unit_set.kind.value, unit_set.id, len(unit_set))
    return unit_set


def write_unit_set(unit_set: UnitSet, path):
    """Write a unit set without comments; the blank is written only if the source listed it."""
    with open(path, 'w', encoding='utf-8') as file:
        for unit in unit_set.units[0 if unit_set.blank_listed else 1:]:
            file.write(unit + '\n')


@dataclass(frozen=True)
class Lexicon:
    """Character -> pronunciations (pinyin with tone digit); the first one is primary."""
    entries: Dict[str, Tuple[str, ...]]

    def __contains__(self, char):
        return char in self.entries

    def primary(self, char: str) -> str:
        try:
            return self.entries[char][0]
        except KeyError:
            raise OutOfVocabulary(char) from None

    def syllables(self) -> List[str]:
        """All syllables referenced by any pronunciation, first-seen order."""
        seen = {}
        for prons in self.entries.values():
            for syll in prons:
                seen.setdefault(syll, None)
        return list(seen)

    def validate(self, char_set: UnitSet, syll_set: UnitSet):
        """Check every key is a character unit and every syllable a syllable unit."""
        for char, prons in self.entries.items():
            if char not in char_set:
                raise OutOfVocabulary(char)
            for syll in prons:
                if syll not in syll_set:
                    raise OutOfVocabulary(syll)


def load_lexicon(path) -> Lexicon:
    """Read a lexicon TSV: ``char<TAB>syll1[ syll2 ...]``."""
    entries = {}
    for lineno, row in read_tsv(path, 2):
        char, prons = row[0].strip(), tuple(row[1].split())
        if not char or not prons:
            ex = BadFormat(f'{path}:{lineno}: empty lexicon entry')
            LOG.error(ex)
            raise ex
        if char in entries:
            LOG.warning('%s:%d: duplicate entry for "%s" appended', path, lineno, char)
            prons = entries[char] + tuple(p for p in prons if p not in entries[char])
        entries[char] = prons
    LOG.debug('Loaded lexicon %s with %d entries', path, len(entries))
    return Lexicon(entries)


def write_lexicon(lexicon: Lexicon, path):
    write_tsv(path, ([char, ' '.join(prons)] for char, prons in lexicon.entries.items()))


def tokenize_chars(text: str, unit_set: UnitSet) -> List[int]:
    """
    One unit id per Unicode scalar of ``text``; whitespace is skipped.

    :raises OutOfVocabulary: with the character and its position in ``text``
    """
    ids = []
    for position, char in enumerate(text):
        if char.isspace():
            continue
        if char not in unit_set:
            raise OutOfVocabulary(char, position)
        ids.append(unit_set.index(char))
    return ids


def detokenize(ids: Sequence[int], unit_set: UnitSet, sep: str = '') -> str:
    return sep.join(unit_set.strings(ids))


def syllable_strings(text: str, lexicon: Lexicon) -> List[str]:
    """Primary pronunciation of every non-whitespace character of ``text``."""
    sylls = []
    for position, char in enumerate(text):
        if char.isspace():
            continue
        if char not in lexicon:
            raise OutOfVocabulary(char, position)
        sylls.append(lexicon.primary(char))
    return sylls


def syllabify(text: str, lexicon: Lexicon, syll_set: UnitSet) -> List[int]:
    """Syllable unit ids of the primary pronunciations of ``text``."""
    return syll_set.ids(syllable_strings(text, lexicon))
