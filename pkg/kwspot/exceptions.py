"""exceptions.py: Error hierarchy of kwspot.


Author -- KWS team
Created on -- 3/02/24 09:40 AM

Every domain error derives from ``KwsError``. The CLI maps I/O-type errors
(``BadFormat``, ``ConfigError``) to exit code 2 and all others to 1.


=======  ==========  =================  ================================
Version  Date        Author             Description
=======  ==========  =================  ================================

"""

__all__ = ['KwsError', 'ConfigError', 'DuplicateUnit', 'EmptyUnitSet', 'OutOfVocabulary', 'BadFormat',
           'InvalidTranscript', 'AlignmentInfeasible', 'EmptyCorpus', 'InvalidKeyword', 'UnitSetMismatch',
           'BadSyllable', 'NoScorableKeywords']


class KwsError(Exception):
    """Base class of all kwspot errors."""


class ConfigError(KwsError):
    """Invalid or incomplete configuration."""


class DuplicateUnit(KwsError):
    """A unit appears twice in a unit inventory."""


class EmptyUnitSet(KwsError):
    """A unit inventory file holds no units."""


class OutOfVocabulary(KwsError):
    """A character or syllable is missing from a unit set or lexicon."""

    def __init__(self, unit, position=None):
        self.unit = unit
        self.position = position
        where = '' if position is None else f' at position {position}'
        super().__init__(f'Unit "{unit}"{where} is out of vocabulary')


class BadFormat(KwsError):
    """A file does not follow its declared format."""


class InvalidTranscript(KwsError):
    """A transcript cannot be synthesized (e.g. contains the blank unit)."""


class AlignmentInfeasible(KwsError):
    """A label sequence cannot be aligned to the given number of frames."""


class EmptyCorpus(KwsError):
    """A language model corpus holds no sentences."""


class InvalidKeyword(KwsError):
    """A keyword is empty or contains the blank unit."""


class UnitSetMismatch(KwsError):
    """Artifacts were built over different unit inventories."""


class BadSyllable(KwsError):
    """A pinyin syllable string cannot be parsed."""


class NoScorableKeywords(KwsError):
    """No keyword has reference occurrences; ATWV is undefined."""
