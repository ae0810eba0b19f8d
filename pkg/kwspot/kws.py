"""kws.py: Keyword matching over N-best lists and CTC confidence scoring.


Author -- KWS team
Created on -- 3/12/24 09:00 AM

Keywords are searched in the character and syllable N-best lists (exact
matching) and, phonetically, in the character N-best list (fuzzy matching).
Every candidate is scored with the CTC forward algorithm over a window around
the matched tokens, normalized by keyword length in the log domain and merged
across stages: of two overlapping hits for one keyword the higher score stays.


=======  ==========  =================  ================================
Version  Date        Author             Description
=======  ==========  =================  ================================
v0.1     3/12/24     KWS team           Exact matching, forward scoring.
v0.2     3/13/24     KWS team           Fuzzy matching, stage merge.
=======  ==========  =================  ================================
"""

import enum
import math
import logging
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .constants import BLANK_INDEX, DEFAULT_FUZZY_THRESHOLD, DEFAULT_DECISION_THRESHOLD, DEFAULT_WINDOW_PAD
from .decoder import NBestEntry
from .exceptions import AlignmentInfeasible, InvalidKeyword, OutOfVocabulary, BadFormat, BadSyllable
from .phonetics import CostTable, Syllable, parse_syllable, phrase_distance
from .posteriorgram import Posteriorgram, TokenSpan, expand_labels, min_frames, _skip_mask
from .units import Lexicon, UnitSet, tokenize_chars, syllabify, syllable_strings
from ._utils import read_tsv, write_tsv

__all__ = ['Stage', 'Keyword', 'Hit', 'KwsConfig', 'Match', 'make_keyword', 'load_keywords', 'write_keywords',
           'match_exact', 'match_fuzzy', 'score_ctc', 'locate_window', 'normalize', 'merge_stages', 'detect',
           'write_hits', 'read_hits']
LOG = logging.getLogger('KWS')


class Stage(str, enum.Enum):
    CHAR = 'char'
    SYLLABLE = 'syllable'
    FUZZY = 'fuzzy'


_STAGE_ORDER = {Stage.CHAR: 0, Stage.SYLLABLE: 1, Stage.FUZZY: 2}


@dataclass(frozen=True)
class Keyword:
    id: str
    text: str
    char_units: Tuple[int, ...]
    syll_units: Tuple[int, ...]

    def __post_init__(self):
        if not self.char_units:
            raise InvalidKeyword(f'Keyword {self.id} is empty')
        if len(self.syll_units) != len(self.char_units):
            raise InvalidKeyword(f'Keyword {self.id}: {len(self.char_units)} characters but '
                                 f'{len(self.syll_units)} syllables')


def make_keyword(kw_id: str, text: str, char_set: UnitSet, lexicon: Lexicon, syll_set: UnitSet) -> Keyword:
    return Keyword(kw_id, text, tuple(tokenize_chars(text, char_set)), tuple(syllabify(text, lexicon, syll_set)))


def load_keywords(path, char_set: UnitSet, lexicon: Lexicon, syll_set: UnitSet) -> List[Keyword]:
    """Read a keyword list TSV ``kw_id<TAB>keyword_text``."""
    keywords = []
    seen = set()
    for lineno, row in read_tsv(path, 2):
        kw_id, text = row[0].strip(), row[1].strip()
        if kw_id in seen:
            ex = BadFormat(f'{path}:{lineno}: duplicate keyword id {kw_id}')
            LOG.error(ex)
            raise ex
        seen.add(kw_id)
        try:
            keywords.append(make_keyword(kw_id, text, char_set, lexicon, syll_set))
        except OutOfVocabulary as ex:
            LOG.error('%s:%d: keyword %s: %s', path, lineno, kw_id, ex)
            raise
    LOG.debug('Loaded %d keywords from %s', len(keywords), path)
    return keywords


def write_keywords(keywords: Iterable[Keyword], path):
    write_tsv(path, ([kw.id, kw.text] for kw in keywords))


@dataclass
class Hit:
    """A detected keyword occurrence; frames are the matched tokens' aligned span."""
    utt_id: str
    kw_id: str
    stage: Stage
    start_frame: int
    end_frame: int
    start_s: float
    end_s: float
    raw_log_S: float
    norm_score: float
    hyp_rank: int
    decision: bool

    @property
    def mid_s(self) -> float:
        return 0.5 * (self.start_s + self.end_s)

    def as_row(self) -> List[str]:
        return [self.utt_id, self.kw_id, f'{self.start_s:.6f}', f'{self.end_s:.6f}', f'{self.norm_score:.6f}',
                '1' if self.decision else '0', self.stage.value]


@dataclass
class KwsConfig:
    """Matching and decision parameters.

    ``nbest_matching`` false restricts matching to the best hypothesis,
    ``length_norm`` false uses the raw log score as confidence.
    """
    fuzzy_threshold: float = DEFAULT_FUZZY_THRESHOLD
    decision_threshold: float = DEFAULT_DECISION_THRESHOLD
    window_pad: int = DEFAULT_WINDOW_PAD
    stages_enabled: FrozenSet[Stage] = field(default_factory=lambda: frozenset(Stage))
    nbest_matching: bool = True
    length_norm: bool = True

    def __post_init__(self):
        if not 0.0 <= self.fuzzy_threshold <= 1.0:
            raise ValueError('fuzzy_threshold must be in [0, 1]')
        if self.window_pad < 0:
            raise ValueError('window_pad must be >= 0')
        self.stages_enabled = frozenset(Stage(s) for s in self.stages_enabled)


class Match(NamedTuple):
    hyp_rank: int
    start: int
    end: int
    distance: float = 0.0


# -----------------------------------------------------------------------------
# matching
# -----------------------------------------------------------------------------

def _occurrences(tokens: Sequence[int], units: Sequence[int]) -> Iterable[int]:
    size = len(units)
    first = units[0]
    for start in range(len(tokens) - size + 1):
        if tokens[start] == first and tuple(tokens[start:start + size]) == tuple(units):
            yield start


def match_exact(nbest: Sequence[NBestEntry], units: Sequence[int]) -> List[Match]:
    """Every contiguous occurrence of ``units`` in every hypothesis (rank 0 = best)."""
    units = tuple(units)
    if not units:
        return []
    return [Match(rank, start, start + len(units))
            for rank, entry in enumerate(nbest) for start in _occurrences(entry.tokens, units)]


class _SyllableCache:
    """Parsed primary syllable of every character unit, ``None`` where unknown."""

    def __init__(self, lexicon: Lexicon, char_set: UnitSet):
        self.lexicon = lexicon
        self.char_set = char_set
        self._cache: Dict[int, Optional[Syllable]] = {}

    def __call__(self, unit: int) -> Optional[Syllable]:
        if unit not in self._cache:
            char = self.char_set.unit(unit)
            try:
                self._cache[unit] = parse_syllable(self.lexicon.primary(char))
            except (OutOfVocabulary, BadSyllable):
                LOG.debug('No usable pronunciation for "%s"', char)
                self._cache[unit] = None
        return self._cache[unit]


def match_fuzzy(nbest: Sequence[NBestEntry], keyword: Keyword, lexicon: Lexicon, char_set: UnitSet,
                costs: CostTable, threshold: float, syllables: Optional[_SyllableCache] = None) -> List[Match]:
    """
    Windows of ``len(keyword)`` characters whose pronunciation is closer than
    ``threshold`` (normalized phrase distance) to the keyword. Windows spelling
    the keyword exactly are left to ``match_exact``.
    """
    syllables = syllables or _SyllableCache(lexicon, char_set)
    target = [parse_syllable(s) for s in syllable_strings(keyword.text, lexicon)]
    size = len(keyword.char_units)
    distances: Dict[Tuple[int, ...], Optional[float]] = {}
    matches = []
    for rank, entry in enumerate(nbest):
        tokens = entry.tokens
        for start in range(len(tokens) - size + 1):
            window = tuple(tokens[start:start + size])
            if window == keyword.char_units:
                continue
            if window not in distances:
                sylls = [syllables(u) for u in window]
                distances[window] = None if None in sylls else phrase_distance(sylls, target, costs)
            dist = distances[window]
            if dist is not None and dist < threshold:
                matches.append(Match(rank, start, start + size, dist))
    return matches


# -----------------------------------------------------------------------------
# scoring
# -----------------------------------------------------------------------------

def score_ctc(pg: Posteriorgram, units: Sequence[int], window: Tuple[int, int]) -> float:
    """
    Natural log of the total probability of all paths over the window frames
    that collapse exactly to ``units`` (CTC forward algorithm).

    :raises AlignmentInfeasible: if the window is shorter than ``units`` need
    """
    units = list(units)
    if not units:
        raise InvalidKeyword('Cannot score an empty unit sequence')
    start, end = window
    if not 0 <= start <= end <= pg.num_frames:
        raise ValueError(f'Window {window} outside posteriorgram of {pg.num_frames} frames')
    if end - start < min_frames(units):
        ex = AlignmentInfeasible(f'{pg.utt_id}: window {window} too short for {len(units)} units')
        LOG.debug(ex)
        raise ex

    ext = expand_labels(units, BLANK_INDEX)
    emit = pg.logp[start:end].astype(np.float64)[:, ext]
    skip = _skip_mask(ext, BLANK_INDEX)

    alpha = np.full(len(ext), -np.inf)
    alpha[:2] = emit[0, :2]
    with np.errstate(invalid='ignore'):
        for t in range(1, end - start):
            step = np.concatenate(([-np.inf], alpha[:-1]))
            jump = np.where(skip, np.concatenate(([-np.inf, -np.inf], alpha[:-2])), -np.inf)
            alpha = np.logaddexp(np.logaddexp(alpha, step), jump) + emit[t]
    return float(np.logaddexp(alpha[-1], alpha[-2]))


def locate_window(start_tok: int, end_tok: int, spans: Sequence[TokenSpan], pad: int,
                  num_frames: int) -> Tuple[int, int]:
    """Frames from the first matched token's start - pad to the last one's end + pad, clamped."""
    first, last = spans[start_tok], spans[end_tok - 1]
    return max(first.start_frame - pad, 0), min(last.end_frame + pad, num_frames)


def normalize(raw_log_S: float, length: int) -> float:
    """Length-normalized confidence: log S / length (per-unit log score)."""
    if length < 1:
        raise ValueError('length must be >= 1')
    return raw_log_S / length


def _overlap(a: Hit, b: Hit) -> bool:
    return min(a.end_frame, b.end_frame) - max(a.start_frame, b.start_frame) > 0


def merge_stages(hits: Iterable[Hit]) -> List[Hit]:
    """
    Per (utterance, keyword) keep the best of every group of overlapping hits;
    non-overlapping occurrences all stay.
    """
    groups: Dict[Tuple[str, str], List[Hit]] = {}
    for hit in hits:
        groups.setdefault((hit.utt_id, hit.kw_id), []).append(hit)

    merged = []
    for group in groups.values():
        kept: List[Hit] = []
        for hit in sorted(group, key=lambda h: (-h.norm_score, _STAGE_ORDER[h.stage], h.start_frame, h.hyp_rank)):
            if not any(_overlap(hit, other) for other in kept):
                kept.append(hit)
        merged.extend(kept)
    return sorted(merged, key=lambda h: (h.utt_id, h.kw_id, h.start_frame, h.end_frame))


class _Candidate(NamedTuple):
    stage: Stage
    keyword: Keyword
    match: Match
    units: Tuple[int, ...]
    pg: Posteriorgram
    nbest: Sequence[NBestEntry]


def detect(utt_id: str, pg_char: Posteriorgram, nbest_char: Sequence[NBestEntry], keywords: Sequence[Keyword],
           lexicon: Lexicon, char_set: UnitSet, costs: CostTable, cfg: KwsConfig,
           pg_syll: Optional[Posteriorgram] = None, nbest_syll: Optional[Sequence[NBestEntry]] = None) -> List[Hit]:
    """
    Match, score, normalize and merge keyword hits of one utterance.

    Exact matching runs on both stages, fuzzy matching on the character stage;
    fuzzy candidates are scored with the keyword's own characters. The syllable
    stage is skipped when its posteriorgram or N-best list is missing.
    """
    char_hyps = list(nbest_char if cfg.nbest_matching else nbest_char[:1])
    syll_hyps = None
    if Stage.SYLLABLE in cfg.stages_enabled and pg_syll is not None and nbest_syll is not None:
        syll_hyps = list(nbest_syll if cfg.nbest_matching else nbest_syll[:1])

    syllables = _SyllableCache(lexicon, char_set)
    candidates: List[_Candidate] = []
    for kw in keywords:
        if Stage.CHAR in cfg.stages_enabled:
            candidates += [_Candidate(Stage.CHAR, kw, m, kw.char_units, pg_char, char_hyps)
                           for m in match_exact(char_hyps, kw.char_units)]
        if syll_hyps is not None:
            candidates += [_Candidate(Stage.SYLLABLE, kw, m, kw.syll_units, pg_syll, syll_hyps)
                           for m in match_exact(syll_hyps, kw.syll_units)]
        if Stage.FUZZY in cfg.stages_enabled:
            candidates += [_Candidate(Stage.FUZZY, kw, m, kw.char_units, pg_char, char_hyps)
                           for m in match_fuzzy(char_hyps, kw, lexicon, char_set, costs, cfg.fuzzy_threshold,
                                                syllables)]

    scores: Dict[Tuple[int, Tuple[int, ...], int, int], float] = {}
    hits = []
    for cand in candidates:
        spans = cand.nbest[cand.match.hyp_rank].spans
        window = locate_window(cand.match.start, cand.match.end, spans, cfg.window_pad, cand.pg.num_frames)
        key = (id(cand.pg), cand.units) + window
        if key not in scores:
            try:
                scores[key] = score_ctc(cand.pg, cand.units, window)
            except AlignmentInfeasible:
                LOG.warning('%s: cannot score %s (%s) in window %s', utt_id, cand.keyword.id, cand.stage.value,
                            window)
                scores[key] = None
        raw = scores[key]
        if raw is None:
            continue
        norm = normalize(raw, len(cand.units)) if cfg.length_norm else raw
        start_frame = spans[cand.match.start].start_frame
        end_frame = spans[cand.match.end - 1].end_frame
        hits.append(Hit(utt_id, cand.keyword.id, cand.stage, start_frame, end_frame,
                        cand.pg.frame_time(start_frame), cand.pg.frame_time(end_frame), raw, norm,
                        cand.match.hyp_rank, norm >= cfg.decision_threshold))

    merged = merge_stages(hits)
    LOG.debug('%s: %d candidates, %d hits after merge', utt_id, len(hits), len(merged))
    return merged


def write_hits(hits: Iterable[Hit], path):
    """Hit TSV: utt_id, kw_id, start_s, end_s, norm_score, decision (0|1), stage."""
    write_tsv(path, (hit.as_row() for hit in hits))


def read_hits(path) -> List[Hit]:
    """Read a hit TSV; frame spans and raw scores are not stored and come back as -1 / norm_score."""
    hits = []
    for lineno, row in read_tsv(path, 7):
        try:
            start_s, end_s, norm = float(row[2]), float(row[3]), float(row[4])
            stage = Stage(row[6])
            if row[5] not in ('0', '1') or not math.isfinite(norm):
                raise ValueError(f'bad decision/score {row[5]}/{row[4]}')
        except ValueError as err:
            ex = BadFormat(f'{path}:{lineno}: {err}')
            LOG.error(ex)
            raise ex from err
        hits.append(Hit(row[0], row[1], stage, -1, -1, start_s, end_s, norm, norm, -1, row[5] == '1'))
    return hits
