"""evaluation.py: Scoring of keyword hits against reference occurrences.


Author -- KWS team
Created on -- 3/15/24 02:30 PM

Hits are aligned one-to-one with reference occurrences of the same keyword in
the same utterance (best scores first). The alignment feeds precision, recall
and F1 over all occurrences and the actual term-weighted value (ATWV): the mean
over keywords with references of 1 - P_miss - beta * P_fa, where the number of
non-target trials is the amount of speech in seconds minus the true count.


=======  ==========  =================  ================================
Version  Date        Author             Description
=======  ==========  =================  ================================
v0.1     3/15/24     KWS team           Alignment, F1 and ATWV.
v0.2     3/18/24     KWS team           Threshold sweep and JSON report.
=======  ==========  =================  ================================
"""

import math
import logging
from dataclasses import dataclass, asdict
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .constants import DEFAULT_ATWV_BETA, SWEEP_POINTS
from .exceptions import BadFormat, ConfigError, NoScorableKeywords
from .kws import Hit
from ._utils import read_tsv, write_tsv

__all__ = ['RefOccurrence', 'EvalConfig', 'Alignment', 'KeywordTWV', 'SweepPoint', 'align_hits', 'f1',
           'term_weighted_values', 'atwv', 'keyword_recall', 'threshold_sweep', 'eval_report', 'read_refs',
           'write_refs']
LOG = logging.getLogger('Eval')

OVERLAP_RULES = ('midpoint', 'fraction')


@dataclass(frozen=True)
class RefOccurrence:
    utt_id: str
    kw_id: str
    start_s: float
    end_s: float

    def __post_init__(self):
        if not self.start_s < self.end_s:
            raise ValueError(f'Reference {self.utt_id}/{self.kw_id}: start {self.start_s} >= end {self.end_s}')


@dataclass
class EvalConfig:
    """Scoring parameters.

    ``overlap`` selects the alignment rule: ``midpoint`` (hit midpoint inside
    the reference span) or ``fraction`` (at least ``min_overlap`` of the
    reference span covered by the hit).
    """
    atwv_beta: float = DEFAULT_ATWV_BETA
    total_speech_s: Optional[float] = None
    overlap: str = 'midpoint'
    min_overlap: float = 0.5

    def __post_init__(self):
        if self.atwv_beta <= 0:
            raise ValueError('atwv_beta must be > 0')
        if self.total_speech_s is not None and self.total_speech_s <= 0:
            raise ValueError('total_speech_s must be > 0')
        if self.overlap not in OVERLAP_RULES:
            raise ValueError(f'overlap must be one of {", ".join(OVERLAP_RULES)}')
        if not 0.0 < self.min_overlap <= 1.0:
            raise ValueError('min_overlap must be in (0, 1]')


class Alignment(NamedTuple):
    tp: List[Tuple[Hit, RefOccurrence]]
    fp: List[Hit]
    fn: List[RefOccurrence]

    @property
    def counts(self) -> Tuple[int, int, int]:
        return len(self.tp), len(self.fp), len(self.fn)


def _is_match(hit: Hit, ref: RefOccurrence, cfg: EvalConfig) -> bool:
    if cfg.overlap == 'midpoint':
        return ref.start_s <= hit.mid_s <= ref.end_s
    covered = min(hit.end_s, ref.end_s) - max(hit.start_s, ref.start_s)
    return covered >= cfg.min_overlap * (ref.end_s - ref.start_s)


def _hit_order(hit: Hit):
    return -hit.norm_score, hit.start_s, hit.end_s, hit.stage.value


def _align(hits: Iterable[Hit], refs: Iterable[RefOccurrence], cfg: EvalConfig) -> Alignment:
    groups: Dict[Tuple[str, str], Tuple[List[Hit], List[RefOccurrence]]] = {}
    for hit in hits:
        groups.setdefault((hit.utt_id, hit.kw_id), ([], []))[0].append(hit)
    for ref in refs:
        groups.setdefault((ref.utt_id, ref.kw_id), ([], []))[1].append(ref)

    tp, fp, fn = [], [], []
    for key in sorted(groups):
        group_hits, group_refs = groups[key]
        free = sorted(group_refs, key=lambda r: (r.start_s, r.end_s))
        for hit in sorted(group_hits, key=_hit_order):
            candidates = [ref for ref in free if _is_match(hit, ref, cfg)]
            if not candidates:
                fp.append(hit)
                continue
            ref = min(candidates, key=lambda r: (abs(0.5 * (r.start_s + r.end_s) - hit.mid_s), r.start_s))
            free.remove(ref)
            tp.append((hit, ref))
        fn.extend(free)
    return Alignment(tp, fp, fn)


def align_hits(hits: Iterable[Hit], refs: Iterable[RefOccurrence], cfg: Optional[EvalConfig] = None) -> Alignment:
    """
    Greedy one-to-one alignment of the decision-true hits with the references,
    per utterance and keyword, in descending hit score.

    :return: matched (hit, ref) pairs, unmatched hits (FP), unmatched refs (FN)
    """
    return _align((hit for hit in hits if hit.decision), refs, cfg or EvalConfig())


def f1(tp: int, fp: int, fn: int) -> Tuple[float, float, float]:
    """Precision, recall and F1; each is 0 when its denominator is 0."""
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    score = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, score


@dataclass
class KeywordTWV:
    kw_id: str
    n_true: int
    n_hit: int
    n_fa: int
    p_miss: Optional[float]
    p_fa: Optional[float]
    twv: Optional[float]


def _speech_seconds(cfg: EvalConfig) -> float:
    if cfg.total_speech_s is None:
        ex = ConfigError('eval.total_speech_s is required for ATWV')
        LOG.error(ex)
        raise ex
    return cfg.total_speech_s


def term_weighted_values(alignment: Alignment, cfg: Optional[EvalConfig] = None,
                         kw_ids: Iterable[str] = ()) -> Dict[str, KeywordTWV]:
    """
    Per keyword TWV table. Keywords without references get ``None`` for the
    rates; ``kw_ids`` adds keywords that appear in neither hits nor refs.
    """
    cfg = cfg or EvalConfig()
    speech = _speech_seconds(cfg)
    n_true: Dict[str, int] = {kw: 0 for kw in kw_ids}
    n_hit: Dict[str, int] = dict.fromkeys(n_true, 0)
    n_fa: Dict[str, int] = dict.fromkeys(n_true, 0)
    for hit, ref in alignment.tp:
        n_true[ref.kw_id] = n_true.get(ref.kw_id, 0) + 1
        n_hit[ref.kw_id] = n_hit.get(ref.kw_id, 0) + 1
    for ref in alignment.fn:
        n_true[ref.kw_id] = n_true.get(ref.kw_id, 0) + 1
    for hit in alignment.fp:
        n_fa[hit.kw_id] = n_fa.get(hit.kw_id, 0) + 1

    table = {}
    for kw in sorted(set(n_true) | set(n_fa)):
        true, hits, fas = n_true.get(kw, 0), n_hit.get(kw, 0), n_fa.get(kw, 0)
        if true == 0:
            table[kw] = KeywordTWV(kw, 0, 0, fas, None, None, None)
            continue
        trials = speech - true
        if trials <= 0:
            ex = ConfigError(f'total_speech_s {speech} does not exceed the {true} occurrences of {kw}')
            LOG.error(ex)
            raise ex
        p_miss = (true - hits) / true
        p_fa = fas / trials
        table[kw] = KeywordTWV(kw, true, hits, fas, p_miss, p_fa, 1.0 - p_miss - cfg.atwv_beta * p_fa)
    return table


def atwv(alignment: Alignment, cfg: Optional[EvalConfig] = None) -> float:
    """
    Mean TWV over keywords with at least one reference occurrence.

    :raises NoScorableKeywords: if no keyword has references
    """
    values = [row.twv for row in term_weighted_values(alignment, cfg).values() if row.n_true > 0]
    if not values:
        ex = NoScorableKeywords('No keyword has a reference occurrence')
        LOG.error(ex)
        raise ex
    return float(math.fsum(values) / len(values))


def keyword_recall(alignment: Alignment, kw_ids: Iterable[str]) -> float:
    """Recall over the reference occurrences of ``kw_ids`` only."""
    wanted = set(kw_ids)
    tp = sum(1 for _, ref in alignment.tp if ref.kw_id in wanted)
    fn = sum(1 for ref in alignment.fn if ref.kw_id in wanted)
    return f1(tp, 0, fn)[1]


class SweepPoint(NamedTuple):
    threshold: float
    precision: float
    recall: float
    f1: float
    atwv: Optional[float]


def threshold_sweep(hits: Sequence[Hit], refs: Sequence[RefOccurrence], cfg: Optional[EvalConfig] = None,
                    points: int = SWEEP_POINTS) -> List[SweepPoint]:
    """
    F1 and ATWV with the decision re-taken at ``points`` evenly spaced
    thresholds between the lowest and the highest hit score.
    """
    cfg = cfg or EvalConfig()
    scores = [hit.norm_score for hit in hits]
    low, high = (min(scores), max(scores)) if scores else (0.0, 0.0)
    curve = []
    for threshold in np.linspace(low, high, points):
        threshold = float(threshold)
        alignment = _align((hit for hit in hits if hit.norm_score >= threshold), refs, cfg)
        precision, recall, score = f1(*alignment.counts)
        value = None
        if cfg.total_speech_s is not None:
            try:
                value = atwv(alignment, cfg)
            except NoScorableKeywords:
                pass
        curve.append(SweepPoint(threshold, precision, recall, score, value))
    return curve


def eval_report(hits: Sequence[Hit], refs: Sequence[RefOccurrence], cfg: Optional[EvalConfig] = None,
                kw_ids: Iterable[str] = ()) -> dict:
    """
    Global P/R/F1, ATWV, per keyword TWV table, false alarms of keywords without
    references and the threshold sweep, as a JSON-ready dict.
    """
    cfg = cfg or EvalConfig()
    alignment = align_hits(hits, refs, cfg)
    tp, fp, fn = alignment.counts
    precision, recall, score = f1(tp, fp, fn)
    report = {'tp': tp, 'fp': fp, 'fn': fn, 'precision': precision, 'recall': recall, 'f1': score,
              'atwv': None, 'keywords': [], 'unscored_false_alarms': {}}
    if cfg.total_speech_s is not None:
        table = term_weighted_values(alignment, cfg, kw_ids)
        report['keywords'] = [asdict(row) for row in table.values()]
        report['unscored_false_alarms'] = {row.kw_id: row.n_fa for row in table.values()
                                           if row.n_true == 0 and row.n_fa}
        try:
            report['atwv'] = atwv(alignment, cfg)
        except NoScorableKeywords:
            LOG.warning('ATWV undefined: no keyword has references')
    else:
        LOG.warning('total_speech_s not set; ATWV skipped')
    report['sweep'] = [point._asdict() for point in threshold_sweep(hits, refs, cfg)]
    return report


def read_refs(path) -> List[RefOccurrence]:
    """Read a reference TSV ``utt_id<TAB>kw_id<TAB>start_s<TAB>end_s``."""
    refs = []
    for lineno, row in read_tsv(path, 4):
        try:
            refs.append(RefOccurrence(row[0], row[1], float(row[2]), float(row[3])))
        except ValueError as err:
            ex = BadFormat(f'{path}:{lineno}: {err}')
            LOG.error(ex)
            raise ex from err
    return refs


def write_refs(refs: Iterable[RefOccurrence], path):
    write_tsv(path, ([ref.utt_id, ref.kw_id, f'{ref.start_s:.6f}', f'{ref.end_s:.6f}'] for ref in refs))
