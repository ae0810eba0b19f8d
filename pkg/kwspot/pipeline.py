"""pipeline.py: Resources and per-utterance processing shared by the commands.


Author -- KWS team
Created on -- 3/19/24 10:40 AM

``Resources`` bundles the artifacts named in the ``paths`` section (unit sets,
lexicon, language models, keyword list, cost table) plus the bias tries built
from them. On top of it live corpus synthesis, decoding, keyword detection and
the ablation ladder that switches the pipeline components on one by one.

Work is distributed per utterance over a ``multiprocessing`` pool; results are
always returned in utterance id order.


=======  ==========  =================  ================================
Version  Date        Author             Description
=======  ==========  =================  ================================
v0.1     3/19/24     KWS team           Resources, synthesis, decoding.
v0.2     3/20/24     KWS team           Ablation ladder.
=======  ==========  =================  ================================
"""

import zlib
import logging
import dataclasses
from multiprocessing.pool import Pool
from pathlib import Path
from typing import Callable, Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

from .config import PipelineConfig
from .constants import CHAR_DIR, SYLL_DIR, PGRAM_SUFFIX
from .decoder import BeamConfig, KeywordTrie, NBestEntry, build_bias_trie, greedy_nbest, prefix_beam_search
from .evaluation import RefOccurrence, align_hits, atwv, f1, keyword_recall
from .exceptions import ConfigError, NoScorableKeywords, OutOfVocabulary
from .kws import Hit, Keyword, KwsConfig, Stage, detect, load_keywords
from .lm import NGramLM, read_arpa
from .phonetics import CostTable, load_cost_table
from .posteriorgram import Posteriorgram, SynthConfig, load_confusion, read_pgram, synth_generate, synth_layout
from .units import Lexicon, UnitKind, UnitSet, load_lexicon, load_unit_set, syllabify, tokenize_chars
from ._utils import read_tsv

__all__ = ['Resources', 'Utterance', 'Corpus', 'Decoded', 'LADDER', 'read_transcripts', 'utterance_seed',
           'synth_utterance', 'synth_corpus', 'load_corpus', 'decode_utterance', 'decode_corpus', 'detect_corpus',
           'run_ladder', 'rare_keywords', 'parallel_map']
LOG = logging.getLogger('Pipeline')


def _required(value, name):
    if value is None:
        ex = ConfigError(f'paths.{name} is not configured')
        LOG.error(ex)
        raise ex
    return value


@dataclasses.dataclass
class Resources:
    """Read-only artifacts of one pipeline run."""
    char_set: UnitSet
    syll_set: UnitSet
    lexicon: Lexicon
    keywords: List[Keyword] = dataclasses.field(default_factory=list)
    costs: CostTable = dataclasses.field(default_factory=CostTable)
    char_lm: Optional[NGramLM] = None
    syll_lm: Optional[NGramLM] = None
    char_trie: Optional[KeywordTrie] = None
    syll_trie: Optional[KeywordTrie] = None
    char_confusion: Optional[dict] = None
    syll_confusion: Optional[dict] = None

    @classmethod
    def load(cls, cfg: PipelineConfig, keywords: bool = True, lms: bool = True):
        """
        Load the configured artifacts.

        :param keywords: load the keyword list and build the bias tries
        :param lms: load the language models (missing ones disable fusion)
        """
        paths = cfg.paths
        char_set = load_unit_set(_required(paths.char_units, 'char_units'), UnitKind.CHARACTER)
        syll_set = load_unit_set(_required(paths.syll_units, 'syll_units'), UnitKind.SYLLABLE)
        lexicon = load_lexicon(_required(paths.lexicon, 'lexicon'))
        lexicon.validate(char_set, syll_set)
        res = cls(char_set, syll_set, lexicon)

        if paths.cost_table:
            res.costs = load_cost_table(paths.cost_table)
        if paths.char_confusion:
            res.char_confusion = load_confusion(paths.char_confusion, char_set)
        if paths.syll_confusion:
            res.syll_confusion = load_confusion(paths.syll_confusion, syll_set)
        if lms:
            res.char_lm = read_arpa(paths.char_lm) if paths.char_lm else None
            res.syll_lm = read_arpa(paths.syll_lm) if paths.syll_lm else None
            if res.char_lm is None:
                LOG.warning('No character LM configured; decoding without fusion')
        if keywords:
            res.keywords = load_keywords(_required(paths.keywords, 'keywords'), char_set, lexicon, syll_set)
            res.build_tries(cfg)
        return res

    def build_tries(self, cfg: PipelineConfig):
        self.char_trie = build_bias_trie([kw.char_units for kw in self.keywords], self.char_lm, cfg.bias,
                                         self.char_set)
        self.syll_trie = build_bias_trie([kw.syll_units for kw in self.keywords], self.syll_lm, cfg.bias,
                                         self.syll_set)


class Utterance(NamedTuple):
    utt_id: str
    pg_char: Posteriorgram
    pg_syll: Optional[Posteriorgram]


class Corpus(NamedTuple):
    utterances: List[Utterance]
    refs: List[RefOccurrence]
    skipped: List[Tuple[str, str]]
    total_speech_s: float


class Decoded(NamedTuple):
    utt_id: str
    char: List[NBestEntry]
    syll: Optional[List[NBestEntry]]


# -----------------------------------------------------------------------------
# workers
# -----------------------------------------------------------------------------

_WORKER = {}


def _init_worker(func, args):
    _WORKER['func'] = func
    _WORKER['args'] = args


def _call_worker(item):
    return _WORKER['func'](item, *_WORKER['args'])


def parallel_map(func: Callable, items: Sequence, args: tuple = (), jobs: int = 1) -> list:
    """``[func(item, *args) for item in items]``, over ``jobs`` processes when > 1; order is kept."""
    if jobs <= 1 or len(items) < 2:
        return [func(item, *args) for item in items]
    with Pool(jobs, initializer=_init_worker, initargs=(func, args)) as pool:
        return pool.map(_call_worker, items, chunksize=max(1, len(items) // (4 * jobs)))


# -----------------------------------------------------------------------------
# synthesis
# -----------------------------------------------------------------------------

def read_transcripts(path) -> List[Tuple[str, str]]:
    """Read ``utt_id<TAB>text`` rows, sorted by utterance id."""
    rows = {}
    for lineno, row in read_tsv(path, 2):
        if row[0] in rows:
            LOG.warning('%s:%d: duplicate utterance %s, keeping the last one', path, lineno, row[0])
        rows[row[0]] = row[1]
    return sorted(rows.items())


def utterance_seed(seed: int, utt_id: str, stream: int) -> List[int]:
    """Seed sequence of one utterance and random stream, independent of processing order."""
    return [seed, zlib.crc32(utt_id.encode('utf-8')), stream]


def _occurrences(tokens: Sequence[int], units: Sequence[int]) -> Iterable[int]:
    size = len(units)
    for start in range(len(tokens) - size + 1):
        if tuple(tokens[start:start + size]) == tuple(units):
            yield start


def synth_utterance(item: Tuple[str, str], res: Resources, cfg: SynthConfig):
    """
    Character and syllable posteriorgram of one transcript plus the reference
    occurrences of every keyword in it.

    :return: (utterance, refs) or (None, error message) for unusable transcripts
    """
    utt_id, text = item
    try:
        chars = tokenize_chars(text, res.char_set)
        sylls = syllabify(text, res.lexicon, res.syll_set)
    except OutOfVocabulary as ex:
        LOG.warning('Skipping %s: %s', utt_id, ex)
        return None, str(ex)

    char_cfg = dataclasses.replace(cfg, confusion=res.char_confusion)
    syll_cfg = dataclasses.replace(cfg, confusion=res.syll_confusion)
    pg_char = synth_generate(chars, res.char_set, char_cfg, utt_id, seed=utterance_seed(cfg.seed, utt_id, 0))
    pg_syll = synth_generate(sylls, res.syll_set, syll_cfg, utt_id, seed=utterance_seed(cfg.seed, utt_id, 1))

    spans, _ = synth_layout(chars, cfg)
    refs = []
    for kw in res.keywords:
        for start in _occurrences(chars, kw.char_units):
            first, last = spans[start][0], spans[start + len(kw.char_units) - 1][1]
            refs.append(RefOccurrence(utt_id, kw.id, first * cfg.frame_period_s, last * cfg.frame_period_s))
    return Utterance(utt_id, pg_char, pg_syll), refs


def synth_corpus(transcripts: Sequence[Tuple[str, str]], res: Resources, cfg: SynthConfig,
                 jobs: int = 1) -> Corpus:
    """Synthesize every transcript; OOV transcripts are reported in ``skipped``."""
    results = parallel_map(synth_utterance, sorted(transcripts), (res, cfg), jobs)
    utterances, refs, skipped = [], [], []
    for (utt_id, _), (utt, extra) in zip(sorted(transcripts), results):
        if utt is None:
            skipped.append((utt_id, extra))
            continue
        utterances.append(utt)
        refs.extend(extra)
    total = sum(utt.pg_char.num_frames * utt.pg_char.frame_period_s for utt in utterances)
    LOG.info('Synthesized %d utterances (%.1f s), %d references, %d skipped', len(utterances), total, len(refs),
             len(skipped))
    return Corpus(utterances, refs, skipped, total)


def load_corpus(pgram_dir, char_set: UnitSet, syll_set: Optional[UnitSet] = None) -> List[Utterance]:
    """
    Read ``<dir>/char/*.bkws`` and, if present, the matching ``<dir>/syll`` files.
    """
    pgram_dir = Path(pgram_dir)
    char_dir, syll_dir = pgram_dir / CHAR_DIR, pgram_dir / SYLL_DIR
    if not char_dir.is_dir():
        raise FileNotFoundError(f'No character posteriorgrams in {pgram_dir}')
    utterances = []
    for path in sorted(char_dir.glob('*' + PGRAM_SUFFIX)):
        pg_char = read_pgram(path)
        pg_char.check_unit_set(char_set)
        pg_syll = None
        syll_path = syll_dir / path.name
        if syll_set is not None and syll_path.exists():
            pg_syll = read_pgram(syll_path)
            pg_syll.check_unit_set(syll_set)
        utterances.append(Utterance(pg_char.utt_id, pg_char, pg_syll))
    return sorted(utterances, key=lambda u: u.utt_id)


# -----------------------------------------------------------------------------
# decoding and detection
# -----------------------------------------------------------------------------

def decode_utterance(pg: Posteriorgram, unit_set: UnitSet, lm: Optional[NGramLM], trie: Optional[KeywordTrie],
                     cfg: BeamConfig, greedy: bool = False) -> List[NBestEntry]:
    """N-best of one posteriorgram: greedy path or prefix beam search."""
    if greedy:
        return greedy_nbest(pg, unit_set)
    return prefix_beam_search(pg, unit_set, lm, trie if cfg.bias_enabled else None, cfg)


def _decode_one(utt: Utterance, res: Resources, cfg: BeamConfig, greedy: bool, use_lm: bool,
                with_syll: bool = True) -> Decoded:
    char = decode_utterance(utt.pg_char, res.char_set, res.char_lm if use_lm else None, res.char_trie, cfg, greedy)
    syll = None
    if with_syll and utt.pg_syll is not None:
        syll = decode_utterance(utt.pg_syll, res.syll_set, res.syll_lm if use_lm else None, res.syll_trie, cfg,
                                greedy)
    return Decoded(utt.utt_id, char, syll)


def decode_corpus(utterances: Sequence[Utterance], res: Resources, cfg: BeamConfig, greedy: bool = False,
                  use_lm: bool = True, jobs: int = 1) -> List[Decoded]:
    utterances = sorted(utterances, key=lambda u: u.utt_id)
    return parallel_map(_decode_one, utterances, (res, cfg, greedy, use_lm), jobs)


def _detect_one(item: Tuple[Utterance, Decoded], res: Resources, cfg: KwsConfig) -> List[Hit]:
    utt, decoded = item
    return detect(utt.utt_id, utt.pg_char, decoded.char, res.keywords, res.lexicon, res.char_set, res.costs, cfg,
                  utt.pg_syll, decoded.syll)


def detect_corpus(utterances: Sequence[Utterance], decoded: Sequence[Decoded], res: Resources, cfg: KwsConfig,
                  jobs: int = 1) -> List[Hit]:
    by_id = {d.utt_id: d for d in decoded}
    items = []
    for utt in sorted(utterances, key=lambda u: u.utt_id):
        if utt.utt_id not in by_id:
            LOG.warning('No N-best list for %s; skipped', utt.utt_id)
            continue
        items.append((utt, by_id[utt.utt_id]))
    return [hit for hits in parallel_map(_detect_one, items, (res, cfg), jobs) for hit in hits]


# -----------------------------------------------------------------------------
# ablation ladder
# -----------------------------------------------------------------------------

class _Rung(NamedTuple):
    name: str
    decoding: str
    nbest_matching: bool
    length_norm: bool
    stages: frozenset


LADDER = (
    _Rung('greedy', 'greedy', False, False, frozenset({Stage.CHAR})),
    _Rung('+LM', 'beam', False, False, frozenset({Stage.CHAR})),
    _Rung('+length-norm', 'beam', False, True, frozenset({Stage.CHAR})),
    _Rung('+N-best', 'beam', True, True, frozenset({Stage.CHAR})),
    _Rung('+bias', 'biased', True, True, frozenset({Stage.CHAR})),
    _Rung('+fuzzy', 'biased', True, True, frozenset({Stage.CHAR, Stage.FUZZY})),
    _Rung('+syllable', 'biased', True, True, frozenset(Stage)),
)


def rare_keywords(keywords: Sequence[Keyword], lm: Optional[NGramLM], char_set: UnitSet) -> List[str]:
    """Ids of the bottom quartile (at least one) of keywords by LM score."""
    if not keywords:
        return []
    scored = [(lm.score_sequence(char_set.strings(kw.char_units)) if lm else 0.0, kw.id) for kw in keywords]
    scored.sort()
    return [kw_id for _, kw_id in scored[:max(1, len(scored) // 4)]]


def _ladder_one(utt: Utterance, res: Resources, cfg: PipelineConfig) -> Dict[str, List[Hit]]:
    beam = dataclasses.replace(cfg.beam, bias_enabled=False)
    biased = dataclasses.replace(cfg.beam, bias_enabled=True)
    decodes = {
        'greedy': Decoded(utt.utt_id, greedy_nbest(utt.pg_char, res.char_set), None),
        'beam': _decode_one(utt, res, beam, False, True, with_syll=False),
        'biased': _decode_one(utt, res, biased, False, True),
    }
    hits = {}
    for rung in LADDER:
        kws_cfg = dataclasses.replace(cfg.kws, nbest_matching=rung.nbest_matching, length_norm=rung.length_norm,
                                      stages_enabled=rung.stages & cfg.kws.stages_enabled | {Stage.CHAR})
        hits[rung.name] = _detect_one((utt, decodes[rung.decoding]), res, kws_cfg)
    return hits


def run_ladder(corpus: Corpus, res: Resources, cfg: PipelineConfig, jobs: int = 1) -> dict:
    """
    Detect and score the corpus once per ladder rung.

    :return: report with one row per rung (precision, recall, F1, ATWV, rare keyword recall)
    """
    eval_cfg = cfg.eval
    if eval_cfg.total_speech_s is None:
        eval_cfg = dataclasses.replace(eval_cfg, total_speech_s=corpus.total_speech_s)
    rare = rare_keywords(res.keywords, res.char_lm, res.char_set)

    utterances = sorted(corpus.utterances, key=lambda u: u.utt_id)
    per_utt = parallel_map(_ladder_one, utterances, (res, cfg), jobs)

    rows = []
    for rung in LADDER:
        hits = [hit for result in per_utt for hit in result[rung.name]]
        alignment = align_hits(hits, corpus.refs, eval_cfg)
        precision, recall, score = f1(*alignment.counts)
        try:
            value = atwv(alignment, eval_cfg)
        except NoScorableKeywords:
            value = None
        rows.append({'system': rung.name, 'precision': precision, 'recall': recall, 'f1': score, 'atwv': value,
                     'rare_recall': keyword_recall(alignment, rare)})
        LOG.info('%-13s P=%.4f R=%.4f F1=%.4f ATWV=%s', rung.name, precision, recall, score,
                 'n/a' if value is None else f'{value:.4f}')
    return {'utterances': len(utterances), 'references': len(corpus.refs), 'total_speech_s': eval_cfg.total_speech_s,
            'rare_keywords': rare, 'rows': rows}
