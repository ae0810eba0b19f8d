"""decoder.py: CTC prefix beam search with shallow fusion and keyword biasing.


Author -- KWS team
Created on -- 3/08/24 10:05 AM

Prefix beam search over a posteriorgram. New units are scored by a backoff
n-gram model (shallow fusion, log10 converted to natural log once) and advance
an Aho-Corasick automaton over keyword chunks; every chunk completed by an
extension awards its weight W = -alpha * LM(chunk) + beta. The bias takes part
in pruning.


=======  ==========  =================  ================================
Version  Date        Author             Description
=======  ==========  =================  ================================
v0.1     3/08/24     KWS team           Prefix beam search, LM fusion.
v0.2     3/10/24     KWS team           Keyword trie and biasing.
v0.3     3/14/24     KWS team           Per-frame top-k candidates.
v0.4     4/02/24     KWS team           Uncapped candidates by default.
=======  ==========  =================  ================================
"""

import json
import math
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .constants import (DEFAULT_BEAM_SIZE, DEFAULT_NBEST, DEFAULT_LM_WEIGHT, DEFAULT_TOKEN_MIN_LOGP,
                        DEFAULT_BIAS_ALPHA, DEFAULT_BIAS_BETA, DEFAULT_LM_ORDER)
from .exceptions import InvalidKeyword, BadFormat
from .lm import NGramLM, LMState
from .posteriorgram import Posteriorgram, TokenSpan, align_viterbi, greedy_path
from .units import UnitSet, UnitKind
from ._utils import log_add

__all__ = ['BeamConfig', 'BiasConfig', 'KeywordTrie', 'BiasChunk', 'Hypothesis', 'NBestEntry', 'PrefixBeamSearch',
           'build_bias_trie', 'prefix_beam_search', 'greedy_nbest', 'write_nbest', 'read_nbest']
LOG = logging.getLogger('Decoder')

LN10 = math.log(10.0)
NEG_INF = -math.inf


@dataclass
class BeamConfig:
    """Search parameters.

    Every unit above ``token_min_logp`` is tried on a frame; ``token_topk``
    optionally caps that to the best k (``None``: no cap).
    """
    beam_size: int = DEFAULT_BEAM_SIZE
    nbest: int = DEFAULT_NBEST
    lm_weight: float = DEFAULT_LM_WEIGHT
    token_min_logp: float = DEFAULT_TOKEN_MIN_LOGP
    bias_enabled: bool = True
    token_topk: Optional[int] = None

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError('beam_size must be >= 1')
        if self.nbest < 1:
            raise ValueError('nbest must be >= 1')
        if self.token_topk is not None and self.token_topk < 1:
            raise ValueError('token_topk must be >= 1')


@dataclass
class BiasConfig:
    alpha: float = DEFAULT_BIAS_ALPHA
    beta: float = DEFAULT_BIAS_BETA
    chunk_len: int = DEFAULT_LM_ORDER

    def __post_init__(self):
        if self.chunk_len < 1:
            raise ValueError('chunk_len must be >= 1')


# -----------------------------------------------------------------------------
# keyword trie
# -----------------------------------------------------------------------------

@dataclass(frozen=True)
class BiasChunk:
    keyword: int
    part: int
    units: Tuple[int, ...]
    lm_log10: float
    weight: float


class KeywordTrie:
    """Aho-Corasick automaton over unit-id sequences.

    Node 0 is the root. ``outputs[node]`` lists (chunk id, weight) of every
    chunk ending at ``node``, including those reached through failure links.
    """

    ROOT = 0

    def __init__(self):
        self.children: List[Dict[int, int]] = [{}]
        self.fail: List[int] = [self.ROOT]
        self.depth: List[int] = [0]
        self.accepts: List[List[Tuple[int, float]]] = [[]]
        self.outputs: List[Tuple[Tuple[int, float], ...]] = [()]
        self.chunks: List[BiasChunk] = []

    def __len__(self):
        return len(self.children)

    def insert(self, chunk: BiasChunk) -> int:
        """Add a chunk; returns its id."""
        if not math.isfinite(chunk.weight):
            raise InvalidKeyword(f'Non-finite bias weight for chunk {chunk.units}')
        node = self.ROOT
        for unit in chunk.units:
            nxt = self.children[node].get(unit)
            if nxt is None:
                nxt = len(self.children)
                self.children[node][unit] = nxt
                self.children.append({})
                self.fail.append(self.ROOT)
                self.depth.append(self.depth[node] + 1)
                self.accepts.append([])
                self.outputs.append(())
            node = nxt
        chunk_id = len(self.chunks)
        self.chunks.append(chunk)
        self.accepts[node].append((chunk_id, chunk.weight))
        return chunk_id

    def finalize(self):
        """Compute failure links (longest proper suffix in the trie) and outputs."""
        queue = deque()
        for child in self.children[self.ROOT].values():
            self.fail[child] = self.ROOT
            queue.append(child)
        self.outputs[self.ROOT] = tuple(self.accepts[self.ROOT])

        while queue:
            node = queue.popleft()
            self.outputs[node] = tuple(self.accepts[node]) + self.outputs[self.fail[node]]
            for unit, child in self.children[node].items():
                fail = self.fail[node]
                while fail != self.ROOT and unit not in self.children[fail]:
                    fail = self.fail[fail]
                self.fail[child] = self.children[fail].get(unit, self.ROOT)
                queue.append(child)

    def step(self, state: int, unit: int) -> Tuple[int, Tuple[Tuple[int, float], ...]]:
        """Advance by one unit; returns the next state and the chunks completed there; read-only."""
        node = state
        while node != self.ROOT and unit not in self.children[node]:
            node = self.fail[node]
        nxt = self.children[node].get(unit, self.ROOT)
        return nxt, self.outputs[nxt]


def build_bias_trie(keywords: Sequence[Sequence[int]], lm: Optional[NGramLM], cfg: BiasConfig,
                    unit_set: UnitSet) -> KeywordTrie:
    """
    Insert every keyword (split into chunks of at most ``chunk_len`` units)
    with weight W = -alpha * LM(chunk) + beta; LM(chunk) is the log10 score
    without sentence boundaries. Identical chunks are inserted once.

    :raises InvalidKeyword: for empty keywords or keywords containing the blank
    """
    trie = KeywordTrie()
    seen = set()
    for kw_idx, units in enumerate(keywords):
        units = tuple(int(u) for u in units)
        if not units or unit_set.blank_index in units:
            ex = InvalidKeyword(f'Keyword {kw_idx} is empty or contains the blank: {units}')
            LOG.error(ex)
            raise ex
        for part, start in enumerate(range(0, len(units), cfg.chunk_len)):
            chunk = units[start:start + cfg.chunk_len]
            if chunk in seen:
                continue
            seen.add(chunk)
            lm_log10 = lm.score_sequence(unit_set.strings(chunk), with_boundaries=False) if lm else 0.0
            weight = -cfg.alpha * lm_log10 + cfg.beta
            trie.insert(BiasChunk(kw_idx, part, chunk, lm_log10, weight))
            LOG.debug('Bias chunk %s: LM %.4f -> W %.4f', unit_set.strings(chunk), lm_log10, weight)
    trie.finalize()
    LOG.info('Built bias trie with %d chunks, %d nodes', len(trie.chunks), len(trie))
    return trie


# -----------------------------------------------------------------------------
# search
# -----------------------------------------------------------------------------

@dataclass
class Hypothesis:
    prefix: Tuple[int, ...]
    logp_blank: float = NEG_INF
    logp_nonblank: float = NEG_INF
    lm_state: LMState = ()
    lm_log10: float = 0.0
    bias_bonus: float = 0.0
    trie_state: int = KeywordTrie.ROOT

    @property
    def logp_total(self) -> float:
        return log_add(self.logp_blank, self.logp_nonblank)

    def carry(self) -> 'Hypothesis':
        """Same prefix and states, no mass yet."""
        return Hypothesis(self.prefix, NEG_INF, NEG_INF, self.lm_state, self.lm_log10, self.bias_bonus,
                          self.trie_state)


@dataclass
class NBestEntry:
    """One decoded hypothesis; ``score_lm`` is log10, the others natural log."""
    tokens: Tuple[int, ...]
    text: str
    score_am: float
    score_lm: float
    score_bias: float
    score_total: float
    spans: List[TokenSpan] = field(default_factory=list)

    def to_dict(self):
        return {'text': self.text, 'tokens': list(self.tokens), 'score_am': self.score_am,
                'score_lm': self.score_lm, 'score_bias': self.score_bias, 'score_total': self.score_total,
                'spans': [[s.start_frame, s.end_frame, s.peak_frame] for s in self.spans]}

    @classmethod
    def from_dict(cls, doc):
        tokens = tuple(int(t) for t in doc['tokens'])
        spans = [TokenSpan(tok, int(s), int(e), int(p), math.nan) for tok, (s, e, p) in zip(tokens, doc['spans'])]
        return cls(tokens, doc['text'], float(doc['score_am']), float(doc['score_lm']), float(doc['score_bias']),
                   float(doc['score_total']), spans)


def _text(tokens: Sequence[int], unit_set: UnitSet) -> str:
    sep = ' ' if unit_set.kind == UnitKind.SYLLABLE else ''
    return sep.join(unit_set.strings(tokens))


class PrefixBeamSearch:
    """CTC prefix beam search bound to a unit set, an optional LM and an optional bias trie.

    LM scores and trie transitions are cached per (state, unit) for the
    lifetime of the object; the LM and the trie are only read.
    """

    def __init__(self, unit_set: UnitSet, lm: Optional[NGramLM] = None, trie: Optional[KeywordTrie] = None,
                 cfg: Optional[BeamConfig] = None):
        self.unit_set = unit_set
        self.lm = lm
        self.trie = trie
        self.cfg = cfg or BeamConfig()
        self.use_bias = trie is not None and self.cfg.bias_enabled
        self.lm_scale = self.cfg.lm_weight * LN10 if lm is not None else 0.0
        self._lm_cache: Dict[Tuple[LMState, int], Tuple[float, LMState]] = {}
        self._trie_cache: Dict[Tuple[int, int], Tuple[int, Tuple[Tuple[int, float], ...]]] = {}

    def _score(self, hyp: Hypothesis) -> float:
        return hyp.logp_total + self.lm_scale * hyp.lm_log10 + hyp.bias_bonus

    def _extend(self, hyp: Hypothesis, unit: int) -> Hypothesis:
        lm_state, lm_log10 = hyp.lm_state, hyp.lm_log10
        if self.lm is not None:
            key = (lm_state, unit)
            cached = self._lm_cache.get(key)
            if cached is None:
                cached = self.lm.score_token(lm_state, self.unit_set.units[unit])
                self._lm_cache[key] = cached
            lm_log10 += cached[0]
            lm_state = cached[1]

        trie_state, bias = hyp.trie_state, hyp.bias_bonus
        if self.use_bias:
            key = (trie_state, unit)
            stepped = self._trie_cache.get(key)
            if stepped is None:
                stepped = self.trie.step(trie_state, unit)
                self._trie_cache[key] = stepped
            trie_state, completed = stepped
            for _, weight in completed:
                bias += weight
        return Hypothesis(hyp.prefix + (unit,), NEG_INF, NEG_INF, lm_state, lm_log10, bias, trie_state)

    def _candidates(self, row: np.ndarray) -> List[int]:
        ids = np.flatnonzero(row > self.cfg.token_min_logp)
        ids = ids[ids != self.unit_set.blank_index]
        topk = self.cfg.token_topk
        if topk is not None and len(ids) > topk:
            ids = ids[np.argpartition(-row[ids], topk - 1)[:topk]]
        return sorted(ids.tolist())

    def _prune(self, hyps: Iterable[Hypothesis], size: int) -> List[Hypothesis]:
        return sorted(hyps, key=lambda h: (-self._score(h), h.prefix))[:size]

    def search(self, pg: Posteriorgram) -> List[NBestEntry]:
        """Decode ``pg`` into at most ``nbest`` entries, best first, with token spans."""
        pg.check_unit_set(self.unit_set)
        if pg.num_frames == 0:
            return [NBestEntry((), '', 0.0, 0.0, 0.0, 0.0, [])]

        logp = pg.log_matrix()
        blank = self.unit_set.blank_index
        start_state = self.lm.initial_state(with_boundaries=True) if self.lm is not None else ()
        beam = [Hypothesis((), 0.0, NEG_INF, start_state)]

        for t in range(pg.num_frames):
            row = logp[t]
            blank_lp = float(row[blank])
            candidates = self._candidates(row)
            nxt: Dict[Tuple[int, ...], Hypothesis] = {}
            for hyp in beam:
                total = hyp.logp_total
                same = nxt.get(hyp.prefix)
                if same is None:
                    same = nxt[hyp.prefix] = hyp.carry()
                same.logp_blank = log_add(same.logp_blank, total + blank_lp)

                last = hyp.prefix[-1] if hyp.prefix else None
                if last is not None:
                    same.logp_nonblank = log_add(same.logp_nonblank, hyp.logp_nonblank + float(row[last]))

                for unit in candidates:
                    mass = (hyp.logp_blank if unit == last else total) + float(row[unit])
                    if mass == NEG_INF:
                        continue
                    prefix = hyp.prefix + (unit,)
                    ext = nxt.get(prefix)
                    if ext is None:
                        ext = nxt[prefix] = self._extend(hyp, unit)
                    ext.logp_nonblank = log_add(ext.logp_nonblank, mass)

            beam = self._prune(nxt.values(), self.cfg.beam_size)

        entries = []
        for hyp in self._prune(beam, self.cfg.nbest):
            score_am = hyp.logp_total
            score_bias = hyp.bias_bonus if self.use_bias else 0.0
            score_total = score_am + self.lm_scale * hyp.lm_log10 + score_bias
            entries.append(NBestEntry(hyp.prefix, _text(hyp.prefix, self.unit_set), score_am, hyp.lm_log10,
                                      score_bias, score_total, align_viterbi(pg, hyp.prefix)))
        LOG.debug('%s: decoded %d hypotheses, best "%s" (%.4f)', pg.utt_id, len(entries), entries[0].text,
                  entries[0].score_total)
        return entries


def prefix_beam_search(pg: Posteriorgram, unit_set: UnitSet, lm: Optional[NGramLM] = None,
                       trie: Optional[KeywordTrie] = None, cfg: Optional[BeamConfig] = None) -> List[NBestEntry]:
    """
    Decode one posteriorgram.

    :param pg: posteriorgram over ``unit_set``
    :param lm: shallow fusion model, ``None`` disables fusion
    :param trie: bias automaton from ``build_bias_trie``, ``None`` disables biasing
    :param cfg: search parameters
    :return: N-best entries sorted by total score, ties by token ids
    :raises UnitSetMismatch: if ``pg`` was not produced over ``unit_set``
    """
    return PrefixBeamSearch(unit_set, lm, trie, cfg).search(pg)


def greedy_nbest(pg: Posteriorgram, unit_set: UnitSet) -> List[NBestEntry]:
    """Single-entry N-best holding the greedy path."""
    pg.check_unit_set(unit_set)
    tokens, best = greedy_path(pg)
    score_am = float(pg.log_matrix()[np.arange(pg.num_frames), best].sum()) if pg.num_frames else 0.0
    spans = align_viterbi(pg, tokens)
    return [NBestEntry(tuple(tokens), _text(tokens, unit_set), score_am, 0.0, 0.0, score_am, spans)]


def write_nbest(path, results: Iterable[Tuple[str, List[NBestEntry]]]):
    """Write one JSON object per utterance: {"utt_id", "hyps": [...]}."""
    with open(path, 'w', encoding='utf-8') as file:
        for utt_id, entries in results:
            doc = {'utt_id': utt_id, 'hyps': [entry.to_dict() for entry in entries]}
            file.write(json.dumps(doc, ensure_ascii=False) + '\n')


def read_nbest(path) -> Dict[str, List[NBestEntry]]:
    results = {}
    with open(path, encoding='utf-8') as file:
        for lineno, line in enumerate(file, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                results[doc['utt_id']] = [NBestEntry.from_dict(h) for h in doc['hyps']]
            except (ValueError, KeyError, TypeError) as err:
                ex = BadFormat(f'{path}:{lineno}: bad N-best line ({err})')
                LOG.error(ex)
                raise ex from err
    return results
