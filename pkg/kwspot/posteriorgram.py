"""posteriorgram.py: Posteriorgram type, file formats, alignment and synthesis.


Author -- KWS team
Created on -- 3/05/24 09:15 AM

A posteriorgram is a T x V matrix of natural-log posteriors over a unit set;
it is the only acoustic interface of the pipeline. Log-zero is floored at
``LOG_ZERO`` (-1e4) so no recursion ever produces NaN.

Binary format (little endian)::

    "BKWS" u16 version
    u16 len + utf-8 utt_id
    u16 len + utf-8 unit_set_id
    f64 frame_period_s, u32 T, u32 V
    T*V f32 log posteriors, row major

A JSON mirror with the same field names is accepted wherever the binary is.


=======  ==========  =================  ================================
Version  Date        Author             Description
=======  ==========  =================  ================================
v0.1     3/05/24     KWS team           Format, greedy path.
v0.2     3/08/24     KWS team           Viterbi alignment, synthesis.
v0.3     4/02/24     KWS team           Fixed target mass per frame.
=======  ==========  =================  ================================
"""

import json
import struct
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .constants import (PGRAM_MAGIC, PGRAM_VERSION, LOG_ZERO, DEFAULT_FRAME_PERIOD, ROW_NORM_TOLERANCE, MAX_LOGP,
                        BLANK_INDEX)
from .exceptions import BadFormat, InvalidTranscript, AlignmentInfeasible, UnitSetMismatch
from .units import UnitSet
from ._utils import read_tsv

__all__ = ['Posteriorgram', 'SynthConfig', 'TokenSpan', 'write_pgram', 'read_pgram', 'synth_generate',
           'synth_layout', 'greedy_path', 'align_viterbi', 'viterbi_score', 'min_frames', 'expand_labels',
           'load_confusion', 'confusion_from_strings', 'ctc_collapse']
LOG = logging.getLogger('Posteriorgram')

_HEADER = struct.Struct('<dII')
# relative spread of the per-token partner weights
PARTNER_JITTER = 0.5


@dataclass(frozen=True, eq=False)
class Posteriorgram:
    """Per-frame natural-log posteriors, stored as float32."""
    utt_id: str
    unit_set_id: str
    frame_period_s: float
    logp: np.ndarray

    def __post_init__(self):
        logp = np.asarray(self.logp, dtype=np.float32)
        if logp.ndim != 2:
            raise BadFormat(f'{self.utt_id}: posteriorgram must be a T x V matrix, got shape {logp.shape}')
        logp.setflags(write=False)
        object.__setattr__(self, 'logp', logp)

    @property
    def num_frames(self) -> int:
        return self.logp.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.logp.shape[1]

    def frame_time(self, frame: int) -> float:
        return frame * self.frame_period_s

    def log_matrix(self) -> np.ndarray:
        """float64 copy used by the recursions."""
        return self.logp.astype(np.float64)

    def validate(self):
        """Raise ``BadFormat`` unless entries are finite, <= 0 and rows normalized."""
        if self.frame_period_s <= 0:
            raise BadFormat(f'{self.utt_id}: frame period must be positive')
        if self.vocab_size < 2:
            raise BadFormat(f'{self.utt_id}: need at least 2 units, got {self.vocab_size}')
        if self.num_frames == 0:
            return
        logp = self.log_matrix()
        if not np.all(np.isfinite(logp)):
            raise BadFormat(f'{self.utt_id}: non-finite log posterior')
        if np.any(logp > MAX_LOGP):
            raise BadFormat(f'{self.utt_id}: positive log posterior')
        row_norm = np.logaddexp.reduce(logp, axis=1)
        bad = np.flatnonzero(np.abs(row_norm) > ROW_NORM_TOLERANCE)
        if bad.size:
            raise BadFormat(f'{self.utt_id}: frame {bad[0]} sums to {np.exp(row_norm[bad[0]]):.6f}, not 1')

    def check_unit_set(self, unit_set: UnitSet):
        if self.unit_set_id != unit_set.id or self.vocab_size != len(unit_set):
            ex = UnitSetMismatch(f'{self.utt_id}: posteriorgram over {self.unit_set_id}/{self.vocab_size} '
                                 f'does not match unit set {unit_set.id}/{len(unit_set)}')
            LOG.error(ex)
            raise ex


class TokenSpan(NamedTuple):
    token: int
    start_frame: int
    end_frame: int
    peak_frame: int
    peak_logp: float


# -----------------------------------------------------------------------------
# file formats
# -----------------------------------------------------------------------------

def _pack_str(value: str) -> bytes:
    raw = value.encode('utf-8')
    if len(raw) > 0xFFFF:
        raise BadFormat(f'String field too long: {len(raw)} bytes')
    return struct.pack('<H', len(raw)) + raw


def write_pgram(pg: Posteriorgram, path):
    """Write ``pg`` in binary format, or as JSON mirror for a '.json' path."""
    pg.validate()
    path = Path(path)
    if path.suffix.lower() == '.json':
        doc = {'utt_id': pg.utt_id, 'unit_set_id': pg.unit_set_id, 'frame_period_s': pg.frame_period_s,
               'num_frames': pg.num_frames, 'vocab_size': pg.vocab_size,
               'logp': [[float(x) for x in row] for row in pg.logp]}
        with open(path, 'w', encoding='utf-8') as file:
            json.dump(doc, file, ensure_ascii=False)
        return

    with open(path, 'wb') as file:
        file.write(PGRAM_MAGIC)
        file.write(struct.pack('<H', PGRAM_VERSION))
        file.write(_pack_str(pg.utt_id))
        file.write(_pack_str(pg.unit_set_id))
        file.write(_HEADER.pack(pg.frame_period_s, pg.num_frames, pg.vocab_size))
        file.write(pg.logp.astype('<f4').tobytes())


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, size: int) -> bytes:
        if self.pos + size > len(self.raw):
            raise BadFormat(f'{self.path}: truncated posteriorgram file')
        chunk = self.raw[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def string(self) -> str:
        size, = struct.unpack('<H', self.take(2))
        try:
            return self.take(size).decode('utf-8')
        except UnicodeDecodeError as err:
            raise BadFormat(f'{self.path}: invalid utf-8 in header') from err


def _read_binary(raw: bytes, path) -> Posteriorgram:
    reader = _Reader(raw, path)
    reader.take(len(PGRAM_MAGIC))
    version, = struct.unpack('<H', reader.take(2))
    if version != PGRAM_VERSION:
        raise BadFormat(f'{path}: unsupported version {version}')
    utt_id = reader.string()
    unit_set_id = reader.string()
    frame_period_s, num_frames, vocab = _HEADER.unpack(reader.take(_HEADER.size))
    data = reader.take(4 * num_frames * vocab)
    if reader.pos != len(raw):
        raise BadFormat(f'{path}: {len(raw) - reader.pos} trailing bytes')
    logp = np.frombuffer(data, dtype='<f4').reshape(num_frames, vocab)
    return Posteriorgram(utt_id, unit_set_id, frame_period_s, logp)


def _read_json(raw: bytes, path) -> Posteriorgram:
    try:
        doc = json.loads(raw.decode('utf-8'))
        logp = np.asarray(doc['logp'], dtype=np.float64)
        if logp.size == 0:
            logp = logp.reshape(0, int(doc.get('vocab_size', 2)))
        if 'vocab_size' in doc and logp.shape[1] != int(doc['vocab_size']):
            raise ValueError(f'{logp.shape[1]} columns, header says {doc["vocab_size"]}')
        return Posteriorgram(doc['utt_id'], doc['unit_set_id'], float(doc['frame_period_s']), logp)
    except (UnicodeDecodeError, ValueError, KeyError, TypeError, IndexError) as err:
        raise BadFormat(f'{path}: not a posteriorgram file ({err})') from err


def read_pgram(path) -> Posteriorgram:
    """Read a binary or JSON posteriorgram and check its invariants."""
    with open(path, 'rb') as file:
        raw = file.read()
    try:
        if raw.startswith(PGRAM_MAGIC):
            pg = _read_binary(raw, path)
        elif raw.lstrip().startswith(b'{'):
            pg = _read_json(raw, path)
        else:
            raise BadFormat(f'{path}: bad magic')
        pg.validate()
    except BadFormat as ex:
        LOG.error(ex)
        raise
    LOG.debug('Read posteriorgram %s: %d frames x %d units', pg.utt_id, pg.num_frames, pg.vocab_size)
    return pg


# -----------------------------------------------------------------------------
# greedy and viterbi
# -----------------------------------------------------------------------------

def ctc_collapse(path: Sequence[int], blank: int = BLANK_INDEX) -> List[int]:
    """Merge runs, then drop blanks."""
    out = []
    prev = None
    for unit in path:
        if unit != prev and unit != blank:
            out.append(int(unit))
        prev = unit
    return out


def greedy_path(pg: Posteriorgram) -> Tuple[List[int], np.ndarray]:
    """Collapsed label sequence of the per-frame argmax, and the argmax itself."""
    if pg.num_frames == 0:
        return [], np.zeros(0, dtype=np.int64)
    best = np.argmax(pg.logp, axis=1)
    return ctc_collapse(best.tolist()), best


def expand_labels(tokens: Sequence[int], blank: int = BLANK_INDEX) -> List[int]:
    """Blank-interleaved CTC state sequence: blk t1 blk t2 ... tn blk."""
    ext = [blank]
    for tok in tokens:
        ext.extend((int(tok), blank))
    return ext


def min_frames(tokens: Sequence[int]) -> int:
    """Fewest frames a CTC path spelling ``tokens`` can have."""
    repeats = sum(1 for a, b in zip(tokens, tokens[1:]) if a == b)
    return len(tokens) + repeats


def _skip_mask(ext: Sequence[int], blank: int) -> np.ndarray:
    ext = np.asarray(ext)
    mask = np.zeros(len(ext), dtype=bool)
    if len(ext) > 2:
        mask[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    return mask


def _viterbi(logp: np.ndarray, tokens: Sequence[int], blank: int = BLANK_INDEX):
    """Best CTC path through ``logp`` (float64, T x V) spelling ``tokens``.

    :return: (log score, state index per frame)
    """
    num_frames = logp.shape[0]
    if min_frames(tokens) > num_frames:
        raise AlignmentInfeasible(f'{len(tokens)} tokens need {min_frames(tokens)} frames, got {num_frames}')
    if not tokens:
        return float(logp[:, blank].sum()), np.zeros(num_frames, dtype=np.int64)

    ext = expand_labels(tokens, blank)
    num_states = len(ext)
    emit = logp[:, ext]
    skip = _skip_mask(ext, blank)
    neg = np.full(num_states, -np.inf)

    delta = neg.copy()
    delta[:2] = emit[0, :2]
    back = np.zeros((num_frames, num_states), dtype=np.int64)
    for t in range(1, num_frames):
        stay = delta
        step = np.concatenate(([-np.inf], delta[:-1]))
        jump = np.where(skip, np.concatenate(([-np.inf, -np.inf], delta[:-2])), -np.inf)
        cand = np.stack((stay, step, jump))
        choice = np.argmax(cand, axis=0)
        back[t] = choice
        delta = cand[choice, np.arange(num_states)] + emit[t]

    last = num_states - 1 if delta[-1] >= delta[-2] else num_states - 2
    score = float(delta[last])
    states = np.zeros(num_frames, dtype=np.int64)
    state = last
    for t in range(num_frames - 1, -1, -1):
        states[t] = state
        state -= int(back[t, state])
    return score, states


def viterbi_score(pg: Posteriorgram, tokens: Sequence[int]) -> float:
    """Log score of the best single CTC path spelling ``tokens``."""
    score, _ = _viterbi(pg.log_matrix(), list(tokens))
    return score


def align_viterbi(pg: Posteriorgram, tokens: Sequence[int]) -> List[TokenSpan]:
    """
    Frame span and CTC peak of every token in the best alignment.

    :raises AlignmentInfeasible: if ``tokens`` cannot fit in ``pg``
    """
    tokens = list(tokens)
    logp = pg.log_matrix()
    try:
        _, states = _viterbi(logp, tokens)
    except AlignmentInfeasible as ex:
        LOG.error('%s: %s', pg.utt_id, ex)
        raise

    spans = []
    for k, tok in enumerate(tokens):
        frames = np.flatnonzero(states == 2 * k + 1)
        start, end = int(frames[0]), int(frames[-1]) + 1
        peak = start + int(np.argmax(logp[start:end, tok]))
        spans.append(TokenSpan(tok, start, end, peak, float(logp[peak, tok])))
    return spans


# -----------------------------------------------------------------------------
# synthetic posteriorgrams
# -----------------------------------------------------------------------------

@dataclass
class SynthConfig:
    """Layout and noise of synthetic posteriorgrams.

    ``confusion`` maps a unit id (the blank included) to weighted partner ids
    receiving the noise mass.
    """
    frames_per_token: int = 4
    blank_gap: int = 5
    noise: float = 0.0
    confusion: Optional[Dict[int, List[Tuple[int, float]]]] = None
    seed: int = 0
    frame_period_s: float = DEFAULT_FRAME_PERIOD

    def __post_init__(self):
        if self.frames_per_token < 1:
            raise ValueError('frames_per_token must be >= 1')
        if self.blank_gap < 0:
            raise ValueError('blank_gap must be >= 0')
        if not 0.0 <= self.noise < 1.0:
            raise ValueError('noise must be in [0, 1)')


def synth_layout(transcript: Sequence[int], cfg: SynthConfig) -> Tuple[List[Tuple[int, int]], int]:
    """Token frame spans [start, end) of a synthetic utterance and its frame count."""
    spans = []
    frame = cfg.blank_gap
    prev = None
    for tok in transcript:
        if cfg.blank_gap == 0 and tok == prev:
            frame += 1
        spans.append((frame, frame + cfg.frames_per_token))
        frame += cfg.frames_per_token + cfg.blank_gap
        prev = tok
    if not transcript:
        frame = 2 * cfg.blank_gap
    return spans, frame


def _noise_row(target: int, vocab: int, cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    probs = np.zeros(vocab)
    partners = cfg.confusion.get(target) if cfg.confusion else None
    if partners:
        weights = np.array([w for _, w in partners], dtype=np.float64)
        if len(partners) > 1:
            weights *= rng.uniform(1.0 - PARTNER_JITTER, 1.0 + PARTNER_JITTER, size=len(partners))
        for (unit, _), weight in zip(partners, weights / weights.sum()):
            probs[unit] += cfg.noise * weight
    else:
        probs[:] = cfg.noise / (vocab - 1)
        probs[target] = 0.0
    probs[target] += 1.0 - cfg.noise
    return probs


def synth_generate(transcript: Sequence[int], unit_set: UnitSet, cfg: SynthConfig, utt_id: str = '',
                   seed=None) -> Posteriorgram:
    """
    Synthetic posteriorgram standing in for the acoustic model.

    Layout: b blank frames, then per token d token frames each followed by b
    blank frames. Every frame puts 1 - noise on its target (the blank in the
    gaps) and spreads the noise over the target's confusion partners by weight,
    or uniformly over all other units when it has none. With several partners
    the weights are scaled by a seeded factor per token.

    :param seed: overrides ``cfg.seed``; anything ``numpy.random.default_rng`` accepts
    """
    vocab = len(unit_set)
    for position, tok in enumerate(transcript):
        if tok == unit_set.blank_index or not 0 <= tok < vocab:
            ex = InvalidTranscript(f'{utt_id}: invalid token {tok} at position {position}')
            LOG.error(ex)
            raise ex

    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    spans, num_frames = synth_layout(transcript, cfg)
    if cfg.noise > 0:
        probs = np.tile(_noise_row(unit_set.blank_index, vocab, cfg, rng), (num_frames, 1))
    else:
        probs = np.zeros((num_frames, vocab))
        probs[:, unit_set.blank_index] = 1.0
    for tok, (start, end) in zip(transcript, spans):
        if cfg.noise > 0:
            probs[start:end] = _noise_row(tok, vocab, cfg, rng)
        else:
            probs[start:end] = 0.0
            probs[start:end, tok] = 1.0

    with np.errstate(divide='ignore'):
        logp = np.maximum(np.log(probs), LOG_ZERO)
    return Posteriorgram(utt_id, unit_set.id, cfg.frame_period_s, logp)


def load_confusion(path, unit_set: UnitSet) -> Dict[int, List[Tuple[int, float]]]:
    """Read a confusion table TSV ``unit<TAB>partner<TAB>weight`` into unit ids."""
    table: Dict[int, List[Tuple[int, float]]] = {}
    for lineno, row in read_tsv(path, 3):
        try:
            weight = float(row[2])
        except ValueError as err:
            raise BadFormat(f'{path}:{lineno}: bad weight "{row[2]}"') from err
        if weight <= 0:
            raise BadFormat(f'{path}:{lineno}: weight must be positive')
        table.setdefault(unit_set.index(row[0]), []).append((unit_set.index(row[1]), weight))
    return table


def confusion_from_strings(table: Mapping[str, Sequence[Tuple[str, float]]],
                           unit_set: UnitSet) -> Dict[int, List[Tuple[int, float]]]:
    """Map a confusion table over unit strings onto unit ids."""
    return {unit_set.index(unit): [(unit_set.index(p), float(w)) for p, w in partners]
            for unit, partners in table.items()}
