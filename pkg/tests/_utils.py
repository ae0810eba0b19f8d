"""_utils.py: Test utils.


Author -- KWS team
Created on -- 3/23/24 10:26 AM

Brute-force CTC oracles, random posteriorgrams and on-disk sample resources
for unit tests.


=======  ==========  =================  ================================
Version  Date        Author             Description
=======  ==========  =================  ================================

"""

import itertools
from pathlib import Path

import numpy as np
import yaml

from kwspot.posteriorgram import Posteriorgram, ctc_collapse
from kwspot.units import write_unit_set, write_lexicon
from kwspot.lm import write_arpa, space_tokens, train
from kwspot._utils import write_tsv
from tests import _samples


__all__ = ['path_sums', 'brute_force_score', 'brute_force_best', 'random_pgram', 'one_hot_pgram',
           'write_resources']


def _paths(logp):
    num_frames, vocab = logp.shape
    frames = np.arange(num_frames)
    for path in itertools.product(range(vocab), repeat=num_frames):
        yield tuple(ctc_collapse(path)), float(logp[frames, list(path)].sum())


def path_sums(logp):
    """Natural-log total probability of every collapsed label sequence."""
    sums = {}
    for labels, score in _paths(logp):
        sums[labels] = np.logaddexp(sums.get(labels, -np.inf), score)
    return sums


def brute_force_score(logp, units):
    """Natural-log sum over all paths collapsing to ``units``."""
    return path_sums(logp).get(tuple(units), -np.inf)


def brute_force_best(logp, units):
    """Log score of the single best path collapsing to ``units``."""
    best = -np.inf
    for labels, score in _paths(logp):
        if labels == tuple(units):
            best = max(best, score)
    return best


def random_pgram(rng, num_frames, vocab, utt_id='rand', unit_set_id='rand', alpha=1.0):
    probs = rng.dirichlet(np.full(vocab, alpha), size=num_frames)
    probs = np.maximum(probs, 1e-12)
    probs /= probs.sum(axis=1, keepdims=True)
    return Posteriorgram(utt_id, unit_set_id, 0.04, np.log(probs))


def one_hot_pgram(path, vocab, utt_id='utt', unit_set_id='chars', floor=-1e4):
    logp = np.full((len(path), vocab), floor)
    logp[np.arange(len(path)), list(path)] = 0.0
    return Posteriorgram(utt_id, unit_set_id, 0.04, logp)


def write_resources(directory, keywords=_samples.KEYWORDS, with_lms=True, with_confusion=True, extra=None):
    """
    Write the toy inventory (unit sets, lexicon, keywords, confusion tables,
    language models) into ``directory`` plus a ``config.yaml`` referencing them.

    :return: path of the config file
    """
    directory = Path(directory)
    char_set, syll_set, lexicon = _samples.get_char_set(), _samples.get_syll_set(), _samples.get_lexicon()
    write_unit_set(char_set, directory / 'chars.txt')
    write_unit_set(syll_set, directory / 'sylls.txt')
    write_lexicon(lexicon, directory / 'lexicon.tsv')
    write_tsv(directory / 'keywords.tsv', [list(kw) for kw in keywords])

    paths = {'char_units': 'chars.txt', 'syll_units': 'sylls.txt', 'lexicon': 'lexicon.tsv',
             'keywords': 'keywords.tsv'}
    if with_confusion:
        write_tsv(directory / 'char_confusion.tsv',
                  [[unit, partner, repr(weight)] for unit, partners in _samples.CHAR_CONFUSION.items()
                   for partner, weight in partners])
        write_tsv(directory / 'syll_confusion.tsv',
                  [[unit, partner, repr(weight)] for unit, partners in _samples.SYLL_CONFUSION.items()
                   for partner, weight in partners])
        paths.update(char_confusion='char_confusion.tsv', syll_confusion='syll_confusion.tsv')
    if with_lms:
        write_arpa(_samples.get_lm(), directory / 'char.arpa')
        syll_corpus = [' '.join(lexicon.primary(c) for c in line) for line in _samples.LM_CORPUS]
        write_arpa(train(syll_corpus, order=3, tokenize=space_tokens), directory / 'syll.arpa')
        paths.update(char_lm='char.arpa', syll_lm='syll.arpa')

    config = {'seed': 0, 'paths': paths}
    for section, values in (extra or {}).items():
        if isinstance(values, dict):
            config.setdefault(section, {}).update(values)
        else:
            config[section] = values
    with open(directory / 'config.yaml', 'w', encoding='utf-8') as file:
        yaml.safe_dump(config, file, allow_unicode=True)
    return directory / 'config.yaml'
