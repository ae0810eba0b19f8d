"""test_kws.py: Tests for keyword matching, scoring and merging.


Author -- KWS team
Created on -- 3/24/24 03:40 PM


=======  ==========  =================  ================================
Version  Date        Author             Description
=======  ==========  =================  ================================

"""

import math
import tempfile
from pathlib import Path
from unittest import TestCase

import numpy as np
from hypothesis import assume, given, settings, strategies as st

from kwspot.decoder import NBestEntry, greedy_nbest
from kwspot.exceptions import AlignmentInfeasible, BadFormat, InvalidKeyword, OutOfVocabulary
from kwspot.kws import (Stage, Keyword, Hit, KwsConfig, Match, make_keyword, load_keywords, write_keywords,
                        match_exact, match_fuzzy, score_ctc, locate_window, normalize, merge_stages, detect,
                        write_hits, read_hits)
from kwspot.phonetics import CostTable
from kwspot.posteriorgram import Posteriorgram, SynthConfig, TokenSpan, synth_generate, min_frames
from kwspot.units import tokenize_chars, syllabify
from tests import _samples, _utils


def _entry(tokens, spans=None):
    return NBestEntry(tuple(tokens), '', 0.0, 0.0, 0.0, 0.0, spans or [])


def _hit(kw_id, stage, start, end, norm, utt_id='u1', decision=True):
    return Hit(utt_id, kw_id, stage, start, end, start * 0.04, end * 0.04, norm * 2, norm, 0, decision)


class TestKeyword(TestCase):

    def setUp(self):
        self.char_set = _samples.get_char_set()
        self.syll_set = _samples.get_syll_set()
        self.lexicon = _samples.get_lexicon()

    def test_make_keyword(self):
        kw = make_keyword('kw01', '张三', self.char_set, self.lexicon, self.syll_set)
        self.assertEqual(kw.char_units, tuple(self.char_set.ids(['张', '三'])))
        self.assertEqual(kw.syll_units, tuple(self.syll_set.ids(['zhang1', 'san1'])))

    def test_empty_keyword(self):
        with self.assertRaises(InvalidKeyword):
            Keyword('kw', '', (), ())

    def test_oov_keyword(self):
        with self.assertRaises(OutOfVocabulary):
            make_keyword('kw', '张飞', self.char_set, self.lexicon, self.syll_set)

    def test_keywords_io(self):
        keywords = _samples.get_keywords(self.char_set, self.syll_set)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'keywords.tsv'
            write_keywords(keywords, path)
            self.assertEqual(load_keywords(path, self.char_set, self.lexicon, self.syll_set), keywords)

    def test_duplicate_keyword_id(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'keywords.tsv'
            path.write_text('kw01\t张三\nkw01\t李四\n', encoding='utf-8')
            with self.assertRaises(BadFormat):
                load_keywords(path, self.char_set, self.lexicon, self.syll_set)


class TestMatching(TestCase):

    def setUp(self):
        self.char_set = _samples.get_char_set()
        self.lexicon = _samples.get_lexicon()
        self.keyword = _samples.get_keywords(self.char_set)[0]
        self.costs = CostTable()

    def _hyp(self, text):
        return _entry(tokenize_chars(text, self.char_set))

    def test_exact(self):
        nbest = [_entry([1, 2, 3, 1, 2]), _entry([4, 1, 2]), _entry([2, 1])]
        self.assertEqual(match_exact(nbest, (1, 2)), [Match(0, 0, 2), Match(0, 3, 5), Match(1, 1, 3)])
        self.assertEqual(match_exact(nbest, (5,)), [])
        self.assertEqual(match_exact(nbest, ()), [])

    def test_exact_longer_than_hypothesis(self):
        self.assertEqual(match_exact([_entry([1])], (1, 2)), [])

    def test_fuzzy_tone_variant(self):
        nbest = [self._hyp('李张伞')]
        matches = match_fuzzy(nbest, self.keyword, self.lexicon, self.char_set, self.costs, 0.5)
        self.assertEqual(len(matches), 1)
        self.assertEqual(matches[0][:3], (0, 1, 3))
        self.assertAlmostEqual(matches[0].distance, 0.1)

        self.assertEqual(match_fuzzy(nbest, self.keyword, self.lexicon, self.char_set, self.costs, 0.05), [])

    def test_fuzzy_initial_and_tone(self):
        nbest = [self._hyp('北京'), self._hyp('脏伞')]
        matches = match_fuzzy(nbest, self.keyword, self.lexicon, self.char_set, self.costs, 0.5)
        self.assertEqual([m[:3] for m in matches], [(1, 0, 2)])
        self.assertAlmostEqual(matches[0].distance, 0.35)
        self.assertEqual(match_fuzzy(nbest, self.keyword, self.lexicon, self.char_set, self.costs, 0.1), [])

    def test_fuzzy_skips_exact_window(self):
        nbest = [self._hyp('张三')]
        self.assertEqual(match_fuzzy(nbest, self.keyword, self.lexicon, self.char_set, self.costs, 1.0), [])
        self.assertEqual(len(match_exact(nbest, self.keyword.char_units)), 1)

    def test_fuzzy_zero_threshold(self):
        nbest = [self._hyp('张伞章三')]
        self.assertEqual(match_fuzzy(nbest, self.keyword, self.lexicon, self.char_set, self.costs, 0.0), [])

    def test_fuzzy_tone_suite(self):
        variants = {'kw01': '张伞', 'kw03': '中果', 'kw04': '上孩', 'kw06': '今田', 'kw07': '天七'}
        keywords = {kw.id: kw for kw in _samples.get_keywords(self.char_set)}
        rng = np.random.default_rng(8)
        filler = [c for c in _samples.CHARS if c not in '张伞中果上孩今田天七']
        for idx in range(50):
            kw_id = sorted(variants)[idx % len(variants)]
            prefix = ''.join(rng.choice(filler, size=int(rng.integers(0, 4))))
            suffix = ''.join(rng.choice(filler, size=int(rng.integers(0, 4))))
            nbest = [self._hyp(prefix + variants[kw_id] + suffix)]
            position = (0, len(prefix), len(prefix) + 2)
            with self.subTest(utterance=idx, keyword=kw_id):
                accepted = match_fuzzy(nbest, keywords[kw_id], self.lexicon, self.char_set, self.costs, 0.5)
                self.assertIn(position, [m[:3] for m in accepted])
                self.assertAlmostEqual(next(m.distance for m in accepted if m[:3] == position), 0.1)
                rejected = match_fuzzy(nbest, keywords[kw_id], self.lexicon, self.char_set, self.costs, 0.1)
                self.assertNotIn(position, [m[:3] for m in rejected])

    def test_fuzzy_homophone(self):
        matches = match_fuzzy([self._hyp('章三')], self.keyword, self.lexicon, self.char_set, self.costs, 0.5)
        self.assertEqual(matches, [Match(0, 0, 2, 0.0)])


class TestScoring(TestCase):

    def test_worked_example(self):
        logp = np.log(np.array([[0.3, 0.7], [0.3, 0.7]]))
        pg = Posteriorgram('utt', 'rand', 0.04, logp)
        self.assertAlmostEqual(score_ctc(pg, [1], (0, 2)), math.log(0.91), places=5)
        self.assertAlmostEqual(score_ctc(pg, [1], (1, 2)), math.log(0.7), places=5)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 6), st.integers(2, 4), st.integers(0, 2 ** 31 - 1), st.data())
    def test_brute_force(self, num_frames, vocab, seed, data):
        units = data.draw(st.lists(st.integers(1, vocab - 1), min_size=1, max_size=3))
        assume(min_frames(units) <= num_frames)
        pg = _utils.random_pgram(np.random.default_rng(seed), num_frames, vocab)
        start = data.draw(st.integers(0, num_frames - min_frames(units)))
        expected = _utils.brute_force_score(pg.log_matrix()[start:], units)
        self.assertAlmostEqual(score_ctc(pg, units, (start, num_frames)), expected,
                               delta=1e-9 * max(1.0, abs(expected)))

    def test_infeasible(self):
        pg = _utils.one_hot_pgram([1, 0], 3)
        with self.assertRaises(AlignmentInfeasible):
            score_ctc(pg, [1, 1], (0, 2))
        with self.assertRaises(AlignmentInfeasible):
            score_ctc(pg, [1, 2], (1, 2))

    def test_bad_window(self):
        pg = _utils.one_hot_pgram([1, 0], 3)
        with self.assertRaises(ValueError):
            score_ctc(pg, [1], (0, 3))
        with self.assertRaises(InvalidKeyword):
            score_ctc(pg, [], (0, 2))

    def test_locate_window(self):
        spans = [TokenSpan(1, 5, 9, 6, 0.0), TokenSpan(2, 14, 18, 15, 0.0), TokenSpan(3, 23, 27, 24, 0.0)]
        self.assertEqual(locate_window(0, 2, spans, 5, 100), (0, 23))
        self.assertEqual(locate_window(1, 3, spans, 3, 100), (11, 30))
        self.assertEqual(locate_window(2, 3, spans, 5, 29), (18, 29))
        self.assertEqual(locate_window(1, 2, spans, 0, 100), (14, 18))

    def test_normalize(self):
        self.assertEqual(normalize(-6.0, 3), -2.0)
        self.assertEqual(normalize(0.0, 1), 0.0)
        with self.assertRaises(ValueError):
            normalize(-1.0, 0)


class TestMerge(TestCase):

    def test_merge(self):
        hits = [_hit('kw01', Stage.CHAR, 5, 13, -1.0), _hit('kw01', Stage.FUZZY, 8, 16, -0.5),
                _hit('kw01', Stage.SYLLABLE, 30, 38, -2.0), _hit('kw02', Stage.CHAR, 5, 13, -3.0),
                _hit('kw01', Stage.CHAR, 5, 13, -1.0, utt_id='u2')]
        merged = merge_stages(hits)
        self.assertEqual([(h.utt_id, h.kw_id, h.stage, h.start_frame) for h in merged],
                         [('u1', 'kw01', Stage.FUZZY, 8), ('u1', 'kw01', Stage.SYLLABLE, 30),
                          ('u1', 'kw02', Stage.CHAR, 5), ('u2', 'kw01', Stage.CHAR, 5)])
        self.assertEqual(merge_stages(merged), merged)

    def test_touching_spans_do_not_overlap(self):
        hits = [_hit('kw01', Stage.CHAR, 5, 13, -1.0), _hit('kw01', Stage.CHAR, 13, 20, -2.0)]
        self.assertEqual(len(merge_stages(hits)), 2)

    def test_tie_prefers_char(self):
        hits = [_hit('kw01', Stage.SYLLABLE, 5, 13, -1.0), _hit('kw01', Stage.CHAR, 6, 13, -1.0)]
        merged = merge_stages(hits)
        self.assertEqual([h.stage for h in merged], [Stage.CHAR])

    def test_empty(self):
        self.assertEqual(merge_stages([]), [])


class TestDetect(TestCase):

    def setUp(self):
        self.char_set = _samples.get_char_set()
        self.syll_set = _samples.get_syll_set()
        self.lexicon = _samples.get_lexicon()
        self.keywords = _samples.get_keywords(self.char_set, self.syll_set)
        self.costs = CostTable()

    def _utterance(self, text, noise=0.0, seed=0):
        cfg = SynthConfig(noise=noise)
        pg_char = synth_generate(tokenize_chars(text, self.char_set), self.char_set, cfg, 'utt', seed=seed)
        pg_syll = synth_generate(syllabify(text, self.lexicon, self.syll_set), self.syll_set, cfg, 'utt',
                                 seed=seed + 1)
        return pg_char, greedy_nbest(pg_char, self.char_set), pg_syll, greedy_nbest(pg_syll, self.syll_set)

    def _detect(self, utterance, cfg):
        pg_char, nbest_char, pg_syll, nbest_syll = utterance
        return detect('utt', pg_char, nbest_char, self.keywords, self.lexicon, self.char_set, self.costs, cfg,
                      pg_syll, nbest_syll)

    def test_noiseless(self):
        hits = self._detect(self._utterance('李四张三南方'), KwsConfig())
        accepted = [h for h in hits if h.decision]
        self.assertEqual([(h.kw_id, h.stage, h.start_frame, h.end_frame) for h in accepted],
                         [('kw01', Stage.CHAR, 23, 36), ('kw02', Stage.CHAR, 5, 18), ('kw09', Stage.CHAR, 41, 54)])
        for hit in accepted:
            self.assertAlmostEqual(hit.norm_score, 0.0, places=4)
            self.assertEqual(hit.hyp_rank, 0)
            self.assertAlmostEqual(hit.start_s, hit.start_frame * 0.04)

    def test_stages(self):
        utterance = self._utterance('李四张三南方')
        char_only = self._detect(utterance, KwsConfig(stages_enabled={'char'}))
        self.assertEqual({h.stage for h in char_only}, {Stage.CHAR})
        syll_only = self._detect(utterance, KwsConfig(stages_enabled={'syllable'}))
        self.assertEqual({h.stage for h in syll_only}, {Stage.SYLLABLE})
        self.assertEqual(sorted(h.kw_id for h in syll_only if h.decision), ['kw01', 'kw02', 'kw09'])

    def test_syllable_stage_needs_inputs(self):
        pg_char, nbest_char, _, _ = self._utterance('李四张三南方')
        hits = detect('utt', pg_char, nbest_char, self.keywords, self.lexicon, self.char_set, self.costs,
                      KwsConfig(stages_enabled={'syllable'}))
        self.assertEqual(hits, [])

    def test_fuzzy_hit(self):
        hits = self._detect(self._utterance('李四章三'), KwsConfig(stages_enabled={'fuzzy'}))
        fuzzy = [h for h in hits if h.kw_id == 'kw01']
        self.assertEqual(len(fuzzy), 1)
        self.assertEqual((fuzzy[0].start_frame, fuzzy[0].end_frame), (23, 36))
        self.assertFalse(fuzzy[0].decision)

    def test_decision_threshold(self):
        utterance = self._utterance('今天天气南方大学学生', noise=0.3, seed=3)
        by_threshold = {theta: self._detect(utterance, KwsConfig(decision_threshold=theta))
                        for theta in (-20.0, -5.0, -1.0, -0.1)}
        reference = by_threshold[-20.0]
        for theta, hits in by_threshold.items():
            self.assertEqual([(h.kw_id, h.start_frame, h.norm_score) for h in hits],
                             [(h.kw_id, h.start_frame, h.norm_score) for h in reference])
            self.assertEqual([h.decision for h in hits], [h.norm_score >= theta for h in hits])

    def test_raw_score(self):
        utterance = self._utterance('今天天气', noise=0.3, seed=5)
        hits = self._detect(utterance, KwsConfig(length_norm=False))
        self.assertTrue(hits)
        for hit in hits:
            self.assertEqual(hit.norm_score, hit.raw_log_S)

    def test_best_hypothesis_only(self):
        pg_char, _, _, _ = self._utterance('张三')
        second = _entry(self.keywords[1].char_units, [TokenSpan(u, 5 + 9 * i, 9 + 9 * i, 6 + 9 * i, 0.0)
                                                      for i, u in enumerate(self.keywords[1].char_units)])
        nbest = greedy_nbest(pg_char, self.char_set) + [second]
        cfg = KwsConfig(stages_enabled={'char'})
        hits = detect('utt', pg_char, nbest, self.keywords, self.lexicon, self.char_set, self.costs, cfg)
        self.assertEqual(sorted((h.kw_id, h.hyp_rank) for h in hits), [('kw01', 0), ('kw02', 1)])

        cfg = KwsConfig(stages_enabled={'char'}, nbest_matching=False)
        hits = detect('utt', pg_char, nbest, self.keywords, self.lexicon, self.char_set, self.costs, cfg)
        self.assertEqual([(h.kw_id, h.hyp_rank) for h in hits], [('kw01', 0)])

    def test_infeasible_candidate_skipped(self):
        tian = self.char_set.index('天')
        keyword = make_keyword('kwx', '天天', self.char_set, self.lexicon, _samples.get_syll_set())
        pg = _utils.one_hot_pgram([tian, tian], len(self.char_set))
        nbest = [_entry([tian, tian], [TokenSpan(tian, 0, 1, 0, 0.0), TokenSpan(tian, 1, 2, 1, 0.0)])]
        with self.assertLogs('KWS', 'WARNING'):
            hits = detect('utt', pg, nbest, [keyword], self.lexicon, self.char_set, self.costs,
                          KwsConfig(window_pad=0, stages_enabled={'char'}))
        self.assertEqual(hits, [])

    def test_config_validation(self):
        with self.assertRaises(ValueError):
            KwsConfig(fuzzy_threshold=1.5)
        with self.assertRaises(ValueError):
            KwsConfig(window_pad=-1)
        with self.assertRaises(ValueError):
            KwsConfig(stages_enabled={'phone'})


class TestHitsIO(TestCase):

    def test_round_trip(self):
        hits = [_hit('kw01', Stage.CHAR, 5, 13, -0.123456789), _hit('kw02', Stage.FUZZY, 20, 28, -7.5, decision=False)]
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'hits.tsv'
            write_hits(hits, path)
            loaded = read_hits(path)

        self.assertEqual([(h.utt_id, h.kw_id, h.stage, h.decision) for h in loaded],
                         [('u1', 'kw01', Stage.CHAR, True), ('u1', 'kw02', Stage.FUZZY, False)])
        self.assertAlmostEqual(loaded[0].norm_score, -0.123457, places=6)
        self.assertAlmostEqual(loaded[1].start_s, 0.8)
        self.assertEqual(loaded[0].start_frame, -1)

    def test_bad_rows(self):
        rows = ['u1\tkw01\t0.2\t0.5\t-1.0\tyes\tchar\n', 'u1\tkw01\t0.2\t0.5\tnan\t1\tchar\n',
                'u1\tkw01\t0.2\t0.5\t-1.0\t1\tphone\n', 'u1\tkw01\tabc\t0.5\t-1.0\t1\tchar\n']
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'hits.tsv'
            for row in rows:
                path.write_text(row, encoding='utf-8')
                with self.subTest(row=row), self.assertRaises(BadFormat):
                    read_hits(path)
