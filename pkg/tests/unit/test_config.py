"""test_config.py: Tests for the ```Config``` and ```PipelineConfig``` classes.


Author -- KWS team
Created on -- 3/25/24 02:30 PM

Tests for config files with parents, include-tags and command-line
overrides, and for the typed pipeline sections built from them.


=======  ==========  =================  ================================
Version  Date        Author             Description
=======  ==========  =================  ================================

"""

import os
import json
import tempfile
from pathlib import Path
from unittest import TestCase
from unittest.mock import patch

import yaml

from kwspot.config import Config, PipelineConfig
from kwspot.constants import ENV_CONFIG_NAME
from kwspot.exceptions import ConfigError, BadFormat
from kwspot.kws import Stage
from kwspot._utils import extract_named_args, try_to_number, evaluate, log_add, read_tsv


class TestConfig(TestCase):

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self._tmp.cleanup)
        self.dir = Path(self._tmp.name)

    def _write(self, name, values):
        path = self.dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as file:
            if path.suffix == '.json':
                json.dump(values, file)
            else:
                yaml.safe_dump(values, file, sort_keys=False)
        return path

    def test_simple_config(self):
        path = self._write('config.yaml', {'seed': 3, 'beam': {'beam_size': 4}})
        cfg = Config(str(path))
        self.assertEqual(cfg.seed, 3)
        self.assertEqual(cfg['beam'], {'beam_size': 4})
        self.assertEqual(cfg.get('jobs', 1), 1)
        self.assertIn('beam', cfg)
        self.assertNotIn('bias', cfg)

    def test_missing_attribute(self):
        cfg = Config.from_values({'seed': 1})
        with self.assertRaises(AttributeError):
            _ = cfg.jobs
        with self.assertRaises(KeyError):
            _ = cfg['jobs']

    def test_parent_config(self):
        self._write('base/base.json', {'seed': 1, 'beam': {'beam_size': 4, 'nbest': 4}, 'jobs': 2})
        path = self._write('child.yaml', {'parent': 'base/base.json', 'seed': 5, 'beam': {'nbest': 2}})
        cfg = Config(str(path))
        self.assertEqual(cfg.as_dict(), {'seed': 5, 'jobs': 2, 'beam': {'beam_size': 4, 'nbest': 2}})

    def test_include_config(self):
        self._write('sections/kws.yaml', {'window_pad': 2, 'stages_enabled': ['char']})
        path = self._write('config.yaml', {'kws': 'include::sections/kws.yaml', 'beam': {'nbest': 3}})
        cfg = Config(str(path))
        self.assertEqual(cfg.kws, {'window_pad': 2, 'stages_enabled': ['char']})

    def test_file_not_exists(self):
        with self.assertRaises(ConfigError):
            Config(str(self.dir / 'missing.yaml'))

    def test_unknown_suffix(self):
        path = self.dir / 'config.ini'
        path.write_text('[beam]\n', encoding='utf-8')
        with self.assertRaises(ConfigError):
            Config(str(path))

    def test_non_mapping(self):
        path = self.dir / 'config.yaml'
        path.write_text('- 1\n- 2\n', encoding='utf-8')
        with self.assertRaises(ConfigError):
            Config(str(path))

    def test_init_env(self):
        path = self._write('env.yaml', {'seed': 9})
        with patch.dict(os.environ, {ENV_CONFIG_NAME: str(path)}):
            cfg = Config()
        self.assertEqual(cfg.seed, 9)

    def test_init_default_file(self):
        path = self._write('default.yaml', {'seed': 11})
        env = {k: v for k, v in os.environ.items() if k != ENV_CONFIG_NAME}
        with patch.dict(os.environ, env, clear=True), patch('kwspot.config.DEFAULT_CONFIG_PATH', str(path)):
            cfg = Config()
        self.assertEqual(cfg.seed, 11)

    def test_overrides(self):
        path = self._write('config.yaml', {'seed': 1, 'beam': {'beam_size': 4}, 'kws': {'stages_enabled': ['char']}})
        cfg = Config(str(path), overrides=['--seed', '7', '--beam.beam_size', '12', '--beam.lm_weight', '0.5',
                                           '--kws.stages_enabled', "['char', 'fuzzy']", '--bias.beta', '2',
                                           '--synth.noise', '0.1', '--beam.bias_enabled', 'False'])
        self.assertEqual(cfg.seed, 7)
        self.assertEqual(cfg.beam, {'beam_size': 12, 'lm_weight': 0.5, 'bias_enabled': False})
        self.assertEqual(cfg.kws['stages_enabled'], ['char', 'fuzzy'])
        self.assertEqual(cfg.bias, {'beta': 2})
        self.assertEqual(cfg.synth, {'noise': 0.1})

    def test_override_quoted_string(self):
        cfg = Config.from_values({'eval': {}}, overrides=['--eval.overlap', '"fraction"'])
        self.assertEqual(cfg.eval, {'overlap': 'fraction'})

    def test_from_values_copies(self):
        values = {'beam': {'beam_size': 4}}
        cfg = Config.from_values(values, overrides=['--beam.beam_size', '8'])
        self.assertEqual(values, {'beam': {'beam_size': 4}})
        self.assertEqual(cfg.beam, {'beam_size': 8})

    def test_save_to(self):
        cfg = Config.from_values({'seed': 2, 'kws': {'window_pad': 3}})
        for suffix in ('.json', '.yaml'):
            target = self.dir / f'saved{suffix}'
            cfg.save_to(str(target))
            self.assertEqual(Config(str(target)).as_dict(), cfg.as_dict())


class TestPipelineConfig(TestCase):

    def test_defaults(self):
        pipeline = PipelineConfig.from_config(Config.from_values({}))
        self.assertEqual(pipeline.beam.beam_size, 10)
        self.assertEqual(pipeline.kws.stages_enabled, frozenset(Stage))
        self.assertEqual(pipeline.kws.decision_threshold, -5.0)
        self.assertEqual(pipeline.eval.atwv_beta, 999.9)
        self.assertEqual(pipeline.synth.blank_gap, 5)
        self.assertEqual(pipeline.jobs, 1)

    def test_default_file_matches_defaults(self):
        path = Path(__file__).resolve().parents[2] / 'configs' / 'default.yaml'
        pipeline = PipelineConfig.from_config(Config(str(path)), path.parent)
        self.assertEqual(pipeline, PipelineConfig())

    def test_sections(self):
        cfg = Config.from_values({'seed': 4, 'jobs': 3, 'kws': {'stages_enabled': ['char', 'fuzzy']},
                                  'beam': {'nbest': 5, 'token_topk': 3}, 'eval': {'total_speech_s': 60}})
        pipeline = PipelineConfig.from_config(cfg)
        self.assertEqual(pipeline.kws.stages_enabled, frozenset({Stage.CHAR, Stage.FUZZY}))
        self.assertEqual(pipeline.beam.nbest, 5)
        self.assertEqual(pipeline.beam.token_topk, 3)
        self.assertEqual(pipeline.eval.total_speech_s, 60)
        self.assertEqual(pipeline.seed, 4)
        self.assertEqual(pipeline.synth.seed, 4)
        self.assertEqual(pipeline.jobs, 3)

    def test_relative_paths(self):
        cfg = Config.from_values({'paths': {'lexicon': 'lexicon.tsv', 'char_units': '/abs/chars.txt'}})
        pipeline = PipelineConfig.from_config(cfg, base_dir='/data/kws')
        self.assertEqual(pipeline.paths.lexicon, str(Path('/data/kws') / 'lexicon.tsv'))
        self.assertEqual(pipeline.paths.char_units, '/abs/chars.txt')
        self.assertIsNone(pipeline.paths.syll_lm)

    def test_invalid_sections(self):
        invalid = [{'beam': {'beam_width': 3}}, {'kws': {'stages_enabled': ['phone']}}, {'bias': {'chunk_len': 0}},
                   {'paths': {'lm': 'x.arpa'}}, {'jobs': 0}, {'synth': {'noise': 1.0}}]
        for values in invalid:
            with self.subTest(values=values), self.assertRaises(ConfigError):
                PipelineConfig.from_config(Config.from_values(values))


class TestUtils(TestCase):

    def test_extract_named_args(self):
        self.assertEqual(extract_named_args(['--a.b', '1', '--flag', '--c', 'x', 'y']),
                         {'--a.b': '1', '--flag': None, '--c': 'x'})

    def test_try_to_number(self):
        self.assertEqual(try_to_number('3'), 3)
        self.assertEqual(try_to_number('0.25'), 0.25)
        self.assertEqual(try_to_number('abc'), 'abc')
        self.assertIsNone(try_to_number(None))

    def test_evaluate(self):
        self.assertEqual(evaluate('[1, 2]'), [1, 2])
        self.assertEqual(evaluate('True'), True)
        self.assertEqual(evaluate('midpoint'), 'midpoint')
        self.assertEqual(evaluate(3), 3)

    def test_log_add(self):
        self.assertAlmostEqual(log_add(0.0, 0.0), 0.6931471805599453)
        self.assertEqual(log_add(-float('inf'), -2.0), -2.0)
        self.assertEqual(log_add(-float('inf'), -float('inf')), -float('inf'))

    def test_read_tsv(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'rows.tsv'
            path.write_text('# comment\na\tb\n\nc\td\te\n', encoding='utf-8')
            self.assertEqual(list(read_tsv(path, 2)), [(2, ['a', 'b']), (4, ['c', 'd', 'e'])])
            path.write_text('a\n', encoding='utf-8')
            with self.assertRaises(BadFormat):
                list(read_tsv(path, 2))
