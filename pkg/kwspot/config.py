# -*- coding: utf-8 -*-
"""config.py: Configuration layer of kwspot.


Author -- KWS team
Created on -- 3/02/24 11:20 AM

``Config`` reads a JSON, JSON5 or YAML file, resolves parent files and
include-tags and applies command-line overrides. ``PipelineConfig`` maps the
resulting sections onto the typed configuration objects of the pipeline.


=======  ==========  =================  ================================
Version  Date        Author             Description
=======  ==========  =================  ================================
v0.1     3/02/24     KWS team           Taken over from the config tool.
v0.2     3/12/24     KWS team           Typed pipeline sections.
=======  ==========  =================  ================================
"""

import os
import copy
import logging
import dataclasses
from pathlib import Path
from typing import Optional

from .constants import ENV_CONFIG_NAME, PARENT_CONFIG_TAG, INCLUDE_TAG, DEFAULT_CONFIG_PATH
from .exceptions import ConfigError
from ._utils import extract_named_args, try_to_number, get_file_writer, get_file_loader, get_key, evaluate
from .decoder import BeamConfig, BiasConfig
from .evaluation import EvalConfig
from .kws import KwsConfig, Stage
from .posteriorgram import SynthConfig

__all__ = ['Config', 'PathsConfig', 'PipelineConfig']
LOG = logging.getLogger('Config')


class Config:
    """Config object from json/json5 or yaml file.

    Filename can be provided via constructor argument, environment variable
    'KWS_CONFIG' or if exists the default path 'configs/default.yaml' will be used.

    ### Parent file:
    A config file can specify a parent config from which it inherits. First,
    the parent file will be loaded (recursively) and afterward current entries
    override or are added to the parent config. The parent config is specified
    by a 'parent' tag at the toplevel of the config file.

    ### Include config
    By setting a value to a string starting with 'include::' followed a filename,
    the tool reads an additional config file and inserts its value replacing the
    include-string. The filename is relative to the including file.

    ### Overrides
    Arguments of the form '--section.key value' override single values.
    """

    def __init__(self, filename: str = None, overrides=None):
        """Create config object from json/json5 or yaml file.

        :param filename: optional;
            If passed read config from specified file.
        :param overrides: optional;
            List of unparsed command-line arguments ('--a.b', 'value', ...).
        """
        self._values = {}

        if filename is None:
            filename = os.getenv(ENV_CONFIG_NAME, None)
            if filename:
                LOG.debug('Load config from file %s, specified in environment variable.', filename)
            else:
                filename = DEFAULT_CONFIG_PATH
                LOG.debug('Load config from file from fallback path.')
        else:
            LOG.debug('Load config from file %s, specified in parameter.', filename)

        self._load_config_file(Path(filename))
        if overrides:
            self._override_from_commandline(overrides)

    @classmethod
    def from_values(cls, values, overrides=None, base_dir='.'):
        """Create config object from an in-memory mapping instead of a file.

        :param values: mapping of top-level names to values
        :param overrides: optional; list of unparsed command-line arguments
        :param base_dir: directory include-tags are resolved against
        """
        cfg = cls.__new__(cls)
        cfg._values = {}
        cfg._initialize_from_nvpairs(copy.deepcopy(dict(values)).items(), Path(base_dir) / '__memory__')
        if overrides:
            cfg._override_from_commandline(overrides)
        return cfg

    def _load_config_file(self, cfile):
        if not cfile.exists():
            ex = ConfigError(f'Configuration file {cfile} does not exist!')
            LOG.error(ex)
            raise ex

        loader = get_file_loader(cfile.suffix)
        with open(cfile, encoding='utf-8') as file:
            content = loader(file.read()) or {}
        if not isinstance(content, dict):
            ex = ConfigError(f'Configuration file {cfile} must hold a mapping at top level!')
            LOG.error(ex)
            raise ex
        self._initialize_from_nvpairs(content.items(), cfile)

    def _initialize_from_nvpairs(self, nv_pairs, cfile):
        for name, value in nv_pairs:
            if name == PARENT_CONFIG_TAG and value is not None:
                parent = cfile.parent / value
                LOG.debug('Load parent config: %s', parent)
                self._load_config_file(parent)
            else:
                self._set_attribute(name, value, cfile)

    def _include_value_rec(self, value, cfile):
        if isinstance(value, str) and value.startswith(INCLUDE_TAG):
            include = cfile.parent / value[len(INCLUDE_TAG):]
            LOG.debug('Include object: %s', include)
            loader = get_file_loader(include.suffix)
            with open(include, encoding='utf-8') as file:
                value = self._include_value_rec(loader(file.read()), include)

        elif isinstance(value, dict):
            for key, val in value.items():
                value[key] = self._include_value_rec(val, cfile)

        elif isinstance(value, list):
            for i, val in enumerate(value):
                value[i] = self._include_value_rec(val, cfile)

        return value

    def _set_attribute(self, name, value, cfile):
        if value is None:
            return
        value = self._include_value_rec(value, cfile)
        current = self._values.get(name)
        if isinstance(current, dict) and isinstance(value, dict):
            # sections merge key-wise so a child file can override single entries
            current.update(value)
        else:
            self._values[name] = value
        LOG.debug('CONFIG: %s=%s', name, value)

    def get(self, name, default=None):
        """
        Loads a toplevel value from the config.

        :param name: Name of the attribute to return
        :param default: Default value if 'name' was not found
        :return: A configuration value for 'name'
        """
        return self._values.get(name, default)

    def __getitem__(self, item):
        if item in self._values:
            return self._values[item]
        raise KeyError(item)

    def __getattr__(self, item):
        if item.startswith('_'):
            raise AttributeError(item)
        try:
            return self._values[item]
        except KeyError:
            raise AttributeError(item) from None

    def __contains__(self, item):
        return item in self._values

    def as_dict(self):
        """Deep copy of all configuration values."""
        return copy.deepcopy(self._values)

    def _override_from_commandline(self, override_args):
        override = extract_named_args(override_args)
        for key, val in override.items():
            name = key[2:] if key.startswith('--') else key
            value = val if val is None or val.startswith('"') or val.startswith("'") else try_to_number(val)
            value = evaluate(value)
            LOG.debug('Override key "%s" with value "%s"', name, value)

            names = name.split('.')
            current = self._values
            for i, cur_key in enumerate(names):
                last = i == len(names) - 1
                idx = get_key(current, cur_key)
                if last:
                    current[try_to_number(cur_key) if isinstance(current, list) else cur_key] = value
                elif idx is None:
                    new_current = [] if isinstance(try_to_number(names[i + 1]), int) else {}
                    if isinstance(current, dict):
                        current[cur_key] = new_current
                    else:
                        current.append(new_current)
                    current = new_current
                else:
                    current = current[idx]

    def save_to(self, filename):
        """Saves the current configuration to a file.

        :param filename: filename to save the configuration to
        """
        LOG.debug('Save config to %s', filename)
        writer = get_file_writer(Path(filename).suffix)
        with open(filename, 'w', encoding='utf-8') as file:
            writer(self._values, file)


@dataclasses.dataclass
class PathsConfig:
    """Artifact locations referenced by the pipeline."""
    char_units: Optional[str] = None
    syll_units: Optional[str] = None
    lexicon: Optional[str] = None
    char_lm: Optional[str] = None
    syll_lm: Optional[str] = None
    keywords: Optional[str] = None
    cost_table: Optional[str] = None
    char_confusion: Optional[str] = None
    syll_confusion: Optional[str] = None


def _section(cls, values, name):
    values = dict(values or {})
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - known
    if unknown:
        ex = ConfigError(f'Unknown keys in section "{name}": {", ".join(sorted(unknown))}')
        LOG.error(ex)
        raise ex
    try:
        return cls(**values)
    except (TypeError, ValueError) as err:
        ex = ConfigError(f'Invalid section "{name}": {err}')
        LOG.error(ex)
        raise ex from err


@dataclasses.dataclass
class PipelineConfig:
    """Typed view on a ``Config``; every section falls back to its defaults."""
    paths: PathsConfig = dataclasses.field(default_factory=PathsConfig)
    beam: BeamConfig = dataclasses.field(default_factory=BeamConfig)
    bias: BiasConfig = dataclasses.field(default_factory=BiasConfig)
    kws: KwsConfig = dataclasses.field(default_factory=KwsConfig)
    eval: EvalConfig = dataclasses.field(default_factory=EvalConfig)
    synth: SynthConfig = dataclasses.field(default_factory=SynthConfig)
    seed: int = 0
    jobs: int = 1

    @classmethod
    def from_config(cls, cfg: Config, base_dir=None):
        """Build the typed pipeline configuration.

        :param cfg: loaded ``Config``
        :param base_dir: directory relative artifact paths are resolved against
        """
        paths = _section(PathsConfig, cfg.get('paths'), 'paths')
        if base_dir is not None:
            for field in dataclasses.fields(paths):
                value = getattr(paths, field.name)
                if value is not None and not Path(value).is_absolute():
                    setattr(paths, field.name, str(Path(base_dir) / value))

        kws_values = dict(cfg.get('kws') or {})
        if 'stages_enabled' in kws_values:
            try:
                kws_values['stages_enabled'] = frozenset(Stage(s) for s in kws_values['stages_enabled'])
            except ValueError as err:
                raise ConfigError(f'Invalid stage in kws.stages_enabled: {err}') from err

        seed = int(cfg.get('seed', 0))
        synth_values = dict(cfg.get('synth') or {})
        synth_values.setdefault('seed', seed)

        jobs = int(cfg.get('jobs', 1))
        if jobs < 1:
            raise ConfigError('jobs must be >= 1')

        return cls(paths=paths,
                   beam=_section(BeamConfig, cfg.get('beam'), 'beam'),
                   bias=_section(BiasConfig, cfg.get('bias'), 'bias'),
                   kws=_section(KwsConfig, kws_values, 'kws'),
                   eval=_section(EvalConfig, cfg.get('eval'), 'eval'),
                   synth=_section(SynthConfig, synth_values, 'synth'),
                   seed=seed,
                   jobs=jobs)
