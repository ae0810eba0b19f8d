"""cli.py: Command line interface of kwspot.


Author -- KWS team
Created on -- 3/21/24 09:10 AM

Subcommands chain the pipeline: ``synth`` (synthetic posteriorgrams and
references), ``lm-train`` (ARPA n-gram model), ``decode`` (N-best lists),
``kws`` (hit list), ``eval`` (JSON report) and ``ablate`` (the whole ladder in
one run).

Every command reads the configuration file (``--config``, ``KWS_CONFIG`` or
``configs/default.yaml``); unknown flags of the form ``--section.key value``
override single configuration values.

Exit codes: 0 success, 1 domain errors or partial success, 2 usage and I/O errors.


=======  ==========  =================  ================================
Version  Date        Author             Description
=======  ==========  =================  ================================
v0.1     3/21/24     KWS team           Subcommands.
v0.2     3/22/24     KWS team           Parallel jobs, ablation runner.
=======  ==========  =================  ================================
"""

import os
import sys
import json
import logging
import argparse
import dataclasses
from pathlib import Path

from .config import Config, PipelineConfig
from .constants import (ENV_CONFIG_NAME, DEFAULT_CONFIG_PATH, DEFAULT_LM_ORDER, DEFAULT_DISCOUNT, CHAR_DIR,
                        SYLL_DIR, PGRAM_SUFFIX, REF_FILE, MANIFEST_FILE, EXIT_OK, EXIT_DOMAIN, EXIT_USAGE)
from .decoder import read_nbest, write_nbest
from .evaluation import eval_report, read_refs, write_refs
from .exceptions import KwsError, BadFormat, ConfigError, OutOfVocabulary
from .kws import read_hits, write_hits
from .lm import char_tokens, space_tokens, train, write_arpa
from .pipeline import (Corpus, Decoded, Resources, decode_corpus, detect_corpus, load_corpus, read_transcripts,
                       run_ladder, synth_corpus)
from .posteriorgram import write_pgram
from .units import load_lexicon, syllable_strings
from ._utils import get_file_writer

__all__ = ['main', 'build_parser']
LOG = logging.getLogger('CLI')

NBEST_FILES = {'char': 'char.nbest.jsonl', 'syll': 'syll.nbest.jsonl'}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='kwspot', description='Keyword spotting over CTC posteriorgrams.',
                                     allow_abbrev=False)
    parser.add_argument('--config', help='configuration file (json, json5, yaml)')
    parser.add_argument('--seed', type=int, help='seed of all randomness')
    parser.add_argument('--jobs', type=int, help='parallel worker processes')
    parser.add_argument('-v', '--verbose', action='count', default=0, help='more logging (repeatable)')
    parser.add_argument('-q', '--quiet', action='count', default=0, help='less logging (repeatable)')
    sub = parser.add_subparsers(dest='command', required=True)

    cmd = sub.add_parser('synth', help='synthesize posteriorgrams and reference occurrences')
    cmd.add_argument('--transcripts', required=True, help='TSV utt_id<TAB>text')
    cmd.add_argument('--out-dir', required=True)
    cmd.add_argument('--noise', type=float, help='noise mass moved off the target of every frame')
    cmd.set_defaults(func=cmd_synth)

    cmd = sub.add_parser('lm-train', help='train a backoff n-gram model')
    cmd.add_argument('--corpus', required=True, help='text file, one sentence per line')
    cmd.add_argument('--out', required=True, help='ARPA output file')
    cmd.add_argument('--unit', choices=('char', 'syllable'), default='char')
    cmd.add_argument('--order', type=int, default=DEFAULT_LM_ORDER)
    cmd.add_argument('--discount', type=float, default=DEFAULT_DISCOUNT)
    cmd.set_defaults(func=cmd_lm_train)

    cmd = sub.add_parser('decode', help='decode posteriorgrams into N-best lists')
    cmd.add_argument('--pgram-dir', required=True, help='directory with char/ and syll/ posteriorgrams')
    cmd.add_argument('--out-dir', required=True)
    cmd.add_argument('--greedy', action='store_true', help='greedy path instead of beam search')
    cmd.add_argument('--no-lm', action='store_true', help='disable shallow fusion')
    cmd.add_argument('--no-bias', action='store_true', help='disable keyword biasing')
    cmd.set_defaults(func=cmd_decode)

    cmd = sub.add_parser('kws', help='detect keywords in decoded N-best lists')
    cmd.add_argument('--pgram-dir', required=True)
    cmd.add_argument('--nbest-dir', required=True)
    cmd.add_argument('--out', required=True, help='hit TSV')
    cmd.add_argument('--threshold', type=float, help='decision threshold on the normalized score')
    cmd.set_defaults(func=cmd_kws)

    cmd = sub.add_parser('eval', help='score a hit list against references')
    cmd.add_argument('--hits', required=True)
    cmd.add_argument('--refs', required=True)
    cmd.add_argument('--manifest', help='synth manifest providing total_speech_s')
    cmd.add_argument('--out', help='JSON report (default: stdout)')
    cmd.set_defaults(func=cmd_eval)

    cmd = sub.add_parser('ablate', help='run the ablation ladder')
    source = cmd.add_mutually_exclusive_group(required=True)
    source.add_argument('--transcripts', help='synthesize the corpus from these transcripts')
    source.add_argument('--pgram-dir', help='use a corpus written by synth')
    cmd.add_argument('--noise', type=float, help='noise mass moved off the target when synthesizing')
    cmd.add_argument('--out', help='JSON report (default: stdout)')
    cmd.set_defaults(func=cmd_ablate)
    return parser


def _setup_logging(verbose: int, quiet: int):
    level = min(max(logging.WARNING + 10 * (quiet - verbose), logging.DEBUG), logging.CRITICAL)
    logging.basicConfig(format='%(asctime)s %(levelname)-8s %(name)s: %(message)s')
    logging.getLogger().setLevel(level)


def _load_config(args, overrides) -> PipelineConfig:
    filename = args.config or os.getenv(ENV_CONFIG_NAME)
    if filename is None and Path(DEFAULT_CONFIG_PATH).exists():
        filename = DEFAULT_CONFIG_PATH
    if filename is None:
        LOG.info('No configuration file found, using defaults')
        config = Config.from_values({}, overrides)
    else:
        config = Config(filename, overrides)

    cfg = PipelineConfig.from_config(config, base_dir=Path(filename).parent if filename else None)
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.synth = dataclasses.replace(cfg.synth, seed=args.seed)
    if args.jobs is not None:
        if args.jobs < 1:
            raise ConfigError('--jobs must be >= 1')
        cfg.jobs = args.jobs
    if getattr(args, 'noise', None) is not None:
        try:
            cfg.synth = dataclasses.replace(cfg.synth, noise=args.noise)
        except ValueError as err:
            raise ConfigError(f'--noise: {err}') from err
    return cfg


def _write_json(doc, path=None):
    if path is None:
        json.dump(doc, sys.stdout, indent=2, sort_keys=True, ensure_ascii=False)
        sys.stdout.write('\n')
        return
    with open(path, 'w', encoding='utf-8') as file:
        get_file_writer('.json')(doc, file)
        file.write('\n')


def _manifest_speech(path):
    with open(path, encoding='utf-8') as file:
        try:
            return float(json.load(file)['total_speech_s'])
        except (ValueError, KeyError, TypeError) as err:
            raise BadFormat(f'{path}: no total_speech_s ({err})') from err


# -----------------------------------------------------------------------------
# commands
# -----------------------------------------------------------------------------

def cmd_synth(args, cfg: PipelineConfig) -> int:
    res = Resources.load(cfg, lms=False)
    corpus = synth_corpus(read_transcripts(args.transcripts), res, cfg.synth, cfg.jobs)

    out = Path(args.out_dir)
    for sub in (CHAR_DIR, SYLL_DIR):
        (out / sub).mkdir(parents=True, exist_ok=True)
    for utt in corpus.utterances:
        write_pgram(utt.pg_char, out / CHAR_DIR / f'{utt.utt_id}{PGRAM_SUFFIX}')
        write_pgram(utt.pg_syll, out / SYLL_DIR / f'{utt.utt_id}{PGRAM_SUFFIX}')
    write_refs(corpus.refs, out / REF_FILE)
    _write_json({'utterances': [utt.utt_id for utt in corpus.utterances],
                 'total_speech_s': corpus.total_speech_s,
                 'frame_period_s': cfg.synth.frame_period_s,
                 'noise': cfg.synth.noise,
                 'seed': cfg.synth.seed,
                 'skipped': [{'utt_id': utt_id, 'error': error} for utt_id, error in corpus.skipped]},
                out / MANIFEST_FILE)

    for utt_id, error in corpus.skipped:
        LOG.error('Skipped %s: %s', utt_id, error)
    return EXIT_DOMAIN if corpus.skipped else EXIT_OK


def cmd_lm_train(args, cfg: PipelineConfig) -> int:
    with open(args.corpus, encoding='utf-8') as file:
        lines = [line.strip() for line in file if line.strip()]

    tokenize = char_tokens
    skipped = 0
    if args.unit == 'syllable':
        if cfg.paths.lexicon is None:
            raise ConfigError('paths.lexicon is required for a syllable LM')
        lexicon = load_lexicon(cfg.paths.lexicon)
        sentences = []
        for line in lines:
            try:
                sentences.append(' '.join(syllable_strings(line, lexicon)))
            except OutOfVocabulary as ex:
                LOG.warning('Skipping sentence "%s": %s', line, ex)
                skipped += 1
        lines, tokenize = sentences, space_tokens

    try:
        lm = train(lines, args.order, args.discount, tokenize)
    except ValueError as err:
        raise ConfigError(str(err)) from err
    write_arpa(lm, args.out)
    return EXIT_DOMAIN if skipped else EXIT_OK


def cmd_decode(args, cfg: PipelineConfig) -> int:
    res = Resources.load(cfg, keywords=not args.no_bias)
    utterances = load_corpus(args.pgram_dir, res.char_set, res.syll_set)
    beam = dataclasses.replace(cfg.beam, bias_enabled=cfg.beam.bias_enabled and not args.no_bias)
    decoded = decode_corpus(utterances, res, beam, greedy=args.greedy, use_lm=not args.no_lm, jobs=cfg.jobs)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_nbest(out / NBEST_FILES['char'], [(d.utt_id, d.char) for d in decoded])
    syll = [(d.utt_id, d.syll) for d in decoded if d.syll is not None]
    if syll:
        write_nbest(out / NBEST_FILES['syll'], syll)
    LOG.info('Decoded %d utterances into %s', len(decoded), out)
    return EXIT_OK


def cmd_kws(args, cfg: PipelineConfig) -> int:
    res = Resources.load(cfg, lms=False)
    kws_cfg = cfg.kws
    if args.threshold is not None:
        kws_cfg = dataclasses.replace(kws_cfg, decision_threshold=args.threshold)

    utterances = load_corpus(args.pgram_dir, res.char_set, res.syll_set)
    nbest_dir = Path(args.nbest_dir)
    char = read_nbest(nbest_dir / NBEST_FILES['char'])
    syll_path = nbest_dir / NBEST_FILES['syll']
    syll = read_nbest(syll_path) if syll_path.exists() else {}
    decoded = [Decoded(utt_id, entries, syll.get(utt_id)) for utt_id, entries in sorted(char.items())]

    hits = detect_corpus(utterances, decoded, res, kws_cfg, cfg.jobs)
    write_hits(hits, args.out)
    LOG.info('Wrote %d hits to %s', len(hits), args.out)
    return EXIT_OK


def cmd_eval(args, cfg: PipelineConfig) -> int:
    eval_cfg = cfg.eval
    if eval_cfg.total_speech_s is None and args.manifest:
        eval_cfg = dataclasses.replace(eval_cfg, total_speech_s=_manifest_speech(args.manifest))
    report = eval_report(read_hits(args.hits), read_refs(args.refs), eval_cfg)
    _write_json(report, args.out)
    return EXIT_OK


def cmd_ablate(args, cfg: PipelineConfig) -> int:
    res = Resources.load(cfg)
    if args.transcripts:
        corpus = synth_corpus(read_transcripts(args.transcripts), res, cfg.synth, cfg.jobs)
    else:
        pgram_dir = Path(args.pgram_dir)
        utterances = load_corpus(pgram_dir, res.char_set, res.syll_set)
        corpus = Corpus(utterances, read_refs(pgram_dir / REF_FILE), [],
                        _manifest_speech(pgram_dir / MANIFEST_FILE))
    report = run_ladder(corpus, res, cfg, cfg.jobs)
    _write_json(report, args.out)
    return EXIT_DOMAIN if corpus.skipped else EXIT_OK


def main(argv=None) -> int:
    """Entry point; returns the exit code."""
    parser = build_parser()
    args, rest = parser.parse_known_args(argv)
    stray = [arg for arg in rest if arg.startswith('--') and '.' not in arg]
    if stray:
        parser.error(f'unrecognized arguments: {" ".join(stray)}')
    _setup_logging(args.verbose, args.quiet)

    try:
        cfg = _load_config(args, rest)
        return args.func(args, cfg)
    except (OSError, BadFormat, ConfigError) as ex:
        LOG.error('%s: %s', type(ex).__name__, ex)
        return EXIT_USAGE
    except KwsError as ex:
        LOG.error('%s: %s', type(ex).__name__, ex)
        return EXIT_DOMAIN


if __name__ == '__main__':
    sys.exit(main())
