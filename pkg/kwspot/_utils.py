"""_utils.py: Collection of generic functions used by kwspot.


Author -- KWS team
Created on -- 3/02/24 10:59 AM

File loaders/writers selected by extension, command-line override parsing,
value coercion and a few log-domain helpers.


=======  ==========  =================  ================================
Version  Date        Author             Description
=======  ==========  =================  ================================
v0.1     3/02/24     KWS team           Loaders and overrides from the config tool.
v0.2     3/11/24     KWS team           Log-domain helpers, TSV reader.
=======  ==========  =================  ================================
"""

import ast
import csv
import math
import logging

from .exceptions import ConfigError, BadFormat


__all__ = ['extract_named_args', 'try_to_number', 'get_file_loader', 'get_file_writer', 'get_key', 'evaluate',
           'log_add', 'read_tsv', 'write_tsv']
LOG = logging.getLogger('Utils')


def extract_named_args(arglist):
    """Extract named arguments from list of arguments"""
    result = {}
    for i, arg in enumerate(arglist):
        if arg.startswith("--"):
            if i + 1 < len(arglist) and not arglist[i + 1].startswith("--"):
                result[arg] = arglist[i + 1]
            else:
                result[arg] = None
    return result


def try_to_number(value):
    """Tries to convert a string into a number otherwise returns the string."""
    try:
        value = int(value)
    except (TypeError, ValueError):
        try:
            value = float(value)
        except (TypeError, ValueError):
            pass
    return value


def get_file_loader(ext):
    """Returns a load function (text -> python structure) for a given file extension."""
    # pylint: disable=import-outside-toplevel
    ext = ext.lower()
    if ext == '.json':
        import json
        return json.loads

    if ext == '.json5':
        try:
            import json5
        except ImportError:
            LOG.error('Error importing: json5', exc_info=True)
            raise
        return json5.loads

    if ext in ('.yml', '.yaml'):
        try:
            import yaml
        except ImportError:
            LOG.error('Error importing: yaml', exc_info=True)
            raise
        return yaml.safe_load

    ex = ConfigError(f"Unknown configuration filetype {ext}!")
    LOG.error(ex)
    raise ex


def get_file_writer(ext):
    """Returns a write function (structure, file) for a given file extension."""
    # pylint: disable=import-outside-toplevel
    ext = ext.lower()
    if ext == '.json':
        import json
        return lambda data, file: json.dump(data, file, indent=2, sort_keys=True, ensure_ascii=False)

    if ext == '.json5':
        import json5
        return lambda data, file: json5.dump(data, file, indent=2, sort_keys=True, ensure_ascii=False)

    if ext in ('.yml', '.yaml'):
        import yaml
        return lambda data, file: yaml.safe_dump(data, file, sort_keys=True, allow_unicode=True)

    ex = ConfigError(f"Unknown configuration filetype {ext}!")
    LOG.error(ex)
    raise ex


def get_key(colletion, key):
    """Returns a valid key for a collection or None"""
    if isinstance(colletion, dict) and key in colletion:
        return key

    ikey = try_to_number(key)
    if isinstance(colletion, list) and ikey in range(len(colletion)):
        return ikey

    return None


def evaluate(value):
    """Evaluate a string as Python literal, keep it as string if that fails."""
    if not isinstance(value, str):
        return value

    try:
        value = ast.literal_eval(value)
    except (ValueError, SyntaxError):
        pass

    return value


def log_add(a, b):
    """log(exp(a) + exp(b)) for python floats."""
    if a < b:
        a, b = b, a
    if b == -math.inf:
        return a
    return a + math.log1p(math.exp(b - a))


def read_tsv(path, min_fields):
    """Yield (line number, fields) for the non-empty, non-comment rows of a UTF-8 TSV file."""
    with open(path, encoding='utf-8', newline='') as file:
        for lineno, row in enumerate(csv.reader(file, delimiter='\t', quoting=csv.QUOTE_NONE), start=1):
            if not row or not ''.join(row).strip() or row[0].startswith('#'):
                continue
            if len(row) < min_fields:
                ex = BadFormat(f'{path}:{lineno}: expected {min_fields} tab-separated fields, got {len(row)}')
                LOG.error(ex)
                raise ex
            yield lineno, row


def write_tsv(path, rows):
    """Write rows of strings as a UTF-8 TSV file."""
    with open(path, 'w', encoding='utf-8', newline='') as file:
        writer = csv.writer(file, delimiter='\t', quoting=csv.QUOTE_NONE, lineterminator='\n')
        writer.writerows(rows)
