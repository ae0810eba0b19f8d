"""constants.py: Provides constant values used across kwspot.


Author -- KWS team
Created on -- 3/02/24 09:12 AM

Provides constant values used across kwspot.


=======  ==========  =================  ================================
Version  Date        Author             Description
=======  ==========  =================  ================================
v0.1     3/02/24     KWS team           Config tags from the config tool.
v0.2     3/09/24     KWS team           Decoding and scoring defaults.
=======  ==========  =================  ================================
"""

# -- config layer
ENV_CONFIG_NAME = 'KWS_CONFIG'
PARENT_CONFIG_TAG = 'parent'
INCLUDE_TAG = 'include::'
CONFIG_ARG_TAG = '--config'
DEFAULT_CONFIG_PATH = 'configs/default.yaml'

# -- units
BLANK = '<blk>'
BLANK_INDEX = 0
COMMENT_PREFIX = '#'

# -- language model
SENT_START = '<s>'
SENT_END = '</s>'
UNK = '<unk>'
LOG10_FLOOR = -99.0
DEFAULT_LM_ORDER = 4
DEFAULT_DISCOUNT = 0.75

# -- posteriorgram
PGRAM_MAGIC = b'BKWS'
PGRAM_VERSION = 1
PGRAM_SUFFIX = '.bkws'
LOG_ZERO = -1e4
DEFAULT_FRAME_PERIOD = 0.04
ROW_NORM_TOLERANCE = 1e-3
MAX_LOGP = 1e-6

# -- decoder
DEFAULT_BEAM_SIZE = 10
DEFAULT_NBEST = 10
DEFAULT_LM_WEIGHT = 0.3
DEFAULT_TOKEN_MIN_LOGP = -12.0
DEFAULT_BIAS_ALPHA = 1.0
DEFAULT_BIAS_BETA = 4.0

# -- kws
DEFAULT_FUZZY_THRESHOLD = 0.5
DEFAULT_DECISION_THRESHOLD = -5.0
DEFAULT_WINDOW_PAD = 5

# -- eval
DEFAULT_ATWV_BETA = 999.9
SWEEP_POINTS = 50

# -- pipeline artifacts
CHAR_DIR = 'char'
SYLL_DIR = 'syll'
REF_FILE = 'ref.tsv'
MANIFEST_FILE = 'manifest.json'

# -- cli exit codes
EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_USAGE = 2
