"""Project configuration loaded from environment variables.

All project-wide constants and tunables live here. Model defaults mirror the
published At-LSTM setup; everything else is plumbing that a run config or the
environment can override.
"""

from __future__ import annotations

import os
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()


##########################################################################
# ----[ Paths ]-----------------------------------------------------------
##########################################################################

ROOT_DIR = Path(__file__).resolve().parent

DATA_DIR = ROOT_DIR / "data"
DATA_INPUT_DIR = DATA_DIR / "input"
DATA_OUTPUT_DIR = DATA_DIR / "output"

DEFAULT_NEWS_PATH = DATA_INPUT_DIR / "news.jsonl"
DEFAULT_PRICES_PATH = DATA_INPUT_DIR / "prices.csv"



##########################################################################
# ----[ Model defaults ]--------------------------------------------------
##########################################################################

WORD_DIM = int(os.getenv("WORD_DIM", "100"))
CHAR_DIM = 15
FILTER_WIDTHS: list[int] = [1, 3, 5]
MAPS_PER_FILTER = 32
NEWS_HIDDEN = int(os.getenv("NEWS_HIDDEN", "300"))      # u
DAY_HIDDEN = int(os.getenv("DAY_HIDDEN", "300"))        # v
ATTENTION_DIM = 600                                     # d_a
ATTENTION_HOPS = 10                                     # r
WINDOW_DAYS = 7                                         # N
CNN_NEWS_MAPS = 128                                     # CnnLstm news-level maps per width
INIT_STD = 0.01                                         # no-news vector and softmax head
EMBEDDING_STD = 1.0                                     # word and character tables
FORGET_BIAS = 1.0

LEARNING_RATE = float(os.getenv("LEARNING_RATE", "0.04"))
EPOCHS = int(os.getenv("EPOCHS", "200"))

# "D" follows the published equations literally (V = A·D); "H" attends over
# the day-level Bi-LSTM outputs instead.
DAY_ATTENTION_OVER = os.getenv("DAY_ATTENTION_OVER", "D")



##########################################################################
# ----[ Corpus ]----------------------------------------------------------
##########################################################################

MIN_COUNT = int(os.getenv("MIN_COUNT", "2"))
MAX_TITLES_PER_DAY = 40
MAX_TOKENS_PER_TITLE = 30
INDEX_SYMBOL = "INDEX"

MARKET_TIMEZONE = "America/New_York"
MARKET_CLOSE_HOUR = 16

# Walk-forward boundaries reproducing the published train/dev/test periods
DEV_START = os.getenv("DEV_START", "2012-06-28")
TEST_START = os.getenv("TEST_START", "2013-03-14")

SKIPGRAM_WINDOW = 5
SKIPGRAM_NEGATIVES = 5
SKIPGRAM_EPOCHS = int(os.getenv("SKIPGRAM_EPOCHS", "5"))
SKIPGRAM_LR = 0.025



##########################################################################
# ----[ Training ]--------------------------------------------------------
##########################################################################

SEED = int(os.getenv("SEED", "0"))
BATCH_SIZE = int(os.getenv("BATCH_SIZE", "32"))
CLIP_NORM: float | None = float(os.getenv("CLIP_NORM", "5.0")) or None
ADADELTA_RHO = 0.95
ADADELTA_EPS = 1e-6
PROB_FLOOR = 1e-12

# Average / max accuracy are taken over this many trailing epochs
ACCURACY_WINDOW = int(os.getenv("ACCURACY_WINDOW", "50"))

GRADCHECK_STEP = 1e-5
GRADCHECK_TOL = 1e-4
GRADCHECK_ATOL = 1e-8



##########################################################################
# ----[ Parallelism ]-----------------------------------------------------
##########################################################################

MAX_EVAL_WORKERS = int(os.getenv("MAX_EVAL_WORKERS", "4"))



##########################################################################
# ----[ Checkpoint ]------------------------------------------------------
##########################################################################

CHECKPOINT_MAGIC = b"ATLS"
CHECKPOINT_VERSION = 1



##########################################################################
# ----[ Log Settings ]----------------------------------------------------
##########################################################################

LOG_LEVEL = os.getenv("LOG_LEVEL", "info").lower()
LOG_FORMAT = os.getenv("LOG_FORMAT", " [%(levelname)s]---------[ %(name)s ]----------- %(message)s")
LOG_DATE_FORMAT = os.getenv("LOG_DATE_FORMAT", "%H:%M:%S")
