GROUPS = (1, 2, 3, 4)
GROUP_STRIDES = (1, 2, 2, 2)
MIN_FRAMES = 16
"""Shortest utterance `embed` accepts (T' >= 2 after three stride-2 groups)"""

LATENT_DIM = 16
AR_RHO = 0.9
AR_INNOVATION_STD = 0.3
FRAMES_RANGE = (100, 200)
"""Inclusive range of utterance lengths drawn by the corpus generator"""

LOW_RESOURCE_SIZES = (50, 100, 200, 400)
DEV_UTTS_MAX = 5
TEST_UTTS_RANGE = (5, 10)

FEATURE_MAGIC = b"SBFT"
CHECKPOINT_MAGIC = b"SEBN"
CHECKPOINT_VERSION = 1
SE_PLACEMENT = "residual-pre-add"
"""SE rescales the residual branch output before the skip addition"""

MANIFEST_NAME = "manifest.tsv"
FEATS_DIR = "feats"

GRAD_CHECK_FLOOR = 1e-4
