from .conv import BatchNormState as BatchNormState
from .conv import batchnorm2d as batchnorm2d
from .conv import conv2d as conv2d
from .gradcheck import grad_check as grad_check
from .ops import add as add
from .ops import channel_scale as channel_scale
from .ops import clamp_min as clamp_min
from .ops import concat as concat
from .ops import cross_entropy as cross_entropy
from .ops import exp as exp
from .ops import global_avg_pool as global_avg_pool
from .ops import l2_normalize as l2_normalize
from .ops import linear as linear
from .ops import log as log
from .ops import matmul as matmul
from .ops import mean as mean
from .ops import mul as mul
from .ops import neg as neg
from .ops import relu as relu
from .ops import reshape as reshape
from .ops import sigmoid as sigmoid
from .ops import softmax as softmax
from .ops import sqrt as sqrt
from .ops import sub as sub
from .ops import sum as sum  # noqa: A004
from .ops import tanh as tanh
from .ops import transpose as transpose
from .ops import where as where
from .tensor import Tensor as Tensor
from .tensor import float64 as float64
from .tensor import get_default_dtype as get_default_dtype
from .tensor import is_grad_enabled as is_grad_enabled
from .tensor import no_grad as no_grad
