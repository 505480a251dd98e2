from .names import block_prefix as block_prefix
from .names import is_bn_adapter_param as is_bn_adapter_param
from .names import is_se_param as is_se_param
from .network import BNMode as BNMode
from .network import SEBlock as SEBlock
from .network import asp_pool as asp_pool
from .network import backbone_forward as backbone_forward
from .network import embed as embed
from .network import embed_batch as embed_batch
from .network import init_params as init_params
from .network import resnet_block_forward as resnet_block_forward
from .network import se_forward as se_forward
from .params import ParameterStore as ParameterStore
from .params import count_params as count_params
