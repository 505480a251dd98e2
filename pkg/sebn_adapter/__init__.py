from .adapters import apply_policy as apply_policy
from .adapters import frozen_drift_check as frozen_drift_check
from .config import ExperimentConfig as ExperimentConfig
from .config import load_config as load_config
from .errors import ContractError as ContractError
from .model import ParameterStore as ParameterStore
from .model import count_params as count_params
from .model import init_params as init_params
from .types import AdaptPolicy as AdaptPolicy
from .types import ModelConfig as ModelConfig

__version__ = "0.1.0"
__usage__ = (
    "Commands:\n"
    "▶ sebn gen-data --out DIR [--seed N] [--domains ent,int,live,sing]\n"
    "    ▷ Generate the synthetic source + target-domain corpus\n"
    "▶ sebn pretrain --config FILE --data DIR --out-ckpt FILE\n"
    "    ▷ Train ResNet34SE with AAM-Softmax on the pretrain split\n"
    "▶ sebn adapt --config FILE --ckpt FILE --data DIR --mode se_bn --out-ckpt FILE\n"
    "    ▷ GE2E adaptation with fine_tune / se / bn / se_bn\n"
    "▶ sebn evaluate --ckpt FILE --data DIR --out-csv FILE\n"
    "    ▷ Enroll, cross-pair trials, score and report the EER\n"
    "▶ sebn count-params [--preset paper] [--filter se_bn] [--groups g1]\n"
    "▶ sebn experiment --out DIR [--seeds 1,2,3]"
)
