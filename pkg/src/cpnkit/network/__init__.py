from cpnkit.network.config import ModelConfig, load_config_text, save_config_text
from cpnkit.network.model import CPN, NetworkOutput
from cpnkit.network.counting import count_params, count_flops

__all__ = ["ModelConfig", "CPN", "NetworkOutput", "count_params", "count_flops",
           "load_config_text", "save_config_text"]
