from .config import (PRESETS, RunConfig, dump_config, load_config, parse_config, preset)
from .optim import ExponentialSchedule, Optimizer, adam_step, sgd_step
from .trainer import (JsonLog, Sample, Trainer, block_config, build_network, evaluate_net,
                      feature_config, load_dataset, loss_for_2d, loss_for_3d, predict_sample)

__all__ = [
    "PRESETS", "RunConfig", "dump_config", "load_config", "parse_config", "preset",
    "ExponentialSchedule", "Optimizer", "adam_step", "sgd_step", "JsonLog", "Sample", "Trainer",
    "block_config", "build_network", "evaluate_net", "feature_config", "load_dataset",
    "loss_for_2d", "loss_for_3d", "predict_sample",
]
