from privacyTransformer.model import EncoderLayer, PrivacyTransformer, PrivacyTransformerConfig
from privacyTransformer.checkpoint import load, save
from privacyTransformer.managers.trainManager import (TrainConfig, TrainReport, pair_loss, scheduled_lr, train,
                                                     train_from_config, train_step)
