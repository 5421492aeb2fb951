"""Source-free domain adaptation with label-reliability voting for vibration signals."""

from .augment import AugmentationKind, AugmentParams, build_augmented_set, cyclic_shift, flip, random_zero
from .errors import ConfigError, DataError, NoReliableLabelsError, TrainingError
from .losses import LossBundle, car_loss, im_loss, lsc_loss, smooth_targets, source_ce, total_loss, uem_loss
from .network import EncoderConfig, SDALRNet, forward_features, forward_probs, init_target_from_source
from .pseudo_label import assign_labels, compute_prototypes, initial_label, rebalance, vote
from .signals import DomainDataset, DomainShift, SignalSample, SynthConfig, TransferTask, load_jnu, load_pu, synth_benchmark, window_recording
from .training import AdaptationConfig, RunRecord, adapt_target, evaluate, lr_at, train_source

__version__ = "0.1.0"
