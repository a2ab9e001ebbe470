"""Skeleton-trajectory sign recognition with hierarchical bidirectional LSTMs and CTC."""
from .ctc import beam_decode, collapse, ctc_loss, greedy_decode
from .data import (Alphabet, GeneratorConfig, SkeletonSequence, enumerate_template_sentences,
                   gen_sentences, gen_synthetic, read_dataset, template_sentences, write_dataset)
from .metrics import confusion, topk_accuracy, wer
from .models import (LayerSpec, Model, ModelConfig, build_model, load_checkpoint, param_count,
                     preset, save_checkpoint, sentence_forward, word_forward)
from .preprocess import TrajectorySet, build_trajectories, sg_smooth
from .training import TrainConfig, run_experiment, split_loso, split_unseen_sentences, train

__version__ = "0.1.0"
