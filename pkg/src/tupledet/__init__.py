"""tupledet: contextual object embedding training and tuple detection evaluation.

Learns a visual embedding head and a text projection head jointly under a
foreground/background contrastive loss over precomputed region features
and token embeddings, predicts discrete (noun, context) tuples for
detected objects, and evaluates with mAP@0.5. Includes pseudo-label
dataset construction, zero/few-shot protocols, and embedding retrieval.
"""

__version__ = "0.1.0"

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data_io import (AnswerKey, FrameRecord, Roi, read_answer_key, read_frames,
                      read_vocab, write_answer_key, write_frames, write_vocab)
from .errors import (CheckpointError, ConfigError, DataError, InvalidBoxError,
                     NoNegativesError, ParseError, SchemaError, ShapeError,
                     TupledetError)
from .estimator import TupleDetector
from .evaluation import (ApResult, GtBox, PredBox, average_precision,
                         ground_truth_from_key, infer_frame, iou, mean_ap, nms,
                         read_ground_truth, read_predictions, write_ground_truth,
                         write_predictions)
from .mlp import MlpGrads, MlpParams, init_params, mlp_backward, mlp_forward
from .model import (EmbeddingModel, ModelConfig, TupleEntry, TupleIndex,
                    TupleVocab, build_tuple_index, embed_roi, embed_text,
                    init_model, predict_tuples)
from .nce import (BgItem, FgItem, LossReport, NceBatch, NegativeSet, nce_grad,
                  nce_loss, sample_negatives)
from .optim import LrSchedule, OptimizerState, lr_at_step, sgd_momentum_step
from .protocols import (FewShotReport, ZeroShotReport, run_few_shot,
                        run_zero_shot, top1_accuracy)
from .pseudo_label import (Detection, PseudoDataset, PseudoLabelConfig,
                           build_dataset, filter_frame, token_match)
from .retrieval import RetrievalResult, analogy_query, object_to_text, text_to_object
from .synthetic import (SyntheticConfig, default_holdout_pairs, generate_synthetic,
                        is_compositional_holdout, make_zero_shot_split)
from .trainer import TrainConfig, finetune_few_shot, step_loss_and_grads, train
