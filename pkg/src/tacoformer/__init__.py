"""Token-channel compound cross-attention fusion for physiological signals.

A small, self-contained stack: a float64 tensor engine with tape-based
reverse-mode autodiff, 1D/2D sinusoidal position encodings, per-modality
transformer encoders, the compound token/channel cross-attention fusion
block with its tca/cca/concat ablation variants, DEAP/Dreamer-style
preprocessing pipelines, a synthetic-data generator, and an Adam trainer
with an ablation runner. Hot kernels run through numba with a pure-numpy
fallback (see tacoformer.backend).
"""

from .backend import active_backend, set_backend
from .encoder import (EncoderConfig, EncoderLayerParams, EncoderParams,
                      attention, embed, encode, encoder_layer,
                      init_encoder_params)
from .encoding import PosEnc1D, PosEnc2D, apply_posenc, posenc_1d, posenc_2d
from .fusion import (FUSION_MODES, FusionParams, FusionReport, cca,
                     concat_fusion, export_attention, fusion_block,
                     init_fusion_params, taco, tca)
from .gradcheck import GradCheckReport, finite_diff_check
from .model import (ModelConfig, ModelParams, Prediction, accuracy,
                    batch_loss, cross_entropy, forward, init_model_params)
from .preprocess import (ChannelGridMap, InstanceSet, PipelineError,
                         TrialRecord, bandpass, deap_pipeline,
                         default_channel_map, downsample, dreamer_pipeline,
                         load_channel_map, map_to_grid, threshold_label,
                         zscore_frame)
from .pstb import (PstbDtypeError, PstbError, PstbHeaderError,
                   PstbTruncatedError, read_pstb, write_pstb)
from .synth import synth_generate
from .tensor import GradTape, ShapeError, Tensor, backward
from .trainer import (AdamState, TrainConfig, adam_step, evaluate,
                      load_checkpoint, run_ablation, save_checkpoint, split,
                      split_by_subject, train)

__version__ = "0.1.0"
