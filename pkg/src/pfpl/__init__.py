"""Speech enhancement with a phone-fortified perceptual loss.

A complex-masking U-Net enhancer trained with waveform MAE plus a
Wasserstein distance between phonetic feature distributions, with native
objective quality metrics and a loss/metric correlation harness.
"""

from .dsp import (
    ComplexSpectrogram,
    StftConfig,
    Waveform,
    istft,
    read_wav,
    stft,
    write_wav,
)
from .encoder import (
    ConvSpec,
    EncoderBackend,
    FeatureSequence,
    TINY_CONV_SPEC,
    WAV2VEC_BASE,
    encode,
    load_encoder,
)
from .wasserstein import Coupling, feature_w1, w1_1d, w1_oracle
from .losses import (
    LossSpec,
    LossValue,
    compute_loss,
    feature_l1,
    mae_loss,
    mse_loss,
    wsdr_loss,
)
from .unet import (
    ComplexRatioMask,
    MaskEstimator,
    ModelConfig,
    build_model,
    enhance,
    estimate_mask,
    large20_config,
    small10_config,
)
from .metrics import (
    MetricScores,
    PesqAdapter,
    composite,
    evaluate_pair,
    llr,
    seg_snr,
    stoi,
    wss,
)
from .data import (
    CorpusIndex,
    SegmentSpec,
    load_pair,
    mix_at_snr,
    scan_corpus,
    segment,
)
from .trainer import TrainConfig, TrainReport, load_checkpoint, save_checkpoint, train
from .analysis import correlation_report, export_features, pearson_cc

__version__ = "0.1.0"
