"""Token-level centered log-likelihood scoring, sequential distribution
tests, per-token loss reweighting, and dual-stream guided decoding."""

from .decoding import (
    DecodeResult,
    HintedConfig,
    MixSchedule,
    decode,
    detect_splitter,
    fuse_logprobs,
    lambda_of,
    plain_decode,
)
from .pipeline import (
    DatasetItem,
    RealignedItem,
    VerifierSpec,
    realign,
    score_dataset,
    score_text,
    verify,
)
from .providers import (
    CharTokenizer,
    ContextState,
    MixtureOfSequencesProvider,
    NgramProvider,
    Provider,
    RemoteProvider,
    SamplerConfig,
    TableProvider,
    WhitespaceTokenizer,
    derive_rng,
    derive_seed,
    ngram_train,
    ngram_train_text,
    sample,
)
from .stats import (
    ContextEnsemble,
    DiscriminantConfig,
    PhiRecord,
    SequenceScore,
    TokenDistribution,
    analytic_snr_decomposition,
    classify_sequence,
    cumulative_score,
    empirical_snr,
    entropy,
    expected_phi_under,
    extreme_token_report,
    freedman_bound,
    overlap_from_snr,
    phi,
    phi_variance,
    threshold_for_alpha,
)
from .weighting import (
    TokenWeightRecord,
    WeightConfig,
    gamma_of_phi,
    gradient_scale,
    idft_token_loss,
    sequence_loss,
    weight_stream,
)

__version__ = "0.1.0"
