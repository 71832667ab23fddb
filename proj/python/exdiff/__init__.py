"""Score-based spectrogram enhancement: SDE, sampler, metrics and data tools."""

from ._exdiff import (
    Error,
    InvalidArgument,
    NumericError,
    ParseError,
    ShapeError,
    Schedule,
    StftParams,
    Model,
    config_reference,
    decompress,
    compress,
    diffusion_coeff,
    enhance,
    istft,
    kernel_mean,
    kernel_score,
    kernel_std,
    kernel_var,
    load_model,
    parse_config,
    pc_sample,
    remix_to_snr,
    run_oracle,
    si_decompose,
    si_sdr,
    stft,
    synth_pair,
    train,
)

__all__ = [name for name in dir() if not name.startswith("_")]
