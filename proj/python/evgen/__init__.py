"""Synthetic EV charging load curves: GMM baseline, SC-WGAN-GP and evaluation metrics."""

from ._core import (
    DivergenceError,
    InputError,
    GanModel,
    GmmFit,
    cli_run,
    example_curves,
    fit_gmm,
    gmm_generate,
    ks_distance,
    load_gan,
    log_spectral_distance,
    psd,
    sample_latent,
    sc_loss,
    sc_loss_naive,
)

__all__ = [
    "DivergenceError",
    "InputError",
    "GanModel",
    "GmmFit",
    "cli_run",
    "example_curves",
    "fit_gmm",
    "gmm_generate",
    "ks_distance",
    "load_gan",
    "log_spectral_distance",
    "psd",
    "sample_latent",
    "sc_loss",
    "sc_loss_naive",
]
