"""Desk-scale image-to-report captioning pipeline."""

from ._core import (
    ConfigError,
    DataError,
    NumericError,
    apply_min_length,
    apply_repetition_penalty,
    beam_search,
    corpus_rouge1,
    count_ptuning_params,
    evaluate_files,
    gen_data,
    generate_reports,
    greedy_decode,
    log_softmax,
    lr_at,
    rouge1,
    token_frequency_report,
    train_run,
)

__all__ = [
    "ConfigError",
    "DataError",
    "NumericError",
    "apply_min_length",
    "apply_repetition_penalty",
    "beam_search",
    "corpus_rouge1",
    "count_ptuning_params",
    "evaluate_files",
    "gen_data",
    "generate_reports",
    "greedy_decode",
    "log_softmax",
    "lr_at",
    "rouge1",
    "token_frequency_report",
    "train_run",
]
