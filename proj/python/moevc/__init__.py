# Copyright 2026 The MoEVC Authors
# SPDX-License-Identifier: Apache-2.0

"""Voice conversion with sparsely gated convolutions."""

from moevc._core import (
    MoevcError,
    convert,
    dense_flops,
    f0_convert,
    f0_stats,
    format_config,
    gen_corpus,
    gradcheck,
    mcd,
    read_features,
    train,
    write_features,
)

__all__ = [
    "MoevcError",
    "convert",
    "dense_flops",
    "f0_convert",
    "f0_stats",
    "format_config",
    "gen_corpus",
    "gradcheck",
    "mcd",
    "read_features",
    "train",
    "write_features",
]
