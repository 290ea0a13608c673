"""Lossless compression of fp8-quantized gradients with GenNorm-driven Huffman codes."""

from .gennorm import GenNormParams, MomentSummary, cdf, fit, fit_norm, moments, pdf, quantile, sample
from .quantizer import FP8_152, Fp8Format, QuantGrid, SymbolStream, build_grid, dequantize, quantize
from .coder import (
    BinPmf,
    BitBlob,
    Codebook,
    ModelTag,
    build_huffman,
    decode,
    encode,
    expected_length,
    lz78_decode,
    lz78_encode,
    pmf_empirical,
    pmf_from_model,
)
from .stats import FitReport, MomentCI, fit_report, moment_ci, sample_kurtosis, wasserstein

__all__ = [
    "BinPmf", "BitBlob", "Codebook", "FP8_152", "FitReport", "Fp8Format", "GenNormParams",
    "ModelTag", "MomentCI", "MomentSummary", "QuantGrid", "SymbolStream", "build_grid",
    "build_huffman", "cdf", "decode", "dequantize", "encode", "expected_length", "fit",
    "fit_norm", "fit_report", "lz78_decode", "lz78_encode", "moment_ci", "moments", "pdf",
    "pmf_empirical", "pmf_from_model", "quantile", "quantize", "sample", "sample_kurtosis",
    "wasserstein",
]
__version__ = "0.1.0"
