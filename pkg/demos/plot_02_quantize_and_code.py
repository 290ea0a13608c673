"""
Quantize, then code with a model-driven Huffman table
=====================================================

Values are mapped to the bins of an 8-bit float grid (1 sign, 5 exponent,
2 mantissa bits) and each bin index is entropy coded. The Huffman table
comes from the fitted distribution, so only three numbers travel with the
payload. We compare against a normal-driven table and against LZ78.
"""

from gradcomp import (
    build_grid,
    build_huffman,
    decode,
    dequantize,
    encode,
    fit,
    fit_norm,
    lz78_decode,
    lz78_encode,
    pmf_empirical,
    pmf_from_model,
    quantize,
    sample,
)
from gradcomp.gennorm import GenNormParams

grid = build_grid()
print(f"{grid.n_bins} bins, smallest positive edge {float(grid.edges[grid.zero_index + 1])!r}, "
      f"largest {float(grid.edges[-1])!r}")

x = sample(GenNormParams(0.0, 1e-3, 0.8), 100_000, seed=3)
stream = quantize(x, grid)
print("example: 1.6 ->", dequantize(quantize([1.6], grid), grid)[0])

# The empirical entropy of the bin indices is the bar any coder is measured against.
h = pmf_empirical(stream, grid).entropy()

results = {}
for name, model in [("huffman-gennorm", fit(x)), ("huffman-norm", fit_norm(x))]:
    book = build_huffman(pmf_from_model(model, grid))
    blob = encode(stream, book)
    assert decode(blob, book) == stream
    results[name] = blob.bit_length

blob = lz78_encode(stream)
assert lz78_decode(blob) == stream
results["lz78"] = blob.bit_length

print(f"entropy {h:.3f} bits/symbol")
for name, bits in results.items():
    print(f"{name:16s} {bits / len(stream):.3f} bits/symbol")
