"""Desk-scale federated averaging with a hand-differentiated MLP.

Each round every user computes the full-shard average gradient of a
2-layer ReLU network under softmax cross-entropy. The gradient is quantized
per layer and then coded with every requested coder. Every blob is decoded
and checked against the quantized stream, and a mismatch aborts the run. The
server averages the dequantized gradients and takes a plain gradient step.

The model-driven Huffman coders use GenNorm and normal fits to the round's
pre-quantization gradients of each layer, pooled over users.
"""

from __future__ import annotations

import configparser
import csv
import io
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import coder, gennorm, stats
from .errors import ConfigError, CorruptionError, InputError
from .quantizer import Fp8Format, build_grid, dequantize, quantize

PARAM_NAMES = ("W1", "b1", "W2", "b2")
LAYERS = {"hidden": ("W1", "b1"), "output": ("W2", "b2")}
CODERS = ("lz78", "huffman-gennorm", "huffman-norm", "huffman-empirical")


@dataclass(frozen=True, eq=False)
class ToyModel:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @property
    def dims(self):
        return self.W1.shape[0], self.W1.shape[1], self.W2.shape[1]

    def params(self):
        return {k: getattr(self, k) for k in PARAM_NAMES}

    def equals(self, other):
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in PARAM_NAMES)


@dataclass(frozen=True, eq=False)
class ClientDataset:
    features: np.ndarray
    labels: np.ndarray
    client_id: int = 0

    def __post_init__(self):
        if len(self.features) != len(self.labels) or len(self.labels) < 1:
            raise InputError("features and labels must be non-empty and equally long")


def init_model(d, h, c, seed=0) -> ToyModel:
    rng = np.random.default_rng(seed)
    return ToyModel(
        W1=rng.normal(0.0, math.sqrt(2.0 / d), size=(d, h)),
        b1=np.zeros(h),
        W2=rng.normal(0.0, math.sqrt(2.0 / h), size=(h, c)),
        b2=np.zeros(c),
    )


def _forward(model, X):
    pre = X @ model.W1 + model.b1
    hid = np.maximum(pre, 0.0)
    logits = hid @ model.W2 + model.b2
    logits = logits - logits.max(axis=1, keepdims=True)
    expl = np.exp(logits)
    prob = expl / expl.sum(axis=1, keepdims=True)
    return pre, hid, logits, prob


def _check_shapes(model, data):
    d, _, c = model.dims
    X = np.asarray(data.features, dtype=np.float64)
    y = np.asarray(data.labels)
    if X.ndim != 2 or X.shape[1] != d:
        raise InputError(f"features must have shape (n, {d})")
    if y.min() < 0 or y.max() >= c:
        raise InputError(f"labels must lie in [0, {c})")
    return X, y


def loss(model: ToyModel, data: ClientDataset) -> float:
    X, y = _check_shapes(model, data)
    _, _, logits, _ = _forward(model, X)
    logz = np.log(np.exp(logits).sum(axis=1))
    return float(np.mean(logz - logits[np.arange(len(y)), y]))


def accuracy(model: ToyModel, data: ClientDataset) -> float:
    X, y = _check_shapes(model, data)
    _, _, _, prob = _forward(model, X)
    return float(np.mean(prob.argmax(axis=1) == y))


def local_gradient(model: ToyModel, data: ClientDataset) -> dict:
    """Exact mean cross-entropy gradient over the client's samples."""
    X, y = _check_shapes(model, data)
    n = len(y)
    pre, hid, _, prob = _forward(model, X)
    dlogits = prob
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    dhid = dlogits @ model.W2.T
    dpre = dhid * (pre > 0)
    return {
        "W1": X.T @ dpre,
        "b1": dpre.sum(axis=0),
        "W2": hid.T @ dlogits,
        "b2": dlogits.sum(axis=0),
    }


def aggregate(gradients) -> dict:
    """Unweighted mean over users of per-parameter gradients."""
    gradients = list(gradients)
    if not gradients:
        raise InputError("need at least one user's gradient")
    keys = gradients[0].keys()
    for g in gradients[1:]:
        if g.keys() != keys or any(g[k].shape != gradients[0][k].shape for k in keys):
            raise InputError("all users must send gradients of identical shapes")
    return {k: np.mean([g[k] for g in gradients], axis=0) for k in keys}


def update(model: ToyModel, aggregated: dict, learning_rate: float) -> ToyModel:
    if not learning_rate > 0:
        raise InputError("learning rate must be positive")
    new = {}
    for k in PARAM_NAMES:
        g = np.asarray(aggregated[k])
        w = getattr(model, k)
        if g.shape != w.shape:
            raise InputError(f"gradient for {k} has shape {g.shape}, expected {w.shape}")
        new[k] = w - learning_rate * g
    return ToyModel(**new)


def flatten_layer(grad: dict, layer: str) -> np.ndarray:
    return np.concatenate([grad[k].ravel() for k in LAYERS[layer]])


def unflatten_layer(vec: np.ndarray, like: dict, layer: str) -> dict:
    out, pos = {}, 0
    for k in LAYERS[layer]:
        size = like[k].size
        out[k] = vec[pos:pos + size].reshape(like[k].shape)
        pos += size
    return out


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class BenchConfig:
    """Experiment configuration.

    The text form is one ``key = value`` per line; ``#`` starts a comment and
    ``coders`` is a comma-separated list.
    """

    users: int = 4
    rounds: int = 50
    input_dim: int = 20
    hidden_dim: int = 32
    classes: int = 2
    samples_per_user: int = 200
    test_samples: int = 1000
    separation: float = 2.0
    learning_rate: float = 0.1
    sign_bits: int = 1
    exponent_bits: int = 5
    mantissa_bits: int = 2
    exponent_bias: int = 16
    coders: tuple = ("lz78", "huffman-gennorm", "huffman-norm")
    quantize: bool = True
    seed: int = 0
    output_dir: str = ""

    def __post_init__(self):
        if self.users < 1 or self.rounds < 0:
            raise ConfigError("users must be >= 1 and rounds >= 0")
        if min(self.input_dim, self.hidden_dim) < 1 or self.classes < 2:
            raise ConfigError("model needs input_dim, hidden_dim >= 1 and classes >= 2")
        if self.samples_per_user < 1 or self.test_samples < 1:
            raise ConfigError("sample counts must be positive")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        pooled = self.users * (self.hidden_dim + 1) * self.classes
        if pooled < gennorm.MIN_FIT_SAMPLES:
            raise ConfigError(
                f"output layer pools only {pooled} gradient entries per round; "
                f"fits need {gennorm.MIN_FIT_SAMPLES} (raise users, hidden_dim or classes)")
        coders_ = tuple(self.coders)
        unknown = set(coders_) - set(CODERS)
        if unknown:
            raise ConfigError(f"unknown coders: {sorted(unknown)}")
        object.__setattr__(self, "coders", coders_)

    @property
    def fmt(self):
        return Fp8Format(self.sign_bits, self.exponent_bits, self.mantissa_bits, self.exponent_bias)

    @classmethod
    def from_text(cls, text: str) -> "BenchConfig":
        cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
        try:
            cp.read_string("[bench]\n" + text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from None
        kinds = {f.name: f.type for f in fields(cls)}
        kw = {}
        for key, raw in cp["bench"].items():
            if key not in kinds:
                raise ConfigError(f"unknown config key {key!r}")
            default = getattr(cls, key)
            try:
                if key == "coders":
                    kw[key] = tuple(t.strip() for t in raw.split(",") if t.strip())
                elif isinstance(default, bool):
                    kw[key] = cp["bench"].getboolean(key)
                elif isinstance(default, int):
                    kw[key] = int(raw)
                elif isinstance(default, float):
                    kw[key] = float(raw)
                else:
                    kw[key] = raw
            except ValueError:
                raise ConfigError(f"bad value for {key}: {raw!r}") from None
        return cls(**kw)

    @classmethod
    def from_file(cls, path) -> "BenchConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "coders":
                v = ", ".join(v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


def make_blob_task(cfg: BenchConfig):
    """IID-partitioned isotropic Gaussian class blobs.

    Returns ``(clients, test_set)``.
    """
    rng = np.random.default_rng([cfg.seed, 1])
    means = rng.normal(0.0, 1.0, size=(cfg.classes, cfg.input_dim))
    means *= cfg.separation / np.linalg.norm(means, axis=1, keepdims=True)

    def draw(n):
        y = rng.integers(0, cfg.classes, size=n)
        X = means[y] + rng.normal(0.0, 1.0, size=(n, cfg.input_dim))
        return X, y

    X, y = draw(cfg.users * cfg.samples_per_user)
    clients = [
        ClientDataset(X[u::cfg.users], y[u::cfg.users], u) for u in range(cfg.users)
    ]
    Xt, yt = draw(cfg.test_samples)
    return clients, ClientDataset(Xt, yt, -1)


# ---------------------------------------------------------------------------
# ledger and reports


@dataclass(frozen=True)
class LedgerEntry:
    round: int
    user: int
    layer: str
    coder: str
    payload_bits: int
    header_bits: int
    symbol_count: int


@dataclass
class OverheadLedger:
    """Per (round, user, layer, coder) bit counts."""

    entries: list = field(default_factory=list)

    def add(self, entry: LedgerEntry):
        self.entries.append(entry)

    def total(self, coder_name, include_header=False) -> int:
        """Communication overhead R: payload bits summed over rounds and users."""
        return sum(e.payload_bits + (e.header_bits if include_header else 0)
                   for e in self.entries if e.coder == coder_name)

    def cumulative(self, coder_name):
        """Running total of R after each round."""
        per_round = {}
        for e in self.entries:
            if e.coder == coder_name:
                per_round[e.round] = per_round.get(e.round, 0) + e.payload_bits
        out, run = [], 0
        for t in sorted(per_round):
            run += per_round[t]
            out.append(run)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["round", "user", "layer", "coder", "payload_bits", "header_bits", "symbol_count"])
        for e in self.entries:
            w.writerow([e.round, e.user, e.layer, e.coder, e.payload_bits, e.header_bits,
                        e.symbol_count])
        return buf.getvalue()


@dataclass(frozen=True)
class RoundReport:
    round: int
    loss: float
    accuracy: float
    bits_per_symbol: dict  # (layer, coder) -> float
    fits: dict  # layer -> (gennorm params, norm params)


def round_reports_to_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["round", "layer", "coder", "bits_per_symbol", "loss", "accuracy",
                "gn_mu", "gn_alpha", "gn_beta", "norm_mu", "norm_alpha"])
    for r in reports:
        for (layer, name), bps in r.bits_per_symbol.items():
            gn, nm = r.fits[layer]
            w.writerow([r.round, layer, name, repr(bps), repr(r.loss), repr(r.accuracy),
                        repr(gn.mu), repr(gn.alpha), repr(gn.beta), repr(nm.mu), repr(nm.alpha)])
    return buf.getvalue()


@dataclass
class ExperimentResult:
    config: BenchConfig
    ledger: OverheadLedger
    rounds: list
    fit_reports: list
    model: ToyModel


def _encode_verify(name, stream, codebooks, grid):
    if name == "lz78":
        blob = coder.lz78_encode(stream)
        back = coder.lz78_decode(coder.BitBlob.from_bytes(blob.to_bytes()))
    else:
        cb = codebooks.get(name)
        if cb is None:
            cb = coder.build_huffman(coder.pmf_empirical(stream, grid))
        blob = coder.encode(stream, cb)
        back = coder.decode(coder.BitBlob.from_bytes(blob.to_bytes()), cb)
    if back != stream:
        raise CorruptionError(f"{name} round trip did not reproduce the quantized gradient")
    return blob, back


def run_experiment(cfg: BenchConfig) -> ExperimentResult:
    """Train for ``cfg.rounds`` rounds, coding every upload with every coder."""
    clients, test = make_blob_task(cfg)
    model = init_model(cfg.input_dim, cfg.hidden_dim, cfg.classes, seed=[cfg.seed, 2])
    grid = build_grid(cfg.fmt)
    train = ClientDataset(np.concatenate([c.features for c in clients]),
                          np.concatenate([c.labels for c in clients]))
    ledger = OverheadLedger()
    reports, fit_reports = [], []
    for t in range(cfg.rounds):
        grads = [local_gradient(model, c) for c in clients]
        fits, books = {}, {}
        for layer in LAYERS:
            pooled = np.concatenate([flatten_layer(g, layer) for g in grads])
            fit_reports.append(stats.fit_report(pooled, epoch=t, layer_label=layer))
            gn, nm = gennorm.fit(pooled), gennorm.fit_norm(pooled)
            fits[layer] = (gn, nm)
            books[layer] = {
                "huffman-gennorm": coder.build_huffman(
                    coder.pmf_from_model(gn, grid, coder.ModelTag.GENNORM)),
                "huffman-norm": coder.build_huffman(
                    coder.pmf_from_model(nm, grid, coder.ModelTag.NORM)),
            }
        received = []
        bits = {}
        for u, g in enumerate(grads):
            rec = {}
            for layer in LAYERS:
                flat = flatten_layer(g, layer)
                stream = quantize(flat, grid)
                decoded = None
                for name in cfg.coders:
                    blob, back = _encode_verify(name, stream, books[layer], grid)
                    decoded = back
                    ledger.add(LedgerEntry(t, u, layer, name, blob.bit_length,
                                           blob.header_bits, len(stream)))
                    key = (layer, name)
                    nb, ns = bits.get(key, (0, 0))
                    bits[key] = (nb + blob.bit_length, ns + len(stream))
                if decoded is None:
                    decoded = stream
                rec.update(unflatten_layer(dequantize(decoded, grid), g, layer))
            received.append(rec)
        model = update(model, aggregate(received), cfg.learning_rate)
        reports.append(RoundReport(
            round=t,
            loss=loss(model, train),
            accuracy=accuracy(model, test),
            bits_per_symbol={k: nb / ns for k, (nb, ns) in bits.items()},
            fits=fits,
        ))
    return ExperimentResult(cfg, ledger, reports, fit_reports, model)


@dataclass
class AccuracyCurves:
    loss_full: list
    accuracy_full: list
    loss_quantized: list
    accuracy_quantized: list


def _train(cfg, quantized):
    clients, test = make_blob_task(cfg)
    model = init_model(cfg.input_dim, cfg.hidden_dim, cfg.classes, seed=[cfg.seed, 2])
    grid = build_grid(cfg.fmt)
    train = ClientDataset(np.concatenate([c.features for c in clients]),
                          np.concatenate([c.labels for c in clients]))
    losses, accs = [], []
    for _ in range(cfg.rounds):
        grads = [local_gradient(model, c) for c in clients]
        if quantized:
            grads = [{k: dequantize(quantize(v, grid), grid).reshape(v.shape)
                      for k, v in g.items()} for g in grads]
        model = update(model, aggregate(grads), cfg.learning_rate)
        losses.append(loss(model, train))
        accs.append(accuracy(model, test))
    return losses, accs


def accuracy_comparison(cfg: BenchConfig) -> AccuracyCurves:
    """Full-precision arm vs quantized-gradient arm from identical seeds.

    With ``cfg.quantize`` false both arms train on raw gradients.
    """
    lf, af = _train(cfg, False)
    lq, aq = _train(cfg, cfg.quantize)
    return AccuracyCurves(lf, af, lq, aq)


def reference_config(**overrides) -> BenchConfig:
    return replace(BenchConfig(), **overrides)
