"""Pairwise convolution evidence feeding a multi-channel LSTM trained on index direction."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensorcore as tc
from .data import AlignedPanel, ObservationMatrix, TargetSeries, minmax_normalize, observation_stack, rise_fall_targets
from .tensorcore import AdamState, Parameter, Tensor

logger = logging.getLogger(__name__)

GATES = ("i", "f", "g", "o")


@dataclass(frozen=True)
class ModelConfig:
    n_patterns: int = 4
    window: int = 5
    hidden_size: int = 32
    n_layers: int = 1
    reg: float = 1e-4
    lr: float = 1e-3
    epochs: int = 200
    seed: int = 0
    features: tuple[str, ...] = ("close", "volume")
    gates: str = "igo"
    kernel_init: str = "symmetric"  # "nonnegative" folds the initial kernels to >= 0

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        for name in ("n_patterns", "window", "hidden_size", "n_layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.reg < 0 or self.lr <= 0 or self.epochs < 0:
            raise ValueError("reg must be >= 0, lr > 0, epochs >= 0")
        if not self.features:
            raise ValueError("feature subset is empty")
        if self.kernel_init not in ("nonnegative", "symmetric"):
            raise ValueError("kernel_init must be 'nonnegative' or 'symmetric'")
        if not self.gates or set(self.gates) - set(GATES):
            raise ValueError(f"gates must be a non-empty subset of {''.join(GATES)!r}")

    @classmethod
    def full_scale(cls, **overrides) -> "ModelConfig":
        """16 latent patterns, 256 hidden units, two stacked layers."""
        return cls(**{"n_patterns": 16, "hidden_size": 256, "n_layers": 2, **overrides})

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["features"] = list(self.features)
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class KernelBank:
    kernels: Parameter  # (K, 2M, L)
    bias: Parameter  # scalar

    @property
    def n_patterns(self) -> int:
        return self.kernels.shape[0]

    @property
    def window(self) -> int:
        return self.kernels.shape[2]


@dataclass
class LstmLayer:
    """Input weights ``w_in[gate]`` (H, D), hidden weights ``w_hid[gate]`` (H, H) and biases."""

    w_in: dict[str, Parameter]
    w_hid: dict[str, Parameter]
    b_in: dict[str, Parameter]
    b_hid: dict[str, Parameter]

    @property
    def hidden_size(self) -> int:
        return self.w_in["i"].shape[0]

    @property
    def input_size(self) -> int:
        return self.w_in["i"].shape[1]

    def parameters(self) -> list[Parameter]:
        return [d[g] for d in (self.w_in, self.w_hid, self.b_in, self.b_hid) for g in GATES]

    @classmethod
    def initialize(cls, rng: np.random.Generator, input_size: int, hidden: int, prefix: str) -> "LstmLayer":
        parts: dict[str, dict[str, Parameter]] = {"w_in": {}, "w_hid": {}, "b_in": {}, "b_hid": {}}
        for g in GATES:
            parts["w_in"][g] = Parameter(tc.uniform_init(rng, (hidden, input_size), input_size), f"{prefix}.W_i{g}")
            parts["w_hid"][g] = Parameter(tc.uniform_init(rng, (hidden, hidden), hidden), f"{prefix}.W_h{g}")
            parts["b_in"][g] = Parameter(tc.uniform_init(rng, (hidden,), hidden), f"{prefix}.B_i{g}")
            parts["b_hid"][g] = Parameter(tc.uniform_init(rng, (hidden,), hidden), f"{prefix}.B_h{g}")
        return cls(**parts)


@dataclass
class Head:
    projection: Parameter  # (K, H): top hidden state -> Out
    alpha: Parameter  # (K,)
    beta: Parameter  # scalar

    def parameters(self) -> list[Parameter]:
        return [self.projection, self.alpha, self.beta]


@dataclass(frozen=True)
class EvidenceTensor:
    pairs: tuple[tuple[str, str], ...]
    values: np.ndarray  # (P, K, N - L + 1)

    @property
    def n_steps(self) -> int:
        return self.values.shape[2]


@dataclass
class DeepCnlModel:
    config: ModelConfig
    pairs: list[tuple[str, str]]
    bank: KernelBank
    layers: list[LstmLayer]
    head: Head
    optimizer: AdamState | None = None
    meta: dict = field(default_factory=dict)

    @property
    def nodes(self) -> list[str]:
        seen = dict.fromkeys(s for p in self.pairs for s in p)
        return list(seen)

    def parameters(self) -> list[Parameter]:
        ps = [self.bank.kernels, self.bank.bias]
        for layer in self.layers:
            ps.extend(layer.parameters())
        return ps + self.head.parameters()

    @classmethod
    def initialize(cls, config: ModelConfig, pairs: Sequence[tuple[str, str]], n_rows: int) -> "DeepCnlModel":
        """Fresh parameters, uniform in +-1/sqrt(fan_in), from ``config.seed``."""
        rng = np.random.default_rng(config.seed)
        K, L, H = config.n_patterns, config.window, config.hidden_size
        fan = n_rows * L
        kernels = tc.uniform_init(rng, (K, n_rows, L), fan)
        if config.kernel_init == "nonnegative":
            kernels = np.abs(kernels)
        bank = KernelBank(Parameter(kernels, "conv.C"),
                          Parameter(tc.uniform_init(rng, (), fan), "conv.B"))
        layers = []
        width = len(pairs) * K
        for n in range(config.n_layers):
            layers.append(LstmLayer.initialize(rng, width, H, f"lstm{n}"))
            width = H
        head = Head(Parameter(tc.uniform_init(rng, (K, H), H), "head.projection"),
                    Parameter(tc.uniform_init(rng, (K,), K), "head.alpha"),
                    Parameter(tc.uniform_init(rng, (), K), "head.beta"))
        return cls(config, [tuple(p) for p in pairs], bank, layers, head)

    def scores(self, observations: np.ndarray) -> Tensor:
        """Y' for a (P, 2M, N) observation stack, one score per evidence step."""
        return forward(evidence_tensor(observations, self.bank), self.layers, self.head)

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "pairs": [list(p) for p in self.pairs],
            "n_rows": self.bank.kernels.shape[1],
            "parameters": [tc.parameter_to_dict(p) for p in self.parameters()],
            "optimizer": self.optimizer.to_dict() if self.optimizer else None,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DeepCnlModel":
        cfg = ModelConfig(**d["config"])
        model = cls.initialize(cfg, [tuple(p) for p in d["pairs"]], d["n_rows"])
        stored = {p["name"]: tc.parameter_from_dict(p) for p in d["parameters"]}
        for p in model.parameters():
            if p.name not in stored or stored[p.name].shape != p.shape:
                raise ValueError(f"checkpoint is missing or misshapes parameter {p.name!r}")
            p.value = stored[p.name].value
        if d.get("optimizer"):
            model.optimizer = AdamState.from_dict(d["optimizer"])
        model.meta = dict(d.get("meta") or {})
        return model


def save_checkpoint(model: DeepCnlModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict()))


def load_checkpoint(path) -> DeepCnlModel:
    d = json.loads(Path(path).read_text())
    missing = {"config", "pairs", "n_rows", "parameters"} - set(d if isinstance(d, dict) else ())
    if missing:
        raise ValueError(f"{path} is not a model checkpoint (missing {', '.join(sorted(missing))})")
    return DeepCnlModel.from_dict(d)


# ----------------------------------------------------------------------
# convolution layer
# ----------------------------------------------------------------------


def evidence_tensor(observations, bank: KernelBank) -> Tensor:
    """Differentiable (P, K, N - L + 1) evidence for a (P, 2M, N) stack."""
    return tc.add(tc.sliding_dot(observations, bank.kernels), bank.bias)


def compute_evidence(observations: Sequence[ObservationMatrix] | np.ndarray, bank: KernelBank) -> EvidenceTensor:
    """Slide every kernel over every pair's observation matrix (valid, stride 1)."""
    if isinstance(observations, np.ndarray):
        stack = observations
        pairs: tuple = ()
    else:
        if not observations:
            raise ValueError("no observation matrices")
        shapes = {o.rows.shape for o in observations}
        if len(shapes) != 1:
            raise ValueError(f"observation matrices disagree in shape: {sorted(shapes)}")
        stack = np.stack([o.rows for o in observations])
        pairs = tuple(o.pair for o in observations)
    if stack.shape[1] != bank.kernels.shape[1]:
        raise ValueError(f"observations have {stack.shape[1]} rows, kernels expect {bank.kernels.shape[1]}")
    return EvidenceTensor(pairs, evidence_tensor(stack, bank).value)


# ----------------------------------------------------------------------
# recurrent layer
# ----------------------------------------------------------------------


def _cell(pre: dict[str, Tensor], c_prev) -> tuple[Tensor, Tensor]:
    f = tc.sigmoid(pre["f"])
    i = tc.sigmoid(pre["i"])
    o = tc.sigmoid(pre["o"])
    g = tc.tanh(pre["g"])
    c = f * c_prev + i * g
    return o * tc.tanh(c), c


def lstm_step(x, h_prev, c_prev, layer: LstmLayer) -> tuple[Tensor, Tensor]:
    """One LSTM update; returns (h, c)."""
    x, h_prev, c_prev = tc.as_tensor(x), tc.as_tensor(h_prev), tc.as_tensor(c_prev)
    H = layer.hidden_size
    if x.shape != (layer.input_size,) or h_prev.shape != (H,) or c_prev.shape != (H,):
        raise ValueError(
            f"lstm_step: got x{x.shape}, h{h_prev.shape}, c{c_prev.shape} for a {layer.input_size}->{H} layer")
    pre = {g: layer.w_in[g] @ x + layer.b_in[g] + layer.w_hid[g] @ h_prev + layer.b_hid[g] for g in GATES}
    return _cell(pre, c_prev)


def _run_layer(inputs: Tensor, layer: LstmLayer) -> Tensor:
    """Unroll over the rows of ``inputs`` (T, D) from a zero state; returns (T, H)."""
    T = inputs.shape[0]
    H = layer.hidden_size
    ones = np.ones((T, 1))
    proj = {}
    for g in GATES:
        bias = tc.reshape(layer.b_in[g] + layer.b_hid[g], (1, H))
        proj[g] = inputs @ layer.w_in[g].T + tc.matmul(ones, bias)
    h = Tensor(np.zeros(H))
    c = Tensor(np.zeros(H))
    hs = []
    for t in range(T):
        pre = {g: proj[g][t] + layer.w_hid[g] @ h for g in GATES}
        h, c = _cell(pre, c)
        hs.append(h)
    return tc.stack(hs)


def forward(evidence, layers: Sequence[LstmLayer], head: Head) -> Tensor:
    """Score sequence Y' of length N - L + 1.

    Layer 0 sees X(t) flattened pair-major then pattern, so column
    ``p * K + k`` carries pattern k of pair p.
    """
    values = evidence.values if isinstance(evidence, EvidenceTensor) else evidence
    x = tc.as_tensor(values)
    if x.ndim != 3 or x.shape[2] == 0:
        raise ValueError("evidence must be a non-empty (P, K, T) array")
    P, K, T = x.shape
    if layers[0].input_size != P * K:
        raise ValueError(f"layer 0 expects {layers[0].input_size} inputs, evidence has {P}x{K}")
    seq = tc.reshape(tc.transpose(x, (2, 0, 1)), (T, P * K))
    for layer in layers:
        seq = _run_layer(seq, layer)
    out = seq @ head.projection.T  # (T, K)
    return out @ head.alpha + head.beta


# ----------------------------------------------------------------------
# supervision
# ----------------------------------------------------------------------


def score(y: float) -> tuple[float, float]:
    """(rise degree, fall degree) = (e^y / (1 + e^y), 1 / (1 + e^y))."""
    if not np.isfinite(y):
        raise ValueError("score needs a finite input")
    if y >= 0:
        e = np.exp(-y)
        return float(1.0 / (1.0 + e)), float(e / (1.0 + e))
    e = np.exp(y)
    return float(e / (1.0 + e)), float(1.0 / (1.0 + e))


def frobenius(params: Sequence[Parameter]) -> Tensor:
    total = None
    for p in params:
        sq = tc.sum(p * p)
        total = sq if total is None else total + sq
    return tc.sqrt(total)


def loss(y_scores, targets, params: Sequence[Parameter], reg: float) -> Tensor:
    """Mean negative log-likelihood of the label under a softmax over the
    (rise, fall) degrees, plus ``reg`` times the Frobenius norm of all params.

    Label 1 (rise) selects the rise degree. With d = rise - fall = 2*sigmoid(y) - 1
    the per-step term is log(1 + exp(-d)) for a rise and log(1 + exp(d)) for a fall.
    """
    y = tc.as_tensor(y_scores)
    labels = np.asarray(targets.values if isinstance(targets, TargetSeries) else targets)
    if y.shape != labels.shape:
        raise ValueError(f"loss: {y.shape[0] if y.ndim else 0} scores vs {labels.size} labels")
    n = labels.size
    total = None
    if n:
        sign = Tensor(2.0 * labels - 1.0)
        margin = sign * (2.0 * tc.sigmoid(y) - 1.0)
        total = tc.sum(tc.log(1.0 + tc.exp(-margin))) * (1.0 / n)
    if reg > 0 and params:
        penalty = frobenius(params) * reg
        total = penalty if total is None else total + penalty
    return total if total is not None else Tensor(0.0)


def accuracy(y_scores: np.ndarray, labels: np.ndarray) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        return float("nan")
    return float(np.mean((np.asarray(y_scores) > 0).astype(int) == labels))


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float
    accuracy: float


@dataclass
class TrainResult:
    model: DeepCnlModel
    history: list[EpochRecord]
    final_loss: float
    final_accuracy: float
    majority_accuracy: float


def aligned_labels(index_close: Sequence[float], window: int) -> np.ndarray:
    """Labels for evidence steps 0..N-L-1: step t predicts the move into day t+L."""
    targets = rise_fall_targets(index_close)
    return targets.values[window - 1:]


def train(panel: AlignedPanel, index_close: Sequence[float], config: ModelConfig) -> TrainResult:
    """Full-batch Adam on min-max normalized pair evidence against index direction."""
    if len(panel.symbols) < 2:
        raise ValueError("need at least two stocks")
    N, L = panel.n_days, config.window
    if N <= L + 1:
        raise ValueError(f"need more than {L + 1} days, panel has {N}")
    if len(index_close) != N:
        raise ValueError(f"index has {len(index_close)} closes, panel has {N} days")
    norm = minmax_normalize(panel)
    pairs, obs = observation_stack(norm, config.features)
    labels = aligned_labels(index_close, L)
    majority = float(max(labels.mean(), 1.0 - labels.mean()))
    if labels.min() == labels.max():
        warnings.warn("all rise-fall labels are identical; accuracy is the majority rate", RuntimeWarning)

    model = DeepCnlModel.initialize(config, pairs, obs.shape[1])
    model.meta = {"date_range": [panel.dates[0].isoformat(), panel.dates[-1].isoformat()],
                  "config_hash": config.digest()}
    params = model.parameters()
    state = AdamState(lr=config.lr)
    history = []
    steps = N - L
    for epoch in range(config.epochs):
        y = model.scores(obs)[:steps]
        value = loss(y, labels, params, config.reg)
        history.append(EpochRecord(epoch, float(value.value), accuracy(y.value, labels)))
        tc.backward(value)
        tc.adam_step(params, state)
        if epoch % 50 == 0:
            logger.debug("epoch %d loss %.6f acc %.3f", epoch, history[-1].loss, history[-1].accuracy)
    model.optimizer = state
    y = model.scores(obs)[:steps]
    final = loss(y, labels, params, config.reg)
    return TrainResult(model, history, float(final.value), accuracy(y.value, labels), majority)


def write_history(history: Sequence[EpochRecord], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss", "accuracy"])
        for r in history:
            w.writerow([r.epoch, repr(r.loss), repr(r.accuracy)])


def read_history(path) -> list[EpochRecord]:
    with Path(path).open(newline="") as fh:
        return [EpochRecord(int(r["epoch"]), float(r["loss"]), float(r["accuracy"])) for r in csv.DictReader(fh)]
