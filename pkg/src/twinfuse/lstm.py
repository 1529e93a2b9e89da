"""Single-layer LSTM sequence classifier with hand-written backpropagation.

Cell (z = [h_prev, x], all products elementwise except the W·z terms)::

    f = sigmoid(W_f z + b_f)      i = sigmoid(W_i z + b_i)
    g = tanh(W_c z + b_c)         o = sigmoid(W_o z + b_o)
    c = f * c_prev + i * g        h = o * tanh(c)

The final hidden state feeds a softmax layer over enrolled subjects.
Training is full-batch gradient descent on the mean cross-entropy.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, TrainingError
from .fusion import ScoreMatrix

PARAM_NAMES = ("W_f", "W_i", "W_c", "W_o", "b_f", "b_i", "b_c", "b_o", "W_out", "b_out")


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))  # overflow-free form


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class LstmParams:
    W_f: np.ndarray
    W_i: np.ndarray
    W_c: np.ndarray
    W_o: np.ndarray
    b_f: np.ndarray
    b_i: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray

    @property
    def hidden_size(self) -> int:
        return self.W_f.shape[0]

    @property
    def input_size(self) -> int:
        return self.W_f.shape[1] - self.W_f.shape[0]

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """Gate weights as one (4H, H+D) matrix and (4H,) bias, order f, i, c, o."""
        return (np.concatenate([self.W_f, self.W_i, self.W_c, self.W_o]),
                np.concatenate([self.b_f, self.b_i, self.b_c, self.b_o]))

    def check(self) -> None:
        H = self.hidden_size
        for name in ("W_f", "W_i", "W_c", "W_o"):
            W = getattr(self, name)
            if W.shape != self.W_f.shape or W.shape[1] <= H:
                raise DataError(f"{name} has shape {W.shape}, expected ({H}, {H}+input)")
        for name in ("b_f", "b_i", "b_c", "b_o"):
            if getattr(self, name).shape != (H,):
                raise DataError(f"{name} must have shape ({H},)")


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden_size: int, batch: int | None = None) -> "LstmState":
        shape = (hidden_size,) if batch is None else (batch, hidden_size)
        return cls(np.zeros(shape), np.zeros(shape))


@dataclass
class ClassifierHead:
    W_out: np.ndarray
    b_out: np.ndarray
    classes: tuple[str, ...]

    def probabilities(self, h: np.ndarray) -> np.ndarray:
        return softmax(h @ self.W_out.T + self.b_out)


@dataclass(frozen=True)
class LstmHyper:
    hidden_size: int = 32
    learning_rate: float = 2.0
    epochs: int = 200
    init_scale: float = 0.1
    seq_len: int = 100
    standardize: bool = True
    seed: int = 0


@dataclass
class LstmModel:
    params: LstmParams
    head: ClassifierHead
    hyper: LstmHyper
    feature_mean: np.ndarray
    feature_std: np.ndarray
    loss_trace: list[float] = field(default_factory=list)


def init_params(hidden: int, inputs: int, n_classes: int, rng: np.random.Generator,
                scale: float = 0.1) -> tuple[LstmParams, np.ndarray, np.ndarray]:
    """Uniform(-scale, scale) draws in PARAM_NAMES order."""
    cols = hidden + inputs
    shapes = [(hidden, cols)] * 4 + [(hidden,)] * 4 + [(n_classes, hidden), (n_classes,)]
    arrays = [rng.uniform(-scale, scale, size=s) for s in shapes]
    return LstmParams(*arrays[:8]), arrays[8], arrays[9]


def cell_forward(x, s: LstmState, p: LstmParams) -> LstmState:
    """One LSTM step; ``x``/``s`` may carry a leading batch axis."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != p.input_size or s.h.shape[-1] != p.hidden_size:
        raise DataError(f"dimension mismatch: input {x.shape[-1]} vs {p.input_size}, "
                        f"hidden {s.h.shape[-1]} vs {p.hidden_size}")
    z = np.concatenate([s.h, x], axis=-1)
    f = sigmoid(z @ p.W_f.T + p.b_f)
    i = sigmoid(z @ p.W_i.T + p.b_i)
    g = np.tanh(z @ p.W_c.T + p.b_c)
    o = sigmoid(z @ p.W_o.T + p.b_o)
    c = f * s.c + i * g
    return LstmState(o * np.tanh(c), c)


def sequence_forward(seq, p: LstmParams) -> LstmState:
    frames = np.asarray(getattr(seq, "frames", seq), dtype=np.float64)
    if frames.ndim != 2 or len(frames) == 0:
        raise DataError("sequence must be a non-empty (frames, dims) array")
    s = LstmState.zeros(p.hidden_size)
    for x in frames:
        s = cell_forward(x, s, p)
    return s


def _kernel_weights(p: LstmParams) -> tuple[np.ndarray, np.ndarray]:
    """Gate rows reordered to (f, i, o, g) with sigmoid rows halved.

    One tanh over the whole pre-activation then yields tanh(a/2) for the
    sigmoid gates and tanh(a) for the candidate, since sigmoid(a) = (1 + tanh(a/2)) / 2.
    """
    W = np.concatenate([0.5 * p.W_f, 0.5 * p.W_i, 0.5 * p.W_o, p.W_c])
    b = np.concatenate([0.5 * p.b_f, 0.5 * p.b_i, 0.5 * p.b_o, p.b_c])
    return W, b


# The batched kernels keep activations gate-major, (features, batch), so each
# gate block is a contiguous slice; strided slices are several times slower.

def _forward(X: np.ndarray, p: LstmParams):
    """Batched forward over X of shape (batch, steps, inputs); returns h_T and the tape."""
    B, T, D = X.shape
    H = p.hidden_size
    W, b = _kernel_weights(p)
    Wh = np.ascontiguousarray(W[:, :H])
    Xt = np.ascontiguousarray(X.transpose(1, 0, 2))  # (steps, batch, inputs)
    # input contribution for every step in one GEMM, then gate-major per step
    acts = np.ascontiguousarray(
        (Xt.reshape(T * B, D) @ W[:, H:].T + b).reshape(T, B, 4 * H).transpose(0, 2, 1))
    hs = np.zeros((T + 1, H, B))  # hs[t] is the hidden state entering step t
    cs = np.zeros((T + 1, H, B))
    tcs = np.empty((T, H, B))
    rec = np.empty((4 * H, B))
    tmp = np.empty((H, B))
    for t in range(T):
        act = acts[t]
        np.matmul(Wh, hs[t], out=rec)
        act += rec
        np.tanh(act, out=act)
        sig = act[:3 * H]
        sig *= 0.5
        sig += 0.5
        np.multiply(act[:H], cs[t], out=cs[t + 1])
        np.multiply(act[H:2 * H], act[3 * H:], out=tmp)
        cs[t + 1] += tmp
        np.tanh(cs[t + 1], out=tcs[t])
        np.multiply(act[2 * H:3 * H], tcs[t], out=hs[t + 1])
    return hs[T].T.copy(), (Xt, hs, cs, acts, tcs)


def _backward(dh_T: np.ndarray, tape, p: LstmParams) -> list[np.ndarray]:
    """Backpropagation through time from dL/dh_T; returns grads of the 8 cell parameters."""
    Xt, hs, cs, acts, tcs = tape
    T, H, B = tcs.shape
    W, _ = _kernel_weights(p)
    WhT = np.ascontiguousarray((W[:, :H] * np.repeat([2.0, 2.0, 2.0, 1.0], H)[:, None]).T)
    das = np.empty_like(acts)
    dh = np.ascontiguousarray(dh_T.T)
    dc = np.zeros((H, B))
    u = np.empty((H, B))
    v = np.empty((H, B))
    for t in range(T - 1, -1, -1):
        act, tc, da = acts[t], tcs[t], das[t]
        f, i, o, g = act[:H], act[H:2 * H], act[2 * H:3 * H], act[3 * H:]
        # dc += dh * o * (1 - tc^2)
        np.multiply(tc, tc, out=u)
        np.subtract(1.0, u, out=u)
        u *= o
        u *= dh
        dc += u
        # forget: dc * c_prev * f * (1 - f)
        np.subtract(1.0, f, out=u)
        u *= f
        np.multiply(dc, cs[t], out=v)
        np.multiply(u, v, out=da[:H])
        # input: dc * g * i * (1 - i)
        np.subtract(1.0, i, out=u)
        u *= i
        np.multiply(dc, g, out=v)
        np.multiply(u, v, out=da[H:2 * H])
        # output: dh * tc * o * (1 - o)
        np.subtract(1.0, o, out=u)
        u *= o
        np.multiply(dh, tc, out=v)
        np.multiply(u, v, out=da[2 * H:3 * H])
        # candidate: dc * i * (1 - g^2)
        np.multiply(g, g, out=u)
        np.subtract(1.0, u, out=u)
        u *= i
        np.multiply(dc, u, out=da[3 * H:])
        np.matmul(WhT, da, out=dh)
        dc *= f
    # batched over steps: no transposed copies of the (steps, features, batch) tapes
    dWh = np.matmul(das, hs[:T].transpose(0, 2, 1)).sum(axis=0)
    dWx = np.matmul(das, Xt).sum(axis=0)
    dW = np.concatenate([dWh, dWx], axis=1)
    db = das.sum(axis=(0, 2))
    # kernel order is f, i, o, g; public order is f, i, c(g), o
    order = (0, 1, 3, 2)
    return ([dW[k * H:(k + 1) * H] for k in order] + [db[k * H:(k + 1) * H] for k in order])


def loss_and_grads(p: LstmParams, head: ClassifierHead, X: np.ndarray,
                   labels: np.ndarray) -> tuple[float, list[np.ndarray]]:
    """Mean cross-entropy and its gradient for every tensor in PARAM_NAMES order."""
    hT, tape = _forward(X, p)
    probs = head.probabilities(hT)
    B = len(labels)
    loss = -float(np.mean(np.log(np.maximum(probs[np.arange(B), labels], 1e-300))))
    dlogits = probs.copy()
    dlogits[np.arange(B), labels] -= 1.0
    dlogits /= B
    dW_out = dlogits.T @ hT
    db_out = dlogits.sum(axis=0)
    cell_grads = _backward(dlogits @ head.W_out, tape, p)
    return loss, cell_grads + [dW_out, db_out]


def _tensors(p: LstmParams, head: ClassifierHead) -> list[np.ndarray]:
    return [getattr(p, n) for n in PARAM_NAMES[:8]] + [head.W_out, head.b_out]


def fit_length(frames: np.ndarray, length: int) -> np.ndarray:
    """Truncate or zero-pad (at the end) to exactly ``length`` frames."""
    out = np.zeros((length, frames.shape[1]))
    n = min(length, len(frames))
    out[:n] = frames[:n]
    return out


def _prepare(seqs: Sequence, mean: np.ndarray, std: np.ndarray, length: int) -> np.ndarray:
    return np.stack([fit_length((np.asarray(getattr(s, "frames", s), dtype=np.float64) - mean) / std,
                                length) for s in seqs])


def train_classifier(sequences: Sequence, labels: Sequence[str],
                     hyper: LstmHyper | None = None) -> LstmModel:
    """Train an LSTM + softmax classifier on labelled gallery sequences."""
    hyper = hyper or LstmHyper()
    if len(sequences) != len(labels) or not len(sequences):
        raise DataError("need one label per sequence and at least one sequence")
    classes = tuple(dict.fromkeys(labels))
    if len(classes) < 2:
        raise DataError("training needs at least two classes")
    frames = [np.asarray(getattr(s, "frames", s), dtype=np.float64) for s in sequences]
    dims = {f.shape[1] for f in frames}
    if len(dims) != 1 or any(len(f) == 0 for f in frames):
        raise DataError("sequences must be non-empty and share one coefficient dimension")
    D = dims.pop()

    allf = np.concatenate(frames)
    if hyper.standardize:
        mean, std = allf.mean(axis=0), allf.std(axis=0)
        std = np.where(std > 0, std, 1.0)
    else:
        mean, std = np.zeros(D), np.ones(D)
    X = _prepare(frames, mean, std, hyper.seq_len)
    idx = {c: k for k, c in enumerate(classes)}
    y = np.array([idx[l] for l in labels])

    rng = np.random.default_rng(hyper.seed)
    p, W_out, b_out = init_params(hyper.hidden_size, D, len(classes), rng, hyper.init_scale)
    head = ClassifierHead(W_out, b_out, classes)
    tensors = _tensors(p, head)
    trace = []
    for epoch in range(hyper.epochs + 1):
        loss, grads = loss_and_grads(p, head, X, y)
        if not np.isfinite(loss):
            raise TrainingError("non-finite training loss", epoch)
        trace.append(loss)
        if epoch == hyper.epochs:
            break
        for t, g in zip(tensors, grads):
            t -= hyper.learning_rate * g
    return LstmModel(p, head, hyper, mean, std, trace)


def predict_proba(model: LstmModel, sequences: Sequence) -> np.ndarray:
    frames = [np.asarray(getattr(s, "frames", s), dtype=np.float64) for s in sequences]
    if any(f.ndim != 2 or f.shape[1] != model.params.input_size for f in frames):
        raise DataError(f"probe dimension must be {model.params.input_size}")
    X = _prepare(frames, model.feature_mean, model.feature_std, model.hyper.seq_len)
    hT, _ = _forward(X, model.params)
    return model.head.probabilities(hT)


def lstm_scores(probes: Sequence, model: LstmModel,
                probe_ids: Sequence[str] | None = None) -> ScoreMatrix:
    """1 - softmax probability per enrolled subject (lower is better)."""
    if not len(probes):
        raise DataError("empty probe set")
    if not model.loss_trace:
        raise DataError("model is untrained")
    probe_ids = list(probe_ids) if probe_ids is not None else [f"p{i}" for i in range(len(probes))]
    return ScoreMatrix(1.0 - predict_proba(model, probes), tuple(probe_ids), model.head.classes)


def numeric_gradients(p: LstmParams, head: ClassifierHead, seq, label: int,
                      step: float = 1e-5) -> list[np.ndarray]:
    """Central-difference loss gradients in PARAM_NAMES order."""
    if step <= 0:
        raise DataError("step must be positive")
    X = np.asarray(getattr(seq, "frames", seq), dtype=np.float64)[None]
    y = np.array([label])
    out = []
    for tensor in _tensors(p, head):
        flat = tensor.reshape(-1)  # a view: perturbations write through
        num = np.empty_like(flat)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            up, _ = loss_and_grads(p, head, X, y)
            flat[k] = orig - step
            down, _ = loss_and_grads(p, head, X, y)
            flat[k] = orig
            num[k] = (up - down) / (2 * step)
        out.append(num.reshape(tensor.shape))
    return out


def gradient_check(p: LstmParams, head: ClassifierHead, seq, label: int,
                   step: float = 1e-5) -> float:
    """Worst relative error between analytic and central-difference gradients.

    Each parameter tensor is compared as a whole, ``|a - n| / max(|a|, |n|)``
    in the L2 norm, and the largest value over all tensors is returned.
    Entrywise ratios are not used: entries far below the central difference's
    rounding floor (about eps * loss / step) would measure that floor rather
    than the backward pass.
    """
    X = np.asarray(getattr(seq, "frames", seq), dtype=np.float64)[None]
    _, grads = loss_and_grads(p, head, X, np.array([label]))
    worst = 0.0
    for a, n in zip(grads, numeric_gradients(p, head, seq, label, step)):
        scale = max(np.linalg.norm(a), np.linalg.norm(n))
        if scale > 0:
            worst = max(worst, float(np.linalg.norm(a - n) / scale))
    return worst


def model_to_dict(m: LstmModel) -> dict:
    return {
        "hidden_size": m.params.hidden_size,
        "input_size": m.params.input_size,
        "classes": list(m.head.classes),
        "hyper": asdict(m.hyper),
        "seed": m.hyper.seed,
        "feature_mean": m.feature_mean.tolist(),
        "feature_std": m.feature_std.tolist(),
        "params": {n: t.reshape(-1).tolist() for n, t in zip(PARAM_NAMES, _tensors(m.params, m.head))},
        "shapes": {n: list(t.shape) for n, t in zip(PARAM_NAMES, _tensors(m.params, m.head))},
        "loss_trace": list(m.loss_trace),
    }


def model_from_dict(d: dict) -> LstmModel:
    try:
        arrays = [np.array(d["params"][n], dtype=np.float64).reshape(d["shapes"][n])
                  for n in PARAM_NAMES]
        p = LstmParams(*arrays[:8])
        p.check()
        head = ClassifierHead(arrays[8], arrays[9], tuple(d["classes"]))
        hyper = LstmHyper(**d["hyper"])
        return LstmModel(p, head, hyper, np.array(d["feature_mean"]), np.array(d["feature_std"]),
                         list(d.get("loss_trace", [])))
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"malformed LSTM model document: {exc}") from exc


def save_model(m: LstmModel, path: Path | str) -> None:
    Path(path).write_text(json.dumps(model_to_dict(m)) + "\n")


def load_model(path: Path | str) -> LstmModel:
    try:
        return model_from_dict(json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read LSTM model {path}: {exc}") from exc
