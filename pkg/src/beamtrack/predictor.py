"""LSTM angle predictor: model definition, dataset synthesis, training, and
checkpoint round-tripping.

Each path is predicted independently with shared weights. The input window
covers the last `delta` tracking cycles; the per-cycle feature vector is the
previous state estimate followed by that cycle's inertial samples and an
optional context vector. Inputs are standardized per channel. The network
regresses the standardized one-cycle angle increment, so de-standardizing a
prediction adds the window's most recent estimate back in; this keeps the
regression target well scaled without changing the external contract
(window in, absolute next-cycle angle out).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import neural
from .mobility import MobilityParams, generate_trajectory, synthesize_imu
from .neural import FcParams, LstmParams

__all__ = [
    "InputWindow",
    "NormStats",
    "PredictorModel",
    "TrainConfig",
    "DatasetConfig",
    "NoiseTable",
    "Dataset",
    "CheckpointError",
    "build_model",
    "window_matrix",
    "predict",
    "generate_dataset",
    "train",
    "save_checkpoint",
    "load_checkpoint",
]

_CHECKPOINT_MAGIC = "beamtrack-checkpoint v1"


def scale_sensor_block(blocks: np.ndarray, cycle_seconds: float) -> np.ndarray:
    """Convert raw sensor blocks to per-cycle angle units.

    The first half of the last axis holds angular-velocity samples and the
    second half angular-acceleration samples; multiplying them by the cycle
    duration (respectively its square) expresses both as angle change per
    tracking cycle. Without this the predictor would have to infer the cycle
    duration, which is not an input, from the history alone.
    """
    blocks = np.asarray(blocks, dtype=np.float64)
    k = blocks.shape[-1] // 2
    if blocks.shape[-1] != 2 * k or k == 0:
        raise ValueError("sensor block must hold velocity and acceleration halves")
    scaled = blocks.copy()
    scaled[..., :k] *= cycle_seconds
    scaled[..., k:] *= cycle_seconds**2
    return scaled


@dataclass
class InputWindow:
    """One prediction input: the last `delta` estimates and sensor blocks."""

    past_estimates: np.ndarray  # (delta, state_dim)
    sensor_blocks: np.ndarray  # (delta, samples_per_cycle * channels)
    context: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        self.past_estimates = np.asarray(self.past_estimates, dtype=np.float64)
        self.sensor_blocks = np.asarray(self.sensor_blocks, dtype=np.float64)
        self.context = np.asarray(self.context, dtype=np.float64)
        if self.past_estimates.ndim != 2 or self.sensor_blocks.ndim != 2:
            raise ValueError("past_estimates and sensor_blocks must be 2-D")
        if self.past_estimates.shape[0] != self.sensor_blocks.shape[0]:
            raise ValueError("estimate and sensor histories must cover the same cycles")
        if self.past_estimates.shape[0] < 1:
            raise ValueError("window must cover at least one cycle")
        if self.context.ndim != 1:
            raise ValueError("context must be 1-D")

    @property
    def delta(self) -> int:
        return self.past_estimates.shape[0]

    @property
    def state_dim(self) -> int:
        return self.past_estimates.shape[1]


@dataclass
class NormStats:
    """Per-channel standardization constants for inputs and encoded targets."""

    input_mean: np.ndarray
    input_std: np.ndarray
    target_mean: np.ndarray
    target_std: np.ndarray

    def __post_init__(self):
        for name in ("input_mean", "input_std", "target_mean", "target_std"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if np.any(self.input_std <= 0) or np.any(self.target_std <= 0):
            raise ValueError("standard deviations must be strictly positive")


@dataclass
class PredictorModel:
    """Shared-weight per-path predictor: input FC -> LSTM stack -> head FCs."""

    input_fc: FcParams
    lstms: list[LstmParams]
    output_fcs: list[FcParams]
    mode: str
    delta: int
    k_samples: int
    j_channels: int
    context_dim: int
    norm: NormStats | None = None
    # Training-set residual variance per output channel, natural units.
    # Downstream filters add it to the predicted covariance so the belief
    # accounts for what the network cannot explain (sensor noise, model bias).
    prediction_var: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in ("aoa_only", "full"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.delta < 1:
            raise ValueError("delta must be >= 1")

    @property
    def state_dim(self) -> int:
        return 1 if self.mode == "aoa_only" else 2

    @property
    def input_dim(self) -> int:
        return self.state_dim + self.k_samples * self.j_channels + self.context_dim

    @property
    def layers(self) -> list:
        return [self.input_fc, *self.lstms, *self.output_fcs]


def build_model(
    rng: np.random.Generator,
    mode: str = "aoa_only",
    delta: int = 3,
    k_samples: int = 4,
    j_channels: int = 2,
    context_dim: int = 0,
    input_hidden: int = 16,
    lstm_hidden: int = 32,
    output_hidden: int = 32,
    lstm_layers: int = 1,
) -> PredictorModel:
    """Fresh model with fan-in uniform initialization (forget bias at +1)."""
    if lstm_layers < 1:
        raise ValueError("lstm_layers must be >= 1")
    state_dim = 1 if mode == "aoa_only" else 2
    input_dim = state_dim + k_samples * j_channels + context_dim
    input_fc = neural.init_fc(rng, input_hidden, input_dim, activation="tanh")
    lstms = []
    in_size = input_hidden
    for _ in range(lstm_layers):
        lstms.append(neural.init_lstm(rng, lstm_hidden, in_size))
        in_size = lstm_hidden
    output_fcs = [
        neural.init_fc(rng, output_hidden, lstm_hidden, activation="tanh"),
        neural.init_fc(rng, state_dim, output_hidden, activation="identity"),
    ]
    return PredictorModel(
        input_fc=input_fc,
        lstms=lstms,
        output_fcs=output_fcs,
        mode=mode,
        delta=delta,
        k_samples=k_samples,
        j_channels=j_channels,
        context_dim=context_dim,
    )


def window_matrix(window: InputWindow) -> np.ndarray:
    """Raw (delta, D) feature matrix: [estimate, sensors, context] per cycle."""
    delta = window.delta
    ctx = np.broadcast_to(window.context, (delta, window.context.size))
    return np.concatenate([window.past_estimates, window.sensor_blocks, ctx], axis=1)


def _check_window(model: PredictorModel, window: InputWindow) -> None:
    if window.delta != model.delta:
        raise ValueError(f"window covers {window.delta} cycles, model expects {model.delta}")
    if window.state_dim != model.state_dim:
        raise ValueError(
            f"window state dimension {window.state_dim} does not match mode {model.mode!r}"
        )
    expected = model.k_samples * model.j_channels
    if window.sensor_blocks.shape[1] != expected:
        raise ValueError(f"sensor blocks must have {expected} entries per cycle")
    if window.context.size != model.context_dim:
        raise ValueError(f"context must have {model.context_dim} entries")


def _forward_raw_batch(model: PredictorModel, raw: np.ndarray, last_est: np.ndarray) -> np.ndarray:
    """Map raw (B, delta, D) windows to absolute next-cycle states (B, P)."""
    norm = model.norm
    if norm is None:
        raise ValueError("model has no normalization statistics; train or load it first")
    std_in = (raw - norm.input_mean) / norm.input_std
    out = neural.forward_stack(model.layers, std_in)
    return last_est + norm.target_mean + norm.target_std * out


def predict(model: PredictorModel, window: InputWindow) -> np.ndarray:
    """Predict the next-cycle state for one path from its input window."""
    _check_window(model, window)
    raw = window_matrix(window)[None]
    last_est = window.past_estimates[-1][None]
    return _forward_raw_batch(model, raw, last_est)[0]


@dataclass
class NoiseTable:
    """Estimate-noise standard deviation versus pilot SNR, linearly interpolated."""

    snr_db: np.ndarray
    estimate_std: np.ndarray

    def __post_init__(self):
        self.snr_db = np.asarray(self.snr_db, dtype=np.float64)
        self.estimate_std = np.asarray(self.estimate_std, dtype=np.float64)
        if self.snr_db.shape != self.estimate_std.shape or self.snr_db.ndim != 1:
            raise ValueError("snr_db and estimate_std must be matching 1-D arrays")
        if self.snr_db.size < 1:
            raise ValueError("noise table needs at least one grid point")
        if np.any(np.diff(self.snr_db) <= 0):
            raise ValueError("snr grid must be strictly increasing")

    def lookup(self, snr_db: float) -> float:
        return float(np.interp(snr_db, self.snr_db, self.estimate_std))

    def to_json(self) -> str:
        return json.dumps(
            {"snr_db": self.snr_db.tolist(), "estimate_std": self.estimate_std.tolist()}
        )

    @classmethod
    def from_json(cls, text: str) -> "NoiseTable":
        data = json.loads(text)
        return cls(np.asarray(data["snr_db"]), np.asarray(data["estimate_std"]))


@dataclass
class DatasetConfig:
    """Knobs for synthetic training data.

    Episodes draw their cycle length, mean angular rate, and SNRs
    independently, so one model generalizes across the evaluation sweeps.
    """

    num_windows: int | None = 100_000
    num_episodes: int | None = None  # overrides num_windows when set
    cycles_per_episode: int = 200
    num_paths: int = 3
    delta: int = 3
    k_samples: int = 4
    t_csi_choices: tuple[int, ...] = (40, 80, 160, 320)
    a_avg_range: tuple[float, float] = (0.05 * np.pi, 0.45 * np.pi)
    snr_range_db: tuple[float, float] = (6.0, 15.0)
    imu_snr_db: float | None = None  # None: draw per episode from snr_range_db
    dt: float = 125e-6
    include_imu: bool = True
    mode: str = "aoa_only"


@dataclass
class Dataset:
    """Training windows in array form; see as_pairs() for the itemized view."""

    inputs: np.ndarray  # (N, delta, D), raw units
    last_estimates: np.ndarray  # (N, P)
    targets: np.ndarray  # (N, P)
    meta: dict

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def as_pairs(self):
        """Yield (InputWindow, target) pairs."""
        p = self.meta["state_dim"]
        kj = self.meta["k_samples"] * self.meta["j_channels"]
        for k in range(len(self)):
            raw = self.inputs[k]
            window = InputWindow(
                past_estimates=raw[:, :p],
                sensor_blocks=raw[:, p : p + kj],
                context=raw[0, p + kj :],
            )
            yield window, self.targets[k].copy()

    def save(self, path) -> None:
        np.savez(
            path,
            inputs=self.inputs,
            last_estimates=self.last_estimates,
            targets=self.targets,
            meta=np.frombuffer(json.dumps(self.meta).encode(), dtype=np.uint8),
        )

    @classmethod
    def load(cls, path) -> "Dataset":
        with np.load(path) as data:
            meta = json.loads(bytes(data["meta"]).decode())
            return cls(data["inputs"], data["last_estimates"], data["targets"], meta)


def generate_dataset(
    cfg: DatasetConfig, noise_table: NoiseTable, rng: np.random.Generator
) -> Dataset:
    """Synthesize prediction windows from fresh mobility episodes.

    Ground-truth angles at the cycle boundaries are perturbed with zero-mean
    Gaussian noise whose standard deviation comes from the per-SNR calibration
    table, standing in for tracker estimates; the matching inertial blocks are
    synthesized from the same trajectory. The target of a window ending at
    cycle t-1 is the true angle at cycle t.
    """
    if cfg.mode != "aoa_only":
        raise NotImplementedError("dataset generation covers the arrival-only mode")
    delta, k = cfg.delta, cfg.k_samples
    cycles = cfg.cycles_per_episode
    if cycles <= delta:
        raise ValueError("cycles_per_episode must exceed delta")
    per_episode = cfg.num_paths * (cycles - delta)
    if cfg.num_episodes is not None:
        episodes = cfg.num_episodes
        limit = episodes * per_episode
    elif cfg.num_windows is not None:
        episodes = -(-cfg.num_windows // per_episode)
        limit = cfg.num_windows
    else:
        raise ValueError("set num_windows or num_episodes")

    j_channels = 2
    dim = 1 + k * j_channels
    chunks_x, chunks_last, chunks_y = [], [], []
    for _ in range(episodes):
        t_csi = int(rng.choice(np.asarray(cfg.t_csi_choices)))
        a_avg = rng.uniform(*cfg.a_avg_range)
        snr = rng.uniform(*cfg.snr_range_db)
        imu_snr = cfg.imu_snr_db if cfg.imu_snr_db is not None else rng.uniform(*cfg.snr_range_db)
        params = MobilityParams(a_avg=a_avg, dt=cfg.dt)
        traj = generate_trajectory(params, cfg.num_paths, cycles * t_csi, rng)
        if cfg.include_imu:
            blocks = scale_sensor_block(
                synthesize_imu(traj, k, t_csi, imu_snr, rng), t_csi * cfg.dt
            )
        else:
            blocks = np.zeros((cfg.num_paths, cycles, k * j_channels))
        truth = traj.aoa[:, ::t_csi]  # (L, cycles), angle at each cycle boundary
        est = truth + rng.normal(0.0, noise_table.lookup(snr), size=truth.shape)

        w = cycles - delta
        x = np.empty((cfg.num_paths, w, delta, dim))
        for i in range(delta):
            x[:, :, i, 0] = est[:, i : w + i]
            x[:, :, i, 1:] = blocks[:, i : w + i]
        chunks_x.append(x.reshape(-1, delta, dim))
        chunks_last.append(est[:, delta - 1 : cycles - 1].reshape(-1, 1))
        chunks_y.append(truth[:, delta:].reshape(-1, 1))

    inputs = np.concatenate(chunks_x)[:limit]
    last = np.concatenate(chunks_last)[:limit]
    targets = np.concatenate(chunks_y)[:limit]
    meta = {
        "state_dim": 1,
        "delta": delta,
        "k_samples": k,
        "j_channels": j_channels,
        "mode": cfg.mode,
        "include_imu": cfg.include_imu,
        "snr_range_db": list(cfg.snr_range_db),
    }
    return Dataset(inputs, last, targets, meta)


@dataclass
class TrainConfig:
    """Minibatch Adam training schedule."""

    epochs: int = 30
    minibatch: int = 64
    initial_lr: float = 0.01
    decay_epoch: int = 3
    decay_rate: float = 0.1
    seed: int = 0


def _dataset_arrays(dataset) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(dataset, Dataset):
        return dataset.inputs, dataset.last_estimates, dataset.targets
    windows, targets = zip(*dataset)
    inputs = np.stack([window_matrix(w) for w in windows])
    last = np.stack([w.past_estimates[-1] for w in windows])
    return inputs, np.asarray(last), np.stack([np.atleast_1d(t) for t in targets])


def _fit_norm_stats(raw: np.ndarray, increments: np.ndarray) -> NormStats:
    flat = raw.reshape(-1, raw.shape[-1])
    in_mean = flat.mean(axis=0)
    in_std = flat.std(axis=0)
    in_std[in_std < 1e-8] = 1.0  # constant channels (e.g. zeroed sensors) pass through
    t_mean = increments.mean(axis=0)
    t_std = increments.std(axis=0)
    t_std[t_std < 1e-8] = 1.0
    return NormStats(in_mean, in_std, t_mean, t_std)


def train(
    model: PredictorModel, dataset, config: TrainConfig
) -> tuple[PredictorModel, list[float]]:
    """Minibatch Adam on the mean squared prediction error.

    Normalization statistics are fitted from the dataset on entry (unless the
    model already carries some, e.g. when resuming). Returns the model and the
    per-epoch mean loss in standardized units. Raises RuntimeError if the loss
    goes non-finite.
    """
    raw, last, targets = _dataset_arrays(dataset)
    n = raw.shape[0]
    if n < 1:
        raise ValueError("dataset is empty")
    if raw.shape[1] != model.delta or raw.shape[2] != model.input_dim:
        raise ValueError(
            f"dataset windows are {raw.shape[1:]}; model expects "
            f"({model.delta}, {model.input_dim})"
        )
    increments = targets - last
    if model.norm is None:
        model.norm = _fit_norm_stats(raw, increments)
    norm = model.norm

    x = (raw - norm.input_mean) / norm.input_std
    y = (increments - norm.target_mean) / norm.target_std

    layers = model.layers
    params = neural.layer_param_dict(layers)
    adam = neural.init_adam(params)
    shuffle = np.random.default_rng(config.seed)

    losses: list[float] = []
    for epoch in range(1, config.epochs + 1):
        lr = config.initial_lr * config.decay_rate ** ((epoch - 1) // config.decay_epoch)
        order = shuffle.permutation(n)
        total = 0.0
        for start in range(0, n, config.minibatch):
            idx = order[start : start + config.minibatch]
            loss, grads, _ = neural.loss_and_gradients(layers, x[idx], y[idx])
            scale = 1.0 / idx.size
            flat = neural.grads_as_dict(layers, grads)
            for arr in flat.values():
                arr *= scale
            neural.adam_update(params, flat, adam, lr)
            total += loss
        mean_loss = total / n
        if not np.isfinite(mean_loss):
            raise RuntimeError(
                f"training diverged at epoch {epoch}: mean loss {mean_loss!r} "
                f"(lr {lr}, minibatch {config.minibatch})"
            )
        losses.append(mean_loss)

    # Residual spread in natural units, for use as prediction-time process
    # noise. Evaluated on a subsample to keep this cheap on large sets.
    probe = min(n, 20_000)
    idx = np.random.default_rng(config.seed).choice(n, size=probe, replace=False)
    pred = _forward_raw_batch(model, raw[idx], last[idx])
    model.prediction_var = np.var(pred - targets[idx], axis=0)
    return model, losses


class CheckpointError(Exception):
    """Raised for malformed, incomplete, or version-mismatched checkpoints."""


def _format_array(name: str, arr: np.ndarray) -> list[str]:
    arr = np.asarray(arr, dtype=np.float64)
    shape = " ".join(str(s) for s in arr.shape)
    lines = [f"tensor {name} {arr.ndim} {shape}"]
    rows = arr.reshape(1, -1) if arr.ndim == 1 else arr
    for row in rows:
        lines.append(" ".join(repr(float(v)) for v in row))
    return lines


def save_checkpoint(model: PredictorModel, path) -> None:
    """Write the model as a plain-text document; round-trips bit exactly."""
    if model.norm is None:
        raise ValueError("refusing to save a model without normalization statistics")
    head = [
        _CHECKPOINT_MAGIC,
        f"mode {model.mode}",
        f"delta {model.delta}",
        f"k_samples {model.k_samples}",
        f"j_channels {model.j_channels}",
        f"context_dim {model.context_dim}",
        f"lstm_layers {len(model.lstms)}",
        f"output_fcs {len(model.output_fcs)}",
        f"input_activation {model.input_fc.activation}",
        "output_activations " + ",".join(fc.activation for fc in model.output_fcs),
    ]
    body: list[str] = []
    body += _format_array("input_fc.weights", model.input_fc.weights)
    body += _format_array("input_fc.bias", model.input_fc.bias)
    for k, lstm in enumerate(model.lstms):
        for name in neural._LSTM_FIELDS:
            body += _format_array(f"lstm{k}.{name}", getattr(lstm, name))
    for k, fc in enumerate(model.output_fcs):
        body += _format_array(f"output_fc{k}.weights", fc.weights)
        body += _format_array(f"output_fc{k}.bias", fc.bias)
    for name in ("input_mean", "input_std", "target_mean", "target_std"):
        body += _format_array(f"norm.{name}", getattr(model.norm, name))
    if model.prediction_var is not None:
        body += _format_array("prediction_var", np.asarray(model.prediction_var))
    with open(path, "w") as fh:
        fh.write("\n".join(head + body) + "\n")


def _parse_checkpoint(path) -> tuple[dict, dict]:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != _CHECKPOINT_MAGIC:
        found = lines[0] if lines else "<empty file>"
        raise CheckpointError(
            f"unsupported checkpoint version: expected {_CHECKPOINT_MAGIC!r}, found {found!r}"
        )
    meta: dict = {}
    tensors: dict[str, np.ndarray] = {}
    k = 1
    while k < len(lines):
        line = lines[k].strip()
        if not line:
            k += 1
            continue
        if line.startswith("tensor "):
            parts = line.split()
            name, ndim = parts[1], int(parts[2])
            shape = tuple(int(s) for s in parts[3 : 3 + ndim])
            rows = 1 if ndim == 1 else shape[0]
            values = []
            for _ in range(rows):
                k += 1
                if k >= len(lines):
                    raise CheckpointError(f"tensor '{name}' is truncated")
                values.append([float(v) for v in lines[k].split()])
            try:
                arr = np.array(values, dtype=np.float64).reshape(shape)
            except ValueError as exc:
                raise CheckpointError(f"tensor '{name}' is malformed: {exc}") from exc
            expected = shape if ndim > 1 else (shape[0],)
            if arr.shape != expected:
                raise CheckpointError(f"tensor '{name}' has shape {arr.shape}, expected {expected}")
            tensors[name] = arr
            k += 1
        else:
            key, _, value = line.partition(" ")
            meta[key] = value
            k += 1
    return meta, tensors


def load_checkpoint(path) -> PredictorModel:
    """Rebuild a model from save_checkpoint output; strict about completeness."""
    meta, tensors = _parse_checkpoint(path)

    def take(name: str) -> np.ndarray:
        if name not in tensors:
            raise CheckpointError(f"checkpoint is missing tensor '{name}'")
        return tensors[name]

    try:
        mode = meta["mode"]
        delta = int(meta["delta"])
        k_samples = int(meta["k_samples"])
        j_channels = int(meta["j_channels"])
        context_dim = int(meta["context_dim"])
        lstm_layers = int(meta["lstm_layers"])
        num_output_fcs = int(meta["output_fcs"])
        input_act = meta["input_activation"]
        output_acts = meta["output_activations"].split(",")
    except KeyError as exc:
        raise CheckpointError(f"checkpoint header is missing field {exc}") from exc
    if len(output_acts) != num_output_fcs:
        raise CheckpointError("output activation list does not match output_fcs")

    input_fc = FcParams(take("input_fc.weights"), take("input_fc.bias"), input_act)
    lstms = []
    for k in range(lstm_layers):
        fields = {name: take(f"lstm{k}.{name}") for name in neural._LSTM_FIELDS}
        lstms.append(LstmParams(**fields))
    output_fcs = [
        FcParams(take(f"output_fc{k}.weights"), take(f"output_fc{k}.bias"), output_acts[k])
        for k in range(num_output_fcs)
    ]
    norm = NormStats(
        take("norm.input_mean"),
        take("norm.input_std"),
        take("norm.target_mean"),
        take("norm.target_std"),
    )
    prediction_var = tensors.get("prediction_var")
    return PredictorModel(
        input_fc=input_fc,
        lstms=lstms,
        output_fcs=output_fcs,
        mode=mode,
        delta=delta,
        k_samples=k_samples,
        j_channels=j_channels,
        context_dim=context_dim,
        norm=norm,
        prediction_var=prediction_var,
    )
