"""Small-model trainer that produces real checkpoint streams.

Two model families are supported, both trained with plain mini-batch SGD on
the mean squared error ``0.5 * ||y_hat - y||^2`` averaged over samples:

* ``linear-regression``: ``y_hat = x W^T + b``
* ``two-layer-mlp``: ``y_hat = tanh(x W1^T + b1) W2^T + b2``

Parameters are flattened in the order listed (each matrix row-major).
Targets come from a random teacher of the same family plus Gaussian noise.

Random streams derive from ``SeedSequence(seed, spawn_key=(j,))`` with
``j = 0`` for the data, ``1`` for the initial weights and ``2`` for the
mini-batch sampler.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .checkpoint_store import CheckpointManifest, as_parameter_vector, write_checkpoint
from .csvio import write_csv
from .errors import DimensionMismatchError, EmptyValidationSetError, NonFiniteError, TrainingDivergedError

LINEAR = "linear-regression"
MLP = "two-layer-mlp"
CONSTANT = "constant"
WSD = "constant-then-linear-decay"

CONFIG_FILE = "config.txt"
CURVES_FILE = "curves.csv"
MANIFEST_FILE = "manifest.tsv"


@dataclass(frozen=True)
class ToyTaskConfig:
    """Task, model and optimizer settings.

    ``feature_spread`` divides the scale of the last input feature; 1 keeps
    inputs standard normal. The teacher reads the whitened features, so a
    shrunken input needs a large student weight: a spread above 1 leaves one
    flat direction along which SGD keeps drifting long after the stiff
    directions have settled into noise.
    """

    model: str = LINEAR
    in_dim: int = 16
    hidden_dim: int = 8
    out_dim: int = 1
    n_train: int = 4096
    n_val: int = 4096
    batch_size: int = 8
    lr: float = 0.05
    steps: int = 2200
    save_every: int = 100
    seed: int = 0
    lr_schedule: str = CONSTANT
    decay_start: int = 0
    lr_min_fraction: float = 0.1
    noise_std: float = 0.5
    feature_spread: float = 10.0
    init_scale: float = 1.0

    def __post_init__(self):
        if self.model not in (LINEAR, MLP):
            raise ValueError(f"unknown model {self.model!r}")
        if self.lr_schedule not in (CONSTANT, WSD):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")
        dims = (self.in_dim, self.out_dim) + ((self.hidden_dim,) if self.model == MLP else ())
        if min(dims) < 1:
            raise ValueError("dimensions must be positive")
        if self.n_val == 0:
            raise EmptyValidationSetError()
        if self.n_train < 1 or self.n_val < 0:
            raise ValueError("n_train must be >= 1 and n_val >= 0")
        if not 1 <= self.batch_size <= self.n_train:
            raise ValueError("batch_size must lie in [1, n_train]")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.steps < 1 or self.save_every < 1:
            raise ValueError("steps and save_every must be >= 1")
        if self.steps % self.save_every:
            raise ValueError("save_every must divide steps")
        if not 0 < self.lr_min_fraction <= 1:
            raise ValueError("lr_min_fraction must lie in (0, 1]")
        if not 0 <= self.decay_start <= self.steps:
            raise ValueError("decay_start must lie in [0, steps]")
        if self.noise_std < 0 or self.feature_spread < 1 or self.init_scale < 0:
            raise ValueError("noise_std, init_scale must be >= 0 and feature_spread >= 1")

    def lr_at(self, step: int) -> float:
        if self.lr_schedule == CONSTANT or step < self.decay_start:
            return self.lr
        span = max(1, self.steps - self.decay_start)
        frac = min(1.0, (step - self.decay_start) / span)
        return self.lr * (1.0 - frac * (1.0 - self.lr_min_fraction))

    def to_text(self) -> str:
        return "".join(f"{k}={v!r}\n" if isinstance(v, float) else f"{k}={v}\n"
                       for k, v in asdict(self).items())

    @classmethod
    def from_mapping(cls, kv) -> "ToyTaskConfig":
        types = {f.name: f.type for f in fields(cls)}
        unknown = set(kv) - set(types)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        conv = {}
        for key, value in kv.items():
            default = getattr(cls, key)
            conv[key] = type(default)(value) if not isinstance(default, str) else str(value)
        return cls(**conv)

    @classmethod
    def from_text(cls, text: str) -> "ToyTaskConfig":
        kv = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                key, sep, value = line.partition("=")
                if not sep:
                    raise ValueError(f"expected key=value, got {line!r}")
                kv[key.strip()] = value.strip()
        return cls.from_mapping(kv)


def param_shapes(config: ToyTaskConfig) -> list[tuple[int, ...]]:
    if config.model == LINEAR:
        return [(config.out_dim, config.in_dim), (config.out_dim,)]
    return [(config.hidden_dim, config.in_dim), (config.hidden_dim,),
            (config.out_dim, config.hidden_dim), (config.out_dim,)]


def n_params(config: ToyTaskConfig) -> int:
    return sum(math.prod(s) for s in param_shapes(config))


def flatten(arrays) -> np.ndarray:
    return np.concatenate([np.asarray(a, dtype=np.float64).ravel() for a in arrays])


def unflatten(vec, shapes) -> list[np.ndarray]:
    vec = np.asarray(vec, dtype=np.float64)
    total = sum(math.prod(s) for s in shapes)
    if vec.shape != (total,):
        raise DimensionMismatchError(total, vec.size)
    out, pos = [], 0
    for s in shapes:
        n = math.prod(s)
        out.append(vec[pos : pos + n].reshape(s))
        pos += n
    return out


def forward(config: ToyTaskConfig, params, x) -> np.ndarray:
    p = unflatten(params, param_shapes(config))
    if config.model == LINEAR:
        return x @ p[0].T + p[1]
    return np.tanh(x @ p[0].T + p[1]) @ p[2].T + p[3]


def loss_and_grad(config: ToyTaskConfig, params, x, y) -> tuple[float, np.ndarray]:
    """Mean of ``0.5 * ||y_hat - y||^2`` over rows and its gradient."""
    p = unflatten(params, param_shapes(config))
    n = x.shape[0]
    if config.model == LINEAR:
        r = x @ p[0].T + p[1] - y
        grads = [r.T @ x / n, r.mean(axis=0)]
    else:
        h = np.tanh(x @ p[0].T + p[1])
        r = h @ p[2].T + p[3] - y
        back = (r @ p[2]) * (1.0 - h * h)
        grads = [back.T @ x / n, back.mean(axis=0), r.T @ h / n, r.mean(axis=0)]
    return 0.5 * float(np.sum(r * r)) / n, flatten(grads)


def mse_loss(config: ToyTaskConfig, params, x, y) -> float:
    r = forward(config, params, x) - y
    return 0.5 * float(np.sum(r * r)) / x.shape[0]


def _rng(config: ToyTaskConfig, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(config.seed, spawn_key=(stream,))))


def _init(config: ToyTaskConfig, rng, scale: float) -> np.ndarray:
    arrays = []
    for s in param_shapes(config):
        fan_in = s[1] if len(s) == 2 else 1
        if len(s) == 2:
            arrays.append(rng.standard_normal(s) * scale / math.sqrt(fan_in))
        else:
            arrays.append(np.zeros(s))
    return flatten(arrays)


@dataclass
class ToyTask:
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    teacher: np.ndarray


def generate_task(config: ToyTaskConfig) -> ToyTask:
    """Synthetic regression data from a random teacher of the model's family.

    Teacher weight matrices have entries ``+-1/sqrt(fan_in)`` with random
    signs and act on whitened inputs; ``ToyTask.teacher`` holds the
    equivalent parameters for the raw inputs, so it attains the noise floor.
    """
    rng = _rng(config, 0)
    shapes = param_shapes(config)
    scales = np.ones(config.in_dim)
    scales[-1] = 1.0 / config.feature_spread
    parts = []
    for i, shape in enumerate(shapes):
        if len(shape) == 2:
            w = rng.choice([-1.0, 1.0], size=shape) / math.sqrt(shape[1])
            parts.append(w / scales if i == 0 else w)
        else:
            parts.append(rng.standard_normal(shape) * 0.5)
    teacher = flatten(parts)
    n = config.n_train + config.n_val
    x = rng.standard_normal((n, config.in_dim)) * scales
    y = forward(config, teacher, x) + config.noise_std * rng.standard_normal((n, config.out_dim))
    k = config.n_train
    return ToyTask(x[:k], y[:k], x[k:], y[k:], teacher)


@dataclass
class LossOracleHandle:
    """Validation-loss oracle: held-out data plus the model shape."""

    config: ToyTaskConfig
    x_val: np.ndarray
    y_val: np.ndarray

    @property
    def d(self) -> int:
        return n_params(self.config)

    def __call__(self, params) -> float:
        return evaluate_loss(self, params)

    @classmethod
    def from_run_dir(cls, run_dir) -> "LossOracleHandle":
        config = ToyTaskConfig.from_text((Path(run_dir) / CONFIG_FILE).read_text(encoding="utf-8"))
        task = generate_task(config)
        return cls(config, task.x_val, task.y_val)


def evaluate_loss(handle: LossOracleHandle, params) -> float:
    """Mean validation loss; raises on shape mismatch or non-finite loss."""
    params = as_parameter_vector(params, "parameters")
    if params.size != handle.d:
        raise DimensionMismatchError(handle.d, params.size)
    loss = mse_loss(handle.config, params, handle.x_val, handle.y_val)
    if not math.isfinite(loss):
        raise NonFiniteError(f"validation loss is {loss!r}")
    return loss


@dataclass
class TrainResult:
    manifest: CheckpointManifest
    oracle: LossOracleHandle
    curves: list[tuple[int, float, float]]
    final_params: np.ndarray


def train(config: ToyTaskConfig, out_dir) -> TrainResult:
    """Run SGD and write a checkpoint every ``save_every`` steps, step 0 included.

    ``out_dir`` receives the checkpoint files, ``manifest.tsv``,
    ``curves.csv`` (step, train_loss, val_loss) and ``config.txt``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    task = generate_task(config)
    oracle = LossOracleHandle(config, task.x_val, task.y_val)
    theta = _init(config, _rng(config, 1), config.init_scale)
    sampler = _rng(config, 2)
    d = theta.size
    manifest = CheckpointManifest([], d)
    curves = []

    def save(step):
        tr = mse_loss(config, theta, task.x_train, task.y_train)
        val = mse_loss(config, theta, task.x_val, task.y_val)
        if not (math.isfinite(tr) and math.isfinite(val)):
            raise TrainingDivergedError(step, tr)
        path = out_dir / f"ckpt_{step:09d}.xmg"
        manifest.append(write_checkpoint(theta, step, path))
        curves.append((step, tr, val))

    with np.errstate(over="ignore", invalid="ignore"):
        save(0)
        for step in range(config.steps):
            idx = sampler.integers(0, config.n_train, config.batch_size)
            loss, grad = loss_and_grad(config, theta, task.x_train[idx], task.y_train[idx])
            if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
                raise TrainingDivergedError(step, loss)
            theta = theta - config.lr_at(step) * grad
            if not np.all(np.isfinite(theta)):
                raise TrainingDivergedError(step + 1, float("nan"))
            if (step + 1) % config.save_every == 0:
                save(step + 1)

    manifest.save(out_dir / MANIFEST_FILE)
    write_csv(out_dir / CURVES_FILE, ["step", "train_loss", "val_loss"], curves,
              {"model": config.model, "seed": config.seed})
    (out_dir / CONFIG_FILE).write_text(config.to_text(), encoding="utf-8")
    return TrainResult(manifest, oracle, curves, theta)
