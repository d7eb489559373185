"""Training orchestration: the joint loop plus the fixed-code and OVA baselines.

Each round trains every column learner once against the current coding
matrix. On cadence rounds (every round for non-boosting learners; for
boosting, starting at `start_round` and then every round(1/alpha) rounds,
since shrinkage slows target fitting), the decoder is trained on the
current training outputs and the matrix takes one class-averaged gradient
step. Validation error is evaluated every round and the best snapshot is
returned.
"""

from __future__ import annotations

import copy
import csv
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from . import codebook, learners, matrix_optimizer, softmax_decoder
from .codebook import CodingMatrix
from .data_io import SparseDataset, load_label_map, save_label_map
from .errors import ConfigInvalid, DimensionMismatch, MissingClass, ParseError
from .learners import BaseLearnerEnsemble, LearnerSpec
from .softmax_decoder import DecoderParams

MODE_LIGHTMC = "lightmc"
MODE_ECOC_FIXED = "ecoc_fixed"
MODE_OVA = "ova"
MODES = (MODE_LIGHTMC, MODE_ECOC_FIXED, MODE_OVA)

_META_NAME = "meta.txt"
_FILES = {
    "codebook": "codebook.txt",
    "decoder": "decoder.txt",
    "ensemble": "ensemble.txt",
    "history": "history.csv",
    "labels": "labels.map",
}


@dataclass
class TrainConfig:
    """All training hyperparameters.

    code_length may be the string "auto", which applies the built-in
    length rule (raised to the smallest feasible length when the rule
    produces an infeasible binary code).
    """

    code_length: int | str = "auto"
    max_rounds: int = 100
    start_round: int = 30
    learner: LearnerSpec = field(default_factory=LearnerSpec)
    gamma1: float = 0.1
    gamma2: float = 0.2
    decoder_batch: int = 256
    decoder_epochs_per_call: int = 1
    l2: float = 0.0
    seed: int = 0
    early_stop_rounds: int = 20
    matrix_update: bool = True
    decoder_update: bool = True
    mode: str = MODE_LIGHTMC
    threads: int = 1
    matrix_batch: int = 0  # 0 = full batch

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigInvalid(f"unknown mode {self.mode!r}")
        if self.code_length != "auto":
            if not isinstance(self.code_length, int) or self.code_length < 1:
                raise ConfigInvalid(
                    f"code_length must be 'auto' or a positive int, "
                    f"got {self.code_length!r}"
                )
        if self.max_rounds < 1:
            raise ConfigInvalid(f"max_rounds must be >= 1, got {self.max_rounds}")
        if self.start_round < 1:
            raise ConfigInvalid(f"start_round must be >= 1, got {self.start_round}")
        if self.early_stop_rounds < 0:
            raise ConfigInvalid(
                f"early_stop_rounds must be >= 0, got {self.early_stop_rounds}"
            )
        if self.decoder_batch < 1:
            raise ConfigInvalid(f"decoder_batch must be >= 1, got {self.decoder_batch}")
        if self.decoder_epochs_per_call < 0:
            raise ConfigInvalid(
                f"decoder_epochs_per_call must be >= 0, "
                f"got {self.decoder_epochs_per_call}"
            )
        if self.l2 < 0:
            raise ConfigInvalid(f"l2 must be >= 0, got {self.l2}")
        if self.threads < 1:
            raise ConfigInvalid(f"threads must be >= 1, got {self.threads}")
        if self.matrix_batch < 0:
            raise ConfigInvalid(f"matrix_batch must be >= 0, got {self.matrix_batch}")
        updating = self.mode == MODE_LIGHTMC
        if updating and self.decoder_update and self.gamma1 <= 0:
            raise ConfigInvalid(f"gamma1 must be > 0, got {self.gamma1}")
        if updating and self.matrix_update and self.gamma2 <= 0:
            raise ConfigInvalid(f"gamma2 must be > 0, got {self.gamma2}")
        try:
            self.learner.validate()
        except Exception as exc:
            raise ConfigInvalid(str(exc)) from None


class RoundRecord(NamedTuple):
    round: int
    wall_time: float
    train_loss: float
    valid_error: float


@dataclass
class TrainedModel:
    """Final matrix, decoder, and ensemble plus the per-round history."""

    matrix: CodingMatrix
    decoder: DecoderParams
    ensemble: BaseLearnerEnsemble
    history: list[RoundRecord]
    mode: str
    num_features: int
    num_classes: int
    label_names: tuple[str, ...]
    best_round: int
    convergence_seconds: float


def update_rounds(config: TrainConfig, is_boosting: bool) -> list[int]:
    """Rounds on which decoder/matrix updates fire, within [1, max_rounds]."""
    if not is_boosting:
        return list(range(1, config.max_rounds + 1))
    step = max(1, round(1.0 / config.learner.learning_rate))
    return list(range(config.start_round, config.max_rounds + 1, step))


def _check_classes(data: SparseDataset) -> None:
    counts = np.bincount(data.labels, minlength=data.num_classes)
    missing = np.flatnonzero(counts == 0)
    if missing.size:
        raise MissingClass(
            f"classes {missing.tolist()} have no training instances"
        )


def resolve_code_length(config: TrainConfig, num_classes: int) -> int:
    if config.code_length != "auto":
        return int(config.code_length)
    suggested = codebook.suggested_code_length(num_classes)
    return max(suggested, codebook.min_feasible_code_length(num_classes))


def _decoder_seed(seed: int, round_index: int) -> list[int]:
    return [seed, 104729, round_index]


def fit(
    data: SparseDataset,
    validation: SparseDataset,
    config: TrainConfig,
    *,
    round_hook: Callable[[dict], None] | None = None,
) -> TrainedModel:
    """Run the full training loop and return the best-validation snapshot.

    `round_hook`, when given, is called once per round with a dict holding
    round, elapsed, train_loss, valid_error, updated (whether decoder and
    matrix updates fired), and the current matrix.
    """
    config.validate()
    if config.mode == MODE_OVA:
        return fit_ova(data, validation, config, round_hook=round_hook)
    _check_classes(data)
    if validation.num_features != data.num_features:
        raise DimensionMismatch(
            "validation feature space does not match training data"
        )
    num_classes = data.num_classes
    code_length = resolve_code_length(config, num_classes)
    matrix = codebook.init_random(num_classes, code_length, config.seed)
    return _run_loop(data, validation, config, matrix, round_hook)


def fit_ova(
    data: SparseDataset,
    validation: SparseDataset,
    config: TrainConfig,
    *,
    round_hook: Callable[[dict], None] | None = None,
) -> TrainedModel:
    """One-versus-all baseline: K learners, +1 on the own class, -1 elsewhere.

    Prediction is the argmax of the raw outputs; neither the matrix nor the
    decoder is ever updated. History is recorded exactly as in fit().
    """
    config = replace(config, mode=MODE_OVA)
    config.validate()
    _check_classes(data)
    if validation.num_features != data.num_features:
        raise DimensionMismatch(
            "validation feature space does not match training data"
        )
    k = data.num_classes
    entries = np.full((k, k), -1.0)
    np.fill_diagonal(entries, 1.0)
    return _run_loop(data, validation, config, CodingMatrix(entries), round_hook)


def _run_loop(data, validation, config, matrix, round_hook) -> TrainedModel:
    labels = data.labels
    decoder = softmax_decoder.init_from_matrix(matrix)
    ensemble = learners.new_ensemble(
        matrix.code_length, config.learner, data.num_features, config.seed
    )
    updates_on = config.mode == MODE_LIGHTMC
    cadence = set(update_rounds(config, ensemble.is_boosting))

    o_train = np.zeros((data.num_rows, matrix.code_length))
    o_valid = np.zeros((validation.num_rows, matrix.code_length))
    history: list[RoundRecord] = []
    best_error = np.inf
    best: tuple[CodingMatrix, DecoderParams, BaseLearnerEnsemble, int, float] | None = None
    stall = 0
    t_start = time.perf_counter()
    prev_elapsed = 0.0

    for i in range(1, config.max_rounds + 1):
        learners.train_round(
            ensemble, data, matrix, config.learner, threads=config.threads
        )
        learners.accumulate_round_outputs(ensemble, data, o_train)
        learners.accumulate_round_outputs(ensemble, validation, o_valid)

        updated = False
        if updates_on and i in cadence:
            if config.decoder_update:
                decoder = softmax_decoder.train_decoding(
                    decoder,
                    o_train,
                    labels,
                    config.gamma1,
                    batch_size=config.decoder_batch,
                    epochs=config.decoder_epochs_per_call,
                    l2=config.l2,
                    seed=_decoder_seed(config.seed, i),
                )
            if config.matrix_update:
                matrix = _matrix_step(matrix, decoder, o_train, labels, config)
            updated = config.decoder_update or config.matrix_update

        train_loss = softmax_decoder.mean_loss(decoder, o_train, labels)
        valid_error = _error_fraction(config.mode, decoder, o_valid, validation.labels)
        elapsed = time.perf_counter() - t_start
        if elapsed <= prev_elapsed:  # keep wall times strictly increasing
            elapsed = np.nextafter(prev_elapsed, np.inf)
        prev_elapsed = elapsed
        history.append(RoundRecord(i, elapsed, train_loss, valid_error))
        if round_hook is not None:
            round_hook(
                {
                    "round": i,
                    "elapsed": elapsed,
                    "train_loss": train_loss,
                    "valid_error": valid_error,
                    "updated": updated,
                    "matrix": matrix,
                }
            )

        if valid_error < best_error:
            best_error = valid_error
            best = (matrix, decoder.copy(), copy.deepcopy(ensemble), i, elapsed)
            stall = 0
        else:
            stall += 1
            if config.early_stop_rounds and stall >= config.early_stop_rounds:
                break

    assert best is not None
    matrix, decoder, ensemble, best_round, best_elapsed = best
    return TrainedModel(
        matrix=matrix,
        decoder=decoder,
        ensemble=ensemble,
        history=history,
        mode=config.mode,
        num_features=data.num_features,
        num_classes=data.num_classes,
        label_names=data.label_names,
        best_round=best_round,
        convergence_seconds=best_elapsed,
    )


def _matrix_step(matrix, decoder, o_train, labels, config) -> CodingMatrix:
    n = o_train.shape[0]
    batch = config.matrix_batch if config.matrix_batch > 0 else n
    for start in range(0, n, batch):
        sl = slice(start, start + batch)
        grads = softmax_decoder.output_gradients(decoder, o_train[sl], labels[sl])
        stats = matrix_optimizer.accumulate(grads, labels[sl], matrix.num_classes)
        matrix = matrix_optimizer.update_matrix(matrix, stats, config.gamma2)
    return matrix


def _error_fraction(mode, decoder, outputs, labels) -> float:
    if labels.shape[0] == 0:
        return 0.0
    if mode == MODE_OVA:
        predicted = np.argmax(outputs, axis=1)
    else:
        predicted = softmax_decoder.batch_predict(decoder, outputs)
    return float(np.mean(predicted != labels))


def predict(model: TrainedModel, data: SparseDataset) -> np.ndarray:
    """Predicted dense class index per instance."""
    if data.num_features != model.num_features:
        raise DimensionMismatch(
            f"data has {data.num_features} features, model expects "
            f"{model.num_features}"
        )
    outputs = learners.predict_all(model.ensemble, data)
    if model.mode == MODE_OVA:
        return np.argmax(outputs, axis=1)
    return softmax_decoder.batch_predict(model.decoder, outputs)


# ---------------------------------------------------------------------------
# model bundle


def save_history(history: list[RoundRecord], path) -> None:
    with open(path, "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "elapsed_seconds", "train_loss", "valid_error"])
        for rec in history:
            writer.writerow(
                [rec.round, repr(rec.wall_time), repr(rec.train_loss), repr(rec.valid_error)]
            )


def load_history(path) -> list[RoundRecord]:
    with open(path, "r", encoding="ascii", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["round", "elapsed_seconds", "train_loss", "valid_error"]:
            raise ParseError(f"{path}: unexpected history header {header!r}")
        out = []
        for row in reader:
            out.append(
                RoundRecord(int(row[0]), float(row[1]), float(row[2]), float(row[3]))
            )
    return out


def save_model(model: TrainedModel, out_dir) -> None:
    """Write the directory bundle (codebook, decoder, ensemble, history, labels)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    codebook.save_matrix(model.matrix, out / _FILES["codebook"])
    softmax_decoder.save_params(model.decoder, out / _FILES["decoder"])
    learners.save_ensemble(model.ensemble, out / _FILES["ensemble"])
    save_history(model.history, out / _FILES["history"])
    save_label_map(model.label_names, out / _FILES["labels"])
    # wall times live only in history.csv so the model files stay
    # byte-identical across reruns with the same seed
    meta = {
        "format": "lightmc-model v1",
        "mode": model.mode,
        "num_features": model.num_features,
        "num_classes": model.num_classes,
        "code_length": model.matrix.code_length,
        "best_round": model.best_round,
    }
    with open(out / _META_NAME, "w", encoding="ascii") as fh:
        for key, val in meta.items():
            fh.write(f"{key}={val}\n")


def load_model(model_dir) -> TrainedModel:
    out = Path(model_dir)
    meta: dict[str, str] = {}
    with open(out / _META_NAME, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if line:
                key, _, val = line.partition("=")
                meta[key] = val
    if meta.get("format") != "lightmc-model v1":
        raise ParseError(f"{out}: unrecognized model bundle")
    matrix = codebook.load_matrix(out / _FILES["codebook"])
    decoder = softmax_decoder.load_params(out / _FILES["decoder"])
    ensemble = learners.load_ensemble(out / _FILES["ensemble"])
    history = load_history(out / _FILES["history"])
    label_names = load_label_map(out / _FILES["labels"])
    best_round = int(meta["best_round"])
    return TrainedModel(
        matrix=matrix,
        decoder=decoder,
        ensemble=ensemble,
        history=history,
        mode=meta["mode"],
        num_features=int(meta["num_features"]),
        num_classes=int(meta["num_classes"]),
        label_names=label_names,
        best_round=best_round,
        convergence_seconds=history[best_round - 1].wall_time,
    )
