"""
Delay Twin Trainer
Adam over shuffled mini-batches with a held-out validation split and best-checkpoint selection
"""
import copy
import logging
import os
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch
from sklearn.model_selection import train_test_split
from tqdm import tqdm

from ..errors import DivergedLoss, InvalidInput
from ..models.schemas import Sample, TrainConfig, TwinHyper
from ..services.evaluation import EvaluationReport, prediction_frame, summarize, usable_label_mask
from .delay_twin import (
    DelayTwin,
    SampleTensors,
    batch_loss,
    check_gradients,
    compute_scales,
    init_params,
    predict,
    sample_tensors,
    save_model,
)

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ["epoch", "train_loss", "val_loss"]


def split_indices(n: int, cfg: TrainConfig) -> Tuple[np.ndarray, np.ndarray]:
    indices = np.arange(n)
    train_idx, val_idx = train_test_split(
        indices, test_size=cfg.validation_fraction, random_state=cfg.seed % 2**32, shuffle=True
    )
    return np.sort(train_idx), np.sort(val_idx)


@torch.no_grad()
def dataset_loss(model: DelayTwin, tensors: Sequence[SampleTensors], cfg: TrainConfig) -> float:
    return float(batch_loss(model, tensors, cfg.loss_kind))


def train(
    dataset: Sequence[Sample],
    model: DelayTwin,
    cfg: Optional[TrainConfig] = None,
    history_path: Optional[str] = None,
    progress: bool = False,
) -> Tuple[DelayTwin, pd.DataFrame]:
    """Fit the twin; returns the best-validation checkpoint and the per-epoch history"""
    cfg = cfg or TrainConfig()
    if len(dataset) < 2:
        raise InvalidInput("training needs at least 2 samples")

    train_idx, val_idx = split_indices(len(dataset), cfg)
    if model.scales is None:
        model.scales = compute_scales([dataset[i] for i in train_idx])
        logger.info(f"Feature scales: {model.scales.model_dump()}")

    tensors = [sample_tensors(sample, model.scales) for sample in dataset]
    train_set = [tensors[i] for i in train_idx]
    val_set = [tensors[i] for i in val_idx]
    logger.info(f"Training {model.hyper.mode.value} twin on {len(train_set)} samples, validating on {len(val_set)}")

    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, betas=(0.9, 0.999), eps=1e-8)
    rng = np.random.default_rng(cfg.seed)

    history: List[dict] = [
        {"epoch": 0, "train_loss": dataset_loss(model, train_set, cfg), "val_loss": dataset_loss(model, val_set, cfg)}
    ]
    best_val = history[0]["val_loss"]
    best_state = copy.deepcopy(model.state_dict())

    for epoch in tqdm(range(1, cfg.epochs + 1), desc="epochs", disable=not progress):
        order = rng.permutation(len(train_set))
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_set[i] for i in order[start : start + cfg.batch_size]]
            optimizer.zero_grad(set_to_none=True)
            value = batch_loss(model, batch, cfg.loss_kind)
            if not torch.isfinite(value):
                raise DivergedLoss(f"loss became non-finite at epoch {epoch}", details={"epoch": epoch})
            value.backward()
            check_gradients(model)
            optimizer.step()

        train_loss = dataset_loss(model, train_set, cfg)
        val_loss = dataset_loss(model, val_set, cfg)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise DivergedLoss(f"loss became non-finite at epoch {epoch}", details={"epoch": epoch})
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        logger.debug(f"Epoch {epoch}: train {train_loss:.4f}, val {val_loss:.4f}")

        if val_loss < best_val:
            best_val = val_loss
            best_state = copy.deepcopy(model.state_dict())

    model.load_state_dict(best_state)
    logger.info(f"Best validation loss: {best_val:.4f}")

    frame = pd.DataFrame(history, columns=HISTORY_COLUMNS)
    if history_path:
        os.makedirs(os.path.dirname(os.path.abspath(history_path)), exist_ok=True)
        frame.to_csv(history_path, index=False)
    return model, frame


def predict_dataset(model: DelayTwin, dataset: Sequence[Sample]) -> List[np.ndarray]:
    return [predict(model, sample_tensors(sample, model.scales)) for sample in dataset]


def evaluate(model: DelayTwin, dataset: Sequence[Sample]) -> EvaluationReport:
    """MAPE and 15/85 percentile APE over every labeled path of the dataset"""
    preds, truths = [], []
    for sample, pred in zip(dataset, predict_dataset(model, dataset)):
        mask = usable_label_mask(sample.label)
        preds.append(pred[mask])
        truths.append(sample.label.delays[mask])
    return summarize(np.concatenate(preds), np.concatenate(truths))


def evaluation_frame(model_name: str, model: DelayTwin, dataset: Sequence[Sample]) -> pd.DataFrame:
    return prediction_frame(model_name, dataset, predict_dataset(model, dataset))


def fit_twin(
    dataset: Sequence[Sample],
    hyper: TwinHyper,
    cfg: TrainConfig,
    model_path: str,
    history_path: Optional[str] = None,
    progress: bool = False,
) -> Tuple[DelayTwin, pd.DataFrame]:
    """Initialize from cfg.seed, train, and write the best checkpoint to `model_path`"""
    model = init_params(cfg.seed, hyper.d, hyper.T, hyper.mode)
    model, history = train(dataset, model, cfg, history_path, progress)
    save_model(model, model_path)
    return model, history
