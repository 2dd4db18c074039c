#!/usr/bin/env python3
"""
Training script for delay twins
Trains the message-passing twin and the RNN baseline on the same dataset and seed
"""
import os
import sys
import logging
import argparse
from pathlib import Path

from dotenv import load_dotenv

from twinforge.errors import TwinforgeError
from twinforge.ml_models.delay_twin import load_model
from twinforge.ml_models.twin_trainer import evaluate, fit_twin
from twinforge.models.schemas import TrainConfig, TwinHyper, TwinMode
from twinforge.services.scenario_generator import load_dataset

# Configure logging
logging.basicConfig(
    level=os.getenv("TWINFORGE_LOG_LEVEL", "INFO").upper(),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

MODEL_FILES = {
    TwinMode.MESSAGE_PASSING: "model_mp.json",
    TwinMode.RNN_BASELINE: "model_rnn.json",
}


def train_twin(mode: TwinMode, dataset, out_dir: Path, cfg: TrainConfig, d: int, T: int) -> bool:
    """Train one twin mode and write its model file and history"""
    logger.info(f"Starting {mode.value} twin training...")

    try:
        model_path = out_dir / MODEL_FILES[mode]
        history_path = model_path.with_name(model_path.stem + "_history.csv")
        _, history = fit_twin(dataset, TwinHyper(d=d, T=T, mode=mode), cfg, str(model_path), str(history_path), progress=True)

        best = history.loc[history["val_loss"].idxmin()]
        logger.info(f"{mode.value} twin training completed!")
        logger.info(f"Best epoch: {int(best['epoch'])}, validation loss: {best['val_loss']:.4f}")
        return True

    except TwinforgeError as e:
        logger.error(f"Error training {mode.value} twin: {e.message}")
        return False


def test_models(dataset, out_dir: Path) -> bool:
    """Score every trained model file against the dataset labels"""
    found = False
    for mode, name in MODEL_FILES.items():
        path = out_dir / name
        if not path.exists():
            logger.warning(f"No {mode.value} model at {path}")
            continue
        found = True
        report = evaluate(load_model(str(path)), dataset)
        logger.info(f"{mode.value}: MAPE {report.mape:.4f} (p15 {report.p15:.4f}, p85 {report.p85:.4f}) over {report.paths} paths")
    return found


def main():
    """Main training function"""
    load_dotenv()
    parser = argparse.ArgumentParser(description='Train delay twins on a labeled dataset')
    parser.add_argument('--dataset', required=True, help='Dataset directory produced by gen-dataset')
    parser.add_argument('--out-dir', default='trained_models', help='Where model files are written')
    parser.add_argument('--mp', action='store_true', help='Train the message-passing twin')
    parser.add_argument('--rnn', action='store_true', help='Train the RNN baseline twin')
    parser.add_argument('--all', action='store_true', help='Train both twins')
    parser.add_argument('--test', action='store_true', help='Score trained models on the dataset')
    parser.add_argument('--epochs', type=int, default=50, help='Training epochs')
    parser.add_argument('--d', type=int, default=32, help='Hidden state width')
    parser.add_argument('--T', type=int, default=8, help='Message-passing iterations')
    parser.add_argument('--seed', type=int, default=int(os.getenv('TWINFORGE_SEED', '0')), help='Training seed')

    args = parser.parse_args()

    out_dir = Path(args.out_dir)
    os.makedirs(out_dir, exist_ok=True)

    try:
        dataset = load_dataset(args.dataset)
    except TwinforgeError as e:
        logger.error(e.message)
        sys.exit(1)

    cfg = TrainConfig(epochs=args.epochs, seed=args.seed)
    success = True

    if args.test:
        success = test_models(dataset, out_dir)
    elif args.all or (not args.mp and not args.rnn):
        # Train both by default
        logger.info("Training both twins...")
        success = (train_twin(TwinMode.MESSAGE_PASSING, dataset, out_dir, cfg, args.d, args.T) and
                   train_twin(TwinMode.RNN_BASELINE, dataset, out_dir, cfg, args.d, args.T))
    else:
        if args.mp:
            success = train_twin(TwinMode.MESSAGE_PASSING, dataset, out_dir, cfg, args.d, args.T)
        if args.rnn:
            success = train_twin(TwinMode.RNN_BASELINE, dataset, out_dir, cfg, args.d, args.T) and success

    if success:
        logger.info("All operations completed successfully!")
    else:
        logger.error("Some operations failed. Check the logs for details.")
        sys.exit(1)


if __name__ == "__main__":
    main()
