"""Command-line entry point of the tether-net capture toolkit."""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import Settings, load_settings
from .errors import ConfigurationError, TetherNetError, WidthMismatchError
from .harness.export import export_run
from .harness.persistence import load_dataset, save_dataset, write_json, write_jsonl
from .harness.runner import (
    PolicyTrainer,
    calibrate_fuel_reference,
    generate_dataset,
    paired_evaluation,
    run_manifest,
    simulate_single,
    train_surrogate,
    write_episode_logs,
)
from .learning.policy import load_checkpoint
from .learning.surrogate import SurrogateModel, prediction_metrics
from .models import CaptureMode, Variant

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

# Full-scale results reported alongside desk-scale evaluations.
FULL_SCALE_REFERENCE = {
    Variant.FOUR_MU: "fuel saving 9.8%, per-MU fuel 0.028 kg, success 100%",
    Variant.EIGHT_MU: "fuel saving 2.0%, per-MU fuel 0.022 kg, success 100%",
}


def _variant(value: str) -> Variant:
    return Variant(value)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tethernet", description="Tether-net debris capture toolkit")
    parser.add_argument("--config", type=Path, default=None, help="YAML config file (default $TETHERNET_CONFIG)")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)
    variants = [v.value for v in Variant]

    p = sub.add_parser("simulate", help="Run one nominal episode with full logs")
    p.add_argument("--variant", type=_variant, choices=list(Variant), default=Variant.FOUR_MU, metavar="{" + ",".join(variants) + "}")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--x", type=float)
    p.add_argument("--y", type=float)
    p.add_argument("--z", type=float)
    p.add_argument("--out", type=Path, required=True, help="Output directory")

    p = sub.add_parser("gen-dataset", help="Generate surrogate training data")
    p.add_argument("--variant", type=_variant, choices=list(Variant), default=Variant.FOUR_MU, metavar="{" + ",".join(variants) + "}")
    p.add_argument("--episodes", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True, help="Dataset file (.npz)")
    p.add_argument("--jobs", type=int, default=None)

    p = sub.add_parser("train-surrogate", help="Train the capture surrogate")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="Model file")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)

    p = sub.add_parser("eval-surrogate", help="Score a surrogate on a dataset")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--dataset", type=Path, required=True)

    p = sub.add_parser("calibrate-fuel", help="Fuel reference from nominal episodes")
    p.add_argument("--variant", type=_variant, choices=list(Variant), default=Variant.FOUR_MU, metavar="{" + ",".join(variants) + "}")
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=None)

    p = sub.add_parser("train-policy", help="Train the aiming policy against the surrogate")
    p.add_argument("--variant", type=_variant, choices=list(Variant), default=Variant.FOUR_MU, metavar="{" + ",".join(variants) + "}")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--surrogate", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="Checkpoint file")
    p.add_argument("--resume", type=Path, default=None, help="Checkpoint to continue from")
    p.add_argument("--fuel-reference", type=float, default=None, help="m_fmax (kg)")
    p.add_argument("--jobs", type=int, default=None)

    p = sub.add_parser("evaluate", help="Paired nominal-versus-policy evaluation")
    p.add_argument("--variant", type=_variant, choices=list(Variant), default=None, metavar="{" + ",".join(variants) + "}")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True, help="Report file (.json)")
    p.add_argument("--jobs", type=int, default=None)

    p = sub.add_parser("export-plots", help="Export plot data as CSV")
    p.add_argument("--run", type=Path, required=True, help="Directory of run logs")
    p.add_argument("--out", type=Path, required=True, help="Output directory")
    return parser


def cmd_simulate(args: argparse.Namespace, settings: Settings) -> int:
    coords = (args.x, args.y, args.z)
    if any(c is not None for c in coords) and not all(c is not None for c in coords):
        raise ConfigurationError("--x, --y and --z must be given together")
    position = coords if args.x is not None else None
    record, outcome = simulate_single(settings, args.variant, args.seed, position)
    write_episode_logs(args.out, outcome, record)
    manifest = run_manifest("simulate", settings, args.seed, args.variant, CaptureMode.FULL, [record], [outcome])
    write_json(args.out / "manifest.json", manifest)
    m = record.metrics
    print(
        f"success={m.success} settled_cqi={m.settled_cqi:.4f} locked_pairs={m.locked_pairs} "
        f"fuel={m.total_fuel:.5f} kg reward={record.reward:.4f}"
    )
    return 0


def cmd_gen_dataset(args: argparse.Namespace, settings: Settings) -> int:
    data = generate_dataset(settings, args.variant, args.episodes, args.seed, args.jobs)
    save_dataset(
        args.out, data["features"], data["labels"], args.variant.value,
        window=settings.surrogate.window, scenarios=data["scenarios"],
    )
    print(f"samples={len(data['labels'])} dropped={data['dropped']} width={data['features'].shape[-1]}")
    return 0


def cmd_train_surrogate(args: argparse.Namespace, settings: Settings) -> int:
    data = load_dataset(args.dataset)
    variant = Variant(data["variant"])
    if data["window"] != settings.surrogate.window:
        surrogate = settings.surrogate.model_copy(update={"window": data["window"]})
        settings = settings.model_copy(update={"surrogate": surrogate})
    model = train_surrogate(settings, data["features"], data["labels"], variant, args.lr, args.epochs)
    model.save(args.out)
    print(json.dumps({"train": model.metadata["train"], "validation": model.metadata["validation"]}, indent=2))
    return 0


def cmd_eval_surrogate(args: argparse.Namespace, settings: Settings) -> int:
    model = SurrogateModel.load(args.model)
    data = load_dataset(args.dataset)
    model.check_compatible(Variant(data["variant"]), data["width"])
    if data["window"] != model.window:
        raise WidthMismatchError(f"dataset window {data['window']} does not match model window {model.window}")
    print(json.dumps(prediction_metrics(model, data["features"], data["labels"], settings.capture), indent=2))
    return 0


def cmd_calibrate_fuel(args: argparse.Namespace, settings: Settings) -> int:
    episodes = args.episodes or settings.policy.calibration_episodes
    reference = calibrate_fuel_reference(settings, args.variant, episodes, args.seed, args.jobs)
    print(f"fuel_reference: {reference:.6f}")
    return 0


def cmd_train_policy(args: argparse.Namespace, settings: Settings) -> int:
    surrogate = SurrogateModel.load(args.surrogate)
    resume = load_checkpoint(args.resume) if args.resume is not None else None
    trainer = PolicyTrainer(
        settings, args.variant, surrogate, args.seed, args.out,
        fuel_reference=args.fuel_reference, resume=resume, n_jobs=args.jobs,
    )
    history = trainer.run(args.iterations or settings.policy.iterations)
    run_dir = args.out.parent
    write_jsonl(run_dir / "history.jsonl", "training-history", history, {"variant": args.variant.value})
    write_jsonl(run_dir / "episodes.jsonl", "episode", trainer.records, {"variant": args.variant.value})
    last = history[-1]
    print(f"iterations={len(history)} trailing_mean_reward={last.trailing_mean_reward:.4f}")
    return 0


def cmd_evaluate(args: argparse.Namespace, settings: Settings) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    if args.variant is not None and args.variant != checkpoint.variant:
        raise WidthMismatchError(
            f"checkpoint is for {checkpoint.variant.value}, not {args.variant.value}"
        )
    episodes = args.episodes or settings.harness.eval_episodes
    report, _ = paired_evaluation(settings, checkpoint, episodes, args.seed, args.jobs)
    write_json(args.out, report)
    logger.info(f"Full-scale reference for {checkpoint.variant.value}: {FULL_SCALE_REFERENCE[checkpoint.variant]}")
    print(
        f"episodes={report.episodes} success_rate={report.success_rate:.3f} "
        f"mean_fuel_delta={report.mean_fuel_delta:.6f} relative_saving={report.relative_saving:.4f}"
    )
    return 0


def cmd_export_plots(args: argparse.Namespace, settings: Settings) -> int:
    for path in export_run(args.run, args.out):
        print(path)
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "gen-dataset": cmd_gen_dataset,
    "train-surrogate": cmd_train_surrogate,
    "eval-surrogate": cmd_eval_surrogate,
    "calibrate-fuel": cmd_calibrate_fuel,
    "train-policy": cmd_train_policy,
    "evaluate": cmd_evaluate,
    "export-plots": cmd_export_plots,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run a subcommand; returns the process exit code."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format=LOG_FORMAT)

    try:
        settings = load_settings(args.config)
        return COMMANDS[args.command](args, settings)
    except TetherNetError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.exception(f"Unexpected error in {args.command}")
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
