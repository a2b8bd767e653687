import argparse
import logging
import sys
from pathlib import Path

# Add the project root to Python's module search path
sys.path.append(str(Path(__file__).parent.parent))

from analytics.attribution import sweep
from analytics.channels import feature_inversion, masked_activation, saliency_overlay, sweep_channels
from analytics.evaluation import run_pointing_benchmark
from app.config import CONFIG
from app.errors import ExtremalError, InputError
from app.run_config import COMMANDS, RunConfig
from app.selftest import run_selftest
from ingestion.dataset import load_manifest
from ingestion.simulate_dataset import simulate
from models.loader import load_model
from storage.artifacts import RunArtifacts
from storage.tensor_io import read_image
from tensor_core import Tensor

logger = logging.getLogger("extremal")


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


# flag -> RunConfig field; every flag defaults to None so CONFIG values win when unset
FLAGS = {
    "--model": ("model", str), "--image": ("image", str), "--manifest": ("manifest", str),
    "--out": ("out", str), "--areas": ("areas", _floats), "--channel-areas": ("channel_areas", _ints),
    "--objective": ("objective", str), "--iterations": ("iterations", int), "--lr": ("learning_rate", float),
    "--momentum": ("momentum", float), "--lambda0": ("lambda0", float), "--inv-temp": ("inv_temperature", float),
    "--sigma": ("sigma", float), "--step": ("step", int), "--margin": ("margin", int),
    "--border": ("border", str),
    "--sigma-max": ("sigma_max", float), "--levels": ("levels", int), "--perturbation": ("perturbation", str),
    "--tau": ("tau", float), "--deletion-tolerance": ("deletion_tolerance", float), "--phi0": ("phi0", float),
    "--channel-iterations": ("channel_iterations", int), "--inversion-steps": ("inversion_steps", int),
    "--inversion-lr": ("inversion_lr", float), "--items": ("items", int), "--image-size": ("image_size", int),
    "--seed": ("seed", int), "--threads": ("threads", int),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="extremal", description="Extremal perturbation attribution")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--from-run", help="replay a previous run.json")
    for flag, (dest, kind) in FLAGS.items():
        parser.add_argument(flag, dest=dest, type=kind, default=None)
    return parser


def resolve_config(args) -> RunConfig:
    overrides = {dest: getattr(args, dest) for dest, _ in FLAGS.values() if getattr(args, dest) is not None}
    if args.from_run:
        base = RunConfig.from_file(args.from_run).to_dict()
        base.update(overrides)
        base["command"] = args.command
        return RunConfig.from_dict(base)
    if args.command == "pointing":
        overrides.setdefault("areas", list(CONFIG["POINTING_AREAS"]))
    return RunConfig(command=args.command, **overrides)


def _require(config: RunConfig, *names):
    for name in names:
        if not getattr(config, name):
            raise InputError(f"{config.command} needs --{name}")


def cmd_attribute(config: RunConfig, out: RunArtifacts) -> int:
    _require(config, "model", "image")
    model = load_model(config.model)
    image = Tensor(read_image(config.image))
    result = sweep(model, image, config.areas, config.engine(), config.phi0)
    out.write_attribution(result)
    print(result.summary_line())
    return 0


def _channel_run(config: RunConfig):
    _require(config, "model", "image")
    model = load_model(config.model)
    if not model.splittable:
        raise InputError(f"{config.model} declares no split point")
    split = model.split()
    image = Tensor(read_image(config.image))
    result = sweep_channels(split, image, config.channel_areas, config.phi0, config.channel_schedule(),
                            config.threads)
    chosen = result.record(result.a_star if result.a_star is not None else max(config.channel_areas))
    return split, image, result, chosen


def cmd_channels(config: RunConfig, out: RunArtifacts) -> int:
    split, image, result, chosen = _channel_run(config)
    overlay = saliency_overlay(chosen.mask, split.head(image)).numpy()
    out.write_channels(result, overlay)
    print(f"a* = {result.a_star} channels" if result.a_star is not None else "not extremal at grid")
    return 0


def cmd_invert(config: RunConfig, out: RunArtifacts) -> int:
    split, image, result, chosen = _channel_run(config)
    target = masked_activation(split, image, chosen.mask)
    inverted, trace = feature_inversion(split, target, config.inversion_steps, config.inversion_lr)
    out.write_tensor("inversion.ft1", inverted)
    span = inverted.max() - inverted.min()
    out.write_image("inversion.png", (inverted - inverted.min()) / span if span > 0 else inverted * 0)
    out.write_csv("inversion_trace.csv", {"step": list(range(len(trace))), "objective": trace})
    out.write_json("channels.json", result.to_dict())
    print(f"inverted {chosen.count} channels, objective {trace[-1] if trace else 0.0:.5g}")
    return 0


def cmd_pointing(config: RunConfig, out: RunArtifacts) -> int:
    _require(config, "manifest")
    dataset = load_manifest(config.manifest)
    result = run_pointing_benchmark(dataset, config.engine(), config.areas)
    summary = out.write_pointing(result)
    print(f"pointing accuracy: all {summary['all']}, difficult {summary['difficult']}")
    return 0


def cmd_selftest(config: RunConfig, out: RunArtifacts) -> int:
    results = run_selftest()
    out.write_json("selftest.json", [r.__dict__ for r in results])
    for result in results:
        if not result.passed:
            print(f"selftest failed: {result.name}: {result.counterexample}")
            return 1
    print("selftest passed")
    return 0


def cmd_simulate(config: RunConfig, out: RunArtifacts) -> int:
    size = config.image_size
    manifest = simulate(out.out_dir, config.items, (3, size, size), config.seed)
    print(f"manifest written to {manifest}")
    return 0


HANDLERS = {
    "attribute": cmd_attribute,
    "channels": cmd_channels,
    "invert": cmd_invert,
    "pointing": cmd_pointing,
    "selftest": cmd_selftest,
    "simulate": cmd_simulate,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(asctime)s - %(levelname)s - %(message)s")
    args = build_parser().parse_args(argv)
    try:
        config = resolve_config(args)
        out = RunArtifacts(config.out)
        out.write_run_config(config.to_dict())
        return HANDLERS[config.command](config, out)
    except ExtremalError as err:
        logger.error("❌ %s", err)
        print(f"error: {err}", file=sys.stderr)
        return err.exit_code


if __name__ == "__main__":
    sys.exit(main())
