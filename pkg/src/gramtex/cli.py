"""Command-line surface: describe, synthesize, rescale-weights, pca-fit,
count-params, export-features, gradcheck.

Exit codes: 0 success, 1 validation error (bad inputs, bad files, bad
dimensions), 2 runtime or numeric failure.  Every subcommand is deterministic
given its flags; all randomness flows from --seed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import NumericError, ValidationError
from .gram import (
    Statistic,
    count_parameters,
    describe,
    export_descriptor_vector,
    load_descriptor,
    save_descriptor,
)
from .gradcheck import run_gradcheck
from .imageio import VGG19_PREPROCESS, PreprocessSpec, load_ppm, postprocess, preprocess, save_ppm
from .network import build_vgg19_spec, load_weights, random_init, rescale_weights, save_weights
from .optim import LbfgsOptions
from .synth import SynthesisAbort, SynthesisConfig, synthesize, write_trace_csv

DESCRIPTOR_SUFFIXES = (".grmd", ".desc")


def _add_network_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--weights", type=Path, default=None, metavar="PATH",
                   help="CNNW0001 weight file for the VGG-19 trunk")
    p.add_argument("--init-weights", choices=("file", "random"), default="file",
                   help="load weights from --weights, or draw them from --seed "
                        "(default: file)")
    p.add_argument("--weight-scale", type=float, default=0.1,
                   help="stddev for --init-weights random (default: 0.1)")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    group = p.add_mutually_exclusive_group()
    group.add_argument("--layers", default=None, metavar="LIST",
                       help="comma-separated layer names "
                            "(default: conv1_1,pool1,pool2,pool3,pool4)")
    group.add_argument("--up-to", default=None, metavar="NAME",
                       help="use every layer at or below NAME")
    p.add_argument("--statistic", default="gram", metavar="KIND",
                   help="gram | pca:K | mean (default: gram)")
    p.add_argument("--pooling", choices=("avg", "max"), default="avg",
                   help="pooling mode (default: avg)")


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="seed for all randomness (default: 0)")
    p.add_argument("--threads", type=int, default=None, metavar="N",
                   help="cap kernel parallelism (default: machine parallelism)")


def _add_optim_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--iters", type=int, default=1000,
                   help="max L-BFGS iterations (default: 1000)")
    p.add_argument("--memory", type=int, default=20,
                   help="L-BFGS history pairs (default: 20)")
    p.add_argument("--grad-tol", type=float, default=1e-7,
                   help="sup-norm gradient tolerance (default: 1e-7)")
    p.add_argument("--rel-loss-tol", type=float, default=1e-9,
                   help="relative loss-change tolerance (default: 1e-9)")
    p.add_argument("--c1", type=float, default=1e-4,
                   help="Armijo sufficient-decrease constant (default: 1e-4)")
    p.add_argument("--c2", type=float, default=0.9,
                   help="Wolfe curvature constant (default: 0.9)")
    p.add_argument("--noise-amplitude", type=float, default=0.1,
                   help="white-noise init amplitude in preprocessed units (default: 0.1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gramtex",
        description="Texture description and synthesis from convolutional "
                    "feature-correlation statistics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("describe", help="compute a texture descriptor from an image")
    p.add_argument("source", type=Path, help="source texture (P6 PPM)")
    _add_network_flags(p)
    _add_config_flags(p)
    _add_common_flags(p)
    p.add_argument("--out", type=Path, required=True, help="descriptor output (GRMD0001)")

    p = sub.add_parser("synthesize", help="generate a texture matching a source or descriptor")
    p.add_argument("input", type=Path, help="source image (PPM) or descriptor (GRMD0001)")
    _add_network_flags(p)
    _add_config_flags(p)
    _add_common_flags(p)
    _add_optim_flags(p)
    p.add_argument("--out", type=Path, required=True, help="output image (PPM)")
    p.add_argument("--trace", type=Path, default=None, help="per-iteration loss CSV")

    p = sub.add_parser("rescale-weights",
                       help="renormalize filters to unit mean activation over a calibration set")
    p.add_argument("weights_in", type=Path)
    p.add_argument("calibration_dir", type=Path, help="directory of PPM images")
    p.add_argument("weights_out", type=Path)
    p.add_argument("--pooling", choices=("avg", "max"), default="avg")
    _add_common_flags(p)

    p = sub.add_parser("pca-fit",
                       help="fit per-layer principal components and write a pca descriptor")
    p.add_argument("source", type=Path, help="source texture (PPM)")
    _add_network_flags(p)
    _add_config_flags(p)
    _add_common_flags(p)
    p.add_argument("--k", type=int, required=True, help="number of principal components")
    p.add_argument("--calib", type=Path, default=None, metavar="DIR",
                   help="fit the bases on this image directory instead of the source")
    p.add_argument("--out", type=Path, required=True, help="descriptor output (GRMD0001)")

    p = sub.add_parser("count-params", help="count texture-model parameters")
    _add_config_flags(p)

    p = sub.add_parser("export-features",
                       help="flatten a descriptor to one vector of little-endian f64")
    p.add_argument("input", type=Path, help="descriptor file (GRMD0001)")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("gradcheck", help="finite-difference check of every gradient path")
    _add_common_flags(p)
    return parser


def _resolve_layers(args, spec) -> list[str]:
    if args.up_to is not None:
        return [l.name for l in spec.up_to(args.up_to)]
    if args.layers is not None:
        names = [n.strip() for n in args.layers.split(",") if n.strip()]
        if not names:
            raise ValidationError("--layers list is empty")
        for n in names:
            spec.index_of(n)  # unknown names fail fast
        return sorted(names, key=spec.index_of)
    return ["conv1_1", "pool1", "pool2", "pool3", "pool4"]


def _load_network(args, spec):
    if args.init_weights == "random":
        return random_init(spec, args.seed, args.weight_scale)
    if args.weights is None:
        raise ValidationError("need --weights PATH (or --init-weights random)")
    if not args.weights.exists():
        raise ValidationError(f"weights file not found: {args.weights}")
    return load_weights(args.weights, spec)


def _preprocess_spec(weights_path: Path | None) -> PreprocessSpec:
    """Sidecar metadata next to the weight file wins; VGG convention otherwise."""
    if weights_path is not None:
        sidecar = Path(str(weights_path) + ".json")
        if sidecar.exists():
            meta = json.loads(sidecar.read_text())
            pp = meta.get("preprocess", {})
            return PreprocessSpec(
                channel_means=tuple(pp.get("channel_means", VGG19_PREPROCESS.channel_means)),
                channel_order=pp.get("channel_order", VGG19_PREPROCESS.channel_order),
                scale=pp.get("scale", VGG19_PREPROCESS.scale),
            )
    return VGG19_PREPROCESS


def _load_source_tensor(path: Path, pp: PreprocessSpec):
    if not path.exists():
        raise ValidationError(f"input file not found: {path}")
    return preprocess(load_ppm(path), pp)


def _is_descriptor(path: Path) -> bool:
    if path.suffix in DESCRIPTOR_SUFFIXES:
        return True
    try:
        with open(path, "rb") as fh:
            return fh.read(8) == b"GRMD0001"
    except OSError:
        return False


def _print_descriptor_summary(desc, spec, statistic):
    for e in desc.entries:
        shape = f"{e.n}" if e.kind == "mean" else f"{e.n}x{e.n}"
        print(f"{e.name}: {e.kind} {shape} (M={e.m})")
    n_params = count_parameters(spec, desc.layer_names(), statistic)
    print(f"{n_params} parameters")


def cmd_describe(args) -> int:
    spec = build_vgg19_spec()
    layers = _resolve_layers(args, spec)
    statistic = Statistic.parse(args.statistic)
    network = _load_network(args, spec)
    image = _load_source_tensor(args.source, _preprocess_spec(args.weights))
    desc = describe(network, image, layers, statistic, args.pooling)
    save_descriptor(desc, args.out)
    _print_descriptor_summary(desc, spec, statistic)
    print(f"wrote {args.out}")
    return 0


def cmd_synthesize(args) -> int:
    spec = build_vgg19_spec()
    statistic = Statistic.parse(args.statistic)
    network = _load_network(args, spec)
    pp = _preprocess_spec(args.weights)
    opts = LbfgsOptions(
        memory=args.memory, max_iters=args.iters, grad_tol=args.grad_tol,
        rel_loss_tol=args.rel_loss_tol, c1=args.c1, c2=args.c2,
    )
    if _is_descriptor(args.input):
        target = load_descriptor(args.input)
        layers = target.layer_names()
        config = SynthesisConfig(
            layers=tuple(layers), statistic=statistic, pool_mode=args.pooling,
            seed=args.seed, noise_amplitude=args.noise_amplitude, lbfgs=opts,
        )
    else:
        layers = _resolve_layers(args, spec)
        image = _load_source_tensor(args.input, pp)
        target = describe(network, image, layers, statistic, args.pooling)
        config = SynthesisConfig(
            layers=tuple(layers), statistic=statistic, pool_mode=args.pooling,
            dims=(image.shape[1], image.shape[2]), seed=args.seed,
            noise_amplitude=args.noise_amplitude, lbfgs=opts,
        )
    try:
        result, trace = synthesize(network, target, config)
    except SynthesisAbort as e:
        if args.trace is not None:
            write_trace_csv(e.trace, args.trace, layers)
        print(f"synthesis aborted: {e}", file=sys.stderr)
        return 2
    save_ppm(postprocess(result, pp), args.out)
    if args.trace is not None:
        write_trace_csv(trace, args.trace, layers)
    final = trace.rows[-1]
    print(f"final loss {final.total_loss:.17g} after {final.iteration} iterations "
          f"({trace.termination})")
    print(f"wrote {args.out}")
    return 0


def cmd_rescale_weights(args) -> int:
    spec = build_vgg19_spec()
    if not args.weights_in.exists():
        raise ValidationError(f"weights file not found: {args.weights_in}")
    network = load_weights(args.weights_in, spec)
    paths = sorted(args.calibration_dir.glob("*.ppm"))
    if not paths:
        raise ValidationError(f"no .ppm images in {args.calibration_dir}")
    pp = _preprocess_spec(args.weights_in)
    images = [preprocess(load_ppm(p), pp) for p in paths]
    rescaled = rescale_weights(network, images, args.pooling)
    save_weights(rescaled, args.weights_out)
    print(f"rescaled {len(spec.conv_layers())} layers over {len(images)} images")
    print(f"wrote {args.weights_out}")
    return 0


def cmd_pca_fit(args) -> int:
    spec = build_vgg19_spec()
    layers = _resolve_layers(args, spec)
    statistic = Statistic("pca", args.k)
    network = _load_network(args, spec)
    pp = _preprocess_spec(args.weights)
    image = _load_source_tensor(args.source, pp)
    bases = None
    if args.calib is not None:
        from .gram import pca_fit
        from .network import forward
        paths = sorted(args.calib.glob("*.ppm"))
        if not paths:
            raise ValidationError(f"no .ppm images in {args.calib}")
        calib = [preprocess(load_ppm(p), pp) for p in paths]
        top = max(layers, key=spec.index_of)
        sets = [forward(network, img, top, args.pooling) for img in calib]
        bases = {
            name: pca_fit(name, [s.outputs[name] for s in sets], args.k)
            for name in layers
        }
    desc = describe(network, image, layers, statistic, args.pooling, bases=bases)
    save_descriptor(desc, args.out)
    _print_descriptor_summary(desc, spec, statistic)
    print(f"wrote {args.out}")
    return 0


def cmd_count_params(args) -> int:
    spec = build_vgg19_spec()
    layers = _resolve_layers(args, spec)
    statistic = Statistic.parse(args.statistic)
    print(count_parameters(spec, layers, statistic))
    return 0


def cmd_export_features(args) -> int:
    if not args.input.exists():
        raise ValidationError(f"input file not found: {args.input}")
    desc = load_descriptor(args.input)
    vector = export_descriptor_vector(desc)
    with open(args.out, "wb") as fh:
        fh.write(vector.astype("<f8").tobytes())
    print(f"wrote {vector.size} values to {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    return 0 if run_gradcheck(args.seed) else 2


_COMMANDS = {
    "describe": cmd_describe,
    "synthesize": cmd_synthesize,
    "rescale-weights": cmd_rescale_weights,
    "pca-fit": cmd_pca_fit,
    "count-params": cmd_count_params,
    "export-features": cmd_export_features,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if getattr(args, "threads", None) is not None:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=args.threads):
                return _COMMANDS[args.command](args)
        return _COMMANDS[args.command](args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
