"""Command-line surface tying synthesis, training, evaluation and simulation together.

Exit codes: 0 success, 2 input/configuration errors, 3 non-convergence.
All failures print one line to stderr with a machine-parsable
``error:<category>:`` prefix.  Every JSON report carries
``{tool_version, seed, config_hash}`` so runs can be traced to their exact
configuration; reruns with identical flags, files and seeds are
byte-identical.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .datasets import canonicalize_scores, load_manifest
from .errors import DistortLabError, ParameterError, SizeLimitError
from .fisher import (
    SynthesisConfig,
    dense_eigenpairs,
    predicted_log_threshold_ratio,
    synthesize,
)
from .imageio import load_image, load_raw_f32, render_distorted, render_gallery, save_raw_f32
from .observer import ObserverConfig, analytic_threshold, measure_threshold
from .noise import NoiseStream
from .training import TrainConfig, pearson, perceptual_distance, train
from .zoo import build_from_theta, get_family

PARAMS_VERSION = 1


def _sanitize(obj):
    """Make JSON-safe: non-finite floats become explicit string markers."""
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        if math.isnan(f):
            return "nan"
        return f
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _sanitize(obj.tolist())
    return obj


def _config_hash(args: argparse.Namespace) -> str:
    # out_dir does not affect the computation, so it stays out of the hash
    payload = json.dumps(
        {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out_dir")},
        sort_keys=True,
        default=str,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def _provenance(args) -> dict:
    return {
        "tool_version": __version__,
        "seed": getattr(args, "seed", None),
        "config_hash": _config_hash(args),
    }


def _write_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_sanitize(payload), fh, sort_keys=True, indent=2)
        fh.write("\n")


def _load_params_theta(path, model_type: str) -> np.ndarray:
    with open(path, "r") as fh:
        data = json.load(fh)
    for key in ("model_type", "version", "theta"):
        if key not in data:
            raise ParameterError(f"params file missing field {key!r}")
    if data["model_type"] != model_type:
        raise ParameterError(
            f"params file is for model {data['model_type']!r}, not {model_type!r}"
        )
    if int(data["version"]) != PARAMS_VERSION:
        raise ParameterError(f"unsupported params version {data['version']}")
    return np.asarray(data["theta"], dtype=np.float64)


def _write_params(path, model_type: str, theta, provenance: dict) -> None:
    payload = {
        "model_type": model_type,
        "version": PARAMS_VERSION,
        "theta": [float(t) for t in theta],
    }
    payload.update(provenance)
    _write_json(path, payload)


def _build_model(args, image_shape, model_flag="model", params_flag="params"):
    model_type = getattr(args, model_flag)
    family = get_family(model_type)
    params_path = getattr(args, params_flag, None)
    if family.theta_size == 0:
        theta = np.zeros(0)
    elif params_path is None:
        raise ParameterError(f"model {model_type!r} requires --{params_flag.replace('_', '-')}")
    else:
        theta = _load_params_theta(params_path, model_type)
    return build_from_theta(model_type, theta, image_shape), model_type


def _ensure_out_dir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def cmd_synth(args) -> int:
    image = load_image(args.image)
    chain, _ = _build_model(args, image.shape)
    config = SynthesisConfig(seed=args.seed, tol=args.tol, max_iters=args.max_iters)
    result = synthesize(chain, image, config)
    out = _ensure_out_dir(args.out_dir)
    save_raw_f32(result.e_max, os.path.join(out, "e_max.f32"))
    save_raw_f32(result.e_min, os.path.join(out, "e_min.f32"))
    payload = result.to_json_dict()
    payload["log_threshold_ratio"] = predicted_log_threshold_ratio(result)
    payload["model_type"] = args.model
    payload.update(_provenance(args))
    _write_json(os.path.join(out, "eigen_result.json"), payload)
    if not result.converged:
        print("error:convergence: iteration hit max_iters before tolerance", file=sys.stderr)
        return 3
    return 0


def cmd_oracle(args) -> int:
    image = load_image(args.image)
    if image.size > 4096:
        raise SizeLimitError(f"oracle restricted to <= 4096 pixels, got {image.size}")
    chain, _ = _build_model(args, image.shape)
    pairs = dense_eigenpairs(chain, image)
    out = _ensure_out_dir(args.out_dir)
    save_raw_f32(pairs["e_max"], os.path.join(out, "e_max.f32"))
    save_raw_f32(pairs["e_min"], os.path.join(out, "e_min.f32"))
    lam_max, lam_min = pairs["lambda_max"], pairs["lambda_min"]
    payload = {
        "lambda_max": lam_max,
        "lambda_min": lam_min,
        "log_threshold_ratio": (
            0.5 * math.log(lam_max / lam_min) if lam_min > 0 else math.inf
        ),
        "model_type": args.model,
        "method": "dense finite-difference Jacobian + symmetric eigendecomposition",
    }
    payload.update(_provenance(args))
    _write_json(os.path.join(out, "oracle_result.json"), payload)
    return 0


def cmd_render(args) -> int:
    image = load_image(args.image)
    out = _ensure_out_dir(args.out_dir)
    if args.synth_dir is not None:
        e_max = load_raw_f32(os.path.join(args.synth_dir, "e_max.f32"))
        e_min = load_raw_f32(os.path.join(args.synth_dir, "e_min.f32"))
        meta = render_gallery(image, e_max, e_min, out, args.alpha_max, args.alpha_min)
    elif args.vector is not None:
        direction = load_raw_f32(args.vector)
        base = os.path.join(out, args.name)
        meta = render_distorted(image, direction, args.alpha, base)
    else:
        raise ParameterError("render needs either --vector or --synth-dir")
    meta.update(_provenance(args))
    _write_json(os.path.join(out, "render_meta.json"), meta)
    return 0


def cmd_train(args) -> int:
    records, polarity = load_manifest(args.manifest)
    records = canonicalize_scores(records, polarity)
    config = TrainConfig(
        learning_rate=args.lr,
        weight_decay=args.weight_decay,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        holdout_fraction=args.holdout,
    )
    initial = None
    if args.init_params is not None:
        initial = _load_params_theta(args.init_params, args.model)
    result = train(args.model, records, config, initial_theta=initial)
    out = _ensure_out_dir(args.out_dir)
    _write_params(os.path.join(out, "params.json"), args.model, result.theta, _provenance(args))
    with open(os.path.join(out, "train_log.jsonl"), "w") as fh:
        for entry in result.log:
            fh.write(json.dumps(_sanitize(entry), sort_keys=True))
            fh.write("\n")
    print(f"best_epoch={result.best_epoch} rho={result.best_rho:.6f}")
    return 0


def cmd_eval(args) -> int:
    records, polarity = load_manifest(args.manifest)
    records = canonicalize_scores(records, polarity)
    if not records:
        raise ParameterError("manifest has no records")
    chain, _ = _build_model(args, records[0].reference.shape)
    distances = [perceptual_distance(chain, r.reference, r.distorted) for r in records]
    scores = [r.score for r in records]
    rho = pearson(distances, scores)
    print(f"rho={rho:.6f}")
    return 0


def cmd_simulate(args) -> int:
    image = load_image(args.image)
    chain, model_type = _build_model(args, image.shape)
    if args.observer_model is not None:
        observer_args = argparse.Namespace(
            observer_model=args.observer_model, observer_params=args.observer_params
        )
        observer, observer_type = _build_model(
            observer_args, image.shape, "observer_model", "observer_params"
        )
    else:
        observer, observer_type = chain, model_type

    syn = synthesize(chain, image, SynthesisConfig(seed=args.seed, tol=args.tol, max_iters=args.max_iters))
    config = ObserverConfig(sigma=args.sigma, trials_per_vector=args.trials, seed=args.seed)
    root = NoiseStream(args.seed)
    thresholds = {"max": [], "min": []}
    fits = {"max": [], "min": []}
    for subject in range(args.subjects):
        for tag, direction in (("max", syn.e_max), ("min", syn.e_min)):
            fit = measure_threshold(
                observer, image, direction, config, stream=root.substream(subject, 0 if tag == "max" else 1)
            )
            thresholds[tag].append(fit.threshold)
            fits[tag].append(
                {
                    "subject": subject,
                    "threshold": fit.threshold,
                    "slope": fit.slope,
                    "log_likelihood": fit.log_likelihood,
                    "converged": fit.converged,
                }
            )
    ratios = [
        math.log(tl / tm)
        for tm, tl in zip(thresholds["max"], thresholds["min"])
        if math.isfinite(tm) and math.isfinite(tl)
    ]
    censored = sum(
        1
        for tm, tl in zip(thresholds["max"], thresholds["min"])
        if not (math.isfinite(tm) and math.isfinite(tl))
    )
    payload = {
        "image_id": os.path.basename(args.image),
        "model_id": model_type,
        "observer_id": observer_type,
        "sigma": args.sigma,
        "trials_per_vector": args.trials,
        "subjects": args.subjects,
        "lambda_max": syn.lambda_max,
        "lambda_min": syn.lambda_min,
        "predicted_log_ratio": predicted_log_threshold_ratio(syn),
        "analytic_thresholds": {
            "max": analytic_threshold(observer, image, syn.e_max, config),
            "min": analytic_threshold(observer, image, syn.e_min, config),
        },
        "thresholds": thresholds,
        "fits": fits,
        "log_ratio": float(np.mean(ratios)) if ratios else math.nan,
        "D": float(np.mean(ratios)) if ratios else math.nan,
        "censored_measurements": censored,
        "seeds": {"synthesis": args.seed, "observer": args.seed},
    }
    payload.update(_provenance(args))
    out = _ensure_out_dir(args.out_dir)
    _write_json(os.path.join(out, "experiment.json"), payload)
    return 0


def _add_model_flags(p, require_image=True):
    p.add_argument("--model", required=True, help="model type (mse, ln, lg, lgg, onoff, cnn)")
    p.add_argument("--params", default=None, help="params JSON (required for parametric models)")
    if require_image:
        p.add_argument("--image", required=True, help="input image (PGM or RAW-F32)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="distortlab",
        description="Extremal distortion synthesis and perceptual-model evaluation",
    )
    parser.add_argument("--version", action="version", version=f"distortlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize extremal eigen-distortions")
    _add_model_flags(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iters", type=int, default=10000)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("oracle", help="dense finite-difference eigenpairs (small images)")
    _add_model_flags(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("render", help="render distorted images")
    p.add_argument("--image", required=True)
    p.add_argument("--vector", default=None, help="RAW-F32 distortion direction")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--name", default="render", help="output basename for single mode")
    p.add_argument("--synth-dir", default=None, help="gallery mode: synth output directory")
    p.add_argument("--alpha-max", type=float, default=4.0)
    p.add_argument("--alpha-min", type=float, default=30.0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("train", help="fit model parameters to a rating manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--init-params", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--holdout", type=float, default=0.2)
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="Pearson correlation on a manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--params", default=None)
    p.add_argument("--manifest", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("simulate", help="simulated threshold experiment incl. D")
    _add_model_flags(p)
    p.add_argument("--observer-model", default=None, help="reference observer model type")
    p.add_argument("--observer-params", default=None)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma", type=float, default=0.01)
    p.add_argument("--trials", type=int, default=120)
    p.add_argument("--subjects", type=int, default=1)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iters", type=int, default=10000)
    p.set_defaults(func=cmd_simulate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad flags, which matches the input-error code
        return int(exc.code or 0)
    try:
        return args.func(args)
    except DistortLabError as exc:
        print(f"error:{exc.category}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error:input: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
