"""Command-line entry point.

Subcommands:

* ``attack`` - optimize a viewpoint distribution against a classifier and
  write the trace, a resumable checkpoint, and a metrics report.
* ``bench``  - run one of the benchmark experiments (lambda sweep,
  fluctuation curves, transferability matrix, random-search comparison,
  dataset emission).
* ``render`` - render a single viewpoint to an image file.

Every run is configured by one JSON document validated against the schema
below; unknown keys anywhere in the document are rejected with a message
listing them.  Any leaf can be overridden by an environment variable named
``ADVVIEW_<SECTION>__<KEY>`` (double underscore separates nesting levels,
e.g. ``ADVVIEW_ATTACK__K=10``); values are parsed as JSON when possible.
Artifacts are pure functions of (config, seed): rerunning a command with
the same inputs reproduces every output byte, at any ``--jobs`` value.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import traceback

import numpy as np

from .attack import AdamHyper, AttackConfig, optimal_viewpoint, run_attack
from .classifiers import ExternalProcessClassifier, LinearPixelClassifier, TemplateBankClassifier
from .errors import ConfigError
from .field import SceneSpec, build_primitive_scene, load_scene, PRIMITIVE_KINDS
from .geometry import Viewpoint, ViewpointBounds
from .harness import (
    attack_report,
    emit_dataset,
    fluctuation_curve,
    lambda_sweep,
    random_search_baseline,
    transferability_matrix,
)
from .rendering import RenderConfig, derive_seed, render
from .scenarios import bounds_preset, demo_scenes, preset_names, wedge_scenario

ENV_PREFIX = "ADVVIEW_"

EXPERIMENTS = ("lambda-sweep", "fluctuation", "transferability", "random-vs-nes", "emit-dataset")

# schema: section -> key -> (default, description); None defaults mean
# "unset" and are resolved per subcommand
SCHEMA: dict[str, dict[str, tuple[object, str]]] = {
    "": {
        "seed": (0, "master seed; every artifact is a pure function of config+seed"),
        "preset": (
            "toy-wedge",
            "scenario preset: 'toy-wedge' (built-in scene+classifier) or a bounds "
            f"preset from {preset_names()} combined with the scene/classifier sections",
        ),
    },
    "scene": {
        "source": (None, "'primitive' to build a shape, 'file' to load a .vox scene"),
        "kind": ("asymmetric_marker", f"primitive kind, one of {list(PRIMITIVE_KINDS)}"),
        "path": (None, "scene file path when source is 'file'"),
        "resolution": (40, "voxel grid resolution per axis for primitives"),
        "label": (0, "ground-truth class index for primitive scenes"),
        "name": ("scene", "scene identifier used in reports and file names"),
    },
    "classifier": {
        "kind": (
            "pose-templates",
            "'pose-templates' (template bank rendered from template_yaws), "
            "'linear-random' (seeded random affine logits), or 'external' "
            "(subprocess oracle speaking the length-prefixed PNG/logits protocol)",
        ),
        "logit_scale": (600.0, "template-bank sharpness: logits = -scale * MSE"),
        "template_yaws": ([0.0, -90.0], "yaw angles whose renders become class templates"),
        "command": (None, "oracle argv list for kind 'external'"),
        "class_count": (2, "number of classes for 'linear-random'/'external'"),
        "input_width": (None, "classifier input width (defaults to render width)"),
        "input_height": (None, "classifier input height (defaults to render height)"),
        "timeout": (10.0, "oracle reply timeout in seconds"),
    },
    "render": {
        "width": (64, "image width in pixels"),
        "height": (64, "image height in pixels"),
        "samples_per_ray": (32, "quadrature points per ray (>= 2)"),
        "stratified": (True, "jitter quadrature points within their bins"),
        "fov_deg": (60.0, "full vertical field of view in degrees"),
        "t_near": (2.0, "near integration bound along each ray"),
        "t_far": (6.0, "far integration bound along each ray"),
        "background": ([1.0, 1.0, 1.0], "background RGB composited behind residual transmittance"),
        "init_center": ([0.0, 4.0, 0.0], "camera center before the viewpoint transform"),
    },
    "attack": {
        "lambda": (0.01, "entropy regularization weight (>= 0)"),
        "k": (50, "Monte Carlo samples (classifier queries) per iteration"),
        "iterations": (100, "optimizer iterations"),
        "lr": (0.01, "Adam learning rate"),
        "beta1": (0.9, "Adam first-moment decay"),
        "beta2": (0.999, "Adam second-moment decay"),
        "adam_eps": (1e-8, "Adam denominator epsilon"),
        "baseline": (True, "subtract the batch-mean loss baseline"),
        "sigma_floor": (1e-3, "lower clamp for sigma after each step"),
        "mu0": (0.0, "initial latent mean (per component)"),
        "sigma0": (0.5, "initial latent scale (per component)"),
    },
    "bench": {
        "experiment": (None, f"one of {list(EXPERIMENTS)}"),
        "lambdas": ([0.0, 0.01, 0.1, 1.0], "entropy weights for the lambda sweep"),
        "seeds": ([0, 1, 2], "attack seeds for sweep/fluctuation experiments"),
        "budget": (5000, "query budget for the random-search comparison"),
        "n_eval": (100, "posterior samples per run for rate_dist / parameter std"),
        "r_values": (list(range(1, 11)), "fluctuation percentages"),
        "n_per_point": (20, "perturbed viewpoints per fluctuation percentage"),
        "n_per_scene": (100, "images per scene for dataset emission"),
    },
}


def default_config() -> dict:
    cfg: dict = {}
    for section, keys in SCHEMA.items():
        target = cfg if section == "" else cfg.setdefault(section, {})
        for key, (default, _) in keys.items():
            target[key] = default
    return cfg


def validate_config(doc: dict) -> dict:
    """Merge a user document over the defaults, rejecting unknown keys."""
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    cfg = default_config()
    unknown: list[str] = []
    for key, value in doc.items():
        if key in SCHEMA[""]:
            cfg[key] = value
        elif key in SCHEMA and isinstance(value, dict):
            for sub, subval in value.items():
                if sub in SCHEMA[key]:
                    cfg[key][sub] = subval
                else:
                    unknown.append(f"{key}.{sub}")
        elif key in SCHEMA:
            raise ConfigError(f"section {key!r} must be a JSON object")
        else:
            unknown.append(key)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return cfg


def apply_env_overrides(cfg: dict, environ=os.environ) -> dict:
    for name, raw in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        path = name[len(ENV_PREFIX):].lower().split("__")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        if len(path) == 1 and path[0] in SCHEMA[""]:
            cfg[path[0]] = value
        elif len(path) == 2 and path[0] in SCHEMA and path[1] in SCHEMA[path[0]]:
            cfg[path[0]][path[1]] = value
        else:
            raise ConfigError(f"environment override {name} does not name a config key")
    return cfg


def load_config(path: str | None, preset_override: str | None = None) -> dict:
    doc = {}
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    cfg = apply_env_overrides(validate_config(doc))
    if preset_override is not None:
        cfg["preset"] = preset_override
    return cfg


def schema_epilog() -> str:
    lines = ["config keys (JSON document; every key optional):"]
    for section, keys in SCHEMA.items():
        for key, (default, desc) in keys.items():
            path = key if section == "" else f"{section}.{key}"
            lines.append(f"  {path:<28} {desc} (default: {json.dumps(default)})")
    lines.append("")
    lines.append(
        f"environment overrides: {ENV_PREFIX}<SECTION>__<KEY> (e.g. "
        f"{ENV_PREFIX}ATTACK__K=10); top-level keys use {ENV_PREFIX}<KEY>."
    )
    return "\n".join(lines)


def _render_config(cfg: dict, seed: int) -> RenderConfig:
    r = cfg["render"]
    return RenderConfig(
        samples_per_ray=int(r["samples_per_ray"]),
        stratified=bool(r["stratified"]),
        background=tuple(r["background"]),
        width=int(r["width"]),
        height=int(r["height"]),
        fov_deg=float(r["fov_deg"]),
        t_near=float(r["t_near"]),
        t_far=float(r["t_far"]),
        rng_seed=seed,
        init_center=tuple(r["init_center"]),
    )


def _attack_config(cfg: dict, bounds: ViewpointBounds, frozen: dict[int, float], seed: int) -> AttackConfig:
    a = cfg["attack"]
    return AttackConfig(
        bounds=bounds,
        lam=float(a["lambda"]),
        k=int(a["k"]),
        iterations=int(a["iterations"]),
        adam=AdamHyper(float(a["lr"]), float(a["beta1"]), float(a["beta2"]), float(a["adam_eps"])),
        seed=seed,
        baseline_on=bool(a["baseline"]),
        sigma_floor=float(a["sigma_floor"]),
        mu0=float(a["mu0"]),
        sigma0=float(a["sigma0"]),
        frozen=frozen,
    )


def _build_scene(cfg: dict) -> SceneSpec:
    s = cfg["scene"]
    if s["source"] == "file":
        if not s["path"] or not os.path.exists(str(s["path"])):
            raise ConfigError(f"scene file not found: {s['path']}")
        return load_scene(s["path"])
    if s["source"] == "primitive":
        res = int(s["resolution"])
        field = build_primitive_scene(str(s["kind"]), (res, res, res))
        return SceneSpec(field=field, label=int(s["label"]), name=str(s["name"]))
    raise ConfigError(f"scene.source must be 'primitive' or 'file', got {s['source']!r}")


def _build_classifier(cfg: dict, scene: SceneSpec, render_cfg: RenderConfig, bounds, seed: int):
    c = cfg["classifier"]
    kind = str(c["kind"])
    if kind == "pose-templates":
        templates = [
            render(scene.field, Viewpoint(float(yaw), 0.0, 0.0, 0.0, 0.0, 0.0),
                   dataclasses.replace(render_cfg, rng_seed=derive_seed(seed, 0x54, i)))
            for i, yaw in enumerate(c["template_yaws"])
        ]
        if len(templates) < 2:
            raise ConfigError("classifier.template_yaws needs at least 2 entries")
        return TemplateBankClassifier.from_images(templates, logit_scale=float(c["logit_scale"]))
    if kind == "linear-random":
        w = int(c["input_width"] or render_cfg.width)
        h = int(c["input_height"] or render_cfg.height)
        n_classes = int(c["class_count"])
        rng = np.random.Generator(np.random.PCG64(derive_seed(seed, 0x4C52)))
        weights = rng.normal(scale=1.0 / (w * h * 3), size=(n_classes, w * h * 3))
        return LinearPixelClassifier(weights, np.zeros(n_classes), (w, h))
    if kind == "external":
        if not c["command"]:
            raise ConfigError("classifier.command is required for kind 'external'")
        w = int(c["input_width"] or render_cfg.width)
        h = int(c["input_height"] or render_cfg.height)
        return ExternalProcessClassifier(
            [str(x) for x in c["command"]], int(c["class_count"]), (w, h),
            timeout=float(c["timeout"]),
        )
    raise ConfigError(
        f"classifier.kind must be 'pose-templates', 'linear-random' or 'external', got {kind!r}"
    )


def _resolve_scenario(cfg: dict, seed: int):
    """Returns (scene, classifier, bounds, frozen, render_cfg)."""
    preset = str(cfg["preset"])
    if preset == "toy-wedge" and cfg["scene"]["source"] is None:
        toy = wedge_scenario()
        return toy.scene, toy.classifier, toy.bounds, toy.frozen, toy.render_cfg
    if preset == "toy-wedge":
        bp = bounds_preset("paper-full")
    else:
        bp = bounds_preset(preset)
    render_cfg = _render_config(cfg, seed)
    scene = _build_scene(cfg)
    classifier = _build_classifier(cfg, scene, render_cfg, bp.bounds, seed)
    return scene, classifier, bp.bounds, dict(bp.frozen), render_cfg


def _write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_csv(path, fieldnames: list[str], rows: list[dict]) -> None:
    # repr-formatted floats keep the files byte-reproducible
    def fmt(x):
        if isinstance(x, float):
            return repr(x)
        if isinstance(x, (list, tuple)):
            return "[" + " ".join(fmt(v) for v in x) + "]"
        return str(x)

    lines = [",".join(fieldnames)]
    for row in rows:
        lines.append(",".join(fmt(row[k]) for k in fieldnames))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def cmd_attack(args) -> int:
    cfg = load_config(args.config, args.preset)
    seed = args.seed if args.seed is not None else int(cfg["seed"])
    scene, classifier, bounds, frozen, render_cfg = _resolve_scenario(cfg, seed)
    attack_cfg = _attack_config(cfg, bounds, frozen, seed)
    out = args.out_dir
    os.makedirs(out, exist_ok=True)
    params, trace = run_attack(
        scene, classifier, render_cfg, attack_cfg,
        checkpoint_path=os.path.join(out, "checkpoint.json"),
    )
    report, _ = attack_report(scene, classifier, render_cfg, attack_cfg, n_eval=int(cfg["bench"]["n_eval"]))
    v_star = optimal_viewpoint(params, bounds, frozen)
    _write_json(os.path.join(out, "trace.json"), trace.to_dict())
    _write_json(
        os.path.join(out, "report.json"),
        {
            "config_echo": {
                "preset": cfg["preset"],
                "seed": seed,
                "lambda": attack_cfg.lam,
                "k": attack_cfg.k,
                "iterations": attack_cfg.iterations,
            },
            "report": report.to_dict(),
            "optimal_viewpoint": v_star.as_array().tolist(),
        },
    )
    print(f"attack finished: rate_dist={report.rate_dist} rate_opt={report.rate_opt} "
          f"queries={trace.queries}")
    return 0


def cmd_bench(args) -> int:
    cfg = load_config(args.config, args.preset)
    seed = args.seed if args.seed is not None else int(cfg["seed"])
    experiment = args.experiment or cfg["bench"]["experiment"]
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"bench experiment must be one of {list(EXPERIMENTS)}, got {experiment!r}")
    scene, classifier, bounds, frozen, render_cfg = _resolve_scenario(cfg, seed)
    attack_cfg = _attack_config(cfg, bounds, frozen, seed)
    bench = cfg["bench"]
    out = args.out_dir
    os.makedirs(out, exist_ok=True)

    if experiment == "lambda-sweep":
        rows = lambda_sweep(
            scene, classifier,
            [float(x) for x in bench["lambdas"]],
            [int(x) for x in bench["seeds"]],
            base_cfg=attack_cfg, render_cfg=render_cfg,
            n_eval=int(bench["n_eval"]), jobs=args.jobs,
        )
        _write_csv(
            os.path.join(out, "lambda_sweep.csv"),
            ["lambda", "seed", "rate_dist", "rate_opt", "param_std", "queries"],
            rows,
        )
        _write_json(os.path.join(out, "lambda_sweep.json"), rows)
    elif experiment == "fluctuation":
        rows = []
        reg = float(cfg["attack"]["lambda"])
        for lam in (0.0, reg if reg > 0 else 0.01):
            for s in bench["seeds"]:
                run_cfg = dataclasses.replace(attack_cfg, lam=lam, seed=int(s))
                params, _ = run_attack(scene, classifier, render_cfg, run_cfg)
                v_star = optimal_viewpoint(params, bounds, frozen)
                curve = fluctuation_curve(
                    v_star, bounds, scene, classifier, render_cfg=render_cfg,
                    r_values=[int(r) for r in bench["r_values"]],
                    n=int(bench["n_per_point"]), seed=derive_seed(seed, int(s)),
                )
                for r, rate in curve.items():
                    rows.append({"lambda": lam, "seed": int(s), "r_percent": r, "success": rate})
        _write_csv(os.path.join(out, "fluctuation.csv"),
                   ["lambda", "seed", "r_percent", "success"], rows)
        _write_json(os.path.join(out, "fluctuation.json"), rows)
    elif experiment == "transferability":
        # held-out targets: template banks built from shifted canonical poses
        targets = {}
        for name, yaws in (("bank-a", (0.0, -90.0)), ("bank-b", (0.0, -60.0, 90.0)),
                           ("bank-c", (20.0, -110.0))):
            templates = [
                render(scene.field, Viewpoint(yaw, 0.0, 0.0, 0.0, 0.0, 0.0),
                       dataclasses.replace(render_cfg, rng_seed=derive_seed(seed, 0x74, i)))
                for i, yaw in enumerate(yaws)
            ]
            targets[name] = TemplateBankClassifier.from_images(
                templates, logit_scale=float(cfg["classifier"]["logit_scale"]))
        params, _ = run_attack(scene, classifier, render_cfg, attack_cfg)
        matrix = transferability_matrix(
            {"source": {scene.name: params}}, targets, [scene],
            int(bench["n_eval"]), seed, bounds=bounds, render_cfg=render_cfg, frozen=frozen,
        )
        rows = [
            {"source": src, "target": tgt, "rate": rate}
            for src, row in sorted(matrix.items())
            for tgt, rate in sorted(row.items())
        ]
        _write_csv(os.path.join(out, "transferability.csv"), ["source", "target", "rate"], rows)
        _write_json(os.path.join(out, "transferability.json"), matrix)
    elif experiment == "random-vs-nes":
        budget = int(bench["budget"])
        iters = max(1, budget // attack_cfg.k)
        run_cfg = dataclasses.replace(attack_cfg, iterations=iters)
        report, _ = attack_report(scene, classifier, render_cfg, run_cfg,
                                  n_eval=int(bench["n_eval"]))
        baseline = random_search_baseline(
            scene, classifier, bounds, budget, derive_seed(seed, 0x5253),
            render_cfg=render_cfg, frozen=frozen,
        )
        rows = [
            {"method": "random-search", "rate_dist": baseline.rate_dist,
             "rate_opt": "-", "queries": baseline.queries},
            {"method": "nes-attack", "rate_dist": report.rate_dist,
             "rate_opt": str(bool(report.rate_opt)), "queries": report.queries},
        ]
        _write_csv(os.path.join(out, "random_vs_nes.csv"),
                   ["method", "rate_dist", "rate_opt", "queries"], rows)
        _write_json(os.path.join(out, "random_vs_nes.json"), rows)
    elif experiment == "emit-dataset":
        scenes = demo_scenes(int(cfg["scene"]["resolution"]))
        pairs = []
        for i, sc in enumerate(scenes):
            templates = [
                render(sc.field, Viewpoint(yaw, 0.0, 0.0, 0.0, 0.0, 0.0),
                       dataclasses.replace(render_cfg, rng_seed=derive_seed(seed, 0x65, i, j)))
                for j, yaw in enumerate((0.0, -90.0))
            ]
            clf = TemplateBankClassifier.from_images(
                templates, logit_scale=float(cfg["classifier"]["logit_scale"]))
            sc = dataclasses.replace(sc, label=0)
            run_cfg = dataclasses.replace(attack_cfg, seed=derive_seed(seed, i))
            params, _ = run_attack(sc, clf, render_cfg, run_cfg)
            pairs.append((sc, params))
        manifest = emit_dataset(
            pairs, out, bounds=bounds, render_cfg=render_cfg,
            n_per_scene=int(bench["n_per_scene"]), seed=seed, frozen=frozen,
        )
        print(f"dataset manifest: {manifest}")
    return 0


def cmd_render(args) -> int:
    cfg = load_config(args.config, args.preset)
    seed = args.seed if args.seed is not None else int(cfg["seed"])
    scene, _, bounds, frozen, render_cfg = _resolve_scenario(cfg, seed)
    if args.viewpoint is not None:
        parts = args.viewpoint.split(",")
        if len(parts) != 6:
            raise ConfigError("--viewpoint wants six comma-separated numbers")
        try:
            values = [float(p) for p in parts]
        except ValueError as exc:
            raise ConfigError(f"bad --viewpoint: {exc}") from exc
    else:
        values = bounds.b.tolist()
    arr = np.asarray(values)
    if not bounds.contains(arr.reshape(1, 6)):
        raise ConfigError(f"viewpoint {values} lies outside the preset bounds box")
    v = Viewpoint.from_array(arr, bounds)
    img = render(scene.field, v, render_cfg, bounds=bounds)
    img.save(args.out)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="advview",
        description="Adversarial viewpoint search over a volumetric renderer.",
        epilog=schema_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="JSON run configuration (see schema below)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out-dir", default="out", help="directory for artifacts")
        p.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                       help="parallel workers for independent cells (results are jobs-independent)")
        p.add_argument("--preset", default=None,
                       help=f"scenario preset override: toy-wedge or one of {preset_names()}")

    p_attack = sub.add_parser("attack", help="optimize a viewpoint distribution",
                              epilog=schema_epilog(),
                              formatter_class=argparse.RawDescriptionHelpFormatter)
    common(p_attack)
    p_attack.set_defaults(func=cmd_attack)

    p_bench = sub.add_parser("bench", help="run a benchmark experiment",
                             epilog=schema_epilog(),
                             formatter_class=argparse.RawDescriptionHelpFormatter)
    common(p_bench)
    p_bench.add_argument("--experiment", choices=EXPERIMENTS, default=None)
    p_bench.set_defaults(func=cmd_bench)

    p_render = sub.add_parser("render", help="render one viewpoint to an image",
                              epilog=schema_epilog(),
                              formatter_class=argparse.RawDescriptionHelpFormatter)
    common(p_render)
    p_render.add_argument("--viewpoint", default=None,
                          help="six comma-separated numbers (psi,theta,phi,dx,dy,dz)")
    p_render.add_argument("--out", default="render.png", help="output image (.png or .ppm)")
    p_render.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"runtime error: {exc}", file=sys.stderr)
        traceback.print_exc()
        return 3


if __name__ == "__main__":
    sys.exit(main())
