"""Command-line entry point.

One binary with subcommands; configuration precedence is flags > config file
> built-in defaults, and --show-config prints the effective configuration of
any command without running it.  Exit codes: 0 success, 1 check or
verification failure, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from .decoding import HintedConfig, MixSchedule, decode
from .errors import CllkitError, InvalidArgument
from .pipeline import (
    DiscriminantConfig,
    VerifierSpec,
    idft_export_rows,
    read_corpus,
    read_realigned,
    realign,
    score_dataset,
    write_corpus,
    write_dropped_jsonl,
    write_histogram_csv,
    write_realigned_jsonl,
    write_scored_jsonl,
)
from .providers import SamplerConfig
from .specs import load_provider
from .theory import run_all
from .weighting import WeightConfig, write_weight_jsonl
from .worlds import build_arith_world

DEFAULTS: dict[str, dict] = {
    "score": {
        "corpus": None, "provider": None, "out": None, "report": None,
        "hist_dir": None, "alpha": 0.01, "gamma": None, "clip_bound": 10.0,
        "thresholds": "-1,-3,-5", "workers": 1,
    },
    "decode": {
        "question": None, "answer": None, "provider": None, "seed": 0,
        "beta": 10.0, "schedule": "linear", "lambda_const": None,
        "temperature": 1.0, "max_len": None, "trace": None, "out": None,
        "shadow_prompt_file": None,
    },
    "realign": {
        "corpus": None, "provider": None, "out": None, "report": None,
        "dropped": None, "seed": 0, "beta": 10.0, "verifier": "boxed_exact",
        "temperature": 1.0, "workers": 1, "rollouts": 1,
        "shadow_prompt_file": None,
    },
    "idft-weights": {
        "corpus": None, "provider": None, "out": None, "scheme": "idft",
        "tau": None, "clip_bound": 10.0, "workers": 1,
    },
    "validate-theory": {
        "out": None, "trials": 1000, "sequences": 2000, "seq_len": 64,
        "seed": 20240, "inject_fault": None,
    },
    "serve": {
        "provider": None, "host": "127.0.0.1", "port": 8000, "model_name": "toy",
    },
    "demo": {
        "out_dir": None, "items": 40, "solvable_fraction": 0.6, "seed": 7,
        "beta": 10.0,
    },
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cllkit")
    parser.add_argument("--config", help="JSON config file with per-command sections")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(cmd: str, *flags):
        p = sub.add_parser(cmd)
        p.add_argument("--config", default=argparse.SUPPRESS)
        p.add_argument("--show-config", action="store_true", default=argparse.SUPPRESS)
        for flag, kind in flags:
            name = "--" + flag.replace("_", "-")
            if kind is bool:
                p.add_argument(name, action="store_true", default=argparse.SUPPRESS)
            else:
                p.add_argument(name, type=kind, default=argparse.SUPPRESS)
        return p

    add("score", ("corpus", str), ("provider", str), ("out", str), ("report", str),
        ("hist_dir", str), ("alpha", float), ("gamma", float), ("clip_bound", float),
        ("thresholds", str), ("workers", int))
    add("decode", ("question", str), ("answer", str), ("provider", str), ("seed", int),
        ("beta", float), ("schedule", str), ("lambda_const", float),
        ("temperature", float), ("max_len", int), ("trace", str), ("out", str),
        ("shadow_prompt_file", str))
    add("realign", ("corpus", str), ("provider", str), ("out", str), ("report", str),
        ("dropped", str), ("seed", int), ("beta", float), ("verifier", str),
        ("temperature", float), ("workers", int), ("rollouts", int),
        ("shadow_prompt_file", str))
    add("idft-weights", ("corpus", str), ("provider", str), ("out", str),
        ("scheme", str), ("tau", float), ("clip_bound", float), ("workers", int))
    add("validate-theory", ("out", str), ("trials", int), ("sequences", int),
        ("seq_len", int), ("seed", int), ("inject_fault", str))
    add("serve", ("provider", str), ("host", str), ("port", int), ("model_name", str))
    add("demo", ("out_dir", str), ("items", int), ("solvable_fraction", float),
        ("seed", int), ("beta", float))
    return parser


def _effective_config(args: argparse.Namespace) -> dict:
    cmd = args.command
    cfg = dict(DEFAULTS[cmd])
    config_path = getattr(args, "config", None)
    if config_path:
        with open(config_path, encoding="utf-8") as fh:
            file_cfg = json.load(fh)
        section = file_cfg.get(cmd, file_cfg)
        for key, value in section.items():
            key = key.replace("-", "_")
            if key in cfg:
                cfg[key] = value
    for key, value in vars(args).items():
        if key in cfg:
            cfg[key] = value
    return cfg


def _require(cfg: dict, *keys: str) -> None:
    for key in keys:
        if cfg.get(key) is None:
            raise InvalidArgument(f"missing required option --{key.replace('_', '-')}")


def _hinted_from(cfg: dict, base: HintedConfig | None) -> HintedConfig:
    config = base or HintedConfig()
    if cfg.get("lambda_const") is not None:
        schedule = MixSchedule(mode="constant", value=cfg["lambda_const"])
    else:
        schedule = dataclasses.replace(
            config.schedule, mode=cfg.get("schedule", "linear"), beta=cfg["beta"]
        )
    sampler = SamplerConfig(temperature=cfg.get("temperature", 1.0))
    shadow_prompt = config.shadow_prompt
    if cfg.get("shadow_prompt_file"):
        with open(cfg["shadow_prompt_file"], encoding="utf-8") as fh:
            shadow_prompt = fh.read()
    return dataclasses.replace(
        config,
        schedule=schedule,
        shadow_prompt=shadow_prompt,
        max_len=cfg.get("max_len") or config.max_len,
        sampler=sampler,
        analysis_sampler=sampler,
    )


def _discriminant_from(cfg: dict) -> DiscriminantConfig:
    thresholds = tuple(float(x) for x in str(cfg["thresholds"]).split(","))
    gamma = cfg.get("gamma")
    alpha = None if gamma is not None else cfg.get("alpha", 0.01)
    return DiscriminantConfig(
        clip_bound=cfg["clip_bound"],
        fixed_gamma=gamma,
        alpha=alpha,
        report_thresholds=thresholds,
    )


def cmd_score(cfg: dict) -> int:
    _require(cfg, "corpus", "provider", "out")
    items = read_corpus(cfg["corpus"])
    loaded = load_provider(cfg["provider"])
    config = _discriminant_from(cfg)
    scored, report = score_dataset(items, loaded.provider, config, workers=cfg["workers"])
    with open(cfg["out"], "w", encoding="utf-8") as fh:
        write_scored_jsonl(fh, scored, config)
    if cfg.get("report"):
        with open(cfg["report"], "w", encoding="utf-8") as fh:
            fh.write(json.dumps(report.__dict__, indent=2, sort_keys=True))
            fh.write("\n")
    if cfg.get("hist_dir"):
        os.makedirs(cfg["hist_dir"], exist_ok=True)
        for name, rows in (("s_clipped", report.s_histogram), ("phi", report.phi_histogram)):
            with open(os.path.join(cfg["hist_dir"], f"{name}_hist.csv"), "w") as fh:
                write_histogram_csv(fh, rows)
    return 0


def cmd_decode(cfg: dict) -> int:
    _require(cfg, "question", "answer", "provider")
    loaded = load_provider(cfg["provider"])
    config = _hinted_from(cfg, loaded.hinted_config)
    result = decode(cfg["question"], cfg["answer"], config, loaded.provider, seed=cfg["seed"])
    if cfg.get("trace"):
        line = {
            "question": cfg["question"],
            "entropy": [t.entropy_target for t in result.trace],
            "normalized_entropy": [t.normalized_entropy for t in result.trace],
            "lambda": [t.lam for t in result.trace],
            "mode": [t.mode for t in result.trace],
            "token": [t.token for t in result.trace],
        }
        with open(cfg["trace"], "w", encoding="utf-8") as fh:
            fh.write(json.dumps(line))
            fh.write("\n")
    text = result.text
    if cfg.get("out"):
        with open(cfg["out"], "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


def cmd_realign(cfg: dict) -> int:
    _require(cfg, "corpus", "provider", "out")
    items = read_corpus(cfg["corpus"])
    loaded = load_provider(cfg["provider"])
    config = _hinted_from(cfg, loaded.hinted_config)
    realigned, dropped, report = realign(
        items,
        loaded.provider,
        config,
        VerifierSpec(kind=cfg["verifier"]),
        SamplerConfig(temperature=cfg["temperature"]),
        seed=cfg["seed"],
        workers=cfg["workers"],
        rollouts=cfg["rollouts"],
    )
    with open(cfg["out"], "w", encoding="utf-8") as fh:
        write_realigned_jsonl(fh, realigned)
    if cfg.get("dropped"):
        with open(cfg["dropped"], "w", encoding="utf-8") as fh:
            write_dropped_jsonl(fh, dropped)
    if cfg.get("report"):
        with open(cfg["report"], "w", encoding="utf-8") as fh:
            fh.write(json.dumps(report.__dict__, indent=2, sort_keys=True))
            fh.write("\n")
    return 0


def cmd_idft_weights(cfg: dict) -> int:
    _require(cfg, "corpus", "provider", "out")
    realigned = read_realigned(cfg["corpus"])
    loaded = load_provider(cfg["provider"])
    weight_config = WeightConfig(
        scheme=cfg["scheme"].replace("-", "_"),
        clip_bound=cfg["clip_bound"],
        tau=cfg.get("tau"),
    )
    rows = idft_export_rows(realigned, loaded.provider, weight_config, workers=cfg["workers"])
    with open(cfg["out"], "w", encoding="utf-8") as fh:
        write_weight_jsonl(fh, rows)
    return 0


def cmd_validate_theory(cfg: dict) -> int:
    report = run_all(
        trials=cfg["trials"],
        sequences=cfg["sequences"],
        seq_len=cfg["seq_len"],
        seed=cfg["seed"],
        inject_fault=cfg.get("inject_fault"),
    )
    payload = json.dumps(report, indent=2, sort_keys=True)
    if cfg.get("out"):
        with open(cfg["out"], "w", encoding="utf-8") as fh:
            fh.write(payload)
            fh.write("\n")
    print(payload)
    return 0 if report["all_passed"] else 1


def cmd_serve(cfg: dict) -> int:
    import uvicorn

    from .service import create_app

    _require(cfg, "provider")
    loaded = load_provider(cfg["provider"])
    app = create_app(
        loaded.provider, model_name=cfg["model_name"], hinted_config=loaded.hinted_config
    )
    uvicorn.run(app, host=cfg["host"], port=cfg["port"])
    return 0


def cmd_demo(cfg: dict) -> int:
    _require(cfg, "out_dir")
    world = build_arith_world(
        n_items=cfg["items"],
        solvable_fraction=cfg["solvable_fraction"],
        seed=cfg["seed"],
        beta=cfg["beta"],
    )
    os.makedirs(cfg["out_dir"], exist_ok=True)
    corpus_path = os.path.join(cfg["out_dir"], "corpus.jsonl")
    spec_path = os.path.join(cfg["out_dir"], "provider.json")
    with open(corpus_path, "w", encoding="utf-8") as fh:
        write_corpus(world.items, fh)
    with open(spec_path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "kind": "arith_demo",
                "items": cfg["items"],
                "solvable_fraction": cfg["solvable_fraction"],
                "seed": cfg["seed"],
                "beta": cfg["beta"],
            },
            fh,
            indent=2,
        )
        fh.write("\n")
    print(f"wrote {corpus_path} and {spec_path}")
    return 0


_COMMANDS = {
    "score": cmd_score,
    "decode": cmd_decode,
    "realign": cmd_realign,
    "idft-weights": cmd_idft_weights,
    "validate-theory": cmd_validate_theory,
    "serve": cmd_serve,
    "demo": cmd_demo,
}


_DASH_VALUE_FLAGS = {"--thresholds", "--tau", "--gamma"}


def _merge_dash_values(argv: list[str]) -> list[str]:
    """Join flags whose values legitimately start with '-' (negative numbers,
    threshold lists) into --flag=value form so argparse accepts them."""
    out: list[str] = []
    i = 0
    while i < len(argv):
        tok = argv[i]
        if tok in _DASH_VALUE_FLAGS and i + 1 < len(argv) and argv[i + 1].startswith("-"):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
        else:
            out.append(tok)
            i += 1
    return out


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    if argv is None:
        argv = sys.argv[1:]
    args = parser.parse_args(_merge_dash_values(list(argv)))
    try:
        cfg = _effective_config(args)
        if getattr(args, "show_config", False):
            print(json.dumps({args.command: cfg}, indent=2, sort_keys=True))
            return 0
        return _COMMANDS[args.command](cfg)
    except (OSError, json.JSONDecodeError, InvalidArgument) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CllkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
