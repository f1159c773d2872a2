"""Provider specification files: small JSON documents naming a provider kind
and its parameters, loadable by the CLI and the service."""

from __future__ import annotations

import json
from dataclasses import dataclass

import httpx

from .decoding import HintedConfig
from .errors import InvalidArgument, ProtocolError
from .providers import (
    CharTokenizer,
    Provider,
    RemoteProvider,
    TableProvider,
    WhitespaceTokenizer,
    ngram_train,
    ngram_train_text,
)
from .stats import TokenDistribution
from .worlds import ArithWorld, build_arith_world


@dataclass(frozen=True)
class LoadedProvider:
    provider: Provider
    hinted_config: HintedConfig | None = None
    world: ArithWorld | None = None


def load_provider_spec(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def build_provider(spec: dict, client: httpx.Client | None = None) -> LoadedProvider:
    kind = spec.get("kind")
    if kind == "ngram":
        with open(spec["corpus_path"], encoding="utf-8") as fh:
            lines = [line.rstrip("\n") for line in fh if line.strip()]
        if spec.get("format", "text") == "token_ids":
            sequences = [[int(tok) for tok in line.split()] for line in lines]
            provider = ngram_train(
                sequences,
                order=int(spec.get("order", 2)),
                smoothing_lambda=float(spec.get("smoothing_lambda", 1.0)),
                vocab_size=int(spec["vocab_size"]),
                eos_id=spec.get("eos_id"),
            )
        else:
            provider = ngram_train_text(
                lines,
                order=int(spec.get("order", 2)),
                smoothing_lambda=float(spec.get("smoothing_lambda", 1.0)),
                mode=spec.get("mode", "char"),
            )
        return LoadedProvider(provider=provider)
    if kind == "arith_demo":
        world = build_arith_world(
            n_items=int(spec.get("items", 40)),
            solvable_fraction=float(spec.get("solvable_fraction", 0.6)),
            seed=int(spec.get("seed", 7)),
            beta=float(spec.get("beta", 10.0)),
        )
        return LoadedProvider(provider=world.provider, hinted_config=world.config, world=world)
    if kind == "table":
        vocab_size = int(spec["vocab_size"])
        default = TokenDistribution.from_probs(spec["default_probs"])
        rules = [
            (rule["suffix"], TokenDistribution.from_probs(rule["probs"]))
            for rule in spec.get("rules", [])
        ]
        return LoadedProvider(
            provider=TableProvider(
                vocab_size=vocab_size,
                default=default,
                rules=rules,
                eos_id=spec.get("eos_id"),
            )
        )
    if kind == "remote":
        base = spec["base_url"].rstrip("/")
        http = client or httpx.Client(timeout=float(spec.get("timeout_ms", 10_000)) / 1000.0)
        try:
            info = http.get(base + "/v1/model").json()
            mode = info["tokenizer_mode"]
            units = info["units"]
        except (httpx.HTTPError, KeyError, ValueError) as exc:
            raise ProtocolError(f"could not fetch model info from {base}: {exc}") from exc
        tokenizer = CharTokenizer(units) if mode == "char" else WhitespaceTokenizer(units)
        provider = RemoteProvider(
            endpoint_url=base + "/v1/completions",
            model_name=spec.get("model_name", info.get("model", "")),
            top_logprob_count=int(spec.get("top_logprob_count", 5)),
            tokenizer=tokenizer,
            timeout_ms=int(spec.get("timeout_ms", 10_000)),
            api_key_env_var=spec.get("api_key_env_var"),
            client=client,
        )
        return LoadedProvider(provider=provider)
    raise InvalidArgument(f"unknown provider kind {kind!r}")


def load_provider(path: str, client: httpx.Client | None = None) -> LoadedProvider:
    return build_provider(load_provider_spec(path), client=client)
