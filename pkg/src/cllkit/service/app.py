"""HTTP service wrapping one loaded provider.

A single long-lived provider serves every request, so clients share the
loaded model across scoring, decoding, and realignment calls.  The
``/v1/completions`` route implements the same wire contract the remote
provider client consumes (echo mode returns per-position top-N log
probabilities; generation interleaves sampled tokens with their pre-sampling
distributions), which makes any running instance usable as a provider for
another one.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from fastapi import FastAPI, HTTPException

from ..decoding import HintedConfig, MixSchedule, decode, fuse_logprobs
from ..errors import CllkitError, InvalidArgument, TokenizationError
from ..pipeline import DatasetItem, VerifierSpec, realign, score_text
from ..providers import Provider, SamplerConfig, derive_rng, sample
from ..stats import (
    DiscriminantConfig,
    TokenDistribution,
    classify_sequence,
    clip_phi,
    extreme_token_report,
)
from ..weighting import gamma_of_phi, gradient_scale
from . import schemas


def _top_n(dist: TokenDistribution, n: int) -> tuple[list[int], list[float]]:
    lps = dist.log_probs
    ids = dist.token_ids if dist.token_ids is not None else np.arange(dist.vocab_size)
    order = np.lexsort((ids, -lps))[:n]
    return [int(ids[i]) for i in order], [float(lps[i]) for i in order]


def create_app(
    provider: Provider,
    model_name: str = "toy",
    hinted_config: HintedConfig | None = None,
) -> FastAPI:
    app = FastAPI(title="cllkit service")
    base_hinted = hinted_config or HintedConfig()
    tok = provider.tokenizer
    if tok is None:
        raise InvalidArgument("service provider needs a tokenizer")

    @app.get("/healthz", response_model=schemas.HealthResponse)
    def healthz():
        return schemas.HealthResponse(
            status="ok", model=model_name, vocab_size=provider.vocab_size
        )

    @app.get("/v1/model", response_model=schemas.ModelInfo)
    def model_info():
        return schemas.ModelInfo(
            model=model_name,
            vocab_size=provider.vocab_size,
            eos_id=provider.eos_id if provider.eos_id is not None else -1,
            tokenizer_mode=tok.mode,
            units=tok.units,
        )

    @app.post("/v1/completions", response_model=schemas.CompletionResponse)
    def completions(req: schemas.CompletionRequest):
        try:
            prompt_ids = tok.encode(req.prompt)
        except TokenizationError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        positions: list[schemas.PositionLogprobs] = []
        token_ids: list[int] = []
        if req.echo:
            for t in range(len(prompt_ids)):
                dist = provider.next_distribution(prompt_ids[:t])
                top_ids, top_lps = _top_n(dist, req.logprobs)
                positions.append(
                    schemas.PositionLogprobs(
                        token_id=prompt_ids[t], top_token_ids=top_ids, top_logprobs=top_lps
                    )
                )
            token_ids.extend(prompt_ids)
        generated: list[int] = []
        if req.max_tokens > 0:
            ctx = list(prompt_ids)
            rng = derive_rng(req.seed, "serve", req.prompt)
            sampler = SamplerConfig(temperature=req.temperature)
            for _ in range(req.max_tokens):
                dist = provider.next_distribution(ctx)
                top_ids, top_lps = _top_n(dist, req.logprobs)
                token = sample(dist, sampler, rng)
                positions.append(
                    schemas.PositionLogprobs(
                        token_id=token, top_token_ids=top_ids, top_logprobs=top_lps
                    )
                )
                generated.append(token)
                token_ids.append(token)
                if token == provider.eos_id:
                    break
                ctx.append(token)
        return schemas.CompletionResponse(
            model=model_name,
            vocab_size=provider.vocab_size,
            choices=[
                schemas.CompletionChoice(
                    text=tok.decode(generated), token_ids=token_ids, positions=positions
                )
            ],
        )

    @app.post("/score", response_model=schemas.ScoreResponse)
    def score(req: schemas.ScoreRequest):
        if (req.alpha is None) == (req.gamma is None):
            raise HTTPException(status_code=400, detail="set exactly one of alpha or gamma")
        try:
            records = score_text(provider, req.question, req.response, req.clip_bound)
            config = DiscriminantConfig(
                clip_bound=req.clip_bound,
                fixed_gamma=req.gamma,
                alpha=req.alpha,
                report_thresholds=tuple(req.thresholds),
            )
            seq = classify_sequence(records, config)
        except CllkitError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        rep = extreme_token_report(list(records), tuple(req.thresholds))
        return schemas.ScoreResponse(
            s_final=seq.s_final,
            s_clipped_final=seq.s_clipped_final,
            v_cumulative=seq.v_cumulative,
            threshold=seq.threshold,
            verdict=seq.verdict,
            avg_phi=rep.avg_phi,
            frac_ge={format(t, "g"): f for t, f in rep.fractions.items()},
            phi=[r.phi for r in records],
        )

    @app.post("/fuse", response_model=schemas.FuseResponse)
    def fuse(req: schemas.FuseRequest):
        if len(req.log_probs_imitator) != len(req.log_probs_drafter):
            raise HTTPException(status_code=400, detail="log-prob vectors must align")
        try:
            fused = fuse_logprobs(
                TokenDistribution.from_log_probs(req.log_probs_imitator),
                TokenDistribution.from_log_probs(req.log_probs_drafter),
                req.lam,
            )
        except CllkitError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return schemas.FuseResponse(log_probs=[float(x) for x in fused.log_probs])

    @app.post("/weights", response_model=schemas.WeightsResponse)
    def weights(req: schemas.WeightsRequest):
        if len(req.log_probs) != len(req.entropies):
            raise HTTPException(status_code=400, detail="log_probs and entropies must align")
        phis, clipped, gammas, ws, losses = [], [], [], [], []
        try:
            for lp, h in zip(req.log_probs, req.entropies):
                value = lp + h
                pc = clip_phi(value, req.clip_bound)
                w = gradient_scale(req.scheme, lp, pc, req.tau)
                phis.append(value)
                clipped.append(pc)
                gammas.append(gamma_of_phi(pc))
                ws.append(w)
                losses.append(0.0 if w == 0.0 else -w * lp)
        except CllkitError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return schemas.WeightsResponse(
            phi=phis, phi_clipped=clipped, gamma=gammas, weight=ws, loss=losses
        )

    def _hinted_for(req) -> HintedConfig:
        if req.lambda_const is not None:
            schedule = MixSchedule(mode="constant", value=req.lambda_const)
        else:
            schedule = dataclasses.replace(
                base_hinted.schedule, mode=req.schedule, beta=req.beta
            )
        return dataclasses.replace(
            base_hinted,
            schedule=schedule,
            max_len=req.max_len or base_hinted.max_len,
            sampler=SamplerConfig(temperature=req.temperature),
            analysis_sampler=SamplerConfig(temperature=req.temperature),
        )

    @app.post("/decode", response_model=schemas.DecodeResponse)
    def decode_endpoint(req: schemas.DecodeRequest):
        try:
            result = decode(req.question, req.answer, _hinted_for(req), provider, req.seed)
        except CllkitError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        trace = None
        if req.include_trace:
            trace = [
                schemas.TraceStep(
                    entropy_target=t.entropy_target,
                    normalized_entropy=t.normalized_entropy,
                    lam=t.lam,
                    mode=t.mode,
                    token=t.token,
                )
                for t in result.trace
            ]
        return schemas.DecodeResponse(
            response=result.text,
            token_ids=list(result.token_ids),
            truncated=result.truncated,
            trace=trace,
        )

    @app.post("/realign", response_model=schemas.RealignResponse)
    def realign_endpoint(req: schemas.RealignRequest):
        items = [
            DatasetItem(id=i.id, question=i.question, reference_answer=i.answer)
            for i in req.items
        ]
        config = dataclasses.replace(
            base_hinted,
            schedule=dataclasses.replace(base_hinted.schedule, beta=req.beta),
        )
        try:
            realigned, dropped, report = realign(
                items,
                provider,
                config,
                VerifierSpec(kind=req.verifier),
                SamplerConfig(temperature=req.temperature),
                seed=req.seed,
                workers=req.workers,
            )
        except CllkitError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return schemas.RealignResponse(
            items=[
                schemas.RealignedItemOut(
                    id=r.id,
                    question=r.question,
                    response=r.response,
                    source=r.source,
                    verified=r.verified,
                )
                for r in realigned
            ],
            dropped=[schemas.DroppedItemOut(id=d.id, reason=d.reason) for d in dropped],
            report=schemas.RealignReportOut(
                total=report.total,
                rollout=report.rollout,
                hinted=report.hinted,
                dropped=report.dropped,
                failed=report.failed,
                per_source=report.per_source,
            ),
        )

    return app
