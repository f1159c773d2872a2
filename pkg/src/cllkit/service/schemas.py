"""Pydantic request/response models for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class ModelInfo(BaseModel):
    model: str
    vocab_size: int
    eos_id: int
    tokenizer_mode: str
    units: list[str]


class CompletionRequest(BaseModel):
    model: str = ""
    prompt: str
    max_tokens: int = Field(0, ge=0)
    temperature: float = Field(1.0, ge=0.0)
    logprobs: int = Field(5, ge=1)
    echo: bool = False
    seed: int = 0


class PositionLogprobs(BaseModel):
    token_id: int
    top_token_ids: list[int]
    top_logprobs: list[float]


class CompletionChoice(BaseModel):
    text: str
    token_ids: list[int]
    positions: list[PositionLogprobs]


class CompletionResponse(BaseModel):
    model: str
    vocab_size: int
    choices: list[CompletionChoice]


class ScoreRequest(BaseModel):
    question: str
    response: str
    clip_bound: float = Field(10.0, gt=0.0)
    alpha: float | None = 0.01
    gamma: float | None = None
    thresholds: list[float] = [-1.0, -3.0, -5.0]


class ScoreResponse(BaseModel):
    s_final: float
    s_clipped_final: float
    v_cumulative: float
    threshold: float
    verdict: str
    avg_phi: float
    frac_ge: dict[str, float]
    phi: list[float]


class FuseRequest(BaseModel):
    log_probs_imitator: list[float]
    log_probs_drafter: list[float]
    lam: float = Field(ge=0.0, le=1.0)


class FuseResponse(BaseModel):
    log_probs: list[float]


class WeightsRequest(BaseModel):
    log_probs: list[float]
    entropies: list[float]
    scheme: str = "idft"
    clip_bound: float = Field(10.0, gt=0.0)
    tau: float | None = None


class WeightsResponse(BaseModel):
    phi: list[float]
    phi_clipped: list[float]
    gamma: list[float]
    weight: list[float]
    loss: list[float]


class TraceStep(BaseModel):
    entropy_target: float
    normalized_entropy: float
    lam: float
    mode: str
    token: int


class DecodeRequest(BaseModel):
    question: str
    answer: str
    seed: int = 0
    beta: float = Field(10.0, ge=0.0)
    schedule: str = "linear"
    lambda_const: float | None = Field(None, ge=0.0, le=1.0)
    temperature: float = Field(1.0, ge=0.0)
    max_len: int | None = None
    include_trace: bool = False


class DecodeResponse(BaseModel):
    response: str
    token_ids: list[int]
    truncated: bool
    trace: list[TraceStep] | None = None


class CorpusItemIn(BaseModel):
    id: str
    question: str
    answer: str


class RealignedItemOut(BaseModel):
    id: str
    question: str
    response: str
    source: str
    verified: bool


class DroppedItemOut(BaseModel):
    id: str
    reason: str


class RealignRequest(BaseModel):
    items: list[CorpusItemIn]
    seed: int = 0
    beta: float = Field(10.0, ge=0.0)
    verifier: str = "boxed_exact"
    temperature: float = Field(1.0, ge=0.0)
    workers: int = Field(1, ge=1)


class RealignReportOut(BaseModel):
    total: int
    rollout: int
    hinted: int
    dropped: int
    failed: int
    per_source: dict


class RealignResponse(BaseModel):
    items: list[RealignedItemOut]
    dropped: list[DroppedItemOut]
    report: RealignReportOut


class HealthResponse(BaseModel):
    status: str
    model: str
    vocab_size: int
