"""Request/response bodies for the HTTP API. Field names here are the wire
contract; api-schema.json is generated from these models."""

from __future__ import annotations

from pydantic import BaseModel, Field


class TxIn(BaseModel):
    kind: str
    sender: str
    payload: dict
    nonce: int
    signature: str
    txid: str


class TxResult(BaseModel):
    accepted: bool
    reason: str
    txid: str
    node: str


class JourneyCreate(BaseModel):
    origin: str | None = None
    destination: str
    depart: int = Field(default=0, ge=0)
    k: int | None = Field(default=None, ge=1, le=16)
    train: str | None = None  # defaults to the train standing at origin


class CandidateOut(BaseModel):
    elements: list[str]
    depart: int
    arrive: int
    total_fee: int
    legs: list[dict]


class JourneyOut(BaseModel):
    id: str
    train: str
    origin: str
    destination: str
    depart: int
    status: str
    candidates: list[CandidateOut]


class BookIn(BaseModel):
    candidate: int | None = Field(default=None, ge=0)


class StepIn(BaseModel):
    n: int = Field(default=1, ge=1, le=10_000)


class StepOut(BaseModel):
    now: int
    finished: bool


class PartitionIn(BaseModel):
    groups: list[list[str]]
    until: int | None = Field(default=None, ge=1)


class ControlOut(BaseModel):
    now: int
    partitions: int


class WalletOut(BaseModel):
    address: str
    balance: int
    nonce: int
    train: str | None
    owner_of: str | None
