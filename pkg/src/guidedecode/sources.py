"""Logit sources standing in for a language model.

All mock sources are pure functions of ``(seed, history)``, so decodes are
reproducible. Sources that set ``needs_mask`` receive the current allowed
mask, which lets :class:`MockAdversarial` push its mass onto forbidden tokens.
"""

from __future__ import annotations

import json
import urllib.error
import urllib.request
from typing import Protocol, Sequence

import numpy as np

from .errors import HttpError, Timeout
from .vocab import TokenMask


class LogitSource(Protocol):
    vocab_size: int
    needs_mask: bool

    def scores(self, history: Sequence[int], mask: TokenMask | None = None) -> np.ndarray: ...


def _rng(seed: int, history: Sequence[int]) -> np.random.Generator:
    return np.random.default_rng([seed & 0xFFFFFFFF, len(history), *history])


class MockRandom:
    needs_mask = False

    def __init__(self, vocab_size: int, seed: int = 0) -> None:
        self.vocab_size = vocab_size
        self.seed = seed

    def scores(self, history: Sequence[int], mask: TokenMask | None = None) -> np.ndarray:
        return _rng(self.seed, history).normal(size=self.vocab_size)


class MockScripted:
    """Favors ``target[len(history)]`` by ``boost``; favors EOS once the script is spent."""

    needs_mask = False

    def __init__(self, vocab_size: int, target: Sequence[int], eos_id: int,
                 boost: float = 20.0, seed: int = 0) -> None:
        self.vocab_size = vocab_size
        self.target = list(target)
        self.eos_id = eos_id
        self.boost = boost
        self.seed = seed

    def scores(self, history: Sequence[int], mask: TokenMask | None = None) -> np.ndarray:
        s = _rng(self.seed, history).normal(scale=0.1, size=self.vocab_size)
        k = len(history)
        s[self.target[k] if k < len(self.target) else self.eos_id] += self.boost
        return s


class MockAdversarial:
    """Puts ``strength`` extra score on every token the current mask forbids."""

    needs_mask = True

    def __init__(self, vocab_size: int, seed: int = 0, strength: float = 50.0) -> None:
        self.vocab_size = vocab_size
        self.seed = seed
        self.strength = strength

    def scores(self, history: Sequence[int], mask: TokenMask | None = None) -> np.ndarray:
        s = _rng(self.seed, history).normal(size=self.vocab_size)
        if mask is not None:
            s = np.where(mask.bits, s, s + self.strength)
        else:
            s += self.strength
        return s


class RemoteLogitSource:
    """Fetches scores over HTTP.

    Wire format: ``POST <url>`` with ``{"token_ids": [...]}``; the response
    body is ``{"logits": [float, ...]}`` of length ``vocab_size``.
    """

    needs_mask = False

    def __init__(self, url: str, vocab_size: int, timeout: float = 30.0) -> None:
        self.url = url
        self.vocab_size = vocab_size
        self.timeout = timeout

    def scores(self, history: Sequence[int], mask: TokenMask | None = None) -> np.ndarray:
        body = json.dumps({"token_ids": list(history)}).encode("utf-8")
        req = urllib.request.Request(
            self.url, data=body, headers={"Content-Type": "application/json"}, method="POST"
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as exc:
            raise HttpError(exc.code, exc.read().decode("utf-8", "replace")) from None
        except TimeoutError:
            raise Timeout(f"logit server {self.url} timed out") from None
        logits = np.asarray(payload["logits"], dtype=float)
        if logits.shape != (self.vocab_size,):
            raise ValueError(
                f"logit server returned {logits.shape[0]} scores, expected {self.vocab_size}"
            )
        return logits


def parse_source(spec: str, vocab_size: int, eos_id: int, script: Sequence[int] = ()) -> LogitSource:
    """Build a source from ``mock:<variant>:<seed>`` or ``remote:<url>``.

    Variants: ``random``, ``adversarial``, ``scripted`` (uses ``script``).
    """
    kind, _, rest = spec.partition(":")
    if kind == "remote":
        if not rest:
            raise ValueError("remote source needs a URL: remote:<url>")
        return RemoteLogitSource(rest, vocab_size)
    if kind != "mock":
        raise ValueError(f"unknown source {spec!r}; expected mock:... or remote:...")
    variant, _, seed_s = rest.partition(":")
    try:
        seed = int(seed_s) if seed_s else 0
    except ValueError:
        raise ValueError(f"bad seed in source spec {spec!r}") from None
    if variant == "random":
        return MockRandom(vocab_size, seed)
    if variant == "adversarial":
        return MockAdversarial(vocab_size, seed)
    if variant == "scripted":
        return MockScripted(vocab_size, script, eos_id, seed=seed)
    raise ValueError(f"unknown mock variant {variant!r}")
