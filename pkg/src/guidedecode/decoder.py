"""The constrained sampling loop shared by every backend."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Protocol

import numpy as np

from .errors import DeadEnd, IllegalToken, ValidationError
from .sources import LogitSource
from .vocab import TokenMask, Vocabulary

BACKENDS = ("fsm", "pda", "enforcer", "none")


class ConstraintState(Protocol):
    is_complete: bool
    can_end: bool

    def allowed_mask(self) -> TokenMask: ...

    def advance(self, token_id: int) -> "ConstraintState": ...

    def branch(self) -> "ConstraintState": ...


class Constraint(Protocol):
    backend: str
    vocab: Vocabulary

    def initial_state(self) -> ConstraintState: ...


class UnconstrainedState:
    """Pass-through state: every non-empty token and EOS are always allowed."""

    __slots__ = ("constraint", "is_complete")

    def __init__(self, constraint: "Unconstrained", is_complete: bool = False) -> None:
        self.constraint = constraint
        self.is_complete = is_complete

    @property
    def can_end(self) -> bool:
        return not self.is_complete

    def allowed_mask(self) -> TokenMask:
        c = self.constraint
        return c._done_mask if self.is_complete else c._mask

    def advance(self, token_id: int) -> "UnconstrainedState":
        c = self.constraint
        if self.is_complete or not 0 <= token_id < c.vocab.size or not c._mask.bits[token_id]:
            raise IllegalToken(token_id)
        return UnconstrainedState(c, token_id == c.vocab.eos_id)

    def branch(self) -> "UnconstrainedState":
        return UnconstrainedState(self.constraint, self.is_complete)


class Unconstrained:
    backend = "none"

    def __init__(self, vocab: Vocabulary) -> None:
        self.vocab = vocab
        self._mask = TokenMask.from_ids(vocab.size, [i for i, t in enumerate(vocab.tokens)
                                                     if t or i == vocab.eos_id])
        self._done_mask = TokenMask.zeros(vocab.size)

    def initial_state(self) -> UnconstrainedState:
        return UnconstrainedState(self)


@dataclass(frozen=True)
class DecodeConfig:
    """Sampling settings.

    ``temperature == 0`` is treated as greedy. ``overlap`` computes the mask
    on a helper thread while the source produces logits; the mask is always
    complete before the token is chosen.
    """

    backend: str = "fsm"
    max_tokens: int = 512
    temperature: float = 1.0
    seed: int = 0
    greedy: bool = False
    overlap: bool = False
    on_dead_end: str = "raise"

    def __post_init__(self) -> None:
        if self.backend not in BACKENDS:
            raise ValidationError(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        if self.max_tokens < 1:
            raise ValidationError("max_tokens must be >= 1")
        if not self.temperature >= 0:
            raise ValidationError("temperature must be >= 0")
        if self.on_dead_end not in ("raise", "return"):
            raise ValidationError("on_dead_end must be 'raise' or 'return'")


@dataclass
class DecodeOutput:
    token_ids: list[int]
    text: bytes
    finish_reason: str
    steps: list[int] = field(default_factory=list)
    valid: bool | None = None

    def to_json(self) -> dict[str, Any]:
        d = asdict(self)
        d["text"] = self.text.decode("utf-8", errors="replace")
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_json(), ensure_ascii=False)


def select_token(mask: TokenMask, logits: np.ndarray, cfg: DecodeConfig,
                 rng: np.random.Generator) -> int:
    """Pick a token among the bits set in ``mask``.

    Forbidden scores become ``-inf`` before normalization, so they carry
    probability exactly zero.
    """
    bits = mask.bits
    if not bits.any():
        raise DeadEnd([], b"")
    logits = np.asarray(logits, dtype=float)
    if logits.shape != bits.shape:
        raise ValidationError(f"logits have length {logits.shape}, vocabulary {bits.shape}")
    logits = np.nan_to_num(logits, nan=-np.inf, posinf=np.finfo(float).max, neginf=-np.inf)
    masked = np.where(bits, logits, -np.inf)
    top = masked.max()
    if top == -np.inf:
        # every allowed score is -inf: fall back to the lowest allowed id
        return int(np.flatnonzero(bits)[0])
    if cfg.greedy or cfg.temperature == 0:
        return int(np.argmax(masked))
    z = np.exp((masked - top) / cfg.temperature)
    p = z / z.sum()
    return int(rng.choice(p.shape[0], p=p))


def decode_step(state: ConstraintState, logits: np.ndarray, cfg: DecodeConfig,
                rng: np.random.Generator | None = None) -> tuple[int, ConstraintState]:
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    mask = state.allowed_mask()
    token = select_token(mask, logits, cfg, rng)
    return token, state.advance(token)


def decode(source: LogitSource, constraint: Constraint, cfg: DecodeConfig,
           validator: Callable[[bytes], bool] | None = None,
           trace: list[tuple[TokenMask, int]] | None = None) -> DecodeOutput:
    """Run one constrained generation.

    ``trace``, when given, receives ``(mask, chosen token)`` for every step.

    Raises:
        DeadEnd: when no token is allowed and ``cfg.on_dead_end == "raise"``;
            carries the emitted ids and bytes so far.
    """
    vocab = constraint.vocab
    if source.vocab_size != vocab.size:
        raise ValidationError(
            f"source scores {source.vocab_size} tokens, constraint vocabulary has {vocab.size}"
        )
    rng = np.random.default_rng(cfg.seed)
    state = constraint.initial_state()
    ids: list[int] = []
    steps: list[int] = []
    finish = "max_tokens"
    pool = ThreadPoolExecutor(max_workers=1) if cfg.overlap and not source.needs_mask else None
    try:
        for _ in range(cfg.max_tokens):
            if pool is not None:
                pending = pool.submit(state.allowed_mask)
                logits = source.scores(ids)
                mask = pending.result()
            else:
                mask = state.allowed_mask()
                logits = source.scores(ids, mask if source.needs_mask else None)
            steps.append(mask.popcount())
            try:
                token = select_token(mask, logits, cfg, rng)
            except DeadEnd:
                if cfg.on_dead_end == "return":
                    finish = "dead_end"
                    break
                raise DeadEnd(list(ids), vocab.decode(ids)) from None
            if trace is not None:
                trace.append((mask, token))
            state = state.advance(token)
            if token == vocab.eos_id:
                finish = "eos"
                break
            ids.append(token)
    finally:
        if pool is not None:
            pool.shutdown()
    text = vocab.decode(ids)
    valid = validator(text) if validator is not None and finish == "eos" else None
    return DecodeOutput(ids, text, finish, steps, valid)


def build_constraint(backend: str, vocab: Vocabulary, *, regex: str | None = None,
                     grammar: str | None = None, schema: Any = None,
                     cache_capacity: int | None = 4096) -> tuple[Constraint, Callable[[bytes], bool] | None]:
    """Compile a constraint for ``backend`` plus an independent validator.

    Exactly one of ``regex``, ``grammar`` (source text) or ``schema`` is
    expected except for backend ``none``. The fsm backend accepts a schema
    by translating it to a regex; the enforcer only accepts schemas.
    """
    from . import validators
    from .cfg import PdaConstraint, PdaEngine, parse_grammar, schema_to_grammar
    from .enforcer import EnforcerConstraint
    from .regex import FsmConstraint
    from .schema import schema_to_regex

    given = [x is not None for x in (regex, grammar, schema)]
    if backend == "none":
        if regex is not None:
            return Unconstrained(vocab), validators.regex_validator(regex)
        if schema is not None:
            return Unconstrained(vocab), validators.schema_validator(schema)
        if grammar is not None:
            return Unconstrained(vocab), validators.GrammarRecognizer(parse_grammar(grammar))
        return Unconstrained(vocab), None
    if sum(given) != 1:
        raise ValidationError("exactly one of regex, grammar or schema is required")
    if backend == "fsm":
        if grammar is not None:
            raise ValidationError("the fsm backend takes a regex or a schema, not a grammar")
        if schema is not None:
            return (FsmConstraint.from_regex(schema_to_regex(schema), vocab),
                    validators.schema_validator(schema))
        return FsmConstraint.from_regex(regex, vocab), validators.regex_validator(regex)
    if backend == "pda":
        if regex is not None:
            g = parse_grammar(f"start: /{regex.replace('/', chr(92) + '/')}/")
            check = validators.regex_validator(regex)
        elif schema is not None:
            g = schema_to_grammar(schema)
            check = validators.schema_validator(schema)
        else:
            g = parse_grammar(grammar)
            check = validators.GrammarRecognizer(g)
        return PdaConstraint(PdaEngine(g, vocab, cache_capacity=cache_capacity)), check
    if backend == "enforcer":
        if schema is None:
            raise ValidationError("the enforcer backend takes a JSON schema")
        return EnforcerConstraint(schema, vocab), validators.schema_validator(schema)
    raise ValidationError(f"unknown backend {backend!r}")
