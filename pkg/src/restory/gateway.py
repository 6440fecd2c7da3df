"""Uniform gateway to chat-completion providers.

Wraps any provider behind one `complete()` call with deterministic
response caching (key = digest of model + decoding config + prompt text),
bounded retries with exponential backoff on transient failures, an
append-only cost ledger, and an optional per-run budget ceiling.

A provider is any object with
    generate(model_id: str, prompt_text: str, config: GenerationConfig)
        -> ProviderResponse
raising TransientProviderError for retryable failures and
ProviderRejectedError for permanent ones. Credentials travel via
environment variables only.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import random
import threading
import time
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path

import requests

from .errors import DataError, GatewayError
from .prompts import RenderedPrompt, estimate_tokens

logger = logging.getLogger(__name__)


class TransientProviderError(GatewayError):
    """Retryable failure: timeouts, connection errors, 429/5xx statuses."""


class ProviderRejectedError(GatewayError):
    """Non-retryable provider failure (bad request, auth, ...)."""


class TransientExhaustedError(GatewayError):
    """All retries spent on transient failures."""


class BudgetExceededError(GatewayError):
    pass


class UnknownModelError(DataError):
    pass


@dataclass(frozen=True)
class GenerationConfig:
    temperature: float = 0.0
    min_output_tokens: int = 50
    repetition_penalty: float = 0.2
    max_output_tokens: int = 4096

    def __post_init__(self):
        if self.temperature < 0:
            raise DataError(f"temperature must be >= 0, got {self.temperature}")
        if self.repetition_penalty <= 0:
            raise DataError(f"repetition_penalty must be > 0, got {self.repetition_penalty}")
        if self.min_output_tokens < 1 or self.max_output_tokens < 1:
            raise DataError("token limits must be positive")
        if self.min_output_tokens > self.max_output_tokens:
            raise DataError(
                f"min_output_tokens {self.min_output_tokens} exceeds "
                f"max_output_tokens {self.max_output_tokens}"
            )


@dataclass(frozen=True)
class ModelSpec:
    model_id: str
    input_cost_per_mtok: float
    output_cost_per_mtok: float

    def __post_init__(self):
        for name in ("input_cost_per_mtok", "output_cost_per_mtok"):
            v = getattr(self, name)
            if not (v >= 0 and v == v and v != float("inf")):
                raise DataError(f"{name} must be finite and non-negative, got {v}")


# Published pay-as-you-go rates, USD per 1M tokens (input, output).
MODEL_RATES = {
    "llama-3.1-8b": (0.05, 0.25),
    "llama-3.1-70b": (0.65, 2.75),
    "llama-3.1-405b": (9.50, 9.50),
    "deepseek-r1": (0.55, 2.19),
    "gpt-4o-mini": (0.80, 3.20),
    "o1": (10.00, 40.00),
}


def model_spec(model_id: str) -> ModelSpec:
    try:
        rates = MODEL_RATES[model_id]
    except KeyError:
        raise UnknownModelError(
            f"no built-in rates for model {model_id!r}; supply rates explicitly"
        ) from None
    return ModelSpec(model_id, rates[0], rates[1])


def estimate_cost(input_tokens: int, output_tokens: int, model: ModelSpec) -> float:
    """USD cost of a completion at the model's per-million-token rates."""
    return (
        input_tokens / 1e6 * model.input_cost_per_mtok
        + output_tokens / 1e6 * model.output_cost_per_mtok
    )


@dataclass(frozen=True)
class CompletionResult:
    text: str
    input_tokens: int
    output_tokens: int
    latency_ms: int
    cost_usd: float
    cached: bool
    retries: int = 0
    tokens_estimated: bool = False


@dataclass(frozen=True)
class ProviderResponse:
    text: str
    input_tokens: int | None = None
    output_tokens: int | None = None


class HttpProvider:
    """Generic HTTPS chat-completion endpoint.

    Sends JSON with the model id, prompt, and decoding parameters; expects
    JSON back with `text` (or `output`) and optional token counts. The API
    key is read from the named environment variable at call time.
    """

    RETRYABLE_STATUSES = frozenset({408, 425, 429, 500, 502, 503, 504})

    def __init__(self, endpoint: str, api_key_env: str = "RESTORY_API_KEY", timeout: float = 120.0):
        self.endpoint = endpoint
        self.api_key_env = api_key_env
        self.timeout = timeout

    def generate(self, model_id: str, prompt_text: str, config: GenerationConfig) -> ProviderResponse:
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        payload = {
            "model": model_id,
            "prompt": prompt_text,
            "temperature": config.temperature,
            "min_tokens": config.min_output_tokens,
            "max_tokens": config.max_output_tokens,
            "repetition_penalty": config.repetition_penalty,
        }
        try:
            resp = requests.post(self.endpoint, json=payload, headers=headers, timeout=self.timeout)
        except requests.RequestException as exc:
            raise TransientProviderError(f"request failed: {exc}") from exc
        if resp.status_code in self.RETRYABLE_STATUSES:
            raise TransientProviderError(f"provider returned {resp.status_code}")
        if resp.status_code >= 400:
            raise ProviderRejectedError(f"provider rejected request: {resp.status_code} {resp.text[:200]}")
        try:
            body = resp.json()
            text = body["text"] if "text" in body else body["output"]
        except (ValueError, KeyError) as exc:
            raise ProviderRejectedError(f"malformed provider response: {exc}") from exc
        return ProviderResponse(
            text=text,
            input_tokens=body.get("input_tokens"),
            output_tokens=body.get("output_tokens"),
        )


class StaticProvider:
    """Always returns the same text; hermetic stand-in for a live model."""

    def __init__(self, text: str):
        self.text = text

    def generate(self, model_id: str, prompt_text: str, config: GenerationConfig) -> ProviderResponse:
        return ProviderResponse(text=self.text)


class EchoProvider:
    """Replays a canned completion keyed by the code inside the prompt.

    Assumes the target snippet is the last fenced block in the prompt
    (which is where `render_prompt` puts it). Useful for hermetic runs
    where the "model" should echo each snippet's reference story.
    """

    def __init__(self, completion_by_code: dict[str, str]):
        self._completions = {
            code.rstrip("\n"): text for code, text in completion_by_code.items()
        }

    def generate(self, model_id: str, prompt_text: str, config: GenerationConfig) -> ProviderResponse:
        parts = prompt_text.split("```")
        if len(parts) < 3:
            raise ProviderRejectedError("prompt contains no fenced code block")
        block = parts[-2]
        code = block.split("\n", 1)[1] if "\n" in block else block
        code = code.rstrip("\n")
        try:
            return ProviderResponse(text=self._completions[code])
        except KeyError:
            raise ProviderRejectedError("no canned completion for the prompted code") from None


class Ledger:
    """Append-only CSV cost log: timestamp,model,input_tokens,output_tokens,cost_usd,cached."""

    COLUMNS = ("timestamp", "model", "input_tokens", "output_tokens", "cost_usd", "cached")

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def append(self, model_id: str, input_tokens: int, output_tokens: int,
               cost_usd: float, cached: bool) -> None:
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            new = not self.path.exists()
            with open(self.path, "a", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                if new:
                    writer.writerow(self.COLUMNS)
                writer.writerow([
                    datetime.now(timezone.utc).isoformat(),
                    model_id,
                    input_tokens,
                    output_tokens,
                    repr(cost_usd),
                    str(cached).lower(),
                ])

    def total_cost(self) -> float:
        if not self.path.exists():
            return 0.0
        with open(self.path, newline="", encoding="utf-8") as fh:
            return sum(float(row["cost_usd"]) for row in csv.DictReader(fh))


class Gateway:
    """One model + one provider + shared cache, retry policy, and budget."""

    def __init__(
        self,
        provider,
        model: ModelSpec,
        config: GenerationConfig | None = None,
        cache_dir: str | Path | None = None,
        ledger_path: str | Path | None = None,
        retries: int = 3,
        backoff_base: float = 1.0,
        budget_usd: float | None = None,
        sleep=time.sleep,
        rng: random.Random | None = None,
    ):
        self.provider = provider
        self.model = model
        self.config = config or GenerationConfig()
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.ledger = Ledger(ledger_path) if ledger_path else None
        self.retries = retries
        self.backoff_base = backoff_base
        self.budget_usd = budget_usd
        self._sleep = sleep
        self._rng = rng or random.Random()
        self._lock = threading.Lock()
        self.spent_usd = 0.0
        self.provider_calls = 0

    # -- cache ---------------------------------------------------------

    def _cache_key(self, prompt_text: str) -> str:
        payload = json.dumps(
            {
                "model": self.model.model_id,
                "temperature": self.config.temperature,
                "min_output_tokens": self.config.min_output_tokens,
                "repetition_penalty": self.config.repetition_penalty,
                "max_output_tokens": self.config.max_output_tokens,
                "prompt": prompt_text,
            },
            sort_keys=True,
            ensure_ascii=False,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def _cache_path(self, key: str) -> Path | None:
        return self.cache_dir / f"{key}.json" if self.cache_dir else None

    def _cache_load(self, key: str) -> CompletionResult | None:
        path = self._cache_path(key)
        if path is None or not path.exists():
            return None
        obj = json.loads(path.read_text(encoding="utf-8"))
        return CompletionResult(**obj)

    def _cache_store(self, key: str, result: CompletionResult) -> None:
        path = self._cache_path(key)
        if path is None:
            return
        with self._lock:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            tmp.write_text(
                json.dumps(result.__dict__, sort_keys=True, ensure_ascii=False),
                encoding="utf-8",
            )
            os.replace(tmp, path)

    # -- completion ----------------------------------------------------

    def complete(self, prompt: RenderedPrompt | str) -> CompletionResult:
        """Resolve a prompt to a completion, via cache when possible.

        Cache hits add nothing to the ledger total or the budget; misses
        call the provider with up to `retries` retries on transient errors
        and persist the result atomically before accounting runs.
        """
        prompt_text = prompt.text if isinstance(prompt, RenderedPrompt) else prompt
        key = self._cache_key(prompt_text)

        hit = self._cache_load(key)
        if hit is not None:
            result = replace(hit, cached=True)
            if self.ledger:
                self.ledger.append(self.model.model_id, result.input_tokens,
                                   result.output_tokens, 0.0, cached=True)
            return result

        if self.budget_usd is not None and self.spent_usd >= self.budget_usd:
            raise BudgetExceededError(
                f"budget {self.budget_usd} USD already spent ({self.spent_usd:.6f})"
            )

        attempt = 0
        start = time.monotonic()
        while True:
            try:
                with self._lock:
                    self.provider_calls += 1
                response = self.provider.generate(self.model.model_id, prompt_text, self.config)
                break
            except TransientProviderError as exc:
                if attempt >= self.retries:
                    raise TransientExhaustedError(
                        f"provider still failing after {self.retries} retries: {exc}"
                    ) from exc
                delay = self.backoff_base * (2 ** attempt) * (1 + 0.1 * self._rng.random())
                self._sleep(delay)
                attempt += 1
        latency_ms = int((time.monotonic() - start) * 1000)

        estimated = response.input_tokens is None or response.output_tokens is None
        input_tokens = (
            response.input_tokens
            if response.input_tokens is not None
            else estimate_tokens(prompt_text)
        )
        output_tokens = (
            response.output_tokens
            if response.output_tokens is not None
            else (estimate_tokens(response.text) if response.text else 0)
        )
        cost = estimate_cost(input_tokens, output_tokens, self.model)
        if output_tokens < self.config.min_output_tokens:
            logger.warning(
                "completion shorter than minimum output length: %d < %d tokens",
                output_tokens, self.config.min_output_tokens,
            )

        result = CompletionResult(
            text=response.text,
            input_tokens=input_tokens,
            output_tokens=output_tokens,
            latency_ms=latency_ms,
            cost_usd=cost,
            cached=False,
            retries=attempt,
            tokens_estimated=estimated,
        )
        self._cache_store(key, result)
        if self.ledger:
            self.ledger.append(self.model.model_id, input_tokens, output_tokens, cost, cached=False)
        with self._lock:
            self.spent_usd += cost
        if self.budget_usd is not None and self.spent_usd > self.budget_usd:
            raise BudgetExceededError(
                f"budget {self.budget_usd} USD exceeded: spent {self.spent_usd:.6f}"
            )
        return result
