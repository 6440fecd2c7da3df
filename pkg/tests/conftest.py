from __future__ import annotations

import pytest

from restory.corpus import CodeSnippet, DatasetRecord


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    """One visible pass/fail line per acceptance criterion."""
    outcome = yield
    report = outcome.get_result()
    if report.when == "call" and item.module.__name__ == "test_acceptance":
        label = item.name.removeprefix("test_").replace("_", " ")
        status = "PASS" if report.passed else "FAIL"
        print(f"\nACCEPTANCE {status}: {label}")
from restory.gateway import (
    GenerationConfig,
    ProviderRejectedError,
    ProviderResponse,
    TransientProviderError,
)


def make_cpp_source(nloc: int, tag: str = "v") -> str:
    """Straight-line C++ with exactly `nloc` code lines."""
    assert nloc >= 1
    return "\n".join(f"int {tag}{i} = {i};" for i in range(nloc)) + "\n"


def make_snippet(snippet_id: str, nloc: int) -> CodeSnippet:
    return CodeSnippet.from_source(snippet_id, make_cpp_source(nloc, tag=f"x{nloc}_"))


def make_dataset(nlocs: list[int]) -> list[DatasetRecord]:
    records = []
    for i, nloc in enumerate(nlocs):
        snippet = make_snippet(f"snip-{i:03d}", nloc)
        story = (
            f"As a user{i}, I want task {i} handled for {nloc} lines "
            f"so that outcome {i} improves."
        )
        records.append(DatasetRecord(snippet=snippet, reference_story=story))
    return records


@pytest.fixture
def one_per_stratum_dataset() -> list[DatasetRecord]:
    """35 snippets, one per stratum (NLOC at each band midpoint)."""
    return make_dataset([10 * i + 5 for i in range(35)])


class CountingProvider:
    """Wraps fixed text and counts generate() calls."""

    def __init__(self, text: str = "As a tester, I want output so that tests pass."):
        self.text = text
        self.calls = 0

    def generate(self, model_id: str, prompt_text: str, config: GenerationConfig):
        self.calls += 1
        return ProviderResponse(text=self.text)


class FlakyProvider:
    """Fails transiently `failures` times, then succeeds."""

    def __init__(self, failures: int, text: str = "As a user, I want it so that it works."):
        self.remaining = failures
        self.text = text
        self.calls = 0

    def generate(self, model_id: str, prompt_text: str, config: GenerationConfig):
        self.calls += 1
        if self.remaining > 0:
            self.remaining -= 1
            raise TransientProviderError("synthetic transient failure")
        return ProviderResponse(text=self.text)


class AlwaysFailingProvider:
    def __init__(self, transient: bool = True):
        self.calls = 0
        self.transient = transient

    def generate(self, model_id: str, prompt_text: str, config: GenerationConfig):
        self.calls += 1
        if self.transient:
            raise TransientProviderError("synthetic outage")
        raise ProviderRejectedError("synthetic rejection")
