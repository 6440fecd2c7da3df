"""Command-line entry point.

Subcommands: profile, sample, generate, evaluate, calibrate, kappa,
report. Exit codes: 0 success, 1 usage error, 2 data error, 3
provider/budget error. Generation runs are driven by a flat key=value
manifest file; credentials come from environment variables only.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

from . import corpus, runner
from .errors import DataError, GatewayError
from .gateway import (
    EchoProvider,
    Gateway,
    GenerationConfig,
    HttpProvider,
    ModelSpec,
    StaticProvider,
    model_spec,
)
from .metrics import HashEmbedder
from .prompts import PROMPT_VARIANTS, default_prompt_config, load_exemplars

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_PROVIDER = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); the contract wants 1
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="restory", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("profile", help="measure NLOC for source files and emit CSV")
    p.add_argument("directory")
    p.add_argument("--glob", default="**/*.cpp")
    p.add_argument("--language", default="cpp")
    p.add_argument("--out", default=None)

    p = sub.add_parser("sample", help="stratified sampling of a dataset")
    p.add_argument("--in", dest="dataset", required=True)
    p.add_argument("--per-stratum", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=None)

    p = sub.add_parser("generate", help="run generation + scoring per a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--grid", action="store_true",
                   help="expand the manifest over all six prompt variants")

    p = sub.add_parser("evaluate", help="aggregate a results file by NLOC band")
    p.add_argument("--results", required=True)
    p.add_argument("--scheme", choices=runner.SCHEMES, default="coarse3")
    p.add_argument("--metric", default=runner.GREEDY_METRIC)
    p.add_argument("--out", default=None)

    p = sub.add_parser("calibrate", help="metric means over curated text-pair categories")
    p.add_argument("--pairs", default=None)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--out", default=None)

    p = sub.add_parser("kappa", help="two-annotator agreement from a labels file")
    p.add_argument("--labels", required=True)

    p = sub.add_parser("report", help="emit CSV/JSON band reports from results files")
    p.add_argument("--in", dest="inputs", action="append", required=True)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--scheme", choices=runner.SCHEMES, default="coarse3")
    p.add_argument("--out", required=True)

    return parser


# ---------------------------------------------------------------------------
# Manifest handling

MANIFEST_KEYS = {
    "dataset", "model", "prompt", "output_dir", "seed", "budget_usd",
    "provider", "endpoint", "api_key_env", "cache_dir", "embedder",
    "concurrency", "few_shot_k", "temperature", "min_output_tokens",
    "repetition_penalty", "max_output_tokens", "input_cost_per_mtok",
    "output_cost_per_mtok", "retries",
}


@dataclass
class RunManifest:
    dataset: str
    model: str
    prompt: str
    output_dir: str
    seed: int = 0
    budget_usd: float | None = None
    provider: str = "http"
    endpoint: str = ""
    api_key_env: str = "RESTORY_API_KEY"
    cache_dir: str = ""
    embedder: str = "synthetic:64"
    concurrency: int = 1
    few_shot_k: int = 3
    temperature: float = 0.0
    min_output_tokens: int = 50
    repetition_penalty: float = 0.2
    max_output_tokens: int = 4096
    input_cost_per_mtok: float | None = None
    output_cost_per_mtok: float | None = None
    retries: int = 3


def parse_manifest(path: str | Path) -> RunManifest:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in MANIFEST_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown manifest key {key!r}")
        values[key] = value.strip()

    for required in ("dataset", "model", "prompt", "output_dir"):
        if required not in values:
            raise UsageError(f"{path}: manifest missing required key {required!r}")
    if values["prompt"] not in PROMPT_VARIANTS:
        raise UsageError(
            f"{path}: undefined prompt variant {values['prompt']!r}; "
            "choose one of: " + ", ".join(sorted(PROMPT_VARIANTS))
        )

    def conv(key, fn, default):
        return fn(values[key]) if key in values else default

    try:
        return RunManifest(
            dataset=values["dataset"],
            model=values["model"],
            prompt=values["prompt"],
            output_dir=values["output_dir"],
            seed=conv("seed", int, 0),
            budget_usd=conv("budget_usd", float, None),
            provider=values.get("provider", "http"),
            endpoint=values.get("endpoint", ""),
            api_key_env=values.get("api_key_env", "RESTORY_API_KEY"),
            cache_dir=values.get("cache_dir", ""),
            embedder=values.get("embedder", "synthetic:64"),
            concurrency=conv("concurrency", int, 1),
            few_shot_k=conv("few_shot_k", int, 3),
            temperature=conv("temperature", float, 0.0),
            min_output_tokens=conv("min_output_tokens", int, 50),
            repetition_penalty=conv("repetition_penalty", float, 0.2),
            max_output_tokens=conv("max_output_tokens", int, 4096),
            input_cost_per_mtok=conv("input_cost_per_mtok", float, None),
            output_cost_per_mtok=conv("output_cost_per_mtok", float, None),
            retries=conv("retries", int, 3),
        )
    except ValueError as exc:
        raise UsageError(f"{path}: bad manifest value: {exc}") from exc


def _resolve_model(manifest: RunManifest) -> ModelSpec:
    if manifest.input_cost_per_mtok is not None and manifest.output_cost_per_mtok is not None:
        return ModelSpec(manifest.model, manifest.input_cost_per_mtok,
                         manifest.output_cost_per_mtok)
    return model_spec(manifest.model)


def _resolve_provider(manifest: RunManifest, dataset):
    if manifest.provider == "http":
        if not manifest.endpoint:
            raise UsageError("provider = http requires an endpoint key in the manifest")
        return HttpProvider(manifest.endpoint, api_key_env=manifest.api_key_env)
    if manifest.provider == "echo":
        return EchoProvider(
            {rec.snippet.source_text: rec.reference_story for rec in dataset}
        )
    if manifest.provider.startswith("static:"):
        return StaticProvider(manifest.provider[len("static:"):])
    raise UsageError(f"unknown provider {manifest.provider!r}; use http, echo, or static:<text>")


def _resolve_embedder(spec: str, seed: int) -> HashEmbedder:
    if spec.startswith("synthetic"):
        dim = int(spec.split(":", 1)[1]) if ":" in spec else 64
        return HashEmbedder(dim=dim, salt=seed)
    raise UsageError(f"unknown embedder {spec!r}; use synthetic[:dim]")


# ---------------------------------------------------------------------------
# Subcommand implementations


def _write_or_print(text: str, out: str | None) -> None:
    if out:
        path = Path(out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _cmd_profile(args) -> int:
    root = Path(args.directory)
    if not root.is_dir():
        raise DataError(f"not a directory: {root}")
    paths = sorted(root.glob(args.glob))
    if not paths:
        raise DataError(f"no files match {args.glob!r} under {root}")
    rows, warnings = corpus.profile_files(paths, args.language)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    lines = ["path,nloc,stratum"]
    for path, nloc, stratum in rows:
        lines.append(f"{path},{nloc},{'' if stratum is None else stratum}")
    _write_or_print("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def _cmd_sample(args) -> int:
    records = corpus.load_dataset(args.dataset)
    by_id = {rec.snippet.id: rec for rec in records}
    chosen = corpus.sample_stratified([rec.snippet for rec in records],
                                      args.per_stratum, args.seed)
    sampled = [by_id[s.id] for s in chosen]
    if args.out:
        corpus.save_dataset(sampled, args.out)
    else:
        for rec in sampled:
            sys.stdout.write(corpus.record_to_json(rec) + "\n")
    print(f"sampled {len(sampled)} snippets from "
          f"{len({s.stratum_index for s in chosen})} strata", file=sys.stderr)
    return EXIT_OK


def _run_manifest(manifest: RunManifest) -> int:
    dataset = corpus.load_dataset(manifest.dataset)
    model = _resolve_model(manifest)
    provider = _resolve_provider(manifest, dataset)
    output_dir = Path(manifest.output_dir)
    cache_dir = Path(manifest.cache_dir) if manifest.cache_dir else output_dir / "cache"
    gateway = Gateway(
        provider,
        model,
        GenerationConfig(
            temperature=manifest.temperature,
            min_output_tokens=manifest.min_output_tokens,
            repetition_penalty=manifest.repetition_penalty,
            max_output_tokens=manifest.max_output_tokens,
        ),
        cache_dir=cache_dir,
        ledger_path=cache_dir / "ledger.csv",
        retries=manifest.retries,
        budget_usd=manifest.budget_usd,
    )
    config = default_prompt_config(manifest.prompt, few_k=manifest.few_shot_k)
    exemplars = load_exemplars()[: config.expected_exemplars]
    if len(exemplars) < config.expected_exemplars:
        raise DataError(
            f"need {config.expected_exemplars} exemplars but only {len(exemplars)} bundled"
        )
    result = runner.run_experiment(
        dataset,
        gateway,
        config,
        exemplars=exemplars,
        embedder=_resolve_embedder(manifest.embedder, manifest.seed),
        results_path=output_dir / "results.jsonl",
        prompt_label=manifest.prompt,
        concurrency=manifest.concurrency,
    )
    print(
        f"{manifest.prompt}: {len(result.records)} records, "
        f"{len(result.failures)} failures, {result.provider_calls} provider calls, "
        f"{result.total_cost_usd:.6f} USD",
        file=sys.stderr,
    )
    if result.records:
        return EXIT_OK
    return EXIT_PROVIDER  # every entry failed


def _cmd_generate(args) -> int:
    manifest = parse_manifest(args.manifest)
    if not args.grid:
        return _run_manifest(manifest)
    worst = EXIT_OK
    base_dir = Path(manifest.output_dir)
    cache_dir = manifest.cache_dir or str(base_dir / "cache")
    for variant in sorted(PROMPT_VARIANTS):
        sub = RunManifest(**{**manifest.__dict__,
                             "prompt": variant,
                             "output_dir": str(base_dir / variant),
                             "cache_dir": cache_dir})
        worst = max(worst, _run_manifest(sub))
    return worst


def _cmd_evaluate(args) -> int:
    records, failures = runner.load_results(args.results)
    if not records:
        raise DataError(f"{args.results}: no scored records")
    rows = runner.collect_report_rows(records, args.scheme, args.metric, failures)
    header = f"{'band':>9} {'n':>5} {'precision':>9} {'recall':>9} {'f1':>9} {'failures':>8}"
    lines = [header]
    for row in rows:
        lines.append(
            f"{row['band']:>9} {row['n']:>5} {row['precision']:>9.2f} "
            f"{row['recall']:>9.2f} {row['f1']:>9.2f} {row['failures']:>8}"
        )
    _write_or_print("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def _cmd_calibrate(args) -> int:
    pairs = runner.load_calibration_pairs(args.pairs)
    rows = runner.calibration_experiment(pairs, HashEmbedder(dim=args.dim))
    lines = ["metric,variant," + ",".join(runner.CALIBRATION_CATEGORIES)]
    for row in rows:
        lines.append(
            f"{row['metric']},{row['variant']},"
            + ",".join(f"{row[c]:.2f}" for c in runner.CALIBRATION_CATEGORIES)
        )
    _write_or_print("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def _cmd_kappa(args) -> int:
    ids, labels_a, labels_b = [], [], []
    with open(args.labels, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                ids.append(obj["id"])
                labels_a.append(obj["a"])
                labels_b.append(obj["b"])
            except (json.JSONDecodeError, KeyError) as exc:
                raise DataError(f"{args.labels}:{lineno}: bad label record: {exc}") from exc
    value = runner.cohen_kappa(
        runner.AnnotationSet(tuple(ids), tuple(labels_a), tuple(labels_b))
    )
    print(f"{value:.3f}")
    return EXIT_OK


def _cmd_report(args) -> int:
    all_rows: list[dict] = []
    for path in args.inputs:
        records, failures = runner.load_results(path)
        if not records:
            raise DataError(f"{path}: no scored records")
        all_rows.extend(runner.collect_report_rows(records, args.scheme, failures=failures))
    runner.write_report_rows(all_rows, args.out, args.format)
    print(f"wrote {len(all_rows)} rows to {args.out}", file=sys.stderr)
    return EXIT_OK


_COMMANDS = {
    "profile": _cmd_profile,
    "sample": _cmd_sample,
    "generate": _cmd_generate,
    "evaluate": _cmd_evaluate,
    "calibrate": _cmd_calibrate,
    "kappa": _cmd_kappa,
    "report": _cmd_report,
}


def dispatch(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    except (OSError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except GatewayError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
