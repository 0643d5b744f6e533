"""``misalign`` command line.

Exit codes: 0 success, 1 usage/config error, 2 data validation error,
3 upstream endpoint failure.
"""

from __future__ import annotations

import csv
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import click

from . import __version__
from .collector import CollectorConfig, ScriptedEndpoint, collect, read_responses, responses_to_samples
from .errors import ConfigError, DataValidationError, MisalignError
from .metrics import (
    entropy_correlation,
    read_report_json,
    write_decisions_csv,
    write_q_csv,
    write_q_rows,
    write_s_csv,
)
from .permutation import PermutationConfig
from .pipeline import RunConfig, parse_statistics, run_manifest, run_tests, write_report_dir
from .simulate import SyntheticScenario, entropy_sweep, mixture_grid, rejection_rates
from .survey import Source, Subgroup, load_dataset, load_manifest, write_aggregated

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("misalign")


class _Cli(click.Group):
    """Group that maps errors onto the documented exit codes."""

    def main(self, args=None, prog_name=None, complete_var=None, standalone_mode=True, **extra):
        try:
            rv = super().main(args, prog_name, complete_var, standalone_mode=False, **extra)
        except click.UsageError as exc:
            exc.show()
            sys.exit(1)
        except click.ClickException as exc:
            exc.show()
            sys.exit(exc.exit_code)
        except click.Abort:
            click.echo("Aborted!", err=True)
            sys.exit(1)
        except MisalignError as exc:
            click.echo(f"Error: {exc}", err=True)
            sys.exit(exc.exit_code)
        sys.exit(rv if isinstance(rv, int) else 0)


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} does not exist")
    try:
        if p.suffix == ".json":
            data = json.loads(p.read_text(encoding="utf-8"))
        else:
            data = tomllib.loads(p.read_text(encoding="utf-8"))
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from None
    return {k.replace("-", "_"): v for k, v in data.items()}


def _merged(ctx: click.Context, params: dict, file_cfg: dict) -> dict:
    """Values from the config file fill in parameters not given on the command line."""
    out = dict(params)
    for name, value in file_cfg.items():
        if name not in out:
            raise ConfigError(f"unknown config key {name!r}")
        if ctx.get_parameter_source(name) in (click.core.ParameterSource.DEFAULT, None):
            out[name] = value
    return out


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{what} file {p} does not exist")
    return p


@click.group(cls=_Cli)
@click.version_option(__version__, prog_name="misalign")
@click.option("-v", "--verbose", count=True, help="More log output (repeatable).")
def cli(verbose):
    """Test whether LLM answers to multiple-choice survey questions are
    distributed like human answers, per question and subgroup."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


# ----------------------------------------------------------------------------
# test
# ----------------------------------------------------------------------------

@cli.command("test")
@click.argument("human_data")
@click.argument("llm_data")
@click.argument("questions")
@click.option("--alpha", type=float, default=0.05, show_default=True,
              help="Rejection level; 0.05 and 0.01 correspond to 95%/99% significance.")
@click.option("--statistic", default="all", show_default=True,
              help="t1, ks-perm, ks-critical, a comma list of them, or all.")
@click.option("--permutations", type=int, default=10_000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--exact-threshold", type=int, default=2_000_000, show_default=True,
              help="Enumerate exactly when a pair has at most this many count-splits.")
@click.option("--refused", type=click.Choice(["include", "drop"]), default="include", show_default=True)
@click.option("--entropy-base", type=click.Choice(["2", "e"]), default="2", show_default=True)
@click.option("--wasserstein", is_flag=True, help="Also compute per-question W1 distances.")
@click.option("--ks-method", type=click.Choice(["auto", "table", "formula"]), default="auto", show_default=True)
@click.option("--jobs", type=int, default=1, show_default=True, help="Worker threads.")
@click.option("--out", default="report", show_default=True, help="Report directory.")
@click.option("--config", "config_file", default=None, help="TOML/JSON file with option defaults.")
@click.pass_context
def cmd_test(ctx, human_data, llm_data, questions, config_file, **params):
    """Run the tests and write a report directory.

    HUMAN_DATA and LLM_DATA are response CSVs (aggregated counts or
    per-respondent rows); QUESTIONS is the question manifest JSON.
    """
    started = datetime.now(timezone.utc)
    p = _merged(ctx, params, _load_config_file(config_file))
    human_path = _require_file(human_data, "human data")
    llm_path = _require_file(llm_data, "LLM data")
    manifest_path = _require_file(questions, "question manifest")
    if p["jobs"] < 1:
        raise ConfigError("--jobs must be >= 1")

    config = RunConfig(
        alpha=p["alpha"],
        statistics=parse_statistics(p["statistic"]),
        num_permutations=p["permutations"],
        seed=p["seed"],
        exact_threshold=p["exact_threshold"],
        refused=p["refused"],
        entropy_base=str(p["entropy_base"]),
        wasserstein=bool(p["wasserstein"]),
        ks_method=p["ks_method"],
    )
    specs = load_manifest(manifest_path)
    _, human = load_dataset(human_path, questions=specs)
    _, llm = load_dataset(llm_path, questions=specs)
    _check_sources(human, Source.HUMAN, human_path)
    _check_sources(llm, Source.LLM, llm_path)
    hq = {s.question_id for s in human}
    lq = {s.question_id for s in llm}
    if hq != lq:
        raise DataValidationError(
            f"question sets differ between {human_path.name} and {llm_path.name}: "
            f"only in human data {sorted(hq - lq)}, only in LLM data {sorted(lq - hq)}"
        )

    report = run_tests(specs, human + llm, config, jobs=p["jobs"])
    echo = config.echo()
    manifest = run_manifest(
        "test",
        {**echo, "jobs": p["jobs"]},
        {"human_data": human_path, "llm_data": llm_path, "questions": manifest_path},
        started,
    )
    out = write_report_dir(report, p["out"], manifest)
    n_excl = len(report.excluded)
    click.echo(f"wrote {out} ({len(report.decisions)} decisions, {n_excl} untestable)")


def _check_sources(samples, expected: Source, path: Path) -> None:
    wrong = {s.source for s in samples} - {expected}
    if wrong:
        raise DataValidationError(f"{path}: expected only {expected.value} rows, found {sorted(w.value for w in wrong)}")


# ----------------------------------------------------------------------------
# report
# ----------------------------------------------------------------------------

@cli.command("report")
@click.argument("report_dir")
def cmd_report(report_dir):
    """Rebuild the CSVs of REPORT_DIR from report.json and print a summary."""
    d = Path(report_dir)
    report = read_report_json(_require_file(str(d / "report.json"), "report"))
    write_s_csv(report, d / "s_metric.csv")
    write_q_csv(report, d / "q_metric.csv")
    write_decisions_csv(report, d / "decisions.csv")
    for stat in report.statistics():
        s_vals = report.s_values(stat)
        if s_vals:
            click.echo(f"[{stat}] S over {len(s_vals)} subgroups: min {min(s_vals.values()):.3f}, "
                       f"max {max(s_vals.values()):.3f}")
        try:
            c = entropy_correlation(report, "Q", stat)
        except DataValidationError as exc:
            click.echo(f"[{stat}] entropy vs Q: {exc}")
            continue
        if c.defined:
            click.echo(f"[{stat}] entropy vs Q: pearson {c.pearson:.3f}, spearman {c.spearman:.3f} "
                       f"({len(c.points)} questions)")
        else:
            click.echo(f"[{stat}] entropy vs Q: undefined (constant series)")


# ----------------------------------------------------------------------------
# collect / convert
# ----------------------------------------------------------------------------

def _read_subgroups(path: Path) -> list[Subgroup]:
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        items = json.loads(text)
    else:
        items = [line.strip() for line in text.splitlines() if line.strip() and not line.startswith("#")]
    return [Subgroup.parse(str(s)) for s in items]


@cli.command("collect")
@click.argument("questions")
@click.argument("subgroups")
@click.option("--out", default="responses.jsonl", show_default=True, help="JSON-lines output (appended).")
@click.option("--endpoint", default="https://api.openai.com/v1", show_default=True)
@click.option("--model", default="gpt-3.5-turbo", show_default=True)
@click.option("--api-key-env", default="OPENAI_API_KEY", show_default=True,
              help="Name of the environment variable holding the API key.")
@click.option("--samples", type=int, default=10, show_default=True, help="Parsed answers per pair.")
@click.option("--temperature", type=float, default=1.0, show_default=True)
@click.option("--max-retries", type=int, default=3, show_default=True, help="Retries for unparsable replies.")
@click.option("--rps", type=float, default=2.0, show_default=True, help="Request rate limit.")
@click.option("--in-flight", type=int, default=4, show_default=True, help="Concurrent requests.")
@click.option("--mock", default=None, help="Replay a JSON reply script instead of calling the endpoint.")
@click.option("--config", "config_file", default=None)
@click.pass_context
def cmd_collect(ctx, questions, subgroups, config_file, **params):
    """Ask the model every question in QUESTIONS once per answer slot for
    every subgroup listed in SUBGROUPS (``dimension:value`` per line, or a
    JSON array)."""
    p = _merged(ctx, params, _load_config_file(config_file))
    specs = load_manifest(_require_file(questions, "question manifest"))
    groups = _read_subgroups(_require_file(subgroups, "subgroups"))
    config = CollectorConfig(
        endpoint_url=p["endpoint"],
        model_name=p["model"],
        api_key_env=p["api_key_env"],
        samples_per_pair=p["samples"],
        temperature=p["temperature"],
        max_retries=p["max_retries"],
        requests_per_second=p["rps"],
        max_in_flight=p["in_flight"],
    )
    transport = api_key = None
    if p["mock"]:
        transport = ScriptedEndpoint.from_file(_require_file(p["mock"], "mock script")).transport()
        api_key = "mock"
    result = collect(specs, groups, config, p["out"], transport=transport, api_key=api_key)
    stats = result.stats.as_dict()
    click.echo(json.dumps({"output": p["out"], "config": config.echo(), **stats}, indent=2))


@cli.command("convert")
@click.argument("responses")
@click.argument("questions")
@click.option("--out", default="llm_counts.csv", show_default=True)
def cmd_convert(responses, questions, out):
    """Turn collected RESPONSES (JSON lines) into an aggregated LLM counts CSV."""
    specs = load_manifest(_require_file(questions, "question manifest"))
    records = read_responses(_require_file(responses, "responses"))
    known = {q.question_id for q in specs}
    stray = sorted({r.question_id for r in records} - known)
    if stray:
        raise DataValidationError(f"responses mention questions missing from the manifest: {stray}")
    samples = responses_to_samples(records)
    write_aggregated(specs, samples, out)
    click.echo(f"wrote {out} ({len(samples)} parsed of {len(records)} attempts)")


# ----------------------------------------------------------------------------
# simulate
# ----------------------------------------------------------------------------

@cli.command("simulate")
@click.argument("scenario_file")
@click.option("--out", default="simulation", show_default=True)
@click.option("--jobs", type=int, default=1, show_default=True)
def cmd_simulate(scenario_file, out, jobs):
    """Run the calibration scenarios and sweeps described in SCENARIO_FILE."""
    started = datetime.now(timezone.utc)
    cfg = _load_config_file(scenario_file)
    defaults = cfg.get("permutation", {})
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    for sc in cfg.get("scenario", []):
        name = sc["name"]
        scenario = SyntheticScenario(
            tuple(sc["human_dist"]), tuple(sc["llm_dist"]), int(sc["n1"]), int(sc["n2"]),
            int(sc.get("trials", 1000)), int(sc.get("seed", 0)),
        )
        perm = _perm_config(sc, defaults)
        alphas = tuple(sc.get("alphas", [perm.alpha]))
        path = out_dir / f"{name}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["scenario", "statistic", "alpha", "rate", "se", "rejections", "trials"])
            for stat in sc.get("statistics", ["t1", "ks-perm", "ks-critical"]):
                for a, est in rejection_rates(scenario, stat, perm, alphas, jobs).items():
                    w.writerow([name, stat, f"{a:g}", f"{est.rate:.10g}", f"{est.se:.10g}",
                                est.rejections, est.trials])
        written.append(str(path))

    for sw in cfg.get("sweep", []):
        name = sw["name"]
        grid = sw.get("grid") or mixture_grid(int(sw.get("k", 4)), int(sw.get("points", 20)),
                                               float(sw.get("exponent", 3.0)))
        perm = _perm_config(sw, defaults)
        points = entropy_sweep(
            grid, int(sw.get("subgroups", 20)), perm,
            n1=int(sw.get("n1", 100)), n2=int(sw.get("n2", 100)),
            mode=sw.get("mode", "mode-collapse"),
            statistics=tuple(sw.get("statistics", ["t1"])),
            trials=int(sw.get("trials", 1)), seed=int(sw.get("seed", 0)),
            strength=float(sw.get("strength", 0.5)),
        )
        path = out_dir / f"{name}.csv"
        q_table: dict = {}
        entropy = {}
        for pt in points:
            q_table.setdefault(pt.statistic, {})[pt.question] = pt.q
            entropy[pt.question] = pt.entropy
        with open(path, "w", newline="", encoding="utf-8") as fh:
            write_q_rows(csv.writer(fh, lineterminator="\n"), q_table, perm.alpha, entropy)
        written.append(str(path))

    manifest = run_manifest("simulate", {"scenario_file": cfg, "jobs": jobs},
                            {"scenario_file": scenario_file}, started)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    for path in written:
        click.echo(f"wrote {path}")


def _perm_config(section: dict, defaults: dict) -> PermutationConfig:
    def pick(key, fallback):
        return section.get(key, defaults.get(key, fallback))

    return PermutationConfig(
        num_permutations=int(pick("permutations", 10_000)),
        seed=int(pick("perm_seed", 0)),
        exact_threshold=int(pick("exact_threshold", 2_000_000)),
        alpha=float(pick("alpha", 0.05)),
    )


def main():
    cli(prog_name="misalign")


if __name__ == "__main__":
    main()
