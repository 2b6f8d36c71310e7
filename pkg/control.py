#!/usr/bin/env python3
"""
Command-line controller for the conversational uptake toolkit.

One sub-command per pipeline stage. Every stage reads and writes plain files,
so intermediate artifacts (pairs, scores, classifier params) can be inspected,
swapped or produced by external tools. Settings resolve as: built-in defaults
< --preset < --config file < explicit flags.

Exit codes: 0 success, 1 usage or configuration error, 2 data error.
"""

import os
import sys
import signal
import logging
import argparse
from typing import Any, Dict, List, Optional, Sequence


# Add lib and scripts to path with robust resolution for all environments
def setup_module_paths():
    """Setup module paths for running from a checkout or from another directory."""
    possible_script_dirs = [
        os.path.dirname(os.path.abspath(__file__)),  # Standard approach
        os.path.dirname(os.path.realpath(__file__)),  # Follow symlinks
        os.getcwd(),
    ]

    for script_dir in possible_script_dirs:
        lib_path = os.path.join(script_dir, 'lib')
        scripts_path = os.path.join(script_dir, 'scripts')

        # Check if this looks like our project directory
        if (os.path.exists(os.path.join(lib_path, 'similarity.py')) and
                os.path.exists(os.path.join(lib_path, 'config_manager.py'))):
            for path in (scripts_path, lib_path):
                if path not in sys.path:
                    sys.path.insert(0, path)
            return True

    return False


# Setup paths before any local imports
if not setup_module_paths():
    print("Could not locate project modules. Ensure you're running from the project directory.", file=sys.stderr)
    sys.exit(1)

import numpy as np
import pandas as pd
from rich.console import Console
from rich.table import Table

# Local imports
from config import CORPUS_SETTINGS, NUC_SETTINGS, RUN_SETTINGS, SIMILARITY_SETTINGS, STATS_SETTINGS, validate_config
from common_utils import (DataError, read_csv_rows, read_json, setup_logging, split_csv_option,
                          write_csv_table, write_json)
from config_manager import ConfigManager, normalize_key
from task_executor import TaskExecutor
from corpus import (aggregate_labels, drop_small_conversations, extract_pairs, load_annotations,
                    load_gold_labels, load_pairs, load_transcripts, load_zscores, off_topic_pairs,
                    rating_counts, write_gold_labels, write_pairs, write_zscores, zscore_judgments,
                    zscore_matrix)
from embeddings import load_sentence_vectors, load_word_vectors
from similarity import ScoreTable, ScoringConfig, parse_metrics, score_all
from nuc import (ClassifierParams, Featurizer, build_nuc_dataset, evaluate, load_nuc_dataset, predict,
                 score_corpus_pjsd, split_by_pair, train_reference_classifier, write_nuc_dataset)
from stats import (bootstrap_ci, compare_cue_rates, conversation_aggregate, fleiss_kappa, leave_out_rhos,
                   ols, phenomenon_delta, quantile_transform, residual_gap_table)
from selftest import render_results, run_selftest, write_report
from generate_synthetic_pairs import generate_copy_corpus, write_corpus

logger = logging.getLogger("control")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

DEFAULT_SCORE_METRICS = "lcs,pct_s_in_t,pct_t_in_s,jaccard,bleu"
GLOBAL_SETTINGS = ("seed", "jobs", "log_level", "quiet")
CONFIG_ALIASES = {"in": "input"}


class UsageError(Exception):
    """Bad command line: unknown flag or sub-command, bad or missing value."""


class UptakeArgumentParser(argparse.ArgumentParser):
    """ArgumentParser that reports usage errors by raising instead of exiting."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _non_negative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def setup_argparse() -> UptakeArgumentParser:
    """Setup command-line argument parsing."""
    parser = UptakeArgumentParser(
        prog="control.py",
        description="Conversational uptake toolkit: pair extraction, similarity and pJSD scoring, validation",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python control.py extract --in transcripts.jsonl --out pairs.jsonl --min-s-tokens 5
  python control.py annotate-agg --in annotations.csv --out gold.csv --z-out z.csv
  python control.py score --pairs pairs.jsonl --metrics pct_s_in_t,bleu --vectors glove.txt --out scores.csv
  python control.py nuc-build --pairs pairs.jsonl --k 3 --out nuc.jsonl
  python control.py nuc-train --in nuc.jsonl --out params.json --holdout 0.2
  python control.py nuc-score --pairs pairs.jsonl --params params.json --out pjsd.csv
  python control.py eval-corr --scores scores.csv --labels gold.csv --out corr.csv
  python control.py --preset quick synth --out synth.jsonl --alpha-out alpha.csv
  python control.py selftest
  python control.py presets save nightly --settings run.json
        """
    )
    parser.add_argument("--seed", type=_non_negative_int, default=RUN_SETTINGS['seed'],
                        help="Seed threaded into every stochastic step")
    parser.add_argument("--jobs", type=_positive_int, default=RUN_SETTINGS['jobs'],
                        help="Worker threads (outputs do not depend on this)")
    parser.add_argument("--config", help="JSON config file (top-level keys or a per-command section)")
    parser.add_argument("--preset", help="Named preset (standard, quick, test_mode, or a saved user preset)")
    parser.add_argument("--log-level", default=None, choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                        help="Log level for stderr output")
    parser.add_argument("--quiet", action="store_true", help="Warnings only, no progress bars")

    commands = parser.add_subparsers(dest="command", metavar="command")

    p = commands.add_parser("extract", help="Extract filtered (S, T) pairs from transcripts")
    p.add_argument("--in", dest="input", help="Transcript file")
    p.add_argument("--format", choices=["jsonl", "csv"], default="jsonl")
    p.add_argument("--out", help="Pairs JSONL output")
    p.add_argument("--min-s-tokens", type=_non_negative_int, default=CORPUS_SETTINGS['min_s_tokens'])
    p.add_argument("--inaudible-marker", default=CORPUS_SETTINGS['inaudible_marker'])
    p.add_argument("--source", default=CORPUS_SETTINGS['default_source'],
                   help="Source label for transcripts without one")
    p.add_argument("--min-pairs", type=_positive_int, default=CORPUS_SETTINGS['min_pairs_per_conversation'],
                   help="Drop conversations contributing fewer pairs")

    p = commands.add_parser("annotate-agg", help="Aggregate rater judgments into gold labels")
    p.add_argument("--in", dest="input", help="Annotations CSV (rater_id,pair_id,on_topic,level)")
    p.add_argument("--out", help="Gold label CSV output")
    p.add_argument("--z-out", help="Per-rater z-score CSV output (rater_id,pair_id,z)")

    p = commands.add_parser("score", help="Score pairs under similarity and model metrics")
    p.add_argument("--pairs", help="Pairs JSONL")
    p.add_argument("--metrics", default=DEFAULT_SCORE_METRICS,
                   help="Comma-separated metric ids, optionally with a profile (bleu:PS)")
    p.add_argument("--vectors", help="Word vector text file")
    p.add_argument("--sentence-vectors", help="Sentence vector JSONL")
    p.add_argument("--params", help="Classifier params JSON (enables nuc_prob)")
    p.add_argument("--external", help="Score CSV whose columns supply model metrics")
    p.add_argument("--out", help="Score CSV output")

    p = commands.add_parser("nuc-build", help="Build the next-utterance classification dataset")
    p.add_argument("--pairs", help="Pairs JSONL")
    p.add_argument("--k", type=_positive_int, default=NUC_SETTINGS['negatives_per_positive'])
    p.add_argument("--out", help="NUC dataset JSONL output")

    p = commands.add_parser("nuc-train", help="Train the reference classifier")
    p.add_argument("--in", dest="input", help="NUC dataset JSONL")
    p.add_argument("--vectors", help="Word vector text file")
    p.add_argument("--out", help="Classifier params JSON output")
    p.add_argument("--learning-rate", type=float, default=NUC_SETTINGS['learning_rate'])
    p.add_argument("--epochs", type=_positive_int, default=NUC_SETTINGS['epochs'])
    p.add_argument("--batch-size", type=_positive_int, default=NUC_SETTINGS['batch_size'])
    p.add_argument("--l2", type=float, default=NUC_SETTINGS['l2'])
    p.add_argument("--holdout", type=float, default=NUC_SETTINGS['holdout_fraction'],
                   help="Fraction of pairs held out for evaluation")

    p = commands.add_parser("nuc-score", help="Score pairs with nuc_prob and pjsd")
    p.add_argument("--pairs", help="Pairs JSONL")
    p.add_argument("--params", help="Classifier params JSON")
    p.add_argument("--vectors", help="Word vector text file")
    p.add_argument("--k", type=_positive_int, default=NUC_SETTINGS['negatives_per_positive'])
    p.add_argument("--out", help="Score CSV output")

    p = commands.add_parser("eval-corr", help="Spearman correlation of scores with gold labels")
    p.add_argument("--scores", help="Score CSV")
    p.add_argument("--labels", help="Gold label CSV")
    p.add_argument("--metrics", help="Columns to evaluate (default: all)")
    p.add_argument("--iterations", type=_positive_int, default=STATS_SETTINGS['bootstrap_iterations'])
    p.add_argument("--level", type=float, default=STATS_SETTINGS['confidence_level'])
    p.add_argument("--out", help="Correlation CSV output")
    p.add_argument("--summary", help="JSON summary output (default: <out>.summary.json)")

    p = commands.add_parser("eval-agreement", help="Inter-rater agreement")
    p.add_argument("--z", help="Per-rater z-score CSV")
    p.add_argument("--annotations", help="Annotations CSV for Fleiss' kappa")
    p.add_argument("--out", help="JSON summary output")

    p = commands.add_parser("analyze-residuals", help="Pairs where one model's residual beats another's")
    p.add_argument("--scores", help="Score CSV")
    p.add_argument("--labels", help="Gold label CSV")
    p.add_argument("--model-a", help="Score column of model a")
    p.add_argument("--model-b", help="Score column of model b")
    p.add_argument("--threshold-sd", type=float, default=STATS_SETTINGS['residual_threshold_sd'])
    p.add_argument("--above-mean-only", action="store_true", help="Only consider above-mean labels")
    p.add_argument("--out", help="Residual table CSV output")

    p = commands.add_parser("analyze-damsl", help="Median score difference per uptake phenomenon")
    p.add_argument("--scores", help="Score CSV")
    p.add_argument("--tags", help="Dialog-act tag CSV (pair_id,tag)")
    p.add_argument("--model-a", help="Score column of model a")
    p.add_argument("--model-b", help="Score column of model b")
    p.add_argument("--out", help="Phenomenon table CSV output")

    p = commands.add_parser("analyze-outcomes", help="Regress conversation outcomes on aggregated scores")
    p.add_argument("--scores", help="Score CSV")
    p.add_argument("--pairs", help="Pairs JSONL (maps pairs to conversations)")
    p.add_argument("--outcomes", help="Outcome CSV (conversation_id,<outcome>...)")
    p.add_argument("--outcome", help="Outcome column (default: first non-id column)")
    p.add_argument("--metrics", help="Score columns to regress on (default: all)")
    p.add_argument("--min-pairs", type=_positive_int, default=CORPUS_SETTINGS['min_pairs_per_conversation'])
    p.add_argument("--compare", help="A,B: cue-rate t-tests for conversations where A beats B")
    p.add_argument("--out", help="Regression table CSV output")
    p.add_argument("--summary", help="JSON summary output (default: <out>.summary.json)")

    p = commands.add_parser("selftest", help="Run the embedded oracle fixtures")
    p.add_argument("--out", help="Optional JSON report")

    p = commands.add_parser("synth", help="Write a synthetic copy-fraction corpus")
    p.add_argument("--n-pairs", type=_positive_int, default=RUN_SETTINGS['synthetic_pairs'])
    p.add_argument("--out", help="Pairs JSONL output")
    p.add_argument("--alpha-out", help="Copy-fraction CSV output")

    p = commands.add_parser("presets", help="List, save or delete user presets")
    p.add_argument("action", choices=["list", "save", "delete"])
    p.add_argument("name", nargs="?", help="Preset name (save, delete)")
    p.add_argument("--settings", help="JSON object of settings to save under the name")
    p.add_argument("--description", default="User preset")

    parser.subcommand_parsers = commands.choices
    return parser


# Input/output flag names per command, for hashing and manifests.
COMMAND_FILES = {
    "extract": (["input"], ["out"]),
    "annotate-agg": (["input"], ["out", "z_out"]),
    "score": (["pairs", "vectors", "sentence_vectors", "params", "external"], ["out"]),
    "nuc-build": (["pairs"], ["out"]),
    "nuc-train": (["input", "vectors"], ["out"]),
    "nuc-score": (["pairs", "params", "vectors"], ["out"]),
    "eval-corr": (["scores", "labels"], ["out", "summary"]),
    "eval-agreement": (["z", "annotations"], ["out"]),
    "analyze-residuals": (["scores", "labels"], ["out"]),
    "analyze-damsl": (["scores", "tags"], ["out"]),
    "analyze-outcomes": (["scores", "pairs", "outcomes"], ["out", "summary"]),
    "selftest": ([], ["out"]),
    "synth": ([], ["out", "alpha_out"]),
    "presets": ([], []),
}


class UptakeController:
    """Runs one sub-command with resolved settings."""

    def __init__(self, console: Optional[Console] = None):
        self.console = console or Console(stderr=True)
        self.config_manager = ConfigManager()
        self.task_executor: Optional[TaskExecutor] = None
        self._operations_running = False

    def _signal_handler(self, signum, frame):
        """Handle Ctrl+C: cancel pending work and exit."""
        if self._operations_running and self.task_executor is not None:
            self.console.print("\n[yellow]Interrupt received. Cleaning up...[/yellow]")
            self.task_executor.stop_all_tasks()
        sys.exit(130)

    # --- Settings ---

    def parse(self, argv: Sequence[str]) -> argparse.Namespace:
        """Parse argv, then re-parse with preset and config-file values as defaults."""
        parser = setup_argparse()
        args = parser.parse_args(list(argv))
        if args.command is None:
            parser.print_usage(sys.stderr)
            raise UsageError("a sub-command is required")

        try:
            overrides = self.config_manager.resolve_overrides(args.command, args.preset, args.config)
        except DataError:
            raise
        except ValueError as e:
            raise UsageError(str(e)) from e
        if not overrides:
            return args

        subparser = parser.subcommand_parsers[args.command]
        command_keys = {action.dest for action in subparser._actions}
        global_defaults, command_defaults = {}, {}
        for key, value in overrides.items():
            key = CONFIG_ALIASES.get(normalize_key(key), normalize_key(key))
            if key in GLOBAL_SETTINGS:
                global_defaults[key] = value
            elif key in command_keys:
                command_defaults[key] = value
            else:
                logger.debug("Setting '%s' does not apply to '%s'; ignored", key, args.command)
        parser.set_defaults(**global_defaults)
        subparser.set_defaults(**command_defaults)
        return parser.parse_args(list(argv))

    @staticmethod
    def require(args: argparse.Namespace, *names: str) -> None:
        missing = [name for name in names if getattr(args, name, None) in (None, "")]
        if missing:
            flags = ", ".join("--" + ("in" if name == "input" else name.replace('_', '-')) for name in missing)
            raise UsageError(f"{args.command}: missing required option(s) {flags}")

    def write_manifest(self, args: argparse.Namespace, primary_output: str) -> None:
        input_names, output_names = COMMAND_FILES[args.command]
        settings = vars(args)
        inputs = {name: settings.get(name) for name in input_names}
        outputs = {name: settings.get(name) for name in output_names}
        digest = self.config_manager.config_hash(args.command, settings, args.seed, inputs, outputs)
        self.config_manager.write_run_manifest(primary_output, args.command, digest, args.seed,
                                               list(inputs.values()), list(outputs.values()))

    # --- Dispatch ---

    def run(self, args: argparse.Namespace) -> int:
        handler = getattr(self, "cmd_" + args.command.replace('-', '_'))
        self._operations_running = True
        try:
            with TaskExecutor(args.jobs) as executor:
                self.task_executor = executor
                return handler(args, executor)
        finally:
            self._operations_running = False
            self.task_executor = None

    # --- Corpus ---

    def cmd_extract(self, args, executor) -> int:
        self.require(args, "input", "out")
        transcripts = load_transcripts(args.input, args.format, default_source=args.source)
        pairs = extract_pairs(transcripts, args.min_s_tokens, args.inaudible_marker)
        pairs = drop_small_conversations(pairs, args.min_pairs)
        write_pairs(args.out, pairs)
        logger.info("Wrote %d pair(s) from %d transcript(s) to %s", len(pairs), len(transcripts), args.out)
        self.write_manifest(args, args.out)
        return EXIT_OK

    def cmd_annotate_agg(self, args, executor) -> int:
        self.require(args, "input", "out")
        judgments = load_annotations(args.input)
        excluded = off_topic_pairs(judgments)
        if excluded:
            logger.info("Excluding %d pair(s) judged off-topic", len(excluded))
        labels = aggregate_labels(judgments)
        write_gold_labels(args.out, labels)
        if args.z_out:
            write_zscores(args.z_out, zscore_judgments(judgments))
        logger.info("Wrote %d gold label(s) to %s", len(labels), args.out)
        self.write_manifest(args, args.out)
        return EXIT_OK

    # --- Scoring ---

    def _featurizer(self, vectors_path: Optional[str]) -> Featurizer:
        return Featurizer(word_vectors=load_word_vectors(vectors_path) if vectors_path else None)

    def cmd_score(self, args, executor) -> int:
        self.require(args, "pairs", "out")
        metrics = parse_metrics(split_csv_option(args.metrics))
        pairs = load_pairs(args.pairs)
        word_vectors = load_word_vectors(args.vectors) if args.vectors else None
        classifier = None
        if args.params:
            params = ClassifierParams.load(args.params)
            featurizer = Featurizer(word_vectors=word_vectors)
            classifier = lambda pair: predict(params, pair, featurizer)  # noqa: E731
        config = ScoringConfig(
            metrics=metrics,
            word_vectors=word_vectors,
            sentence_vectors=load_sentence_vectors(args.sentence_vectors) if args.sentence_vectors else None,
            classifier=classifier,
            external=ScoreTable.from_csv(args.external) if args.external else None,
        )
        config.validate()
        table = score_all(pairs, config, executor)
        table.to_csv(args.out)
        logger.info("Scored %d pair(s) on %d metric(s) to %s", len(table), len(metrics), args.out)
        self.write_manifest(args, args.out)
        return EXIT_OK

    def cmd_nuc_build(self, args, executor) -> int:
        self.require(args, "pairs", "out")
        examples = build_nuc_dataset(load_pairs(args.pairs), args.k, args.seed, executor)
        write_nuc_dataset(args.out, examples)
        self.write_manifest(args, args.out)
        return EXIT_OK

    def cmd_nuc_train(self, args, executor) -> int:
        self.require(args, "input", "out")
        examples = load_nuc_dataset(args.input)
        train, held_out = split_by_pair(examples, args.holdout, args.seed)
        featurizer = self._featurizer(args.vectors)
        params = train_reference_classifier(train, featurizer, learning_rate=args.learning_rate,
                                            epochs=args.epochs, batch_size=args.batch_size, l2=args.l2,
                                            seed=args.seed, executor=executor)
        if held_out:
            params.metadata["holdout"] = evaluate(params, held_out, featurizer)
            params.metadata["holdout"]["n_examples"] = len(held_out)
            logger.info("Held-out: CE %.4f, mean pJSD %.4f, accuracy %.4f",
                        params.metadata["holdout"]["cross_entropy"], params.metadata["holdout"]["mean_pjsd"],
                        params.metadata["holdout"]["accuracy"])
        params.save(args.out)
        self.write_manifest(args, args.out)
        return EXIT_OK

    def cmd_nuc_score(self, args, executor) -> int:
        self.require(args, "pairs", "params", "out")
        params = ClassifierParams.load(args.params)
        table = score_corpus_pjsd(params, load_pairs(args.pairs), self._featurizer(args.vectors),
                                  args.k, args.seed, executor)
        table.to_csv(args.out)
        self.write_manifest(args, args.out)
        return EXIT_OK

    # --- Evaluation ---

    def cmd_eval_corr(self, args, executor) -> int:
        self.require(args, "scores", "labels", "out")
        scores = ScoreTable.from_csv(args.scores)
        labels = {pid: label.value for pid, label in load_gold_labels(args.labels).items()}
        metrics = split_csv_option(args.metrics) or scores.columns

        def correlate(metric):
            present = scores.present(metric)
            ids = sorted(set(present) & set(labels))
            try:
                result = bootstrap_ci([present[i] for i in ids], [labels[i] for i in ids],
                                      args.iterations, args.level, args.seed)
            except ValueError as e:
                logger.warning("%s: %s", metric, e)
                return {"metric": metric, "n": len(ids), "rho": None, "ci_low": None, "ci_high": None,
                        "degenerate_resamples": None, "warning": True, "error": str(e)}
            return {"metric": metric, "n": result.n, "rho": result.rho, "ci_low": result.ci_low,
                    "ci_high": result.ci_high, "degenerate_resamples": result.degenerate_resamples,
                    "warning": result.warning, "error": None}

        for metric in metrics:
            scores.column(metric)
        rows = executor.map_ordered(correlate, metrics, "Bootstrapping")
        frame = pd.DataFrame(rows, columns=["metric", "n", "rho", "ci_low", "ci_high",
                                            "degenerate_resamples", "warning", "error"])
        write_csv_table(args.out, frame, SIMILARITY_SETTINGS['csv_float_format'])
        summary_path = args.summary or f"{args.out}.summary.json"
        write_json(summary_path, {"seed": args.seed, "iterations": args.iterations, "level": args.level,
                                  "metrics": {row["metric"]: row for row in rows}})

        table = Table(title="Spearman correlation with gold labels")
        table.add_column("Metric", style="cyan", no_wrap=True)
        table.add_column("n", justify="right")
        table.add_column("rho", justify="right")
        table.add_column(f"{args.level:.0%} CI", justify="right")
        for row in rows:
            if row["rho"] is None:
                table.add_row(row["metric"], str(row["n"]), "-", row["error"])
            else:
                flag = " [yellow]![/yellow]" if row["warning"] else ""
                table.add_row(row["metric"], str(row["n"]), f"{row['rho']:.3f}",
                              f"[{row['ci_low']:.3f}, {row['ci_high']:.3f}]{flag}")
        self.console.print(table)
        self.write_manifest(args, args.out)
        return EXIT_OK

    def cmd_eval_agreement(self, args, executor) -> int:
        self.require(args, "z", "out")
        rater_ids, pair_ids, z = zscore_matrix(load_zscores(args.z))
        rhos = leave_out_rhos(z, rater_ids)
        if not rhos:
            raise ValueError("no rater shares enough items for leave-out agreement")
        summary: Dict[str, Any] = {
            "n_raters": len(rater_ids),
            "n_items": len(pair_ids),
            "leave_out_agreement": float(np.mean(list(rhos.values()))),
            "per_rater": rhos,
            "fleiss_kappa": None,
        }
        if args.annotations:
            items, counts = rating_counts(load_annotations(args.annotations))
            summary["fleiss_kappa"] = fleiss_kappa(counts)
            summary["fleiss_items"] = len(items)
        write_json(args.out, summary)

        table = Table(title="Rater agreement")
        table.add_column("Statistic", style="cyan")
        table.add_column("Value", justify="right")
        table.add_row("leave-out agreement", f"{summary['leave_out_agreement']:.3f}")
        if summary["fleiss_kappa"] is not None:
            table.add_row("Fleiss' kappa", f"{summary['fleiss_kappa']:.3f}")
        self.console.print(table)
        self.write_manifest(args, args.out)
        return EXIT_OK

    # --- Analyses ---

    def cmd_analyze_residuals(self, args, executor) -> int:
        self.require(args, "scores", "labels", "model_a", "model_b", "out")
        scores = ScoreTable.from_csv(args.scores)
        labels = {pid: label.value for pid, label in load_gold_labels(args.labels).items()}
        frame = residual_gap_table(labels, scores.present(args.model_a), scores.present(args.model_b),
                                   args.threshold_sd, args.above_mean_only)
        write_csv_table(args.out, frame, SIMILARITY_SETTINGS['csv_float_format'])
        logger.info("%d of %d pair(s) where %s outperforms %s", int(frame["selected"].sum()), len(frame),
                    args.model_a, args.model_b)
        self.write_manifest(args, args.out)
        return EXIT_OK

    def cmd_analyze_damsl(self, args, executor) -> int:
        self.require(args, "scores", "tags", "model_a", "model_b", "out")
        scores = ScoreTable.from_csv(args.scores)
        ids = scores.complete_rows([args.model_a, args.model_b])
        if not ids:
            raise ValueError(f"no pair has both '{args.model_a}' and '{args.model_b}' scores")
        q_a = dict(zip(ids, quantile_transform([scores.get(i, args.model_a) for i in ids])))
        q_b = dict(zip(ids, quantile_transform([scores.get(i, args.model_b) for i in ids])))
        tags = {}
        for line_num, row in read_csv_rows(args.tags, ("pair_id", "tag")):
            if row['pair_id'] in tags:
                raise DataError(f"duplicate pair id '{row['pair_id']}'", args.tags, line_num)
            tags[row['pair_id']] = row['tag']

        deltas = phenomenon_delta(q_a, q_b, tags)
        frame = pd.DataFrame([(d.phenomenon, d.n, d.delta, d.p_value) for d in deltas.values()],
                             columns=["phenomenon", "n", "delta", "p_value"])
        write_csv_table(args.out, frame, SIMILARITY_SETTINGS['csv_float_format'])
        self.write_manifest(args, args.out)
        return EXIT_OK

    def _load_outcomes(self, filepath: str, outcome: Optional[str]):
        rows = read_csv_rows(filepath, ("conversation_id",))
        if not rows:
            raise DataError("no outcome rows", filepath)
        columns = [col for col in rows[0][1] if col != "conversation_id"]
        outcome = outcome or (columns[0] if columns else None)
        if outcome not in columns:
            raise DataError(f"no outcome column '{outcome}'", filepath, 1)
        values = {}
        for line_num, row in rows:
            if row[outcome] == "":
                continue
            try:
                values[row['conversation_id']] = float(row[outcome])
            except ValueError as e:
                raise DataError(f"invalid outcome '{row[outcome]}'", filepath, line_num) from e
        return outcome, values

    def cmd_analyze_outcomes(self, args, executor) -> int:
        self.require(args, "scores", "pairs", "outcomes", "out")
        scores = ScoreTable.from_csv(args.scores)
        pairs = load_pairs(args.pairs)
        outcome, outcomes = self._load_outcomes(args.outcomes, args.outcome)
        metrics = split_csv_option(args.metrics) or scores.columns

        def aggregate(metric):
            agg = conversation_aggregate(scores, pairs, metric, args.min_pairs)
            return agg[agg["conversation_id"].isin(outcomes)]

        rows = []
        for metric in metrics:
            agg = aggregate(metric)
            y = [outcomes[cid] for cid in agg["conversation_id"]]
            result = ols(y, agg[metric].to_numpy(), [agg["n_pairs"].to_numpy()], names=[metric, "n_pairs"])
            rows.append({"metric": metric, "n": result.n, "coefficient": result.coefficients[metric],
                         "std_error": result.std_errors[metric], "standardized": result.standardized[metric],
                         "t_value": result.t_values[metric], "p_value": result.p_values[metric],
                         "r_squared": result.r_squared, "df": result.df, "p_method": result.p_method,
                         "small_sample": result.small_sample})
        write_csv_table(args.out, pd.DataFrame(rows), SIMILARITY_SETTINGS['csv_float_format'])

        summary: Dict[str, Any] = {"outcome": outcome, "seed": args.seed, "regressions": rows}
        if args.compare:
            model_a, model_b = self._compare_pair(args.compare)
            agg_a, agg_b = aggregate(model_a), aggregate(model_b)
            # residual_gap_table keys rows by "pair_id"; here they are conversation ids
            gap = residual_gap_table(outcomes, dict(zip(agg_a["conversation_id"], agg_a[model_a])),
                                     dict(zip(agg_b["conversation_id"], agg_b[model_b])))
            selected = set(gap.loc[gap["selected"], "pair_id"])
            tests = compare_cue_rates(pairs, selected)
            summary["compare"] = {
                "model_a": model_a,
                "model_b": model_b,
                "conversations": sorted(selected),
                "cue_rates": {name: vars(test) for name, test in tests.items()},
            }
        write_json(args.summary or f"{args.out}.summary.json", summary)
        self.write_manifest(args, args.out)
        return EXIT_OK

    @staticmethod
    def _compare_pair(value: str):
        models = split_csv_option(value)
        if len(models) != 2:
            raise UsageError(f"--compare expects two columns A,B, got '{value}'")
        return models[0], models[1]

    # --- Utilities ---

    def cmd_selftest(self, args, executor) -> int:
        results = run_selftest()
        render_results(results, self.console)
        if args.out:
            write_report(args.out, results)
        return EXIT_OK if all(r.passed for r in results) else EXIT_DATA

    def cmd_synth(self, args, executor) -> int:
        self.require(args, "out", "alpha_out")
        pairs, alphas = generate_copy_corpus(args.n_pairs, args.seed)
        write_corpus(pairs, alphas, args.out, args.alpha_out)
        self.write_manifest(args, args.out)
        return EXIT_OK

    def cmd_presets(self, args, executor) -> int:
        if args.action == "list":
            table = Table(title="Presets")
            table.add_column("Name", style="cyan", no_wrap=True)
            table.add_column("Type")
            table.add_column("Description")
            for preset in self.config_manager.list_presets():
                table.add_row(preset["name"], preset["type"], preset["description"])
            self.console.print(table)
            return EXIT_OK

        if not args.name:
            raise UsageError(f"presets {args.action}: a preset name is required")
        if args.action == "save":
            self.require(args, "settings")
            settings = read_json(args.settings)
            if not isinstance(settings, dict):
                raise DataError("preset settings must be a JSON object", args.settings)
            self.config_manager.save_preset(args.name, settings, args.description)
            self.console.print(f"✅ Saved preset '{args.name}'")
        elif not self.config_manager.delete_preset(args.name):
            raise ValueError(f"no user preset '{args.name}'")
        else:
            self.console.print(f"🗑️  Deleted preset '{args.name}'")
        return EXIT_OK


def dispatch(argv: Optional[List[str]] = None, console: Optional[Console] = None,
             handle_signals: bool = False) -> int:
    """Run one command line and return its exit code."""
    argv = sys.argv[1:] if argv is None else list(argv)
    controller = UptakeController(console)
    if handle_signals:
        signal.signal(signal.SIGINT, controller._signal_handler)
    setup_logging()
    try:
        args = controller.parse(argv)
        setup_logging(args.log_level, args.quiet)
        is_valid, errors = validate_config()
        if not is_valid:
            for error in errors:
                logger.error("Configuration: %s", error)
            return EXIT_USAGE
        return controller.run(args)
    except UsageError as e:
        print(f"control.py: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        # --help and --version
        return e.code if isinstance(e.code, int) else EXIT_OK
    except (DataError, ValueError, KeyError, OSError) as e:
        logger.error("%s", e.args[0] if isinstance(e, KeyError) and e.args else e)
        return EXIT_DATA


def main():
    """Main entry point."""
    sys.exit(dispatch(handle_signals=True))


if __name__ == "__main__":
    main()
