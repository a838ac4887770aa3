from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from core.checkpoint import load_checkpoint
from core.exceptions import ActivationLearningError
from core.inference import classify
from data.exceptions import DatasetError
from experiments.config import ConfigError, ExperimentSpec, canonical_json, load_config
from experiments.properties import run_property_suite
from experiments.report import build_report
from experiments.runner import ExperimentRunner

# Subcommands that run a protocol, and the protocol they force (None: the config's own).
PROTOCOL_COMMANDS = {
    "train": None,
    "eval": "evaluation",
    "generate": "generation",
    "complete": "completion",
    "score": "scoring",
    "features": "features",
}


class Command(BaseCommand):
    help = "Train, evaluate and inspect activation-learning networks."

    def add_arguments(self, parser):
        subparsers = parser.add_subparsers(dest="subcommand", required=True)
        for name in PROTOCOL_COMMANDS:
            sub = subparsers.add_parser(name, help=f"run the {PROTOCOL_COMMANDS[name] or 'configured'} protocol")
            self.add_experiment_arguments(sub)

        classify_parser = subparsers.add_parser("classify", help="classify one test-set image")
        self.add_experiment_arguments(classify_parser)
        classify_parser.add_argument("--index", type=int, default=0, help="test-set index to classify")

        verify = subparsers.add_parser("verify-properties", help="run the synthetic property suite")
        verify.add_argument("--seed", type=int, default=0)
        verify.add_argument("--out", help="write the JSON report here")
        verify.add_argument(
            "--negative-control", action="store_true",
            help="use the sign-flipped update rule, which is expected to fail",
        )

        report = subparsers.add_parser("report", help="merge run directories into comparison CSVs")
        report.add_argument("runs", nargs="+", help="run directories or parents of run directories")
        report.add_argument("--out", default="report")

    @staticmethod
    def add_experiment_arguments(parser):
        parser.add_argument("--config", help="experiment config file (section.key = value)")
        parser.add_argument("--seed", type=int)
        parser.add_argument("--out", help="output directory (classify: JSON file)")
        parser.add_argument("--checkpoint")
        parser.add_argument("--dataset-dir")
        parser.add_argument("--deterministic", action="store_true", default=None)
        parser.add_argument("--set", action="append", default=[], dest="overrides", metavar="KEY=VALUE")
        parser.add_argument("--no-record", action="store_true", help="do not record the run in the database")

    def handle(self, *args, **options):
        subcommand = options["subcommand"]
        try:
            if subcommand == "verify-properties":
                return self.verify_properties(options)
            if subcommand == "report":
                return self.report(options)
            spec = self.load_spec(subcommand, options)
            if subcommand == "classify":
                return self.classify(spec, options)
            return self.run_protocol(spec, subcommand, options)
        except (ConfigError, FileNotFoundError) as exc:
            raise CommandError(str(exc))
        except (ActivationLearningError, DatasetError) as exc:
            raise CommandError(f"{type(exc).__name__}: {exc}")

    # ------------------ handlers ------------------

    def load_spec(self, subcommand, options):
        flags = {
            "experiment.seed": options["seed"],
            "experiment.deterministic": options["deterministic"],
            "data.dir": options["dataset_dir"],
            "model.checkpoint": options["checkpoint"],
        }
        if subcommand != "classify":
            flags["experiment.out"] = options["out"]
        return ExperimentSpec.from_config(load_config(options["config"], options["overrides"], flags))

    def run_protocol(self, spec, subcommand, options):
        protocol = PROTOCOL_COMMANDS[subcommand]
        if subcommand == "score" and not spec.config["model"]["checkpoint"]:
            # Without a checkpoint, scoring trains an unlabelled model on the normal classes first.
            protocol = "anomaly"
        runner = ExperimentRunner(spec, record=not options["no_record"])
        summary = runner.execute(protocol)
        self.stdout.write(canonical_json(summary, indent=2))
        self.stdout.write(self.style.SUCCESS(f"{summary['protocol']} run finished: {runner.out}"))

    def classify(self, spec, options):
        checkpoint = spec.config["model"]["checkpoint"]
        if not checkpoint:
            raise ConfigError("classify needs --checkpoint.")
        runner = ExperimentRunner(spec, record=False)
        model = load_checkpoint(checkpoint)
        test = runner.load_split("test")
        index = options["index"]
        if not 0 <= index < len(test):
            raise ConfigError(f"--index {index} is outside the {len(test)}-image test set.")
        result = classify(model, runner.eval_rows(test.subset([index]))[0], runner.codec)
        payload = {
            "index": index,
            "label": result.label,
            "true_label": int(test.labels[index]),
            "activations": [float(a) for a in result.activations],
            "degenerate": result.degenerate,
        }
        self.emit(payload, options["out"])
        self.stdout.write(self.style.SUCCESS(f"image {index}: predicted {result.label}, true {payload['true_label']}"))

    def verify_properties(self, options):
        rule = "sign_flipped" if options["negative_control"] else "competitive"
        report = run_property_suite(seed=options["seed"], rule=rule)
        self.emit(report.as_dict(), options["out"])
        verdict = "passed" if report.passed else f"{len(report.failed())} check(s) failed"
        style = self.style.SUCCESS if report.passed else self.style.WARNING
        self.stdout.write(style(f"Property suite ({rule} rule, seed {options['seed']}): {verdict}"))

    def report(self, options):
        written = build_report(options["runs"], options["out"])
        for name, path in written.items():
            self.stdout.write(f"{name}: {path}")
        self.stdout.write(self.style.SUCCESS(f"Report written to {options['out']}"))

    def emit(self, payload, out):
        text = canonical_json(payload, indent=2)
        if out:
            path = Path(out)
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text + "\n", encoding="utf-8")
        self.stdout.write(text)
