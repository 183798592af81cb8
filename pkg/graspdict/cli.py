"""Command line interface ``graspdict``.

Exit codes: 0 success, 1 invalid input, 2 runtime failure, 64 usage
error (unknown subcommand or flag).
"""

import argparse
import logging
import os
import sys

import argcomplete
import numpy as np

from graspdict import GraspDictError, InputError, RuntimeFailure, __version__
from graspdict.config import ARMS, TrainConfig

logger = logging.getLogger(__name__)

EXIT_INPUT = 1
EXIT_RUNTIME = 2
EXIT_USAGE = 64
DATA_DIR_VARIABLE = "GRASPDICT_DATA_DIR"
DICTIONARY_CHECKPOINT = "dictionary.npz"
ESTIMATOR_CHECKPOINT = "estimator.npz"


class UsageError(Exception):
    pass


class GradCheckFailed(RuntimeFailure):
    pass


class _ArgumentParser(argparse.ArgumentParser):

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def main(argv=None):
    sys.exit(dispatch(argv))


def dispatch(argv=None):
    parser = create_parser()
    argcomplete.autocomplete(parser)
    try:
        args = parser.parse_args(argv)
    except UsageError as error:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"{error}\n")
        return EXIT_USAGE
    if not hasattr(args, "func"):
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    _configure_logging(args)
    try:
        args.func(args)
    except (InputError, FileNotFoundError) as error:
        sys.stderr.write(f"Error: {error}\n")
        return EXIT_INPUT
    except (GraspDictError, np.linalg.LinAlgError, FloatingPointError,
            OSError) as error:
        sys.stderr.write(f"Error: {error}\n")
        return EXIT_RUNTIME
    return 0


def _configure_logging(args):
    level = logging.INFO
    if getattr(args, "verbose", False):
        level = logging.DEBUG
    elif getattr(args, "quiet", False):
        level = logging.WARNING
    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, "_graspdict", False):
            root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(
        "%(levelname)s %(name)s: %(message)s"))
    handler._graspdict = True
    root.addHandler(handler)
    root.setLevel(level)


def create_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--verbose", "-v", action="store_true")
    common.add_argument("--quiet", "-q", action="store_true")
    common.add_argument("--progress", action="store_true",
                        help="Show progress bars for training epochs")

    parser = _ArgumentParser(prog="graspdict")
    subparsers = parser.add_subparsers(help="commands")

    synth_parser = subparsers.add_parser(
        "synth", parents=[common], help="Generate synthetic grasp sequences")
    synth_parser.add_argument("--sequences", type=int, required=True)
    synth_parser.add_argument("--frames", type=int, required=True)
    synth_parser.add_argument("--seed", type=int, default=7)
    synth_parser.add_argument("--out", required=True,
                              help="Output interchange file")
    synth_parser.set_defaults(func=run_synth)

    split_parser = subparsers.add_parser(
        "split", parents=[common],
        help="Split a dataset into labeled and unlabeled frames")
    _add_data_arguments(split_parser)
    split_parser.add_argument("--ratio", type=float, default=0.05)
    split_parser.add_argument("--seed", type=int, default=7)
    split_parser.add_argument("--out", required=True,
                              help="Output prefix; writes <out>_labeled.jsonl "
                              "and <out>_unlabeled.jsonl")
    split_parser.set_defaults(func=run_split)

    train_dict_parser = subparsers.add_parser(
        "train-dict", parents=[common],
        help="Phase I: train the pose dictionary module")
    _add_data_arguments(train_dict_parser)
    _add_config_arguments(train_dict_parser)
    train_dict_parser.add_argument(
        "--autoencoder", action="store_true",
        help="Train the encoder-decoder reconstructor instead")
    train_dict_parser.add_argument("--plot", choices=["pdf", "png"],
                                   help="Draw the loss history")
    train_dict_parser.add_argument("--out", required=True,
                                   help="Checkpoint directory")
    train_dict_parser.set_defaults(func=run_train_dict)

    train_est_parser = subparsers.add_parser(
        "train-est", parents=[common],
        help="Phase II: train the pose estimator")
    _add_data_arguments(train_est_parser)
    _add_config_arguments(train_est_parser)
    train_est_parser.add_argument(
        "--ckpt", help="Checkpoint directory holding the Phase I module")
    train_est_parser.add_argument("--validation",
                                  help="Interchange file for validation MPJPE")
    train_est_parser.add_argument(
        "--pseudo-labels", action="store_true",
        help="Add temporally interpolated pseudo labels")
    train_est_parser.add_argument("--plot", choices=["pdf", "png"],
                                  help="Draw the loss history")
    train_est_parser.add_argument("--out", required=True,
                                  help="Checkpoint directory")
    train_est_parser.set_defaults(func=run_train_est)

    eval_parser = subparsers.add_parser(
        "eval", parents=[common], help="Evaluate estimates on a dataset")
    _add_data_arguments(eval_parser)
    source = eval_parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--ckpt", help="Checkpoint directory of an estimator")
    source.add_argument("--predictions",
                        help="Interchange file whose points_3d are estimates")
    eval_parser.add_argument("--hand-group", choices=["hand", "wrist"],
                             default="hand")
    eval_parser.add_argument("--out", required=True, help="Output prefix")
    eval_parser.set_defaults(func=run_eval)

    benchmark_parser = subparsers.add_parser(
        "benchmark", parents=[common], help="Compare all training arms")
    _add_data_arguments(benchmark_parser)
    _add_config_arguments(benchmark_parser)
    benchmark_parser.add_argument("--hand-group", choices=["hand", "wrist"],
                                  default="hand")
    benchmark_parser.add_argument("--plot", choices=["pdf", "png"])
    benchmark_parser.add_argument("--out", required=True, help="Output prefix")
    benchmark_parser.set_defaults(func=run_benchmark_command)

    sweep_parser = subparsers.add_parser(
        "sweep", parents=[common], help="Robustness sweep of one setting")
    _add_data_arguments(sweep_parser)
    _add_config_arguments(sweep_parser)
    sweep_parser.add_argument("--axis", choices=["k", "lambda_r", "ratio"],
                              required=True)
    sweep_parser.add_argument("--values", nargs="+", type=float,
                              required=True)
    sweep_parser.add_argument("--with-baseline", action="store_true")
    sweep_parser.add_argument("--hand-group", choices=["hand", "wrist"],
                              default="hand")
    sweep_parser.add_argument("--plot", choices=["pdf", "png"])
    sweep_parser.add_argument("--out", required=True, help="Output prefix")
    sweep_parser.set_defaults(func=run_sweep)

    transform_parser = subparsers.add_parser(
        "transform", parents=[common],
        help="Export the cylindrical hand vectors as CSV")
    _add_data_arguments(transform_parser)
    transform_parser.add_argument("--out", required=True)
    transform_parser.set_defaults(func=run_transform)

    gradcheck_parser = subparsers.add_parser(
        "gradcheck", parents=[common],
        help="Check analytic gradients against finite differences")
    gradcheck_parser.add_argument(
        "--target", choices=["encoder", "dictionary", "autoencoder",
                             "estimator", "total"], default="total")
    gradcheck_parser.add_argument("--seed", type=int, default=7)
    gradcheck_parser.add_argument("--tolerance", type=float, default=1e-4)
    gradcheck_parser.add_argument("--max-entries", type=int, default=16)
    gradcheck_parser.set_defaults(func=run_gradcheck)

    plot_atoms_parser = subparsers.add_parser(
        "plot-atoms", parents=[common],
        help="Plot the atoms of a trained dictionary")
    plot_atoms_parser.add_argument("--ckpt", required=True)
    plot_atoms_parser.add_argument("--format", choices=["pdf", "png"],
                                   default="pdf")
    plot_atoms_parser.add_argument("--out", required=True,
                                   help="Output prefix")
    plot_atoms_parser.set_defaults(func=run_plot_atoms)

    version_parser = subparsers.add_parser(
        "version", help="Show version")
    version_parser.set_defaults(func=show_version)
    return parser


def _add_data_arguments(parser):
    parser.add_argument("--data", required=True, help="Interchange file")
    parser.add_argument("--contact-only", action="store_true",
                        help="Keep only frames flagged as in contact")


def _int_tuple(value):
    return tuple(int(part) for part in value.replace(",", " ").split())


def _add_config_arguments(parser):
    parser.add_argument("--config", help="key=value configuration file")
    parser.add_argument("--k", type=int)
    parser.add_argument("--lambda-dict", type=float)
    parser.add_argument("--lambda-r", type=float)
    parser.add_argument("--ratio", type=float)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--batch-size", type=int)
    parser.add_argument("--epochs", type=int, help="Phase I epochs")
    parser.add_argument("--est-epochs", type=int, help="Phase II epochs")
    parser.add_argument("--unlabeled-ratio", type=float)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--seeds", type=_int_tuple)
    parser.add_argument("--hidden", type=_int_tuple)
    parser.add_argument("--gc-widths", type=_int_tuple)
    parser.add_argument("--dict-regularizer", choices=["interval", "l2"])
    parser.add_argument("--l2-weight", type=float)
    parser.add_argument("--no-frame-gradient", dest="frame_gradient",
                        action="store_false", default=None)
    parser.add_argument("--test-fraction", type=float)
    parser.add_argument("--threads", type=int)
    parser.add_argument("--arms", nargs="+", choices=ARMS)


def build_config(args):
    """Defaults < --config file < flags."""
    config = TrainConfig()
    if getattr(args, "config", None):
        config = TrainConfig.from_file(args.config)
    flags = {name: getattr(args, name, None) for name in (
        "k", "lambda_dict", "lambda_r", "ratio", "lr", "batch_size", "epochs",
        "est_epochs", "unlabeled_ratio", "seed", "seeds", "hidden",
        "gc_widths", "dict_regularizer", "l2_weight", "frame_gradient",
        "test_fraction", "threads", "arms", "data", "out")}
    return config.override(flags).validate()


def resolve_data_path(path):
    """Relative paths missing in the working directory are looked up below
    $GRASPDICT_DATA_DIR."""
    data_dir = os.environ.get(DATA_DIR_VARIABLE)
    if data_dir and not os.path.isabs(path) and not os.path.exists(path):
        return os.path.join(data_dir, path)
    return path


def _load_records(args):
    from graspdict.data import contact_only, load_dataset

    records = load_dataset(resolve_data_path(args.data))
    if args.contact_only:
        records = contact_only(records)
        logger.info("- Kept %d frames in contact", len(records))
    return records


def run_synth(args):
    from graspdict.data import save_dataset
    from graspdict.synth import synth_generate

    save_dataset(args.out, synth_generate(args.sequences, args.frames,
                                          args.seed))


def run_split(args):
    from dataclasses import replace
    from graspdict.data import save_dataset, split_semi_supervised

    split = split_semi_supervised(_load_records(args), args.ratio, args.seed)
    save_dataset(f"{args.out}_labeled.jsonl", split.labeled)
    save_dataset(f"{args.out}_unlabeled.jsonl",
                 [replace(record, pose3d=None) for record in split.unlabeled])


def run_train_dict(args):
    from graspdict.autoencoder import train_autoencoder
    from graspdict.data import split_semi_supervised
    from graspdict.dictionary import save_reconstructor, train_phase1
    from graspdict.report import write_csv_with_header

    config = build_config(args)
    split = split_semi_supervised(_load_records(args), config.ratio,
                                  config.seed)
    poses = [record.pose3d for record in split.labeled]
    train = train_autoencoder if args.autoencoder else train_phase1
    module, history = train(poses, config, progress=args.progress)
    os.makedirs(args.out, exist_ok=True)
    save_reconstructor(os.path.join(args.out, DICTIONARY_CHECKPOINT), module,
                       config)
    write_csv_with_header(history, os.path.join(args.out,
                                                "dictionary_history.csv"),
                          config.to_dict())
    _plot_history(history, os.path.join(args.out, "dictionary"), args.plot)


def run_train_est(args):
    from graspdict.data import (
        interpolate_pseudo_labels, load_dataset, split_semi_supervised)
    from graspdict.dictionary import load_reconstructor
    from graspdict.estimator import save_estimator, train_phase2
    from graspdict.report import write_csv_with_header

    config = build_config(args)
    split = split_semi_supervised(_load_records(args), config.ratio,
                                  config.seed)
    reconstructor = None
    if config.lambda_r > 0:
        if not args.ckpt:
            raise InputError("--ckpt is required when lambda_r > 0")
        reconstructor = load_reconstructor(
            os.path.join(args.ckpt, DICTIONARY_CHECKPOINT))
    validation = load_dataset(resolve_data_path(args.validation)) \
        if args.validation else None
    pseudo_pairs = interpolate_pseudo_labels(split) if args.pseudo_labels \
        else None
    network, history = train_phase2(
        split, reconstructor, config, validation=validation,
        pseudo_pairs=pseudo_pairs, progress=args.progress)
    os.makedirs(args.out, exist_ok=True)
    save_estimator(os.path.join(args.out, ESTIMATOR_CHECKPOINT), network,
                   config)
    write_csv_with_header(history, os.path.join(args.out,
                                                "estimator_history.csv"),
                          config.to_dict())
    _plot_history(history, os.path.join(args.out, "estimator"), args.plot)


def _plot_history(history, output_prefix, output_format):
    if output_format:
        from graspdict.plotting import plot_history
        plot_history(history, output_prefix, output_format)


def run_eval(args):
    from graspdict.data import (
        ValidationError, load_dataset, stack_inputs, stack_targets)
    from graspdict.estimator import load_estimator
    from graspdict.evaluation import mpjpe, pck_curve
    from graspdict.report import EvalReport, MethodResult, ReportWriter

    records = _load_records(args)
    references = stack_targets(records)
    if args.predictions:
        predicted = {record.key: record.pose3d
                     for record in load_dataset(args.predictions)}
        missing = [record.key for record in records
                   if predicted.get(record.key) is None]
        if missing:
            raise ValidationError(f"No prediction for frame {missing[0]}")
        estimates = np.stack([predicted[record.key] for record in records])
        method = "predictions"
    else:
        network = load_estimator(os.path.join(args.ckpt, ESTIMATOR_CHECKPOINT))
        estimates = network.predict(stack_inputs(records))
        method = "estimator"
    result = MethodResult(
        method=method, seeds=[],
        mpjpe_hand=[mpjpe(estimates, references, args.hand_group)],
        mpjpe_object=[mpjpe(estimates, references, "object")],
        mpjpe_all=[mpjpe(estimates, references, "all")],
        pck=[pck_curve(estimates, references)])
    report = EvalReport(config={}, seeds=[], methods=[result],
                        hand_group=args.hand_group)
    ReportWriter(report, args.out).write_all()
    logger.info("MPJPE hand %.3f mm, object %.3f mm",
                result.mpjpe_hand[0], result.mpjpe_object[0])


def run_benchmark_command(args):
    from graspdict.benchmark import run_benchmark
    from graspdict.report import ReportWriter

    config = build_config(args)
    report = run_benchmark(_load_records(args), config,
                           hand_group=args.hand_group, progress=args.progress)
    ReportWriter(report, args.out).write_all()
    if args.plot:
        from graspdict.plotting import plot_pck
        plot_pck(report, args.out, args.plot)
    failed = [result.method for result in report.methods if result.failed]
    if failed and len(failed) == len(report.methods):
        raise RuntimeFailure("Every benchmark arm failed")


def run_sweep(args):
    from graspdict.benchmark import sweep
    from graspdict.report import write_csv_with_header

    config = build_config(args)
    table = sweep(_load_records(args), args.axis, args.values, config,
                  with_baseline=args.with_baseline,
                  hand_group=args.hand_group, progress=args.progress)
    write_csv_with_header(table, f"{args.out}_sweep.csv", config.to_dict(),
                          note=f"sweep over {args.axis}")
    if args.plot:
        from graspdict.plotting import plot_sweep
        plot_sweep(table, args.axis, args.out, args.plot)


def run_transform(args):
    from graspdict.data import transform_dataset

    transform_dataset(_load_records(args), args.out)


def run_gradcheck(args):
    from graspdict.numerics import gradcheck

    program = gradcheck_program(args.target, args.seed)
    report = gradcheck(program, tolerance=args.tolerance,
                       max_entries=args.max_entries, seed=args.seed)
    for line in report.lines():
        print(line)
    if not report.passed:
        raise GradCheckFailed(
            f"Gradient check of '{args.target}' failed "
            f"({report.max_relative_error:.3e} > {args.tolerance:.1e})")


def gradcheck_program(target, seed):
    """Loss of ``target`` on a tiny synthetic instance as a GradProgram."""
    from graspdict import numerics as nx
    from graspdict.autoencoder import AutoencoderModule
    from graspdict.data import DatasetSplit, stack_inputs, stack_targets
    from graspdict.dictionary import DictionaryModule, init_dictionary
    from graspdict.estimator import (
        EstimatorNetwork, supervised_loss_tensor, total_loss_tensor)
    from graspdict.geometry import cyl_encode_batch
    from graspdict.synth import synth_generate

    records = synth_generate(2, 3, seed)
    inputs, targets = stack_inputs(records), stack_targets(records)
    hidden = (12, 6, 6, 12, 6, 6, 12)
    h = cyl_encode_batch(targets)
    dictionary = DictionaryModule.create(
        init_dictionary(h, 4, seed).atoms, hidden, seed)
    if target in ("encoder", "dictionary"):
        store = dictionary.store
        if target == "encoder":
            def forward(store):
                return dictionary.rec_loss(h, mode="infer",
                                           update_stats=False)
        else:
            def forward(store):
                return dictionary.rec_loss(
                    h, mode="infer", update_stats=False) + dictionary.penalty()
        return nx.GradProgram(store, forward)
    if target == "autoencoder":
        autoencoder = AutoencoderModule.create(4, hidden, seed)
        return nx.GradProgram(autoencoder.store, lambda store: (
            autoencoder.rec_loss(h, mode="infer", update_stats=False)))
    split = DatasetSplit(labeled=records[:3], unlabeled=records[3:],
                         seed=seed, ratio=0.5)
    labeled_inputs, labeled_targets = split.labeled_arrays()
    network = EstimatorNetwork.create(labeled_inputs, labeled_targets,
                                      gc_widths=(6, 8), seed=seed)
    if target == "estimator":
        return nx.GradProgram(network.store, lambda store: (
            supervised_loss_tensor(network.forward(
                inputs, update_stats=False), targets)))
    return nx.GradProgram(network.store, lambda store: total_loss_tensor(
        network, labeled_inputs, labeled_targets, split.unlabeled_inputs(),
        dictionary, 100.0, update_stats=False)[0])


def run_plot_atoms(args):
    from graspdict.dictionary import DictionaryModule, load_reconstructor
    from graspdict.plotting import plot_atoms

    module = load_reconstructor(os.path.join(args.ckpt, DICTIONARY_CHECKPOINT))
    if not isinstance(module, DictionaryModule):
        raise InputError("The checkpoint holds no pose dictionary")
    plot_atoms(module.dictionary, args.out, args.format)


def show_version(args):
    print(f"graspdict version {__version__}")


if __name__ == "__main__":
    main()
