"""Method comparison and robustness sweeps.

Every seed splits the records into train and test sequences and the train
part into labeled and unlabeled frames; all arms of that seed share these
splits. Arms:

* ``fully``         every train frame labeled, no reconstruction term
* ``ratio_only``    labeled frames only, no reconstruction term
* ``ae``            reconstruction term from an encoder-decoder
* ``ours``          reconstruction term from the pose dictionary module
* ``ours_l2``       as ``ours`` with an L2 instead of the interval penalty
* ``pseudo_label``  labeled plus temporally interpolated pseudo labels
"""

import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pandas as pd

from graspdict import GraspDictError, InputError
from graspdict.autoencoder import train_autoencoder
from graspdict.config import ARMS
from graspdict.data import (
    DatasetSplit, interpolate_pseudo_labels, split_by_sequence,
    split_semi_supervised, stack_inputs, stack_targets)
from graspdict.dictionary import train_phase1
from graspdict.estimator import train_phase2
from graspdict.evaluation import PCK_THRESHOLDS, mpjpe, pck_curve
from graspdict.report import EvalReport, MethodResult

logger = logging.getLogger(__name__)

SWEEP_AXES = ("k", "lambda_r", "ratio")


def evaluate_network(network, records, hand_group="hand"):
    estimates = network.predict(stack_inputs(records))
    references = stack_targets(records)
    return {"mpjpe_hand": mpjpe(estimates, references, hand_group),
            "mpjpe_object": mpjpe(estimates, references, "object"),
            "mpjpe_all": mpjpe(estimates, references, "all"),
            "pck": pck_curve(estimates, references, PCK_THRESHOLDS)}


def train_arm(arm, split, config, validation=None, progress=False):
    """Train the estimator of one benchmark arm; returns the network."""
    if arm not in ARMS:
        raise InputError(f"Unknown benchmark arm '{arm}'")
    labeled_poses = [record.pose3d for record in split.labeled]
    reconstructor = None
    pseudo_pairs = None
    if arm == "fully":
        split = DatasetSplit(labeled=split.labeled + split.unlabeled,
                             unlabeled=[], seed=split.seed, ratio=1.0)
        config = config.replace(lambda_r=0.0)
    elif arm == "ratio_only":
        config = config.replace(lambda_r=0.0)
    elif arm == "pseudo_label":
        pseudo_pairs = interpolate_pseudo_labels(split)
        config = config.replace(lambda_r=0.0)
    elif config.lambda_r > 0:
        if arm == "ae":
            reconstructor, _ = train_autoencoder(labeled_poses, config,
                                                 progress=progress)
        else:
            regularizer = "l2" if arm == "ours_l2" else "interval"
            reconstructor, _ = train_phase1(
                labeled_poses, config.replace(dict_regularizer=regularizer),
                progress=progress)
    network, _ = train_phase2(split, reconstructor, config,
                              validation=validation, pseudo_pairs=pseudo_pairs,
                              progress=progress)
    return network


class BenchmarkRunner:

    def __init__(self, records, config, hand_group="hand", progress=False):
        self._records = records
        self._config = config
        self._hand_group = hand_group
        self._progress = progress
        self._splits = {}

    def split_data(self):
        logger.info("- Splitting data for seeds %s",
                    ", ".join(str(seed) for seed in self._config.seeds))
        for seed in self._config.seeds:
            train, test = split_by_sequence(
                self._records, self._config.test_fraction, seed)
            if not test:
                raise InputError("The benchmark needs at least one test "
                                 "sequence (check test_fraction)")
            self._splits[seed] = (split_semi_supervised(
                train, self._config.ratio, seed), test)

    def run_arm(self, arm, seed, config=None):
        """Metrics of one arm and seed, or the error that stopped it."""
        config = (config or self._config).replace(seed=seed)
        split, test = self._splits[seed]
        logger.info("- Running arm '%s' with seed %d", arm, seed)
        try:
            network = train_arm(arm, split, config, progress=self._progress)
            return evaluate_network(network, test, self._hand_group)
        except (GraspDictError, FloatingPointError, ValueError) as error:
            logger.error("Arm '%s' (seed %d) failed: %s", arm, seed, error)
            return error

    def run_jobs(self, jobs):
        """Run ``(arm, seed, config)`` jobs; results keep the job order."""
        if self._config.threads > 1:
            with ThreadPoolExecutor(max_workers=self._config.threads) as pool:
                return list(pool.map(lambda job: self.run_arm(*job), jobs))
        return [self.run_arm(*job) for job in jobs]

    def run(self):
        if not self._splits:
            self.split_data()
        jobs = [(arm, seed, None) for arm in self._config.arms
                for seed in self._config.seeds]
        outcomes = self.run_jobs(jobs)
        report = EvalReport(config=self._config.to_dict(),
                            seeds=list(self._config.seeds),
                            hand_group=self._hand_group)
        for arm in self._config.arms:
            result = MethodResult(method=arm)
            for (job_arm, seed, _), outcome in zip(jobs, outcomes):
                if job_arm != arm:
                    continue
                if isinstance(outcome, Exception):
                    result.error = str(outcome)
                    continue
                result.seeds.append(seed)
                result.mpjpe_hand.append(outcome["mpjpe_hand"])
                result.mpjpe_object.append(outcome["mpjpe_object"])
                result.mpjpe_all.append(outcome["mpjpe_all"])
                result.pck.append(outcome["pck"])
            report.methods.append(result)
        return report


def run_benchmark(records, config, hand_group="hand", progress=False):
    runner = BenchmarkRunner(records, config.validate(), hand_group, progress)
    return runner.run()


def _coerce_axis_value(axis, value):
    return int(value) if axis == "k" else float(value)


def sweep(records, axis, values, config, with_baseline=False,
          hand_group="hand", progress=False):
    """Train ``ours`` for every value of ``axis``; one row per value.

    With ``with_baseline`` the ``ratio_only`` arm is trained at every value
    too and reported in ``baseline_*`` columns.
    """
    if axis not in SWEEP_AXES:
        raise InputError(f"Cannot sweep over '{axis}' "
                         f"(choose from {', '.join(SWEEP_AXES)})")
    if not values:
        raise InputError("A sweep needs at least one value")
    config = config.validate()
    arms = ("ours", "ratio_only") if with_baseline else ("ours",)
    runner = BenchmarkRunner(records, config, hand_group, progress)
    runner.split_data()
    jobs = []
    for value in values:
        point_config = config.replace(
            **{axis: _coerce_axis_value(axis, value)}).validate()
        if axis == "ratio":
            # The labeled part changes with the ratio; re-split per value.
            point_runner = BenchmarkRunner(records, point_config, hand_group,
                                           progress)
            point_runner.split_data()
        else:
            point_runner = runner
        for arm in arms:
            for seed in config.seeds:
                jobs.append((point_runner, value, arm, seed, point_config))
    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            outcomes = list(pool.map(
                lambda job: job[0].run_arm(job[2], job[3], job[4]), jobs))
    else:
        outcomes = [job[0].run_arm(job[2], job[3], job[4]) for job in jobs]
    rows = []
    for value in values:
        row = {"value": _coerce_axis_value(axis, value)}
        for arm, prefix in zip(arms, ("", "baseline_")):
            metrics = [outcome for job, outcome in zip(jobs, outcomes)
                       if job[1] == value and job[2] == arm]
            failed = [outcome for outcome in metrics
                      if isinstance(outcome, Exception)]
            for key, column in (("mpjpe_hand", "mpjpe_hand"),
                                ("mpjpe_object", "mpjpe_obj"),
                                ("mpjpe_all", "mpjpe_all")):
                row[f"{prefix}{column}"] = float(np.mean(
                    [outcome[key] for outcome in metrics
                     if not isinstance(outcome, Exception)])) \
                    if len(failed) < len(metrics) else float("nan")
            row[f"{prefix}status"] = "failed" if failed else "ok"
        rows.append(row)
    table = pd.DataFrame(rows)
    table.attrs["axis"] = axis
    table.attrs["config"] = config.to_dict()
    return table
