"""Command line front end.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import crf, experiment, memm, modelfile, phmm
from .evaluate import score, write_reports
from .features import FeatureConfig
from .seqdata import (ACTIVITY_ALPHABET, SCENARIOS, DataError, LabelAlphabet, LabeledSequence,
                      MaskSpec, SynthConfig, load_dataset, mask_labels, save_dataset, synthesize)

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3


class UsageError(Exception):
    pass


def _alphabet(args) -> LabelAlphabet:
    if getattr(args, "alphabet", None):
        return LabelAlphabet.load(args.alphabet)
    return ACTIVITY_ALPHABET


def _require(path):
    if not Path(path).is_file():
        raise UsageError(f"no such file: {path}")


def cmd_synth(args):
    config = SynthConfig(scenario=args.scenario, seed=args.seed, step_noise=args.noise)
    save_dataset(synthesize(config, args.n), args.out)
    if args.alphabet_out:
        ACTIVITY_ALPHABET.save(args.alphabet_out)


def cmd_mask(args):
    _require(args.data)
    data = load_dataset(args.data, _alphabet(args))
    if not 0 <= args.rho <= 1:
        raise UsageError("--rho must lie in [0, 1]")
    save_dataset(mask_labels(data, MaskSpec(args.rho, args.seed)), args.out)


def cmd_train(args):
    _require(args.data)
    alphabet = _alphabet(args)
    data = load_dataset(args.data, alphabet)
    features = FeatureConfig(w=args.w, s1=args.s1, s2=args.s2)
    if args.model == "crf":
        config = crf.TrainConfig(sigma=args.sigma or 5.0, optimizer=args.optimizer,
                                 max_iter=args.max_iter or 500)
        model = crf.train(data, alphabet, config, features)
    elif args.model == "memm":
        config = memm.EmConfig(sigma=args.sigma or 20.0, max_iter=args.max_iter or 100)
        model = memm.train(data, alphabet, config, features)
    else:
        config = phmm.PhmmConfig(seed=args.seed, max_iter=args.max_iter or 200)
        model = phmm.train(data, alphabet, config)
    modelfile.save_model(model, args.out)


def cmd_segment(args):
    _require(args.model)
    _require(args.data)
    model = modelfile.load_model(args.model)
    data = load_dataset(args.data, model.alphabet)
    out = []
    for seq in data:
        constraint = seq.labels if args.constrained else None
        pred = modelfile.segment(model, seq, constraint)
        out.append(LabeledSequence(seq.obs, pred, seq.meta))
    save_dataset(out, args.out)


def cmd_eval(args):
    _require(args.truth)
    _require(args.pred)
    alphabet = _alphabet(args)
    truth = load_dataset(args.truth, alphabet)
    pred = load_dataset(args.pred, alphabet)
    if len(truth) != len(pred):
        raise DataError(f"{len(truth)} truth sequences vs {len(pred)} predicted")
    meta = {"model": args.model_name, "scenario": args.scenario, "rho": args.rho,
            "repetition": args.repetition}
    rep = score([s.truth() for s in truth], [s.truth() for s in pred], alphabet.size, meta)
    write_reports([rep], args.out, alphabet.names)
    print(f"macro P={rep.macro_precision:.4f} R={rep.macro_recall:.4f} F1={rep.macro_f1:.4f}")


def cmd_experiment(args):
    config = experiment.ExperimentConfig()
    if args.config:
        _require(args.config)
        try:
            config = experiment.parse_config(Path(args.config).read_text())
        except ValueError as exc:
            raise UsageError(f"{args.config}: {exc}") from None
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    results = experiment.run(config, jobs=args.jobs)
    paths = experiment.write_outputs(results, args.out)
    failed = sum(r.error is not None for r in results)
    print(f"{len(results)} cells, {failed} failed; aggregate in {paths['aggregate']}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="actseg", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate synthetic labeled trajectories")
    s.add_argument("--scenario", default="SHORT_MEAL", choices=sorted(SCENARIOS))
    s.add_argument("--n", type=int, default=12)
    s.add_argument("--noise", type=float, default=SynthConfig.step_noise)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--alphabet-out")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("mask", help="hide a fraction rho of the labels")
    s.add_argument("--data", required=True)
    s.add_argument("--rho", type=float, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--alphabet")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_mask)

    s = sub.add_parser("train", help="train a model")
    s.add_argument("--model", required=True, choices=experiment.MODELS)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--sigma", type=float)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--max-iter", type=int)
    s.add_argument("--optimizer", default="lbfgs", choices=("lbfgs", "cg"))
    s.add_argument("--w", type=int, default=4)
    s.add_argument("--s1", type=int, default=2)
    s.add_argument("--s2", type=int, default=2)
    s.add_argument("--alphabet")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("segment", help="label sequences with a trained model")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--constrained", action="store_true",
                   help="respect the labels present in --data")
    s.set_defaults(func=cmd_segment)

    s = sub.add_parser("eval", help="score predictions against ground truth")
    s.add_argument("--truth", required=True)
    s.add_argument("--pred", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--alphabet")
    s.add_argument("--model-name", default="")
    s.add_argument("--scenario", default="")
    s.add_argument("--rho", type=float, default=0.0)
    s.add_argument("--repetition", type=int, default=0)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("experiment", help="run the missing-label sweep")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, modelfile.ModelFileError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (crf.TrainingError, memm.EMError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
