"""Command-line front end.

Subcommands: synth, run, metrics, sensitivity, ablate, diagnose,
reliability. Exit codes: 0 success, 2 usage error, 3 format/validation
error, 4 numeric or degenerate-input error.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import __version__
from .adaptation import ADAPT_METHODS, AdaptConfig, run_dataset, validate_config
from .analysis import (ablate_dominant, geometry_report, sensitivity_profile)
from .errors import (ConfigurationError, DegenerateInputError, FormatError,
                     NumericDomainError, ValidationError)
from .features import FeatureBundle, PromptState, encode_text
from .io import (SynthSpec, read_bundle, read_predictions, reliability_csv,
                 reliability_svg, report_dict, synth_bundle, write_bundle,
                 write_predictions, write_report)
from .metrics import compute_report, reliability_data


def _default_threads() -> int:
    env = os.environ.get("TPT_CALIB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _add_run_flags(sub):
    sub.add_argument("--method", choices=ADAPT_METHODS, default="tpt",
                     help="adaptation objective")
    sub.add_argument("--lambda", dest="lam", type=float, default=1e5,
                     help="regularizer weight")
    sub.add_argument("--rho", type=float, default=0.1,
                     help="confident-view selection fraction")
    sub.add_argument("--steps", type=int, default=1,
                     help="optimizer steps per sample")
    sub.add_argument("--lr", type=float, default=0.005, help="learning rate")
    sub.add_argument("--beta1", type=float, default=0.9)
    sub.add_argument("--beta2", type=float, default=0.999)
    sub.add_argument("--eps", type=float, default=1e-8)
    sub.add_argument("--weight-decay", type=float, default=0.0)
    sub.add_argument("--seed", type=int, default=0, help="run seed (recorded)")
    sub.add_argument("--ctpt-literal-sign", action="store_true",
                     help="add (rather than subtract) the dispersion term for ctpt")
    sub.add_argument("--per-view-entropy", action="store_true",
                     help="average per-view entropies instead of the marginal")
    sub.add_argument("--predict-marginal", action="store_true",
                     help="predict from the mean of selected views")


def _add_bundle_flags(sub, with_tau=True):
    sub.add_argument("--bundle", required=True, help="TPTB bundle path")
    if with_tau:
        sub.add_argument("--tau-override", type=float, default=None,
                         help="replace the bundle temperature")


def _config_from_args(args) -> AdaptConfig:
    return AdaptConfig(
        method=args.method, lam=args.lam, rho=args.rho, steps=args.steps,
        lr=args.lr, beta1=args.beta1, beta2=args.beta2, eps=args.eps,
        weight_decay=args.weight_decay, seed=args.seed,
        ctpt_literal_sign=args.ctpt_literal_sign,
        per_view_entropy=args.per_view_entropy,
        predict_marginal=args.predict_marginal)


def _load_bundle(args) -> FeatureBundle:
    bundle = read_bundle(args.bundle)
    tau = getattr(args, "tau_override", None)
    if tau is not None:
        bundle = FeatureBundle.from_arrays(
            bundle.class_names, tau, bundle.base_text_features_f32,
            bundle.jacobians_f32, bundle.labels, bundle.image_features_f32,
            bundle.metadata)
    return bundle


def _summary_line(report) -> str:
    return (f"acc {100 * report.accuracy:.2f} | ece {100 * report.ece:.2f} | "
            f"aece {100 * report.aece:.2f} | mce {100 * report.mce:.2f} | "
            f"aurc(x1e3) {1000 * report.aurc:.2f}")


def _cmd_synth(args) -> int:
    spec = SynthSpec(
        dim_d=args.dim, num_classes=args.classes, prompt_dim=args.prompt_dim,
        num_samples=args.samples, views_per_sample=args.views,
        dominant_dim_text=args.dominant_dim_text,
        dominant_dim_image=args.dominant_dim_image,
        dominant_magnitude=args.dominant_magnitude,
        class_separation=args.class_separation, view_noise=args.view_noise,
        label_noise=args.label_noise, temperature=args.tau, seed=args.seed)
    bundle = synth_bundle(spec)
    write_bundle(bundle, args.out)
    print(f"wrote {args.out}: D={bundle.dim_d} C={bundle.num_classes} "
          f"P={bundle.prompt_dim} S={bundle.num_samples} "
          f"N={bundle.views_per_sample} tau={bundle.temperature}")
    return 0


def _cmd_run(args) -> int:
    bundle = _load_bundle(args)
    cfg = _config_from_args(args)
    records, report = run_dataset(bundle, cfg, n_jobs=args.threads,
                                  num_bins=args.bins)
    if args.out_predictions:
        write_predictions(records, args.out_predictions, method=cfg.method)
    if args.out_report:
        write_report(report, args.out_report)
    print(f"{cfg.method}: {_summary_line(report)}")
    return 0


def _cmd_metrics(args) -> int:
    records, methods = read_predictions(args.predictions)
    report = compute_report(records, num_bins=args.bins)
    if args.out_report:
        write_report(report, args.out_report)
    label = methods[0] if methods else "?"
    print(f"{label}: {_summary_line(report)}")
    return 0


def _cmd_sensitivity(args) -> int:
    bundle = _load_bundle(args)
    profile = sensitivity_profile(bundle, sample_index=args.sample,
                                  top_k=args.top)
    print(f"tdd={profile.tdd} idd={profile.idd}")
    print(f"{'rank':>4}  {'text dim':>8} {'kld':>12}  {'image dim':>9} {'kld':>12}")
    for rank, (t, i) in enumerate(zip(profile.text_top_k, profile.image_top_k)):
        print(f"{rank:>4}  {t[0]:>8} {t[1]:>12.6g}  {i[0]:>9} {i[1]:>12.6g}")
    if args.out:
        import json
        payload = {
            "tdd": profile.tdd, "idd": profile.idd,
            "text_sensitivity": profile.text_sensitivity.tolist(),
            "image_sensitivity": profile.image_sensitivity.tolist(),
            "text_top_k": list(profile.text_top_k),
            "image_top_k": list(profile.image_top_k),
        }
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
    return 0


def _cmd_ablate(args) -> int:
    bundle = _load_bundle(args)
    cfg = _config_from_args(args)
    _, base_report = run_dataset(bundle, cfg, n_jobs=args.threads,
                                 num_bins=args.bins)
    ablated = ablate_dominant(bundle, args.target)
    _, ablated_report = run_dataset(ablated, cfg, n_jobs=args.threads,
                                    num_bins=args.bins)
    print(f"{'':>14} {'acc(%)':>8} {'ece(%)':>8}")
    print(f"{cfg.method:>14} {100 * base_report.accuracy:>8.2f} "
          f"{100 * base_report.ece:>8.2f}")
    print(f"{'w/o ' + args.target:>14} {100 * ablated_report.accuracy:>8.2f} "
          f"{100 * ablated_report.ece:>8.2f}")
    return 0


def _cmd_diagnose(args) -> int:
    bundle = _load_bundle(args)
    text = encode_text(bundle, PromptState.zeros(bundle.prompt_dim))
    diag = geometry_report(bundle, text)
    print(f"atfd {diag.atfd:.6g}")
    print(f"mean_logit_range {diag.mean_logit_range:.6g}")
    print(f"mean_logit_value {diag.mean_logit_value:.6g}")
    print(f"mean_cross_cosine {diag.mean_cross_cosine:.6g}")
    print(f"modality_gap_l2 {diag.modality_gap_l2:.6g}")
    return 0


def _cmd_reliability(args) -> int:
    records, _ = read_predictions(args.predictions)
    bins = reliability_data(records, num_bins=args.bins)
    if args.csv:
        reliability_csv(bins, args.csv)
    if args.svg:
        reliability_svg(bins, args.svg)
    covered = sum(b.count for b in bins)
    print(f"{len(bins)} bins over {covered} records")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tpt-calib",
        description="Test-time prompt tuning calibration lab on feature bundles.")
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True)

    fmt = argparse.ArgumentDefaultsHelpFormatter

    sub = subs.add_parser("synth", formatter_class=fmt,
                          help="generate a seeded synthetic bundle")
    sub.add_argument("--out", required=True, help="output bundle path")
    sub.add_argument("--dim", type=int, default=64)
    sub.add_argument("--classes", type=int, default=20)
    sub.add_argument("--prompt-dim", type=int, default=8)
    sub.add_argument("--samples", type=int, default=500)
    sub.add_argument("--views", type=int, default=8)
    sub.add_argument("--dominant-dim-text", type=int, default=None)
    sub.add_argument("--dominant-dim-image", type=int, default=None)
    sub.add_argument("--dominant-magnitude", type=float, default=5.0)
    sub.add_argument("--class-separation", type=float, default=1.0)
    sub.add_argument("--view-noise", type=float, default=0.1)
    sub.add_argument("--label-noise", type=float, default=0.0)
    sub.add_argument("--tau", type=float, default=20.0)
    sub.add_argument("--seed", type=int, default=0)
    sub.set_defaults(func=_cmd_synth)

    sub = subs.add_parser("run", formatter_class=fmt,
                          help="adapt every sample and report metrics")
    _add_bundle_flags(sub)
    _add_run_flags(sub)
    sub.add_argument("--bins", type=int, default=20, help="calibration bins")
    sub.add_argument("--threads", type=int, default=None,
                     help="worker threads (default: available parallelism, "
                          "or TPT_CALIB_THREADS)")
    sub.add_argument("--out-predictions", default=None)
    sub.add_argument("--out-report", default=None)
    sub.set_defaults(func=_cmd_run)

    sub = subs.add_parser("metrics", formatter_class=fmt,
                          help="recompute metrics from a prediction dump")
    sub.add_argument("--predictions", required=True)
    sub.add_argument("--bins", type=int, default=20)
    sub.add_argument("--out-report", default=None)
    sub.set_defaults(func=_cmd_metrics)

    sub = subs.add_parser("sensitivity", formatter_class=fmt,
                          help="per-dimension prediction sensitivity")
    _add_bundle_flags(sub)
    sub.add_argument("--sample", type=int, default=None,
                     help="sample index (default: mean over samples)")
    sub.add_argument("--top", type=int, default=10)
    sub.add_argument("--out", default=None, help="write profile JSON here")
    sub.set_defaults(func=_cmd_sensitivity)

    sub = subs.add_parser("ablate", formatter_class=fmt,
                          help="rerun with the dominant dimension mean-replaced")
    _add_bundle_flags(sub)
    _add_run_flags(sub)
    sub.add_argument("--target", choices=("tdd", "idd"), required=True)
    sub.add_argument("--bins", type=int, default=20)
    sub.add_argument("--threads", type=int, default=None)
    sub.set_defaults(func=_cmd_ablate)

    sub = subs.add_parser("diagnose", formatter_class=fmt,
                          help="hypersphere geometry diagnostics (zero-shot)")
    _add_bundle_flags(sub)
    sub.set_defaults(func=_cmd_diagnose)

    sub = subs.add_parser("reliability", formatter_class=fmt,
                          help="emit reliability diagram CSV/SVG from a dump")
    sub.add_argument("--predictions", required=True)
    sub.add_argument("--bins", type=int, default=20)
    sub.add_argument("--csv", default=None)
    sub.add_argument("--svg", default=None)
    sub.set_defaults(func=_cmd_reliability)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if hasattr(args, "threads") and args.threads is None:
        args.threads = _default_threads()
    if hasattr(args, "method"):
        try:
            validate_config(_config_from_args(args))
        except ConfigurationError as exc:
            parser.error(str(exc))  # exits 2
    try:
        return args.func(args)
    except (FormatError, ValidationError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (DegenerateInputError, NumericDomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
