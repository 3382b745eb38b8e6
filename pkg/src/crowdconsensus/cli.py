"""Command-line interface: ``cck {consensus,kappa,prospective,evaluate,serve}``.

Exit codes: 0 success, 1 validation/input error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, dataio, pipeline
from .aggregation import EMConfig, MODELS
from .core import apply_dependency_filter, project_question
from .errors import CrowdError, InvalidConfig
from .prospective import SWEEP_MODELS, CommunityProfile, run_sweep
from .reliability import binary_eval, fleiss_kappa

log = logging.getLogger("crowdconsensus")

DEFAULT_SYNTHETIC_TASKS = 10_000
DEFAULT_REDUNDANCY = "3,5,7,10,15,20"


def _read(path):
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise CrowdError(f"cannot read {path}: {exc.strerror}") from None


def _load_config(args):
    config = dataio.RunConfig.from_json(_read(args.config)) if getattr(args, "config", None) else dataio.RunConfig()
    return config.replace(model=getattr(args, "model", None), tol=getattr(args, "tol", None),
                          max_iter=getattr(args, "max_iter", None), beta=getattr(args, "beta", None))


def _summary(msg):
    print(msg, file=sys.stderr)


def cmd_consensus(args):
    config = _load_config(args)
    if args.echo_inputs:
        config = config.replace(echo_inputs=True)
    tasks = _read(args.tasks) if args.tasks else None
    out = pipeline.run_csv(_read(args.annotations), tasks, config)
    out_dir = Path(args.out)
    for name, data in out.members().items():
        target = out_dir / name
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(data)
    if args.zip:
        Path(args.zip).write_bytes(out.bundle())
    for res in out.results:
        d = res.diagnostics
        print(f"{res.question_id}\tmodel={res.model_name}\titerations={d.iterations}\tconverged={str(d.converged).lower()}")
    _summary(f"consensus: {len(out.results)} question(s), model {config.model}, "
             f"{out.dropped} annotation(s) dropped by dependencies, written to {out_dir}")
    return 0


def _emit(doc, fmt, text_lines):
    if fmt == "json":
        print(json.dumps(doc, indent=2))
    else:
        print("\n".join(text_lines))


def cmd_kappa(args):
    config = _load_config(args)
    tasks = dataio.read_tasks_csv(_read(args.tasks)) if args.tasks else None
    dataset = pipeline.build_dataset(dataio.read_annotations_csv(_read(args.annotations)), tasks, config)
    if config.dependencies_enabled and dataset.dependencies:
        dataset, _ = apply_dependency_filter(dataset)
    view = project_question(dataset, args.question)
    report = fleiss_kappa(view)
    doc = {"question": args.question, **report.to_dict(view.classes)}
    _emit(doc, args.format, [
        f"question: {args.question}",
        f"kappa: {report.kappa:.4f}",
        f"items_used: {report.items_used}",
        f"items_skipped: {report.items_skipped}",
        "per_class_p: " + ", ".join(f"{c}={p:.4f}" for c, p in zip(view.classes, report.per_class_p)),
    ])
    _summary(f"kappa: question {args.question}, {report.items_used} item(s) used, kappa={report.kappa:.4f}")
    return 0


def _fmt_metric(x):
    return "undefined" if x is None else f"{x:.4f}"


def cmd_evaluate(args):
    predicted = dataio.read_labeling_csv(_read(args.predicted), args.positive_class)
    reference = dataio.read_labeling_csv(_read(args.reference), args.positive_class)
    report = binary_eval(predicted, reference)
    _emit(report.to_dict(), args.format, [
        "reference\\predicted  yes  no",
        f"yes  {report.tp}  {report.fn}",
        f"no  {report.fp}  {report.tn}",
        f"precision: {_fmt_metric(report.precision)}",
        f"recall: {_fmt_metric(report.recall)}",
        f"specificity: {_fmt_metric(report.specificity)}",
        f"accuracy: {_fmt_metric(report.accuracy)}",
    ])
    _summary(f"evaluate: {report.total} task(s), positive class {args.positive_class!r}")
    return 0


def parse_redundancy(text):
    """``"3:20"`` (inclusive range) or ``"3,6,10"``."""
    try:
        if ":" in text:
            lo, hi = (int(x) for x in text.split(":"))
            values = list(range(lo, hi + 1))
        else:
            values = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise InvalidConfig(f"invalid redundancy {text!r}") from None
    if not values or min(values) < 1:
        raise InvalidConfig(f"invalid redundancy {text!r}")
    return sorted(set(values))


def load_profile(doc, name=None):
    """Community profile from a params file written by ``consensus`` or an
    explicit ``{"tau": [...], "confusion": [[...]]}`` / ``{"tau", "pool"}`` object."""
    if not isinstance(doc, dict) or "tau" not in doc:
        raise InvalidConfig("profile needs 'tau' (Majority Vote params files carry none)")
    name = name or doc.get("name") or doc.get("question") or "profile"
    classes = doc.get("classes")
    conf = doc.get("confusion")
    if isinstance(conf, dict):
        return CommunityProfile(name, doc["tau"], pool=np.array(list(conf.values()), dtype=float), classes=classes)
    if conf is not None:
        return CommunityProfile(name, doc["tau"], pooled=np.array(conf, dtype=float), classes=classes)
    if "pool" in doc:
        return CommunityProfile(name, doc["tau"], pool=np.array(doc["pool"], dtype=float), classes=classes)
    raise InvalidConfig("profile needs 'confusion' or 'pool'")


def cmd_prospective(args):
    try:
        doc = json.loads(_read(args.params))
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"{args.params}: not valid JSON: {exc}") from None
    profile = load_profile(doc, args.name)
    models = tuple(m.strip() for m in args.models.split(",") if m.strip())
    em = EMConfig(tol=args.tol or 1e-8, max_iter=args.max_iter or 500,
                  beta=0.01 if args.beta is None else args.beta)
    curve = run_sweep(profile, args.tasks, parse_redundancy(args.redundancy), models, em, args.seed)
    data = dataio.write_curve_csv(curve)
    if args.out:
        Path(args.out).write_bytes(data)
    else:
        sys.stdout.write(data.decode())
    _summary(f"prospective: profile {profile.name}, {len(curve.entries)} curve point(s), "
             f"{args.tasks} synthetic tasks, seed {args.seed}")
    return 0


def cmd_serve(args):
    from .service import Settings, serve

    settings = Settings.from_env()
    if args.bind:
        settings = Settings(**{**settings.__dict__, "bind_addr": args.bind})
    _summary(f"serve: listening on {settings.bind_addr}")
    serve(settings)
    return 0


def _add_em_flags(p):
    p.add_argument("--tol", type=float, help="EM convergence tolerance on the objective (default 1e-8)")
    p.add_argument("--max-iter", type=int, help="EM iteration cap (default 500)")
    p.add_argument("--beta", type=float, help="Dirichlet smoothing pseudo-count (default 0.01)")


def build_parser():
    parser = argparse.ArgumentParser(prog="cck", description="Consensus analysis for crowdsourced annotations.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("consensus", help="fit a consensus model per question")
    p.add_argument("--annotations", required=True)
    p.add_argument("--tasks")
    p.add_argument("--config")
    p.add_argument("--model", choices=MODELS)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--zip", help="also write the bundle as a ZIP archive here")
    p.add_argument("--echo-inputs", action="store_true")
    _add_em_flags(p)
    p.set_defaults(func=cmd_consensus)

    p = sub.add_parser("kappa", help="Fleiss' kappa for one question")
    p.add_argument("--annotations", required=True)
    p.add_argument("--question", required=True)
    p.add_argument("--tasks")
    p.add_argument("--config")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(func=cmd_kappa)

    p = sub.add_parser("prospective", help="accuracy vs redundancy on synthetic crowds")
    p.add_argument("--params", required=True, help="params JSON or explicit profile")
    p.add_argument("--name")
    p.add_argument("--tasks", type=int, default=DEFAULT_SYNTHETIC_TASKS)
    p.add_argument("--redundancy", default=DEFAULT_REDUNDANCY, help="A:B or comma list")
    p.add_argument("--models", default=",".join(SWEEP_MODELS[::-1]))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    _add_em_flags(p)
    p.set_defaults(func=cmd_prospective)

    p = sub.add_parser("evaluate", help="binary precision/recall against a reference labeling")
    p.add_argument("--predicted", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--positive-class", required=True)
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--bind", help="host:port, overrides CCK_BIND_ADDR")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CrowdError as exc:
        print(f"error: {exc.message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
