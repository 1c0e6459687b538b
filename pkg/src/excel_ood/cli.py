"""Command-line surface: fit | score | eval | tune | synth | export-heatmap.

Exit codes: 0 success, 1 internal error, 2 usage or input error. Logs and
warnings go to stderr; machine-readable artifacts are written only to the
paths named by the user and contain no timestamps, so identical
invocations produce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
import warnings
from pathlib import Path

from . import clm, logit_store, metrics, scoring, synth, tuning
from .errors import ConfigError, DimensionMismatch, ExcelOodError

DEFAULT_A = 10.0
DEFAULT_B = 5.0


def _warn_to_stderr():
    """Route warnings to stderr as single diagnostic lines."""

    def _show(message, category, filename, lineno, file=None, line=None):
        print(f"warning: {message}", file=sys.stderr)

    warnings.simplefilter("always")
    warnings.showwarning = _show


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def cmd_fit(args) -> int:
    matrix = logit_store.load_logits(args.train_logits)
    labels = logit_store.load_labels(
        args.train_labels, expected_n=matrix.num_samples, num_classes=matrix.num_classes
    )
    params = clm.SmoothingParams(a=args.a, b=args.b)
    clm_set = clm.fit(matrix, labels, params)
    if clm_set.fallback_classes:
        print(
            f"warning: {len(clm_set.fallback_classes)} class(es) had no correctly "
            f"classified samples and use the uniform fallback: "
            f"{list(clm_set.fallback_classes)}",
            file=sys.stderr,
        )
    clm.save_clm_set(clm_set, args.out, encoding=args.encoding)
    print(f"wrote CLM set for C={clm_set.num_classes} classes to {args.out}")
    return 0


def cmd_score(args) -> int:
    matrix = logit_store.load_logits(args.logits)
    clm_set = clm.load_clm_set(args.clm) if args.clm else None
    vector = scoring.score_matrix(
        matrix,
        args.method,
        clm_set=clm_set,
        excel_params=scoring.ExcelParams(alpha=args.alpha),
        temperature=args.temperature,
    )
    logit_store.save_scores(vector, args.out)
    print(f"wrote {len(vector)} {args.method} scores to {args.out}")
    return 0


def _load_split_scores(manifest, methods, config):
    """Load everything cmd_eval needs and score all methods."""
    id_test = logit_store.load_logits(manifest.id_test.logits)
    c = id_test.num_classes
    ood_matrices = {}
    for ood in manifest.ood_sets:
        m = logit_store.load_logits(ood.path)
        if m.num_classes != c:
            raise DimensionMismatch(
                f"OOD set {ood.name!r} has C={m.num_classes}, expected {c}"
            )
        ood_matrices[ood.name] = m

    clm_set = None
    if any(m in ("excel", "rankscore") for m in methods):
        train = logit_store.load_logits(manifest.id_train.logits)
        if manifest.id_train.labels is None:
            raise ConfigError(
                "methods excel/rankscore need id_train labels in the manifest"
            )
        train_labels = logit_store.load_labels(
            manifest.id_train.labels, expected_n=train.num_samples, num_classes=c
        )
        smoothing = config.get("smoothing", {})
        params = clm.SmoothingParams(
            a=float(smoothing.get("a", DEFAULT_A)), b=float(smoothing.get("b", DEFAULT_B))
        )
        clm_set = clm.fit(train, train_labels, params)

    temperature = config.get("temperature")
    if "tempscale" in methods:
        if temperature in (None, "fit"):
            val = logit_store.load_logits(manifest.id_val.logits)
            if manifest.id_val.labels is None:
                raise ConfigError(
                    "tempscale needs a numeric 'temperature' in the config or "
                    "id_val labels to fit one"
                )
            val_labels = logit_store.load_labels(
                manifest.id_val.labels, expected_n=val.num_samples, num_classes=c
            )
            temperature = scoring.fit_temperature(val, val_labels)
            print(f"fitted tempscale temperature: {temperature:g}", file=sys.stderr)
        else:
            temperature = float(temperature)

    alpha = float(config.get("excel", {}).get("alpha", scoring.DEFAULT_ALPHA))
    params = scoring.ExcelParams(alpha=alpha)
    per_method = {}
    groups = {ood.name: ood.group for ood in manifest.ood_sets}
    for method in methods:
        kwargs = dict(clm_set=clm_set, excel_params=params)
        if method == "tempscale":
            kwargs["temperature"] = temperature
        id_scores = scoring.score_matrix(id_test, method, **kwargs)
        ood_scores = {
            name: scoring.score_matrix(m, method, **kwargs)
            for name, m in ood_matrices.items()
        }
        per_method[method] = (id_scores, ood_scores)
    return per_method, groups


def cmd_eval(args) -> int:
    try:
        config = json.loads(Path(args.config).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot open config {args.config}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{args.config}: invalid JSON ({exc})") from exc

    # flags win over the config file
    if args.output_dir is not None:
        config["output_dir"] = args.output_dir
    if args.a is not None:
        config.setdefault("smoothing", {})["a"] = args.a
    if args.b is not None:
        config.setdefault("smoothing", {})["b"] = args.b
    if args.alpha is not None:
        config.setdefault("excel", {})["alpha"] = args.alpha
    if args.temperature is not None:
        config["temperature"] = args.temperature

    methods = config.get("methods")
    if not methods:
        raise ConfigError("config must list at least one method under 'methods'")
    unknown = [m for m in methods if m not in scoring.METHOD_NAMES]
    if unknown:
        raise ConfigError(
            f"unknown method(s) {unknown}; expected a subset of "
            f"{', '.join(scoring.METHOD_NAMES)}"
        )
    if "manifest" not in config or "output_dir" not in config:
        raise ConfigError("config needs 'manifest' and 'output_dir'")

    manifest = logit_store.load_manifest(
        Path(args.config).parent / config["manifest"]
    )
    out_dir = Path(args.config).parent / config["output_dir"]
    out_dir.mkdir(parents=True, exist_ok=True)

    per_method, groups = _load_split_scores(manifest, methods, config)
    reports = {}
    for method, (id_scores, ood_scores) in per_method.items():
        report = metrics.evaluate(method, id_scores, ood_scores, groups)
        reports[method] = report
        _write_json(out_dir / f"report_{method}.json", report.to_dict())

    if all(r.overall is not None for r in reports.values()):
        table = metrics.rank_methods(reports)
        _write_json(out_dir / "rank_table.json", table.to_dict())
        text = metrics.render_rank_table(reports, table)
        (out_dir / "rank_table.txt").write_text(text)
        print(text, end="")
    else:
        print(
            "warning: some reports lack an overall aggregate; skipping the rank table",
            file=sys.stderr,
        )
    print(f"wrote {len(reports)} report(s) to {out_dir}")
    return 0


def _parse_grid(raw: str | None) -> tuning.GridSpec:
    if raw is None:
        return tuning.GridSpec()
    text = raw.strip()
    if not text.startswith("{"):
        path = Path(raw)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot open grid file {raw}: {exc}") from exc
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid grid JSON: {exc}") from exc
    return tuning.GridSpec.from_dict(payload)


def cmd_tune(args) -> int:
    train = logit_store.load_logits(args.train_logits)
    train_labels = logit_store.load_labels(
        args.train_labels, expected_n=train.num_samples, num_classes=train.num_classes
    )
    val_id = logit_store.load_logits(args.val_id)
    val_ood = logit_store.load_logits(args.val_ood)
    if val_id.num_classes != train.num_classes or val_ood.num_classes != train.num_classes:
        raise DimensionMismatch("train and validation matrices must share C")
    grid = _parse_grid(args.grid)
    result = tuning.tune(train, train_labels, val_id, val_ood, grid)
    if args.out:
        _write_json(Path(args.out), result.to_dict())
    a, b, alpha = result.best
    print(
        f"best: a={a:g} b={b:g} alpha={alpha:g} "
        f"({result.objective}={result.objective_value:.6f})"
    )
    return 0


def cmd_synth(args) -> int:
    model = synth.SignatureModel.from_json_file(args.model)
    if args.regime == "signature_id":
        batch = synth.gen_id(model, args.n, seed=args.seed)
    else:
        batch = synth.gen_ood(
            model, args.n, args.regime, seed=args.seed, subset_size=args.subset_size
        )
    logits_path = f"{args.out_prefix}_logits.npy"
    logit_store.save_logits(batch.logits, logits_path)
    written = [logits_path]
    if batch.labels is not None:
        labels_path = f"{args.out_prefix}_labels.npy"
        logit_store.save_labels(batch.labels, labels_path)
        written.append(labels_path)
    print(f"wrote {batch.logits.num_samples} {args.regime} samples: {', '.join(written)}")
    return 0


def cmd_export_heatmap(args) -> int:
    clm_set = clm.load_clm_set(args.clm)
    c = clm_set.num_classes
    if not 0 <= args.class_index < c:
        raise DimensionMismatch(f"class {args.class_index} outside [0, {c})")
    k = args.ranks
    if k < 1:
        raise ConfigError(f"--ranks must be >= 1, got {k}")
    if k > c:
        print(f"warning: --ranks {k} clamped to C={c}", file=sys.stderr)
        k = c
    if args.train_logits and args.train_labels:
        matrix = logit_store.load_logits(args.train_logits)
        labels = logit_store.load_labels(
            args.train_labels, expected_n=matrix.num_samples, num_classes=c
        )
        slice_ = clm.build_clm(matrix, labels, args.class_index).probs[:, :k]
        kind = "raw"
    else:
        slice_ = clm_set.per_class(args.class_index)[:, :k]
        kind = "smoothed"
    with Path(args.out).open("w") as fh:
        for row in slice_:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    print(f"wrote {kind} {c}x{k} likelihood slice for class {args.class_index} to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="excel-ood",
        description="Post-hoc OOD scoring from exported classifier logits",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="estimate and smooth per-class likelihood matrices")
    p.add_argument("--train-logits", required=True)
    p.add_argument("--train-labels", required=True)
    p.add_argument("--a", type=float, default=DEFAULT_A, help="reward magnitude")
    p.add_argument("--b", type=float, default=DEFAULT_B, help="high-likelihood threshold multiplier")
    p.add_argument("--encoding", choices=("f64", "compact"), default="f64")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("score", help="score a logit matrix with one method")
    p.add_argument("--logits", required=True)
    p.add_argument("--method", required=True, choices=scoring.METHOD_NAMES)
    p.add_argument("--clm", help="CLM container (needed by excel/rankscore)")
    p.add_argument("--alpha", type=float, default=scoring.DEFAULT_ALPHA)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="run the full evaluation pipeline from a config")
    p.add_argument("--config", required=True, help="run configuration JSON")
    p.add_argument("--output-dir", default=None, help="override the config's output_dir")
    p.add_argument("--a", type=float, default=None, help="override smoothing a")
    p.add_argument("--b", type=float, default=None, help="override smoothing b")
    p.add_argument("--alpha", type=float, default=None, help="override the fusion weight")
    p.add_argument("--temperature", type=float, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("tune", help="grid-search (a, b, alpha) on validation data")
    p.add_argument("--train-logits", required=True)
    p.add_argument("--train-labels", required=True)
    p.add_argument("--val-id", required=True)
    p.add_argument("--val-ood", required=True)
    p.add_argument("--grid", help="grid JSON (inline or a file path); default grid otherwise")
    p.add_argument("--out", help="write the full tuning trace to this JSON file")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("synth", help="generate synthetic logits")
    p.add_argument("--model", required=True, help="signature model JSON")
    p.add_argument("--regime", required=True, choices=synth.REGIMES)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=None, help="override the model's seed")
    p.add_argument("--subset-size", type=int, default=3)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("export-heatmap", help="dump a CLM slice as CSV for plotting")
    p.add_argument("--clm", required=True)
    p.add_argument("--class", dest="class_index", type=int, required=True)
    p.add_argument("--ranks", type=int, default=10)
    p.add_argument("--train-logits", help="with --train-labels, export the raw pre-smoothing slice")
    p.add_argument("--train-labels")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_heatmap)

    return parser


def main(argv=None) -> int:
    _warn_to_stderr()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ExcelOodError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
