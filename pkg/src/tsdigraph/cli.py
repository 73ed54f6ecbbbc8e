"""Command line entry point: ``tsdigraph <subcommand> [options]``.

Results go to stdout as JSON. Failures print one JSON line to stderr and
exit with status 1.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import anomaly, data, report
from .models import MODEL_NAMES, SUPERVISED, UNSUPERVISED


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _common(p, model_default=None):
    p.add_argument("--config", help="JSON run configuration; explicit flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--model", choices=MODEL_NAMES, default=model_default)
    p.add_argument("--out", help="output directory")


def _run_config(args, base=None, **overrides):
    """Stored settings, then the config file, then explicit flags."""
    base = dict(base or {})
    if args.config:
        base.update(json.loads(Path(args.config).read_text()))
    for key in ("seed", "model"):
        if getattr(args, key, None) is not None:
            base[key] = getattr(args, key)
    if getattr(args, "out", None):
        base["out_dir"] = args.out
    base.update({k: v for k, v in overrides.items() if v is not None})
    return data.RunConfig(**base)


def _out_dir(cfg):
    d = Path(cfg.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


# -- subcommands ------------------------------------------------------------

def cmd_generate(args):
    seed = args.seed if args.seed is not None else 0
    recs = data.synth_ecg(args.recordings, args.seconds, args.anomaly_rate, seed)
    out = Path(args.out or "dataset")
    data.write_dataset(recs, out, {"seed": seed, "anomaly_rate": args.anomaly_rate})
    slices = sum(r.num_slices for r in recs)
    bad = sum(int((r.labels == 0).sum()) for r in recs)
    return {"out": str(out), "recordings": len(recs), "slices": slices, "anomalous": bad}


def cmd_preprocess(args):
    recs = data.read_dataset(args.dataset)
    seq = data.build_sequences(recs, args.task)
    out = Path(args.out or "sequences.npz")
    if out.suffix != ".npz":
        out.mkdir(parents=True, exist_ok=True)
        out = out / f"{args.task}.npz"
    np.savez(out, x=seq.x, slice_ids=seq.slice_ids, labels=seq.labels,
             recording_ids=np.array(seq.recording_ids))
    return {"out": str(out), "sequences": len(seq), "length": int(seq.x.shape[1])}


def cmd_train_classifier(args):
    from .experiments import supervised_experiment
    from .training import save_model
    cfg = _run_config(args, dataset=args.dataset, epochs=args.epochs,
                      batch_size=args.batch_size, dtype=args.dtype,
                      model=args.model or "TCNClassifier")
    if cfg.model not in SUPERVISED:
        raise CliError(f"{cfg.model} is not a classifier")
    res = supervised_experiment(data.read_dataset(cfg.dataset), cfg.model, cfg.seed,
                                cfg.epochs, cfg.batch_size, cfg.lr, cfg.dtype)
    out = _out_dir(cfg)
    save_model(res.model, out / "model", {"run": cfg.to_dict()})
    doc = {"model": cfg.model, "metrics": res.metrics.to_dict(), "history": res.history}
    (out / "metrics.json").write_text(report.dumps(doc))
    return doc


def cmd_train_ae(args):
    from .experiments import fit_autoencoder
    from .training import save_model
    cfg = _run_config(args, dataset=args.dataset, epochs=args.epochs,
                      retrain_epochs=args.retrain_epochs, batch_size=args.batch_size,
                      dtype=args.dtype, model=args.model or "TCNAE1")
    if cfg.model not in UNSUPERVISED:
        raise CliError(f"{cfg.model} is not an autoencoder")
    tr, _, _ = data.split_by_recording(data.read_dataset(cfg.dataset), seed=cfg.seed)
    s_tr = data.build_sequences(tr, "unsupervised")
    net, keep, h1, h2 = fit_autoencoder(cfg, s_tr)
    out = _out_dir(cfg)
    before = float(np.mean(s_tr.window_labels == 0))
    after = float(np.mean(s_tr.window_labels[keep] == 0))
    save_model(net, out / "model", {"run": cfg.to_dict(), "refined_indices": keep.tolist()})
    doc = {"model": cfg.model, "history": h1, "retrain_history": h2,
           "anomaly_rate_before": before, "anomaly_rate_after": after}
    (out / "training.json").write_text(report.dumps(doc))
    return doc


def cmd_detect(args):
    from .training import load_model, predict
    model_dir = Path(args.model_dir)
    doc = json.loads((model_dir / "model.json").read_text())
    cfg = _run_config(args, doc["extra"].get("run", {}), approach=args.approach,
                      clusterer=args.clusterer, dataset=args.dataset)
    net = load_model(model_dir)
    tr, va, te = data.split_by_recording(data.read_dataset(cfg.dataset), seed=cfg.seed)
    s_tr, s_va, s_te = (data.build_sequences(r, "unsupervised") for r in (tr, va, te))
    idx = doc["extra"].get("refined_indices")
    if idx is not None:
        s_tr = s_tr.subset(np.asarray(idx, dtype=int))
    result = anomaly.run_pipeline(lambda x: predict(net, x)[..., 0], s_tr, s_va, s_te,
                                  cfg.approach, cfg.clusterer, cfg.seed)
    out = _out_dir(cfg)
    anomaly.export_errors(result, out)
    body = {"approach": cfg.approach, "clusterer": cfg.clusterer,
            "metrics": result.metrics.to_dict()}
    (out / "metrics.json").write_text(report.dumps(body))
    return body


def cmd_evaluate(args):
    import csv
    with open(args.errors, newline="") as fh:
        rows = [r for r in csv.DictReader(fh)]
    if not rows or rows[0]["true_label"] == "":
        raise CliError("errors file carries no true labels")
    truth = [int(r["true_label"]) for r in rows]
    pred = [int(r["pred_label"]) for r in rows]
    return anomaly.evaluate_binary(pred, truth).to_dict()


def cmd_verify_lemma1(args):
    from .checks import lemma1_trials
    res = lemma1_trials(args.trials, args.seed or 0)
    res.pop("cases")
    res["passed"] = res["max_abs_error"] <= args.tol
    return res


def cmd_gradcheck(args):
    from .checks import model_gradcheck, primitive_gradchecks
    names = [args.model] if args.model else list(MODEL_NAMES)
    rows = [model_gradcheck(n, args.seed or 0) for n in names]
    for r in rows:
        r["max_rel_error"] = float(r["max_rel_error"])
        r["passed"] = r["max_rel_error"] <= args.tol
    doc = {"models": rows}
    ok = all(r["passed"] for r in rows)
    if not args.model:
        prims = {k: float(v) for k, v in primitive_gradchecks().items()}
        doc["primitives"] = prims
        ok = ok and max(prims.values()) <= args.tol
    doc["passed"] = ok
    return doc


def cmd_report(args):
    runs = []
    for path in args.runs:
        doc = json.loads(Path(path).read_text())
        runs.append(report.metrics_from_dict(doc.get("metrics", doc)))
    doc = report.emit_report(runs, args.mode)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(report.dumps(doc))
        (out / "report.txt").write_text(report.render_text(doc) + "\n")
    return doc


def build_parser():
    p = _Parser(prog="tsdigraph", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("generate", help="write a synthetic ECG-like dataset")
    _common(s)
    s.add_argument("--recordings", type=int, default=40)
    s.add_argument("--seconds", type=int, default=250)
    s.add_argument("--anomaly-rate", type=float, default=0.18)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("preprocess", help="smooth, downsample, slice and scale a dataset")
    _common(s)
    s.add_argument("--dataset", required=True)
    s.add_argument("--task", choices=sorted(data.TASKS), default="supervised")
    s.set_defaults(func=cmd_preprocess)

    for name, func, extra in (("train-classifier", cmd_train_classifier, False),
                              ("train-ae", cmd_train_ae, True)):
        s = sub.add_parser(name)
        _common(s)
        s.add_argument("--dataset")
        s.add_argument("--epochs", type=int)
        if extra:
            s.add_argument("--retrain-epochs", type=int)
        s.add_argument("--batch-size", type=int)
        s.add_argument("--dtype", choices=["float32", "float64"])
        s.set_defaults(func=func)

    s = sub.add_parser("detect", help="score, cluster and label Valid/Test with a trained autoencoder")
    _common(s)
    s.add_argument("--model-dir", required=True)
    s.add_argument("--dataset")
    s.add_argument("--approach", choices=["A", "B"])
    s.add_argument("--clusterer", choices=["kmeans", "dbscan"])
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("evaluate", help="metrics from an errors CSV")
    _common(s)
    s.add_argument("--errors", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("verify-lemma1", help="convolution vs graph-convolution oracle")
    _common(s)
    s.add_argument("--trials", type=int, default=100)
    s.add_argument("--tol", type=float, default=1e-12)
    s.set_defaults(func=cmd_verify_lemma1)

    s = sub.add_parser("gradcheck", help="finite-difference check of the primitives and named models")
    _common(s)
    s.add_argument("--tol", type=float, default=1e-5)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("report", help="aggregate metrics files of repeated runs")
    _common(s)
    s.add_argument("runs", nargs="+", help="metrics JSON files")
    s.add_argument("--mode", choices=["standard", "drop", "all"], default="standard")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            stream=sys.stderr)
        result = args.func(args)
    except Exception as exc:  # every failure becomes one JSON line
        print(json.dumps({"error": str(exc), "type": type(exc).__name__}), file=sys.stderr)
        return 1
    print(json.dumps(result, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
