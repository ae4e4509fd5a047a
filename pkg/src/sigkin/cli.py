"""Command-line front end: synth, ingest, replay, train, estimate, evaluate, plot."""
from __future__ import annotations

import argparse
import json
import sys
import zlib
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import estimator as est
from . import evaluation as ev
from . import replay as rp
from . import robot_model as rm
from . import signature_io as sio
from . import verifier as vf

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


# ------------------------------------------------------------------------ config

def component_seed(root, component):
    """Seed for one pipeline component, derived from the root seed."""
    ss = np.random.SeedSequence([int(root), zlib.crc32(component.encode("ascii"))])
    return int(ss.generate_state(1)[0])


def load_config(path):
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise
    except ValueError as exc:
        raise sio.ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise sio.ConfigError("config must be a JSON object")
    return cfg


def _root_seed(args, cfg):
    if args.seed is not None:
        return args.seed
    return int(cfg.get("seed", 0))


def _chain(args, cfg):
    return rm.load_chain(getattr(args, "chain", None) or cfg.get("chain"))


def _placement(cfg):
    block = cfg.get("placement", {})
    try:
        return rp.WorkspacePlacement(**{k: tuple(v) if isinstance(v, list) else v
                                        for k, v in block.items()})
    except TypeError as exc:
        raise sio.ConfigError(f"bad placement block: {exc}") from exc


def _training_config(args, cfg):
    block = dict(cfg.get("training", {}))
    block["seed"] = component_seed(_root_seed(args, cfg), "training")
    if getattr(args, "epochs", None) is not None:
        block["max_epochs"] = args.epochs
    return est.TrainingConfig.from_dict(block)


# ----------------------------------------------------------------------- helpers

def _pairs(corpus, features, labels=(sio.GENUINE,)):
    sigs = dict(corpus.items())
    keys = [k for k in sorted(features) if k in sigs and sigs[k].label in labels]
    if not keys:
        raise sio.SignatureValidationError("no signatures with matching feature files")
    return [sigs[k] for k in keys], [features[k] for k in keys]


def metrics_table(metrics):
    """Plain-text MAE/MSE table, one row per feature group."""
    names = {"theta": "theta (positions)", "omega": "omega (velocities)", "tau": "tau (torques)"}
    lines = [f"{'feature':<20}{'MAE':>12}{'MSE':>12}"]
    for g in rp.GROUPS:
        lines.append(f"{names[g]:<20}{metrics.mae[g]:>12.4f}{metrics.mse[g]:>12.4f}")
    return "\n".join(lines)


def _write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(text, str):
        text = text.encode("utf-8")
    path.write_bytes(text)


# ---------------------------------------------------------------------- commands

def cmd_synth(args, cfg):
    block = dict(cfg.get("synthesis", {}))
    for flag, name in (("users", "n_users"), ("genuine", "genuine_per_user"),
                       ("forgeries", "forgeries_per_user")):
        if getattr(args, flag) is not None:
            block[name] = getattr(args, flag)
    block["seed"] = component_seed(_root_seed(args, cfg), "synthesis")
    scfg = sio.SynthesisConfig.from_dict(block)
    corpus = sio.generate_corpus(scfg)
    sio.write_corpus(corpus, args.out)
    print(f"wrote {len(corpus)} signatures for {len(corpus.users)} users to {args.out}")


def cmd_ingest(args, cfg):
    src = Path(args.src)
    if not src.is_dir():
        raise FileNotFoundError(f"source directory {src} does not exist")
    columns = args.columns.split(",") if args.columns else None
    users = {}
    files = sorted(p for p in src.rglob("*") if p.is_file())
    if not files:
        raise sio.SignatureValidationError(f"no files under {src}")
    for path in files:
        try:
            sig = sio.parse_signature_file(path.read_bytes(), columns, args.sample_rate)
        except sio.SignatureParseError as exc:
            raise sio.SignatureParseError(f"{path}: {exc}") from exc
        user = sig.user_id if sig.user_id != "u000" or path.parent == src else path.parent.name
        if path.stem.lower().startswith(("f", "forg")) and sig.label == sio.GENUINE:
            sig.label = sio.SKILLED_FORGERY
        sig.user_id = user
        entry = users.setdefault(user, sio.UserSignatures())
        (entry.genuine if sig.label == sio.GENUINE else entry.forgeries).append(sig)
    corpus = sio.Corpus(users)
    sio.write_corpus(corpus, args.out)
    print(f"ingested {len(corpus)} signatures for {len(users)} users into {args.out}")


def cmd_replay(args, cfg):
    chain = _chain(args, cfg)
    placement = _placement(cfg)
    placement.validate(chain)
    corpus = sio.read_corpus(args.corpus)
    feats = {}
    for key, sig in corpus.items():
        try:
            feats[key] = rp.replay(chain, sig, placement)
        except rp.PlanningError as exc:
            raise rp.PlanningError(f"{key}: {exc}", exc.index) from exc
    rp.write_feature_dir(feats, args.out)
    print(f"replayed {len(feats)} signatures into {args.out}")


def cmd_train(args, cfg):
    corpus = sio.read_corpus(args.corpus)
    features = rp.read_feature_dir(args.features)
    sigs, feats = _pairs(corpus, features)
    model = est.train(sigs, feats, _training_config(args, cfg))
    for h in model.metadata["history"]:
        print(f"epoch {h['epoch']:3d}  train {h['train']:.6f}  val {h['val']:.6f}")
    print(f"best epoch {model.metadata['best_epoch']}")
    _write(args.out, est.save_model(model))


def cmd_estimate(args, cfg):
    corpus = sio.read_corpus(args.corpus)
    sigs = dict(corpus.items())
    simulated = rp.read_feature_dir(args.features) if args.features else None
    if args.cv:
        if simulated is None:
            raise UsageError("--cv needs --features with simulated targets")
        result = est.cross_validate(sigs, simulated, _training_config(args, cfg), k=args.cv)
        estimates, metrics = result.estimates, result.metrics
        for f, m in enumerate(result.fold_metrics):
            print(f"fold {f + 1}: " + "  ".join(f"{g} {m.mae[g]:.4f}" for g in rp.GROUPS))
    else:
        if not args.model:
            raise UsageError("estimate needs --model or --cv")
        model = est.load_model(Path(args.model).read_bytes())
        estimates = {k: est.estimate_features(model, s) for k, s in sigs.items()}
        metrics = None
        if simulated is not None:
            s, f = _pairs(corpus, simulated)
            metrics = est.evaluate_model(model, s, f)
    rp.write_feature_dir(estimates, args.out)
    if metrics is not None:
        table = metrics_table(metrics)
        print(table)
        _write(Path(args.out) / "metrics.txt", table + "\n")
        _write(Path(args.out) / "metrics.json",
               json.dumps(metrics.to_dict(), indent=2, sort_keys=True) + "\n")


def cmd_evaluate(args, cfg):
    features = rp.read_feature_dir(args.features)
    block = dict(cfg.get("protocol", {}))
    for flag, name in (("mode", "mode"), ("group", "feature_group"), ("repeats", "repeats"),
                       ("n_refs", "n_refs")):
        if getattr(args, flag) is not None:
            block[name] = getattr(args, flag)
    block["feature_source"] = next(iter(features.values())).source
    block["seed"] = component_seed(_root_seed(args, cfg), "protocol")
    pcfg = ev.ProtocolConfig.from_dict(block)
    runs = ev.run_protocol(features, pcfg)
    report = ev.aggregate_runs(runs, pcfg)
    out = Path(args.out)
    _write(out / "report.json", report.to_json())
    _write(out / "det.csv", report.det_csv())
    _write(out / "scores.csv", vf.scores_to_csv(runs[0].rows))
    print("runs: " + " ".join(f"{e:.4f}" for e in report.eers))
    print(f"EER {100 * report.eer_mean:.2f}% +/- {100 * report.eer_std:.2f}%")


def cmd_plot(args, cfg):
    curves = []
    for spec in args.det:
        path, _, label = spec.partition("=")
        lines = Path(path).read_text().strip().splitlines()[1:]
        pts = np.array([[float(v) for v in ln.split(",")] for ln in lines])
        curves.append((label or Path(path).parent.name, pts))
    _write(args.out, det_svg(curves))
    print(f"wrote {args.out}")


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def det_svg(curves, lo=1e-3, width=480, height=480, margin=60):
    """DET plot with logarithmic FAR and FRR axes as an SVG document."""
    span = -np.log10(lo)
    inner_w, inner_h = width - 2 * margin, height - 2 * margin

    def sx(v):
        return margin + (np.log10(max(v, lo)) + span) / span * inner_w

    def sy(v):
        return height - margin - (np.log10(max(v, lo)) + span) / span * inner_h

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect x="{margin}" y="{margin}" width="{inner_w}" height="{inner_h}" '
           f'fill="none" stroke="black"/>']
    for e in range(int(round(span)) + 1):
        v = lo * 10 ** e
        x, y = sx(v), sy(v)
        out.append(f'<line x1="{x:.2f}" y1="{margin}" x2="{x:.2f}" y2="{height - margin}" '
                   f'stroke="#ddd"/>')
        out.append(f'<line x1="{margin}" y1="{y:.2f}" x2="{width - margin}" y2="{y:.2f}" '
                   f'stroke="#ddd"/>')
        out.append(f'<text x="{x:.2f}" y="{height - margin + 16}" text-anchor="middle">'
                   f'{100 * v:g}</text>')
        out.append(f'<text x="{margin - 6}" y="{y + 4:.2f}" text-anchor="end">{100 * v:g}</text>')
    out.append(f'<text x="{width / 2}" y="{height - 15}" text-anchor="middle">FAR (%)</text>')
    out.append(f'<text x="15" y="{height / 2}" text-anchor="middle" '
               f'transform="rotate(-90 15 {height / 2})">FRR (%)</text>')
    for k, (label, pts) in enumerate(curves):
        color = _COLORS[k % len(_COLORS)]
        path = " ".join(f"{'M' if i == 0 else 'L'}{sx(a):.2f},{sy(b):.2f}"
                        for i, (a, b) in enumerate(pts))
        out.append(f'<path d="{path}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = margin + 16 + 16 * k
        out.append(f'<line x1="{width - margin - 110}" y1="{ly - 4}" x2="{width - margin - 90}" '
                   f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{width - margin - 85}" y="{ly}">{_escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(s):
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


# ------------------------------------------------------------------------ parser

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    p = _Parser(prog="sigkin", description=__doc__)
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int, help="root seed (overrides the config)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--users", type=int)
    s.add_argument("--genuine", type=int)
    s.add_argument("--forgeries", type=int)

    s = sub.add_parser("ingest", help="convert external signature files to the corpus layout")
    s.add_argument("src")
    s.add_argument("--out", required=True)
    s.add_argument("--columns", help="comma-separated channel names by position, e.g. x,y,p")
    s.add_argument("--sample-rate", type=float, default=100.0)

    s = sub.add_parser("replay", help="simulate the arm and write joint feature files")
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--chain", help=f"chain description (default: ${rm.CHAIN_ENV} or bundled)")

    s = sub.add_parser("train", help="train the estimator on simulated features")
    s.add_argument("--corpus", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int)

    s = sub.add_parser("estimate", help="estimate joint features from pen trajectories")
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--model")
    s.add_argument("--features", help="simulated features, for the MAE/MSE table")
    s.add_argument("--cv", type=int, help="k-fold cross-validated estimation instead of --model")
    s.add_argument("--epochs", type=int)

    s = sub.add_parser("evaluate", help="run the verification protocol")
    s.add_argument("--features", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--mode", choices=("random", "skilled"))
    s.add_argument("--group", choices=("theta", "omega", "tau"))
    s.add_argument("--repeats", type=int)
    s.add_argument("--n-refs", type=int)

    s = sub.add_parser("plot", help="render DET CSV files as SVG")
    s.add_argument("det", nargs="+", help="det.csv[=label]")
    s.add_argument("--out", required=True)
    return p


COMMANDS = {"synth": cmd_synth, "ingest": cmd_ingest, "replay": cmd_replay,
            "train": cmd_train, "estimate": cmd_estimate, "evaluate": cmd_evaluate,
            "plot": cmd_plot}

_DATA_ERRORS = (FileNotFoundError, IsADirectoryError, sio.SignatureParseError,
                sio.SignatureValidationError, rp.DegenerateInputError, est.ModelFormatError,
                ev.ProtocolError, rm.ChainConfigError)
_NUMERIC_ERRORS = (rm.IKError, rp.PlanningError, est.TrainingError,
                   vf.DegenerateReferenceError, FloatingPointError)


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args.config)
        COMMANDS[args.command](args, cfg)
    except (UsageError, sio.ConfigError) as exc:
        print(f"sigkin: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _DATA_ERRORS as exc:
        print(f"sigkin: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except _NUMERIC_ERRORS as exc:
        print(f"sigkin: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
