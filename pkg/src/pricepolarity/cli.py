"""Command-line pipeline: synth/ingest -> label -> embed -> train -> eval, plus sweeps.

Stages exchange files inside a work directory.  Every CSV starts with a
``# manifest=<hash>`` line; the hash covers the command, the resolved
settings and the hashes of every input artifact, so equal hashes mean
byte-identical bodies.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import analysis, pvdm, synth
from ._accel import backend_name
from .corpus import CorpusError, parse_records, split_train_test, write_records
from .gbt import BoosterConfig, Ensemble, train_ensemble
from .labeling import build_labeled_dataset, read_labeled_csv, write_labeled_csv

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("pricepolarity")

EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 1, 2, 3

CORPUS = "corpus.jsonl"
TRUTH = "truth.jsonl"
LABELED = "labeled.csv"
DOCVECTORS = "docvectors.txt"
PVDM_MODEL = "pvdm.bin"

DEFAULTS = {
    "seed": 0,
    "dim": 64,
    "context": 8,
    "epochs": 20,
    "trees": 300,
    "max_depth": 20,
    "lambda": 1.0,
    "gamma": 0.0,
    "eta": 0.3,
    "train_frac": 0.75,
    "min_tokens": 0,
    "embedding": analysis.TRANSDUCTIVE,
    "n_properties": 5000,
    "n_neighbourhoods": 12,
    "text_signal": 0.85,
}
_INT_KEYS = {"seed", "dim", "context", "epochs", "trees", "max_depth", "min_tokens", "n_properties", "n_neighbourhoods"}
_FLOAT_KEYS = {"lambda", "gamma", "eta", "train_frac", "text_signal"}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class InvariantError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- settings and manifest ---------------------------------------------------

def load_config_file(path) -> dict:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"invalid config file {path}: {exc}") from exc
    out = {}
    for key, value in raw.items():
        k = key.replace("-", "_")
        if k not in DEFAULTS:
            raise UsageError(f"unknown config key {key!r} in {path}")
        out[k] = value
    return out


def resolve_settings(args) -> dict:
    """Built-in defaults, overridden by the config file, overridden by flags."""
    settings = dict(DEFAULTS)
    if getattr(args, "config", None):
        settings.update(load_config_file(args.config))
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    for key in _INT_KEYS:
        if isinstance(settings[key], bool) or not isinstance(settings[key], int):
            raise UsageError(f"{key} must be an integer")
    for key in _FLOAT_KEYS:
        if isinstance(settings[key], bool) or not isinstance(settings[key], (int, float)):
            raise UsageError(f"{key} must be a number")
        settings[key] = float(settings[key])
    if settings["embedding"] not in (analysis.TRANSDUCTIVE, analysis.INDUCTIVE):
        raise UsageError("embedding must be 'transductive' or 'inductive'")
    return settings


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def csv_body_hash(path) -> str:
    """Hash of a CSV without its manifest comment line."""
    with open(path, "rb") as fh:
        body = b"".join(line for line in fh if not line.startswith(b"#"))
    return hashlib.sha256(body).hexdigest()


@dataclass
class RunManifest:
    command: str
    settings: dict
    inputs: dict = field(default_factory=dict)  # artifact name -> content hash

    def to_json(self) -> dict:
        return {"command": self.command, "settings": self.settings, "inputs": self.inputs}

    @property
    def hash(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def add_input(self, path: Path) -> None:
        # labeled CSVs embed their own manifest line; hash the body so upstream
        # reruns that reproduce the same body do not change downstream hashes
        self.inputs[path.name] = csv_body_hash(path) if path.suffix == ".csv" else file_hash(path)

    def write(self, workdir: Path) -> Path:
        path = workdir / f"manifest_{self.command.replace('-', '_')}.json"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(dict(self.to_json(), hash=self.hash), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path


def _require(path: Path, produced_by: str) -> Path:
    if not path.exists():
        raise UsageError(f"missing artifact {path} (run `{produced_by}` first)")
    return path


def _pvdm_config(s: dict) -> pvdm.PvdmConfig:
    return pvdm.PvdmConfig(dim=s["dim"], context=s["context"], epochs=s["epochs"], seed=s["seed"])


def _booster(s: dict) -> BoosterConfig:
    return BoosterConfig(n_trees=s["trees"], max_depth=s["max_depth"], reg_lambda=s["lambda"],
                         gamma=s["gamma"], eta=s["eta"], seed=s["seed"])


def _pick(s: dict, *keys) -> dict:
    return {k: s[k] for k in keys}


PVDM_KEYS = ("seed", "dim", "context", "epochs", "min_tokens", "embedding", "train_frac")
BOOST_KEYS = ("seed", "trees", "max_depth", "lambda", "gamma", "eta", "train_frac", "min_tokens")


# -- shared loading ----------------------------------------------------------

def _read_corpus(path: Path):
    try:
        records, rejections = parse_records(path)
    except CorpusError as exc:
        raise DataError(str(exc)) from exc
    for rej in rejections:
        print(f"warning: {path}:{rej.line}: {rej.reason}", file=sys.stderr)
    return records


def _labeled_corpus(workdir: Path, s: dict, manifest: RunManifest) -> analysis.LabeledCorpus:
    corpus_path = _require(workdir / CORPUS, "synth or ingest")
    labeled_path = _require(workdir / LABELED, "label")
    manifest.add_input(corpus_path)
    manifest.add_input(labeled_path)
    records = _read_corpus(corpus_path)
    try:
        corp = analysis.prepare_corpus(records)
        with open(labeled_path, encoding="utf-8") as fh:
            labeled = read_labeled_csv(fh)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    if [lp.record_id for lp in labeled] != corp.ids:
        raise DataError(f"{labeled_path} does not match {corpus_path}; rerun `label`")
    if s["min_tokens"] > 0:
        keep = [i for i, d in enumerate(corp.docs) if d.n_raw >= s["min_tokens"]]
        if not keep:
            raise DataError(f"--min-tokens {s['min_tokens']} excludes every document")
        corp = corp.subset(keep)
    return corp


def _split(corp: analysis.LabeledCorpus, s: dict):
    try:
        return split_train_test(len(corp), s["train_frac"], s["seed"])
    except ValueError as exc:
        raise DataError(str(exc)) from exc


def _doc_vectors(workdir: Path, corp, manifest: RunManifest) -> np.ndarray:
    path = _require(workdir / DOCVECTORS, "embed")
    manifest.add_input(path)
    ids, vectors = pvdm.read_doc_vectors(path)
    if ids != corp.ids:
        raise DataError(f"{path} was written for a different corpus or --min-tokens; rerun `embed`")
    return vectors


def _write_csv(path: Path, rows, columns, manifest: RunManifest) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        analysis.write_table_csv(rows, columns, fh, manifest.hash)
    with open(path.with_suffix(".jsonl"), "w", encoding="utf-8", newline="\n") as fh:
        analysis.write_table_jsonl(rows, fh)
    manifest.write(path.parent)
    print(f"wrote {path}")


# -- commands ----------------------------------------------------------------

def cmd_synth(args, s, workdir: Path) -> int:
    config = synth.SynthConfig(n_properties=s["n_properties"], n_neighbourhoods=s["n_neighbourhoods"],
                               text_signal=s["text_signal"], seed=s["seed"])
    records, truth = synth.generate_corpus(config)
    out = Path(args.out) if args.out else workdir / CORPUS
    write_records(records, out)
    synth.write_truth(truth, out.with_name(TRUTH))
    print(f"wrote {len(records)} records to {out}")
    return 0


def cmd_ingest(args, s, workdir: Path) -> int:
    src = Path(args.input)
    if not src.exists():
        raise UsageError(f"input file {src} does not exist")
    try:
        records, rejections = parse_records(src, schema_mode="strict" if args.strict else "lenient")
    except CorpusError as exc:
        raise DataError(str(exc)) from exc
    for rej in rejections:
        print(f"warning: {src}:{rej.line}: {rej.reason}", file=sys.stderr)
    out = Path(args.out) if args.out else workdir / CORPUS
    write_records(records, out)
    print(f"ingested {len(records)} records, rejected {len(rejections)}; wrote {out}")
    return 0


def cmd_label(args, s, workdir: Path) -> int:
    src = Path(args.input) if args.input else workdir / CORPUS
    _require(src, "synth or ingest")
    out = Path(args.out) if args.out else workdir / LABELED
    records = _read_corpus(src)
    report = build_labeled_dataset(records)
    manifest = RunManifest("label", {})
    manifest.add_input(src)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# manifest={manifest.hash}\n")
        write_labeled_csv(report.labeled, fh)
    manifest.write(out.parent)
    for reason, count in sorted(report.dropped.items()):
        print(f"warning: dropped {count} records: {reason}", file=sys.stderr)
    print(f"labeled {len(report.labeled)} of {len(records)} records "
          f"({report.n_dropped} warnings); wrote {out}")
    return 0


def cmd_embed(args, s, workdir: Path) -> int:
    manifest = RunManifest("embed", _pick(s, *PVDM_KEYS))
    corp = _labeled_corpus(workdir, s, manifest)
    train_rows, _ = _split(corp, s)
    vectors = analysis.embed_documents(corp, _pvdm_config(s), s["embedding"], train_rows)
    if not np.all(np.isfinite(vectors)):
        raise InvariantError("document vectors contain non-finite values")
    pvdm.write_doc_vectors(vectors, corp.ids, workdir / DOCVECTORS)
    manifest.write(workdir)
    print(f"embedded {len(corp)} documents ({s['embedding']}, dim {s['dim']}); wrote {workdir / DOCVECTORS}")
    return 0


def _kinds(model: str) -> list[str]:
    return list(analysis.MODEL_KINDS) if model == "all" else [model]


def _needs_vectors(kind: str) -> bool:
    return kind != analysis.FEATURES_ONLY


def cmd_train(args, s, workdir: Path) -> int:
    kinds = _kinds(args.model)
    manifest = RunManifest("train", _pick(s, *BOOST_KEYS) | {"model": args.model})
    if any(_needs_vectors(k) for k in kinds):
        _require(workdir / DOCVECTORS, "embed")
    corp = _labeled_corpus(workdir, s, manifest)
    vectors = _doc_vectors(workdir, corp, manifest) if any(_needs_vectors(k) for k in kinds) else None
    train_rows, _ = _split(corp, s)
    booster = _booster(s)
    for kind in kinds:
        X = analysis.representation(kind, vectors, corp.features)
        ens = train_ensemble(X.take(train_rows), corp.labels[train_rows], booster,
                             schema_fingerprint=corp.schema_fingerprint)
        path = workdir / f"model_{kind}.json"
        ens.save(path)
        print(f"trained {kind} on {train_rows.size} rows; wrote {path}")
    manifest.write(workdir)
    return 0


EVAL_COLUMNS = ("model", "accuracy", "n_train", "n_test")
BINNED_COLUMNS = ("model", "bin", "lo", "hi", "count", "accuracy")
AGREEMENT_COLUMNS = ("pct_same", "pct_both_correct", "pct_both_wrong")


def cmd_eval(args, s, workdir: Path) -> int:
    kinds = _kinds(args.model)
    manifest = RunManifest("eval", _pick(s, *BOOST_KEYS) | {"model": args.model})
    # check order: embeddings before models, so a missing embed is reported first
    if any(_needs_vectors(k) for k in kinds):
        _require(workdir / DOCVECTORS, "embed")
    for kind in kinds:
        _require(workdir / f"model_{kind}.json", f"train --model {kind}")
    corp = _labeled_corpus(workdir, s, manifest)
    vectors = _doc_vectors(workdir, corp, manifest) if any(_needs_vectors(k) for k in kinds) else None
    train_rows, test_rows = _split(corp, s)
    y_test = corp.labels[test_rows]

    rows, binned, preds = [], [], {}
    for kind in kinds:
        path = workdir / f"model_{kind}.json"
        manifest.add_input(path)
        try:
            ens = Ensemble.load(path, expected_fingerprint=corp.schema_fingerprint)
        except ValueError as exc:
            raise DataError(f"{path}: {exc}") from exc
        X = analysis.representation(kind, vectors, corp.features).take(test_rows)
        try:
            pred = ens.predict_label(X).astype(np.int64)
        except ValueError as exc:
            raise DataError(f"{path}: {exc}") from exc
        preds[kind] = pred
        acc = analysis.accuracy(pred, y_test)
        if not 0.0 <= acc <= 1.0:
            raise InvariantError(f"accuracy {acc} outside [0, 1]")
        rows.append({"model": kind, "accuracy": acc, "n_train": int(train_rows.size),
                     "n_test": int(test_rows.size)})
        if test_rows.size >= 20:
            ba = analysis.binned_accuracy(corp.diff_pcts[test_rows], pred, y_test)
            if sum(b.count for b in ba.bins) != test_rows.size:
                raise InvariantError("accuracy bins do not partition the test set")
            binned += [{"model": kind, "bin": i, "lo": b.lo, "hi": b.hi, "count": b.count,
                        "accuracy": b.accuracy} for i, b in enumerate(ba.bins)]
        print(f"{kind}: accuracy {acc:.4f} on {test_rows.size} test rows")

    _write_csv(workdir / "eval.csv", rows, EVAL_COLUMNS, manifest)
    if binned:
        _write_csv(workdir / "binned.csv", binned, BINNED_COLUMNS, manifest)
    if analysis.DOC2VEC_ONLY in preds and analysis.FEATURES_ONLY in preds:
        ag = analysis.agreement_stats(preds[analysis.DOC2VEC_ONLY], preds[analysis.FEATURES_ONLY], y_test)
        if ag.pct_both_wrong != ag.pct_same - ag.pct_both_correct:
            raise InvariantError("agreement identity violated")
        _write_csv(workdir / "agreement.csv", [asdict(ag)], AGREEMENT_COLUMNS, manifest)
    return 0


def _parse_int_list(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from exc
    if not vals:
        raise UsageError("empty list")
    return vals


def cmd_sweep_dim(args, s, workdir: Path) -> int:
    dims = _parse_int_list(args.dims)
    manifest = RunManifest("sweep-dim", _pick(s, *PVDM_KEYS, *BOOST_KEYS) | {"dims": dims})
    corp = _labeled_corpus(workdir, s, manifest)
    rows = analysis.sweep_dimension(corp, dims, _pvdm_config(s), _booster(s), s["train_frac"],
                                    s["seed"], s["embedding"])
    _write_csv(workdir / "sweep_dim.csv", rows, analysis.DIM_SWEEP_COLUMNS, manifest)
    return 0


def cmd_sweep_min_tokens(args, s, workdir: Path) -> int:
    mins = _parse_int_list(args.mins)
    manifest = RunManifest("sweep-min-tokens", _pick(s, *PVDM_KEYS, *BOOST_KEYS) | {"mins": mins})
    corp = _labeled_corpus(workdir, dict(s, min_tokens=0), manifest)
    try:
        rows = analysis.sweep_min_tokens(corp, mins, _pvdm_config(s), s["dim"], _booster(s),
                                         s["train_frac"], s["seed"], s["embedding"])
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    _write_csv(workdir / "sweep_min_tokens.csv", rows, analysis.MIN_TOKENS_COLUMNS, manifest)
    return 0


CHI2_COLUMNS = ("rank", "token", "statistic", "a", "b", "c", "d")


def cmd_chi2(args, s, workdir: Path) -> int:
    manifest = RunManifest("chi2", _pick(s, "min_tokens") | {"top": args.top})
    corp = _labeled_corpus(workdir, s, manifest)
    scores = analysis.chi2_tokens(corp.docs, corp.labels, len(corp.vocab))
    rows = [{"rank": r + 1, "token": corp.vocab.tokens[c.token], "statistic": c.statistic,
             "a": c.a, "b": c.b, "c": c.c, "d": c.d} for r, c in enumerate(scores[: args.top])]
    _write_csv(workdir / "chi2.csv", rows, CHI2_COLUMNS, manifest)
    return 0


def cmd_profile_length(args, s, workdir: Path) -> int:
    manifest = RunManifest("profile-length", _pick(s, "min_tokens"))
    corp = _labeled_corpus(workdir, s, manifest)
    rows = analysis.description_length_profile(corp.docs, corp.diff_pcts)
    _write_csv(workdir / "length_profile.csv", rows, analysis.PROFILE_COLUMNS, manifest)
    return 0


# -- argument parsing --------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--workdir", default=".", help="directory holding pipeline artifacts (default: .)")
    p.add_argument("--config", help="TOML file with default settings; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--min-tokens", dest="min_tokens", type=int,
                   help="drop documents with fewer raw tokens")
    p.add_argument("--train-frac", dest="train_frac", type=float, help="train fraction (default 0.75)")


def _add_pvdm(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dim", type=int, help="paragraph vector dimension")
    p.add_argument("--context", type=int, help="context words per sample")
    p.add_argument("--epochs", type=int)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--transductive", dest="embedding", action="store_const", const=analysis.TRANSDUCTIVE,
                      help="train doc vectors for all documents (default)")
    mode.add_argument("--inductive", dest="embedding", action="store_const", const=analysis.INDUCTIVE,
                      help="train on the train split, infer test vectors with frozen words")


def _add_booster(p: argparse.ArgumentParser) -> None:
    p.add_argument("--trees", type=int)
    p.add_argument("--max-depth", dest="max_depth", type=int)
    p.add_argument("--lambda", dest="lambda", type=float, help="L2 penalty on leaf weights")
    p.add_argument("--gamma", type=float, help="per-leaf complexity penalty")
    p.add_argument("--eta", type=float, help="shrinkage")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pricepolarity", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    _add_common(p)
    p.add_argument("--out", help=f"corpus path (default: WORKDIR/{CORPUS})")
    p.add_argument("--n-properties", dest="n_properties", type=int)
    p.add_argument("--n-neighbourhoods", dest="n_neighbourhoods", type=int)
    p.add_argument("--text-signal", dest="text_signal", type=float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="validate a JSONL corpus")
    _add_common(p)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out")
    p.add_argument("--strict", action="store_true", help="fail on the first malformed record")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("label", help="compute price polarity labels")
    _add_common(p)
    p.add_argument("--in", dest="input")
    p.add_argument("--out")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("embed", help="train paragraph vectors")
    _add_common(p)
    _add_pvdm(p)
    p.set_defaults(func=cmd_embed)

    for name, func in (("train", cmd_train), ("eval", cmd_eval)):
        p = sub.add_parser(name, help=f"{name} boosted tree models")
        _add_common(p)
        _add_booster(p)
        p.add_argument("--model", choices=analysis.MODEL_KINDS + ("all",), default="all")
        p.set_defaults(func=func)

    p = sub.add_parser("sweep-dim", help="accuracy as a function of embedding dimension")
    _add_common(p)
    _add_pvdm(p)
    _add_booster(p)
    p.add_argument("--dims", default="2,4,8,16,32,64,128")
    p.set_defaults(func=cmd_sweep_dim)

    p = sub.add_parser("sweep-min-tokens", help="accuracy as a function of the minimum description length")
    _add_common(p)
    _add_pvdm(p)
    _add_booster(p)
    p.add_argument("--mins", default="0,5,10,20")
    p.set_defaults(func=cmd_sweep_min_tokens)

    p = sub.add_parser("chi2", help="rank tokens by chi-squared dependence on polarity")
    _add_common(p)
    p.add_argument("--top", type=int, default=20)
    p.set_defaults(func=cmd_chi2)

    p = sub.add_parser("profile-length", help="price difference by description length")
    _add_common(p)
    p.set_defaults(func=cmd_profile_length)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    log.info("kernel backend: %s", backend_name())
    try:
        settings = resolve_settings(args)
        workdir = Path(args.workdir)
        if not workdir.is_dir():
            raise UsageError(f"work directory {workdir} does not exist")
        return args.func(args, settings, workdir)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CorpusError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InvariantError as exc:
        print(f"invariant breach: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except ValueError as exc:
        # configuration values rejected by a module (e.g. negative lambda)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
