"""``notegate`` command line.

Exit codes: 0 success, 1 usage error, 2 data or validation error.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, PipelineConfig, load_config
from .ctc import PhonemeInventory, Posteriorgram, ctc_loss, ppg_loss, read_target, reconstruction_loss
from .decode import FramePosteriors, decode_notes, transcribe
from .evaluate import MatchConfig, aggregate, classify_onsets, onset_type_recall, score, sweep_threshold
from .features import features_from_wav, load_audio, normalize_mel, resample
from .formats import atomic_write_text, matrix_to_tsv, read_f32m, write_f32m
from .labels import FrameLabels, notes_to_frames, read_notes, smooth_labels, write_notes
from .network import forward_note_model, forward_phoneme_model, load_graph, load_weights
from .pitch import load_f0, save_f0, track_f0

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _song_id(path: Path) -> str:
    return path.name.split(".")[0]


def _pair_dirs(a_dir, b_dir, a_glob: str, b_glob: str) -> list[tuple[str, Path, Path]]:
    a_dir, b_dir = Path(a_dir), Path(b_dir)
    for d in (a_dir, b_dir):
        if not d.is_dir():
            raise FileNotFoundError(f"not a directory: {d}")
    a = {_song_id(p): p for p in sorted(a_dir.glob(a_glob))}
    b = {_song_id(p): p for p in sorted(b_dir.glob(b_glob))}
    missing_b = sorted(set(a) - set(b))
    missing_a = sorted(set(b) - set(a))
    if missing_a or missing_b:
        msg = []
        if missing_b:
            msg.append(f"no match in {b_dir} for: " + ", ".join(a[k].name for k in missing_b))
        if missing_a:
            msg.append(f"no match in {a_dir} for: " + ", ".join(b[k].name for k in missing_a))
        raise ValueError("unpaired files; " + "; ".join(msg))
    if not a:
        raise ValueError(f"no files matching {a_glob} in {a_dir}")
    return [(k, a[k], b[k]) for k in sorted(a)]


def _emit_json(obj, out) -> None:
    text = json.dumps(obj, indent=2, sort_keys=False) + "\n"
    if out:
        atomic_write_text(out, text)
    else:
        sys.stdout.write(text)


def _read_posteriors(path) -> FramePosteriors:
    m, hop, t0 = read_f32m(path)
    return FramePosteriors.from_matrix(np.clip(m, 0.0, 1.0), hop, t0)


def _inventory(args, cfg: PipelineConfig) -> PhonemeInventory:
    path = getattr(args, "inventory", None) or cfg.model.inventory
    return PhonemeInventory.from_file(path) if path else PhonemeInventory.default()


def _sibling(out: Path, suffix: str) -> Path:
    return out.with_name(out.name.split(".")[0] + suffix)


# --- commands -----------------------------------------------------------------

def cmd_features(args, cfg: PipelineConfig) -> int:
    _, mel = features_from_wav(args.input, cfg.features)
    if args.normalized:
        mel = normalize_mel(mel)
    write_f32m(args.output, mel.frames, mel.hop_seconds, mel.frame_zero_time)
    if args.tsv:
        atomic_write_text(args.tsv, matrix_to_tsv(mel.frames, mel.hop_seconds, mel.frame_zero_time))
    return EXIT_OK


def _phoneme_ppg(mel, args, cfg) -> Posteriorgram:
    graph_path = args.phoneme_graph or cfg.model.phoneme_graph
    weights_path = args.phoneme_weights or cfg.model.phoneme_weights
    if not graph_path or not weights_path:
        raise UsageError("phoneme model needs --phoneme-graph and --phoneme-weights (or a --ppg file)")
    inv = _inventory(args, cfg)
    graph = load_graph(graph_path)
    return forward_phoneme_model(mel, graph, load_weights(weights_path),
                                 inv if graph.output_dim == inv.n_classes else None)


def cmd_ppg(args, cfg: PipelineConfig) -> int:
    _, mel = features_from_wav(args.input, cfg.features)
    ppg = _phoneme_ppg(mel, args, cfg)
    write_f32m(args.output, ppg.frames, ppg.hop_seconds, ppg.frame_zero_time)
    return EXIT_OK


def cmd_transcribe(args, cfg: PipelineConfig) -> int:
    graph_path = args.graph or cfg.model.note_graph
    weights_path = args.weights or cfg.model.note_weights
    if not graph_path or not weights_path:
        raise UsageError("transcribe needs --graph and --weights")
    out = Path(args.output)
    clip, mel = features_from_wav(args.input, cfg.features)
    if args.ppg:
        m, hop, t0 = read_f32m(args.ppg)
        ppg = Posteriorgram(m, hop, t0)
    else:
        ppg = _phoneme_ppg(mel, args, cfg)
    post = forward_note_model(mel, ppg, load_graph(graph_path), load_weights(weights_path))
    f0 = track_f0(clip, cfg.pitch)
    notes = transcribe(post, f0, cfg.decode)
    write_notes(out, notes)
    if args.dump_mel:
        write_f32m(_sibling(out, ".mel.f32m"), mel.frames, mel.hop_seconds, mel.frame_zero_time)
    if args.dump_ppg:
        write_f32m(_sibling(out, ".ppg.f32m"), ppg.frames, ppg.hop_seconds, ppg.frame_zero_time)
    if args.dump_posteriors:
        write_f32m(_sibling(out, ".posteriors.f32m"), post.as_matrix(), post.hop_seconds,
                   post.frame_zero_time)
    if args.dump_f0:
        save_f0(_sibling(out, ".f0.tsv"), f0)
    if args.dump_unpitched:
        write_notes(_sibling(out, ".unpitched.tsv"), decode_notes(post, cfg.decode))
    return EXIT_OK


def cmd_labels(args, cfg: PipelineConfig) -> int:
    notes = read_notes(args.notes)
    hop = cfg.features.hop_seconds
    if args.frames is not None:
        n_frames = args.frames
    elif args.wav:
        clip = resample(load_audio(args.wav), cfg.features.sample_rate)
        n_frames = clip.samples.size // cfg.features.hop_length + 1
    else:
        n_frames = int(np.floor(max((n.offset for n in notes), default=0.0) / hop)) + 2
    labels = notes_to_frames(notes, n_frames, hop)
    n = args.smooth if args.smooth is not None else cfg.smoothing
    labels = smooth_labels(labels, n)
    write_f32m(args.output, labels.as_matrix(), labels.hop_seconds, labels.frame_zero_time)
    return EXIT_OK


def cmd_smooth(args, cfg: PipelineConfig) -> int:
    m, hop, t0 = read_f32m(args.input)
    labels = FrameLabels.from_matrix(m, hop, t0)
    n = args.n if args.n is not None else cfg.smoothing
    out = smooth_labels(labels, n)
    write_f32m(args.output, out.as_matrix(), hop, t0)
    return EXIT_OK


def cmd_decode(args, cfg: PipelineConfig) -> int:
    post = _read_posteriors(args.posteriors)
    if args.f0:
        notes = transcribe(post, load_f0(args.f0), cfg.decode)
    else:
        notes = decode_notes(post, cfg.decode)
    write_notes(args.output, notes)
    return EXIT_OK


def cmd_pitch_track(args, cfg: PipelineConfig) -> int:
    clip = resample(load_audio(args.input), cfg.pitch.sample_rate)
    save_f0(args.output, track_f0(clip, cfg.pitch))
    return EXIT_OK


def _tolerances(args, cfg) -> list[MatchConfig]:
    if not args.tolerance:
        return [cfg.match]
    return [replace(cfg.match, onset_tolerance=t, offset_min_tolerance=t) for t in args.tolerance]


def cmd_evaluate(args, cfg: PipelineConfig) -> int:
    pairs = _pair_dirs(args.ref_dir, args.est_dir, "*.tsv", "*.tsv")
    songs = [(sid, read_notes(r), read_notes(e)) for sid, r, e in pairs]
    report = {"config": cfg.as_dict(), "songs": [s[0] for s in songs], "metrics": {}}
    rows = ["tolerance\tsong\tmetric\tprecision\trecall\tf1"]
    for mc in _tolerances(args, cfg):
        with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
            reports = list(pool.map(lambda s: score(s[1], s[2], mc), songs))
        agg = aggregate(reports)
        agg["per_song"] = {sid: rep.as_dict() for (sid, _, _), rep in zip(songs, reports)}
        report["metrics"][mc.label] = agg
        for (sid, _, _), rep in zip(songs, reports):
            for name, m in rep.metrics.items():
                rows.append(f"{mc.label}\t{sid}\t{name}\t{m.precision:.6f}\t{m.recall:.6f}\t{m.f1:.6f}")
    if args.per_song:
        atomic_write_text(args.per_song, "\n".join(rows) + "\n")
    _emit_json(report, args.output)
    return EXIT_OK


def cmd_analyze(args, cfg: PipelineConfig) -> int:
    pairs = _pair_dirs(args.ref_dir, args.est_dir, "*.tsv", "*.tsv")
    report = {"config": cfg.as_dict(), "metrics": {}}
    for mc in _tolerances(args, cfg):
        per_song, hits, counts = {}, {}, {}
        for sid, r, e in pairs:
            ref, est = read_notes(r), read_notes(e)
            per_song[sid] = onset_type_recall(ref, est, mc)
            tags = classify_onsets(ref)
            for kind, rec in per_song[sid].items():
                n = tags.count(kind)
                counts[kind] = counts.get(kind, 0) + n
                hits[kind] = hits.get(kind, 0) + (rec * n if rec is not None else 0)
        pooled = {k: (hits[k] / counts[k] if counts[k] else None) for k in counts}
        report["metrics"][mc.label] = {"recall": pooled, "counts": counts, "per_song": per_song}
    _emit_json(report, args.output)
    return EXIT_OK


def cmd_sweep(args, cfg: PipelineConfig) -> int:
    pairs = _pair_dirs(args.posteriors_dir, args.ref_dir, "*.f32m", "*.tsv")
    f0s = {}
    if args.f0_dir:
        f0s = {_song_id(p): p for p in Path(args.f0_dir).glob("*.tsv")}
    data = []
    for sid, post_path, ref_path in pairs:
        f0 = load_f0(f0s[sid]) if sid in f0s else None
        data.append((_read_posteriors(post_path), f0, read_notes(ref_path)))
    result = sweep_threshold(data, thresholds=args.thresholds, cfg=cfg.match, base=cfg.decode)
    _emit_json({"config": cfg.as_dict(), "best_threshold": result.best_threshold,
                "scores": {f"{k:.1f}": v for k, v in result.scores.items()}}, args.output)
    return EXIT_OK


def cmd_ctc_loss(args, cfg: PipelineConfig) -> int:
    m, hop, t0 = read_f32m(args.ppg)
    probs = m.astype(np.float64)
    if args.indices:
        text = Path(args.target).read_text(encoding="utf-8").split()
        target = [int(v) for v in text]
    else:
        inv = _inventory(args, cfg)
        if inv.n_classes != probs.shape[1]:
            raise ValueError(f"PPG has {probs.shape[1]} columns, inventory has {inv.n_classes} classes")
        target = read_target(args.target, inv).labels
    loss = ctc_loss(probs, target)
    out = {"ctc": loss}
    if args.reconstructed and args.mel_target:
        recon = reconstruction_loss(read_f32m(args.reconstructed)[0], read_f32m(args.mel_target)[0])
        out.update(recon=recon, ppg=ppg_loss(loss, recon))
        print(f"ctc\t{loss:.10g}\nrecon\t{recon:.10g}\nppg\t{out['ppg']:.10g}")
    else:
        print(f"{loss:.10g}")
    return EXIT_OK


def cmd_fixtures(args, cfg: PipelineConfig) -> int:
    from .fixtures import write_fixtures

    for name, path in write_fixtures(args.output_dir).items():
        print(f"{name}\t{path}")
    return EXIT_OK


# --- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="notegate", description="Phoneme-informed singing transcription toolkit")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--config", help="TOML config file (default: $NOTEGATE_CONFIG)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def model_flags(sp, note=True):
        if note:
            sp.add_argument("--graph", help="note model graph JSON")
            sp.add_argument("--weights", help="note model weight manifest")
        sp.add_argument("--phoneme-graph")
        sp.add_argument("--phoneme-weights")
        sp.add_argument("--inventory", help="phoneme inventory, one symbol per line")

    def decode_flags(sp):
        sp.add_argument("--onset-th", type=float, dest="onset_threshold")
        sp.add_argument("--offset-th", type=float, dest="offset_threshold")

    def tolerance_flag(sp):
        sp.add_argument("--tolerance", type=float, nargs="+",
                        help="onset tolerance / offset floor in seconds (e.g. 0.05 0.1)")

    sp = sub.add_parser("features", help="log-mel spectrogram of a WAV file")
    sp.add_argument("input")
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--normalized", action="store_true", help="scale to [-1, 1]")
    sp.add_argument("--tsv", help="also write a TSV copy")
    sp.set_defaults(func=cmd_features)

    sp = sub.add_parser("ppg", help="phonetic posteriorgram from the phoneme model")
    sp.add_argument("input")
    sp.add_argument("-o", "--output", required=True)
    model_flags(sp, note=False)
    sp.set_defaults(func=cmd_ppg)

    sp = sub.add_parser("transcribe", help="WAV to pitched notes")
    sp.add_argument("input")
    sp.add_argument("-o", "--output", required=True)
    model_flags(sp)
    sp.add_argument("--ppg", help="use this PPG F32M instead of running the phoneme model")
    decode_flags(sp)
    for what in ("mel", "ppg", "posteriors", "f0", "unpitched"):
        sp.add_argument(f"--dump-{what}", action="store_true", help=f"write the {what} next to the output")
    sp.set_defaults(func=cmd_transcribe)

    sp = sub.add_parser("labels", help="framewise targets from a note TSV")
    sp.add_argument("notes")
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--frames", type=int)
    sp.add_argument("--wav", help="take the frame count from this recording")
    sp.add_argument("--smooth", type=int, help="triangular window size (1 = none)")
    sp.set_defaults(func=cmd_labels)

    sp = sub.add_parser("smooth", help="triangular smoothing of onset/offset labels")
    sp.add_argument("input")
    sp.add_argument("-N", type=int, dest="n")
    sp.add_argument("-o", "--output", required=True)
    sp.set_defaults(func=cmd_smooth)

    sp = sub.add_parser("decode", help="posteriors (+ F0) to notes")
    sp.add_argument("--posteriors", required=True)
    sp.add_argument("--f0")
    sp.add_argument("-o", "--output", required=True)
    decode_flags(sp)
    sp.set_defaults(func=cmd_decode)

    sp = sub.add_parser("pitch", help="F0 tracking")
    psub = sp.add_subparsers(dest="pitch_command", required=True, parser_class=_Parser)
    tp = psub.add_parser("track", help="pYIN F0 contour of a WAV file")
    tp.add_argument("input")
    tp.add_argument("-o", "--output", required=True)
    tp.add_argument("--fmin", type=float, dest="f_min")
    tp.add_argument("--fmax", type=float, dest="f_max")
    tp.set_defaults(func=cmd_pitch_track)

    sp = sub.add_parser("evaluate", help="note metrics over paired directories")
    sp.add_argument("ref_dir")
    sp.add_argument("est_dir")
    tolerance_flag(sp)
    sp.add_argument("-o", "--output", help="JSON report (default stdout)")
    sp.add_argument("--per-song", help="per-song TSV")
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("analyze", help="transition / re-onset recall")
    sp.add_argument("ref_dir")
    sp.add_argument("est_dir")
    tolerance_flag(sp)
    sp.add_argument("-o", "--output")
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("sweep", help="onset/offset threshold sweep on validation data")
    sp.add_argument("--posteriors-dir", required=True)
    sp.add_argument("--ref-dir", required=True)
    sp.add_argument("--f0-dir")
    sp.add_argument("--thresholds", type=float, nargs="+")
    sp.add_argument("-o", "--output")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("ctc-loss", help="CTC (and optional reconstruction) loss")
    sp.add_argument("--ppg", required=True)
    sp.add_argument("--target", required=True, help="whitespace-separated phoneme symbols")
    sp.add_argument("--inventory")
    sp.add_argument("--indices", action="store_true", help="target holds class indices")
    sp.add_argument("--reconstructed", help="reconstructed mel F32M")
    sp.add_argument("--mel-target", help="normalized mel F32M")
    sp.set_defaults(func=cmd_ctc_loss)

    sp = sub.add_parser("fixtures", help="write synthetic test assets")
    sp.add_argument("output_dir")
    sp.set_defaults(func=cmd_fixtures)
    return p


def _apply_flags(cfg: PipelineConfig, args) -> PipelineConfig:
    cfg = cfg.override("decode", onset_threshold=getattr(args, "onset_threshold", None),
                       offset_threshold=getattr(args, "offset_threshold", None))
    cfg = cfg.override("pitch", f_min=getattr(args, "f_min", None), f_max=getattr(args, "f_max", None))
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _apply_flags(load_config(args.config), args)
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"notegate: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, OSError, ValueError) as exc:
        print(f"notegate: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
