#!/usr/bin/env python3

import argparse
import logging
import sys
from pathlib import Path

from hygienefeat import pipeline
from hygienefeat.config import LOG_LEVEL, apply_overrides, load_settings
from hygienefeat.errors import ConfigError, HygieneFeatError

logger = logging.getLogger("hygienefeat")


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('-o', '--out', default='.', help='Output directory.')
    common.add_argument('-c', '--config', help='File of section.field=value overrides.')
    common.add_argument('--seed', type=int, default=0, help='Seed for the synthetic texture.')
    common.add_argument('-v', '--verbose', action='store_true', help='Debug logging.')
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = argparse.ArgumentParser(prog='hygienefeat',
                                     description='Hand-hygiene image features: contours, corners, SIFT.')
    sub = parser.add_subparsers(dest='command', required=True)

    for name, text in (('contour', 'Skin/threshold contour with convex hull.'),
                       ('harris', 'Harris corners.'),
                       ('shi-tomasi', 'Shi-Tomasi corners.'),
                       ('sift', 'SIFT keypoints and descriptors.')):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument('image', help='Input PGM/PPM image.')

    for name, text in (('centroid-track', 'Per-frame hand centroid of a frame directory.'),
                       ('segment-stages', 'Split a frame directory into the six washing stages.')):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument('frames', help='Directory of PNM frames (sorted by name).')
        p.add_argument('--fps', type=float, help='Frame rate of the sequence.')
        p.add_argument('--workers', type=int, help='Frame-level worker threads.')
        if name == 'centroid-track':
            p.add_argument('--plot', action='store_true', help='Also write centroid_trace.png.')
        else:
            p.add_argument('--area-fraction', type=float, help='Skin fraction above which a frame is active.')
            p.add_argument('--min-pause-frames', type=int, help='Inactive frames that end a stage.')

    p = sub.add_parser('match', parents=[common], help='Match SIFT descriptors of two images.')
    p.add_argument('image', help='First PGM/PPM image.')
    p.add_argument('other', help='Second PGM/PPM image.')
    p.add_argument('--ratio', type=float, help='Lowe ratio threshold (sift.match_ratio).')

    p = sub.add_parser('invariance-report', parents=[common],
                       help='Rotation/scale/illumination repeatability matrix.')
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument('image', nargs='?', help='Input PGM/PPM image.')
    src.add_argument('--synthetic', action='store_true', help='Use the seeded synthetic texture.')
    p.add_argument('--workers', type=int, help='Detector-level worker threads.')

    p = sub.add_parser('manifest', parents=[common], help='Validate a participant CSV.')
    p.add_argument('csv', help='Participant manifest CSV.')
    return parser


def _pipeline_overrides(args, settings):
    updates = {}
    for flag, field in (('fps', 'fps'), ('workers', 'workers'), ('area_fraction', 'area_fraction'),
                        ('min_pause_frames', 'min_pause_frames')):
        value = getattr(args, flag, None)
        if value is not None:
            updates[f'pipeline.{field}'] = value
    if not updates:
        return settings
    return apply_overrides(settings, updates)


def run(args) -> int:
    settings = _pipeline_overrides(args, load_settings(args.config))
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise HygieneFeatError(f"cannot create output directory {out}: {e}") from e
    cfg = settings.pipeline

    if args.command in pipeline.COMMANDS:
        pipeline.run_detector(args.command, args.image, settings, out)
        return 0

    if args.command == 'match':
        if args.ratio is not None:
            settings = apply_overrides(settings, {'sift.match_ratio': args.ratio})
        pipeline.match_images(args.image, args.other, settings, out)
        return 0

    if args.command == 'centroid-track':
        seq = pipeline.FrameSequence.from_directory(args.frames, cfg.fps)
        trace = pipeline.centroid_track(seq, settings.segmentation, cfg.workers)
        pipeline.write_text(pipeline.trace_csv(trace), out / 'centroid_trace.csv')
        pipeline.write_json(pipeline.trace_summary(trace).model_dump(), out / 'centroid_summary.json')
        if args.plot:
            pipeline.plot_trace(trace, out / 'centroid_trace.png')
        logger.info("✅ centroid trace of %d frames written to %s", len(trace.samples), out)
        return 0

    if args.command == 'segment-stages':
        seq = pipeline.FrameSequence.from_directory(args.frames, cfg.fps)
        result = pipeline.segment_stages(seq, cfg.area_fraction, cfg.min_pause_frames,
                                         settings.segmentation, cfg.workers)
        pipeline.write_text(pipeline.stages_csv(result), out / 'stages.csv')
        pipeline.write_text(pipeline.render_stages(result, seq.fps), out / 'stages.txt')
        pipeline.write_json({
            "segments": [dict(s.model_dump(), stage_name=s.stage_name) for s in result.segments],
            "dropped_runs": result.dropped_runs,
        }, out / 'stages.json')
        logger.info("✅ %d stages written to %s", len(result.segments), out)
        return 0

    if args.command == 'invariance-report':
        image = None if args.synthetic else args.image
        reports, matched = pipeline.invariance_report(image, out / 'invariance.csv', settings,
                                                      seed=args.seed, workers=cfg.workers)
        print((out / 'invariance.txt').read_text(encoding='utf-8'), end='')
        if not matched:
            print("❌ verdict pattern differs from the expected table", file=sys.stderr)
            return 1
        return 0

    if args.command == 'manifest':
        records = pipeline.ingest_manifest(args.csv)
        pipeline.write_json([r.model_dump() for r in records], out / 'manifest.json')
        pipeline.write_manifest(records, out / 'manifest.csv')
        logger.info("✅ %d records validated", len(records))
        return 0

    raise ValueError(f"unhandled command {args.command!r}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    logging.basicConfig(level=logging.DEBUG if args.verbose else LOG_LEVEL,
                        format='%(message)s', stream=sys.stderr, force=True)
    try:
        return run(args)
    except ConfigError as e:
        print(f"❌ {e}", file=sys.stderr)
        return 2
    except HygieneFeatError as e:
        print(f"❌ {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
