# -*- coding: utf-8 -*-
"""
``epi-unwarp {simulate|fm2vdm|train|correct|evaluate}``.

Logs go to standard error; reports are ``key=value`` lines on standard
output. Exit status is 0 on success, 1 for usage or configuration errors and
2 for data errors.
"""

import argparse
import logging
import os
import sys

import numpy as np

from . import __version__
from .config import RunConfig, apply_threads, load_config
from .errors import ConfigError, UnwarpError
from .nifti import read_nifti, write_nifti
from .phantom import generate_dataset
from .pipeline import read_manifest
from .training import EvalRow, correct, evaluate_manifest, evaluate_paths, train
from .unwarp import AcquisitionParams, FieldMap, correct_series, fieldmap_to_vdm

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class ArgumentParser(argparse.ArgumentParser):

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def report(**values):
    for key, value in values.items():
        if isinstance(value, float):
            value = '%.6g' % value
        print('%s=%s' % (key, value))


def _config(args):
    config = load_config(args.config) if args.config else RunConfig()
    return config


def _pe_axis(args, config):
    return config.phantom.pe_axis if args.pe_axis is None else args.pe_axis


def cmd_simulate(args):
    config = _config(args)
    phantom = {}
    if args.seed is not None:
        phantom['seed'] = args.seed
    if args.extents:
        phantom['extents'] = args.extents
    if phantom:
        config = config.with_overrides(phantom=phantom)

    def on_subject(row, generated):
        vdm = generated.vdm.values
        report(subject=row.subject_id, vdm_min=float(vdm.min()), vdm_max=float(vdm.max()),
               vdm_mean_abs=float(np.abs(vdm[generated.mask.values]).mean()))

    manifest, rows = generate_dataset(args.subjects, config.phantom, args.out_dir,
                                      on_subject=on_subject, blip_down=args.blip_down)
    report(manifest=manifest, subjects=len(rows))


def cmd_fm2vdm(args):
    config = _config(args)
    raw = read_nifti(args.fieldmap)
    fieldmap = FieldMap.from_raw(raw, _pe_axis(args, config))
    acq = config.acquisition
    acq = AcquisitionParams(
        readout_time=args.readout_time if args.readout_time is not None else acq.readout_time,
        pe_voxel_size=args.pe_voxel_size if args.pe_voxel_size is not None else fieldmap.pe_voxel_size,
        pe_sign=args.pe_sign if args.pe_sign is not None else acq.pe_sign)
    vdm = fieldmap_to_vdm(fieldmap, acq)
    write_nifti(vdm.to_raw(raw.header), args.out)
    outputs = {'vdm': args.out}
    if args.distorted:
        if not args.b0_out:
            raise UsageError('--distorted needs --b0-out')
        write_nifti(correct_series(read_nifti(args.distorted), vdm), args.b0_out)
        outputs['b0'] = args.b0_out
    report(**outputs)


def cmd_train(args):
    config = _config(args)
    overrides = dict((key, value) for key, value in (
        ('epochs', args.epochs), ('batch_size', args.batch_size), ('lr', args.lr),
        ('seed', args.seed)) if value is not None)
    if overrides:
        config = config.with_overrides(train=overrides)
    if args.seed is not None:
        config = config.with_overrides(augment={'seed': args.seed}, split={'seed': args.seed})
    network = dict((key, value) for key, value in (
        ('levels', args.levels), ('base_channels', args.base_channels)) if value is not None)
    if network:
        config = config.with_overrides(network=network)
    config = config.with_ablation(args.ablation)
    rows = read_manifest(args.manifest)
    log_path = args.log or os.path.splitext(args.checkpoint)[0] + '_loss.tsv'
    result = train(config, rows, args.checkpoint, log_path)
    report(epochs=result.epochs, best_epoch=result.best_epoch, best_val=result.best_val,
           checkpoint=args.checkpoint, log=log_path)


def cmd_correct(args):
    pe_axis = _pe_axis(args, _config(args))
    result = correct(args.checkpoint, args.b0, args.t1, args.mask, args.out_prefix, pe_axis)
    report(vdm=result.vdm_path, b0=result.b0_path, seconds=result.seconds)


def cmd_evaluate(args):
    config = _config(args)
    settings, pe_axis = config.measures, _pe_axis(args, config)
    if args.manifest:
        rows, metrics, summary, (t, p) = evaluate_manifest(args.manifest, settings, pe_axis)
        for row, values in zip(rows, metrics):
            report(subject=row.subject_id, **values)
        for name, (mean, sd) in summary.items():
            report(**{name + '_mean': mean, name + '_sd': sd})
        report(t=t, p=p, n=len(rows))
        return
    paths = [args.pred_vdm, args.ref_vdm, args.pred_b0, args.ref_b0, args.t1, args.mask]
    if any(path is None for path in paths):
        raise UsageError('evaluate needs --manifest or all of --pred-vdm --ref-vdm '
                         '--pred-b0 --ref-b0 --t1 --mask')
    report(**evaluate_paths(EvalRow('subject', *paths), settings, pe_axis))


def build_parser():
    parser = ArgumentParser(prog='epi-unwarp', description='EPI susceptibility distortion toolkit.')
    parser.add_argument('--version', action='version', version='%(prog)s ' + __version__)
    parser.add_argument('-v', '--verbose', action='count', default=0)
    parser.add_argument('-q', '--quiet', action='store_true')
    commands = parser.add_subparsers(dest='command', parser_class=ArgumentParser)
    commands.required = True

    def command(name, handler, help):
        sub = commands.add_parser(name, help=help)
        sub.add_argument('--config', help='JSON run configuration')
        sub.set_defaults(handler=handler)
        return sub

    sub = command('simulate', cmd_simulate, 'write a synthetic phantom dataset')
    sub.add_argument('out_dir')
    sub.add_argument('--subjects', type=int, default=4)
    sub.add_argument('--seed', type=int)
    sub.add_argument('--extents', type=int, nargs=3, metavar=('X', 'Y', 'Z'))
    sub.add_argument('--blip-down', action='store_true', help='reverse the phase-encode polarity')

    sub = command('fm2vdm', cmd_fm2vdm, 'convert a field map (Hz) to a VDM (mm)')
    sub.add_argument('fieldmap')
    sub.add_argument('out')
    sub.add_argument('--readout-time', type=float, help='total readout time in seconds')
    sub.add_argument('--pe-voxel-size', type=float, help='defaults to the field map header')
    sub.add_argument('--pe-sign', type=int, choices=(1, -1))
    sub.add_argument('--pe-axis', type=int, choices=(0, 1),
                     help='defaults to the configured phantom axis')
    sub.add_argument('--distorted', help='distorted b0 to unwarp with the new VDM')
    sub.add_argument('--b0-out')

    sub = command('train', cmd_train, 'train a network on a manifest')
    sub.add_argument('manifest')
    sub.add_argument('checkpoint')
    sub.add_argument('--log', help='loss log (tab separated)')
    sub.add_argument('--epochs', type=int)
    sub.add_argument('--batch-size', type=int)
    sub.add_argument('--lr', type=float)
    sub.add_argument('--seed', type=int)
    sub.add_argument('--levels', type=int)
    sub.add_argument('--base-channels', type=int)
    sub.add_argument('--ablation', choices=('none', 'no-t1w', 'no-grad'), default='none')

    sub = command('correct', cmd_correct, 'predict a VDM and unwarp a b0')
    for name in ('checkpoint', 'b0', 't1', 'mask', 'out_prefix'):
        sub.add_argument(name)
    sub.add_argument('--pe-axis', type=int, choices=(0, 1),
                     help='defaults to the configured phantom axis')

    sub = command('evaluate', cmd_evaluate, 'score predictions against references')
    sub.add_argument('--manifest', help='table with columns %s' % ' '.join(EvalRow._fields))
    for name in ('pred-vdm', 'ref-vdm', 'pred-b0', 'ref-b0', 't1', 'mask'):
        sub.add_argument('--' + name)
    sub.add_argument('--pe-axis', type=int, choices=(0, 1),
                     help='defaults to the configured phantom axis')
    return parser


def _configure_logging(args):
    level = logging.WARNING if args.quiet else (logging.DEBUG if args.verbose > 1 else logging.INFO)
    logging.basicConfig(stream=sys.stderr, level=level, format='%(levelname)s %(name)s: %(message)s')


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write('epi-unwarp: %s\n' % exc)
        return EXIT_USAGE
    _configure_logging(args)
    try:
        apply_threads()
        args.handler(args)
    except UsageError as exc:
        sys.stderr.write('epi-unwarp: %s\n' % exc)
        return EXIT_USAGE
    except ConfigError as exc:
        log.error('%s', exc)
        return EXIT_USAGE
    except UnwarpError as exc:
        log.error('%s: %s', type(exc).__name__, exc)
        return EXIT_DATA
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
