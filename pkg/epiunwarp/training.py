# -*- coding: utf-8 -*-
"""
Training, inference and evaluation engines behind the command line.
"""

import collections
import logging
import math
import time

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import IoError, NonFiniteLoss
from .measures import LossBreakdown, mutual_information, paired_t_test, params_l1, rmse, total_loss
from .network import UNet, unet_forward
from .nifti import read_nifti, write_nifti
from .optim import OptimState, adam_step, scheduler_step
from .pipeline import augment, build_stacks, from_plane, read_manifest, sample_rng, split_subjects
from .unwarp import as_tensor, correct_series, pull_back
from .volume import SLAB_AXIS, DisplacementMap, Mask3D, Volume3D

log = logging.getLogger(__name__)

INFERENCE_BATCH = 8

LOG_COLUMNS = LossBreakdown._fields + ('val_total', 'lr')

Subject = collections.namedtuple('Subject', 'subject_id b0 t1 vdm mask')

TrainReport = collections.namedtuple('TrainReport', 'epochs best_epoch best_val history split')

EpochRecord = collections.namedtuple('EpochRecord', 'epoch train val_total lr')

CorrectReport = collections.namedtuple('CorrectReport', 'vdm_path b0_path seconds')

EvalRow = collections.namedtuple(
    'EvalRow', 'subject_id pred_vdm ref_vdm pred_b0 ref_b0 t1 mask')


def load_subject(row, pe_axis=1):
    """Read one manifest row into volumes on a common grid."""
    b0 = Volume3D.from_raw(read_nifti(row.b0), pe_axis)
    t1 = Volume3D.from_raw(read_nifti(row.t1), pe_axis)
    vdm = DisplacementMap.from_raw(read_nifti(row.vdm), pe_axis)
    mask = Mask3D.from_volume(Volume3D.from_raw(read_nifti(row.mask), pe_axis))
    b0.check_grid(t1, vdm, mask)
    return Subject(row.subject_id, b0, t1, vdm, mask)


def subject_stacks(subject, dilation=0):
    stacks = build_stacks(subject.b0, subject.t1, subject.vdm, subject.mask, dilation)
    return [s._replace(subject_id=subject.subject_id) for s in stacks]


def batch_breakdown(model, stacks, weights, settings, training=False, soft_mi=True):
    """
    Mean :class:`LossBreakdown` over ``stacks``.

    The reference b0 is the distorted centre slice unwarped with the target VDM,
    the corrected b0 the same slice unwarped with the prediction.
    """
    inputs = as_tensor(np.stack([s.input for s in stacks]))
    predictions = unet_forward(inputs, model, training=training)
    weight_l1 = params_l1(model.parameters()) if weights.reg else 0.0
    terms = []
    for sample, prediction in zip(stacks, predictions):
        distorted = as_tensor(sample.distorted_b0)
        target = as_tensor(sample.target_vdm[0])
        pred = prediction[0]
        b0_ref = pull_back(distorted, target / sample.pe_voxel_size)
        b0_corrected = pull_back(distorted, pred / sample.pe_voxel_size)
        terms.append(total_loss(pred, target, b0_corrected, b0_ref, as_tensor(sample.t1), sample.mask,
                                weights, weight_l1, settings, soft_mi=soft_mi))
    return LossBreakdown.mean(terms)


def _batches(items, size):
    for start in range(0, len(items), size):
        yield items[start:start + size]


def _describe(batch):
    return ', '.join('%s[%d]' % (s.subject_id, s.slice_index) for s in batch)


def augmented_epoch(stacks, config, epoch):
    """This epoch's shuffled, augmented samples."""
    seed = config.augment.seed
    order = np.random.default_rng([seed, epoch]).permutation(len(stacks))
    samples = []
    for index, position in enumerate(order):
        rng = sample_rng(seed, epoch, index)
        partner = stacks[int(rng.integers(len(stacks)))]
        sample = augment(stacks[position], config.augment, rng, partner)
        if not config.train.use_t1w:
            sample = sample.without_t1()
        samples.append(sample)
    return samples


def validate(model, stacks, config):
    if not config.train.use_t1w:
        stacks = [s.without_t1() for s in stacks]
    totals = []
    with torch.no_grad():
        for batch in _batches(stacks, config.train.batch_size):
            breakdown = batch_breakdown(model, batch, config.loss, config.measures,
                                        training=False, soft_mi=config.train.soft_mi)
            totals.append(float(breakdown.total) * len(batch))
    return sum(totals) / len(stacks)


def _write_log_row(handle, values):
    handle.write('\t'.join(values) + '\n')
    handle.flush()


def train(config, rows, checkpoint_path, log_path=None):
    """
    Fit a network on the subjects in ``rows``.

    Keeps the checkpoint with the best validation loss at ``checkpoint_path``.
    With fewer than three subjects the same subjects serve for training and
    validation.
    """
    tc = config.train
    torch.manual_seed(tc.seed)
    ids = [row.subject_id for row in rows]
    if len(ids) >= 3:
        train_ids, val_ids, test_ids = split_subjects(ids, config.split)
    else:
        log.warning('Only %d subject(s): validating on the training data', len(ids))
        train_ids, val_ids, test_ids = ids, ids, []
    by_id = dict((row.subject_id, row) for row in rows)

    def stacks_for(subject_ids):
        stacks = []
        for subject_id in subject_ids:
            subject = load_subject(by_id[subject_id], config.phantom.pe_axis)
            stacks.extend(subject_stacks(subject, tc.mask_dilation))
        return stacks

    train_stacks, val_stacks = stacks_for(train_ids), stacks_for(val_ids)
    log.info('Training on %d slices from %d subjects, validating on %d slices',
             len(train_stacks), len(train_ids), len(val_stacks))

    model = UNet(config.network)
    state = OptimState(model.named_parameters(), lr=tc.lr, patience=tc.patience,
                       factor=tc.lr_factor, stop_after=tc.stop_after)
    parameters = list(model.parameters())
    history = []
    best_epoch = 0
    try:
        handle = open(log_path, 'w') if log_path else None
    except OSError as exc:
        raise IoError('Cannot write loss log %s: %s' % (log_path, exc))
    try:
        if handle:
            _write_log_row(handle, ('epoch',) + LOG_COLUMNS)
        for epoch in range(1, tc.epochs + 1):
            breakdowns = []
            samples = augmented_epoch(train_stacks, config, epoch)
            for number, batch in enumerate(_batches(samples, tc.batch_size)):
                breakdown = batch_breakdown(model, batch, config.loss, config.measures,
                                            training=True, soft_mi=tc.soft_mi)
                if not bool(torch.isfinite(breakdown.total)):
                    raise NonFiniteLoss('Loss is %s at epoch %d, batch %d (%s).'
                                        % (float(breakdown.total), epoch, number, _describe(batch)))
                grads = torch.autograd.grad(breakdown.total, parameters, allow_unused=True)
                grads = [torch.zeros_like(p) if g is None else g for p, g in zip(parameters, grads)]
                adam_step(parameters, grads, state)
                breakdowns.append(breakdown.as_floats())
            mean = LossBreakdown.mean(breakdowns)
            val_total = validate(model, val_stacks, config)
            lr = state.lr
            improved = val_total < state.best
            scheduler_step(state, val_total)
            if improved:
                best_epoch = epoch
                save_checkpoint(model, state, checkpoint_path, metadata={
                    'epoch': epoch, 'val_total': val_total, 'use_t1w': tc.use_t1w,
                    'mask_dilation': tc.mask_dilation})
            record = EpochRecord(epoch, mean, val_total, lr)
            history.append(record)
            log.info('epoch %d: train %.5f val %.5f lr %g', epoch, mean.total, val_total, lr)
            if handle:
                _write_log_row(handle, ['%d' % epoch] + ['%.8g' % v for v in mean]
                               + ['%.8g' % val_total, '%.8g' % lr])
            if state.should_stop:
                log.info('No validation improvement for %d epochs; stopping', state.stop_after)
                break
    finally:
        if handle:
            handle.close()
    return TrainReport(len(history), best_epoch, state.best, history, (train_ids, val_ids, test_ids))


def infer_vdm(model, b0, t1, mask, use_t1w=True, dilation=0, batch_size=INFERENCE_BATCH):
    """
    Predict a :class:`DisplacementMap` slice by slice.

    Slices whose mask is empty are predicted as zero.
    """
    placeholder = DisplacementMap.zeros_like(b0)
    stacks = build_stacks(b0, t1, placeholder, mask, dilation)
    if not use_t1w:
        stacks = [s.without_t1() for s in stacks]
    values = np.zeros(b0.extents)
    with torch.no_grad():
        for batch in _batches(stacks, batch_size):
            predictions = unet_forward(as_tensor(np.stack([s.input for s in batch])), model)
            for sample, prediction in zip(batch, predictions):
                values[:, :, sample.slice_index] = from_plane(prediction[0].numpy(), b0.pe_axis)
    log.debug('infer_vdm: predicted %d of %d slices', len(stacks), b0.extents[SLAB_AXIS])
    return placeholder.with_values(values)


def correct(checkpoint_path, b0_path, t1_path, mask_path, out_prefix, pe_axis=1):
    """
    Predict the VDM of a subject and unwarp its b0 (every frame of a 4-D series).

    Writes ``<out_prefix>_vdm.nii.gz`` and ``<out_prefix>_b0.nii.gz``.
    """
    started = time.perf_counter()
    checkpoint = load_checkpoint(checkpoint_path)
    metadata = checkpoint.metadata
    b0_raw = read_nifti(b0_path)
    b0 = Volume3D.from_raw(b0_raw, pe_axis)
    t1 = Volume3D.from_raw(read_nifti(t1_path), pe_axis)
    mask = Mask3D.from_volume(Volume3D.from_raw(read_nifti(mask_path), pe_axis))
    b0.check_grid(t1, mask)

    vdm = infer_vdm(checkpoint.model, b0, t1, mask, use_t1w=metadata.get('use_t1w', True),
                    dilation=metadata.get('mask_dilation', 0))
    corrected = correct_series(b0_raw, vdm)
    vdm_path = '%s_vdm.nii.gz' % out_prefix
    b0_out = '%s_b0.nii.gz' % out_prefix
    write_nifti(vdm.to_raw(b0_raw.header), vdm_path)
    write_nifti(corrected, b0_out)
    seconds = time.perf_counter() - started
    log.info('Corrected %s in %.2f s', b0_path, seconds)
    return CorrectReport(vdm_path, b0_out, seconds)


def evaluate_arrays(pred_vdm, ref_vdm, pred_b0, ref_b0, t1, mask, settings):
    """Masked VDM/b0 RMSE and the T1w mutual information of both b0s."""
    region = mask.values
    return collections.OrderedDict([
        ('vdm_rmse', float(rmse(pred_vdm.values, ref_vdm.values, region))),
        ('b0_rmse', float(rmse(pred_b0.values, ref_b0.values, region))),
        ('mi_pred', float(mutual_information(t1.values, pred_b0.values, region, settings))),
        ('mi_ref', float(mutual_information(t1.values, ref_b0.values, region, settings))),
    ])


def evaluate_paths(row, settings, pe_axis=1):
    def volume(path, cls=Volume3D):
        return cls.from_raw(read_nifti(path), pe_axis)

    pred_vdm, ref_vdm = volume(row.pred_vdm, DisplacementMap), volume(row.ref_vdm, DisplacementMap)
    pred_b0, ref_b0, t1 = volume(row.pred_b0), volume(row.ref_b0), volume(row.t1)
    mask = Mask3D.from_volume(volume(row.mask))
    pred_vdm.check_grid(ref_vdm, pred_b0, ref_b0, t1, mask)
    return evaluate_arrays(pred_vdm, ref_vdm, pred_b0, ref_b0, t1, mask, settings)


def summarize(metrics):
    """``{name: (mean, sd)}`` over per-subject metric dictionaries (sample sd)."""
    summary = collections.OrderedDict()
    for name in metrics[0]:
        values = np.array([m[name] for m in metrics])
        sd = values.std(ddof=1) if values.size > 1 else math.nan
        summary[name] = (float(values.mean()), float(sd))
    return summary


def evaluate_manifest(path, settings, pe_axis=1):
    """
    Per-subject metrics for every row of an evaluation manifest, their
    summary and the paired t-test of ``mi_pred`` against ``mi_ref``.
    """
    rows = read_manifest(path, EvalRow._fields, EvalRow)
    metrics = []
    for row in rows:
        metrics.append(evaluate_paths(row, settings, pe_axis))
        log.info('%s: vdm_rmse %.4f b0_rmse %.4f', row.subject_id, metrics[-1]['vdm_rmse'],
                 metrics[-1]['b0_rmse'])
    t, p = paired_t_test([m['mi_pred'] for m in metrics], [m['mi_ref'] for m in metrics])
    return rows, metrics, summarize(metrics), (t, p)
