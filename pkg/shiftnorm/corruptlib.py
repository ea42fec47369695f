# Copyright the shiftnorm contributors
# SPDX-License-Identifier: Apache-2.0

"""
<Program Name>
  corruptlib.py

<Copyright>
  See LICENSE for licensing information.

<Purpose>
  Generates synthetic Gaussian mixture classification data and applies the
  parametric corruption families of `shiftnorm.models.corruption` to it.
  Corruptions change features only; labels are passed through unchanged.

  Datasets are written as CSV with feature columns f0..f{D-1} and a label
  column y. Corrupted datasets carry a JSON sidecar recording the
  corruption and seed.

"""
import csv
import json
import logging

import numpy as np
from securesystemslib.exceptions import FormatError

import shiftnorm.settings
from shiftnorm.formats import (
    _check_int,
    _check_positive,
    _check_positive_int,
    _check_real,
)
from shiftnorm.models.common import FORMAT_VERSION
from shiftnorm.models.corruption import FAMILY_CATEGORY, CorruptionSpec
from shiftnorm.models.dataset import Dataset
from shiftnorm.rng import CounterRNG, derive_seed

LOG = logging.getLogger(__name__)

# Samples a generated dataset must have at least
MIN_SAMPLES = 64

# Smallest admissible distance between class means, in units of the
# per-component standard deviation
MIN_SEPARATION = 4.0

DEFAULT_SEPARATION = 5.0

# Coordinate of the mixture center on the diagonal (1, ..., 1)
DEFAULT_OFFSET = 2.5

# RNG streams of make_dataset; the class means only depend on the seed
_MEANS_STREAM = 0
_SAMPLES_STREAM = 1
_ASSIGNMENT_STREAM = 2**32


def _frame(first, rng):
    """Returns a seeded random orthonormal matrix whose first column is the
    unit vector first."""
    size = first.shape[0]
    matrix = rng.normal((size, size))
    matrix[:, 0] = first
    q, r = np.linalg.qr(matrix)
    return q * np.sign(np.diag(r))


def mixture_means(
    seed, classes, dim, separation=DEFAULT_SEPARATION, offset=DEFAULT_OFFSET
):
    """
    <Purpose>
      Returns the class means of the mixture generated by make_dataset: the
      vertices of a regular simplex with edge length `separation`, centered
      at offset * (1, ..., 1).

      The simplex is rotated by a seeded random map into `dim` dimensions,
      constrained so that the component of the diagonal (1, ..., 1) / sqrt(D)
      in the span of the class means has length sqrt((classes - 1) / dim),
      the mean over uniformly random rotations, and points from the center
      to the mean of class 0. Uniform shifts and rescalings of the inputs
      thus move the classes by a seed-independent amount.

    <Exceptions>
      securesystemslib.exceptions.FormatError if classes > dim + 1, or
      arguments are out of range.

    <Returns>
      A classes x dim matrix.

    """
    _check_positive_int(classes)
    _check_positive_int(dim)
    _check_positive(separation)
    _check_real(offset)
    if not np.isfinite(offset):
        raise FormatError("offset must be finite, got {}".format(offset))
    if classes < 2:
        raise FormatError("need at least 2 classes, got {}".format(classes))
    if classes > dim + 1:
        raise FormatError(
            "{} classes do not fit a simplex in {} dimensions".format(
                classes, dim
            )
        )
    if separation < MIN_SEPARATION:
        raise FormatError(
            "class separation must be >= {}, got {}".format(
                MIN_SEPARATION, separation
            )
        )

    # One-hot vertices have pairwise distance sqrt(2); center and express
    # in an orthonormal basis of their (classes - 1)-dimensional span.
    centered = np.eye(classes) - 1.0 / classes
    _, _, basis = np.linalg.svd(centered)
    vertices = centered @ basis[: classes - 1].T
    vertices *= separation / np.sqrt(2.0)

    rng = CounterRNG(seed, stream=_MEANS_STREAM)
    span = classes - 1
    # Vertex 0 on the first axis of the span
    local = vertices @ _frame(
        vertices[0] / np.linalg.norm(vertices[0]), rng
    )

    diagonal = np.full(dim, 1.0 / np.sqrt(dim))
    outer = _frame(diagonal, rng)
    cos = np.sqrt(span / dim)
    embedding = np.zeros((dim, span))
    if span == dim:
        embedding[:] = outer
    else:
        sin = np.sqrt(1.0 - cos**2)
        embedding[:, 0] = cos * outer[:, 0] + sin * outer[:, 1]
        embedding[:, 1:] = outer[:, 2 : span + 1]
    return local @ embedding.T + offset


def make_dataset(
    seed,
    classes,
    dim,
    per_class,
    separation=DEFAULT_SEPARATION,
    split=0,
    offset=DEFAULT_OFFSET,
):
    """
    <Purpose>
      Generates a labeled Gaussian mixture with unit isotropic covariance
      and exactly per_class samples per class, in shuffled order. Datasets
      with equal seed and different split share the class means but have
      independent samples (e.g. train and test splits).

    <Arguments>
      seed:
              Seed of the mixture.

      classes, dim, per_class:
              Number of classes (>= 2, <= dim + 1), features and samples
              per class; classes * per_class must be >= 64.

      separation: (optional)
              Distance between class means, >= 4.

      split: (optional)
              Index of the sample stream.

      offset: (optional)
              Coordinate of the mixture center on the diagonal.

    <Exceptions>
      securesystemslib.exceptions.FormatError for degenerate parameters.

    <Returns>
      A labeled Dataset.

    """
    _check_positive_int(per_class)
    _check_int(split)
    if split < 0:
        raise FormatError("split must be >= 0")
    means = mixture_means(seed, classes, dim, separation, offset)
    if classes * per_class < MIN_SAMPLES:
        raise FormatError(
            "need at least {} samples, got {} x {}".format(
                MIN_SAMPLES, classes, per_class
            )
        )

    rng = CounterRNG(seed, stream=_SAMPLES_STREAM + split)
    labels = np.repeat(np.arange(classes), per_class)[
        rng.permutation(classes * per_class)
    ]
    features = means[labels] + rng.normal((classes * per_class, dim))
    return Dataset(features=features, labels=labels)


def apply_corruption(data, spec, seed=0):
    """
    <Purpose>
      Applies a corruption to every sample of data:

        shift         x + c
        scale         k * x
        gauss_noise   x + sigma * z, z standard normal
        impulse       each coordinate replaced with probability p by
                      +/- settings.IMPULSE_MAGNITUDE

    <Arguments>
      data:
              A Dataset.

      spec:
              A CorruptionSpec.

      seed: (optional)
              Seed of the stochastic families.

    <Returns>
      A Dataset with the same labels.

    """
    if not isinstance(spec, CorruptionSpec):
        raise FormatError("expected CorruptionSpec, got {!r}".format(spec))

    x = data.features
    value = spec.parameter
    if spec.family == "shift":
        corrupted = x + value

    elif spec.family == "scale":
        corrupted = x * value

    elif spec.family == "gauss_noise":
        corrupted = x + CounterRNG(seed).normal(x.shape, scale=value)

    else:
        rng = CounterRNG(seed)
        hit = rng.uniform(x.shape) <= value
        impulses = shiftnorm.settings.IMPULSE_MAGNITUDE * rng.signs(x.shape)
        corrupted = np.where(hit, impulses, x)

    return data.with_features(corrupted)


def mixed_corruptions(data, specs, seed=0):
    """
    <Purpose>
      Corrupts every sample with a spec drawn uniformly from specs. The
      samples assigned to the j-th spec are corrupted with
      apply_corruption(..., derive_seed(seed, j)).

    <Exceptions>
      securesystemslib.exceptions.FormatError if specs is empty.

    <Returns>
      A tuple (Dataset, assignment), assignment holding the spec index of
      every sample.

    """
    specs = list(specs)
    if not specs:
        raise FormatError("need at least one corruption spec")

    count = len(data)
    if len(specs) == 1:
        assignment = np.zeros(count, dtype=np.int64)
    else:
        assignment = CounterRNG(seed, stream=_ASSIGNMENT_STREAM).integers(
            len(specs), count
        )

    features = np.array(data.features)
    for j, spec in enumerate(specs):
        rows = np.flatnonzero(assignment == j)
        if rows.size == 0:
            continue
        LOG.debug("Corrupting %d samples with '%s'...", rows.size, spec.label)
        part = apply_corruption(data.subset(rows), spec, derive_seed(seed, j))
        features[rows] = part.features

    return data.with_features(features), assignment


def write_dataset_csv(path, data):
    """Writes data as CSV with columns f0..f{D-1} and, if labeled, y."""
    header = ["f{}".format(i) for i in range(data.dim)]
    if data.is_labeled:
        header.append("y")

    with open(path, "w", encoding="utf8", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(header)
        for i in range(len(data)):
            row = [repr(float(v)) for v in data.features[i]]
            if data.is_labeled:
                row.append(int(data.labels[i]))
            writer.writerow(row)


def read_dataset_csv(path):
    """
    <Purpose>
      Reads a dataset written by write_dataset_csv.

    <Exceptions>
      securesystemslib.exceptions.FormatError if the header or a row is
      malformed.

    <Returns>
      A Dataset.

    """
    with open(path, "r", encoding="utf8", newline="") as fp:
        rows = list(csv.reader(fp))

    if not rows:
        raise FormatError("'{}' is empty".format(path))
    header = rows[0]
    labeled = bool(header) and header[-1] == "y"
    dim = len(header) - int(labeled)
    if dim < 1 or header[:dim] != ["f{}".format(i) for i in range(dim)]:
        raise FormatError(
            "'{}' must have columns f0..f<D-1> and optionally y".format(path)
        )

    features = []
    labels = []
    for line, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise FormatError(
                "'{}' line {}: expected {} columns".format(
                    path, line, len(header)
                )
            )
        try:
            features.append([float(v) for v in row[:dim]])
            if labeled:
                labels.append(int(row[dim]))
        except ValueError as e:
            raise FormatError("'{}' line {}: {}".format(path, line, e)) from e

    return Dataset(
        features=np.array(features).reshape(len(features), dim),
        labels=labels if labeled else None,
    )


def corruption_sidecar(spec_or_specs, seed):
    """Returns the sidecar dictionary of a corrupted dataset."""
    specs = (
        [spec_or_specs]
        if isinstance(spec_or_specs, CorruptionSpec)
        else list(spec_or_specs)
    )
    return {
        "format_version": FORMAT_VERSION,
        "seed": seed,
        "synthetic": True,
        "corruptions": [spec.to_dict() for spec in specs],
        "categories": sorted({FAMILY_CATEGORY[s.family] for s in specs}),
    }


def write_sidecar(path, spec_or_specs, seed):
    with open(path, "w", encoding="utf8") as fp:
        json.dump(corruption_sidecar(spec_or_specs, seed), fp, sort_keys=True)
