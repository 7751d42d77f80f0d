"""
RoughLik File Handler
Copyright (c) 2025 Calmic Sdn Bhd. All rights reserved.
"""
# roughlik/utils/file_handler.py

import csv
import hashlib
import json
import os
import logging

import numpy as np

from roughlik.utils import DataFormatError, GridError
from roughlik.utils.grid_path import Partition, PiecewiseLinearPath
from roughlik.utils.inverse_ito import ObservationSet

logger = logging.getLogger(__name__)

# Configuration
FLOAT_FORMAT = '.17g'
OBSERVATION_PREFIX = 'y'
DRIVER_PREFIX = 'x'


def format_float(value):
    """Round-trippable text for a float"""
    return format(float(value), FLOAT_FORMAT)


def content_hash(file_path):
    """
    Git-style blob hash of a file, used for provenance in result JSON

    Args:
        file_path: Path to an input file

    Returns:
        str: hex SHA-1 of b"blob <size>\\0" + contents
    """
    with open(file_path, 'rb') as f:
        data = f.read()
    digest = hashlib.sha1()
    digest.update(f"blob {len(data)}\0".encode('ascii'))
    digest.update(data)
    return digest.hexdigest()


def _check_header(header, prefix):
    if not header:
        raise DataFormatError("empty file, expected a header row", line=1)
    if header[0].strip() != 't' or len(header) < 2:
        raise DataFormatError(f"header must be 't,{prefix}1,...', got {','.join(header)}", line=1)
    expected = [f"{prefix}{j}" for j in range(1, len(header))]
    columns = [h.strip() for h in header[1:]]
    if columns != expected:
        raise DataFormatError(f"expected columns {','.join(expected)}, got {','.join(columns)}", line=1)
    return len(columns)


def read_path_csv(file_path, prefix=OBSERVATION_PREFIX):
    """
    Read a path CSV with header t,<prefix>1,...,<prefix>k

    Returns:
        PiecewiseLinearPath on the partition given by the t column

    Raises:
        DataFormatError: with the 1-based line number of the offending row
    """
    if not os.path.exists(file_path):
        raise DataFormatError(f"file not found: {file_path}", line=0)

    times, rows = [], []
    with open(file_path, newline='') as f:
        reader = csv.reader(f)
        header = next(reader, None)
        width = _check_header(header, prefix)

        for record in reader:
            line = reader.line_num
            if not record or all(not cell.strip() for cell in record):
                continue
            if len(record) != width + 1:
                raise DataFormatError(f"expected {width + 1} columns, got {len(record)}", line=line)
            try:
                numbers = [float(cell) for cell in record]
            except ValueError as e:
                raise DataFormatError(f"non-numeric value: {e}", line=line) from None
            if not all(np.isfinite(numbers)):
                raise DataFormatError("non-finite value", line=line)
            if not times and numbers[0] != 0.0:
                raise DataFormatError(f"first row must be at t=0, got t={numbers[0]}", line=line)
            if times and numbers[0] <= times[-1]:
                raise DataFormatError(f"times must be strictly increasing (t={numbers[0]})", line=line)
            times.append(numbers[0])
            rows.append(numbers[1:])

    if len(times) < 2:
        raise DataFormatError("need at least two data rows", line=reader.line_num)
    try:
        partition = Partition(np.array(times))
    except GridError as e:
        raise DataFormatError(str(e), line=0) from e

    logger.debug(f"Read {len(times)} rows of dimension {width} from {file_path}")
    return PiecewiseLinearPath(partition, np.array(rows))


def read_observations_csv(file_path):
    """Observation CSV (header t,y1,...,yd; first row is (0, y0))"""
    return ObservationSet.from_path(read_path_csv(file_path, OBSERVATION_PREFIX))


def read_driver_csv(file_path):
    """Driver CSV (header t,x1,...,xm)"""
    return read_path_csv(file_path, DRIVER_PREFIX)


def _ensure_parent(file_path):
    parent = os.path.dirname(os.path.abspath(file_path))
    os.makedirs(parent, exist_ok=True)


def write_rows_csv(file_path, header, rows):
    """Write rows of numbers with round-trippable float formatting"""
    _ensure_parent(file_path)
    with open(file_path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
    logger.info(f"Wrote {file_path}")
    return file_path


def write_path_csv(file_path, path, prefix=OBSERVATION_PREFIX):
    """Write a PiecewiseLinearPath as t,<prefix>1,...; byte-identical for identical input"""
    header = ['t'] + [f"{prefix}{j}" for j in range(1, path.dim + 1)]
    rows = ([float(t)] + [float(v) for v in values]
            for t, values in zip(path.partition.times, path.values))
    return write_rows_csv(file_path, header, rows)


def write_json(file_path, payload):
    """Write JSON with sorted keys so identical results give identical bytes"""
    _ensure_parent(file_path)
    with open(file_path, 'w') as f:
        json.dump(payload, f, indent=2, sort_keys=True, allow_nan=True)
        f.write('\n')
    logger.info(f"Wrote {file_path}")
    return file_path


def read_json(file_path):
    try:
        with open(file_path) as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise DataFormatError(f"invalid JSON: {e.msg}", line=e.lineno) from None
    except OSError as e:
        raise DataFormatError(f"cannot read {file_path}: {e}", line=0) from None
