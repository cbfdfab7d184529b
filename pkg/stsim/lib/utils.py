# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.

import csv
import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

import logging
log = logging.getLogger(__name__)

FAILED_MARKER = "FAILED"


def list_directory(dirname):
    # Sorted, without hidden files
    return sorted(f for f in os.listdir(dirname) if f[0] != '.')


def ensure_directory(dirname):
    if dirname and not os.path.isdir(dirname):
        os.makedirs(dirname)
    return dirname


def _plain(value):
    if isinstance(value, dict):
        return dict((str(k), _plain(v)) for k, v in value.items())
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


def canonical_json(value):
    return json.dumps(_plain(value), sort_keys=True, separators=(",", ":"))


def write_json(path, value):
    ensure_directory(os.path.dirname(path))
    with open(path, "w") as f:
        json.dump(_plain(value), f, sort_keys=True, indent=2)
        f.write("\n")


def read_json(path):
    with open(path) as f:
        return json.load(f)


def write_csv(path, header, rows):
    ensure_directory(os.path.dirname(path))
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_plain(v) for v in row])


def digest(config, exclude=("threads", "out")):
    """SHA-256 of the canonical JSON of ``config`` without run-local keys.

    >>> digest({"seed": 1, "threads": 8}) == digest({"seed": 1, "threads": 1})
    True
    """
    trimmed = dict((k, v) for k, v in config.items() if k not in exclude)
    return hashlib.sha256(canonical_json(trimmed).encode("utf-8")).hexdigest()


def run_replicas(fn, replicas, threads=None):
    """fn(replica) for replica in range(replicas), results in replica order."""
    if threads == 1 or replicas <= 1:
        return [fn(r) for r in range(replicas)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(replicas)))


def mark_failed(outdir, reasons):
    path = os.path.join(ensure_directory(outdir), FAILED_MARKER)
    with open(path, "w") as f:
        for reason in reasons:
            f.write("%s\n" % reason)
    log.warning("marked %s as failed: %s", outdir, ", ".join(reasons))
    return path
