# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.

"""Simulate and verify detection of a target by mobile Poisson nodes."""

import json
import math
import os
import sys
import time
from collections import namedtuple

from .lib import bounds, cellfield, coupling, evasion, mobility
from .lib import tessellation as tess
from .lib.config import Config, ConfigError
from .lib.utils import digest, ensure_directory, mark_failed, write_csv, write_json

import logging
log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2

CommandResult = namedtuple("CommandResult", "estimates checks header rows")

# library errors that end a run as a failed check
DOMAIN_ERRORS = (tess.GeometryError, tess.ScaleRangeError, tess.WindowError,
                 mobility.PointProcessError, mobility.HorizonError, mobility.ConfinementError,
                 bounds.PreconditionError)


def _check(name, passed, **detail):
    out = {"name": name, "passed": bool(passed)}
    out.update(detail)
    return out


def _estimate(e):
    return {"name": e.name, "value": e.value, "ci_low": e.ci_low, "ci_high": e.ci_high, "n": e.n}


def _value(name, value, n):
    return {"name": name, "value": value, "ci_low": None, "ci_high": None, "n": n}


def run_ppp_check(config):
    """Measure preservation after one long step, and confinement against its bound."""
    block = config.block("ppp_check")
    cfg = config.sim_config(lam=block["lam"], beta=block["delta"], n_slices=1, L=3.0)
    counts = mobility.interior_counts(cfg, block["replicas"], config.threads)
    expected = cfg.lam * (2 * cfg.L) ** cfg.d
    mean = float(counts.mean())
    spread = 3 * math.sqrt(expected / len(counts))
    _, ratio = coupling.dispersion(counts)
    checks = [
        _check("interior_mean", abs(mean - expected) <= spread, value=mean, expected=expected),
        _check("interior_dispersion", 0.8 <= ratio <= 1.2, value=ratio),
    ]
    estimates = [_value("interior_mean", mean, len(counts)), _value("dispersion", ratio, len(counts))]
    rows = []
    for d in (1, 2):
        for delta in (0.5, 1.0, 2.0):
            for k in (3, 4, 5):
                z = k * math.sqrt(delta)
                rate, err = mobility.confinement_estimate(d, delta, z, block["confinement_paths"],
                                                         config.seed)
                bound = bounds.confinement_bound(d, delta, z)
                rows.append([d, delta, z, rate, err, bound])
                checks.append(_check("confinement", rate >= bound - 2 * err,
                                     d=d, delta=delta, z=z, value=rate, bound=bound))
    return CommandResult(estimates, checks, ["d", "delta", "z", "empirical", "stderr", "bound"], rows)


def run_tessellation_verify(config):
    block = config.block("tessellation")
    checks = tess.verify_tessellation(config.scale_params(), block["k_max"], block["half_i"],
                                      block["half_tau"])
    rows = [[c.name, int(c.passed), c.checked, c.failures] for c in checks]
    return CommandResult([], [_check(c.name, c.passed, checked=c.checked, failures=c.failures)
                              for c in checks],
                         ["check", "passed", "checked", "failures"], rows)


def run_bounds_verify(config):
    reports = bounds.verify_bounds()
    rows = [[r.name, json.dumps(r.inputs, sort_keys=True), r.bound, r.value, r.direction,
             r.margin, int(r.passed)] for r in reports]
    checks = [_check(r.name, r.passed, margin=r.margin, inputs=r.inputs) for r in reports]
    return CommandResult([], checks,
                         ["name", "inputs", "bound", "value", "direction", "margin", "passed"], rows)


def run_coupling_verify(config):
    block = config.block("coupling")
    checks = []
    for d in (1, 2):
        delta, M = coupling.indistinguishable_regime(d, block["m_sep"], block["xi"])
        passed, reports = coupling.verify_indistinguishable(d, delta, M, block["m_sep"], block["xi"])
        for r in reports:
            checks.append(_check("indistinguishable_%s" % r.name, r.passed, d=d, margin=r.margin))
    p = config.coupling_params()
    report = coupling.couple_grid_experiment(p, config.replicas, config.seed, config.threads,
                                             block["extra"],
                                             os.path.join(config.out, "transcripts"))
    checks.append(_check("coupling_subset", report.subset_ok))
    mean, ratio = report.dispersion
    estimates = [_estimate(report.estimate),
                 _value("xi_mean", mean, len(report.xi_counts)),
                 _value("xi_dispersion", ratio, len(report.xi_counts)),
                 _value("xi_phi0_correlation", report.independence, len(report.xi_counts))]
    return CommandResult(estimates, checks, coupling.REPLICA_HEADER, report.rows)


def run_percolation(config):
    block = config.block("percolation")
    p = config.scale_params()
    est, rows = cellfield.escape_probability(
        p, block["t_slices"], config.replicas, block["use"], block["mode"], block["half_width"],
        config.seed, config.s, block["P"], config.threads, block["disp_mode"],
        boundary=config.boundary, variance_rate=config.variance_rate, q=config.q,
        max_nodes=config.max_nodes)
    return CommandResult([_estimate(est)], [], ["replica", "escaped", "cluster_size"], rows)


def _evasion_config(config):
    block = config.block("evasion")
    return config.sim_config(n_slices=block["t_slices"]), block


def _bracket_checks(bracket):
    # margin-certified static survivors carry a stay-put witness
    clear = sum(1 for s in bracket.statics if s.clear) / float(len(bracket.statics))
    return [
        _check("bracket_order", bracket.low.value <= bracket.up.value, lam=bracket.lam),
        _check("witness_replay", bracket.replay_failures == 0, lam=bracket.lam,
               failures=bracket.replay_failures),
        _check("static_ordering", bracket.low.value >= clear, lam=bracket.lam,
               rho_low=bracket.low.value, static_clear=clear),
    ]


def run_detect(config):
    cfg, block = _evasion_config(config)
    bracket = evasion.rho_bracket(cfg, config.replicas, block["half_cells"], block["mode"],
                                  config.threads, block["delta_safe"])
    estimates = [_estimate(bracket.low), _estimate(bracket.up), _estimate(bracket.static)]
    times = [k * cfg.beta for k in range(1, cfg.n_slices + 1)]
    for t, fraction in evasion.survival_curve(bracket.statics, times):
        estimates.append(dict(_value("static_survival_curve", fraction, config.replicas), t=t))
    return CommandResult(estimates, _bracket_checks(bracket), evasion.VERDICT_HEADER, bracket.rows)


def run_phase_scan(config):
    cfg, block = _evasion_config(config)
    lambdas = config.block("phase_scan")["lambdas"]
    brackets = evasion.phase_scan(cfg, lambdas, config.replicas, block["half_cells"],
                                  block["mode"], config.threads)
    estimates, checks, rows = [], [], []
    for b in brackets:
        for e in (b.low, b.up, b.static):
            estimates.append(dict(_estimate(e), lam=b.lam))
        checks.extend(_bracket_checks(b))
        rows.append([b.lam, b.low.value, b.low.ci_low, b.low.ci_high,
                     b.up.value, b.up.ci_low, b.up.ci_high, b.static.value])
    header = ["lam", "rho_low", "low_ci_low", "low_ci_high", "rho_up", "up_ci_low",
              "up_ci_high", "static_survival"]
    return CommandResult(estimates, checks, header, rows)


def run_weights(config):
    p = config.scale_params()
    k_max = config.block("weights")["k_max"]
    rows = []
    for k in range(2, k_max + 1):
        tilde = tess.psi_tilde(p, k)
        rows.append([k, tess.log_psi(p, k), tilde.log_value, tilde.b,
                     float(tess.weight_ratio(p, k) / tilde.b)])
    check = tess.check_weights(p, k_max)
    return CommandResult([], [_check(check.name, check.passed, checked=check.checked)],
                         ["k", "log_psi", "log_psi_tilde", "b", "psi_over_psi_tilde"], rows)


COMMANDS = {
    "ppp-check": run_ppp_check,
    "tessellation-verify": run_tessellation_verify,
    "bounds-verify": run_bounds_verify,
    "coupling-verify": run_coupling_verify,
    "percolation": run_percolation,
    "detect": run_detect,
    "phase-scan": run_phase_scan,
    "weights": run_weights,
}


def run(command, config):
    """Run ``command`` and write config.json, summary.json and replicas.csv
    into ``config.out``; returns the exit code."""
    if command not in COMMANDS:
        log.error("unknown command %r", command)
        return EXIT_USAGE
    outdir = ensure_directory(config.out)
    effective = config.as_dict()
    write_json(os.path.join(outdir, "config.json"), effective)
    log.info("%s: writing to %s", command, outdir)
    try:
        result = COMMANDS[command](config)
    except DOMAIN_ERRORS as e:
        log.error("%s failed: %s: %s", command, type(e).__name__, e)
        result = CommandResult([], [_check("error", False, error=type(e).__name__, message=str(e))],
                               [], [])
    if result.rows:
        write_csv(os.path.join(outdir, "replicas.csv"), result.header, result.rows)
    failed = [c["name"] for c in result.checks if not c["passed"]]
    summary = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config_digest": digest(effective),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "passed": not failed,
        "estimates": result.estimates,
        "checks": result.checks,
    }
    write_json(os.path.join(outdir, "summary.json"), summary)
    if failed:
        mark_failed(outdir, sorted(set(failed)))
        return EXIT_FAILED
    return EXIT_OK


def make_argument_parser():
    import argparse
    parser = argparse.ArgumentParser(__doc__)
    parser.set_defaults(
        loglevel=logging.INFO,
    )
    parser.add_argument("-q", "--quiet", dest="loglevel", action="store_const", const=logging.WARN, help="quiet")
    parser.add_argument("-v", "--verbose", dest="loglevel", action="store_const", const=logging.DEBUG, help="verbose")
    parser.add_argument("-c", "--config", dest="config_file")
    parser.add_argument("-g", "--get", help="get configuration value (section.option)")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--replicas", type=int)
    parser.add_argument("--threads", type=int)
    parser.add_argument("--out")
    parser.add_argument("command", nargs="?", help="one of: %s" % ", ".join(sorted(COMMANDS)))
    return parser


def main(argv=None):
    parser = make_argument_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    logging.basicConfig(format="%(asctime)s - %(levelname)s - %(message)s", level=args.loglevel)
    config = Config()
    try:
        if args.config_file:
            config.load_config(args.config_file)
        config.override(seed=args.seed, replicas=args.replicas, threads=args.threads, out=args.out)
        config.validate()
    except ConfigError as e:
        json.dump({"errors": [{"field": f, "message": m} for f, m in e.errors]}, sys.stderr)
        sys.stderr.write("\n")
        return EXIT_USAGE

    if args.get:
        log.debug("getting %s", args.get)
        section, option = args.get.split(".", 1)
        v = config.get(section, option)
        if v is not None:
            print(v)
        return EXIT_OK
    elif not args.command:
        log.error("command required")
        return EXIT_USAGE

    return run(args.command, config)
