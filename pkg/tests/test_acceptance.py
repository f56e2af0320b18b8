"""Acceptance criteria 1-11.

Each ``criterion_*`` function computes its check and records
``RESULTS[key] = (passed, detail)``; the pytest wrappers assert on the record
and conftest prints one PASS/FAIL line per key after the session.  Criteria
8-10 share one ``--quick`` sweep run through the CLI; criterion 11 repeats it
with a second worker count and compares the CSVs byte for byte.

Also runnable directly: ``python tests/test_acceptance.py``.
"""
from __future__ import annotations

import math
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from fdsic import cli, harness, rng as rngmod
from fdsic.adapt import RlsState, default_rls_delta, ls_fit, run_rls
from fdsic.cancelers import MbnnCanceler, canceler_real_param_count, mbnn_backward, mbnn_forward, wlmp_basis_matrix
from fdsic.hwmodel import (
    HardwareParams,
    HwDistributionConfig,
    MixerParams,
    PaTaps,
    build_ar1_family,
    generate_dataset,
    irr_db,
    pa_output,
    sample_initial_hardware,
)
from fdsic.metrics import CSV_HEADER, PUBLISHED_COUNTS, cancellation_db, convention_diff, count_ops_instrumented

RESULTS: dict[str, tuple[bool, str]] = {}
SWEEP_CSVS = ("runs.csv", "summary.csv", "complexity.csv", "flops_vs_cancellation.csv")


def record(key, ok, detail):
    RESULTS[key] = (bool(ok), detail)
    return bool(ok)


# ---------------------------------------------------------------- 1, 2: complexity


def criterion_1():
    # linear, WLMP-LMS, WLMP-RLS (same model), MBNN
    counts = [canceler_real_param_count("linear", 3), canceler_real_param_count("wlmp", 3, 5),
              canceler_real_param_count("wlmp", 3, 5), canceler_real_param_count("mbnn", 3, 5)]
    return record("1", counts == [6, 72, 72, 22], f"params {counts} (want [6, 72, 72, 22])")


def criterion_2():
    t0 = time.perf_counter()
    reports = {m: count_ops_instrumented(m, 3, 5) for m in PUBLISHED_COUNTS}
    elapsed = time.perf_counter() - t0
    within = all(
        abs(getattr(rep, f) - pub) <= 0.2 * pub
        for m, rep in reports.items()
        for f, pub in zip(CSV_HEADER[2:4], PUBLISHED_COUNTS[m][1:3])
    )
    ok = (within and reports["wlmp-rls"].n_div == 72 and reports["mbnn-ftrl"].n_sqrt == 22
          and not convention_diff(reports) and elapsed < 1.0)
    counts = "; ".join(f"{m} {r.n_add}/{r.n_mult}/{r.n_div}/{r.n_sqrt}" for m, r in reports.items())
    return record("2", ok, f"add/mult/div/sqrt {counts}; {elapsed:.2f} s")


# ---------------------------------------------------------------- 3, 5: static fits


def criterion_3():
    clean = generate_dataset(0, 0.9, noise_db=None, static_len=10000, dynamic_len=10)
    noisy = generate_dataset(0, 0.9, static_len=10000, dynamic_len=10)
    rows = wlmp_basis_matrix(clean.x, 3, 5)[:10000]
    c_clean = cancellation_db(clean.y_static, rows @ ls_fit(rows, clean.y_static).weights)
    c_noisy = cancellation_db(noisy.y_static, rows @ ls_fit(rows, noisy.y_static).weights)
    ok = c_clean >= 120 and abs(c_noisy - 40) <= 2
    return record("3", ok, f"noiseless {c_clean:.1f} dB (>= 120), noisy {c_noisy:.2f} dB (40 +- 2)")


def criterion_5():
    ds = generate_dataset(1, 0.9, static_len=10000, dynamic_len=10)
    rows = wlmp_basis_matrix(ds.x, 3, 5)[:10000]
    ls = ls_fit(rows, ds.y_static).weights
    w = np.zeros(rows.shape[1], complex)
    # a large initial P makes the prior's pull on the solution negligible
    run_rls(w, RlsState.init(rows.shape[1], 1.0, 1e4 * default_rls_delta(rows)), rows, ds.y_static)
    rel = np.linalg.norm(w - ls) / np.linalg.norm(ls)
    return record("5", rel < 1e-6, f"relative error {rel:.2e} (< 1e-6)")


# ---------------------------------------------------------------- 4: gradients


def _cgauss(g, *shape):
    return (g.standard_normal(shape) + 1j * g.standard_normal(shape)) / math.sqrt(2)


def _random_hardware(g, memory_len, nonlin_order):
    orders = (nonlin_order + 1) // 2
    ladder = 10.0 ** (-np.add.outer(np.arange(orders), np.arange(memory_len)))
    mixer = MixerParams(1 + 0.07 * g.standard_normal(), 0.07 * g.standard_normal())
    return HardwareParams(mixer, PaTaps(ladder * _cgauss(g, orders, memory_len)))


def _loss(c, xh, t):
    return abs(t - mbnn_forward(c, xh)[0]) ** 2


def _central_difference(c, xh, t, step=1e-6):
    w = c.real_params()
    probe = MbnnCanceler(c.theta.copy(), c.memory_len, c.nonlin_order)
    g = np.empty_like(w)
    for i in range(w.size):
        wp, wm = w.copy(), w.copy()
        wp[i] += step
        wm[i] -= step
        probe.set_real_params(wp)
        lp = _loss(probe, xh, t)
        probe.set_real_params(wm)
        g[i] = (lp - _loss(probe, xh, t)) / (2 * step)
    return g


def criterion_4(n_configs=100):
    g = rngmod.stream(0, "acceptance:gradients")
    worst = 0.0
    for _ in range(n_configs):
        memory_len = int(g.integers(1, 5))
        nonlin_order = int(g.choice([1, 3, 5, 7]))
        c = MbnnCanceler.from_hardware(_random_hardware(g, memory_len, nonlin_order))
        c.theta[:2] += 0.05 * _cgauss(g, 2)
        xh = _cgauss(g, memory_len)
        t = pa_output(xh, _random_hardware(g, memory_len, nonlin_order))
        y, tape = mbnn_forward(c, xh)
        grad = mbnn_backward(c, tape, t - y)
        fd = _central_difference(c, xh, t)
        # components far below the gradient's scale are judged against that scale
        denom = np.maximum(np.abs(fd), 1e-3 * np.abs(fd).max())
        worst = max(worst, float(np.max(np.abs(grad - fd) / denom)))
    return record("4", worst < 1e-5, f"max relative error {worst:.2e} over {n_configs} configurations (< 1e-5)")


# ---------------------------------------------------------------- 6, 7: hardware statistics


def _moment_z_scores(proc, n, g):
    """z-scores of the sample mean and variance against the designed values.

    The process starts from a stationary draw; standard errors account for
    the AR(1) autocorrelation, and the variance uses the designed mean.
    """
    mu, var, b = proc.mean, proc.variance, proc.beta
    proc.state = mu + math.sqrt(var) * proc.draw_unit(g)
    w = proc.evolve(proc.draw_unit(g, n))
    mean_factor = (1 + b) / (1 - b)
    var_factor = (1 + b * b) / (1 - b * b)
    if proc.is_real_valued:
        z_mean = [(w.real.mean() - mu.real) / math.sqrt(var / n * mean_factor)]
        se_var = math.sqrt(2 * var ** 2 / n * var_factor)
    else:
        se = math.sqrt(var / 2 / n * mean_factor)
        z_mean = [(w.real.mean() - mu.real) / se, (w.imag.mean() - mu.imag) / se]
        se_var = math.sqrt(var ** 2 / n * var_factor)
    z_var = (np.mean(np.abs(w - mu) ** 2) - var) / se_var
    return max(abs(z) for z in z_mean), abs(z_var)


def criterion_6(n=1_000_000):
    cfg = HwDistributionConfig()
    worst = {}
    for beta in (0.9, 0.99999):
        g = rngmod.stream(0, f"acceptance:ar1:{beta}")
        family = build_ar1_family(sample_initial_hardware(cfg, g), cfg, beta)
        zs = [_moment_z_scores(proc, n, g) for proc in family.values()]
        worst[beta] = (max(z[0] for z in zs), max(z[1] for z in zs), len(zs))
    ok = all(zm <= 3 and zv <= 3 for zm, zv, _ in worst.values())
    detail = "; ".join(f"beta={b}: {k} processes, max |z| mean {zm:.2f}, variance {zv:.2f}"
                       for b, (zm, zv, k) in worst.items())
    return record("6", ok, detail + " (<= 3)")


def criterion_7(n=100_000):
    cfg = HwDistributionConfig()
    g = rngmod.stream(0, "acceptance:irr")
    irr = np.array([irr_db(sample_initial_hardware(cfg, g).mixer) for _ in range(n)])
    frac = float(np.mean((irr >= 20) & (irr <= 40)))
    return record("7", 0.93 <= frac <= 0.97, f"fraction with IRR in [20, 40] dB = {frac:.4f} (in [0.93, 0.97])")


# ---------------------------------------------------------------- 8-11: quick sweep


def run_quick(out_dir, jobs):
    t0 = time.perf_counter()
    code = cli.main(["run", "--quick", "--jobs", str(jobs), "--out", str(out_dir)])
    if code != 0:
        raise RuntimeError(f"fdsic run --quick exited with {code}")
    return time.perf_counter() - t0


def load_summary(out_dir):
    return harness.summarize(harness.read_runs(Path(out_dir) / "runs.csv"))


def _by_oversampling(summary, method):
    return {r.oversampling: r for r in summary.rows if r.method == method}


def criterion_8(summary):
    at1 = {m: _by_oversampling(summary, m)[1].mean_dynamic_db for m in harness.METHODS}
    at_top = {m: _by_oversampling(summary, m)[10000].mean_dynamic_db for m in harness.METHODS}
    spread = max(at1.values()) - min(at1.values())
    record("8a", spread <= 6, f"1x spread {spread:.2f} dB (<= 6); " + _fmt(at1))
    gains = {m: at_top[m] - at1[m] for m in harness.METHODS}
    short = [m for m, v in gains.items() if not v >= 5]
    record("8b", not short, "gain 1x->10000x " + _fmt(gains) + " (each >= 5)"
           + (f"; short: {', '.join(short)}" if short else ""))
    best = max(at_top, key=at_top.get)
    record("8c", best == "wlmp-rls", f"best at 10000x is {best}; " + _fmt(at_top))


def criterion_9(summary):
    rls = _by_oversampling(summary, "wlmp-rls")[10000].mean_drop_db
    lms = _by_oversampling(summary, "wlmp-lms")[10000].mean_drop_db
    lin = _by_oversampling(summary, "linear-lms")[10].mean_drop_db
    record("9a", 1 <= rls <= 5, f"wlmp-rls drop at 10000x {rls:.2f} dB (in [1, 5])")
    record("9b", lms >= 5, f"wlmp-lms drop at 10000x {lms:.2f} dB (>= 5)")
    record("9c", abs(lin) <= 2, f"linear-lms drop at 10x {lin:.2f} dB (|.| <= 2)")


def criterion_10(summary):
    def reach(m):
        dyn = [r.mean_dynamic_db for r in summary.rows if r.method == m]
        return min(dyn), max(dyn)

    lo = max(reach("mbnn-ftrl")[0], reach("wlmp-rls")[0])
    hi = min(reach("mbnn-ftrl")[1], reach("wlmp-rls")[1])
    ratios = {}
    if hi > lo:
        for frac in (0.25, 0.5, 0.75):
            target = lo + frac * (hi - lo)
            ratios[target] = (harness.flops_at_cancellation(summary, "wlmp-rls", target)
                              / harness.flops_at_cancellation(summary, "mbnn-ftrl", target))
    ok = any(10 <= r <= 1e4 for r in ratios.values())
    detail = ", ".join(f"{t:.1f} dB: {r:.3g}x" for t, r in ratios.items()) or "no common cancellation range"
    return record("10", ok, f"wlmp-rls / mbnn-ftrl FLOPS at matched cancellation {detail} (some in [10, 1e4])")


def criterion_11(dir_a, dir_b, seconds):
    differing = [n for n in SWEEP_CSVS if (Path(dir_a) / n).read_bytes() != (Path(dir_b) / n).read_bytes()]
    ok = not differing and seconds < 600
    detail = "identical " + ", ".join(SWEEP_CSVS) if not differing else "differ: " + ", ".join(differing)
    return record("11", ok, f"jobs=1 vs jobs=2: {detail}; {seconds:.0f} s total")


def _fmt(d):
    return ", ".join(f"{k} {v:.2f}" for k, v in d.items())


# ---------------------------------------------------------------- pytest wrappers


def _check(key):
    ok, detail = RESULTS[key]
    print(f"{'PASS' if ok else 'FAIL'}  criterion {key}: {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def quick_sweeps(tmp_path_factory):
    root = tmp_path_factory.mktemp("quick")
    seconds = run_quick(root / "jobs1", 1) + run_quick(root / "jobs2", 2)
    return root / "jobs1", root / "jobs2", seconds


@pytest.fixture(scope="module")
def quick_summary(quick_sweeps):
    return load_summary(quick_sweeps[0])


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 6, 7])
def test_criterion(n):
    globals()[f"criterion_{n}"]()
    _check(str(n))


@pytest.mark.parametrize("key", ["8a", "8b", "8c"])
def test_criterion_8(quick_summary, key):
    criterion_8(quick_summary)
    _check(key)


@pytest.mark.parametrize("key", ["9a", "9b", "9c"])
def test_criterion_9(quick_summary, key):
    criterion_9(quick_summary)
    _check(key)


def test_criterion_10(quick_summary):
    criterion_10(quick_summary)
    _check("10")


def test_criterion_11(quick_sweeps):
    criterion_11(*quick_sweeps)
    _check("11")


def main() -> int:
    for n in range(1, 8):
        globals()[f"criterion_{n}"]()
    with tempfile.TemporaryDirectory() as root:
        a, b = Path(root) / "jobs1", Path(root) / "jobs2"
        seconds = run_quick(a, 1) + run_quick(b, 2)
        summary = load_summary(a)
        criterion_8(summary)
        criterion_9(summary)
        criterion_10(summary)
        criterion_11(a, b, seconds)
    for key in sorted(RESULTS, key=lambda k: (int(k.rstrip("abc")), k)):
        ok, detail = RESULTS[key]
        print(f"{'PASS' if ok else 'FAIL'}  criterion {key}: {detail}")
    return 0 if all(ok for ok, _ in RESULTS.values()) else 1


if __name__ == "__main__":
    raise SystemExit(main())
