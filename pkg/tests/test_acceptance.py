"""One test per acceptance criterion, at the stated tolerance.

Each test tags itself with ``("acceptance", N)`` so the terminal summary
prints one PASS/FAIL/SKIP line per criterion. Criterion 10 needs the
external databases; point these variables at their manifests to run it:

    PINNA_N1_CHEDAR_MANIFEST
    PINNA_N1_HUTUBS_SIM_MANIFEST     (optional, retained count only)
    PINNA_N1_HUTUBS_MEAS_MANIFEST    (optional, retained count only)
"""

import os
import time

import numpy as np
import pytest

from oracles import naive_rms_closed_form, ols_oracle, rms_loop
from pinna_n1 import cli
from pinna_n1 import experiments as ex
from pinna_n1._backend import available_backends
from pinna_n1.anthro import AnthroVector
from pinna_n1.dataset import Dataset, SubjectRecord, filter_records, label_records, load_manifest, merge_ears
from pinna_n1.notch import Hrir, extract_n1
from pinna_n1.predictors import ModelSpec, gradient_check, train_linear
from pinna_n1.synth import GenerativeSpec, comb_hrir, synth_dataset

NEURAL = ModelSpec()
LINEAR = ModelSpec(kind="linear")


def tag(request, n, detail):
    props = request.node.user_properties
    props[:] = [p for p in props if p[0] not in ("acceptance", "detail")]
    props += [("acceptance", n), ("detail", detail)]


def test_criterion_01_comb_oracle(request):
    tag(request, 1, "running")
    rng = np.random.default_rng(2024)
    targets = rng.uniform(5500.0, 11500.0, 200)
    gains = rng.uniform(0.5, 0.95, 200)
    t0 = time.perf_counter()
    est = np.array([extract_n1(comb_hrir(f, g)).n1_hz for f, g in zip(targets, gains)])
    elapsed = time.perf_counter() - t0
    err = np.abs(est - targets).max()
    tag(request, 1, f"max |error| {err:.2f} Hz (limit 25), {elapsed:.2f} s (limit 10)")
    assert err <= 25.0 and elapsed < 10.0


def _filtered(hrirs):
    av = AnthroVector.from_array(np.linspace(1, 9, 9))
    recs = tuple(SubjectRecord(f"S{i:03d}", "left", anthro=av, hrir=h) for i, h in enumerate(hrirs))
    labelled, _ = label_records(Dataset("p", "simulated", recs, sample_rate_hz=48000.0))
    return filter_records(labelled)


def test_criterion_02_prominence_filter(request):
    tag(request, 2, "running")
    rng = np.random.default_rng(7)
    freqs = rng.uniform(5500.0, 11500.0, 40)
    impulse = Hrir(np.eye(1, 256, 64)[0].astype(np.float32), 48000.0)
    counts = []
    for _ in range(2):
        counts.append((
            len(_filtered([impulse] * 40)),
            len(_filtered([comb_hrir(f, 0.05) for f in freqs])),
            len(_filtered([comb_hrir(f, 0.9) for f in freqs])),
        ))
    tag(request, 2, f"retained impulses/gain 0.05/gain 0.9 = {counts[0]} of 40 each, repeat {counts[1]}")
    assert counts[0] == counts[1] == (0, 0, 40)


def test_criterion_03_linear_vs_pinv(request):
    tag(request, 3, "running")
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        X = rng.normal(size=(30, 9))
        y = rng.normal(size=30) * 1000.0 + 8000.0
        m = train_linear(X, y)
        w, b = ols_oracle(X, y)
        got = np.append(m.params["weights"], m.params["bias"])
        ref = np.append(w, b)
        worst = max(worst, float(np.max(np.abs(got - ref) / np.abs(ref))))
    tag(request, 3, f"max relative deviation {worst:.2e} (limit 1e-6)")
    assert worst < 1e-6


def test_criterion_04_gradient_check(request):
    tag(request, 4, "running")
    devs = {name: gradient_check(NEURAL, n_probes=50, kernels=k) for name, k in sorted(available_backends().items())}
    tag(request, 4, "max relative deviation " + ", ".join(f"{k} {v:.2e}" for k, v in devs.items()) + " (limit 1e-5)")
    assert max(devs.values()) < 1e-5


def test_criterion_05_nonlinearity_advantage(request, synth900):
    tag(request, 5, "running")
    t0 = time.perf_counter()
    neural = ex.run_repeated(synth900, NEURAL, n_runs=9, base_seed=0)
    linear = ex.run_repeated(synth900, LINEAR, n_runs=9, base_seed=0)
    elapsed = time.perf_counter() - t0
    ratio = neural.rms_hz / linear.rms_hz
    tag(request, 5, f"neural {neural.rms_hz:.1f} Hz / linear {linear.rms_hz:.1f} Hz = {ratio:.3f} (limit 0.6), "
                    f"{elapsed:.0f} s (limit 300)")
    assert ratio < 0.6 and elapsed < 300.0


def test_criterion_06_size_sweep(request, synth900):
    tag(request, 6, "running")
    sizes = [50, 200, 700]
    out = ex.size_sweep(synth900, sizes, NEURAL, test_size=25, n_runs=9, base_seed=0)
    per = [np.array([r.rms_hz for r in rep.runs]) for _, rep in out]
    med = [float(np.median(v)) for v in per]
    # pooled over the three sizes: sqrt(mean sample variance) / sqrt(runs per size)
    se = float(np.sqrt(np.mean([v.var(ddof=1) for v in per]) / len(per[0])))
    tag(request, 6, "medians " + ", ".join(f"{s}: {m:.1f}" for s, m in zip(sizes, med)) + f" Hz, pooled SE {se:.1f} Hz")
    assert med[2] < med[0]
    assert all(b <= a + se for a, b in zip(med, med[1:]))


def test_criterion_07_domain_mixing(request):
    tag(request, 7, "running")
    source = synth_dataset(GenerativeSpec(seed=0, name="src"), with_hrirs=False)
    target = synth_dataset(GenerativeSpec(n_examples=100, seed=1, mapping_seed=0, name="tgt"), with_hrirs=False)
    mixed = ex.domain_mix(source, target, NEURAL, n_runs=9, base_seed=0)
    alone = ex.run_repeated(target, NEURAL, n_runs=9, base_seed=0)
    tag(request, 7, f"mixed {mixed.rms_hz:.1f} Hz vs target-only {alone.rms_hz:.1f} Hz")
    assert mixed.rms_hz <= alone.rms_hz


def test_criterion_08_metric_identities(request, synth900):
    tag(request, 8, "running")
    rng = np.random.default_rng(8)
    true = rng.uniform(5000.0, 12000.0, 500)
    octave = ex.rms_octave(2.0 * true, true)
    worst_hz = 0.0
    for _ in range(50):
        p, t = rng.uniform(4000, 13000, 100), rng.uniform(4000, 13000, 100)
        worst_hz = max(worst_hz, abs(ex.rms_hz(p, t) - rms_loop(p, t)) / rms_loop(p, t))
    y = synth900.labels()
    worst_naive = 0.0
    for run in ex.run_repeated(synth900, ModelSpec(kind="naive"), n_runs=9).runs:
        sp = ex.make_split(synth900, seed=run.seed)
        ref = naive_rms_closed_form([y[i] for i in sp.train], [y[i] for i in sp.test])
        worst_naive = max(worst_naive, abs(run.rms_hz - ref) / ref)
    tag(request, 8, f"|octave(2x) - 1| {abs(octave - 1):.1e}, rms_hz rel {worst_hz:.1e}, naive rel {worst_naive:.1e}")
    assert abs(octave - 1.0) <= 1e-12 and worst_hz <= 1e-9 and worst_naive <= 1e-9


def test_criterion_09_table1_determinism(request, tmp_path):
    tag(request, 9, "running")
    assert cli.main(["synth", "--out-dir", str(tmp_path), "--n-examples", "300", "--name", "det", "--no-hrirs"]) == 0
    args = ["table1", "--dataset", str(tmp_path / "det.json"), "--n-runs", "3", "--base-seed", "5"]
    assert cli.main(args + ["--out-dir", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--out-dir", str(tmp_path / "b")]) == 0
    names = ("table1.csv", "table1_runs.csv", "table1_summary.csv")
    same = [(tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in names]
    tag(request, 9, f"{sum(same)}/{len(names)} CSVs byte-identical")
    assert all(same)


RETAINED = {"PINNA_N1_CHEDAR_MANIFEST": 903, "PINNA_N1_HUTUBS_SIM_MANIFEST": 182, "PINNA_N1_HUTUBS_MEAS_MANIFEST": 171}


def _retained(path):
    d = merge_ears(load_manifest(path))
    labelled, _ = label_records(d)
    return filter_records(labelled)


def test_criterion_10_integration(request):
    tag(request, 10, "requires external databases")
    chedar = os.environ.get("PINNA_N1_CHEDAR_MANIFEST")
    if not chedar:
        pytest.skip("set PINNA_N1_CHEDAR_MANIFEST to run the integration tier")
    notes, ok = [], True
    kept = {}
    for var, expect in RETAINED.items():
        path = os.environ.get(var)
        if not path:
            continue
        kept[var] = _retained(path)
        n = len(kept[var])
        ok &= abs(n - expect) <= 0.1 * expect
        notes.append(f"{var.split('_', 2)[2].lower()} retained {n} (ref {expect})")
    d = kept["PINNA_N1_CHEDAR_MANIFEST"]
    neural = ex.run_repeated(d, NEURAL, n_runs=9, base_seed=0)
    linear = ex.run_repeated(d, LINEAR, n_runs=9, base_seed=0)
    notes.append(f"neural {neural.rms_hz:.1f} Hz {neural.rms_octave:.3f} oct, linear {linear.rms_hz:.1f} Hz")
    ok &= neural.rms_hz <= 700.0 and neural.rms_octave <= 0.08
    ok &= abs(linear.rms_hz - 953.3) <= 0.25 * 953.3
    tag(request, 10, "; ".join(notes))
    assert ok
