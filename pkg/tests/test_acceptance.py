"""Acceptance criteria 1-10.

Each test carries ``@pytest.mark.criterion(n)``; the run ends with one
PASS/FAIL line per criterion (see conftest.py). Criteria 7 and 8 train real
models at the default configuration and take about a minute each.
"""

import re
import time

import numpy as np
import pytest

import oracles
from connectome_llm import autograd as ag
from connectome_llm.ablation import METRIC_LABELS, ablation_grid
from connectome_llm.autograd import Tensor, finite_difference_check
from connectome_llm.backbone import BackboneConfig, backbone_forward, build_backbone
from connectome_llm.config import RunConfig
from connectome_llm.graph_distance import (
    MATRIX_METRICS,
    METRICS,
    PersistenceSummary,
    metric_distance,
    persistence_summary,
    wasserstein_distance,
)
from connectome_llm.losses import ow_mse
from connectome_llm.model import build_model, forward, frozen_parts, prepare_inputs, tokens
from connectome_llm.patch_embed import PatchConfig, make_patches
from connectome_llm.revrin import quantile, revrin_forward, revrin_inverse
from connectome_llm.splits import split_plan
from connectome_llm.timeseries_io import SyntheticSpec, generate_synthetic_cohort
from connectome_llm.trainer import aggregate, format_mean_std, run_protocol, table_layout


def _graph(rng, n):
    a = rng.uniform(-1, 1, (n, n))
    c = (a + a.T) / 2
    np.fill_diagonal(c, 1.0)
    return c


# ------------------------------------------------------------ 1. gradients


def _param_slots(model):
    slots = {"patch.weight": (model.patch, "weight"), "patch.bias": (model.patch, "bias")}
    slots["reprogram.prototype_map"] = (model.bank, "prototype_map")
    for n in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"):
        slots[f"reprogram.{n}"] = (model.attn, n)
    slots["head.weight"] = (model.head, "weight")
    slots["head.bias"] = (model.head, "bias")
    return slots


@pytest.mark.criterion(1)
def test_gradient_integrity(record_property):
    start = time.perf_counter()
    worst = {}
    for seed in range(3):
        rng = np.random.default_rng(seed)
        cfg = RunConfig().replace(**{
            "backbone.d_h": 8, "backbone.n_attn_heads": 2, "backbone.d_ff": 16,
            "reprogram.heads": 2, "reprogram.prototypes": 4 + seed, "reprogram.vocab_size": 12,
            "patch.length": 4 + seed, "patch.stride": 2, "patch.embed_dim": 3 + seed,
        })  # fmt: skip
        n_tokens = 2 + seed
        model = build_model(cfg, n_tokens, seed)
        for t in model.trainable().values():
            # nonzero biases so their gradients are exercised at a generic point
            if t.data.ndim == 1:
                t.data[:] = rng.normal(scale=0.1, size=t.data.shape)
        patches = Tensor(rng.normal(size=(3, n_tokens, cfg.patch.length)))
        y = np.array([0.2, 1.5, 3.0])

        for name, (obj, attr) in _param_slots(model).items():
            original = getattr(obj, attr)

            def loss(t, obj=obj, attr=attr, original=original):
                setattr(obj, attr, t)
                try:
                    return ow_mse(forward(model, patches), y, threshold=1.0, weight=20.0)
                finally:
                    setattr(obj, attr, original)

            err = finite_difference_check(loss, original.data.copy(), eps=1e-5)
            worst[name] = max(worst.get(name, 0.0), err)

        weights = build_backbone(BackboneConfig(2, 8, 2, 16, causal=seed % 2 == 0), seed)
        r = Tensor(rng.normal(size=(4, 8)))
        err = finite_difference_check(lambda t: ag.sum_(backbone_forward(t, weights) * r), rng.normal(size=(4, 8)))
        worst["backbone tokens"] = max(worst.get("backbone tokens", 0.0), err)

    elapsed = time.perf_counter() - start
    top = max(worst, key=worst.get)
    record_property("detail", f"max rel err {worst[top]:.2e} at {top}, {elapsed:.1f}s")
    assert all(e <= 1e-4 for e in worst.values()), worst
    assert elapsed < 60


# ------------------------------------------------------------ 2. persistence oracle


@pytest.mark.criterion(2)
def test_persistence_matches_filtration_oracle(record_property):
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    mismatches = 0
    for k in range(200):
        n = 3 + k % 6
        c = _graph(rng, n)
        iu = np.triu_indices(n, 1)
        assert len(set(c[iu])) == len(iu[0])  # distinct weights
        s = persistence_summary(c)
        births, deaths = oracles.filtration(c.tolist())
        mismatches += sorted(s.births) != sorted(births) or sorted(s.deaths) != sorted(deaths)
    elapsed = time.perf_counter() - start
    record_property("detail", f"200 graphs, {mismatches} mismatches, {elapsed:.2f}s")
    assert mismatches == 0
    assert elapsed < 10


# ------------------------------------------------------------ 3. wasserstein


@pytest.mark.criterion(3)
def test_sorted_matching_is_optimal(record_property):
    rng = np.random.default_rng(3)
    worst = 0.0
    for k in range(100):
        size = 1 + k % 4
        x, y = rng.uniform(-1, 1, size), rng.uniform(-1, 1, size)
        p = PersistenceSummary(np.sort(x)[::-1], np.sort(x)[::-1])
        q = PersistenceSummary(np.sort(y)[::-1], np.sort(y)[::-1])
        ref = oracles.bijection_wasserstein(list(x), list(y), 2.0)
        for h in (0, 1):
            worst = max(worst, abs(wasserstein_distance(p, q, h, 2.0) - ref))
    record_property("detail", f"100 pairs, max abs diff {worst:.1e}")
    assert worst <= 1e-12


# ------------------------------------------------------------ 4. metric axioms


@pytest.mark.criterion(4)
def test_metric_axioms(record_property):
    rng = np.random.default_rng(4)
    ident = sym = tri = 0.0
    for k in range(100):
        n = 3 + k % 6
        a, b, c = _graph(rng, n), _graph(rng, n), _graph(rng, n)
        for name in METRICS:
            ident = max(ident, metric_distance(name, a, a))
            sym = max(sym, abs(metric_distance(name, a, b) - metric_distance(name, b, a)))
        for name in MATRIX_METRICS:
            excess = metric_distance(name, a, c) - metric_distance(name, a, b) - metric_distance(name, b, c)
            tri = max(tri, excess)
    record_property("detail", f"identity {ident:.1e}, symmetry {sym:.1e}, triangle excess {tri:.1e}")
    assert ident <= 1e-12 and sym <= 1e-12
    assert tri <= 1e-9


# ------------------------------------------------------------ 5. revrin


@pytest.mark.criterion(5)
def test_revrin_properties(record_property):
    rng = np.random.default_rng(5)
    trip = stat = 0.0
    for k in range(100):
        x = rng.normal(size=(7, 5 + k)) * rng.uniform(0.1, 10) + rng.uniform(0, 5)
        xn, state = revrin_forward(x)
        trip = max(trip, np.abs(revrin_inverse(xn, state) - x).max())
        for row in xn:
            stat = max(stat, abs(np.median(row)), abs(quantile(row, 0.75) - quantile(row, 0.25) - 1.0))
        # multiply each row's single largest element by 10; for T >= 5 it sits
        # above Q3 and, when positive, stays there
        rows = np.arange(7)
        idx = np.argmax(x, axis=1)
        assert np.all(x[rows, idx] > 0)
        y = x.copy()
        y[rows, idx] *= 10
        _, inflated = revrin_forward(y)
        assert np.array_equal(inflated.median, state.median)
        assert np.array_equal(inflated.iqr, state.iqr)
    record_property("detail", f"round trip {trip:.1e}, median/IQR deviation {stat:.1e}, outlier stats unchanged")
    assert trip <= 1e-12 and stat <= 1e-12


# ------------------------------------------------------------ 6 + 7. learning signal and freeze contract

SIGNAL_SEEDS = range(5)


@pytest.fixture(scope="module")
def signal_runs():
    """Default configuration, 30 epochs, five seeded 24-subject cohorts."""
    runs = []
    start = time.perf_counter()
    for s in SIGNAL_SEEDS:
        cohort = generate_synthetic_cohort(SyntheticSpec(16, 4, 4, n_rois=8, n_timepoints=120, seed=s))
        cfg = RunConfig().replace(**{"train.seed": s, "split.seed": s})
        before = frozen_parts(cfg)
        sums = (before[0].checksum(), ag.checksum([before[1]]))
        runs.append((s, cfg, run_protocol(cohort, cfg), sums))
    return runs, time.perf_counter() - start


@pytest.mark.criterion(6)
def test_freeze_contract(signal_runs, record_property):
    runs, _ = signal_runs
    changed = 0
    for _, cfg, result, (bb_sum, vocab_sum) in runs:
        for rep in result.repeats:
            b, a = rep.train.checksums_before, rep.train.checksums_after
            assert rep.train.history[-1]["epoch"] == 30
            assert a["backbone"] == b["backbone"] and a["vocab"] == b["vocab"]
            assert rep.train.model.backbone.checksum() == bb_sum
            assert ag.checksum([rep.train.model.bank.vocab_embeddings]) == vocab_sum
            for module in ("patch_embedding", "reprogramming", "output_head"):
                assert a[module] != b[module], module
            changed += 1
    record_property("detail", f"{changed} 30-epoch runs: frozen checksums equal, all three task modules changed")


@pytest.mark.criterion(7)
def test_learning_signal(signal_runs, record_property):
    runs, elapsed = signal_runs
    ratios, model_mae, base_mae = [], [], []
    for s, _, result, _ in runs:
        r = [rep.train.history[-1]["train_loss"] / rep.train.history[0]["train_loss"] for rep in result.repeats]
        m = np.mean([rep.report.mae_overall for rep in result.repeats])
        b = np.mean([rep.baseline.mae_overall for rep in result.repeats])
        print(f"cohort seed {s}: loss ratio max {max(r):.3f}, overall MAE model {m:.4f} vs baseline {b:.4f}")
        ratios += r
        model_mae.append(m)
        base_mae.append(b)
    m, b = float(np.mean(model_mae)), float(np.mean(base_mae))
    record_property(
        "detail",
        f"worst final/initial loss {max(ratios):.3f}, overall MAE {m:.4f} vs baseline {b:.4f}, "
        f"{len(runs)} cohorts in {elapsed:.0f}s",
    )
    assert max(ratios) <= 0.5
    assert m < b
    assert elapsed / len(runs) < 300


# ------------------------------------------------------------ 8. OW-MSE weight


@pytest.mark.criterion(8)
def test_outlier_weight_helps_impaired(record_property):
    mae = {1.0: [], 20.0: []}
    for s in range(5):
        cohort = generate_synthetic_cohort(SyntheticSpec(40, 2, 2, n_rois=8, n_timepoints=120, seed=100 + s))
        counts = cohort.counts()
        assert counts["Normal"] >= 10 * (counts["MCI"] + counts["IMP"])
        base = RunConfig().replace(**{"train.seed": s, "split.seed": s, "split.n_repeats": 1})
        inputs = prepare_inputs(cohort, base)
        for w in mae:
            cfg = base.replace(**{"ow_mse.weight": w, "ow_mse.tau": 0.9})
            result = run_protocol(cohort, cfg, inputs=inputs)
            mae[w].append(np.mean([rep.report.mae_mci_imp for rep in result.repeats]))
    w1, w20 = float(np.mean(mae[1.0])), float(np.mean(mae[20.0]))
    record_property("detail", f"impaired MAE w=20 {w20:.4f} vs w=1 {w1:.4f}")
    assert w20 <= w1


# ------------------------------------------------------------ 9. protocol fidelity

# Row values of each published ablation table, per backbone (columns are always
# the seven metrics in METRICS order).
PUBLISHED_GRIDS = {
    "ow_weight": {"llama": ["w=10"], "gpt2": ["w=10"], "bert": ["w=10"]},
    "layers": {"llama": ["8", "16"], "gpt2": ["6", "12"], "bert": ["6", "12"]},
    "heads": {b: ["2", "4", "6", "8"] for b in ("llama", "gpt2", "bert")},
    "prototypes": {b: ["50", "100", "500"] for b in ("llama", "gpt2", "bert")},
    "revrin": {b: ["No", "Yes"] for b in ("llama", "gpt2", "bert")},
}


@pytest.mark.criterion(9)
def test_protocol_fidelity(signal_runs, record_property):
    # splits: five seeded repeats, disjoint, 30/30/40 within one subject, stratified
    cohort = generate_synthetic_cohort(SyntheticSpec(629, 21, 27, n_rois=2, n_timepoints=2, seed=9))
    dx = {r.subject_id: r.diagnosis for r in cohort}
    for seed in range(5):
        cfg = RunConfig().replace(**{"split.seed": seed})
        splits = split_plan(cohort, cfg.split)
        assert len(splits) == 5
        for sp in splits:
            parts = sp.parts()
            ids = [s for p in parts.values() for s in p]
            assert len(ids) == len(set(ids)) == len(cohort)
            for name, frac in (("train", 0.3), ("val", 0.3), ("test", 0.4)):
                assert abs(len(parts[name]) - frac * len(cohort)) <= 1
                assert {dx[s] for s in parts[name]} == {"Normal", "MCI", "IMP"}

    # mean +- std in the published layout
    _, _, result, _ = signal_runs[0][0]
    text = table_layout({"Wass-1": aggregate(result.reports)})
    lines = text.splitlines()
    assert lines[0] == "Diagnosis | Wass-1"
    assert [ln.split(" | ")[0] for ln in lines[1:]] == ["MCI+IMP", "Normal"]
    assert all(re.fullmatch(r"\d+\.\d{4} ± \d+\.\d{4}", ln.split(" | ")[1]) for ln in lines[1:])
    assert format_mean_std(0.6814, 0.1155) == "0.6814 ± 0.1155"

    # ablation grids: cells and axes of the published tables
    t2 = ablation_grid("table2")
    assert [c.value for c in t2] == ["Default", "LL6", "AH4", "TP500", "No RevRIN"]
    assert {(c.backbone, c.metric) for c in t2} == {("gpt2", "wass1")}
    assert [METRIC_LABELS[m] for m in METRICS] == [
        "Chebyshev", "Manhattan", "Frobenius", "Spectral", "Nuclear", "Wass-0", "Wass-1",
    ]  # fmt: skip
    for grid, rows in PUBLISHED_GRIDS.items():
        cells = ablation_grid(grid)
        for b, values in rows.items():
            got = [(c.value, c.metric) for c in cells if c.backbone == b]
            assert got == [(v, m) for v in values for m in METRICS], (grid, b)
    n_cells = sum(len(ablation_grid(g)) for g in PUBLISHED_GRIDS) + len(t2)
    record_property("detail", f"25 splits checked, layout ok, {n_cells} grid cells match the published tables")


# ------------------------------------------------------------ 10. shapes


@pytest.mark.criterion(10)
def test_shape_contracts(record_property):
    rng = np.random.default_rng(10)
    for k in range(25):
        L = int(rng.integers(2, 10))
        S = int(rng.integers(1, L + 1))
        T = int(rng.integers(L, 40))
        d = int(rng.integers(1, 8))
        heads = int(rng.choice([1, 2, 4]))
        d_h = heads * int(rng.integers(1, 4)) * 2
        x = rng.normal(size=(d, T))
        p = make_patches(x, PatchConfig(L, S))
        m = (T - L) // S + 1
        assert p.shape == (d, m, L)
        M = d * m
        cfg = RunConfig().replace(**{
            "patch.length": L, "patch.stride": S, "patch.embed_dim": int(rng.integers(1, 6)),
            "backbone.d_h": d_h, "backbone.n_attn_heads": heads, "backbone.d_ff": 2 * d_h,
            "backbone.causal": bool(k % 2), "reprogram.heads": heads,
            "reprogram.prototypes": 3, "reprogram.vocab_size": 6,
        }).validate()  # fmt: skip
        model = build_model(cfg, M, k)
        batch = p.reshape(1, M, L)
        z = tokens(model, batch)
        assert z.shape == (1, M, d_h)
        assert backbone_forward(z, model.backbone).shape == (1, M, d_h)
        assert backbone_forward(z.data[0], model.backbone).shape == (M, d_h)
        assert forward(model, batch).shape == (1,)
    record_property("detail", "25 random (T, L, S, d, d_h, K) configurations")
