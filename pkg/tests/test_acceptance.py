"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The lines are repeated in an "acceptance criteria" section of the pytest
terminal summary.
"""
import json
import time

import numpy as np
import pytest
from scipy.stats import ortho_group

from glgenn import autodiff as ad
from glgenn.algebra import Multivector, Signature, blade_signs
from glgenn.cli import run
from glgenn.groups import (
    Versor,
    adjoint,
    orthogonal_to_versor,
    property_report,
    random_restricted_orthogonal,
    sample_lipschitz,
    twisted_adjoint,
    twisted_adjoint_check,
    versor_to_orthogonal,
)
from glgenn.layers import (
    ConjugationLayer,
    PartitionLinear,
    PartitionNorm,
    PartitionProduct,
    ScalarGate,
    Sequential,
    build_stack,
)
from glgenn.tasks import (
    TrainConfig,
    build_model,
    embed_regression,
    equivariance_audit,
    gen_hull,
    gen_regression,
    hull_volume_mc,
    insert_broken_layer,
    model_inputs,
    train,
    with_scalar_channel,
)

import oracles
from conftest import GROUP_SIGNATURES, LAYER_SIGNATURES, all_signatures
from test_autodiff import _cases, grad_check

CL13 = Signature(1, 3)


def _golden_T():
    s = CL13
    return Versor.from_factors(s, [s.e(1), s.e(2), s.e(3) - s.e(2)])


def _exact(got: Multivector, want: Multivector) -> bool:
    """Signs must agree exactly; magnitudes to 1e-12."""
    same_support = np.array_equal(np.sign(np.round(got.coeffs, 9)), np.sign(want.coeffs))
    return bool(same_support and np.abs(got.coeffs - want.coeffs).max() <= 1e-12)


# --- 1 ---------------------------------------------------------------------------

def test_criterion_1_golden_cl13(criterion):
    s = CL13
    with criterion("1", "golden Cl(1,3) worked values") as c:
        start = time.perf_counter()
        T = _golden_T()
        assert T.product.allclose(s.e(1) + s.e(1, 2, 3), atol=0)
        U = s.e() + s.e(4)
        checks = {
            "ad": (adjoint(T, U), s.e() - s.e(4)),
            "ad_check": (twisted_adjoint_check(T, U), -s.e() + s.e(4)),
            "ad_twisted": (twisted_adjoint(T, U), s.e() + s.e(4)),
            "e1": (twisted_adjoint(T, s.e(1)), -s.e(1)),
            "e2": (twisted_adjoint(T, s.e(2)), s.e(3)),
            "e4": (twisted_adjoint(T, s.e(4)), s.e(4)),
        }
        for name, (got, want) in checks.items():
            assert _exact(got, want), f"{name}: got {got}, want {want}"
        # the remaining basis image, checked against the word-reduction oracle
        eta = oracles.metric(1, 3, 0)
        image = oracles.product(oracles.product({(1,): -1.0, (1, 2, 3): -1.0}, {(3,): 1.0}, eta),
                                {(1,): 0.5, (1, 2, 3): -0.5}, eta)
        assert _exact(twisted_adjoint(T, s.e(3)), Multivector(s, oracles.to_dense(image, 4)))
        elapsed = time.perf_counter() - start
        c.note(f"ad, ad-check, ad-twisted and e_1, e_2, e_4 images exact; e_3 -> {image}; {elapsed:.3f}s")
        assert elapsed < 1.0


@pytest.mark.xfail(strict=True, reason="stated image e_3 -> e_2 is sign-inconsistent: "
                   "T is a product of three vectors, so its matrix has det -1 and e_3 maps to -e_2")
def test_criterion_1b_stated_e3_image(criterion):
    s = CL13
    with criterion("1b", "golden Cl(1,3) basis image e_3 -> e_2 as stated") as c:
        got = twisted_adjoint(_golden_T(), s.e(3))
        c.note(f"computed {got}; expected FAIL, the stated value has the wrong sign")
        assert _exact(got, s.e(2)), f"computed {got}, stated e_2"


# --- 2 ---------------------------------------------------------------------------

def _indices(mask, n):
    return tuple(i + 1 for i in range(n) if mask >> i & 1)


def test_criterion_2_algebra_properties(criterion):
    with criterion("2", "algebra properties, n <= 6 plus n = 8 spot checks") as c:
        start = time.perf_counter()
        rng = np.random.default_rng(2)
        sigs = all_signatures(6)
        worst_assoc = 0.0
        pairs = 0
        for sig in sigs:
            s = Signature(*sig)
            eta = oracles.metric(*sig)
            table = s.sign_table
            for a in range(s.dim):
                for b in range(s.dim):
                    sign, _ = oracles.reduce_word(_indices(a, s.n) + _indices(b, s.n), eta)
                    assert table[a, b] == sign, (sig, a, b)
                    pairs += 1
            for _ in range(5):
                x, y, z = (Multivector(s, rng.normal(size=s.dim)) for _ in range(3))
                lhs, rhs = (x * y) * z, x * (y * z)
                worst_assoc = max(worst_assoc, float(np.abs((lhs - rhs).coeffs).max()))
            for a in range(1, s.n + 1):
                for b in range(1, s.n + 1):
                    anti = s.e(a) * s.e(b) + s.e(b) * s.e(a)
                    assert anti.coeffs[0] == 2.0 * s.metric[a - 1] * (a == b) and not np.any(anti.coeffs[1:])
            for b in range(s.p + s.q + 1, s.n + 1):
                assert not np.any((s.e(b) * s.e(b)).coeffs)
        for sig in [(8, 0, 0), (4, 4, 0), (3, 3, 2), (0, 0, 8)]:
            s = Signature(*sig)
            eta = oracles.metric(*sig)
            ab = rng.integers(0, s.dim, size=(2000, 2))
            signs = blade_signs(s, ab[:, 0], ab[:, 1])
            for (a, b), v in zip(ab, signs):
                assert v == oracles.reduce_word(_indices(a, 8) + _indices(b, 8), eta)[0]
        elapsed = time.perf_counter() - start
        c.note(f"{len(sigs)} signatures, {pairs} blade pairs exact, associativity {worst_assoc:.1e}, {elapsed:.1f}s")
        assert worst_assoc <= 1e-12
        assert elapsed < 30


# --- 3 ---------------------------------------------------------------------------

def test_criterion_3_group_theory(criterion):
    with criterion("3", "group-theory suite on 7 signatures") as c:
        start = time.perf_counter()
        worst, failures = 0.0, 0
        for sig in GROUP_SIGNATURES:
            report = property_report(Signature(*sig), seed=list(sig), n_versors=10, n_samples=20)
            worst = max(worst, report["max_violation"])
            failures += report["norm_membership_failures"]
        elapsed = time.perf_counter() - start
        c.note(f"max rel violation {worst:.2e}, membership failures {failures}, {elapsed:.1f}s")
        assert worst < 1e-8 and failures == 0
        assert elapsed < 120


# --- 4 ---------------------------------------------------------------------------

def test_criterion_4_orthogonal_correspondence(criterion):
    with criterion("4", "versor <-> orthogonal matrix round trip, n <= 5") as c:
        start = time.perf_counter()
        worst_orth, worst_trip, count = 0.0, 0.0, 0
        for sig in all_signatures(5):
            s = Signature(*sig)
            eta = np.diag(s.metric)
            for seed in range(100):
                phi = random_restricted_orthogonal(s, [seed, *sig])
                M = versor_to_orthogonal(orthogonal_to_versor(phi)).entries
                worst_orth = max(worst_orth, float(np.abs(M.T @ eta @ M - eta).max()))
                worst_trip = max(worst_trip, float(np.abs(M - phi.entries).max()))
                count += 1
        elapsed = time.perf_counter() - start
        c.note(f"{count} matrices, orthogonality {worst_orth:.1e}, round trip {worst_trip:.1e}, {elapsed:.1f}s")
        assert worst_orth <= 1e-9 and worst_trip < 1e-8
        assert elapsed < 60


# --- 5 ---------------------------------------------------------------------------

def _single_layer_models(s):
    L = 3
    return {
        "conjugation": ConjugationLayer(s, L),
        "conjugation_sigmoid": ConjugationLayer(s, L, mode="sigmoid"),
        "qt_linear": PartitionLinear(s, L, L),
        "grade_linear": PartitionLinear(s, L, L, "grade"),
        "qt_norm": PartitionNorm(s, L),
        "grade_norm": PartitionNorm(s, L, "grade"),
        "qt_product": PartitionProduct(s, L),
        "grade_product": PartitionProduct(s, L, "grade"),
        "scalar_gate": ScalarGate(s, L, 4),
    }


def _stacks(s):
    L = 3
    return {
        "2-layer": [PartitionLinear(s, L, L), PartitionProduct(s, L)],
        "3-layer": [PartitionLinear(s, L, L), PartitionNorm(s, L), PartitionProduct(s, L)],
        "4-layer": [ConjugationLayer(s, L), PartitionNorm(s, L), PartitionProduct(s, L), ScalarGate(s, L, 4)],
    }


def test_criterion_5_layer_equivariance(criterion):
    with criterion("5", "layer and stack equivariance, broken-layer control") as c:
        start = time.perf_counter()
        worst, worst_broken = 0.0, np.inf
        for sig in LAYER_SIGNATURES:
            s = Signature(*sig)
            models = {k: Sequential([v]) for k, v in _single_layer_models(s).items()}
            models.update({k: Sequential(v) for k, v in _stacks(s).items()})
            for name, model in models.items():
                params = model.init(1)
                for key in params:
                    if key.endswith(".raw"):
                        params[key] = np.random.default_rng(0).uniform(-1.5, 1.5, size=params[key].shape)
                report = equivariance_audit(model, params, n_trials=20, seed=5)
                worst = max(worst, report["max_violation"])
            model = Sequential(_stacks(s)["3-layer"])
            params = model.init(2)
            broken, bparams = insert_broken_layer(model, params, 1)
            report = equivariance_audit(broken, bparams, n_trials=10, seed=5)
            worst_broken = min(worst_broken, report["layers"][1]["max_violation"])
        elapsed = time.perf_counter() - start
        c.note(f"max violation {worst:.1e}, weakest broken-layer detection {worst_broken:.2e}, {elapsed:.1f}s")
        assert worst < 1e-8 and worst_broken > 1e-2
        assert elapsed < 120


# --- 6 ---------------------------------------------------------------------------

def test_criterion_6_parameter_counts(criterion):
    with criterion("6", "exact parameter counts, GLGENN lighter than grade-wise") as c:
        s = Signature(5)
        n = s.n
        for L in (1, 3, 8, 16):
            assert ConjugationLayer(s, L).param_count() == L * (n + 1)
            assert PartitionLinear(s, L, L + 2).param_count() == 4 * L * (L + 2)
            assert PartitionProduct(s, L).param_count() == 4 * L * L + 64 * L
            assert PartitionNorm(s, L).param_count() == 4 * L
        qt = build_stack(s, 2, 8, 2).param_count()
        grade = build_stack(s, 2, 8, 2, family="grade").param_count()
        c.note(f"n=5 L=8 depth-2 stack: GLGENN {qt}, grade-wise {grade}")
        assert qt < grade


# --- 7 ---------------------------------------------------------------------------

def test_criterion_7_gradients(criterion):
    with criterion("7", "gradients match central finite differences") as c:
        start = time.perf_counter()
        worst_prim = 0.0
        for name, (fn, shapes) in _cases().items():
            for seed in range(10):
                rng = np.random.default_rng(seed)
                worst_prim = max(worst_prim, grad_check(fn, [rng.normal(size=sh) for sh in shapes], seed))
        cfg = TrainConfig()
        model = build_model(cfg)
        params = model.init(3)
        data = gen_regression(4, seed=1)
        x = model_inputs(cfg, data)
        y = data["y"]

        def loss_of(p):
            return float(np.mean((model(x, p) - y) ** 2))

        tape = ad.Tape()
        pv = tape.params(params)
        grads = tape.backward(ad.mse(model(x, pv), y)).collect(pv)
        worst_model = 0.0
        for key, arr in params.items():
            fd = oracles.finite_difference(lambda a, key=key: loss_of(dict(params, **{key: a})), arr, eps=1e-6)
            worst_model = max(worst_model, oracles.rel_err(grads[key], fd, floor=1e-6))
        elapsed = time.perf_counter() - start
        n_params = sum(v.size for v in params.values())
        c.note(f"primitives {worst_prim:.1e}, depth-2 model ({n_params} params) {worst_model:.1e}, {elapsed:.1f}s")
        assert worst_prim < 1e-4 and worst_model < 1e-4
        assert elapsed < 60


# --- 8 ---------------------------------------------------------------------------

REGRESSION = dict(task="regression", n_train=300, n_test=1000, hidden=8, depth=2, gate_hidden=32,
                  epochs=1000, max_steps=10_000, lr=3e-3, batch_size=32, seed=0)


@pytest.mark.slow
def test_criterion_8_regression(criterion):
    with criterion("8", "O(5) regression: GLGENN test MSE <= 0.05, MLP >= 2x worse, invariance") as c:
        start = time.perf_counter()
        cfg = TrainConfig(**REGRESSION)
        data = {"train": gen_regression(300, 0), "test": gen_regression(1000, 0, offset=300)}
        result = train(cfg, data)
        glgenn_time = time.perf_counter() - start
        mlp = train(TrainConfig(**dict(REGRESSION, model="mlp")), data)
        g_mse = result.metrics[-1]["test_mse"]
        m_mse = mlp.metrics[-1]["test_mse"]
        model = build_model(cfg)
        x1, x2 = data["test"]["x1"][:200], data["test"]["x2"][:200]
        base = result.predict(model, with_scalar_channel(embed_regression(x1, x2).data))
        worst_inv = 0.0
        for seed in range(5):
            Q = ortho_group.rvs(5, random_state=seed)
            rot = result.predict(model, with_scalar_channel(embed_regression(x1 @ Q.T, x2 @ Q.T).data))
            worst_inv = max(worst_inv, float(np.abs(rot - base).max() / np.abs(base).max()))
        elapsed = time.perf_counter() - start
        c.note(f"GLGENN {g_mse:.4f} in {result.steps} steps ({glgenn_time:.0f}s), MLP {m_mse:.4f} "
               f"(ratio {m_mse / g_mse:.1f}x), invariance {worst_inv:.1e}, {elapsed:.0f}s")
        assert g_mse <= 0.05
        assert m_mse >= 2 * g_mse
        assert worst_inv < 1e-7
        assert elapsed < 600


# --- 9 ---------------------------------------------------------------------------

HULL = dict(task="hull", hull_k=8, hull_dim=3, n_train=256, n_test=512, hidden=16, depth=3, gate_hidden=32,
            epochs=625, max_steps=5000, lr=1e-2, batch_size=32, seed=0)


@pytest.mark.slow
def test_criterion_9_hull(criterion):
    with criterion("9", "hull volume: >= 5x over mean predictor; d=5, K=16 mean volume near 11.4") as c:
        start = time.perf_counter()
        cfg = TrainConfig(**HULL)
        result = train(cfg)
        train_y = gen_hull(256, 8, 3, seed=0)["y"]
        test_y = gen_hull(512, 8, 3, seed=0, offset=256)["y"]
        baseline = float(np.mean((test_y - train_y.mean()) ** 2))
        mse = result.metrics[-1]["test_mse"]
        five = gen_hull(200, 16, 5, seed=0)
        mean_vol = float(five["y"].mean())
        mc = [hull_volume_mc(p, 200_000, seed=i) for i, p in enumerate(five["points"][:10])]
        mc_ok = all(abs(v - y) <= 4 * se for (v, se), y in zip(mc, five["y"][:10]))
        elapsed = time.perf_counter() - start
        c.note(f"test MSE {mse:.3f} vs mean predictor {baseline:.3f} ({baseline / mse:.1f}x) in {result.steps} "
               f"steps; d=5 mean volume {mean_vol:.2f} ({100 * (mean_vol / 11.4 - 1):+.1f}%); {elapsed:.0f}s")
        assert baseline >= 5 * mse
        assert abs(mean_vol / 11.4 - 1) <= 0.15
        assert mc_ok
        assert elapsed < 900


# --- 10 --------------------------------------------------------------------------

def test_criterion_10_determinism(criterion, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    with criterion("10", "identical config + seed give byte-identical outputs") as c:
        cfg_text = ("[run]\nseed = 4\nout_dir = {out}\n[task]\ntask = hull\nhull_k = 6\nn_train = 24\nn_test = 8\n"
                    "[model]\nhidden = 4\ndepth = 2\ngate_hidden = 4\n[train]\nepochs = 3\nbatch_size = 8\n")
        outputs = []
        for tag in ("a", "b"):
            assert run(["gen", "--task", "regression", "--n-train", "50", "--n-test", "20", "--seed", "7",
                        "--out", f"reg_{tag}"]) == 0
            assert run(["gen", "--task", "hull", "--k", "8", "--dim", "3", "--oracle", "mc", "--n-mc", "2000",
                        "--n-train", "5", "--n-test", "3", "--seed", "7", "--out", f"hull_{tag}"]) == 0
            path = tmp_path / f"{tag}.ini"
            path.write_text(cfg_text.format(out=f"runs_{tag}"))
            assert run(["train", str(path)]) == 0
            (rd,) = list((tmp_path / f"runs_{tag}").iterdir())
            assert run(["audit", str(rd / "checkpoint.npz"), "--n-trials", "4", "--out", f"audit_{tag}.json"]) == 0
            np.savetxt(f"m_{tag}.csv", random_restricted_orthogonal(Signature(2, 1, 1), 3).entries, delimiter=",",
                       fmt="%.17g")
            assert run(["lift", f"m_{tag}.csv", "--signature", "2,1,1", "--out-dir", f"lift_{tag}"]) == 0
            files = [f"reg_{tag}/train.csv", f"reg_{tag}/test.csv", f"hull_{tag}/train.csv",
                     f"hull_{tag}/test.csv", f"audit_{tag}.json", f"lift_{tag}/versor.txt",
                     f"lift_{tag}/lift_report.json"]
            blobs = [(tmp_path / f).read_bytes() for f in files]
            blobs.append((rd / "metrics.jsonl").read_bytes())
            outputs.append((blobs, [json.loads(l)["train_mse"] for l in (rd / "metrics.jsonl").read_text().splitlines()]))
        (blobs_a, trace_a), (blobs_b, trace_b) = outputs
        identical = sum(a == b for a, b in zip(blobs_a, blobs_b))
        diff = float(np.abs(np.array(trace_a) - np.array(trace_b)).max())
        c.note(f"{identical}/{len(blobs_a)} output files byte-identical, loss trace max diff {diff}")
        assert identical == len(blobs_a)
        assert diff == 0.0
