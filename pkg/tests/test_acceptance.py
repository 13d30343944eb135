"""End-to-end acceptance suite.

Each test prints one PASS/FAIL line for its criterion (bypassing pytest's
capture) and asserts the same condition.  Long-running statistical suites
checkpoint under tests/_acceptance_out, so interrupted or repeated runs
resume instead of recomputing.
"""

import os

import numpy as np
import pytest

from blindoac import feel
from blindoac.datasets import blobs_task, partition_iid
from blindoac.denoise import (
    DEFAULT_LAMBDA_MAX,
    DenoiseProblem,
    SolverConfig,
    atomic_denoise_batch,
)
from blindoac.experiments import (
    ExperimentConfig,
    run_feel_benchmark,
    run_nmse_sweep,
    run_oracle_check,
)
from blindoac.spectral import SampleGrid, atom_matrix, dirichlet_atom, synthesize_mixture

ARTIFACTS = os.path.join(os.path.dirname(__file__), "_acceptance_out")


def _report(capsys, num, desc, ok, detail):
    with capsys.disabled():
        print(f"[{'PASS' if ok else 'FAIL'}] criterion {num} ({desc}): {detail}",
              flush=True)
    assert ok, f"criterion {num}: {detail}"


def test_criterion_1_atom_identities(capsys):
    worst_pou, worst_col = 0.0, 0.0
    for L in (5, 9, 17, 33, 129):
        grid = SampleGrid.from_length(L)
        taus = np.random.default_rng(L).uniform(size=1000)
        A = atom_matrix(taus, grid)
        worst_pou = max(worst_pou, float(np.abs(A.sum(axis=0) - 1.0).max()))
        for q in range(L):
            a = dirichlet_atom(q / L, grid).values
            e = np.zeros(L)
            e[q] = 1.0
            worst_col = max(worst_col, float(np.abs(a - e).max()))
    ok = worst_pou < 1e-12 and worst_col < 1e-12
    _report(capsys, 1, "atom identities", ok,
            f"partition-of-unity err {worst_pou:.2e}, on-grid collapse err "
            f"{worst_col:.2e} (tol 1e-12)")


def test_criterion_2_noiseless_exact_recovery(capsys):
    worst = 0.0
    for L, K in ((17, 3), (33, 5), (65, 10)):
        grid = SampleGrid.from_length(L)
        rng = np.random.default_rng(L * 1000 + K)
        V = np.empty((50, L), dtype=complex)
        truth = np.empty(50)
        for t in range(50):
            if t % 2 == 0:
                taus = rng.uniform(size=K)  # spread
            else:
                center = rng.uniform()
                taus = (center + rng.uniform(-0.25, 0.25, size=K) / L) % 1.0  # clustered
            amps = rng.uniform(0.5, 1.5, size=K)
            truth[t] = amps.sum()
            V[t] = synthesize_mixture(list(zip(taus, amps)), grid).values
        sols = atomic_denoise_batch(V, np.full(50, DEFAULT_LAMBDA_MAX), grid,
                                    SolverConfig())
        est = np.array([s.atomic_norm_value for s in sols])
        rel = np.abs(est - truth) / (1 + np.abs(truth))
        worst = max(worst, float(rel.max()))
    ok = worst <= 1e-3
    _report(capsys, 2, "noiseless exact recovery", ok,
            f"max relative error {worst:.2e} over 150 instances (tol 1e-3)")


def test_criterion_3_oracle_equivalence(capsys):
    cfg = ExperimentConfig(kind="solver_oracle_check", L=(15,), K=(3,),
                           snr_db=(10.0, 20.0), trials=25, seed=31,
                           grid_points=960, tolerance=1e-2)
    table = run_oracle_check(cfg, os.path.join(ARTIFACTS, "oracle"))
    worst = max(table.value("objective_gap_max", snr_db=s) for s in (10.0, 20.0))
    ok = not table.any_flagged()
    _report(capsys, 3, "oracle equivalence", ok,
            f"max relative objective gap {worst:.2e} over 50 instances "
            f"at L=15, 960 grid points (tol 1e-2)")


def test_criterion_4_error_scaling_law(capsys):
    Ls = (9, 17, 33, 65, 129)
    cfg = ExperimentConfig(kind="nmse_vs_snr_L", L=Ls, K=(5,), snr_db=(10.0,),
                           trials=100, seed=41)
    table = run_nmse_sweep(cfg, os.path.join(ARTIFACTS, "scaling"))
    nmse = [table.value("nmse", L=L) for L in Ls]
    slope = float(np.polyfit(np.log(Ls), np.log(nmse), 1)[0])
    ok = -0.65 <= slope <= -0.35
    _report(capsys, 4, "error scaling law", ok,
            f"log-NMSE vs log-L slope {slope:.3f} over L={Ls}, 100 trials "
            f"(required within [-0.65, -0.35])")


def test_criterion_5_nmse_vs_snr_trend(capsys):
    Ls = (9, 17, 33, 65, 129)
    snrs = (4.0, 8.0, 12.0, 16.0, 20.0)
    cfg = ExperimentConfig(kind="nmse_vs_snr_L", L=Ls, K=(5,), snr_db=snrs,
                           trials=100, seed=51)
    table = run_nmse_sweep(cfg, os.path.join(ARTIFACTS, "fig3a"))
    problems = []
    for L in Ls:
        vals, ses = [], []
        for s in snrs:
            rows = [r for r in table.rows
                    if r["statistic"] == "nmse" and r["L"] == L and r["snr_db"] == s]
            vals.append(rows[0]["value"])
            ses.append(rows[0]["stderr"])
        ups = [i for i in range(len(vals) - 1) if vals[i + 1] > vals[i]]
        bad = [i for i in ups
               if vals[i + 1] - vals[i] > np.hypot(ses[i], ses[i + 1])]
        if len(ups) > 1 or bad:
            problems.append(f"L={L} inversions at {ups}")
    n9 = table.value("nmse", L=9, snr_db=20.0)
    n129 = table.value("nmse", L=129, snr_db=20.0)
    if not n129 < n9:
        problems.append(f"NMSE(129)={n129:.3g} !< NMSE(9)={n9:.3g} at 20 dB")
    ok = not problems
    _report(capsys, 5, "NMSE vs SNR trend", ok,
            "monotone in SNR for every L and NMSE(L=129) < NMSE(L=9) at 20 dB"
            if ok else "; ".join(problems))


def test_criterion_6_nmse_vs_users_trend(capsys):
    cfg = ExperimentConfig(kind="nmse_vs_snr_K", L=(129,), K=(10, 50),
                           snr_db=(12.0,), trials=100, seed=61)
    table = run_nmse_sweep(cfg, os.path.join(ARTIFACTS, "fig3b"))
    rows = {r["K"]: r for r in table.rows if r["statistic"] == "nmse"}
    margin = rows[50]["value"] - rows[10]["value"]
    se = float(np.hypot(rows[10]["stderr"], rows[50]["stderr"]))
    ok = margin > 2 * se
    _report(capsys, 6, "NMSE vs users trend", ok,
            f"NMSE(K=50)={rows[50]['value']:.3g} exceeds NMSE(K=10)="
            f"{rows[10]['value']:.3g} by {margin:.3g} ({margin / se:.1f} standard errors; "
            f"required > 2)")


def test_criterion_8_noiseless_blind_equals_ideal(capsys):
    # runs before criterion 7 in wall-clock terms would be nicer, but the
    # numbering follows the statistical weight of the suites
    train, test = blobs_task(seed=8)
    parts = partition_iid(train, 5, seed=8)
    common = dict(K=5, rounds=20, eta=0.5, L=17, snr_db=np.inf, seed=8,
                  n_hidden=6)
    ideal = feel.train(feel.TrainingConfig(mode="IdealSync", **common), parts, test)
    blind = feel.train(feel.TrainingConfig(mode="BlindFull", **common), parts, test)
    loss_dev = max(abs(b.loss - i.loss) / (1 + abs(i.loss))
                   for b, i in zip(blind, ideal))
    acc_dev = max(abs(b.accuracy - i.accuracy) for b, i in zip(blind, ideal))
    ok = loss_dev <= 1e-3 and acc_dev <= 1e-3
    _report(capsys, 8, "noiseless blind = ideal training", ok,
            f"per-round relative loss deviation {loss_dev:.2e}, accuracy "
            f"deviation {acc_dev:.2e} over 20 rounds, 124-parameter model (tol 1e-3)")


FEEL_SOLVER = SolverConfig(primal_tol=1e-4, dual_tol=1e-4, max_iterations=250)


def test_criterion_7_feel_benchmark(capsys):
    cfg = ExperimentConfig(
        kind="feel_benchmark", L=(129, 257), K=(10,), snr_db=(5.0,),
        seeds=5, rounds=60, eta=0.5, task="digits", n_hidden=32,
        modes=("IdealSync", "BlindDelayReuse-L0", "BlindDelayReuse-L1",
               "NoRecovery"),
        reuse_subset=4, seed=71, solver=FEEL_SOLVER,
    )
    table = run_feel_benchmark(cfg, os.path.join(ARTIFACTS, "feel"))
    acc = {m: table.value(f"final_accuracy[{m}]") for m in cfg.modes}
    ideal, blind257 = acc["IdealSync"], acc["BlindDelayReuse-L1"]
    norec = acc["NoRecovery"]
    gap_ok = blind257 >= ideal - 0.15
    chance = 0.1
    ratio_ok = (blind257 >= 2 * norec) or (norec < 1.5 * chance and blind257 > 0.60)
    ok = gap_ok and ratio_ok
    _report(capsys, 7, "federated benchmark", ok,
            f"final accuracy over 5 seeds: ideal {ideal:.3f}, blind(L=257) "
            f"{blind257:.3f}, blind(L=129) {acc['BlindDelayReuse-L0']:.3f}, "
            f"no-recovery {norec:.3f}; gap-to-ideal<=0.15: {gap_ok}, "
            f"baseline margin: {ratio_ok}")


def test_criterion_9_determinism(capsys, tmp_path):
    nmse_cfg = ExperimentConfig(kind="nmse_vs_snr_L", L=(9, 17), K=(3,),
                                snr_db=(10.0, 20.0), trials=5, seed=91)
    feel_cfg = ExperimentConfig(kind="feel_benchmark", L=(9,), K=(2,),
                                snr_db=(20.0,), seeds=1, rounds=2, eta=0.5,
                                task="blobs", n_hidden=4, reuse_subset=3,
                                modes=("IdealSync", "BlindDelayReuse-L0"),
                                seed=91)
    outputs = []
    for rep in ("a", "b"):
        d1 = tmp_path / f"nmse_{rep}"
        d2 = tmp_path / f"feel_{rep}"
        run_nmse_sweep(nmse_cfg, str(d1), threads=1 if rep == "a" else 2)
        run_feel_benchmark(feel_cfg, str(d2))
        outputs.append(((d1 / "results.csv").read_bytes(),
                        (d2 / "results.csv").read_bytes(),
                        (d2 / "rounds.csv").read_bytes()))
    ok = outputs[0] == outputs[1]
    _report(capsys, 9, "byte-identical determinism", ok,
            "repeated runs (different thread counts) produced identical CSV bytes"
            if ok else "re-run produced different CSV bytes")
