"""Acceptance criteria, each run at its stated tolerance.

Every test prints one ``criterion N [PASS|FAIL]`` line; the conftest hook
repeats them in a summary block at the end of the session.
"""

import json
import struct

import numpy as np
import pytest

from hdnn.checkpoint import decode_checkpoint, encode_checkpoint
from hdnn.cli import main
from hdnn.data import (
    FrameDataset,
    Prng,
    decode_dataset,
    encode_dataset,
    generate_synthetic,
    generate_train_valid,
    splice,
)
from hdnn.model import ArchSpec, count_params, init_params
from hdnn.training import TrainConfig, init_velocity, momentum_for_epoch, run_training, sgd_step
from hdnn.verification import grad_check, reduction_check

IN_DIM, OUT_DIM = 600, 3972

# (layer kind, hidden layers, width, published count in millions)
TABLE_ROWS = [
    ("plain", 6, 2048, 30.3),
    ("plain", 10, 1024, 14.1),
    ("plain", 15, 512, 6.0),
    ("highway", 10, 2048, 55.5),
    ("highway", 10, 1024, 16.2),
    ("highway", 10, 512, 5.2),
    ("highway", 10, 256, 1.9),
    ("highway", 10, 128, 0.77),
    ("highway", 15, 1024, 21.5),
    ("highway", 15, 512, 6.5),
    ("highway", 15, 256, 2.2),
    ("highway", 15, 128, 0.85),
]


def closed_form_count(kind, layers, n):
    """Input projection, L-1 square layers, output layer, plus two tied n*n gates."""
    total = (IN_DIM + 1) * n + (layers - 1) * (n * n + n) + (n + 1) * OUT_DIM
    return total + (2 * n * n if kind == "highway" else 0)


def test_parameter_counts(criterion):
    worst, exact = 0.0, True
    for kind, layers, n, published in TABLE_ROWS:
        got = count_params(ArchSpec(IN_DIM, n, layers, OUT_DIM, layer_kind=kind))
        exact &= got == closed_form_count(kind, layers, n)
        worst = max(worst, abs(got / 1e6 - published))
    ok = criterion(1, "parameter counts", exact and worst <= 0.1,
                   f"12 rows, max |M - published| = {worst:.3f} (tol 0.1), exact integers {'match' if exact else 'DIFFER'}")
    assert ok


GRAD_GRID = [
    dict(layer_kind="plain"),
    dict(),
    dict(transform_mode="fixed-one"),
    dict(carry_mode="fixed-zero"),
    dict(carry_mode="constrained"),
    dict(layer_kind="residual"),
]


def test_gradient_correctness(criterion):
    failures, worst, worst_abs = [], 0.0, 0.0
    for kw in GRAD_GRID:
        for act in ("sigmoid", "relu"):
            arch = ArchSpec(5, 6, 4, 4, activation=act, **kw)
            for seed in range(5):
                report = grad_check(arch, seed, tol=1e-6)
                worst = max(worst, report.max_error)
                worst_abs = max(worst_abs, report.max_abs_diff)
                if not report.passed:
                    failures.append(f"{arch.layer_kind}/{arch.transform_mode}/{arch.carry_mode}/{act}/s{seed}")
    detail = (f"{60 - len(failures)}/60 checks within 1e-6 relative (L=4, n=6, batch 3, eps 1e-5); "
              f"max rel err {worst:.2e}, max abs diff {worst_abs:.2e}")
    ok = criterion(2, "gradient correctness", not failures, detail)
    assert ok, "failing: " + ", ".join(failures)


def test_reduction_equivalences(criterion):
    prng = Prng(2024)
    triples = [(1 + prng.randbelow(8), 1 + prng.randbelow(5), prng.randbelow(1 << 32)) for _ in range(20)]
    failed = [t for t in triples if not reduction_check(*t)]
    ok = criterion(3, "reduction equivalences", not failed,
                   f"{20 - len(failed)}/20 random (n, L, seed) triples bitwise equal")
    assert ok, failed


SEEDS = range(5)
VARIANTS = {
    "plain": dict(layer_kind="plain"),
    "highway": dict(),
    "transform-only": dict(carry_mode="fixed-zero"),
    "carry-only": dict(transform_mode="fixed-one"),
}


@pytest.fixture(scope="module")
def convergence_runs():
    """Epoch reports for every variant and seed on the synthetic task."""
    runs = {}
    cfg_base = dict(learning_rate=0.1, batch_size=128, num_epochs=20)
    for seed in SEEDS:
        train, valid = generate_train_valid(50, 20, 20000, 4000, 10.0, 0.3, seed)
        tr = (splice(train, 3), train.labels)
        va = (splice(valid, 3), valid.labels)
        for name, kw in VARIANTS.items():
            arch = ArchSpec(tr[0].shape[1], 32, 8, 50, activation="sigmoid", **kw)
            reports, _ = run_training(arch, tr, va, TrainConfig(seed=seed, **cfg_base))
            runs[name, seed] = reports
    return runs


def test_convergence_ordering(criterion, convergence_runs):
    fer_wins = sum(
        convergence_runs["highway", s][19].valid_fer < convergence_runs["plain", s][19].valid_fer for s in SEEDS
    )
    ce_wins = sum(
        convergence_runs["highway", s][4].train_ce < convergence_runs["plain", s][4].train_ce for s in SEEDS
    )
    fers = ", ".join(
        f"{convergence_runs['highway', s][19].valid_fer:.4f}/{convergence_runs['plain', s][19].valid_fer:.4f}"
        for s in SEEDS
    )
    ok = criterion(4, "convergence ordering", fer_wins >= 4 and ce_wins >= 4,
                   f"epoch-20 FER highway<plain in {fer_wins}/5, epoch-5 train CE highway<plain in {ce_wins}/5 "
                   f"(highway/plain FER: {fers})")
    assert ok


def between_or_close(fer, plain, highway):
    return min(plain, highway) <= fer <= max(plain, highway) or abs(fer - highway) <= 0.01


def test_gate_ablation_ordering(criterion, convergence_runs):
    counts = {}
    for name in ("transform-only", "carry-only"):
        counts[name] = sum(
            between_or_close(
                convergence_runs[name, s][19].valid_fer,
                convergence_runs["plain", s][19].valid_fer,
                convergence_runs["highway", s][19].valid_fer,
            )
            for s in SEEDS
        )
    ok = criterion(5, "gate ablation ordering", all(c >= 3 for c in counts.values()),
                   ", ".join(f"{k} in order for {v}/5 seeds" for k, v in counts.items()))
    assert ok


def test_momentum_schedule(criterion):
    arch = ArchSpec(1, 1, 1, 1, layer_kind="plain")
    params = init_params(arch, 0)
    for _, a in params.named_arrays():
        a[...] = 1.0
    grads = params.copy()
    velocity = init_velocity(params)
    sgd_step(params, grads, velocity, 0.1, momentum_for_epoch(1))
    after_one = float(params.out_w[0, 0])
    sgd_step(params, grads, velocity, 0.1, momentum_for_epoch(2))
    after_two = float(params.out_w[0, 0])
    ok = criterion(6, "momentum schedule", after_one == 0.9 and after_two == 0.71,
                   f"theta {after_one!r} after epoch-1 step, {after_two!r} after first epoch-2 step")
    assert ok


def test_cli_determinism(criterion, tmp_path, capsys):
    tr, va = tmp_path / "train.fds", tmp_path / "valid.fds"
    assert main(["generate-data", "--out", str(tr), "--frames", "3000", "--classes", "10", "--dim", "8",
                 "--seed", "5", "--valid-out", str(va), "--valid-frames", "600"]) == 0
    for name in ("a", "b"):
        doc = {"train_data": str(tr), "valid_data": str(va), "output_dir": str(tmp_path / name),
               "hidden_dim": 16, "num_hidden_layers": 4, "num_epochs": 4, "dropout_rate": 0.1, "seed": 7}
        (tmp_path / f"{name}.json").write_text(json.dumps(doc))
        assert main(["train", "--config", str(tmp_path / f"{name}.json")]) == 0
    capsys.readouterr()

    def log_rows(name):
        return [line.rsplit(",", 1)[0] for line in (tmp_path / name / "log.csv").read_text().splitlines()]

    same_log = log_rows("a") == log_rows("b")
    same_ckpt = (tmp_path / "a/final.hwnn").read_bytes() == (tmp_path / "b/final.hwnn").read_bytes()
    ok = criterion(7, "determinism", same_log and same_ckpt,
                   f"log.csv without seconds {'identical' if same_log else 'DIFFERS'}, "
                   f"checkpoint {'identical' if same_ckpt else 'DIFFERS'}")
    assert ok


def test_codec_round_trips(criterion):
    golden = (
        b"FDS1" + struct.pack("<IIII", 2, 2, 3, 1) + struct.pack("<I", 2)
        + struct.pack("<4f", 1.5, -2.0, 0.25, 8.0) + struct.pack("<2I", 2, 0)
    )
    ds = decode_dataset(golden)
    golden_ok = (
        ds.features.tolist() == [[1.5, -2.0], [0.25, 8.0]]
        and ds.labels.tolist() == [2, 0]
        and encode_dataset(ds) == golden
    )
    synth = generate_synthetic(7, 5, 2000, seed=3)
    fds_ok = decode_dataset(encode_dataset(synth)).equals(synth)
    odd = FrameDataset(np.array([[np.float32(1e-40)], [-0.0]], dtype=np.float64), [0, 1], [1, 1], 2)
    fds_ok &= encode_dataset(decode_dataset(encode_dataset(odd))) == encode_dataset(odd)
    ckpt_ok = True
    for arch in (ArchSpec(9, 4, 3, 5), ArchSpec(9, 4, 2, 5, layer_kind="residual", dropout_rate=0.3)):
        params = init_params(arch, 1)
        buf = encode_checkpoint(arch, params)
        arch2, params2 = decode_checkpoint(buf)
        ckpt_ok &= arch2 == arch and params2.equals(params) and encode_checkpoint(arch2, params2) == buf
    ok = criterion(8, "codec round trips", golden_ok and fds_ok and ckpt_ok,
                   f"golden FDS1 {golden_ok}, FDS1 round trip {fds_ok}, HWNN round trip {ckpt_ok}")
    assert ok
