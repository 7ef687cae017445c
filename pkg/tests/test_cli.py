import csv

import pytest

from corridor_rl.cli import main


@pytest.mark.slow
def test_cli_train_eval_compare_roundtrip(tmp_path):
    ckpt = tmp_path / "mini.ckpt"
    curve = tmp_path / "curve.csv"
    rc = main(["train", "--mini", "--steps", "8000", "--seed", "3",
               "--checkpoint-out", str(ckpt), "--csv", str(curve)])
    assert rc == 0
    assert ckpt.exists()
    with open(curve) as fh:
        rows = list(csv.DictReader(fh))
    assert rows and int(rows[-1]["sim_steps"]) <= 8000

    out_dir = tmp_path / "eval"
    rc = main(["eval", "--mini", "--controller", "fixed,unsignalized,rl",
               "--scales", "1.0", "--runs", "2", "--seed", "1",
               "--checkpoint", str(ckpt), "--out-dir", str(out_dir)])
    assert rc == 0
    assert (out_dir / "runs.csv").exists()
    assert (out_dir / "aggregate.csv").exists()

    cmp_path = tmp_path / "compare.csv"
    rc = main(["compare", "--in", str(out_dir), "--out", str(cmp_path)])
    assert rc == 0
    with open(cmp_path) as fh:
        rows = list(csv.DictReader(fh))
    metrics = {r["metric"] for r in rows}
    assert "combined_avg_wait_s" in metrics


def test_cli_ingest_wifi(tmp_path):
    logs = tmp_path / "logs.csv"
    day = 24 * 3600
    lines = ["client_id,building_id,timestamp"]
    for c in ("c1", "c2"):
        for d in range(1, 4):
            lines.append(f"{c},A,2021-09-0{d}T08:00:00+00:00")
            lines.append(f"{c},B,2021-09-0{d}T12:00:00+00:00")
            lines.append(f"{c},A,2021-09-0{d}T15:00:00+00:00")
    logs.write_text("\n".join(lines) + "\n")
    out = tmp_path / "od.csv"
    rc = main(["ingest-wifi", "--in", str(logs), "--out", str(out)])
    assert rc == 0
    with open(out) as fh:
        rows = {(r["from_building"], r["to_building"]): int(r["count"])
                for r in csv.DictReader(fh)}
    assert rows[("A", "B")] == 6
    assert rows[("B", "A")] == 6
