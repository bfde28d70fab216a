"""Exporter round trip: mock-mode output feeds the engine cleanly.

Skipped when the TypeScript exporter has not been built (the primary suite
must run without the secondary component).
"""

import json
import shutil
import subprocess
from pathlib import Path

import pytest

from melink.config import TrainConfig
from melink.data import load_dataset
from melink.train import train

EXPORTER_CLI = Path(__file__).parent.parent / "exporter" / "dist" / "cli.js"

pytestmark = pytest.mark.skipif(
    not EXPORTER_CLI.is_file() or shutil.which("node") is None,
    reason="exporter not built (run `tsc -p .` in exporter/) or node missing",
)


@pytest.fixture(scope="module")
def exported(tmp_path_factory):
    """Mock-mode export of 20 samples / 50 entities through the node CLI."""
    root = tmp_path_factory.mktemp("export")
    dump_lines = []
    for i in range(50):
        rec = {"entity_id": f"x{i:03d}", "name": f"subject {i}",
               "type": "person" if i % 2 == 0 else "location"}
        if i % 3 == 0:
            rec["description_text"] = f"long form notes about subject {i}"
        dump_lines.append(json.dumps(rec))
    (root / "dump.jsonl").write_text("\n".join(dump_lines) + "\n")

    manifest = {
        "records": [
            {"sample_id": f"m{k:03d}", "text": f"subject {k % 50} seen outside",
             "mention": f"subject {k % 50}", "image_path": None,
             "gold_entity_id": f"x{k % 50:03d}"}
            for k in range(20)
        ],
        "entity_dump": "dump.jsonl",
        "dims": {"d": 32, "d_obj": 48, "d_face": 32},
        "seed": 17,
    }
    (root / "manifest.json").write_text(json.dumps(manifest))

    out = root / "dataset"
    proc = subprocess.run(
        ["node", str(EXPORTER_CLI), "export", "--manifest",
         str(root / "manifest.json"), "--mode", "mock", "--out", str(out)],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return out


def test_export_passes_loader_validation(exported):
    samples, index, stats = load_dataset(exported)
    assert stats.n_samples == 20
    assert stats.n_entities == 50
    assert stats.dims == {"d": 32, "d_obj": 48, "d_face": 32}
    assert all(s.anps for s in samples)


def test_export_report_sidecar(exported):
    report = json.loads((exported / "export_report.json").read_text())
    assert report["mode"] == "mock"
    assert report["n_records"] == 20
    assert [r["sample_id"] for r in report["records"]] == \
        [f"m{k:03d}" for k in range(20)]


def test_face_prompts_match_primary_builder(exported):
    from melink.encoders import build_face_prompt

    report = json.loads((exported / "export_report.json").read_text())
    checked = 0
    for rec in report["records"]:
        for prompt in rec["face_prompts"]:
            # prompt is "mention, key: value, ..."; rebuild it with the
            # primary's canonical builder and compare byte for byte
            mention, *pairs = prompt.split(", ")
            attrs = dict(p.split(": ", 1) for p in pairs)
            assert build_face_prompt(mention, attrs) == prompt
            checked += 1
    assert checked == 20


def test_fifty_step_training_run_completes(exported, tmp_path):
    cfg = TrainConfig(d=32, d_obj=48, d_face=32, heads=4, n_queries=2,
                      batch_size=8, lr=1e-3, lam=8, seed=1,
                      split_train=0.8, split_dev=0.2,
                      max_steps=50, eval_every_steps=25).validate()
    result = train(cfg, exported, tmp_path / "run")
    assert result.steps == 50
    assert result.final_checkpoint.is_file()
    lines = result.metrics_path.read_text().strip().splitlines()
    assert lines, "training produced no metrics"
