import json

import numpy as np
import pytest

from symsweep.cli import main


def _strip_timing(payload):
    if isinstance(payload, dict):
        return {k: _strip_timing(v) for k, v in sorted(payload.items())
                if "seconds" not in k and "per_second" not in k}
    if isinstance(payload, list):
        return [_strip_timing(v) for v in payload]
    return payload


@pytest.fixture()
def nguyen1_csv(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, 20)
    y = x ** 3 + x ** 2 + x
    path = tmp_path / "n1.csv"
    lines = ["x1,y"] + [f"{float(a)!r},{float(b)!r}" for a, b in zip(x, y)]
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def test_fit_writes_front(nguyen1_csv, tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["fit", nguyen1_csv, "--ops", "koza", "--slots", "2",
                 "--layers", "3", "--tmax", "60", "--seed", "0",
                 "--threads", "2", "--out", str(out)])
    assert code == 0
    payload = json.loads((out / "front.json").read_text())
    assert payload["front"]
    best = min(r["mse"] for r in payload["front"] if r["mse"] is not None)
    assert best < 1e-16
    table = capsys.readouterr().out
    assert "expression" in table


def test_fit_constant_target(tmp_path, capsys):
    path = tmp_path / "const.csv"
    rows = ["x1,y"] + [f"{v},2.5" for v in np.linspace(-1, 1, 20)]
    path.write_text("\n".join(rows) + "\n")
    code = main(["fit", str(path), "--ops", "arithmetic", "--slots", "2",
                 "--layers", "1", "--tmax", "20", "--seed", "1",
                 "--out", str(tmp_path)])
    assert code == 0
    payload = json.loads((tmp_path / "front.json").read_text())
    top = min(payload["front"], key=lambda r: (r["mse"] is None, r["mse"]))
    assert top["complexity"] == 0 and top["mse"] < 1e-20


def test_fit_bad_csv_exit_one(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x,x,y\n1,2,3\n")
    assert main(["fit", str(path)]) == 1


def test_usage_error_exit_two(nguyen1_csv):
    with pytest.raises(SystemExit) as err:
        main(["fit", nguyen1_csv, "--drmask", "sideways"])
    assert err.value.code == 2


def test_unknown_bench_set_exit_code(tmp_path):
    assert main(["bench", "NoSuchSet", "--trials", "1",
                 "--out", str(tmp_path)]) == 1


def test_bench_zero_trials_rejected(tmp_path):
    assert main(["bench", "Nguyen", "--trials", "0",
                 "--out", str(tmp_path)]) == 2


def test_config_file_equivalent_to_flags(nguyen1_csv, tmp_path):
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    cfg = {"operator_set": "koza", "n_slots": 2, "n_layers": 3,
           "t_max": 60.0, "seed": 3, "threads": 2}
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    assert main(["fit", nguyen1_csv, "--config", str(cfg_path),
                 "--out", str(out_a)]) == 0
    assert main(["fit", nguyen1_csv, "--ops", "koza", "--slots", "2",
                 "--layers", "3", "--tmax", "60", "--seed", "3",
                 "--threads", "2", "--out", str(out_b)]) == 0
    a = _strip_timing(json.loads((out_a / "front.json").read_text()))
    b = _strip_timing(json.loads((out_b / "front.json").read_text()))
    assert a == b


def test_config_file_unknown_key(nguyen1_csv, tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"frobnicate": 1}))
    assert main(["fit", nguyen1_csv, "--config", str(cfg_path)]) == 2


def test_enumerate_modes_agree(tmp_path):
    args = ["--ops", "arithmetic", "--slots", "2", "--layers", "1",
            "--samples", "50", "--seed", "0", "--out", str(tmp_path)]
    assert main(["enumerate", "--mode", "engine"] + args) == 0
    assert main(["enumerate", "--mode", "naive"] + args) == 0
    eng = json.loads((tmp_path / "enumerate-engine.json").read_text())
    naive = json.loads((tmp_path / "enumerate-naive.json").read_text())
    assert eng["candidates"] == naive["candidates"] == 16
    assert eng["top1_expr"] == naive["top1_expr"]
    assert eng["top1_mse"] == pytest.approx(naive["top1_mse"], rel=1e-12)


def test_enumerate_naive_guard(tmp_path):
    code = main(["enumerate", "--mode", "naive", "--ops", "koza",
                 "--slots", "8", "--layers", "3", "--samples", "10",
                 "--out", str(tmp_path)])
    assert code == 2


def test_estimate_mem_paper_scale(tmp_path, capsys):
    code = main(["estimate-mem", "--ops", "koza", "--slots", "20",
                 "--layers", "3", "--precision", "f32", "--samples", "100",
                 "--out", str(tmp_path)])
    assert code == 0
    payload = json.loads((tmp_path / "estimate-mem.json").read_text())
    assert payload["full_bytes"] > 1e5 * 1e9
    assert payload["streamed_bytes"] < 8e9
    assert payload["streamed_bytes"] <= payload["full_bytes"]


def test_estimate_mem_small(tmp_path):
    code = main(["estimate-mem", "--ops", "koza", "--slots", "1",
                 "--layers", "2", "--samples", "10", "--out", str(tmp_path)])
    assert code == 0
    payload = json.loads((tmp_path / "estimate-mem.json").read_text())
    assert payload["full_bytes"] < 1 << 20


def test_seeded_json_bit_identical(nguyen1_csv, tmp_path):
    outs = []
    for sub in ("r1", "r2"):
        out = tmp_path / sub
        assert main(["fit", nguyen1_csv, "--ops", "koza", "--slots", "2",
                     "--layers", "3", "--tmax", "120", "--seed", "11",
                     "--threads", "2", "--out", str(out)]) == 0
        outs.append(json.dumps(
            _strip_timing(json.loads((out / "front.json").read_text())),
            sort_keys=True))
    assert outs[0] == outs[1]
