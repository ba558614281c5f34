import json
import math

import numpy as np
import pytest

from alfem import harness as hs
from alfem.fem import stiffness_matrix, transfer
from alfem.mesh import refine_red

SMALL = {"levels": [2, 4], "coefficient": {"kind": "checkerboard", "cells": 2, "low": 1.0, "high": 10.0}}


@pytest.fixture(scope="module")
def small_report():
    return hs.run_convergence(hs.RunConfig.from_dict(SMALL))


def test_csv_columns_and_empty_report():
    assert hs.report_csv(hs.ConvergenceReport()) == "H,N,dim_al,dim_fine,err_al,err_p1,rate_al\n"


def test_report_rows(small_report):
    rows = small_report.rows
    assert [r["N"] for r in rows] == [9, 25]
    assert rows[0]["rate_al"] is None
    expect = math.log(rows[0]["err_al"] / rows[1]["err_al"]) / math.log(rows[0]["H"] / rows[1]["H"])
    assert rows[1]["rate_al"] == expect
    assert rows[0]["dim_fine"] == (2 * 2 ** 3 - 1) ** 2
    meta = small_report.metadata
    assert meta["monotone"] and meta["config_hash"] == hs.RunConfig.from_dict(SMALL).problem_hash()
    for d in meta["levels"]:
        assert d["far_bound_ok"] and d["fine_depth"] == d["t"] + 2


def test_csv_and_json_round_trip(tmp_path, small_report):
    hs.emit(small_report, tmp_path / "r.csv", tmp_path / "r.json")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == ",".join(hs.CSV_COLUMNS)
    assert len(lines) == 3
    again = hs.load_report(tmp_path / "r.json")
    assert again.to_dict() == json.loads(json.dumps(small_report.to_dict()))
    assert hs.report_csv(again) == hs.report_csv(small_report)


def test_deterministic_csv(small_report):
    hs._REFERENCE_CACHE.clear()
    again = hs.run_convergence(hs.RunConfig.from_dict(SMALL))
    assert hs.report_csv(again) == hs.report_csv(small_report)


def test_constant_coefficient_sanity():
    # AL is never markedly worse than coarse P1; here it is in fact much better
    rep = hs.run_convergence(hs.RunConfig(levels=(2, 4), f={"kind": "sin_sin"}))
    for row in rep.rows:
        assert row["err_al"] <= 2 * row["err_p1"]


def test_config_validation(tmp_path):
    with pytest.raises(ValueError, match="unknown config keys"):
        hs.RunConfig.from_dict({"levels": [2], "bogus": 1})
    with pytest.raises(ValueError):
        hs.RunConfig(levels=(4, 2))
    with pytest.raises(ValueError):
        hs.RunConfig(fine_depth_offset=1)
    with pytest.raises(ValueError):
        hs.RunConfig(csv=str(tmp_path / "missing" / "x.csv"))
    with pytest.raises(ValueError):
        hs.RunConfig(snapshot_method="magic")
    path = tmp_path / "c.json"
    path.write_text(json.dumps(SMALL))
    cfg = hs.RunConfig.load(path)
    assert cfg.levels == (2, 4)
    assert hs.RunConfig.from_dict(cfg.to_dict()) == cfg


def test_fine_depth_follows_ring_refinement():
    cfg = hs.RunConfig()
    assert [cfg.natural_t(n) for n in (4, 8, 16)] == [2, 3, 4]
    assert [cfg.fine_depth(n) for n in (4, 8, 16)] == [4, 5, 6]


def test_rhs_specs():
    assert hs.make_rhs(2) == 2.0
    assert hs.make_rhs({"kind": "constant", "value": 3}) == 3.0
    g = hs.make_rhs({"kind": "sin_cos"})
    assert g(0.5, 0.25) == pytest.approx(math.sin(1.5) * math.cos(0.5))
    with pytest.raises(ValueError):
        hs.make_rhs({"kind": "nope"})


def test_reference_zero_load():
    ref = hs.reference_solution(hs.RunConfig(levels=(2,), f=0.0))
    assert not np.any(ref.values)


def test_reference_cache_bit_identical(tmp_path):
    cfg = hs.RunConfig(levels=(2,), cache_dir=str(tmp_path))
    hs._REFERENCE_CACHE.clear()
    a = hs.reference_solution(cfg).values.copy()
    assert list(tmp_path.iterdir())
    hs._REFERENCE_CACHE.clear()
    b = hs.reference_solution(cfg).values
    assert a.tobytes() == b.tobytes()
    assert hs.reference_solution(cfg).values is b


def test_reference_resource_cap():
    with pytest.raises(hs.ResourceLimitError) as err:
        hs.reference_solution(hs.RunConfig(levels=(4,), max_reference_dofs=100))
    assert err.value.required == (4 * 2 ** 5 - 1) ** 2


def test_reference_manufactured_rate():
    exact = lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y)
    errs, hs_ = [], []
    for n in (1, 2, 4):
        ref = hs.reference_solution(hs.RunConfig(levels=(n,), f={"kind": "sin_sin"}))
        finer = refine_red(ref.mesh, 1)
        e = transfer(ref.values, ref.mesh, 1) - exact(*finer.vertices.T)
        errs.append(math.sqrt(e @ stiffness_matrix(finer) @ e))
        hs_.append(ref.mesh.h)
    rates = [math.log(errs[i] / errs[i + 1]) / math.log(hs_[i] / hs_[i + 1]) for i in range(2)]
    assert all(0.9 <= r <= 1.1 for r in rates)


def test_transfer_to_reference_is_exact():
    cfg = hs.RunConfig(levels=(2, 4))
    ref = hs.reference_solution(cfg)
    coarse = cfg.coarse_mesh(2)
    v = 1 + 2 * coarse.vertices[:, 0] - coarse.vertices[:, 1]
    gap = int(round(math.log2(ref.resolution / 2)))
    out = hs.to_reference(v, coarse, gap, ref, cfg.domain)
    x, y = ref.mesh.vertices.T
    np.testing.assert_allclose(out, 1 + 2 * x - y, atol=1e-13)


def test_t_override_recorded():
    cfg = hs.RunConfig(levels=(2,), t_override=0)
    ref = hs.reference_solution(cfg)
    out = hs.run_level(cfg, 2, ref)
    assert out["detail"]["t"] == 0
    assert out["detail"]["fine_depth"] == cfg.fine_depth(2)
