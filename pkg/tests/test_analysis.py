import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ardvae import analysis
from ardvae.analysis import (RelevanceReport, RunMetrics, dequantize, dump_reconstruction, quantize, read_metrics,
                             read_pgm, relevance_report, retained_dims, weight_col_sq_norms, write_metrics,
                             write_pgm)
from ardvae.models import Variant, build_model
from ardvae.numerics import RngStream


def test_weight_norms_of_first_decoder_matrix():
    st_ = build_model("sgvb", 5, 3, [4], RngStream(0))
    st_.decoder.hidden[0].W[...] = [[1, 0, 2], [0, 0, 1], [3, 0, 0], [0, 0, 0]]
    np.testing.assert_array_equal(weight_col_sq_norms(st_.decoder), [10.0, 0.0, 5.0])


def test_weight_norms_without_hidden_layer():
    st_ = build_model("sgvb", 2, 2, [], RngStream(0))
    st_.decoder.head_mean.W[...] = [[1, 2], [3, 4]]
    np.testing.assert_array_equal(weight_col_sq_norms(st_.decoder), [10.0, 20.0])


def test_retained_dims_threshold():
    count, flags = retained_dims([1.0, 0.5, 0.009, 0.011, 0.0])
    assert count == 3
    assert flags.tolist() == [True, True, False, True, False]
    assert retained_dims([0.0, 0.0])[0] == 0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 1e6), min_size=1, max_size=20), st.floats(1e-3, 1e3), st.randoms())
def test_retained_dims_is_scale_and_permutation_invariant(vals, scale, rnd):
    vals = np.array(vals)
    count, flags = retained_dims(vals)
    assert retained_dims(vals * scale)[0] == count
    perm = list(range(len(vals)))
    rnd.shuffle(perm)
    c2, f2 = retained_dims(vals[perm])
    assert c2 == count and f2.tolist() == flags[perm].tolist()


def test_sgvb_report_forces_weight_rule():
    st_ = build_model("sgvb", 6, 3, [8], RngStream(0))
    rep = relevance_report(st_, "ard_mass")
    assert rep.rule == "weight_norm"
    assert all(d.mu_tau is None and d.lam is None for d in rep.dims)
    assert rep.retained_count == analysis.retained_count(st_, "weight_norm")


def test_report_round_trip():
    st_ = build_model("sgvb_ard", 6, 4, [8], RngStream(0))
    st_.ard.mu_tau[...] = [1.0, 0.0, 0.3, 1e-4]
    st_.ard.log_var_tau[...] = [0.0, -20.0, -1.0, -25.0]
    rep = relevance_report(st_)
    back = RelevanceReport.loads(rep.dumps())
    assert back == rep
    assert rep.retained_count == 2
    assert "retained 2 of 4" in rep.table()


def test_pgm_round_trip(tmp_path):
    img = RngStream(0).uniform((7, 5))
    write_pgm(tmp_path / "a.pgm", quantize(img, 0.0, 1.0))
    raw = (tmp_path / "a.pgm").read_bytes()
    assert raw.startswith(b"P5\n5 7\n255\n")
    back = dequantize(read_pgm(tmp_path / "a.pgm"), 0.0, 1.0)
    assert np.max(np.abs(back - img)) <= 1 / 255


def test_dump_reconstruction_writes_three_images(tmp_path):
    st_ = build_model("sgvb_ard", 20, 3, [8], RngStream(0))
    x = RngStream(1).uniform(20)
    paths = dump_reconstruction(st_, x, (4, 5), tmp_path / "rec", value_range=(0.0, 1.0))
    for suffix in ("original", "mean", "std"):
        assert read_pgm(tmp_path / f"rec_{suffix}.pgm").shape == (4, 5)
    assert len(paths) == 3
    with pytest.raises(ValueError):
        dump_reconstruction(st_, x, (3, 5), tmp_path / "bad")


def _row(i, test=None):
    return RunMetrics(i, 0, -1.5 * i, -1.0, 0.25, 0.125, -0.1, test, 3, 2.0, 0, 0.01 * i)


def test_metrics_header_only(tmp_path):
    assert write_metrics([], tmp_path / "m.csv") == 0
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines == [",".join(analysis.METRIC_FIELDS)]


def test_metrics_round_trip(tmp_path):
    rows = [_row(1), _row(2, -3.25), _row(3)]
    assert write_metrics(rows, tmp_path / "m.csv") == 3
    assert len((tmp_path / "m.csv").read_text().splitlines()) == 4
    assert read_metrics(tmp_path / "m.csv") == rows


def test_metrics_reject_non_increasing(tmp_path):
    with pytest.raises(ValueError):
        write_metrics([_row(2), _row(2)], tmp_path / "m.csv")


def test_nonincreasing_after_warmup():
    assert analysis.is_nonincreasing_after([5, 9, 8, 8, 7, 7, 6, 6, 6, 6])
    assert not analysis.is_nonincreasing_after([5, 5, 5, 4, 4, 5, 4, 4, 4, 4])
