import numpy as np
import pytest

import wordprobe as wp


def test_baseline():
    assert wp.format_baseline(wp.random_baseline(26.3)) == "0.038"
    assert wp.format_baseline(wp.random_baseline(35.8)) == "0.027"


def test_segmentation_helpers():
    text, spans = wp.parse_line("ab c def")
    assert text == "abcdef"
    assert spans == [(0, 2), (2, 3), (3, 6)]
    assert wp.bmes("ab c def") == "BESBME"
    assert wp.decode_spans("BESBME") == spans
    p, r, f1 = wp.seg_f1([(0, 1), (1, 3)], [(0, 1), (1, 2), (2, 3)])
    assert (p, r) == pytest.approx((1 / 3, 1 / 2))
    assert f1 == pytest.approx(0.4)


def test_bad_input_raises():
    with pytest.raises(wp.WordprobeError, match="InvalidArgument"):
        wp.decode_spans("BX")
    with pytest.raises(ValueError):
        wp.parse_line("   ")


def test_uniform_attention_statistics():
    n_t = 6
    stats = wp.sentence_stats(np.full((n_t, n_t), 1 / n_t), "ab c d")
    assert list(stats) == wp.pattern_names()
    defined = [v for v in stats.values() if v is not None]
    assert defined
    assert np.allclose(defined, 1 / n_t, atol=1e-6)


def test_cli_pipeline(tmp_path):
    data = tmp_path / "data"
    code, _, err = wp.run_cli(["gen-corpus", "--train-size", "30", "--dev-size", "8", "--test-size", "8",
                               "--out", str(data)])
    assert code == 0, err
    small = ["--layers", "2", "--heads", "2", "--dim", "8", "--max-len", "48"]
    code, _, err = wp.run_cli(["train-mlm", "--corpus", str(data / "train.txt"), "--epochs", "1",
                               "--out", str(tmp_path / "mlm"), *small])
    assert code == 0, err
    ck_dir = tmp_path / "mlm" / "checkpoint"

    ck = wp.Checkpoint.load(str(ck_dir))
    first_line = (data / "test.txt").read_text(encoding="utf-8").splitlines()[0]
    text, _ = wp.parse_line(first_line)
    trace = ck.trace(text)
    n = len(text) + 2
    assert trace["tokens"][0] == "[CLS]" and trace["tokens"][-1] == "[SEP]"
    assert trace["attention"].shape == (ck.layers, ck.heads, n, n)
    assert np.allclose(trace["attention"].sum(-1), 1.0, atol=1e-5)
    assert trace["hidden"].shape == (ck.layers, n, ck.dim)

    code, _, err = wp.run_cli(["dump", "--checkpoint", str(ck_dir), "--corpus", str(data / "test.txt"),
                               "--out", str(tmp_path / "d")])
    assert code == 0, err
    records = wp.read_dump(str(tmp_path / "d" / "dump"))
    assert len(records) == 8
    assert records[0]["text"] == text
    np.testing.assert_array_equal(records[0]["attention"], trace["attention"])


def test_cli_reports_errors():
    code, _, err = wp.run_cli(["stats", "--corpus", "/no/such/file.txt"])
    assert code == 2
    assert "/no/such/file.txt" in err
