"""Exporter tests: the emitted files must satisfy the fitting toolkit's
strict reader, including the cross-component tap identity."""

import json

import numpy as np
import pytest
from PIL import Image

import spandmd  # the primary package is the contract checker
from spandmd_exporter.cli import main
from spandmd_exporter.export import ExportSpec, capture_span, export_span
from spandmd_exporter.models import build_tiny_vit, resolve_model
from spandmd_exporter.preprocess import load_image_batch, preprocessing_hash


@pytest.fixture(scope="module")
def image_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("images")
    rng = np.random.default_rng(0)
    for idx in range(6):
        arr = rng.integers(0, 255, size=(300, 280, 3), dtype=np.uint8)
        Image.fromarray(arr).save(root / f"img_{idx:03d}.png")
    return root


def make_spec(image_dir, out, **overrides):
    base = dict(model_id="tiny-test", cut_start=2, prune_length=2,
                n_images=4, image_dir=str(image_dir), out_path=str(out))
    base.update(overrides)
    return ExportSpec(**base)


class TestPreprocessing:
    def test_batch_shape_and_order(self, image_dir):
        batch, paths = load_image_batch(image_dir, 4)
        assert batch.shape == (4, 3, 224, 224)
        assert [p.name for p in paths] == [f"img_{i:03d}.png" for i in range(4)]

    def test_too_few_images(self, image_dir):
        with pytest.raises(ValueError):
            load_image_batch(image_dir, 100)

    def test_preprocessing_hash_stable(self):
        assert preprocessing_hash() == preprocessing_hash()


class TestExport:
    def test_strict_reader_accepts_export(self, image_dir, tmp_path):
        spec = make_spec(image_dir, tmp_path / "span.sdms")
        manifest = export_span(spec)
        span = spandmd.read_span(tmp_path / "span.sdms")  # strict mode validates
        assert span.dims.i == 2 and span.dims.p == 2
        assert span.dims.d == 32 and span.dims.t_kept == 17  # 1 cls + 16 patches
        assert span.has_taps
        assert manifest["dims"]["t_kept"] == 17
        assert manifest["taps_present"] is True

    def test_tap_identity_on_file(self, image_dir, tmp_path):
        spec = make_spec(image_dir, tmp_path / "span.sdms")
        export_span(spec)
        span = spandmd.read_span(tmp_path / "span.sdms")
        resid = span.states[0] - span.anchor
        err = np.abs(resid - span.mlp_tap).max()
        assert err <= 1e-4 * max(np.abs(span.mlp_tap).max(), 1e-12)

    def test_deterministic_bytes(self, image_dir, tmp_path):
        export_span(make_spec(image_dir, tmp_path / "a.sdms"))
        export_span(make_spec(image_dir, tmp_path / "b.sdms"))
        assert (tmp_path / "a.sdms").read_bytes() == (tmp_path / "b.sdms").read_bytes()

    def test_cut_zero_has_no_taps(self, image_dir, tmp_path):
        export_span(make_spec(image_dir, tmp_path / "z.sdms", cut_start=0))
        span = spandmd.read_span(tmp_path / "z.sdms")
        assert span.anchor is None and span.mlp_tap is None

    def test_p_zero_rejected(self, image_dir, tmp_path):
        with pytest.raises(ValueError):
            make_spec(image_dir, tmp_path / "x.sdms", prune_length=0)

    def test_depth_overflow_rejected(self, image_dir, tmp_path):
        with pytest.raises(ValueError, match="overruns"):
            export_span(make_spec(image_dir, tmp_path / "x.sdms",
                                  cut_start=5, prune_length=5))

    def test_missing_layerscale_warns_and_exports(self, image_dir, tmp_path):
        spec = make_spec(image_dir, tmp_path / "nols.sdms", model_id="tiny-test-no-ls")
        with pytest.warns(UserWarning, match="folding is the identity"):
            export_span(spec)
        span = spandmd.read_span(tmp_path / "nols.sdms")
        assert span.has_taps

    def test_batched_capture_matches_single_batch(self, image_dir, tmp_path):
        handle = resolve_model("tiny-test")
        batch, _ = load_image_batch(image_dir, 4)
        one, a1, m1 = capture_span(handle, batch, i=2, p=2, batch_size=4)
        two, a2, m2 = capture_span(handle, batch, i=2, p=2, batch_size=2)
        for x, y in zip(one, two):
            assert np.array_equal(x, y)
        assert np.array_equal(a1, a2) and np.array_equal(m1, m2)

    def test_fitting_on_exported_file(self, image_dir, tmp_path):
        # end-to-end contract: exported files feed the toolkit directly
        export_span(make_spec(image_dir, tmp_path / "span.sdms"))
        span = spandmd.read_span(tmp_path / "span.sdms")
        op = spandmd.fit_operator(span, spandmd.FitConfig(formulation="anchored"))
        pred = spandmd.predict(op, span, span.dims.p)
        record = spandmd.evaluate(pred, span.states[-1])
        assert np.isfinite(record.cos) and record.rel_l2 < 1.0


class TestTinyModel:
    def test_seeded_build_is_deterministic(self):
        a = build_tiny_vit(seed=3)
        b = build_tiny_vit(seed=3)
        pa = dict(a.model.named_parameters())
        pb = dict(b.model.named_parameters())
        assert all(bool((pa[k] == pb[k]).all()) for k in pa)

    def test_unknown_model_rejected(self):
        with pytest.raises(ValueError, match="unknown model"):
            resolve_model("made-up-model")


class TestCli:
    def test_export_command(self, image_dir, tmp_path, capsys):
        code = main(["export", "--model", "tiny-test", "--cut", "1", "--p", "2",
                     "--images", str(image_dir), "--n", "3",
                     "--out", str(tmp_path / "cli.sdms")])
        assert code == 0
        manifest = json.loads(capsys.readouterr().out)
        assert manifest["dims"]["B"] == 3
        span = spandmd.read_span(tmp_path / "cli.sdms")
        assert span.dims.B == 3
        assert (tmp_path / "cli.manifest.json").exists()

    def test_invalid_p_exits_3(self, image_dir, tmp_path, capsys):
        code = main(["export", "--model", "tiny-test", "--cut", "1", "--p", "0",
                     "--images", str(image_dir), "--n", "2",
                     "--out", str(tmp_path / "x.sdms")])
        assert code == 3
