"""Acceptance suite: one test per criterion, one printed line per result.

Run with `pytest tests/test_acceptance.py -v -s`. Finite-difference checks
use the pinned step 1e-4 in float64; coordinates whose +/-h evaluations
straddle a ReLU kink are resampled (central differences are not a
derivative estimate across a kink; the validity check uses forward
activations only, see conftest).
"""

import json
import time

import numpy as np
import pytest

from conftest import PROBE_PARAM_NAMES, fd_probe_param_check, relative_error
from trackprobe.cli import main as cli_main
from trackprobe.grids import Grid2D
from trackprobe.optim import (
    OptimConfig,
    adapt_batch_loss_and_grads,
    build_adapt_samples,
    build_probe_dataset,
    evaluate_adaptation,
    evaluate_probe,
    evaluate_zero_shot,
    train_adaptation,
    train_probe,
)
from trackprobe.probe import ProbeSample, probe_init, probe_loss_and_grad
from trackprobe.synthetic import ImageSyntheticConfig, SyntheticConfig, synth_generate, synth_image_videos
from trackprobe.vit import ViTConfig, adapter_param_count, init_lora_vit, merged_base, vit_backward, vit_forward

FD_STEP = 1e-4
FD_TOL = 1e-4

_FIDELITY_ELAPSED = {}


def report(name, ok, detail=""):
    print(f"\n[{'PASS' if ok else 'FAIL'}] {name}" + (f" ({detail})" if detail else ""))
    assert ok, f"{name}: {detail}"


class TestGradientFidelity:
    def test_probe_gradients_vs_central_differences(self):
        t0 = time.time()
        instances = 0
        seed = 0
        worst = 0.0
        while instances < 20:
            seed += 1
            rng = np.random.default_rng(seed)
            params = probe_init(seed)
            batch = []
            for _ in range(3):
                batch.append(ProbeSample(cmap=rng.uniform(-1, 1, (8, 8)),
                                         target_point=tuple(rng.uniform(0, 7, 2)),
                                         occluded=bool(rng.random() < 0.3)))
            if all(s.occluded for s in batch):
                batch[0] = ProbeSample(batch[0].cmap, batch[0].target_point, False)
            cmaps = np.stack([s.cmap for s in batch])

            def loss_fn(p):
                return probe_loss_and_grad(batch, p)

            result = fd_probe_param_check(cmaps, loss_fn, params, rng,
                                          step=FD_STEP, tol=FD_TOL)
            if result is None:
                continue  # instance too kink-dense for a valid FD probe
            worst = max(worst, result)
            instances += 1
        _FIDELITY_ELAPSED["probe"] = time.time() - t0
        report("gradient fidelity: probe vs central differences (step 1e-4)",
               worst <= FD_TOL,
               f"20 instances, worst rel err {worst:.2e}, {_FIDELITY_ELAPSED['probe']:.0f}s")

    def test_vit_lora_gradients_vs_central_differences(self):
        t0 = time.time()
        worst = 0.0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            cfg = ViTConfig(patch_size=8, embed_dim=32, num_heads=4,
                            num_blocks=2 + seed % 2, input_resolution=32)
            params = init_lora_vit(cfg, rank=4, seed=seed)
            for ad in params.adapters:
                ad.up_q[:] = rng.normal(0, 0.02, ad.up_q.shape)
                ad.up_v[:] = rng.normal(0, 0.02, ad.up_v.shape)
            image = Grid2D(rng.uniform(0, 1, (3, 32, 32)))
            out, cache = vit_forward(image, params, want_cache=True)
            upstream = rng.standard_normal(out.data.shape)
            grads = vit_backward(upstream, params, cache)

            def loss():
                return float(np.sum(vit_forward(image, params).data * upstream))

            for i in range(cfg.num_blocks):
                for name in ("down_q", "up_q", "down_v", "up_v"):
                    arr = getattr(params.adapters[i], name)
                    for _ in range(2):
                        idx = tuple(rng.integers(0, s) for s in arr.shape)
                        orig = arr[idx]
                        arr[idx] = orig + FD_STEP
                        lp = loss()
                        arr[idx] = orig - FD_STEP
                        lm = loss()
                        arr[idx] = orig
                        fd = (lp - lm) / (2 * FD_STEP)
                        worst = max(worst, relative_error(fd, float(grads[f"adapters.{i}.{name}"][idx])))
        _FIDELITY_ELAPSED["vit"] = time.time() - t0
        report("gradient fidelity: toy-ViT LoRA adapters vs central differences",
               worst <= FD_TOL,
               f"20 instances, worst rel err {worst:.2e}, {_FIDELITY_ELAPSED['vit']:.0f}s")

    def test_combined_runtime_budget(self):
        assert set(_FIDELITY_ELAPSED) == {"probe", "vit"}, "fidelity tests must run first"
        elapsed = sum(_FIDELITY_ELAPSED.values())
        report("gradient fidelity runtime < 2 minutes", elapsed < 120.0,
               f"{elapsed:.0f}s combined")


class TestLoRAIdentityAndMerge:
    def test_zero_init_identity_and_merged_forward(self):
        cfg = ViTConfig(patch_size=8, embed_dim=64, num_heads=4, num_blocks=2,
                        input_resolution=32)
        rng = np.random.default_rng(0)
        image = Grid2D(rng.uniform(0, 1, (3, 32, 32)))

        identity_exact = True
        merge_worst = 0.0
        for rank in (16, 32, 64):
            params = init_lora_vit(cfg, rank=rank, seed=rank)
            base_only = params.copy()
            for ad in base_only.adapters:
                ad.down_q[:] = 0.0
                ad.down_v[:] = 0.0
            identity_exact &= np.array_equal(vit_forward(image, params).data,
                                             vit_forward(image, base_only).data)
            for ad in params.adapters:
                ad.up_q[:] = rng.normal(0, 0.02, ad.up_q.shape)
                ad.up_v[:] = rng.normal(0, 0.02, ad.up_v.shape)
            diff = np.abs(vit_forward(image, params).data
                          - vit_forward(image, merged_base(params)).data).max()
            merge_worst = max(merge_worst, float(diff))
        report("LoRA zero-init identity is exact", identity_exact)
        report("merged-weight forward matches adapter path (ranks 16/32/64)",
               merge_worst <= 1e-6, f"max abs diff {merge_worst:.2e}")


class TestZeroShotOracle:
    def test_cmd_eval_zeroshot_oracle_and_noise(self, tmp_path):
        t0 = time.time()
        synth = {"num_videos": 100, "num_frames": 24, "tracks_per_video": 8,
                 "grid_h": 32, "grid_w": 32}
        cfg_path = tmp_path / "synth.json"
        cfg_path.write_text(json.dumps(synth))
        data = tmp_path / "data"
        assert cli_main(["gen-synth", "--config", str(cfg_path), "--seed", "11",
                         "--out", str(data)]) == 0
        out = tmp_path / "zs"
        assert cli_main(["eval-zeroshot", "--features", str(data),
                         "--out", str(out)]) == 0
        delta = json.loads((out / "report.json").read_text())["delta_avg"]
        report("zero-shot oracle: noise-free delta_avg = 1.000 exactly",
               delta == 1.0, f"delta_avg {delta}")

        cfg_path.write_text(json.dumps({**synth, "noise_level": 0.5}))
        noisy = tmp_path / "noisy"
        assert cli_main(["gen-synth", "--config", str(cfg_path), "--seed", "12",
                         "--out", str(noisy)]) == 0
        out2 = tmp_path / "zs-noisy"
        assert cli_main(["eval-zeroshot", "--features", str(noisy),
                         "--out", str(out2)]) == 0
        delta_noisy = json.loads((out2 / "report.json").read_text())["delta_avg"]
        elapsed = time.time() - t0
        report("zero-shot oracle: noise 0.5 delta_avg >= 0.95",
               delta_noisy >= 0.95, f"delta_avg {delta_noisy:.4f}")
        report("zero-shot oracle runtime < 1 minute", elapsed < 60.0, f"{elapsed:.0f}s")


class TestMetricOracleEquivalence:
    def test_thousand_randomized_micro_instances(self):
        from conftest_metrics import brute_force_metrics, random_micro_tracks
        from trackprobe.metrics import average_jaccard, delta_avg, occlusion_accuracy

        rng = np.random.default_rng(2024)
        worst = 0.0
        monotone = True
        for _ in range(1000):
            tracks = random_micro_tracks(rng)
            d_avg, per = delta_avg(tracks)
            oa = occlusion_accuracy(tracks)
            aj = average_jaccard(tracks)
            ref_d, ref_oa, ref_aj = brute_force_metrics(tracks)
            worst = max(worst, abs(d_avg - ref_d), abs(oa - ref_oa), abs(aj - ref_aj))
            ordered = [per[t] for t in sorted(per)]
            monotone &= all(a <= b for a, b in zip(ordered, ordered[1:]))
        report("metric oracle equivalence on 1000 micro-instances",
               worst == 0.0, f"max abs deviation {worst}")
        report("delta monotone in threshold on all instances", monotone)


PROBE_BENCH = dict(num_frames=12, tracks_per_video=8, grid_h=8, grid_w=8,
                   stride=32, feature_dim=32, noise_level=0.25,
                   occlusion_rate=0.2, quantize_cells=False)
PROBE_OPTIM = dict(lr_peak=7e-3, epochs=20, batch_size=16, weight_decay=1e-3,
                   occ_weight=1.5, seed=0)


class TestProbingImprovesOverZeroShot:
    def test_probe_training_run(self):
        t0 = time.time()
        tr_v, tr_a = synth_generate(SyntheticConfig(num_videos=24, seed=101, **PROBE_BENCH))
        va_v, va_a = synth_generate(SyntheticConfig(num_videos=8, seed=202, **PROBE_BENCH))
        zero_shot = evaluate_zero_shot(va_v, va_a)
        params, history = train_probe(build_probe_dataset(tr_v, tr_a), [],
                                      OptimConfig(**PROBE_OPTIM))
        probe_report = evaluate_probe(params, build_probe_dataset(va_v, va_a))
        gain = (probe_report.delta_avg - zero_shot.delta_avg) * 100
        loss_ratio = history[-1]["train_loss"] / history[0]["train_loss"]
        detail = (f"zs {zero_shot.delta_avg:.3f} -> probe {probe_report.delta_avg:.3f} "
                  f"(+{gain:.1f} pts), OA {probe_report.oa:.3f}, "
                  f"loss x{loss_ratio:.3f}, {time.time() - t0:.0f}s")
        report("probing raises delta_avg by >= 5 points over zero-shot (20 epochs)",
               gain >= 5.0, detail)
        report("probing reaches OA >= 0.90", probe_report.oa >= 0.90, detail)
        report("probing final training loss < 0.5x initial", loss_ratio < 0.5, detail)


ADAPT_IMAGES = dict(num_frames=6, tracks_per_video=4, image_size=64,
                    blob_amplitude=0.6, clutter_blobs=12, clutter_amplitude=0.8,
                    pixel_noise=0.1, occlusion_rate=0.15)
ADAPT_VIT = ViTConfig(patch_size=8, embed_dim=64, num_heads=4, num_blocks=4,
                      input_resolution=64)
ADAPT_OPTIM = dict(lr_peak=1e-3, epochs=40, batch_size=16, weight_decay=1e-5, seed=0)


class TestAdaptationImprovesOverProbing:
    def test_lora_adaptation_run(self):
        t0 = time.time()
        tr_v, tr_a = synth_image_videos(ImageSyntheticConfig(num_videos=12, seed=1, **ADAPT_IMAGES))
        va_v, va_a = synth_image_videos(ImageSyntheticConfig(num_videos=6, seed=2, **ADAPT_IMAGES))
        optim = OptimConfig(**ADAPT_OPTIM)

        frozen = train_adaptation(tr_v, tr_a, [], [], optim, rank=16,
                                  vit_config=ADAPT_VIT, train_adapters=False)
        frozen_rep = evaluate_adaptation(frozen.vit_params, frozen.probe_params, va_v, va_a)

        adapted = train_adaptation(tr_v, tr_a, [], [], optim, rank=16,
                                   vit_config=ADAPT_VIT)
        adapted_rep = evaluate_adaptation(adapted.vit_params, adapted.probe_params, va_v, va_a)

        init = init_lora_vit(ADAPT_VIT, rank=16, seed=optim.seed)
        frozen_ok = all(np.array_equal(a, b) for a, b in
                        zip(init.base_dict().values(),
                            adapted.vit_params.base_dict().values()))
        gain = (adapted_rep.delta_avg - frozen_rep.delta_avg) * 100
        detail = (f"frozen {frozen_rep.delta_avg:.3f} -> adapted {adapted_rep.delta_avg:.3f} "
                  f"(+{gain:.1f} pts), {time.time() - t0:.0f}s")
        report("rank-16 adaptation raises val delta_avg by >= 10 points over probe-only",
               gain >= 10.0, detail)
        report("base ViT weights bit-identical after adaptation training", frozen_ok)
        ratio = adapter_param_count(ADAPT_VIT, 64) / adapter_param_count(ADAPT_VIT, 16)
        report("rank-64 learnable adapter parameters = 4x rank-16",
               ratio == 4.0, f"ratio {ratio}")


class TestDeterminism:
    def test_training_and_evaluation_bit_identical(self, tmp_path):
        synth = {"num_videos": 4, "num_frames": 6, "tracks_per_video": 4,
                 "grid_h": 8, "grid_w": 8, "feature_dim": 16, "stride": 32,
                 "noise_level": 0.3, "occlusion_rate": 0.2, "quantize_cells": False}
        synth_path = tmp_path / "synth.json"
        synth_path.write_text(json.dumps(synth))
        optim_path = tmp_path / "optim.json"
        optim_path.write_text(json.dumps({"epochs": 2, "batch_size": 4}))
        img_path = tmp_path / "img.json"
        img_path.write_text(json.dumps({"kind": "images", "num_videos": 3,
                                        "num_frames": 3, "tracks_per_video": 2,
                                        "image_size": 32, "margin": 5.0}))
        adapt_optim = tmp_path / "aoptim.json"
        adapt_optim.write_text(json.dumps({"epochs": 2, "batch_size": 4,
                                           "vit": {"patch_size": 8, "embed_dim": 16,
                                                   "num_heads": 2, "num_blocks": 2,
                                                   "mlp_ratio": 2.0}}))

        outputs = {}
        for run in ("a", "b"):
            root = tmp_path / run
            data = root / "data"
            assert cli_main(["gen-synth", "--config", str(synth_path), "--seed", "9",
                             "--out", str(data), "--deterministic"]) == 0
            assert cli_main(["eval-zeroshot", "--features", str(data),
                             "--out", str(root / "zs"), "--deterministic"]) == 0
            assert cli_main(["train-probe", "--features", str(data),
                             "--config", str(optim_path), "--seed", "3",
                             "--out", str(root / "probe"), "--deterministic"]) == 0
            imgdata = root / "imgdata"
            assert cli_main(["gen-synth", "--config", str(img_path), "--seed", "4",
                             "--out", str(imgdata), "--deterministic"]) == 0
            assert cli_main(["train-adapt", "--features", str(imgdata),
                             "--rank", "16", "--config", str(adapt_optim),
                             "--seed", "5", "--out", str(root / "adapt"),
                             "--deterministic"]) == 0
            payload = {}
            for rel in ("data/videos/synth-000.fvid", "data/annotations.json",
                        "zs/report.json", "zs/predictions.json",
                        "probe/probe.ckpt", "probe/history.jsonl",
                        "probe/report.json", "probe/predictions.json",
                        "adapt/lora_vit.ckpt", "adapt/probe.ckpt",
                        "adapt/history.jsonl", "adapt/report.json"):
                payload[rel] = (root / rel).read_bytes()
            outputs[run] = payload

        mismatched = [rel for rel in outputs["a"]
                      if outputs["a"][rel] != outputs["b"][rel]]
        report("determinism: re-runs with the same seed are bit-identical",
               not mismatched, f"mismatched: {mismatched}" if mismatched else "12 files compared")
