import numpy as np
import pytest

from afalora.experiments import (Arm, TaskSpec, TrainSettings, gain, gain_report, gen_task,
                                 max_workers, placement_sweep, run_arm)

SMALL = TaskSpec(d_in=8, d_hidden=16, d_out=4, n_train=256, n_eval=128)
QUICK = TrainSettings(steps=150, rank=2, alpha=4.0)


class TestGain:
    @pytest.mark.parametrize("args,expected", [
        ((88.32, 87.19, 88.70), 133.6),
        ((92.80, 92.19, 93.10), 149.2),
        ((87.07, 85.57, 86.16), 39.3),
    ])
    def test_reported_values(self, args, expected):
        assert gain(*args) == pytest.approx(expected, abs=0.1)

    def test_endpoints(self):
        assert gain(90.0, 80.0, 80.0) == 0.0
        assert gain(90.0, 80.0, 90.0) == 100.0

    def test_undefined_when_no_gap(self):
        assert gain(1.0, 1.0, 2.0) is None
        assert gain_report(1.0, 1.0 + 1e-12, {"x": 3.0}).undefined

    def test_report(self):
        rep = gain_report(88.32, 87.19, {"a": 88.70, "b": 87.19})
        assert rep.gains["b"] == 0.0 and not rep.undefined


class TestTask:
    def test_deterministic(self):
        a, b = gen_task(SMALL), gen_task(SMALL)
        for name in ("X_train", "y_train", "X_eval", "y_eval"):
            assert getattr(a, name).tobytes() == getattr(b, name).tobytes()

    def test_shapes(self):
        t = gen_task(SMALL)
        assert t.X_train.shape == (256, 8) and t.y_eval.shape == (128, 4)
        assert [W.shape for W, _ in t.base_layers] == [(16, 8), (4, 16)]

    @pytest.mark.parametrize("kw", [dict(n_train=0), dict(n_eval=0), dict(teacher_seed=0),
                                    dict(noise=-1.0), dict(d_in=0)])
    def test_rejected(self, kw):
        with pytest.raises(ValueError):
            TaskSpec(**kw)

    def test_base_differs_from_teacher(self):
        t = gen_task(SMALL)
        assert not np.allclose(t.base_layers[0][0], t.teacher_layers[0][0])

    def test_full_arm_reaches_zero_without_extra_term(self):
        spec = TaskSpec(nonlinearity=0.0, noise=0.0)
        res = run_arm(Arm.full(), gen_task(spec), TrainSettings(), seed=0)
        assert res.final_eval_loss < 1e-4


class TestArms:
    def test_invalid(self):
        with pytest.raises(ValueError):
            Arm(kind="bogus")
        with pytest.raises(ValueError):
            Arm(kind="afa", placement="none")

    def test_score_is_negative_loss(self):
        res = run_arm(Arm.lora(), gen_task(SMALL), QUICK, seed=0)
        assert res.score == -res.final_eval_loss

    def test_reproducible(self):
        task = gen_task(SMALL)
        a = run_arm(Arm.afa("a-sigma-b"), task, QUICK, seed=4)
        b = run_arm(Arm.afa("a-sigma-b"), task, QUICK, seed=4)
        assert a.final_eval_loss == b.final_eval_loss and a.losses == b.losses

    def test_identity_activation_equals_lora(self):
        task = gen_task(SMALL)
        lora = run_arm(Arm.lora(), task, QUICK, seed=1)
        ident = run_arm(Arm.afa("sigma-a-sigma-b-sigma", activation="identity"), task, QUICK, seed=1)
        assert ident.losses == lora.losses

    def test_constant_zero_equals_lora(self):
        task = gen_task(SMALL)
        lora = run_arm(Arm.lora(), task, QUICK, seed=2)
        arm = Arm.afa("a-sigma-b", schedule="constant", constant_beta=0.0)
        assert run_arm(arm, task, QUICK, seed=2).losses == lora.losses

    def test_full_not_worse_than_lora_on_linear_residual(self):
        task = gen_task(TaskSpec(d_in=8, d_hidden=16, d_out=4, n_train=512, n_eval=256,
                                 nonlinearity=0.0))
        settings = TrainSettings(steps=600, rank=2, alpha=4.0)
        full = run_arm(Arm.full(), task, settings, seed=0).final_eval_loss
        lora = run_arm(Arm.lora(), task, settings, seed=0).final_eval_loss
        assert full < lora or abs(full - lora) <= 1e-6

    def test_dora_arms_run(self):
        task = gen_task(SMALL)
        for arm in (Arm(kind="dora"), Arm(kind="afa_dora", placement="a-sigma-b")):
            assert np.isfinite(run_arm(arm, task, QUICK, seed=0).final_eval_loss)


class TestSweep:
    def test_bookkeeping(self):
        from afalora.adapters import AFA_PLACEMENTS
        res = placement_sweep(SMALL, TrainSettings(steps=30, rank=2, alpha=4.0),
                              placements=[p.name for p in AFA_PLACEMENTS], n_seeds=3, workers=1)
        assert len(res.cells) == 7
        assert sum(len(c.results) for c in res.cells) == 21
        assert len(res.full.results) == len(res.lora.results) == 3
        assert res.seeds == [0, 1, 2]
        rows = list(res.rows())
        assert len(rows) == 27 and rows[0]["placement"] == "full"
        for c in res.cells:
            assert [r.seed for r in c.results] == [0, 1, 2]
            assert c.median_loss == sorted(c.losses)[1]

    def test_identity_column_has_zero_gain(self):
        res = placement_sweep(SMALL, TrainSettings(steps=40, rank=2, alpha=4.0),
                              placements=["a-sigma-b", "sigma-a-b-sigma"], activations=["identity"],
                              n_seeds=2, workers=1)
        for c in res.cells:
            assert c.gains == [0.0, 0.0]

    def test_parallel_matches_serial(self, monkeypatch):
        settings = TrainSettings(steps=20, rank=2, alpha=4.0)
        serial = placement_sweep(SMALL, settings, n_seeds=2, workers=1)
        parallel = placement_sweep(SMALL, settings, n_seeds=2, workers=2)
        assert list(serial.rows()) == list(parallel.rows())

    def test_nine_cell_grid(self):
        res = placement_sweep(SMALL, TrainSettings(steps=20, rank=2, alpha=4.0),
                              activations=["relu", "silu", "gelu"], end_fracs=[0.3, 0.6, 1.0],
                              n_seeds=1, workers=1)
        assert {(c.activation, c.end_frac) for c in res.cells} == {
            (a, e) for a in ("relu", "silu", "gelu") for e in (0.3, 0.6, 1.0)}

    def test_dora_sweep_uses_dora_baseline(self):
        res = placement_sweep(SMALL, TrainSettings(steps=20, rank=2, alpha=4.0), n_seeds=1,
                              kind="afa_dora", workers=1)
        assert res.lora.kind == "dora" and res.cells[0].kind == "afa_dora"

    def test_invalid(self):
        with pytest.raises(ValueError):
            placement_sweep(SMALL, n_seeds=0)
        with pytest.raises(ValueError):
            placement_sweep(SMALL, kind="lora")

    def test_thread_cap(self, monkeypatch):
        monkeypatch.setenv("AFA_THREADS", "3")
        assert max_workers() == 3
        monkeypatch.setenv("AFA_THREADS", "0")
        with pytest.raises(ValueError):
            max_workers()
