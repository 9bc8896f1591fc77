import math

import numpy as np
import pytest
import torch

from roifield import guidance
from roifield.geometry import look_at
from roifield.guidance import (
    LossConfig,
    MockScorer,
    anneal_weights,
    depth_loss,
    directional_prompt,
    disc_image,
    similarity_loss,
    strip_directional_suffix,
    total_loss,
    transmittance_loss,
)


class TestSimilarityLoss:
    def test_identical(self):
        v = torch.nn.functional.normalize(torch.tensor([1.0, 2.0, 3.0]), dim=0)
        assert float(similarity_loss(v, v)) == pytest.approx(-1.0, abs=1e-6)

    def test_orthogonal(self):
        a = torch.tensor([1.0, 0.0])
        b = torch.tensor([0.0, 1.0])
        assert float(similarity_loss(a, b)) == 0.0

    def test_antipodal(self):
        a = torch.tensor([0.0, 1.0])
        assert float(similarity_loss(a, -a)) == 1.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            similarity_loss(torch.ones(3), torch.ones(4))

    def test_bounded_for_unit_inputs(self, rng):
        for _ in range(100):
            a = torch.as_tensor(rng.normal(size=16))
            b = torch.as_tensor(rng.normal(size=16))
            a = a / a.norm()
            b = b / b.norm()
            assert abs(float(similarity_loss(a, b))) <= 1.0 + 1e-12


class TestMockScorer:
    def test_embeddings_unit_norm(self, rng):
        scorer = MockScorer(seed=4)
        img = torch.as_tensor(rng.uniform(0, 1, (20, 20, 3)))
        assert float(scorer.embed_image(img).norm()) == pytest.approx(1.0, abs=1e-6)
        assert float(scorer.embed_text("anything").norm()) == pytest.approx(1.0, abs=1e-6)

    def test_registered_caption_hits_target_exactly(self):
        scorer = MockScorer(seed=1)
        target = disc_image(32)
        scorer.register("a red disc", target)
        loss = similarity_loss(
            scorer.embed_image(torch.as_tensor(target)), scorer.embed_text("a red disc")
        )
        assert float(loss) == pytest.approx(-1.0, abs=1e-12)

    def test_directional_suffix_ignored_for_lookup(self):
        scorer = MockScorer(seed=1)
        target = disc_image(16)
        scorer.register("a red disc", target)
        a = scorer.embed_text("a red disc")
        b = scorer.embed_text("a red disc, front view")
        assert torch.equal(a, b)

    def test_perturbed_image_scores_strictly_worse(self):
        scorer = MockScorer(seed=2)
        target = disc_image(32)
        scorer.register("goal", target)
        perturbed = target.copy()
        perturbed[4, 4] = 1.0 - perturbed[4, 4]
        loss = similarity_loss(
            scorer.embed_image(torch.as_tensor(perturbed)), scorer.embed_text("goal")
        )
        assert float(loss) > -1.0 + 1e-9

    def test_deterministic(self, rng):
        img = torch.as_tensor(rng.uniform(0, 1, (16, 16, 3)))
        a = MockScorer(seed=9).embed_image(img)
        b = MockScorer(seed=9).embed_image(img)
        assert torch.equal(a, b)

    def test_differentiable(self):
        scorer = MockScorer(seed=3)
        scorer.register("x", disc_image(16))
        img = torch.full((16, 16, 3), 0.5, dtype=torch.float64, requires_grad=True)
        loss = similarity_loss(scorer.embed_image(img), scorer.embed_text("x"))
        loss.backward()
        assert img.grad is not None and float(img.grad.abs().sum()) > 0


class TestDirectionalPrompt:
    def pose_at(self, az_deg, el_deg):
        forward = np.array([
            math.cos(math.radians(el_deg)) * math.cos(math.radians(az_deg)),
            math.cos(math.radians(el_deg)) * math.sin(math.radians(az_deg)),
            math.sin(math.radians(el_deg)),
        ])
        pos = -3.0 * forward
        return look_at(pos, pos + forward, afov=1.0)

    def test_steep_elevation_is_top_down(self):
        pose = self.pose_at(0.0, -80.0)
        assert directional_prompt("a cat", pose) == "a cat, top-down view"

    def test_canonical_front(self):
        pose = self.pose_at(0.0, 0.0)
        assert directional_prompt("a cat", pose) == "a cat, front view"

    def test_canonical_back(self):
        pose = self.pose_at(180.0, 0.0)
        assert directional_prompt("a cat", pose) == "a cat, back view"

    def test_side(self):
        pose = self.pose_at(90.0, 0.0)
        assert directional_prompt("a cat", pose) == "a cat, side view"

    def test_forward_facing_never_back(self):
        pose = self.pose_at(180.0, 0.0)
        out = directional_prompt("a cat", pose, scene_type="forward-facing")
        assert out == "a cat, side view"

    def test_partitions_pose_sphere(self, rng):
        for _ in range(2000):
            az = rng.uniform(-180, 180)
            el = rng.uniform(-89.9, 89.9)
            prompt = directional_prompt("p", self.pose_at(az, el))
            matches = [s for s in guidance.DIRECTIONAL_SUFFIXES if prompt.endswith(s)]
            assert len(matches) == 1

    def test_empty_caption_rejected(self):
        with pytest.raises(ValueError):
            directional_prompt("", self.pose_at(0, 0))

    def test_strip_roundtrip(self):
        assert strip_directional_suffix("a cat, back view") == "a cat"
        assert strip_directional_suffix("a cat") == "a cat"


class TestRegularizerLosses:
    def test_transmittance_above_ceiling(self):
        assert transmittance_loss(1.0, 0.88) == -0.88

    def test_transmittance_below_ceiling(self):
        assert transmittance_loss(0.5, 0.88) == -0.5

    def test_transmittance_at_kink(self):
        assert transmittance_loss(0.88, 0.88) == -0.88

    def test_transmittance_gradient_interior_at_kink(self):
        t = torch.tensor(0.88, requires_grad=True)
        loss = transmittance_loss(t, 0.88)
        loss.backward()
        assert float(t.grad) == -1.0

    def test_depth_constant_disparity(self):
        assert depth_loss(np.full((8, 8), 3.0), 0.2) == 0.0

    def test_depth_interior(self):
        values = np.array([0.0, np.sqrt(0.4)])  # population variance 0.1
        assert depth_loss(values, 0.2) == pytest.approx(-0.1)

    def test_depth_saturates(self):
        values = np.array([0.0, 10.0])
        assert depth_loss(values, 0.2) == -0.2

    def test_losses_nonpositive_and_monotone(self, rng):
        prev = 0.0
        for t in np.linspace(0, 1, 50):
            val = transmittance_loss(float(t), 0.88)
            assert val <= 0.0
            assert val <= prev + 1e-12
            prev = val


class TestAnnealing:
    def test_step_zero(self):
        assert anneal_weights(0, 100, LossConfig()) == (0.0, 0.0)

    def test_after_ramp(self):
        assert anneal_weights(20, 100, LossConfig()) == (0.25, 4.0)
        assert anneal_weights(100, 100, LossConfig()) == (0.25, 4.0)

    def test_midpoint(self):
        assert anneal_weights(10, 100, LossConfig()) == (0.125, 2.0)

    def test_monotone(self):
        cfg = LossConfig()
        prev = (-1.0, -1.0)
        for step in range(0, 101):
            w = anneal_weights(step, 100, cfg)
            assert w[0] >= prev[0] and w[1] >= prev[1]
            prev = w


class TestTotalLoss:
    def test_zero_weights(self):
        assert total_loss(-0.5, -0.8, -0.1, (0.0, 0.0)) == -0.5

    def test_weighted_sum(self):
        assert total_loss(-0.3, -0.88, -0.2, (0.25, 4.0)) == pytest.approx(-1.32, abs=1e-12)

    def test_all_zero(self):
        assert total_loss(0.0, 0.0, 0.0, (0.25, 4.0)) == 0.0


class TestLossConfigValidation:
    def test_rejects_bad_tau(self):
        with pytest.raises(ValueError):
            LossConfig(tau=0.0)
        with pytest.raises(ValueError):
            LossConfig(tau=1.5)

    def test_rejects_negative_weights(self):
        with pytest.raises(ValueError):
            LossConfig(lambda_t=-0.1)


def _scorer_protocol_app():
    """In-process embedding service implementing the adapter protocol with
    MockScorer math, including the vjp endpoint via autograd."""
    import base64

    from fastapi import FastAPI
    from pydantic import BaseModel

    scorer = MockScorer(seed=77)
    scorer.register("a red disc", disc_image(16))
    app = FastAPI()

    class ImagePayload(BaseModel):
        height: int
        width: int
        data_b64: str
        cotangent: list[float] | None = None

    def decode(p: ImagePayload) -> torch.Tensor:
        raw = np.frombuffer(base64.b64decode(p.data_b64), dtype="<f4")
        return torch.as_tensor(
            raw.reshape(p.height, p.width, 3).astype(np.float64)
        )

    @app.post("/embed-image")
    def embed_image(p: ImagePayload):
        return {"embedding": scorer.embed_image(decode(p)).tolist()}

    @app.post("/embed-image-vjp")
    def embed_image_vjp(p: ImagePayload):
        img = decode(p).requires_grad_(True)
        emb = scorer.embed_image(img)
        cot = torch.as_tensor(np.asarray(p.cotangent, dtype=np.float64))
        (grad,) = torch.autograd.grad(emb, img, grad_outputs=cot)
        payload = base64.b64encode(
            grad.numpy().astype("<f4").tobytes()
        ).decode("ascii")
        return {"grad_b64": payload}

    class TextPayload(BaseModel):
        text: str

    @app.post("/embed-text")
    def embed_text(p: TextPayload):
        return {"embedding": scorer.embed_text(p.text).tolist()}

    return app, scorer


class TestHttpScorerAdapter:
    @pytest.fixture
    def adapter(self):
        from fastapi.testclient import TestClient

        app, scorer = _scorer_protocol_app()
        client = TestClient(app)
        return guidance.HttpScorerAdapter(str(client.base_url), client=client), scorer

    def test_matches_in_process_scorer(self, adapter, rng):
        remote, local = adapter
        img = torch.as_tensor(rng.uniform(0, 1, (16, 16, 3)))
        a = remote.embed_image(img).numpy()
        b = local.embed_image(img).numpy()
        assert np.allclose(a, b, atol=1e-6)
        t1 = remote.embed_text("a red disc").numpy()
        t2 = local.embed_text("a red disc").numpy()
        assert np.allclose(t1, t2, atol=1e-6)

    def test_gradient_roundtrip(self, adapter):
        remote, local = adapter
        img = torch.full((16, 16, 3), 0.4, dtype=torch.float64)
        ra = img.clone().requires_grad_(True)
        loss_remote = similarity_loss(remote.embed_image(ra), remote.embed_text("a red disc"))
        loss_remote.backward()
        rb = img.clone().requires_grad_(True)
        loss_local = similarity_loss(local.embed_image(rb), local.embed_text("a red disc"))
        loss_local.backward()
        # float32 wire format bounds the agreement
        assert np.allclose(ra.grad.numpy(), rb.grad.numpy(), atol=1e-6)
