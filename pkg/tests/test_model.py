import numpy as np
import pytest
import torch
from sklearn.base import clone
from sklearn.linear_model import Ridge

from hmae import hamgen
from hmae.hamgen import FamilySpec
from hmae.model import (CheckpointFormatError, ConfigError, FewShotEnergyRegressor, FewShotPhaseClassifier,
                        HMAEEncoder, HMAENetwork, HMAEPretrainer, ModelCheckpoint, ModelConfig, NumericalAbort,
                        TrainConfig, UnsupportedVersionError, collate, loss_pretrain)
from hmae.model import checkpoint as ckpt_io
from hmae.model.estimators import checkpoint_config
from hmae.model.gradcheck import check_gradients, minimal_model_config, synthetic_batch
from hmae.model.training import (PretrainData, PretrainState, build_network, learning_rate, loss_reconstruction,
                                 make_optimizer, metrics_csv, optimizer_step, train_steps)
from hmae.saliency import MaskingPlan, SaliencyStrategy
from hmae.tokenizer import TokenizerConfig, token_dim

TOK = TokenizerConfig(4, 2)


def small_config(**kw):
    base = dict(token_dim=token_dim(TOK), n_sites=4, d_model=16, n_layers=1, n_heads=2, decoder_layers=1,
                dropout=0.0, max_seq_len=16)
    base.update(kw)
    return ModelConfig(**base)


def net_for(cfg=None, seed=0):
    return build_network(cfg or small_config(), seed).eval()


@pytest.fixture(scope="module")
def records():
    return hamgen.generate(FamilySpec("TFIM", 4, 24, seed=1))


@pytest.fixture(scope="module")
def batch():
    return synthetic_batch(small_config(token_dim=12, n_sites=4), seed=3).to(torch.float32)


def plan(k, masked):
    return MaskingPlan(np.full(k, 1.0 / k), tuple(masked))


class TestConfig:

    def test_heads_divide(self):
        with pytest.raises(ConfigError):
            small_config(d_model=10, n_heads=4)

    def test_lambdas(self):
        with pytest.raises(ConfigError):
            TrainConfig(lambdas=(0.5, 0.5, 0.5))
        assert TrainConfig().lambdas == (0.6, 0.3, 0.1)

    def test_lr_positive(self):
        with pytest.raises(ConfigError):
            TrainConfig(lr=0.0)

    def test_unknown_keys(self):
        with pytest.raises(ConfigError):
            TrainConfig.from_dict({"lr": 1e-3, "momentum": 0.9})
        with pytest.raises(ConfigError):
            ModelConfig.from_dict({**small_config().to_dict(), "width": 3})

    def test_round_trip(self):
        cfg = small_config()
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg
        assert TrainConfig.from_dict(TrainConfig(lr=3e-3).to_dict()) == TrainConfig(lr=3e-3)


class TestEmbed:

    def test_masked_column_ignores_features(self):
        cfg = small_config(token_dim=12)
        net = net_for(cfg)
        b = synthetic_batch(cfg, 0).to(torch.float32)
        masked = torch.zeros_like(b.masked)
        masked[0, 2] = True
        other = b.tokens.clone()
        other[0, 2, :cfg.token_dim - cfg.n_sites] = 7.0
        a = net.embed(b.tokens, masked)
        c = net.embed(other, masked)
        torch.testing.assert_close(a[0, 2], c[0, 2], rtol=0, atol=0)
        torch.testing.assert_close(a[0, 2], net.mask_embedding + net.positional(b.tokens)[0, 2])

    def test_empty_mask_is_pure_embedding(self, batch):
        net = net_for(small_config(token_dim=12))
        pure = net.token_proj(batch.tokens) + net.positional(batch.tokens)
        torch.testing.assert_close(net.embed(batch.tokens, torch.zeros_like(batch.masked)), pure)
        torch.testing.assert_close(net.embed(batch.tokens), pure)

    def test_permutation_without_index_embedding(self, batch):
        net = net_for(small_config(token_dim=12))
        with torch.no_grad():
            net.index_embedding.weight.zero_()
        perm = torch.tensor([1, 0, 2, 3, 4])
        tokens = batch.tokens[:1]
        a = net.embed(tokens)
        b = net.embed(tokens[:, perm])
        torch.testing.assert_close(b, a[:, perm])
        valid = batch.valid[:1]
        za = net.encode(a, valid)[0]
        zb = net.encode(b, valid[:, perm])[0]
        torch.testing.assert_close(zb, za[:, perm], atol=1e-6, rtol=1e-5)

    def test_sequence_too_long(self):
        net = net_for(small_config(max_seq_len=2))
        with pytest.raises(ValueError):
            net.embed(torch.zeros(1, 3, token_dim(TOK)))


class TestEncode:

    def test_zero_depth_identity(self, batch):
        net = net_for(small_config(token_dim=12, n_layers=0))
        x = net.embed(batch.tokens)
        latent, z = net.encode(x, batch.valid)
        torch.testing.assert_close(latent, x)
        w = batch.valid.float()[..., None]
        torch.testing.assert_close(z, (x * w).sum(1) / w.sum(1))

    def test_attention_rows_sum_to_one(self, batch):
        net = net_for(small_config(token_dim=12))
        net(batch)
        att = net.encoder[0].attn.last_weights
        np.testing.assert_allclose(att.sum(-1).numpy(), 1.0, atol=1e-6)
        # padded keys receive no weight
        assert torch.all(att[1, :, :, 3:] == 0)

    def test_finite_over_seeds(self):
        cfg = small_config(token_dim=12)
        for seed in range(100):
            out = net_for(cfg, seed)(synthetic_batch(cfg, seed).to(torch.float32))
            assert all(torch.isfinite(v).all() for v in out.values())

    def test_deterministic_in_eval(self, batch):
        net = net_for(small_config(token_dim=12, dropout=0.3))
        torch.testing.assert_close(net(batch)["z"], net(batch)["z"], rtol=0, atol=0)


class TestDecode:

    def test_shape(self, batch):
        net = net_for(small_config(token_dim=12))
        assert net(batch)["reconstruction"].shape == batch.tokens.shape

    def test_zero_layer_decoder_is_linear(self, batch):
        net = net_for(small_config(token_dim=12, decoder_layers=0))
        latent, _ = net.encode(net.embed(batch.tokens), batch.valid)
        torch.testing.assert_close(net.decode_reconstruct(latent, batch.valid), net.reconstruct(latent))

    def test_mask_embedding_gets_gradient(self, batch):
        net = net_for(small_config(token_dim=12))
        loss, _ = loss_pretrain(net, batch, TrainConfig())
        loss.backward()
        assert net.mask_embedding.grad.abs().sum() > 0


class TestLosses:

    def test_perfect_prediction(self):
        t = torch.randn(2, 3, 5)
        m = torch.ones(2, 3, dtype=torch.bool)
        assert loss_reconstruction(t, t, m).item() == 0.0

    def test_single_token_closed_form(self):
        target = torch.zeros(1, 2, 4)
        target[0, :, 0] = 1.0
        pred = target.clone()
        pred[0, 0, 1] = 2.0
        m = torch.tensor([[True, False]])
        assert loss_reconstruction(pred, target, m, normalized=True, eps_norm=0.0).item() == pytest.approx(4.0)
        assert loss_reconstruction(pred, target, m, normalized=False).item() == pytest.approx(4.0)

    def test_unmasked_error_ignored(self):
        target = torch.rand(1, 3, 4) + 0.5
        pred = target.clone()
        m = torch.tensor([[True, False, False]])
        pred[0, 0] += 0.3
        before = loss_reconstruction(pred, target, m).item()
        pred[0, 2] += 5.0
        assert loss_reconstruction(pred, target, m).item() == before

    def test_reconstruction_only(self, batch):
        net = net_for(small_config(token_dim=12))
        total, parts = loss_pretrain(net, batch, TrainConfig(lambdas=(1, 0, 0)))
        assert total.item() == pytest.approx(parts["loss_rec"])

    def test_components_nonnegative(self, batch):
        net = net_for(small_config(token_dim=12))
        total, parts = loss_pretrain(net, batch, TrainConfig())
        assert min(parts.values()) >= 0 and total.item() >= 0
        expected = 0.6 * parts["loss_rec"] + 0.3 * parts["loss_energy"] + 0.1 * parts["loss_corr"]
        assert total.item() == pytest.approx(expected, rel=1e-6)

    def test_masked_input_content_irrelevant(self, batch):
        cfg = small_config(token_dim=12)
        net = net_for(cfg)
        perturbed = batch.tokens.clone()
        feats = slice(0, cfg.token_dim - cfg.n_sites)
        perturbed[..., feats] = torch.where(batch.masked[..., None], torch.randn_like(perturbed[..., feats]),
                                            perturbed[..., feats])

        def run(inputs):
            net.zero_grad()
            latent, _ = net.encode(net.embed(inputs, batch.masked), batch.valid)
            pred = net.decode_reconstruct(latent, batch.valid)
            loss = loss_reconstruction(pred, batch.tokens, batch.masked & batch.valid)
            loss.backward()
            return loss.item(), [p.grad.clone() for p in net.parameters() if p.grad is not None]

        l1, g1 = run(batch.tokens)
        l2, g2 = run(perturbed)
        assert l1 == l2
        for a, b in zip(g1, g2):
            torch.testing.assert_close(a, b, rtol=0, atol=0)


class TestBackward:

    def test_linear_layer_hand_gradient(self):
        torch.manual_seed(0)
        layer = torch.nn.Linear(3, 2).double()
        x = torch.randn(5, 3, dtype=torch.float64)
        y = torch.randn(5, 2, dtype=torch.float64)
        ((layer(x) - y) ** 2).sum().backward()
        r = 2 * (x @ layer.weight.T + layer.bias - y).detach()
        torch.testing.assert_close(layer.weight.grad, r.T @ x)
        torch.testing.assert_close(layer.bias.grad, r.sum(0))

    def test_attention_block_finite_differences(self):
        cfg = ModelConfig(token_dim=12, n_sites=4, d_model=8, n_layers=1, n_heads=2, decoder_layers=0,
                          dropout=0.0, max_seq_len=8)
        torch.manual_seed(1)
        results = check_gradients(HMAENetwork(cfg), synthetic_batch(cfg, 1))
        assert max(r.rel_error for r in results) < 1e-4

    def test_detached_labels_no_grad(self, batch):
        net = net_for(small_config(token_dim=12))
        loss_pretrain(net, batch, TrainConfig())[0].backward()
        assert batch.tokens.grad is None and batch.energy.grad is None

    def test_minimal_config_covers_blocks(self):
        cfg = minimal_model_config()
        assert cfg.d_model == 16 and cfg.n_layers == 1 and cfg.decoder_layers == 1


class TestOptimizer:

    def test_schedule(self):
        cfg = TrainConfig(lr=1e-3, total_steps=100, warmup_fraction=0.1)
        assert learning_rate(0, cfg) == 0.0
        assert learning_rate(10, cfg) == pytest.approx(1e-3)
        assert learning_rate(5, cfg) == pytest.approx(5e-4)
        assert learning_rate(100, cfg) == pytest.approx(0.0, abs=1e-18)
        assert learning_rate(55, cfg) == pytest.approx(5e-4)

    def test_zero_grad_no_decay_unchanged(self):
        net = net_for()
        cfg = TrainConfig(weight_decay=0.0, total_steps=10, warmup_fraction=0.0)
        before = [p.detach().clone() for p in net.parameters()]
        opt = make_optimizer(net, cfg)
        for p in net.parameters():
            p.grad = torch.zeros_like(p)
        optimizer_step(net, opt, 1, cfg)
        for a, p in zip(before, net.parameters()):
            torch.testing.assert_close(a, p.detach(), rtol=0, atol=0)

    def test_clip_scales_by_norm(self):
        layer = torch.nn.Linear(4, 1, bias=False)
        before = layer.weight.detach().clone()
        g = torch.zeros_like(layer.weight)
        g[0, 0] = 10.0
        layer.weight.grad = g.clone()
        cfg = TrainConfig(lr=1.0, total_steps=10, warmup_fraction=0.0, grad_clip=1.0)
        opt = torch.optim.SGD(layer.parameters(), lr=1.0)
        info = optimizer_step(layer, opt, 0, cfg)
        assert info["grad_norm"] == pytest.approx(10.0)
        torch.testing.assert_close(layer.weight.detach(), before - 0.1 * g)


class TestPretrain:

    def fit(self, records, steps=20, **kw):
        params = dict(d_model=16, n_layers=1, n_heads=2, decoder_layers=1, max_locality=2, batch_size=8,
                      lr=1e-3, total_steps=steps, random_state=0)
        params.update(kw)
        return HMAEPretrainer(**params).fit(records)

    def test_deterministic_metrics(self, records):
        a = self.fit(records, 100).metrics_
        b = self.fit(records, 100).metrics_
        assert metrics_csv(a) == metrics_csv(b)
        assert len(a) == 100

    def test_seed_matters(self, records):
        assert metrics_csv(self.fit(records, 5).metrics_) != metrics_csv(self.fit(records, 5, random_state=1).metrics_)

    def test_reconstruction_only_total(self, records):
        for row in self.fit(records, 10, lambdas=(1, 0, 0)).metrics_:
            assert row["loss_total"] == pytest.approx(row["loss_rec"])

    def test_metrics_csv_columns(self, records):
        lines = metrics_csv(self.fit(records, 3).metrics_).splitlines()
        assert lines[0] == "step,lr,loss_total,loss_rec,loss_energy,loss_corr"
        assert len(lines) == 4

    def test_resume_matches_uninterrupted(self, records):
        full = self.fit(records, 20)
        model_cfg, cfg = full.checkpoint_.model_config, full.checkpoint_.train_config
        data = PretrainData(records, TOK, SaliencyStrategy())
        net = build_network(model_cfg, cfg.seed)
        state = train_steps(PretrainState(net, make_optimizer(net, cfg)), data, cfg, n_steps=10)
        ckpt = ModelCheckpoint.from_training(state.net, state.optimizer,
                                             checkpoint_config(model_cfg, cfg, TOK, SaliencyStrategy(), state.step))
        ckpt = ckpt_io.from_bytes(ckpt_io.to_bytes(ckpt))
        resumed = HMAEPretrainer().resume(ckpt, records, n_steps=10)
        assert resumed.metrics_[0]["step"] == 10
        assert metrics_csv(resumed.metrics_) == metrics_csv(full.metrics_[10:])

    def test_nan_aborts(self, records):
        cfg = TrainConfig(batch_size=8, total_steps=3)
        data = PretrainData(records, TOK, SaliencyStrategy())
        data.energy[:] = np.nan
        net = build_network(small_config(), 0)
        with pytest.raises(NumericalAbort) as info:
            train_steps(PretrainState(net, make_optimizer(net, cfg)), data, cfg)
        assert info.value.snapshot["step"] == 0
        assert "param_norms" in info.value.snapshot

    def test_transform_shape(self, records):
        model = self.fit(records, 2)
        assert model.transform(records[:5]).shape == (5, 16)
        assert model.encoder().transform([r.hamiltonian for r in records[:2]]).shape == (2, 16)

    def test_sklearn_params(self):
        model = HMAEPretrainer(d_model=32, lr=3e-3)
        assert clone(model).get_params() == model.get_params()


@pytest.fixture(scope="module")
def trained(records):
    return HMAEPretrainer(d_model=16, n_layers=1, n_heads=2, decoder_layers=1, max_locality=2,
                          batch_size=8, total_steps=3).fit(records)


class TestCheckpoint:

    def test_bytes_round_trip(self, trained, tmp_path):
        data = ckpt_io.to_bytes(trained.checkpoint_)
        assert ckpt_io.to_bytes(ckpt_io.from_bytes(data)) == data
        path = tmp_path / "m.ckpt"
        trained.save(path)
        again = tmp_path / "n.ckpt"
        ckpt_io.save(ckpt_io.load(path), again)
        assert path.read_bytes() == again.read_bytes() == data

    def test_header(self, trained):
        data = ckpt_io.to_bytes(trained.checkpoint_)
        assert data[:4] == b"HMAE"
        assert int.from_bytes(data[4:8], "little") == ckpt_io.FORMAT_VERSION

    def test_wrong_magic(self, trained):
        data = bytearray(ckpt_io.to_bytes(trained.checkpoint_))
        data[:4] = b"NOPE"
        with pytest.raises(CheckpointFormatError):
            ckpt_io.from_bytes(bytes(data))

    def test_unsupported_version(self, trained):
        data = bytearray(ckpt_io.to_bytes(trained.checkpoint_))
        data[4:8] = (99).to_bytes(4, "little")
        with pytest.raises(UnsupportedVersionError):
            ckpt_io.from_bytes(bytes(data))

    def test_truncated(self, trained):
        with pytest.raises(CheckpointFormatError):
            ckpt_io.from_bytes(ckpt_io.to_bytes(trained.checkpoint_)[:-3])

    def test_contents(self, trained, records):
        ckpt = ckpt_io.from_bytes(ckpt_io.to_bytes(trained.checkpoint_))
        assert "mask_embedding" in ckpt.tensors
        assert any(k.startswith("optim.exp_avg.") for k in ckpt.tensors)
        assert ckpt.step == 3 and ckpt.config["seed"] == 0
        enc = HMAEEncoder(ckpt).fit()
        np.testing.assert_allclose(enc.transform(records[:4]), trained.transform(records[:4]), atol=1e-6)

    def test_non_finite_rejected(self, trained):
        bad = ModelCheckpoint(trained.checkpoint_.config, {"w": np.array([np.nan], dtype=np.float32)})
        with pytest.raises(CheckpointFormatError):
            ckpt_io.to_bytes(bad)


class TestHeads:

    def test_separable_perfect_train_accuracy(self, rng):
        X = np.vstack([rng.normal(-3, 1, (10, 4)), rng.normal(3, 1, (10, 4))])
        y = np.repeat([0, 1], 10)
        clf = FewShotPhaseClassifier().fit(X, y)
        assert np.mean(clf.predict(X) == y) == 1.0
        np.testing.assert_allclose(clf.predict_proba(X).sum(1), 1.0)

    def test_single_class_rejected(self, rng):
        with pytest.raises(ValueError):
            FewShotPhaseClassifier().fit(rng.normal(size=(5, 3)), np.zeros(5))

    def test_step_cap(self, rng):
        X = rng.normal(size=(20, 3))
        y = rng.integers(0, 3, 20)
        clf = FewShotPhaseClassifier(max_steps=500).fit(X, y)
        assert len(clf.loss_curve_) <= 500

    def test_constant_targets(self, rng):
        X = rng.normal(size=(10, 6))
        reg = FewShotEnergyRegressor().fit(X, np.full(10, -1.25))
        np.testing.assert_allclose(reg.predict(X), -1.25, atol=1e-12)

    def test_ridge_oracle(self, rng):
        X = rng.normal(size=(30, 5)) * [1, 2, 3, 4, 5]
        y = X @ rng.normal(size=5) + 0.1 * rng.normal(size=30)
        reg = FewShotEnergyRegressor(alpha=0.5).fit(X, y)
        Xs = (X - X.mean(0)) / X.std(0)
        ref = Ridge(alpha=0.5).fit(Xs, y)
        np.testing.assert_allclose(reg.predict(X), ref.predict(Xs), atol=1e-10)

    def test_ridge_underdetermined(self, rng):
        X = rng.normal(size=(4, 10))
        y = rng.normal(size=4)
        reg = FewShotEnergyRegressor(alpha=1e-3).fit(X, y)
        ref = Ridge(alpha=1e-3).fit((X - X.mean(0)) / X.std(0), y)
        np.testing.assert_allclose(reg.coef_, ref.coef_, atol=1e-8)


class TestCollate:

    def test_padding(self):
        a, b = np.ones((3, 5)), np.ones((1, 5))
        batch = collate([a, b], [plan(3, [1]), None])
        assert batch.tokens.shape == (2, 3, 5)
        assert batch.valid.tolist() == [[True] * 3, [True, False, False]]
        assert batch.masked.tolist() == [[False, True, False], [False] * 3]
