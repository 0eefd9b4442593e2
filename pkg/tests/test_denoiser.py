import pytest
import torch

from stemdiff.data.models import ConditionEmbedding, ConditionSource
from stemdiff.diffusion.denoiser import UNet3D, count_parameters, denoise_predict, timestep_embedding
from stemdiff.diffusion.sampler import training_loss
from stemdiff.diffusion.schedule import build_schedule
from stemdiff.errors import ShapeMismatchError, StepIndexError
from stemdiff.utils.seeding import make_generator

SHAPE = (2, 4, 2, 8, 4)


@pytest.fixture
def model():
    torch.manual_seed(0)
    return UNet3D(num_stems=4, cond_dim=8, base_width=8, channel_mult=(1, 2), time_embed_dim=16,
                  attention_heads=2, norm_groups=4, num_steps=20).eval()


def _cond(batch=2, dim=8):
    vector = torch.nn.functional.normalize(torch.randn(batch, dim), dim=-1)
    return ConditionEmbedding(vector, torch.zeros(batch, dtype=torch.bool), ConditionSource.AUDIO)


def test_output_shape_and_finiteness(model):
    z = torch.randn(SHAPE)
    eps = model(z, torch.tensor([1, 20]), _cond())
    assert eps.shape == SHAPE
    assert torch.isfinite(eps).all()


def test_missing_condition_uses_null_token(model):
    z = torch.randn(SHAPE)
    steps = torch.tensor([3, 3])
    null = ConditionEmbedding.null(2, 8)
    torch.testing.assert_close(model(z, steps, None), model(z, steps, null))
    assert not torch.allclose(model(z, steps, None), model(z, steps, _cond()))


def test_single_row_condition_broadcasts(model):
    z = torch.randn(SHAPE)
    cond = _cond(batch=1)
    torch.testing.assert_close(model(z, torch.tensor([5, 5]), cond),
                               model(z, torch.tensor([5, 5]), cond.repeat(2)))


def test_denoise_predict_accepts_unbatched_stack(model):
    z = torch.randn(SHAPE[1:])
    assert denoise_predict(z, 7, None, model).shape == SHAPE[1:]


@pytest.mark.parametrize("step", [0, 21])
def test_denoise_predict_rejects_out_of_range_steps(model, step):
    with pytest.raises(StepIndexError):
        denoise_predict(torch.randn(SHAPE), step, None, model)


def test_shape_errors(model):
    with pytest.raises(ShapeMismatchError):
        model(torch.randn(2, 3, 2, 8, 4), torch.tensor([1, 1]))
    with pytest.raises(ShapeMismatchError):
        model(torch.randn(2, 4, 2, 7, 4), torch.tensor([1, 1]))
    with pytest.raises(ShapeMismatchError):
        model(torch.randn(SHAPE), torch.tensor([1, 1]), _cond(dim=5))


def test_timestep_embedding_distinguishes_steps():
    emb = timestep_embedding(torch.tensor([1, 2, 1000]), 16)
    assert emb.shape == (3, 16)
    assert not torch.allclose(emb[0], emb[1])


def test_architecture_rebuilds_same_network(model):
    rebuilt = UNet3D(**model.architecture())
    rebuilt.load_state_dict(model.state_dict())
    z = torch.randn(SHAPE)
    steps = torch.tensor([2, 9])
    assert torch.equal(rebuilt.eval()(z, steps, None), model(z, steps, None))
    assert count_parameters(rebuilt) == count_parameters(model) > 0


def test_loss_gradient_matches_finite_differences(model):
    model = model.double().train()
    sched = build_schedule("linear", 20)
    z0 = torch.randn(SHAPE, dtype=torch.float64, generator=make_generator(1))
    cond = _cond().to(dtype=torch.float64)

    def loss_value():
        return training_loss(z0, cond, model, sched, make_generator(7))

    model.zero_grad()
    loss_value().backward()

    checked = [model.input_conv.weight, model.mid_attention.norm.weight, model.output_conv.weight,
               model.cond_mlp[0].weight]
    analytic, numeric = [], []
    h = 1e-6
    with torch.no_grad():
        for param in checked:
            flat = param.view(-1)
            for idx in range(8):
                original = flat[idx].item()
                flat[idx] = original + h
                plus = loss_value().item()
                flat[idx] = original - h
                minus = loss_value().item()
                flat[idx] = original
                numeric.append((plus - minus) / (2 * h))
                analytic.append(param.grad.view(-1)[idx].item())
    analytic, numeric = torch.tensor(analytic), torch.tensor(numeric)
    relative = (analytic - numeric).norm() / analytic.norm().clamp_min(1e-12)
    assert relative < 1e-4


def test_output_depends_on_step(model):
    z = torch.randn(SHAPE)
    first = model(z, torch.tensor([1, 1]), None)
    last = model(z, torch.tensor([20, 20]), None)
    assert not torch.allclose(first, last)


def _linear(i, o):
    return i * o + o


def _conv(i, o, k=3):
    return k ** 3 * i * o + o


def _res_block(i, o, emb):
    skip = _conv(i, o, k=1) if i != o else 0
    return 2 * i + _conv(i, o) + _linear(emb, 2 * o) + 2 * o + _conv(o, o) + skip


def _attention_block(c, cond_dim):
    mha = 4 * c * c + 4 * c
    return 2 * c + mha + 2 * c + _linear(cond_dim, c) + mha + 2 * c + _linear(c, 4 * c) + _linear(4 * c, c)


def _expected_parameters(arch):
    stems, cond_dim, t_dim = arch["num_stems"], arch["cond_dim"], arch["time_embed_dim"]
    emb = 4 * t_dim
    widths = [arch["base_width"] * m for m in arch["channel_mult"]]
    total = _linear(t_dim, emb) + _linear(emb, emb) + _linear(cond_dim, emb) + _linear(emb, emb) + cond_dim
    total += _conv(stems, widths[0])
    ch = widths[0]
    for i, width in enumerate(widths):
        total += _res_block(ch, width, 2 * emb)
        ch = width
        if i < len(widths) - 1:
            total += _conv(ch, ch)
    total += 2 * _res_block(ch, ch, 2 * emb) + _attention_block(ch, cond_dim)
    for i in reversed(range(len(widths))):
        total += _res_block(ch + widths[i], widths[i], 2 * emb)
        ch = widths[i]
        if i > 0:
            total += _conv(ch, ch)
    return total + 2 * ch + _conv(ch, stems)


def test_parameter_count_follows_architecture(model):
    arch = model.architecture()
    assert count_parameters(model) == _expected_parameters(arch)
    wider = UNet3D(**{**arch, "base_width": 2 * arch["base_width"]})
    assert count_parameters(wider) == _expected_parameters(wider.architecture())
    assert count_parameters(wider) > count_parameters(model)
