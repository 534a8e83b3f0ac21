import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import softmax

from dktgen.data import bundled_mastery_params, simulate_students
from dktgen.numerics import Rng, TrainingError, grad_check
from dktgen.tabddpm import (
    DenoiserParams,
    DiffusionSchedule,
    GeneratorConfig,
    ModelError,
    NoiseDraw,
    QuantileTransform,
    TabSchema,
    combined_total,
    denoiser_forward,
    draw_noise,
    fit_transform_numeric,
    gaussian_forward_sample,
    init_denoiser,
    load_generator,
    loss_given_noise,
    make_schedule,
    multinomial_forward_probs,
    multinomial_posterior,
    one_hot,
    save_generator,
    tabddpm_loss,
    tabddpm_sample,
    tabddpm_train,
    timestep_embedding,
    train_denoiser,
)


def schedule_from(beta):
    beta = np.concatenate([[0.0], np.asarray(beta, dtype=np.float64)])
    alpha = 1.0 - beta
    return DiffusionSchedule(beta, alpha, np.cumprod(alpha))


# --- quantile transform ------------------------------------------------------------


def test_quantile_moments():
    _, z = fit_transform_numeric(np.arange(1, 1001, dtype=float)[:, None])
    assert abs(z.mean()) < 0.05
    assert 0.9 <= z.var() <= 1.1


def test_quantile_roundtrip_on_training_values():
    x = np.random.default_rng(0).lognormal(10, 1, (500, 2))
    x[::7, 1] = x[0, 1]  # ties
    qt, z = fit_transform_numeric(x)
    np.testing.assert_allclose(qt.inverse(z), x, rtol=1e-9, atol=0)


def test_quantile_inverse_clamps():
    qt, _ = fit_transform_numeric(np.linspace(3.0, 7.0, 50)[:, None])
    np.testing.assert_array_equal(qt.inverse(np.array([[-40.0], [40.0]]))[:, 0], [3.0, 7.0])


def test_quantile_constant_column():
    with pytest.warns(RuntimeWarning):
        qt, z = fit_transform_numeric(np.full((20, 1), 4.2))
    np.testing.assert_array_equal(z, 0.0)
    np.testing.assert_array_equal(qt.inverse(np.array([[1.3]])), [[4.2]])


def test_quantile_needs_ten_rows():
    with pytest.raises(ValueError):
        fit_transform_numeric(np.arange(9.0)[:, None])


def test_quantile_serialises():
    qt, _ = fit_transform_numeric(np.arange(30.0)[:, None])
    back = QuantileTransform.from_dict(qt.to_dict())
    np.testing.assert_array_equal(back.transform(np.arange(30.0)[:, None]), qt.transform(np.arange(30.0)[:, None]))


# --- schedule ----------------------------------------------------------------------


def test_schedule_single_step():
    assert make_schedule(1, 0.5, 0.5).alpha_bar[1] == pytest.approx(0.5)


def test_schedule_default_range():
    s = make_schedule(100, 1e-4, 0.02)
    beta = np.linspace(1e-4, 0.02, 100)
    assert s.alpha_bar[100] == pytest.approx(np.exp(np.sum(np.log1p(-beta))), rel=1e-12)
    assert 0 < s.alpha_bar[100] < 0.4


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 300), st.floats(1e-6, 0.5), st.floats(0.0, 0.49))
def test_schedule_strictly_decreasing(T, lo, extra):
    s = make_schedule(T, lo, min(lo + extra, 0.999))
    assert np.all(np.diff(s.alpha_bar) < 0)
    assert s.alpha_bar[-1] < s.alpha_bar[1] < 1 or T == 1


@pytest.mark.parametrize("args", [(0, 0.1, 0.2), (10, 0.0, 0.1), (10, 0.3, 0.2), (10, 0.1, 1.0)])
def test_schedule_invalid(args):
    with pytest.raises(ValueError):
        make_schedule(*args)


def test_generator_config_scales_betas():
    s = GeneratorConfig(T=50).schedule()
    assert s.beta[1] == pytest.approx(1e-4 * 20) and s.beta[50] == pytest.approx(0.02 * 20)


# --- forward processes ----------------------------------------------------------------


def test_gaussian_noiseless_limit():
    s = schedule_from([1e-9])
    x0 = np.array([[0.3, -1.2]])
    xt, eps = gaussian_forward_sample(x0, 1, s, Rng(0))
    assert np.linalg.norm(xt - x0) <= 1e-3 * np.linalg.norm(eps)


def test_gaussian_zero_signal_exact():
    s = make_schedule(10, 0.01, 0.2)
    xt, eps = gaussian_forward_sample(np.zeros((5, 1)), 7, s, Rng(1))
    np.testing.assert_array_equal(xt, np.sqrt(1 - s.alpha_bar[7]) * eps)


@pytest.mark.parametrize("t", [1, 10, 50])
def test_gaussian_marginal_moments(t):
    s = make_schedule(50, 1e-3, 0.05)
    n = 10_000
    x0 = 2.0 + 1.5 * np.random.default_rng(t).standard_normal((n, 1))
    xt, _ = gaussian_forward_sample(x0, t, s, Rng(t))
    ab = s.alpha_bar[t]
    mean, var = np.sqrt(ab) * x0.mean(), ab * x0.var() + (1 - ab)
    assert abs(xt.mean() - mean) < 3 * np.sqrt(var / n)
    assert abs(xt.var() - var) < 3 * var * np.sqrt(2 / (n - 1))
    assert abs(xt.var() / var - 1) < 0.05


def test_multinomial_forward_limits():
    s = make_schedule(1, 0.5, 0.5)
    x0 = np.array([1.0, 0.0])
    np.testing.assert_array_equal(multinomial_forward_probs(x0, 0, s), x0)
    np.testing.assert_allclose(multinomial_forward_probs(x0, 1, s), [0.75, 0.25])
    s_long = make_schedule(500, 0.2, 0.2)
    np.testing.assert_allclose(multinomial_forward_probs(np.eye(4)[2], 500, s_long), 0.25, atol=1e-12)


def bayes_posterior(xt_class, x0_probs, t, s):
    """q(x_{t-1}=j | x_t, x0) from one-step transition and t-1 marginal, enumerated."""
    K = len(x0_probs)
    out = np.zeros(K)
    for j in range(K):
        step = s.alpha[t] * (j == xt_class) + s.beta[t] / K
        marg = sum(x0_probs[c] * (s.alpha_bar[t - 1] * (j == c) + (1 - s.alpha_bar[t - 1]) / K) for c in range(K))
        out[j] = step * marg
    return out / out.sum()


def test_posterior_worked_example():
    # alpha_2 = 0.9, beta_2 = 0.1, alpha_bar_1 = 0.8
    s = schedule_from([0.2, 0.1])
    post = multinomial_posterior(np.array([0.0, 1.0]), np.array([1.0, 0.0]), 2, s)
    # unnormalised (0.05 * 0.9, 0.95 * 0.1)
    np.testing.assert_allclose(post, [0.045 / 0.14, 0.095 / 0.14], atol=1e-12)
    np.testing.assert_allclose(post, bayes_posterior(1, [1.0, 0.0], 2, s), atol=1e-12)


def test_posterior_matches_bayes_rule_random():
    rng = np.random.default_rng(5)
    s = make_schedule(30, 0.01, 0.3)
    for _ in range(100):
        K = int(rng.integers(2, 7))
        t = int(rng.integers(2, 31))
        x0 = rng.dirichlet(np.ones(K))
        c = int(rng.integers(K))
        np.testing.assert_allclose(multinomial_posterior(np.eye(K)[c], x0, t, s), bayes_posterior(c, x0, t, s), atol=1e-12)


def test_posterior_frozen_chain():
    s = schedule_from([0.0, 0.0, 0.0])
    xt = np.eye(3)[1]
    np.testing.assert_array_equal(multinomial_posterior(xt, xt, 3, s), xt)


def test_posterior_rejects_t1():
    with pytest.raises(ValueError):
        multinomial_posterior(np.eye(2)[0], np.eye(2)[0], 1, make_schedule(3, 0.1, 0.2))


def test_probability_vectors_normalised_1000_evaluations():
    rng = np.random.default_rng(6)
    s = make_schedule(100, 1e-4, 0.3)
    worst = 0.0
    for _ in range(1000):
        K = int(rng.integers(2, 40))
        t = int(rng.integers(2, 101))
        x0 = rng.dirichlet(np.ones(K) * rng.uniform(0.05, 2))
        xt = np.eye(K)[rng.integers(K)]
        for v in (
            multinomial_posterior(xt, x0, t, s),
            multinomial_forward_probs(np.eye(K)[rng.integers(K)], t, s),
            softmax(rng.normal(0, 5, K)),
        ):
            assert np.all(v >= 0)
            worst = max(worst, abs(v.sum() - 1))
    assert worst < 1e-9


# --- denoiser --------------------------------------------------------------------------


def random_schema(rng, d_num=None, C=None):
    d_num = int(rng.integers(0, 3)) if d_num is None else d_num
    C = int(rng.integers(0, 4)) if C is None else C
    return TabSchema([f"n{i}" for i in range(d_num)], [f"c{i}" for i in range(C)], [int(k) for k in rng.integers(2, 6, C)])


def oracle_denoiser(params: DenoiserParams, x_num, x_cat, t):
    s = params.schema
    onehots = [one_hot(x_cat[:, i], K) for i, K in enumerate(s.categories)]
    x = np.concatenate([x_num, *onehots, timestep_embedding(t, params.time_dim)], axis=1)
    for layer, (W, b) in enumerate(zip(params.weights, params.biases)):
        x = x @ W + b
        if layer < len(params.weights) - 1:
            x = np.maximum(x, 0)
    return x[:, : s.d_num], [x[:, s.d_num + s.offsets[i] : s.d_num + s.offsets[i + 1]] for i in range(s.C)]


def test_denoiser_zero_weights():
    schema = TabSchema(["x"], ["a", "b"], [3, 2])
    p = init_denoiser(schema, [5], 4, Rng(0))
    z = p.with_arrays({k: np.zeros_like(v) for k, v in p.as_dict().items()})
    eps, logits = denoiser_forward(z, np.ones((2, 1)), np.array([[0, 1], [2, 0]]), 3)
    np.testing.assert_array_equal(eps, 0.0)
    for lg in logits:
        np.testing.assert_array_equal(lg, 0.0)


def test_denoiser_output_dims_and_oracle():
    rng = np.random.default_rng(7)
    for trial in range(20):
        schema = random_schema(rng)
        p = init_denoiser(schema, [int(rng.integers(1, 9))] * int(rng.integers(1, 3)), 6, Rng(trial))
        n = 4
        x_num = rng.normal(size=(n, schema.d_num))
        x_cat = np.stack([rng.integers(0, K, n) for K in schema.categories], axis=1) if schema.C else np.zeros((n, 0), int)
        t = rng.integers(1, 20, n)
        eps, logits = denoiser_forward(p, x_num, x_cat, t)
        assert eps.shape[1] + sum(lg.shape[1] for lg in logits) == schema.d_num + sum(schema.categories)
        e_ref, l_ref = oracle_denoiser(p, x_num, x_cat, t)
        np.testing.assert_allclose(eps, e_ref, atol=1e-12, rtol=0)
        for a, b in zip(logits, l_ref):
            np.testing.assert_allclose(a, b, atol=1e-12, rtol=0)


def test_denoiser_shape_errors():
    schema = TabSchema(["x"], ["a"], [3])
    p = init_denoiser(schema, [4], 2, Rng(0))
    with pytest.raises(ModelError):
        denoiser_forward(p, np.zeros((2, 1)), np.array([[0], [3]]), 1)
    with pytest.raises(ModelError):
        denoiser_forward(p, np.zeros((3, 1)), np.array([[0], [1]]), 1)


# --- loss -----------------------------------------------------------------------------


def test_combined_total_examples():
    assert combined_total(1.0, [0.2, 0.4]) == pytest.approx(1.3, abs=1e-15)
    assert combined_total(0.7, []) == 0.7


def _tiny(seed, d_num=1, Ks=(3, 3), T=4, hidden=(8, 8), time_dim=4, n=12):
    rng = np.random.default_rng(seed)
    schema = TabSchema([f"n{i}" for i in range(d_num)], [f"c{i}" for i in range(len(Ks))], list(Ks))
    params = init_denoiser(schema, list(hidden), time_dim, Rng(seed))
    x_num = rng.normal(size=(n, d_num))
    x_cat = np.stack([rng.integers(0, K, n) for K in Ks], axis=1) if Ks else np.zeros((n, 0), np.int64)
    schedule = make_schedule(T, 0.05, 0.3)
    return params, x_num, x_cat, schedule


def test_loss_identity_and_nonnegative():
    for seed in range(20):
        params, x_num, x_cat, schedule = _tiny(seed)
        loss = tabddpm_loss(params, x_num, x_cat, schedule, Rng(seed))
        assert abs(loss.total - (loss.l_simple + sum(loss.l_cat) / len(loss.l_cat))) <= 1e-12
        assert loss.l_simple >= 0 and all(v >= -1e-12 for v in loss.l_cat)


def test_loss_without_categoricals():
    params, x_num, x_cat, schedule = _tiny(0, Ks=())
    loss = tabddpm_loss(params, x_num, x_cat, schedule, Rng(0))
    assert loss.l_cat == [] and loss.total == loss.l_simple


def test_perfect_denoiser_on_frozen_chain():
    Ks = [3, 4]
    schema = TabSchema([], ["a", "b"], Ks)
    D = sum(Ks)
    # hidden layer copies the one-hot input; output layer scales it into sharp logits
    W0 = np.zeros((D, D))
    W0[:D, :D] = np.eye(D)
    params = DenoiserParams([W0, 60.0 * np.eye(D)], [np.zeros(D), np.zeros(D)], schema, 0)
    schedule = make_schedule(5, 1e-12, 1e-12)
    x_cat = np.stack([np.arange(12) % 3, np.arange(12) % 4], axis=1)
    noise = NoiseDraw(np.array([1, 2, 3, 4, 5, 2] * 2), np.zeros((12, 0)), x_cat.copy())
    loss = loss_given_noise(params, np.zeros((12, 0)), x_cat, noise, schedule)
    assert max(loss.l_cat) < 1e-10


GRAD_CASES = [(0, 1, (3, 3), 4, (8, 8))] + [
    (seed, int(d), tuple(int(k) for k in ks), int(T), tuple(int(h) for h in hid))
    for seed, d, ks, T, hid in [
        (s, s % 3, np.random.default_rng(s).integers(2, 6, s % 4), 2 + s % 7, [3 + s % 5] * (1 + s % 2))
        for s in range(1, 24)
    ]
    if d > 0 or len(ks) > 0
]


@pytest.mark.parametrize("seed, d_num, Ks, T, hidden", GRAD_CASES)
def test_denoiser_grad_check(seed, d_num, Ks, T, hidden):
    params, x_num, x_cat, schedule = _tiny(seed, d_num, Ks, T, hidden, time_dim=4, n=10)
    noise = draw_noise(x_cat, params.schema, schedule, Rng(seed + 1))
    noise.t[:2] = [1, T]  # both the decoder and the KL branch
    _, grads = loss_given_noise(params, x_num, x_cat, noise, schedule, with_grads=True)

    def f(arrays):
        return loss_given_noise(params.with_arrays(arrays), x_num, x_cat, noise, schedule).total

    assert grad_check(f, params.as_dict(), grads) < 1e-4


def test_grad_case_count():
    assert len(GRAD_CASES) >= 20


# --- training and sampling ---------------------------------------------------------------


@pytest.fixture(scope="module")
def corpus():
    return simulate_students(40, 6, bundled_mastery_params(6), 30, seed=2)


@pytest.fixture(scope="module")
def generator(corpus):
    return tabddpm_train(corpus, GeneratorConfig(T=20, hidden=[64, 64], time_dim=16, steps=600, batch_size=128, seed=0))


def test_training_deterministic(corpus):
    cfg = GeneratorConfig(T=5, hidden=[8], time_dim=4, steps=20, batch_size=32, seed=3)
    assert tabddpm_train(corpus, cfg).loss_curve == tabddpm_train(corpus, cfg).loss_curve


def test_training_loss_decreases(generator):
    curve = np.asarray(generator.loss_curve)
    assert curve[-100:].mean() < curve[:100].mean()


def test_training_numeric_only():
    rng = np.random.default_rng(0)
    schema = TabSchema(["x"], [], [])
    params, _, curve = train_denoiser(rng.normal(size=(200, 1)), np.zeros((200, 0), np.int64), schema,
                                      GeneratorConfig(T=5, hidden=[8], time_dim=4, steps=10, batch_size=32))
    assert len(curve) == 10 and np.all(np.isfinite(curve))


def test_training_needs_100_rows(corpus):
    with pytest.raises(ValueError):
        tabddpm_train(corpus.iloc[:99], GeneratorConfig(steps=1))


def test_training_non_finite_reports_step():
    schema = TabSchema(["x"], ["c"], [2])
    x = np.full((150, 1), np.nan)
    with pytest.raises(TrainingError, match="step 0"):
        train_denoiser(x, np.zeros((150, 1), np.int64), schema, GeneratorConfig(T=3, hidden=[4], time_dim=2, steps=3))


def test_sample_ranges_and_count(generator, corpus):
    syn = tabddpm_sample(generator, 30_000, seed=1)
    assert len(syn) == 30_000
    assert set(syn["user_id"]) <= set(corpus["user_id"])
    assert set(syn["skill_id"]) <= set(corpus["skill_id"])
    assert set(syn["correct"]) <= {0, 1}
    lo, hi = corpus["overlap_time"].min(), corpus["overlap_time"].max()
    assert syn["overlap_time"].between(lo, hi).all()


def test_sample_skill_marginals_close(generator, corpus):
    syn = tabddpm_sample(generator, 5000, seed=2)
    real = corpus["skill_id"].value_counts(normalize=True)
    fake = syn["skill_id"].value_counts(normalize=True).reindex(real.index, fill_value=0.0)
    assert 0.5 * np.abs(real - fake).sum() <= 0.15


def test_sample_empty_and_deterministic_prefix(generator):
    assert len(tabddpm_sample(generator, 0, seed=0)) == 0
    a = tabddpm_sample(generator, 3000, seed=4)
    pd.testing.assert_frame_equal(a, tabddpm_sample(generator, 3000, seed=4))
    pd.testing.assert_frame_equal(a.iloc[:1000], tabddpm_sample(generator, 1000, seed=4))


def test_generator_checkpoint_roundtrip(generator, tmp_path):
    import hashlib

    sha = save_generator(tmp_path / "g.json", generator)
    assert sha == hashlib.sha256((tmp_path / "g.json").read_bytes()).hexdigest()
    back = load_generator(tmp_path / "g.json")
    pd.testing.assert_frame_equal(tabddpm_sample(back, 500, 9), tabddpm_sample(generator, 500, 9))
