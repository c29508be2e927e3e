import numpy as np
import pytest

from triforecast import autodiff as ad
from triforecast.autodiff import Parameter, Tensor
from triforecast.vsm import (
    CoreGenerator,
    ProjectionFactors,
    VariableMemory,
    export_memories_csv,
    generate_core,
    materialize_projections,
    parameter_count,
)

from helpers import core_generator_loops, triple_matmul_loops


def make_generator(rng, m, a):
    return CoreGenerator(
        Parameter(rng.standard_normal((m, a * a))),
        Parameter(rng.standard_normal(a * a)),
    )


def make_factors(rng, d, a):
    return ProjectionFactors(
        Parameter(rng.standard_normal((d, a))),
        Parameter(rng.standard_normal((a, d))),
    )


# ---------------------------------------------------------------------------
# core generator


def test_zero_memory_zero_bias_gives_zero_core():
    m, a = 3, 2
    gen = CoreGenerator(Parameter(np.random.default_rng(0).standard_normal((m, a * a))), Parameter(np.zeros(a * a)))
    core = generate_core(Tensor(np.zeros(m)), gen)
    assert np.array_equal(core.data, np.zeros((a, a)))


def test_identical_memories_give_identical_cores():
    rng = np.random.default_rng(1)
    m, a = 4, 3
    gen = make_generator(rng, m, a)
    row = rng.standard_normal(m)
    cores = generate_core(Tensor(np.stack([row, row])), gen).data
    assert np.array_equal(cores[0], cores[1])


def test_core_matches_scalar_affine_oracle():
    rng = np.random.default_rng(2)
    m, a = 5, 3
    gen = make_generator(rng, m, a)
    row = rng.standard_normal(m)
    got = generate_core(Tensor(row), gen).data
    want = core_generator_loops(row, gen.weight.data, gen.bias.data, a)
    assert np.abs(got - want).max() < 1e-12


# ---------------------------------------------------------------------------
# materialization


def test_zero_generator_annihilates_projections():
    n, d, m, a = 3, 4, 2, 2
    rng = np.random.default_rng(3)
    gen = CoreGenerator(Parameter(np.zeros((m, a * a))), Parameter(np.zeros(a * a)))
    factors = make_factors(rng, d, a)
    memories = Tensor(rng.standard_normal((n, m)))
    wk, wv = materialize_projections(memories, gen, gen, factors, factors)
    assert np.array_equal(wk.data, np.zeros((n, d, d)))
    assert np.array_equal(wv.data, np.zeros((n, d, d)))


def test_identical_memories_degenerate_to_variable_agnostic():
    rng = np.random.default_rng(4)
    n, d, m, a = 3, 4, 2, 2
    row = rng.standard_normal(m)
    memories = Tensor(np.tile(row, (n, 1)))
    wk, wv = materialize_projections(
        memories, make_generator(rng, m, a), make_generator(rng, m, a),
        make_factors(rng, d, a), make_factors(rng, d, a),
    )
    for stack in (wk.data, wv.data):
        for i in range(1, n):
            assert np.array_equal(stack[0], stack[i])


def test_materialization_matches_triple_matmul_oracle():
    rng = np.random.default_rng(5)
    n, d, m, a = 3, 4, 2, 2
    gen_k = make_generator(rng, m, a)
    gen_v = make_generator(rng, m, a)
    fac_k = make_factors(rng, d, a)
    fac_v = make_factors(rng, d, a)
    memories = rng.standard_normal((n, m))
    wk, wv = materialize_projections(Tensor(memories), gen_k, gen_v, fac_k, fac_v)
    for i in range(n):
        core_k = core_generator_loops(memories[i], gen_k.weight.data, gen_k.bias.data, a)
        core_v = core_generator_loops(memories[i], gen_v.weight.data, gen_v.bias.data, a)
        assert np.abs(wk.data[i] - triple_matmul_loops(fac_k.left.data, core_k, fac_k.right.data)).max() < 1e-12
        assert np.abs(wv.data[i] - triple_matmul_loops(fac_v.left.data, core_v, fac_v.right.data)).max() < 1e-12


def test_distinct_memories_give_distinct_projections():
    rng = np.random.default_rng(6)
    n, d, m, a = 4, 6, 3, 2
    memories = Tensor(rng.standard_normal((n, m)))
    wk, _ = materialize_projections(
        memories, make_generator(rng, m, a), make_generator(rng, m, a),
        make_factors(rng, d, a), make_factors(rng, d, a),
    )
    for i in range(n):
        for j in range(i + 1, n):
            assert np.abs(wk.data[i] - wk.data[j]).max() > 1e-8


def test_materialization_is_permutation_equivariant():
    rng = np.random.default_rng(7)
    n, d, m, a = 4, 3, 2, 2
    gen_k = make_generator(rng, m, a)
    gen_v = make_generator(rng, m, a)
    fac_k = make_factors(rng, d, a)
    fac_v = make_factors(rng, d, a)
    memories = rng.standard_normal((n, m))
    perm = np.array([2, 0, 3, 1])
    wk, _ = materialize_projections(Tensor(memories), gen_k, gen_v, fac_k, fac_v)
    wk_p, _ = materialize_projections(Tensor(memories[perm]), gen_k, gen_v, fac_k, fac_v)
    assert np.array_equal(wk_p.data, wk.data[perm])


def test_gradients_reach_memories_and_factors():
    rng = np.random.default_rng(8)
    n, d, m, a = 2, 3, 2, 2
    memories = VariableMemory(n, m, rng)
    gen_k = make_generator(rng, m, a)
    gen_v = make_generator(rng, m, a)
    fac_k = make_factors(rng, d, a)
    fac_v = make_factors(rng, d, a)
    wk, wv = materialize_projections(memories.values, gen_k, gen_v, fac_k, fac_v)
    ad.mean(ad.add(wk, wv)).backward()
    assert np.abs(memories.values.grad).max() > 0
    assert np.abs(gen_k.weight.grad).max() > 0
    assert np.abs(fac_k.left.grad).max() > 0


# ---------------------------------------------------------------------------
# parameter accounting


def test_parameter_count_reference_points():
    assert parameter_count("naive", 321, 32, 5, 5, 1) == 657_408
    assert parameter_count("light", 321, 32, 5, 5, 1) == 2_545
    assert parameter_count("agnostic", 1, 32, 5, 5, 1) == 2_048
    assert parameter_count("agnostic", 1, 32, 5, 5, 1) == parameter_count("naive", 1, 32, 5, 5, 1)


def test_light_mode_ratio_below_half_percent_at_reference_scale():
    light = parameter_count("light", 321, 32, 5, 5, 1)
    naive = parameter_count("naive", 321, 32, 5, 5, 1)
    assert light / naive < 0.004


@pytest.mark.parametrize("layers", [1, 2, 4])
def test_light_beats_naive_whenever_the_closed_form_says_so(layers):
    for n, d, m, a in [(8, 16, 4, 4), (32, 32, 5, 5), (128, 64, 8, 8)]:
        light = parameter_count("light", n, d, m, a, layers)
        naive = parameter_count("naive", n, d, m, a, layers)
        lighter = n * m + layers * (2 * (m * a * a + a * a) + 4 * d * a) < layers * 2 * n * d * d
        assert (light < naive) == lighter


def test_parameter_count_formulas_match_live_parameter_shapes():
    rng = np.random.default_rng(9)
    n, d, m, a = 5, 8, 3, 2
    memories = VariableMemory(n, m, rng)
    gen = make_generator(rng, m, a)
    fac = make_factors(rng, d, a)
    per_layer = 2 * (gen.weight.size + gen.bias.size) + 2 * (fac.left.size + fac.right.size)
    assert parameter_count("light", n, d, m, a, 3) == memories.values.size + 3 * per_layer


def test_parameter_count_rejects_nonsense():
    with pytest.raises(ad.ConfigurationError):
        parameter_count("light", 0, 32, 5, 5, 1)
    with pytest.raises(ad.ConfigurationError):
        parameter_count("heavy", 3, 32, 5, 5, 1)


# ---------------------------------------------------------------------------
# export


def test_memory_export_round_trips_exactly(tmp_path):
    rng = np.random.default_rng(10)
    mem = rng.standard_normal((3, 5))
    path = tmp_path / "memories.csv"
    export_memories_csv(mem, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "var_0,var_1,var_2,var_3,var_4"
    assert len(lines) == 4
    parsed = np.array([[float(c) for c in line.split(",")] for line in lines[1:]])
    assert np.array_equal(parsed, mem)
