"""Exact reverse-mode gradients against central finite differences."""

import numpy as np
import pytest

from composcene.concepts import ConceptSet, coordinate_concept
from composcene.network import composed_denoise, grad_concepts, grad_params

from conftest import randomized_params


def loss_of(params, xt, t, cset, target):
    r = np.asarray(target, np.float64).ravel() - \
        composed_denoise(params, xt, t, cset).ravel()
    return float(r @ r)


def random_instance(arch, seed, k=2):
    gen = np.random.default_rng(seed)
    xt = gen.standard_normal(arch.image_shape)
    target = gen.standard_normal(arch.image_shape)
    cset = ConceptSet(tuple(coordinate_concept(gen.uniform(0.05, 0.95, 2))
                            for _ in range(k)))
    t = int(gen.integers(1, arch.step_count + 1))
    return xt, t, cset, target


def test_concept_grads_match_finite_differences(tiny_arch):
    params = randomized_params(tiny_arch, seed=11)
    h = 1e-4
    for trial in range(6):
        xt, t, cset, target = random_instance(tiny_arch, 100 + trial)
        grads = grad_concepts(params, xt, t, cset, target)
        base = cset.matrix()
        for k in range(cset.k):
            for j in range(2):
                bp, bm = base.copy(), base.copy()
                bp[k, j] += h
                bm[k, j] -= h
                fd = (loss_of(params, xt, t, ConceptSet(tuple(map(coordinate_concept, bp))), target)
                      - loss_of(params, xt, t, ConceptSet(tuple(map(coordinate_concept, bm))), target)) / (2 * h)
                assert grads[k][j] == pytest.approx(fd, rel=1e-3, abs=1e-7)


def test_param_grads_match_finite_differences(tiny_arch):
    params = randomized_params(tiny_arch, seed=12)
    xt, t, cset, target = random_instance(tiny_arch, 200)
    grads = grad_params(params, xt, t, cset, target)
    gen = np.random.default_rng(3)
    names = sorted(params.arrays)
    h = 1e-4
    for _ in range(50):
        name = names[int(gen.integers(len(names)))]
        idx = int(gen.integers(params.arrays[name].size))
        orig = params.arrays[name].copy()
        flat_p, flat_m = orig.ravel().copy(), orig.ravel().copy()
        flat_p[idx] += h
        flat_m[idx] -= h
        realized = (float(flat_p[idx]) - float(flat_m[idx])) / 2.0
        params.arrays[name] = flat_p.reshape(orig.shape)
        params.invalidate()
        lp = loss_of(params, xt, t, cset, target)
        params.arrays[name] = flat_m.reshape(orig.shape)
        params.invalidate()
        lm = loss_of(params, xt, t, cset, target)
        params.arrays[name] = orig
        params.invalidate()
        fd = (lp - lm) / (2.0 * realized)
        an = float(grads[name].ravel()[idx])
        assert an == pytest.approx(fd, rel=1e-3, abs=1e-6)


def test_exact_fit_gives_zero_gradients(tiny_arch):
    params = randomized_params(tiny_arch, seed=13)
    gen = np.random.default_rng(5)
    xt = gen.standard_normal(tiny_arch.image_shape)
    cset = ConceptSet(tuple(coordinate_concept(gen.uniform(0, 1, 2)) for _ in range(2)))
    target = composed_denoise(params, xt, 8, cset)
    for g in grad_concepts(params, xt, 8, cset, target):
        assert np.array_equal(g, np.zeros(2))
    for g in grad_params(params, xt, 8, cset, target).values():
        assert np.array_equal(g, np.zeros(g.shape))


def test_identical_concepts_get_identical_gradients(tiny_arch):
    params = randomized_params(tiny_arch, seed=14)
    gen = np.random.default_rng(6)
    xt = gen.standard_normal(tiny_arch.image_shape)
    target = gen.standard_normal(tiny_arch.image_shape)
    c = coordinate_concept([0.62, 0.31])
    g1, g2 = grad_concepts(params, xt, 4, ConceptSet((c, c)), target)
    assert np.array_equal(g1, g2)


def test_duplicate_output_rows_get_identical_gradients(tiny_arch):
    params = randomized_params(tiny_arch, seed=15)
    # make output rows 0 and 1 identical, and feed matching pixels/targets
    for name in ("out.Wx", "out.Wq", "out.Vs", "out.Us"):
        params.arrays[name][1] = params.arrays[name][0]
    for name in ("out.b", "out.cs"):
        params.arrays[name][1] = params.arrays[name][0]
    params.invalidate()
    gen = np.random.default_rng(7)
    xt = gen.standard_normal(tiny_arch.image_shape).ravel()
    xt[1] = xt[0]
    target = gen.standard_normal(tiny_arch.image_shape).ravel()
    target[1] = target[0]
    cset = ConceptSet((coordinate_concept([0.5, 0.5]),))
    grads = grad_params(params, xt.reshape(tiny_arch.image_shape), 6, cset,
                        target.reshape(tiny_arch.image_shape))
    for name in ("out.Wx", "out.Wq", "out.Vs", "out.Us", "out.b", "out.cs"):
        assert np.array_equal(grads[name][0], grads[name][1]), name


def test_rbf_concept_grads_match_finite_differences():
    from composcene.network import Architecture
    arch = Architecture(image_shape=(5, 4, 1), concept_dim=2, step_count=30,
                        hidden_sizes=(9,), time_embed_dim=6,
                        concept_encoding="rbf", rbf_grid=4)
    params = randomized_params(arch, seed=16)
    xt, t, cset, target = random_instance(arch, 300)
    grads = grad_concepts(params, xt, t, cset, target)
    h = 1e-5
    base = cset.matrix()
    for k in range(cset.k):
        for j in range(2):
            bp, bm = base.copy(), base.copy()
            bp[k, j] += h
            bm[k, j] -= h
            fd = (loss_of(params, xt, t, ConceptSet(tuple(map(coordinate_concept, bp))), target)
                  - loss_of(params, xt, t, ConceptSet(tuple(map(coordinate_concept, bm))), target)) / (2 * h)
            assert grads[k][j] == pytest.approx(fd, rel=1e-3, abs=1e-7)
