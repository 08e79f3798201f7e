"""Generated click datasets with known interaction structure.

Each generator draws per-category latent values, builds a logit from them
and samples labels from its sigmoid. Index 0 (the out-of-vocabulary slot)
is never drawn, so every table row except row 0 can be observed.
"""
import numpy as np

from .features import EncodedDataset, FieldSpec


def _sigmoid(s):
    return 1.0 / (1.0 + np.exp(-s))


def _draw_categories(rng, n, fields, cardinality, skew):
    # category c in 1..cardinality-1 with probability proportional to c**-skew
    ranks = np.arange(1, cardinality, dtype=np.float64)
    p = ranks ** -skew
    p /= p.sum()
    return rng.choice(np.arange(1, cardinality), size=(n, fields), p=p).astype(np.int64)


def _labels(rng, logits):
    return (rng.random(len(logits)) < _sigmoid(logits)).astype(np.float64)


def second_order(n=50_000, fields=4, cardinality=50, strength=3.0, skew=0.0, seed=0):
    """Label depends only on the product of fields 0 and 1's scalar latents.

    ``p(y=1) = sigmoid(strength * u0[c0] * u1[c1])`` with standard-normal
    latents; the remaining fields are irrelevant and no field carries any
    first-order signal on average.
    """
    rng = np.random.default_rng(seed)
    idx = _draw_categories(rng, n, fields, cardinality, skew)
    u = rng.standard_normal((2, cardinality))
    logits = strength * u[0, idx[:, 0]] * u[1, idx[:, 1]]
    return EncodedDataset(idx, _labels(rng, logits), [cardinality] * fields)


def bit_crossed(n=50_000, fields=4, latent_dim=4, cardinality=20, strength=1.5, skew=0.0,
                seed=0):
    """Label depends on cross-coordinate products of per-category latent vectors.

    ``logit = strength * sum_{f<g} a_f^T M_fg a_g`` with a dense random
    ``M_fg`` for every field pair, so coordinate ``i`` of one field meets
    coordinate ``j != i`` of another.
    """
    rng = np.random.default_rng(seed)
    idx = _draw_categories(rng, n, fields, cardinality, skew)
    a = rng.standard_normal((fields, cardinality, latent_dim))
    logits = np.zeros(n)
    for f in range(fields):
        for g in range(f + 1, fields):
            m = rng.standard_normal((latent_dim, latent_dim)) / latent_dim
            logits += np.einsum("ni,ij,nj->n", a[f, idx[:, f]], m, a[g, idx[:, g]])
    logits *= strength
    return EncodedDataset(idx, _labels(rng, logits), [cardinality] * fields)


def noisy_fields(n=50_000, signal_fields=4, noise_fields=4, cardinality=50, strength=1.0,
                 skew=0.0, seed=0):
    """First-order signal fields followed by fields independent of the label.

    Signal field ``f`` contributes ``strength * v_f[c_f]`` with standard-normal
    ``v``; the noise fields come last and share the same category
    distribution, so the only difference is the absence of signal.
    """
    rng = np.random.default_rng(seed)
    fields = signal_fields + noise_fields
    idx = _draw_categories(rng, n, fields, cardinality, skew)
    v = rng.standard_normal((signal_fields, cardinality))
    logits = strength * sum(v[f, idx[:, f]] for f in range(signal_fields))
    return EncodedDataset(idx, _labels(rng, logits), [cardinality] * fields)


GENERATORS = {
    "second_order": second_order,
    "bit_crossed": bit_crossed,
    "noisy_fields": noisy_fields,
}


def to_rows(ds, label="label"):
    """Raw rows (dicts of tokens) for an encoded dataset, e.g. to write a TSV."""
    names = [f"f{f}" for f in range(ds.field_count)]
    for row, y in zip(ds.indices.tolist(), ds.labels.tolist()):
        out = {label: str(int(y))}
        for name, c in zip(names, row):
            out[name] = f"c{c}"
        yield out


def schema_for(ds):
    return [FieldSpec(f"f{f}", "categorical", "none") for f in range(ds.field_count)]
