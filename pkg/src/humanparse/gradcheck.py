"""Central-finite-difference verification of analytic gradients.

The harness scalarizes a vector-valued op through a fixed random projection
U: L(args) = sum(forward(args) * U).  The analytic side is then one call to
the op's backward with dy = U; the numeric side perturbs entries (or whole
random directions) of every differentiable argument and central-differences
L.  Relative errors use an absolute floor of 1e-8 in the denominator.

Three probing modes, combinable:
  * full          every entry of every argument (entries=None, the default),
  * entries=k     a seeded sample of k entries drawn from the joint argument
                  space (entries=0 disables entry probing),
  * directions=k  k random unit directions through the joint argument space
                  (one central difference per direction; the only affordable
                  probe for multi-million-parameter compositions).
"""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

REL_FLOOR = 1e-8


def relative_error(a: float, b: float, floor: float = REL_FLOOR) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def numeric_gradcheck(
    forward: Callable[[Mapping[str, np.ndarray]], np.ndarray],
    backward: Callable[[Mapping[str, np.ndarray], np.ndarray], Mapping[str, np.ndarray]],
    args: Mapping[str, np.ndarray],
    *,
    eps: float = 1e-5,
    entries: int | None = None,
    directions: int = 0,
    seed: int = 0,
) -> float:
    """Return the worst relative error between analytic and numeric gradients.

    forward(args) -> ndarray (any shape; scalars allowed).
    backward(args, dy) -> dict of gradients, one entry per differentiable arg.
    Only the keys returned by ``backward`` are probed.  Raises if any value
    encountered is non-finite.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    args = {k: np.asarray(v, dtype=np.float64) for k, v in args.items()}

    y0 = np.asarray(forward(args), dtype=np.float64)
    if not np.all(np.isfinite(y0)):
        raise ValueError("forward produced non-finite values")
    proj_rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA11CE]))
    u = proj_rng.uniform(0.5, 1.5, size=y0.shape)
    # Normalize the projection so |L| ~ 1e-2: the difference-quotient noise,
    # ulp(L) / (2 eps), then sits far below the 1e-8 relative-error floor and
    # unmeasurably small gradient entries cannot raise spurious alarms.
    u /= 100.0 * max(1.0, abs(float(np.sum(y0 * u))))

    def loss(a: Mapping[str, np.ndarray]) -> float:
        y = np.asarray(forward(a), dtype=np.float64)
        if not np.all(np.isfinite(y)):
            raise ValueError("forward produced non-finite values")
        return float(np.sum(y * u))

    grads = backward(args, u.reshape(y0.shape))
    for key, g in grads.items():
        if not np.all(np.isfinite(np.asarray(g))):
            raise ValueError(f"analytic gradient for {key!r} is non-finite")
        if np.asarray(g).shape != args[key].shape:
            raise ValueError(
                f"gradient shape {np.asarray(g).shape} != arg shape {args[key].shape} for {key!r}"
            )

    worst = 0.0
    sample_rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5A3D]))

    keys = list(grads)
    sizes = [args[k].size for k in keys]
    total = sum(sizes)
    if entries is None:
        probe = range(total)
    elif entries >= total:
        probe = range(total)
    elif entries > 0:
        probe = np.sort(sample_rng.choice(total, size=entries, replace=False))
    else:
        probe = ()
    offsets = np.cumsum([0] + sizes)
    for joint in probe:
        which = int(np.searchsorted(offsets, joint, side="right")) - 1
        key = keys[which]
        i = int(joint - offsets[which])
        flat = args[key].reshape(-1)
        g = np.asarray(grads[key]).reshape(-1)
        orig = flat[i]
        flat[i] = orig + eps
        lp = loss(args)
        flat[i] = orig - eps
        lm = loss(args)
        flat[i] = orig
        numeric = (lp - lm) / (2 * eps)
        worst = max(worst, relative_error(float(g[i]), numeric))

    for _ in range(directions):
        vs = {k: sample_rng.standard_normal(args[k].shape) for k in grads}
        norm = np.sqrt(sum(float(np.sum(v * v)) for v in vs.values()))
        analytic = 0.0
        for k, v in vs.items():
            v /= norm
            analytic += float(np.sum(np.asarray(grads[k]) * v))
        shifted = {k: (args[k] + eps * vs[k] if k in vs else args[k]) for k in args}
        lp = loss(shifted)
        shifted = {k: (args[k] - eps * vs[k] if k in vs else args[k]) for k in args}
        lm = loss(shifted)
        numeric = (lp - lm) / (2 * eps)
        worst = max(worst, relative_error(analytic, numeric))

    return worst
