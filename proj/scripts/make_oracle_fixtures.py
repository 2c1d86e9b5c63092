#!/usr/bin/env python3
"""Writes the discrete DGP fixtures in fixtures/oracle/.

Table layout (histories in mixed radix, treatment histories in base 2):
  w_prob[t][u + 2*(wbar_{t-1} + H_{t-1} * abar_{t-1})] -> distribution over support[t]
  a_prob[t][u + 2*(wbar_t + H_t * abar_{t-1})]         -> P(A_t = 1)
  y_mean[t][wbar_t + H_t * abar_t]                     -> E(Y_t | history, U = 0)
where H_t is the number of covariate histories through t.
Y_t = y_mean + theta[t] * U + N(0, 1).

Conforming fixtures keep W independent of U, theta constant over time and
A_0 equal to the regime's baseline decision for every unit. Violations break
exactly one of these.
"""

import json
import pathlib

import numpy as np

OUT = pathlib.Path(__file__).resolve().parent.parent / "fixtures" / "oracle"


def n_hist(support, t):
    h = 1
    for m in range(t + 1):
        h *= len(support[m])
    return h


def probs(rng, k):
    if k == 1:
        return [1.0]
    p = rng.uniform(0.2, 1.0, size=k)
    p = np.round(p / p.sum(), 6)
    p[-1] = 1.0 - p[:-1].sum()
    return [float(v) for v in p]


def random_dgp(name, tau, support, seed, baseline_a=0, theta=1.5, w_depends_on_u=False, theta_t=None):
    rng = np.random.default_rng(seed)
    T = tau + 1
    w_prob, a_prob, y_mean = [], [], []
    for t in range(T):
        prev = 1 if t == 0 else n_hist(support, t - 1)
        a_prev = 2**t
        rows = []
        for key in range(prev * a_prev):
            p = probs(rng, len(support[t]))
            if w_depends_on_u and len(p) > 1:
                q = [0.9] + [0.1 / (len(p) - 1)] * (len(p) - 1)
                q[-1] = 1.0 - sum(q[:-1])
                rows.extend([p, q])
            else:
                rows.extend([p, p])
        w_prob.append(rows)
        h = n_hist(support, t)
        a = []
        for key in range(h * a_prev):
            if t == 0:
                a.extend([float(baseline_a), float(baseline_a)])
            else:
                # treatment depends on U: unmeasured confounding
                base = float(np.round(rng.uniform(0.2, 0.6), 6))
                a.extend([base, float(np.round(base + 0.25, 6))])
        a_prob.append(a)
        y_mean.append([float(np.round(v, 6)) for v in rng.normal(0.0, 1.0, size=h * 2 ** (t + 1))])
    return {
        "name": name,
        "tau": tau,
        "support": support,
        "p_u": 0.4,
        "theta": theta_t if theta_t is not None else [theta] * T,
        "w_prob": w_prob,
        "a_prob": a_prob,
        "y_mean": y_mean,
    }


def hand_two_period():
    """
    U ~ Bern(1/2), W_0 ~ Bern(1/2), W_1 ~ Bern(1/2), all independent; A_0 = 0;
    P(A_1 = 1 | U) = U/2; E(Y_0 | .) = W_0 + 2U; E(Y_1 | .) = W_0 + W_1 + 3A_1 + 2U.
    Under never-treat: mu_0 = 1/2 + 1 = 3/2, mu_1 = 1 + 1 = 2.
    P(U = 1 | A_1 = 0) = (1/2 * 1/2) / (1/2 * 1/2 + 1/2) = 1/3, so
    phi_00 = 3/2, phi_11 = 1 + 2/3 = 5/3, phi_01 = 1/2 + 2/3 = 7/6 and
    psi_1 = 3/2 + 5/3 - 7/6 = 2 = mu_1.
    """
    support = [[0.0, 1.0], [0.0, 1.0]]
    w_prob = [[[0.5, 0.5]] * 2, [[0.5, 0.5]] * 8]
    a_prob = [[0.0] * 4, []]
    for key in range(16):  # u + 2 * (wbar_1 + 4 * a_0)
        u = key % 2
        a_prob[1].append(0.5 * u)
    y0 = [0.0, 1.0]  # index w_0 (a_0 block 1 is unreachable)
    y0 = y0 + y0
    y1 = []
    for a_idx in range(4):  # a_0 + 2 a_1
        a1 = a_idx // 2
        for w_idx in range(4):  # w_0 + 2 w_1
            w0, w1 = w_idx % 2, w_idx // 2
            y1.append(float(w0 + w1 + 3 * a1))
    return {
        "name": "hand_two_period",
        "tau": 1,
        "support": support,
        "p_u": 0.5,
        "theta": [2.0, 2.0],
        "w_prob": w_prob,
        "a_prob": a_prob,
        "y_mean": [y0, y1],
        "regime": {"static": [0, 0]},
        "conforming": True,
        "description": hand_two_period.__doc__.strip(),
        "expected": {"mu": [1.5, 2.0], "phi_00": 1.5, "phi_11": 5.0 / 3.0, "phi_01": 7.0 / 6.0},
    }


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    b = [0.0, 1.0]
    tern = [-1.0, 0.0, 1.0]
    fixtures = []

    d = random_dgp("static_never_tau1", 1, [b, b], 11)
    d.update(regime={"static": [0, 0]}, conforming=True, description="never treated, binary W, tau = 1")
    fixtures.append(d)

    d = random_dgp("static_never_tau2_ternary", 2, [tern, tern, tern], 12)
    d.update(regime={"static": [0, 0, 0]}, conforming=True, description="never treated, three-level W, tau = 2")
    fixtures.append(d)

    d = random_dgp("static_never_tau3", 3, [b, b, b, b], 13, theta=-0.8)
    d.update(regime={"static": [0, 0, 0, 0]}, conforming=True, description="never treated, binary W, tau = 3")
    fixtures.append(d)

    d = random_dgp("static_switch_tau2", 2, [b, tern, b], 14)
    d.update(regime={"static": [0, 1, 1]}, conforming=True, description="treatment switched on at t = 1 and kept")
    fixtures.append(d)

    d = random_dgp("dynamic_threshold_tau2", 2, [[0.0], b, tern], 15, theta=2.5)
    d.update(
        regime={"rule": "threshold", "params": {"covariate": "W", "cutoff": 0.5, "above": 1, "below": 0}},
        conforming=True,
        description="dynamic rule A_k = I(W_k > 0.5); W_0 is degenerate at 0 so A_0 = 0 is deterministic",
    )
    fixtures.append(d)

    d = random_dgp("dynamic_table_tau3", 3, [[0.0], tern, b, tern], 16)
    d.update(
        regime={"rule": "table", "params": {"covariate": "W", "cuts": [-0.5, 0.5], "decisions": [1, 0, 1]}},
        conforming=True,
        description="dynamic rule treating when |W_k| = 1; W_0 degenerate at 0",
    )
    fixtures.append(d)

    d = random_dgp("violation_theta_varying", 2, [b, b, b], 21, theta_t=[0.0, 1.0, 3.0])
    d.update(regime={"static": [0, 0, 0]}, conforming=False,
             description="U enters Y with a time-varying coefficient, so trends differ by U")
    fixtures.append(d)

    d = random_dgp("violation_w_depends_on_u", 2, [b, b, b], 22, w_depends_on_u=True, theta=0.0)
    # E(Y_t) = 4 W_t, with W_t the last digit of the history index
    d["y_mean"] = [[float(4.0 * ((i % 2 ** (t + 1)) // 2**t)) for i in range(len(row))] for t, row in enumerate(d["y_mean"])]
    d.update(regime={"static": [0, 0, 0]}, conforming=False,
             description="U shifts the distribution of W, which drives Y; trends differ by U")
    fixtures.append(d)

    fixtures.append(hand_two_period())

    for f in fixtures:
        (OUT / f"{f['name']}.json").write_text(json.dumps(f, indent=1) + "\n")
    print(f"wrote {len(fixtures)} fixtures to {OUT}")


if __name__ == "__main__":
    main()
