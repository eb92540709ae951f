"""Independent brute-force oracle for the frozen values in frozen_values.rs.

Enumerates ordered candidate tuples and LSR rankings directly and takes
gradients with torch autograd. Regenerate with

    python3 crates/core/tests/oracle/frozen.py > crates/core/tests/oracle/frozen_values.rs
"""

import itertools
import math

import torch

torch.set_default_dtype(torch.float64)

U, N, D, M = 2, 5, 2, 2
ASG = [0, 1, 1]
TAU = 0.7
LSR_TAU = 0.8
L = 2
ALPHA = [1.0 / math.log2(l + 2) for l in range(L)]
DRAW = [3, 0, 4]


def user_entry(m, x, j):
    return 0.9 * math.sin(1.3 * (1 + 11 * m + 3 * x + j))


def item_entry(m, a, j):
    return 1.1 * math.cos(0.7 * (2 + 5 * m + 2 * a + j))


def q_entry(x, a):
    return 1.0 + 0.6 * math.sin(0.9 * (5 * x + a) + 0.3) + 0.1 * a


def leaves():
    out = []
    for m in range(M):
        u = torch.tensor([[user_entry(m, x, j) for j in range(D)] for x in range(U)], requires_grad=True)
        v = torch.tensor([[item_entry(m, a, j) for j in range(D)] for a in range(N)], requires_grad=True)
        out += [u, v]
    return out


def logits(p, x):
    return torch.stack([p[2 * m][x] @ p[2 * m + 1].T / TAU for m in range(M)])


Q = torch.tensor([[q_entry(x, a) for a in range(N)] for x in range(U)])


def log_pl(s, t):
    """Ordered log-probability of tuple t with expert ASG[k] at position k."""
    total = 0.0
    used = []
    for k, a in enumerate(t):
        row = s[ASG[k]]
        mask = torch.tensor([b not in used for b in range(N)])
        total = total + row[a] - torch.logsumexp(row[mask], 0)
        used.append(a)
    return total


def log_pl_swr(s, t):
    return sum(s[ASG[k]][a] - torch.logsumexp(s[ASG[k]], 0) for k, a in enumerate(t))


def capg_prefix(s, a):
    prefix = []
    for k in range(len(ASG) - 1):
        row = s[ASG[k]].detach()
        best = max((b for b in range(N) if b != a and b not in prefix), key=lambda b: float(row[b]))
        prefix.append(best)
    return prefix


def capg(s, a):
    prefix = capg_prefix(s, a)
    keep = 1.0
    for k, m in enumerate(ASG):
        row = s[m]
        denom = torch.exp(row).sum() - sum(torch.exp(row[b]) for b in prefix[:k]) if k else torch.exp(row).sum()
        keep = keep * (1 - torch.exp(row[a]) / denom)
    return torch.log(1 - keep)


def capg_swr(s, a):
    return torch.logsumexp(torch.stack([s[m][a] - torch.logsumexp(s[m], 0) for m in ASG]), 0)


def exact_capg(s, a):
    terms = [log_pl(s, t) for t in itertools.permutations(range(N), len(ASG)) if a in t]
    return torch.logsumexp(torch.stack(terms), 0)


def lsr_marginals(x, cands):
    """Position marginals of a Plackett-Luce ranking with logits q / LSR_TAU."""
    z = [float(Q[x][a]) / LSR_TAU for a in cands]
    out = [[0.0] * len(cands) for _ in range(L)]
    for r in itertools.permutations(range(len(cands)), L):
        p = 1.0
        left = list(range(len(cands)))
        for i in r:
            p *= math.exp(z[i]) / sum(math.exp(z[j]) for j in left)
            left.remove(i)
        for l, i in enumerate(r):
            out[l][i] += p
    return out


def flat_grad(value, p):
    gs = torch.autograd.grad(value, p, allow_unused=True)
    return [float(v) for g, t in zip(gs, p) for v in (torch.zeros_like(t) if g is None else g).flatten()]


def tuples():
    return list(itertools.permutations(range(N), len(ASG)))


def policy_value(p):
    total = 0.0
    for x in range(U):
        s = logits(p, x)
        for t in tuples():
            marg = lsr_marginals(x, t)
            rew = sum(ALPHA[l] * marg[l][i] * float(Q[x][a]) for l in range(L) for i, a in enumerate(t))
            total = total + torch.exp(log_pl(s, t)) * rew
    return total / U


def expected_surrogate(p, route):
    """Sum whose gradient is the exact expectation of the per-sample estimator."""
    total = 0.0
    for x in range(U):
        s = logits(p, x)
        for t in tuples():
            prob = float(torch.exp(log_pl(s, t)).detach())
            marg = lsr_marginals(x, t)
            if route in ("vpg", "vpg_swr"):
                rew = sum(ALPHA[l] * marg[l][i] * float(Q[x][a]) for l in range(L) for i, a in enumerate(t))
                score = log_pl(s, t) if route == "vpg" else log_pl_swr(s, t)
                total = total + prob * rew * score
            else:
                f = {"capg": capg, "capg_swr": capg_swr, "exact": exact_capg}[route]
                for i, a in enumerate(t):
                    shown = sum(ALPHA[l] * marg[l][i] for l in range(L))
                    total = total + prob * shown * float(Q[x][a]) * f(s, a)
    return total / U


def propensity(x):
    p = leaves()
    s = logits(p, x).detach()
    num = [0.0] * N
    den = [0.0] * N
    for t in tuples():
        prob = float(torch.exp(log_pl(s, t)).detach())
        marg = lsr_marginals(x, t)
        for i, a in enumerate(t):
            den[a] += prob
            num[a] += prob * sum(ALPHA[l] * marg[l][i] for l in range(L))
    return [n / d for n, d in zip(num, den)]


def emit(name, values):
    body = ", ".join(repr(float(v)) for v in values)
    print(f"pub const {name}: [f64; {len(values)}] = [{body}];")


def emit_scalar(name, value):
    print(f"pub const {name}: f64 = {float(torch.as_tensor(value).detach())!r};")


def main():
    print("// Generated by frozen.py; do not edit by hand.")
    p = leaves()
    s0 = logits(p, 0)
    emit("LOGITS_X0", s0.detach().flatten().tolist())

    v = log_pl(s0, DRAW)
    emit_scalar("VPG_VALUE", v)
    emit("VPG_GRAD", flat_grad(v, p))
    v = log_pl_swr(logits(p, 0), DRAW)
    emit_scalar("VPG_SWR_VALUE", v)
    emit("VPG_SWR_GRAD", flat_grad(v, p))

    for name, f in (("CAPG", capg), ("CAPG_SWR", capg_swr), ("EXACT_CAPG", exact_capg)):
        emit(f"{name}_VALUES", [float(f(logits(p, 0), a).detach()) for a in range(N)])
        emit(f"{name}_GRAD_ITEM2", flat_grad(f(logits(p, 0), 2), p))

    m = lsr_marginals(0, DRAW)
    emit("LSR_MARGINALS", m[0] + m[1])

    emit_scalar("POLICY_VALUE", policy_value(p))
    emit("VALUE_GRAD", flat_grad(policy_value(p), p))
    for route in ("vpg", "vpg_swr", "capg", "capg_swr", "exact"):
        emit(f"EXPECTED_{route.upper()}", flat_grad(expected_surrogate(p, route), p))
    emit("PROPENSITY_X0", propensity(0))

    # Single-expert Plackett-Luce pair probabilities for the sampler check.
    z = [0.3, -1.2, 0.8, 0.0, 1.5]
    pairs = []
    for a, b in itertools.permutations(range(5), 2):
        pa = math.exp(z[a]) / sum(math.exp(v) for v in z)
        pb = math.exp(z[b]) / sum(math.exp(v) for i, v in enumerate(z) if i != a)
        pairs.append(pa * pb)
    emit("PAIR_LOGITS", z)
    emit("PAIR_PROBS", pairs)


if __name__ == "__main__":
    main()
