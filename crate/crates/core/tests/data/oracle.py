# Independent high-precision evaluation of the frozen values used in
# tests/oracles.rs. Every quantity is built from explicit matrices.
from mpmath import mp, matrix, sqrt, erfc, mpf

mp.dps = 50


def mat(rows):
    return matrix([[mpf(v) for v in r] for r in rows])


def col(v):
    return matrix([[mpf(x)] for x in v])


def trace(a):
    return sum(a[i, i] for i in range(a.rows))


def statistic(y, x, zrows, beta0, t):
    z = mat(zrows)
    n = z.rows
    r = col(y) - col(x) * beta0
    ybar = r / sqrt((r.T * r)[0])
    sbar = z * z.T / n
    quad = (ybar.T * sbar * ybar)[0]
    return sqrt(mpf(n) ** 2 / (2 * t)) * (quad - trace(sbar) / n)


def trace_hat(zrows):
    z = mat(zrows)
    n = z.rows
    s = mpf(0)
    for i in range(n):
        for j in range(n):
            if i != j:
                s += (sum(z[i, c] * z[j, c] for c in range(z.cols))) ** 2
    return s / (n * (n - 1))


def noncentrality(pi, v, eps, zrows, h, t):
    z = mat(zrows)
    n, k = z.rows, z.cols
    pi, v, eps = col(pi), col(v), col(eps)
    s = z.T * z / n
    sbar = z * z.T / n
    trs = trace(s)
    e2 = (eps.T * eps)[0]
    ik, i_n = mp.eye(k), mp.eye(n)
    scale = n / (e2 * (2 * t) ** (mpf(1) / 10))
    t1 = scale * h ** 2 * (pi.T * (s * s - trs / n * ik) * pi)[0]
    t2 = scale * h ** 2 * (v.T * (sbar / n - trs / n ** 2 * i_n) * v)[0]
    t3 = 2 * sqrt(n) / (e2 * (2 * t) ** (mpf(3) / 10)) * h * (v.T * (sbar - trs / n * i_n) * eps)[0]
    return t1, t2, t3


Y4 = [3, -1, 4, 2]
X4 = [1, 2, -1, 0]
Z4 = [[1, 2], [0, 1], [3, -1], [2, 2]]
print("oracle_q_n4_k2_t1", mp.nstr(statistic(Y4, X4, Z4, 0, 1), 25))
th = trace_hat(Z4)
print("trace_hat_n4_k2", mp.nstr(th, 25))
q = statistic(Y4, X4, Z4, 0, th)
print("feasible_q_n4_k2", mp.nstr(q, 25))
print("feasible_p_greater", mp.nstr(erfc(q / sqrt(2)) / 2, 25))
print("oracle_q_n4_k2_beta_half_t3", mp.nstr(statistic(Y4, X4, Z4, mpf(1) / 2, 3), 25))

Z5 = [[1, 0, 2], [-1, 3, 1], [2, 1, 0], [0, -2, 1], [1, 1, -1]]
terms = noncentrality([1, -1, 2], [1, 0, -2, 1, 3], [2, -1, 1, 0, -3], Z5, mpf(3) / 2, 7)
for i, term in enumerate(terms, 1):
    print(f"noncentrality_term{i}", mp.nstr(term, 25))
print("noncentrality_value", mp.nstr(sum(terms), 25))
