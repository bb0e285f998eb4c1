"""Exact rational least squares on the six-document fixture.

Writes ../fixtures/expected/ols_six.json with the coefficients of
theta ~ 1 + positive + p_aae + positive:p_aae.
"""
import csv
import json
from fractions import Fraction

from preprocess import FIX


def solve(a, b):
    n = len(a)
    m = [row[:] + [b[i]] for i, row in enumerate(a)]
    for col in range(n):
        piv = next(r for r in range(col, n) if m[r][col] != 0)
        m[col], m[piv] = m[piv], m[col]
        for r in range(n):
            if r != col and m[r][col] != 0:
                f = m[r][col] / m[col][col]
                m[r] = [x - f * y for x, y in zip(m[r], m[col])]
    return [m[i][n] / m[i][i] for i in range(n)]


def main():
    rows = list(csv.DictReader(open(FIX / "ols_six.csv")))
    x = []
    y = []
    for r in rows:
        a = Fraction(r["positive"])
        p = Fraction(r["p_aae"])
        x.append([Fraction(1), a, p, a * p])
        y.append(Fraction(r["theta"]))
    xtx = [[sum(x[d][i] * x[d][j] for d in range(len(x))) for j in range(4)] for i in range(4)]
    xty = [sum(x[d][i] * y[d] for d in range(len(x))) for i in range(4)]
    b = solve(xtx, xty)
    resid = [y[d] - sum(x[d][j] * b[j] for j in range(4)) for d in range(len(x))]
    rss = sum(r * r for r in resid)
    out = {
        "coef": [float(v) for v in b],
        "coef_exact": [str(v) for v in b],
        "sigma2": float(rss / (len(x) - 4)),
    }
    (FIX / "expected" / "ols_six.json").write_text(json.dumps(out, indent=1) + "\n")
    print(out)


if __name__ == "__main__":
    main()
