"""Grid-search mode and exact posterior mean for the K=2 toy instance.

f(eta) = -(eta - mu)^2 / (2 sigma2) + sum_v c_v log(theta1 beta_1v + theta2 beta_2v),
theta1 = exp(eta) / (1 + exp(eta)). Writes ../fixtures/expected/laplace_toy.json.
"""
import json
import math

from scipy import integrate

from preprocess import FIX


def main():
    toy = json.loads((FIX / "laplace_toy.json").read_text())
    beta, counts, mu, s2 = toy["beta"], toy["counts"], toy["mu"], toy["sigma2"]

    def f(eta):
        t1 = 1.0 / (1.0 + math.exp(-eta))
        t2 = 1.0 - t1
        lik = sum(c * math.log(t1 * beta[0][v] + t2 * beta[1][v]) for v, c in counts)
        return -0.5 * (eta - mu) ** 2 / s2 + lik

    best, arg = -math.inf, None
    for i in range(200001):
        eta = -10.0 + i * 1e-4
        val = f(eta)
        if val > best:
            best, arg = val, eta
    peak = f(arg)
    dens = lambda e: math.exp(f(e) - peak)
    z, _ = integrate.quad(dens, -40, 40, epsabs=1e-13, epsrel=1e-12, limit=400)
    m, _ = integrate.quad(lambda e: dens(e) / (1.0 + math.exp(-e)), -40, 40, epsabs=1e-13, epsrel=1e-12, limit=400)
    out = {"eta_hat_grid": arg, "f_at_grid": peak, "posterior_mean_theta1": m / z}
    (FIX / "expected" / "laplace_toy.json").write_text(json.dumps(out, indent=1) + "\n")
    print(out)


if __name__ == "__main__":
    main()
