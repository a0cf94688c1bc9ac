import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.integrate import quad
rng = np.random.default_rng(20261019)
out = []
for i in range(20):
    n1, n2 = rng.integers(4, 8, size=2)
    def mk(n):
        bpp = np.sort(rng.uniform(0.02, 1.5, size=n))
        while np.any(np.diff(bpp) < 1e-3): bpp = np.sort(rng.uniform(0.02,1.5,size=n))
        ps = np.cumsum(np.concatenate([[rng.uniform(24,30)], rng.uniform(0.3,3.0,size=n-1)]))
        return bpp, ps
    b1, p1 = mk(n1); b2, p2 = mk(n2)
    f1 = PchipInterpolator(p1, np.log10(b1)); f2 = PchipInterpolator(p2, np.log10(b2))
    lo = max(p1.min(), p2.min()); hi = min(p1.max(), p2.max())
    i1 = quad(f1, lo, hi, epsabs=1e-13, epsrel=1e-13, limit=200)[0]
    i2 = quad(f2, lo, hi, epsabs=1e-13, epsrel=1e-13, limit=200)[0]
    bd = (10**((i2-i1)/(hi-lo)) - 1)*100
    fmt = lambda b,p: "&[" + ", ".join(f"({float(x)!r}, {float(y)!r})" for x,y in zip(b,p)) + "]"
    out.append(f"    ({fmt(b1,p1)}, {fmt(b2,p2)}, {float(bd)!r}),")
print("\n".join(out))
