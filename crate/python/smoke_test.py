"""Smoke test for the Python bindings.

Build the module first, then run this script:

    cargo build -p irs-slp-py --release --features extension-module
    python3 python/smoke_test.py

The compiled library is found next to this script (irs_slp.so) or in
target/release; set IRS_SLP_LIB to point elsewhere.
"""

import importlib.machinery
import importlib.util
import os
import pathlib
import sys


def load_module():
    here = pathlib.Path(__file__).resolve().parent
    candidates = [
        os.environ.get("IRS_SLP_LIB"),
        here / "irs_slp.so",
        here.parent / "target" / "release" / "libirs_slp_py.so",
        here.parent / "target" / "release" / "libirs_slp_py.dylib",
    ]
    for path in candidates:
        if path and pathlib.Path(path).exists():
            loader = importlib.machinery.ExtensionFileLoader("irs_slp", str(path))
            spec = importlib.util.spec_from_file_location("irs_slp", str(path), loader=loader)
            module = importlib.util.module_from_spec(spec)
            loader.exec_module(module)
            return module
    sys.exit("irs_slp extension not found; build it with "
             "`cargo build -p irs-slp-py --release --features extension-module`")


def main():
    irs = load_module()
    print("irs_slp", irs.__version__)

    qam = irs.Constellation("16qam")
    assert qam.order == 16 and qam.bits_per_symbol == 4 and qam.is_qam
    assert len(qam.points()) == 16
    psk = irs.Constellation("8psk")
    assert all(abs(abs(p) - 1.0) < 1e-12 for p in psk.points())

    ch = irs.Channels.scenario(4, 4, 16, seed=1)
    assert (ch.n_tx, ch.n_users, ch.n_irs) == (4, 4, 16)
    assert len(ch.bs_irs()) == 16 and len(ch.bs_irs()[0]) == 4
    sym = irs.Symbols.random(qam, 4, 5, seed=2)
    assert len(sym.indices()) == 4 and len(sym.indices()[0]) == 5

    designs = {}
    for scheme in ["slp-irs", "slp-noirs", "slp-random-theta", "zf-noirs"]:
        d = irs.solve(ch, sym, scheme=scheme, max_outer=5, seed=3)
        # ZF meets the power budget on block average, not per slot.
        if scheme != "zf-noirs":
            assert d.is_feasible(20.0), scheme
        power = sum(abs(x) ** 2 for row in d.precode() for x in row) / 5
        assert power <= 100.0 * (1 + 1e-9), scheme
        designs[scheme] = d
        print(f"{scheme:17s} exact objective {d.exact_objective(sym):+.4e}")

    joint = designs["slp-irs"]
    hist = joint.objective_history()
    assert 1 <= len(hist) <= 5
    assert all(b <= a + 1e-9 for a, b in zip(hist, hist[1:]))
    assert all(abs(abs(t) - 1.0) < 1e-9 for t in joint.theta())
    assert len(joint.spacing()) == 8
    assert joint.exact_objective(sym) <= joint.smoothed_objective(sym, 0.01) + 1e-12

    clean = irs.simulate(joint, sym, sigma2_db=-60.0, trials=200, seed=4)
    assert clean["bit_errors"] == 0 and clean["bits_total"] == 200 * 4 * 5 * 4
    noisy = irs.simulate(designs["zf-noirs"], sym, sigma2_db=0.0, trials=200, seed=4)
    assert noisy["ber"] > 0.0
    print("BER at 0 dB (zf-noirs):", noisy["ber"])

    err = irs.gradient_check(psk, eta=0.1, instances=20, seed=5)
    assert err < 1e-5, err

    config = """
seed = 7
[system]
n_tx = 2
n_users = 2
n_irs = 4
block_len = 4
[sweep]
noise_db = [-20.0, -5.0]
irs_sizes = [4]
realizations = 3
trials = 5
[solver]
max_outer = 3
apg_max_iter = 100
"""
    csv = irs.sweep(config, threads=1)
    assert csv == irs.sweep(config, threads=1)
    lines = csv.strip().splitlines()
    assert lines[0].startswith("scheme,constellation,N,K,M,T,")
    assert len(lines) == 1 + 4 * 2

    try:
        irs.sweep("[system]\nbogus = 1\n")
    except ValueError as e:
        assert "bogus" in str(e)
    else:
        raise AssertionError("unknown key accepted")

    print("python smoke test passed")


if __name__ == "__main__":
    main()
