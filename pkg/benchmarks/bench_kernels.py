"""Compare the numba and pure-numpy kernel backends.

Each backend runs in its own interpreter because the backend flag is read at
import time. Timings exclude the first (compiling) call.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import json
import os
import subprocess
import sys
import textwrap

WORKLOAD = textwrap.dedent("""
    import json, time
    import numpy as np
    from sigkin import robot_model as rm, verifier as vf
    from sigkin.kernels._accel import BACKEND

    repeat = int(__import__("sys").argv[1])
    chain = rm.load_chain()
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(300, 18)), rng.normal(size=(280, 18))
    poses = [rm.forward_kinematics(chain, q) for q in rng.uniform(-np.pi, np.pi, (50, 6))]
    th, om, ac = rng.normal(size=(3, 2000, 6))

    def dtw():
        vf.dtw_distance(a, b)

    def ik():
        for T in poses:
            rm.solve_ik(chain, T, np.zeros(6))

    def rnea():
        rm.inverse_dynamics(chain, th, om, ac)

    out = {"backend": BACKEND}
    for name, fn in (("dtw 300x280x18", dtw), ("ik 50 poses", ik), ("rnea 2000 samples", rnea)):
        fn()
        best = np.inf
        for _ in range(repeat):
            t0 = time.perf_counter()
            fn()
            best = min(best, time.perf_counter() - t0)
        out[name] = best
    print(json.dumps(out))
""")


def run_backend(pure, repeat):
    env = dict(os.environ, SIGKIN_PURE_NUMPY="1" if pure else "0")
    res = subprocess.run([sys.executable, "-c", WORKLOAD, str(repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)
    fast, slow = run_backend(False, args.repeat), run_backend(True, args.repeat)
    print(f"{'kernel':<20}{'numba (s)':>12}{'numpy (s)':>12}{'speedup':>10}")
    for name in fast:
        if name == "backend":
            continue
        print(f"{name:<20}{fast[name]:>12.4f}{slow[name]:>12.4f}{slow[name] / fast[name]:>9.1f}x")


if __name__ == "__main__":
    main()
