"""Exercises the kernelsim extension end to end. Run after installing it."""

import json

import kernelsim


def main():
    trace, expected = kernelsim.generate(fixture="convnet")
    w = kernelsim.Workload(trace)
    assert w.makespan == expected, (w.makespan, expected)
    assert kernelsim.Workload(json.dumps(trace)).makespan == expected

    sim = w.simulate()
    b = sim["breakdown"]
    assert b["cpu_only"] + b["gpu_only"] + b["parallel"] + b["idle"] == sim["makespan"]
    assert w.stats()["tasks"] == len(trace["events"])

    same = w.whatif({"steps": []})
    assert same["predicted_makespan"] == expected and same["speedup"] == 0.0
    amp = w.whatif("amp")
    assert amp["predicted_makespan"] < expected

    sweep = w.sweep({"scenario": "distributed", "params": {"workers": 4}}, "bandwidth_gbps", [10, 20, 40])
    spans = [p["makespan"] for p in sweep["points"]]
    assert spans == sorted(spans, reverse=True), spans

    tl = w.timeline("amp")
    assert tl["otherData"]["makespan_ns"] == amp["predicted_makespan"]

    names = {s["name"] for s in kernelsim.scenarios()}
    assert {"amp", "fused_adam", "distributed", "p3", "vdnn"} <= names
    assert "convnet" in kernelsim.fixtures()

    rand, want = kernelsim.generate(random=300, seed=3)
    assert kernelsim.Workload(rand).makespan == want

    fa, _ = kernelsim.generate(fixture="amp_cpu_bound")
    try:
        kernelsim.Workload(fa).whatif("fused_adam")
    except kernelsim.KernelsimError as e:
        assert e.args[0] == "NoWeightUpdate", e.args
    else:
        raise AssertionError("expected NoWeightUpdate")

    print(f"ok: baseline {expected} ns, amp {amp['predicted_makespan']} ns, sweep {spans}")


if __name__ == "__main__":
    main()
