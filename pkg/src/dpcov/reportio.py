"""Serialization of test reports: JSON with 17-significant-digit floats."""

from __future__ import annotations

import json

import numpy as np

from .engine import CriticalValue, TestConfig, TestReport, TestStatistics
from .errors import InputError
from .mechanism import PrivatizedSpectrum
from .moments import MomentTable

__all__ = ["dumps_json", "report_to_dict", "report_from_dict"]


def _fmt(x) -> str:
    if isinstance(x, float):
        if np.isnan(x):
            return "NaN"
        if np.isinf(x):
            return "Infinity" if x > 0 else "-Infinity"
        return format(x, ".17g")
    raise TypeError(x)


def dumps_json(obj, indent: int = 2) -> str:
    """json.dumps with every float rendered at 17 significant digits."""

    def walk(o, depth):
        pad = " " * (indent * depth)
        pad_in = " " * (indent * (depth + 1))
        if isinstance(o, dict):
            if not o:
                return "{}"
            items = [f'{pad_in}{json.dumps(str(k))}: {walk(v, depth + 1)}'
                     for k, v in o.items()]
            return "{\n" + ",\n".join(items) + "\n" + pad + "}"
        if isinstance(o, (list, tuple)):
            if not o:
                return "[]"
            items = [f"{pad_in}{walk(v, depth + 1)}" for v in o]
            return "[\n" + ",\n".join(items) + "\n" + pad + "]"
        if isinstance(o, bool):
            return "true" if o else "false"
        if isinstance(o, (int, np.integer)):
            return str(int(o))
        if isinstance(o, (float, np.floating)):
            return _fmt(float(o))
        if o is None:
            return "null"
        return json.dumps(str(o))

    return walk(obj, 0) + "\n"


def _arr(a):
    return np.asarray(a, dtype=float).tolist()


def report_to_dict(report: TestReport) -> dict:
    s, c, t, p = (report.statistics, report.critical, report.moment_table,
                  report.spectrum)
    return {
        "decision": report.decision,
        "statistics": {
            "L": _arr(s.L), "T": _arr(s.T), "T_max": s.T_max,
            "K": s.K, "n": s.n, "d": s.d,
        },
        "critical": {
            "z_alpha": c.z_alpha, "alpha": c.alpha,
            "mc_samples": c.mc_samples, "seed": c.seed,
            "R_used": [_arr(r) for r in c.R_used],
        },
        "p_max": report.p_max,
        "p_marginal": _arr(report.p_marginal),
        "moment_table": {
            "mu": _arr(t.mu), "V": [_arr(r) for r in t.V],
            "Gamma": _arr(t.Gamma), "R": [_arr(r) for r in t.R],
            "kappa": t.kappa, "b": t.b, "y": t.y,
        },
        "spectrum": {
            "raw": _arr(p.raw), "stage1_noisy": _arr(p.stage1_noisy),
            "privatized": _arr(p.privatized), "gamma_hat": p.gamma_hat,
            "noise_scale": p.noise_scale, "seed": p.seed,
            "K": p.K, "n": p.n, "d": p.d,
        },
        "config": {
            "epsilon": report.config.epsilon,
            "gamma_tilde": report.config.gamma_tilde,
            "sigma": report.config.sigma,
            "alpha": report.config.alpha,
            "mc_samples": report.config.mc_samples,
            "seed": report.config.seed,
            "source": report.config.source,
            "center": report.config.center,
            "mp_nodes": report.config.mp_nodes,
        },
        "notes": dict(report.notes),
    }


def report_from_dict(doc: dict) -> TestReport:
    try:
        s = doc["statistics"]
        c = doc["critical"]
        t = doc["moment_table"]
        p = doc["spectrum"]
        cfg = doc["config"]
        stats = TestStatistics(L=np.array(s["L"]), T=np.array(s["T"]),
                               T_max=float(s["T_max"]), K=int(s["K"]),
                               n=int(s["n"]), d=int(s["d"]))
        crit = CriticalValue(z_alpha=float(c["z_alpha"]),
                             alpha=float(c["alpha"]),
                             mc_samples=int(c["mc_samples"]),
                             seed=int(c["seed"]),
                             R_used=np.array(c["R_used"]))
        table = MomentTable(mu=np.array(t["mu"]), V=np.array(t["V"]),
                            Gamma=np.array(t["Gamma"]), R=np.array(t["R"]),
                            kappa=str(t["kappa"]), b=float(t["b"]),
                            y=float(t["y"]))
        spec = PrivatizedSpectrum(
            raw=np.array(p["raw"]), stage1_noisy=np.array(p["stage1_noisy"]),
            gamma_hat=float(p["gamma_hat"]),
            noise_scale=float(p["noise_scale"]),
            privatized=np.array(p["privatized"]), seed=int(p["seed"]),
            K=int(p["K"]), n=int(p["n"]), d=int(p["d"]))
        config = TestConfig(epsilon=float(cfg["epsilon"]),
                            gamma_tilde=float(cfg["gamma_tilde"]),
                            sigma=float(cfg["sigma"]),
                            alpha=float(cfg["alpha"]),
                            mc_samples=int(cfg["mc_samples"]),
                            seed=int(cfg["seed"]), source=str(cfg["source"]),
                            center=bool(cfg["center"]),
                            mp_nodes=int(cfg["mp_nodes"]))
        return TestReport(statistics=stats, critical=crit,
                          p_max=float(doc["p_max"]),
                          p_marginal=np.array(doc["p_marginal"]),
                          decision=str(doc["decision"]), moment_table=table,
                          spectrum=spec, config=config,
                          notes=dict(doc.get("notes", {})))
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed report document: {exc}") from exc
