"""Human-readable run summaries and SVG plots."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .composition import CompositionCertificate  # noqa: E402
from .config import from_dict  # noqa: E402
from .errors import ReportError  # noqa: E402
from .gridding import Box  # noqa: E402

# fixed ids and no timestamp keep the SVG bytes reproducible
plt.rcParams["svg.hashsalt"] = "ddsym"
_SVG_META = {"Date": None, "Creator": None}


def _read_json(path: Path):
    if not path.exists():
        raise ReportError(f"missing artifact {path}")
    return json.loads(path.read_text())


def read_trajectory_csv(path: Path) -> dict:
    """``{subsystem: (k, X, u, safe)}`` from a trajectory log."""
    if not path.exists():
        raise ReportError(f"missing artifact {path}")
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    xcols = [j for j, h in enumerate(header) if h.startswith("x_")]
    out = {}
    for line in lines[1:]:
        f = line.split(",")
        i = int(f[1])
        out.setdefault(i, []).append((int(f[0]), [float(f[j]) for j in xcols]))
    return {i: (np.array([r[0] for r in rows]), np.array([r[1] for r in rows])) for i, rows in out.items()}


def plot_trajectories(traj: dict, safe_box: Box, path: Path, title: str = ""):
    """Time plot for scalar states, phase plot otherwise; axes are the safe box."""
    fig, ax = plt.subplots(figsize=(6, 4))
    if safe_box.dim == 1:
        for i, (k, X) in sorted(traj.items()):
            ax.plot(k, X[:, 0], lw=1, label=f"subsystem {i}")
        for y in (safe_box.lower[0], safe_box.upper[0]):
            ax.axhline(y, color="k", lw=1.5)
        kmax = max((k.max() for k, _ in traj.values()), default=1)
        ax.set_xlim(0, max(kmax, 1))
        ax.set_ylim(safe_box.lower[0], safe_box.upper[0])
        ax.set_xlabel("k")
        ax.set_ylabel("x")
    else:
        for i, (k, X) in sorted(traj.items()):
            ax.plot(X[:, 0], X[:, 1], lw=0.8, marker=".", ms=2, label=f"subsystem {i}")
        lo, hi = safe_box.lower, safe_box.upper
        ax.add_patch(plt.Rectangle((lo[0], lo[1]), hi[0] - lo[0], hi[1] - lo[1], fill=False, color="k", lw=1.5))
        ax.set_xlim(lo[0], hi[0])
        ax.set_ylim(lo[1], hi[1])
        ax.set_xlabel("x_0")
        ax.set_ylabel("x_1")
    if traj:
        ax.legend(loc="best", fontsize=7)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)


def plot_sweep(res, path: Path):
    M = np.array([r["M"] for r in res.rows], dtype=float)
    comp = np.log10([r["compositional_samples"] for r in res.rows])
    mono = np.array([r["monolithic_log10_samples"] for r in res.rows])
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(M, comp, "o-", label="compositional")
    ax.plot(M, mono, "s--", label="monolithic (analytic)")
    ax.set_xscale("log")
    ax.set_xlabel("M")
    ax.set_ylabel("log10(samples)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)


def _fmt(v, fmt=".6g"):
    return "n/a" if v is None else format(v, fmt)


def render_report(out) -> Path:
    """Write ``report.md``, ``report.json`` and trajectory plots for a run directory."""
    out = Path(out)
    cfg = from_dict(_read_json(out / "config.json")) if (out / "config.json").exists() else None
    cert = CompositionCertificate.from_dict(_read_json(out / "certificate.json"))
    attempts = _read_json(out / "attempts.json") if (out / "attempts.json").exists() else []
    timings = _read_json(out / "timings.json") if (out / "timings.json").exists() else {}
    units = sorted(int(p.name[3:]) for p in out.glob("sub*") if p.is_dir())

    md = ["# Run report", ""]
    md += ["## Certificate", "",
           "| subsystem | mu | varpi | L | sigma | mu + varpi + L sigma |", "|---|---|---|---|---|---|"]
    for i, p in zip(units, cert.per_subsystem):
        md.append(f"| {i} | {p.mu:.6g} | {p.varpi:.3g} | {p.L:.6g} | {p.sigma:.6g} | {p.term:.6g} |")
    md += ["", f"Identical agents counted: {cert.multiplicity}", "",
           f"Total: **{cert.total:.6g}** ({'pass' if cert.passed else 'FAIL'})", "",
           "## Network relation", "",
           f"- psi = {cert.psi:.6g}, alpha = {cert.alpha:.6g}, gamma = {cert.gamma:.6g}, eta = {cert.eta:.6g}",
           f"- psi_bar = psi / ((1 - gamma) eta) = {cert.psi_bar:.6g}",
           f"- epsilon = sqrt(psi_bar / alpha) = {cert.epsilon:.6g}",
           f"- gamma_bar = 1 - (1 - eta)(1 - gamma) = {cert.gamma_bar:.6g}", ""]

    summary = {"certificate": cert.to_dict(), "attempts": attempts, "timings": timings, "controllers": {},
               "simulation": None}
    if attempts:
        md += ["## Attempts", "", "| attempt | n_per_input | basis degree | total |", "|---|---|---|---|"]
        md += [f"| {a['attempt']} | {a['n_per_input']} | {a['basis_degree']} | {_fmt(a.get('total'))} |"
               for a in attempts]
        md.append("")

    if not cert.passed:
        md += ["## Controller", "", "Certificate failed; synthesis and simulation were not run.", ""]
    else:
        md += ["## Controller", ""]
        any_empty = False
        for i in units:
            info = _read_json(out / f"sub{i}" / "synthesis.json")
            summary["controllers"][i] = info
            if info["empty"]:
                any_empty = True
                md.append(f"- subsystem {i}: no controller (empty winning set after contracting by "
                          f"{info['contraction']:.4g})")
            else:
                md.append(f"- subsystem {i}: {info['winning_states']} of {info['n_states']} states winning; "
                          f"safe set contracted by {info['contraction']:.4g}; robustness margin "
                          f"{info['margin_cells']} cells (observed drift {[round(d, 6) for d in info['drift']]})")
        md.append("")
        sim_path = out / "simulation.json"
        if any_empty:
            md += ["## Simulation", "", "no controller: nothing to simulate.", ""]
        elif sim_path.exists():
            sim = _read_json(sim_path)
            summary["simulation"] = sim
            md += ["## Simulation", "",
                   f"{sim['starts']} starts per scenario, horizon {sim['horizon']}, M = {sim['M']}", ""]
            plots = out / "plots"
            plots.mkdir(exist_ok=True)
            safe_box = cfg.safe_box if cfg else None
            for name, res in sim["scenarios"].items():
                md.append(f"- {name}: {res['n_safe']} / {sim['starts']} safe")
                if safe_box is not None and (out / f"traj_{name}.csv").exists():
                    svg = plots / f"traj_{name}.svg"
                    plot_trajectories(read_trajectory_csv(out / f"traj_{name}.csv"), safe_box, svg,
                                      f"closed loop, {name} start")
                    md.append(f"  ![{name}](plots/{svg.name})")
            md += ["", f"Verdict: **{'safe' if sim['safe'] else 'UNSAFE'}**", ""]

    if timings:
        md += ["## Timings (s)", ""] + [f"- {k}: {v:.3f}" for k, v in timings.items()] + [""]
    manifest = out / "manifest.json"
    if manifest.exists():
        md += ["## Artifacts", ""]
        for key, entry in sorted(_read_json(manifest).items()):
            for name, digest in sorted(entry["outputs"].items()):
                md.append(f"- `{name}` sha256 {digest[:16]}")
        summary["artifacts"] = _read_json(manifest)
    path = out / "report.md"
    path.write_text("\n".join(md) + "\n")
    (out / "report.json").write_text(json.dumps(summary, indent=2, sort_keys=True, default=str) + "\n")
    return path
