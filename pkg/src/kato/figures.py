"""Matplotlib renderings of experiment outcomes (Agg backend, files only)."""
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _obstacle_patch(ax, spec):
    if not spec:
        return
    kind = spec.get("obstacle")
    r = float(spec.get("radius", 1.0))
    th = np.linspace(0, 2 * np.pi, 400)
    if kind in ("disk", "cavity"):
        ax.plot(r * np.cos(th), r * np.sin(th), "k-", lw=1.2)
    elif kind == "two_disks":
        c = float(spec.get("separation", 4.0)) / 2
        for s in (-1, 1):
            ax.plot(s * c + r * np.cos(th), r * np.sin(th), "k-", lw=1.2)
    elif kind == "ellipse":
        ax.plot(float(spec.get("semi_x", 2.0)) * np.cos(th),
                float(spec.get("semi_y", 1.0)) * np.sin(th), "k-", lw=1.2)
    elif kind == "kidney":
        beta, kap = float(spec.get("dent", 0.3)), float(spec.get("sharpness", 6.0))
        rho = 1 - beta * np.exp(kap * (np.cos(th) - 1))
        ax.plot(rho * np.cos(th), rho * np.sin(th), "k-", lw=1.2)


def _paths(fig, data):
    ax = fig.add_subplot(111)
    for path in data["paths"]:
        p = np.asarray(path)
        ax.plot(p[:, 0], p[:, 1], lw=0.7)
    _obstacle_patch(ax, data.get("obstacle"))
    ax.set_aspect("equal")
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")


def _classes(fig, data):
    ax = fig.add_subplot(111)
    rows = [r for r in data["rows"] if isinstance(r[0], (int, np.integer))]
    kinds = sorted({r[6] for r in rows})
    for k in kinds:
        pts = np.array([[r[1], r[2]] for r in rows if r[6] == k])
        ax.scatter(pts[:, 0], pts[:, 1], s=12, label=k)
    _obstacle_patch(ax, data.get("obstacle"))
    ax.set_aspect("equal")
    ax.legend(fontsize=7)


def _monitor(fig, data):
    ax = fig.add_subplot(111)
    for c in data["curves"]:
        line, = ax.plot(c["s"], c["F1"], lw=0.8)
        ax.plot(c["s"], c["F2"], "--", lw=0.8, color=line.get_color())
    ax.set_xlabel("s")
    ax.set_ylabel("F1 (solid), F2 (dashed)")


def _bars(fig, data):
    ax = fig.add_subplot(111)
    ax.bar(range(len(data["values"])), data["values"])
    ax.set_xticks(range(len(data["labels"])))
    ax.set_xticklabels(data["labels"], rotation=45, fontsize=7)


def _loglog(fig, data):
    ax = fig.add_subplot(111)
    ax.loglog(data["x"], data["y"], "o-")
    ax.set_xlabel(data.get("xlabel", ""))
    ax.set_ylabel(data.get("ylabel", ""))
    if "slope" in data:
        ax.set_title(f"slope {data['slope']:.3f}")


def _semilogx(fig, data):
    ax = fig.add_subplot(111)
    ax.semilogx(data["x"], data["y"], "o-")
    ax.set_xlabel(data.get("xlabel", ""))
    ax.set_ylabel(data.get("ylabel", ""))


def _scan(fig, data):
    ax = fig.add_subplot(111)
    for r in data["results"]:
        ax.loglog(r["h"], r["norms"], "o-", label=f"{r['variant']} ({r['slope']:.2f})")
    ax.set_xlabel("h")
    ax.set_ylabel("operator norm")
    ax.legend(fontsize=7)


def _hist(fig, data):
    ax = fig.add_subplot(111)
    ax.hist(data["values"], bins=30)
    ax.set_xlabel(data.get("xlabel", ""))


def _quotients(fig, data):
    ax = fig.add_subplot(111)
    h = [r["h"] for r in data["rows"]]
    ax.semilogx(h, [r["q_filtered"] for r in data["rows"]], "o-", label="filtered, chi1")
    ax.semilogx(h, [r["q_quarter"] for r in data["rows"]], "s-", label="P^1/4 form, chi0")
    ax.set_xlabel("h")
    ax.set_ylabel("quotient")
    ax.legend(fontsize=7)


def _centroids(fig, data):
    ax1 = fig.add_subplot(121)
    ax2 = fig.add_subplot(122)
    for h, rows in data["tracks"]:
        a = np.asarray(rows)
        ax1.plot(a[:, 1], a[:, 2], lw=1, label=f"h = 1/{int(round(1 / h))}")
        ax1.plot(a[:, 5], a[:, 6], "k:", lw=0.8)
        ax2.plot(a[:, 0] / h, a[:, 9], lw=1)
    _obstacle_patch(ax1, data.get("obstacle"))
    ax1.set_aspect("equal")
    ax1.legend(fontsize=7)
    ax2.set_xlabel("t / h")
    ax2.set_ylabel("phase-space error")


RENDERERS = {"paths": _paths, "classes": _classes, "monitor": _monitor, "bars": _bars,
             "loglog": _loglog, "semilogx": _semilogx, "scan": _scan, "hist": _hist,
             "quotients": _quotients, "centroids": _centroids}


def render(path, kind, data):
    fig = plt.figure(figsize=(8, 4) if kind == "centroids" else (5, 4))
    try:
        RENDERERS[kind](fig, data)
        fig.tight_layout()
        fig.savefig(path, dpi=110)
    finally:
        plt.close(fig)
