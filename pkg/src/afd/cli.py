"""``afd`` command line: a thin client of the HTTP API.

With ``--server URL`` (or ``AFD_SERVER``) requests go to a running service;
otherwise the app is served in-process.  Exit codes: 0 ok, 2 bad input,
3 configuration error, 4 insufficient data.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import httpx

EXIT_CODES = {"input": 2, "config": 3, "insufficient_data": 4}


class ServiceError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


class Client:
    def __init__(self, server: str | None = None):
        if server:
            self._http = httpx.Client(base_url=server, timeout=600.0)
        else:
            import warnings

            with warnings.catch_warnings():
                # starlette nags about its httpx backend; irrelevant in-process
                warnings.simplefilter("ignore")
                from fastapi.testclient import TestClient

            from .service import app

            self._http = TestClient(app)

    def call(self, method: str, path: str, body: dict | None = None):
        try:
            r = self._http.request(method, path, json=body)
        except httpx.HTTPError as exc:
            raise click.ClickException(f"cannot reach the service: {exc}") from None
        if r.status_code >= 400:
            try:
                err = r.json()
            except ValueError:
                err = {}
            if isinstance(err, dict) and "kind" in err:
                raise ServiceError(err["kind"], f"{err.get('type', 'error')}: {err.get('message', '')}")
            raise ServiceError("input", f"request rejected ({r.status_code}): {err.get('detail', r.text) if isinstance(err, dict) else r.text}")
        return r.json()


def _fail(kind: str, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(EXIT_CODES.get(kind, 1))


def _read(path, kind: str = "input") -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        _fail(kind, f"cannot read {path}: {exc}")


def _read_json(path, kind: str = "input"):
    text = _read(path, kind)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        _fail(kind, f"{path} is not JSON: {exc}")


def _write(path, text: str):
    try:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text, encoding="utf-8")
    except OSError as exc:
        _fail("input", f"cannot write {path}: {exc}")


def _emit(obj, out):
    text = json.dumps(obj, indent=1)
    if out:
        _write(out, text + "\n")
    else:
        click.echo(text)


class Ctx:
    def __init__(self, config_path, server):
        self.config_path = config_path
        self.server = server
        self._client = None

    @property
    def client(self) -> Client:
        if self._client is None:
            self._client = Client(self.server)
        return self._client

    def config(self, **flags) -> dict:
        """Config file contents with non-None ``section.key`` flags applied on top."""
        d = _read_json(self.config_path, kind="config") if self.config_path else {}
        if not isinstance(d, dict):
            _fail("config", "config file must hold a JSON object")
        for key, value in flags.items():
            if value is None:
                continue
            section, name = key.split(".", 1)
            sec = d.setdefault(section, {})
            if not isinstance(sec, dict):
                _fail("config", f"config section {section!r} must be an object")
            sec[name] = value
        return d

    def call(self, method, path, body=None):
        try:
            return self.client.call(method, path, body)
        except ServiceError as exc:
            _fail(exc.kind, str(exc))


pass_ctx = click.make_pass_decorator(Ctx)


@click.group()
@click.option("--config", "config_path", type=click.Path(), help="JSON config file; flags override it.")
@click.option("--server", envvar="AFD_SERVER", help="Base URL of a running afd service.")
@click.pass_context
def main(ctx, config_path, server):
    """Device-free fall detection from WiFi CSI traces."""
    ctx.obj = Ctx(config_path, server)


@main.command()
@click.option("--scenario", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path(), help="Trace file (.csi.jsonl).")
@click.option("--truth-out", type=click.Path(), help="Ground truth file; defaults next to the trace.")
@pass_ctx
def simulate(c: Ctx, scenario, out, truth_out):
    """Generate a synthetic trace and its ground truth."""
    res = c.call("POST", "/simulate", {"scenario": _read_json(scenario)})
    _write(out, res["trace"])
    if truth_out is None:
        name = Path(out).name
        stem = name[: -len(".csi.jsonl")] if name.endswith(".csi.jsonl") else Path(out).stem
        truth_out = Path(out).with_name(stem + ".truth.json")
    _write(truth_out, json.dumps(res["truth"], indent=1) + "\n")


@main.command()
@click.option("--trace", required=True, type=click.Path())
@click.option("--out", type=click.Path())
@pass_ctx
def calibrate(c: Ctx, trace, out):
    """Fit the stability threshold on a still recording."""
    res = c.call("POST", "/calibrate", {"trace": _read(trace), "config": c.config()})
    _emit(res, out)


@main.command()
@click.option("--trace", required=True, type=click.Path())
@click.option("--threshold", required=True, type=click.Path())
@click.option("--window-ms", type=float)
@click.option("--delta", type=float, help="Manual threshold overriding the calibrated one.")
@click.option("--out-dir", type=click.Path(), help="Write one .segment.json per activity window.")
@pass_ctx
def segment(c: Ctx, trace, threshold, window_ms, delta, out_dir):
    """Find activity end points and cut the windows before them."""
    cfg = c.config(**{"segment.window_ms": window_ms, "segment.delta_override": delta})
    res = c.call("POST", "/segment", {"trace": _read(trace), "threshold": _read_json(threshold), "config": cfg})
    if out_dir:
        for k, seg in enumerate(res["segments"]):
            _write(Path(out_dir) / f"{k:04d}.segment.json", json.dumps(seg) + "\n")
    _emit({"endpoints": res["endpoints"]}, None)


def _label(v) -> bool:
    if isinstance(v, bool):
        return v
    if isinstance(v, str):
        return v == "fall"
    raise ValueError(v)


@main.command()
@click.option("--segments", required=True, type=click.Path(), help="Directory of .segment.json files.")
@click.option("--labels", required=True, type=click.Path(), help='JSON object: file name -> "fall"/kind or true/false.')
@click.option("--out", required=True, type=click.Path())
@click.option("--store-out", type=click.Path(), help="Training vectors for later model updates.")
@click.option("--nu", type=float)
@click.option("--gamma", type=float)
@click.option("--channels", type=click.Choice(["amplitude_and_phase", "amplitude_only"]))
@click.option("--grid-search/--no-grid-search", default=None)
@pass_ctx
def train(c: Ctx, segments, labels, out, store_out, nu, gamma, channels, grid_search):
    """Train the one-class model on labeled segments."""
    cfg = c.config(
        **{"svm.nu": nu, "svm.gamma": gamma, "features.channels": channels, "svm.grid_search": grid_search}
    )
    lab = _read_json(labels)
    if not isinstance(lab, dict):
        _fail("input", "labels file must hold a JSON object")
    files = sorted(p for p in Path(segments).glob("*.segment.json")) if Path(segments).is_dir() else []
    if not files:
        _fail("input", f"no .segment.json files in {segments}")
    segs, ys = [], []
    for p in files:
        if p.name not in lab:
            _fail("input", f"no label for {p.name}")
        try:
            ys.append(_label(lab[p.name]))
        except ValueError:
            _fail("input", f"bad label for {p.name}: {lab[p.name]!r}")
        segs.append(_read_json(p))
    res = c.call("POST", "/train", {"segments": segs, "labels": ys, "config": cfg})
    _write(out, json.dumps(res["model"]) + "\n")
    _write(store_out or f"{out}.store.json", json.dumps(res["store"]) + "\n")
    click.echo(f"trained on {res['n_falls']} falls ({res['n_others']} other segments ignored)", err=True)


@main.command()
@click.option("--trace", required=True, type=click.Path())
@click.option("--threshold", required=True, type=click.Path())
@click.option("--model", required=True, type=click.Path())
@click.option("--stream", is_flag=True, help="Feed the trace through a streaming session.")
@click.option("--chunk", type=int, default=64, show_default=True, help="Packets per streamed chunk.")
@click.option("--window-ms", type=float)
@click.option("--delta", type=float)
@click.option("--out", type=click.Path())
@pass_ctx
def detect(c: Ctx, trace, threshold, model, stream, chunk, window_ms, delta, out):
    """Run the detector; prints a JSON list of {t_end_us, score}."""
    cfg = c.config(**{"segment.window_ms": window_ms, "segment.delta_override": delta})
    th = _read_json(threshold)
    m = _read_json(model)
    text = _read(trace)
    if not stream:
        res = c.call("POST", "/detect", {"trace": text, "threshold": th, "model": m, "config": cfg})
        _emit(res["detections"], out)
        return
    if chunk < 1:
        _fail("input", "--chunk must be positive")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        _fail("input", "empty trace file")
    header, packets = lines[0], lines[1:]
    sid = c.call("POST", "/sessions", {"threshold": th, "model": m, "config": cfg})["session_id"]
    dets = []
    for k in range(0, len(packets), chunk):
        part = "\n".join([header] + packets[k : k + chunk]) + "\n"
        dets += c.call("POST", f"/sessions/{sid}/packets", {"trace": part})["detections"]
    dets += c.call("DELETE", f"/sessions/{sid}")["detections"]
    _emit(dets, out)


@main.command(name="eval")
@click.option("--detections", required=True, type=click.Path())
@click.option("--truth", required=True, type=click.Path())
@click.option("--match-tol-ms", type=float, default=500.0, show_default=True)
@click.option("--out", type=click.Path())
@pass_ctx
def eval_cmd(c: Ctx, detections, truth, match_tol_ms, out):
    """Score detections against ground truth (FDR / FPR)."""
    dets = _read_json(detections)
    res = c.call("POST", "/eval", {"detections": dets, "truth": _read_json(truth), "match_tol_ms": match_tol_ms})
    _emit(res, out)


@main.command(name="search-window")
@click.option("--corpus", required=True, type=click.Path(), help="Directory of X.csi.jsonl + X.truth.json pairs.")
@click.option("--threshold", type=click.Path(), help="Defaults to threshold.json inside the corpus directory.")
@click.option("--lo", type=int, default=1000, show_default=True)
@click.option("--hi", type=int, default=5000, show_default=True)
@click.option("--step", type=int, default=500, show_default=True)
@click.option("--fine-step", type=int, default=100, show_default=True)
@click.option("--folds", "k", type=int, default=5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path())
@pass_ctx
def search_window(c: Ctx, corpus, threshold, lo, hi, step, fine_step, k, seed, out):
    """Two-phase search of the activity window length."""
    d = Path(corpus)
    traces = sorted(d.glob("*.csi.jsonl")) if d.is_dir() else []
    items = []
    for p in traces:
        stem = p.name[: -len(".csi.jsonl")]
        if stem.startswith("still"):
            continue
        tp = d / f"{stem}.truth.json"
        if not tp.exists():
            _fail("input", f"missing ground truth {tp.name} for {p.name}")
        items.append({"trace": _read(p), "truth": _read_json(tp)})
    if not items:
        _fail("insufficient_data", f"no labeled traces in {corpus}")
    th_path = threshold or d / "threshold.json"
    body = {
        "corpus": items,
        "threshold": _read_json(th_path),
        "config": c.config(),
        "lo": lo,
        "hi": hi,
        "step": step,
        "fine_step": fine_step,
        "k": k,
        "seed": seed,
    }
    _emit(c.call("POST", "/search-window", body), out)


@main.command(name="update-model")
@click.option("--model", required=True, type=click.Path())
@click.option("--store", required=True, type=click.Path())
@click.option("--relabeled", required=True, type=click.Path(), help="JSON list of {vector, is_fall}.")
@click.option("--out", required=True, type=click.Path())
@click.option("--store-out", type=click.Path())
@pass_ctx
def update_model(c: Ctx, model, store, relabeled, out, store_out):
    """Fold corrected labels into the training set and retrain."""
    res = c.call(
        "POST",
        "/update-model",
        {"model": _read_json(model), "store": _read_json(store), "relabeled": _read_json(relabeled)},
    )
    _write(out, json.dumps(res["model"]) + "\n")
    _write(store_out or f"{out}.store.json", json.dumps(res["store"]) + "\n")


@main.command()
@click.option("--out", required=True, type=click.Path())
@click.option(
    "--which",
    type=click.Choice(["benchmark", "training", "burst", "still"]),
    default="benchmark",
    show_default=True,
)
def pack(out, which):
    """Write a bundled scenario set as .scenario.json files."""
    from . import synth

    scs = {
        "benchmark": synth.benchmark_pack,
        "training": synth.training_pack,
        "burst": synth.burst_pack,
        "still": lambda: [synth.still_scenario()],
    }[which]()
    for sc in scs:
        _write(Path(out) / f"{sc.trace_id}.scenario.json", sc.to_json() + "\n")
    click.echo(f"wrote {len(scs)} scenarios to {out}", err=True)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    from .service import app

    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
