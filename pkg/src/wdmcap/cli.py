"""Command-line front end: ``wdmcap coeffs|bounds|region|ssfm``.

Settings resolve with precedence flag > environment > config file.  Every
option has a ``WDMCAP_<OPTION>`` environment variable (e.g. WDMCAP_SEED,
WDMCAP_POWERS), and any config-file key can be overridden with
``WDMCAP_<KEY>`` (e.g. WDMCAP_GAMMA_PER_W_KM=0) or ``--set key=value``.
"""

from __future__ import annotations

import contextlib
import csv
import io
import json
import logging
import os
import platform
import sys
import tempfile
import time
import uuid
from pathlib import Path

import click
import numpy as np
import scipy
import yaml

from . import __version__, bounds, regions, ssfm
from .channel import ase_variance
from .coeffs import CoefficientTable, compute_coefficient_table
from .config import _FILE_KEYS, ConfigError, SystemConfig, dbm_to_watt, reference_link

logger = logging.getLogger("wdmcap")

DEFAULT_CACHE = Path.home() / ".cache" / "wdmcap"


# --- helpers -----------------------------------------------------------------

def parse_powers(spec: str) -> np.ndarray:
    """'start:stop:step' (inclusive stop) or a comma list, in dBm."""
    spec = spec.strip()
    if ":" in spec:
        try:
            start, stop, step = (float(v) for v in spec.split(":"))
        except ValueError as exc:
            raise click.BadParameter(f"expected start:stop:step, got {spec!r}") from exc
        if step <= 0 or stop < start:
            raise click.BadParameter("need step > 0 and stop >= start")
        count = int(np.floor((stop - start) / step + 1e-9)) + 1
        return np.round(start + step * np.arange(count), 10)
    try:
        return np.array([float(v) for v in spec.split(",") if v.strip()])
    except ValueError as exc:
        raise click.BadParameter(f"cannot parse power list {spec!r}") from exc


def resolve_config(path: str | None, sets: tuple[str, ...] = ()) -> SystemConfig:
    data = {}
    if path:
        text = Path(path).read_text()
        data = yaml.safe_load(text) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a flat key/value mapping")
    else:
        data = reference_link().to_dict()
    for key in _FILE_KEYS:
        env = os.environ.get("WDMCAP_" + key.upper())
        if env is not None:
            data[key] = yaml.safe_load(env)
    for item in sets:
        if "=" not in item:
            raise click.BadParameter(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        data[key.strip()] = yaml.safe_load(value)
    # an override in one unit must not fight the file's value in another
    canon = {}
    for key, value in data.items():
        if key not in _FILE_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        canon[_FILE_KEYS[key][0]] = key
    data = {k: v for k, v in data.items() if canon[_FILE_KEYS[k][0]] == k}
    return SystemConfig.from_dict(data)


def atomic_write_bytes(path: Path, payload: bytes):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix="." + path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def atomic_write_text(path: Path, text: str):
    atomic_write_bytes(path, text.encode())


def _capture(writer) -> str:
    """Run a path-based writer against a temp file and return its text."""
    with tempfile.TemporaryDirectory() as tmp:
        p = Path(tmp) / "out"
        writer(p)
        return p.read_text()


def append_manifest(out_dir: Path, manifest: dict):
    """Manifests are append-only: one JSON line per run."""
    out_dir.mkdir(parents=True, exist_ok=True)
    line = json.dumps(manifest, sort_keys=True) + "\n"
    with (out_dir / "manifests.jsonl").open("a") as fh:
        fh.write(line)
        fh.flush()
        os.fsync(fh.fileno())


def new_manifest(command: str, config: SystemConfig, **extra) -> dict:
    return {
        "run_id": uuid.uuid4().hex,
        "command": command,
        "config_hash": config.full_hash(),
        "physics_hash": config.physics_hash(),
        "config": config.to_dict(),
        "assumptions": {
            "ase_carrier_frequency_thz": config.carrier_frequency / 1e12,
            "ase_sigma_sq_w_per_real_dim": ase_variance(config),
        },
        "versions": {
            "wdmcap": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "started": time.time(),
        **extra,
    }


def cache_dir() -> Path:
    return Path(os.environ.get("WDMCAP_CACHE", DEFAULT_CACHE))


def load_or_compute_table(config: SystemConfig) -> tuple[CoefficientTable, Path, bool]:
    """Coefficient table from the cache (keyed by the physics hash) or freshly computed."""
    path = cache_dir() / f"coeffs-{config.physics_hash()}.csv"
    if path.exists():
        logger.info("coefficient cache hit %s", path)
        return CoefficientTable.from_csv(path, config.gamma), path, True
    logger.info("computing coefficient table (cache miss %s)", path)
    table = compute_coefficient_table(config)
    atomic_write_text(path, _capture(table.to_csv))
    return table, path, False


def _fail(msg: str):
    raise click.ClickException(msg)


# --- commands ----------------------------------------------------------------

config_option = click.option("--config", "config_path", envvar="WDMCAP_CONFIG",
                             type=click.Path(exists=True, dir_okay=False),
                             help="Flat YAML config (reference link when omitted).")
out_option = click.option("--out", "out_dir", envvar="WDMCAP_OUT", default="out",
                          show_default=True, type=click.Path(file_okay=False),
                          help="Output directory.")
set_option = click.option("--set", "sets", multiple=True, metavar="KEY=VALUE",
                          help="Override one config key (repeatable).")
seed_option = click.option("--seed", envvar="WDMCAP_SEED", default=0, show_default=True, type=int)
mc_option = click.option("--mc-samples", envvar="WDMCAP_MC_SAMPLES", type=int, default=None,
                         help="Monte-Carlo sample count.")
psk_option = click.option("--psk-order", envvar="WDMCAP_PSK_ORDER", default=16,
                          show_default=True, type=int)


@click.group()
@click.option("-v", "--verbose", count=True, help="-v info, -vv debug.")
@click.version_option(__version__)
def main(verbose):
    """Capacity-region bounds for the nonlinear WDM interference channel."""
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(verbose, 2)]
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s")


@main.command("coeffs")
@config_option
@out_option
@set_option
def cmd_coeffs(config_path, out_dir, sets):
    """Compute the XPM coefficient table and write coefficients.csv."""
    t0 = time.time()
    config = resolve_config(config_path, sets)
    table, cache_path, hit = load_or_compute_table(config)
    out = Path(out_dir)
    target = out / "coefficients.csv"
    atomic_write_bytes(target, cache_path.read_bytes())
    if np.any(table.c < 0):
        _fail("negative coefficient in table")
    manifest = new_manifest("coeffs", config, cache_hit=hit, outputs=[str(target)],
                            elapsed_s=time.time() - t0)
    append_manifest(out, manifest)
    click.echo(f"wrote {target} ({2 * table.memory + 1} lags per pair, cache {'hit' if hit else 'miss'})")


@main.command("bounds")
@config_option
@out_option
@set_option
@click.option("--powers", envvar="WDMCAP_POWERS", default="-15:5:0.5", show_default=True,
              help="Power grid in dBm, start:stop:step or a comma list.")
@seed_option
@mc_option
def cmd_bounds(config_path, out_dir, sets, powers, seed, mc_samples):
    """TIN, inner and outer bound curves (equal powers) for every user."""
    t0 = time.time()
    config = resolve_config(config_path, sets)
    grid = parse_powers(powers)
    table, _, hit = load_or_compute_table(config)
    sigma_sq = ase_variance(config)
    mc = mc_samples or bounds.DEFAULT_NLI_SAMPLES
    out = Path(out_dir)
    outputs = []
    for k in range(1, config.num_users + 1):
        try:
            curve = bounds.bound_curve(k, grid, table, sigma_sq, mc, seed, metadata={
                "config_hash": config.full_hash(), "physics_hash": config.physics_hash()})
        except AssertionError as exc:
            _fail(f"user {k}: {exc}")
        csv_path, json_path = out / f"bounds_user{k}.csv", out / f"bounds_user{k}.json"
        atomic_write_text(csv_path, _capture(curve.to_csv))
        atomic_write_text(json_path, _capture(curve.to_json))
        outputs += [str(csv_path), str(json_path)]
        pk, val = curve.peak()
        click.echo(f"user {k}: TIN peak {val:.3f} bit/sym at {pk:g} dBm")
    append_manifest(out, new_manifest("bounds", config, seeds=[seed], mc_samples=mc,
                                      powers_dbm=grid.tolist(), cache_hit=hit, outputs=outputs,
                                      sigma_sq_w=sigma_sq, elapsed_s=time.time() - t0))


@main.command("region")
@config_option
@out_option
@set_option
@click.option("--power", "power_dbm", envvar="WDMCAP_POWER", type=float, required=True,
              help="Equal launch power in dBm.")
@seed_option
@mc_option
@psk_option
def cmd_region(config_path, out_dir, sets, power_dbm, seed, mc_samples, psk_order):
    """Outer, TIN and time-sharing regions at one power."""
    t0 = time.time()
    config = resolve_config(config_path, sets)
    table, _, hit = load_or_compute_table(config)
    sigma_sq = ase_variance(config)
    K = config.num_users
    powers = np.full(K, dbm_to_watt(power_dbm))
    nli_mc = mc_samples or bounds.DEFAULT_NLI_SAMPLES
    psk_mc = mc_samples or 10**5
    nli = [bounds.nli_variance(k, powers, table, "disk", nli_mc, seed).value for k in range(1, K + 1)]
    prov = {"power_dbm": power_dbm, "seed": seed, "psk_order": psk_order,
            "config_hash": config.full_hash()}
    outer = regions.outer_region(powers, table, sigma_sq)
    tin = regions.tin_region(powers, table, sigma_sq, nli)
    verts = regions.timeshare_vertices(powers, table, sigma_sq, psk_order, psk_mc, seed)
    ts = regions.timeshare_region(verts)
    for r in (outer, tin, ts):
        r.provenance.update(prov)
    if not regions.region_subset(tin, outer) or not regions.region_subset(ts, outer):
        _fail("containment check failed: an inner region leaves the outer cuboid")
    out = Path(out_dir)
    tag = f"{power_dbm:g}dBm"
    outputs = []
    for name, region in (("outer", outer), ("tin", tin), ("timeshare", ts)):
        path = out / f"region_{name}_{tag}.json"
        atomic_write_text(path, json.dumps(region.to_json(), indent=2))
        outputs.append(str(path))
        if K == 3:
            fpath = out / f"region_{name}_{tag}_facets.csv"
            atomic_write_text(fpath, _capture(region.facets_to_csv))
            outputs.append(str(fpath))
    excess = regions.max_excess_outside(ts, tin)
    click.echo(f"outer edge {outer.b[0]:.3f}, TIN edge {tin.b[0]:.3f}, "
               f"time-sharing beyond TIN by {excess:.3f} bit/sym")
    append_manifest(out, new_manifest("region", config, seeds=[seed], psk_order=psk_order,
                                      mc_samples={"nli": nli_mc, "psk": psk_mc}, cache_hit=hit,
                                      outputs=outputs, elapsed_s=time.time() - t0))


SSFM_FIELDS = ["power_dbm", "user", "scenario", "mi_bits", "stderr", "estimator", "seed", "n",
               "snr_db"]


@main.command("ssfm")
@config_option
@out_option
@set_option
@click.option("--scenario", envvar="WDMCAP_SCENARIO", required=True,
              type=click.Choice(ssfm.SCENARIOS))
@click.option("--powers", envvar="WDMCAP_POWERS", default="-10:5:2", show_default=True)
@click.option("--seed", "seeds", envvar="WDMCAP_SEED", multiple=True, type=int, default=(0,),
              show_default=True, help="Repeatable.")
@psk_option
@click.option("--n-symbols", envvar="WDMCAP_N_SYMBOLS", default=2**14, show_default=True, type=int)
@click.option("--step-size", envvar="WDMCAP_STEP_SIZE", default=0.01, show_default=True,
              type=float, help="SSFM step in km.")
@click.option("--estimator", type=click.Choice(["gaussian-auxiliary", "histogram"]),
              default="gaussian-auxiliary", show_default=True)
@click.option("--resume/--no-resume", default=True, show_default=True,
              help="Reuse per-point checkpoints in OUT/checkpoints.")
def cmd_ssfm(config_path, out_dir, sets, scenario, powers, seeds, psk_order, n_symbols,
             step_size, estimator, resume):
    """SSFM achievable-rate curve for one scenario, with per-point checkpoints."""
    t0 = time.time()
    config = resolve_config(config_path, sets)
    grid = parse_powers(powers)
    out = Path(out_dir)
    ckpt_dir = out / "checkpoints"
    settings = dict(n_symbols=n_symbols, step_size=step_size, psk_order=psk_order,
                    estimator=estimator)
    key = config.full_hash() + json.dumps(settings, sort_keys=True)
    rows = []
    for seed in seeds:
        for pw in grid:
            ck = ckpt_dir / f"{scenario}_seed{seed}_{pw:+.3f}dBm.json"
            if resume and ck.exists():
                saved = json.loads(ck.read_text())
                if saved.get("key") == key:
                    rows.append(saved["row"])
                    logger.info("checkpoint hit %s", ck)
                    continue
            try:
                point = ssfm.fig8_point(config, float(pw), scenario, seed, **settings)
            except ssfm.AliasingError as exc:
                _fail(str(exc))
            row = point.as_row()
            atomic_write_text(ck, json.dumps({"key": key, "row": row}))
            rows.append(row)
            click.echo(f"{scenario} seed {seed} {pw:+.2f} dBm: {row['mi_bits']:.4f} bit/sym")
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SSFM_FIELDS, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    csv_path = out / f"ssfm_{scenario}.csv"
    json_path = out / f"ssfm_{scenario}.json"
    atomic_write_text(csv_path, buf.getvalue())
    manifest = new_manifest("ssfm", config, seeds=list(seeds), scenario=scenario,
                            powers_dbm=grid.tolist(), settings=settings,
                            outputs=[str(csv_path), str(json_path)],
                            elapsed_s=time.time() - t0)
    atomic_write_text(json_path, json.dumps({"rows": rows, "run_id": manifest["run_id"],
                                             "settings": settings}, indent=2))
    append_manifest(out, manifest)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
