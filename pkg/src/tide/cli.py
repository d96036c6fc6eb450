"""``tide`` command line: schedule, analyze, sample and bench subcommands.

Configuration precedence is flags > config file > defaults. Exit codes: 0 ok,
2 config/usage error, 3 non-finite numerics, 4 I/O error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import math
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import diag, sched, toydit
from .diag import fmt
from .attn import AnchorPolicy, BetaMode, TokenLayout, anchored_attention, anchoring_bias
from .imageio import atomic_write, pgm_bytes, ppm_bytes
from .numeric import NumericError, Rng
from .rope import RopeMode, RopeSpec
from .sched import TemperatureMode, TemperaturePolicy, TimeShiftSpec

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

PRESETS = ("direct", "yarn", "dynamic-global", "dyyarn-hook", "tide")

_MODEL_KEYS = (
    "channels", "token_dim", "head_dim", "heads", "blocks", "mlp_ratio",
    "trained_grid", "text_len", "text_pos", "stats_blocks", "time_blend",
)


class ConfigError(ValueError):
    pass


def _section(obj, skip=()) -> dict:
    d = toydit.config_dict(obj)
    return {k: v for k, v in d.items() if k not in skip}


def default_config() -> dict:
    base = toydit.ToyDitConfig()
    model = toydit.config_dict(base)
    return {
        "seed": base.seed,
        "out": "out",
        "model": {k: model[k] for k in _MODEL_KEYS},
        "rope": _section(base.rope, skip=("head_dim", "scale_s", "context_len")),
        "anchor": _section(base.anchor),
        "temperature": _section(base.temperature),
        "timeshift": _section(base.timeshift),
        "schedule": {"grid": [64, 64], "scales": [1, 2, 3, 4, 5, 6, 7, 8],
                     "mu_tokens": [256, 1024, 4096, 16384, 65536]},
        "analyze": {"grids": [[16, 16], [32, 32], [64, 64]], "synthetic": False,
                    "trials": 200, "sigma": 1.0, "absolute": False},
        "sample": {"grid": [32, 32], "presets": ["direct", "yarn", "dynamic-global", "tide"],
                   "weights": None},
        "bench": {"lengths": [512, 2048, 8192], "rows": 256, "repeats": 3},
    }


def merge_config(base: dict, update: dict, path: str = "") -> dict:
    """Recursively overlay ``update`` on ``base``, rejecting unknown keys."""
    out = copy.deepcopy(base)
    for key, value in update.items():
        where = f"{path}{key}"
        if key not in out:
            raise ConfigError(f"unknown config key: {where}")
        if isinstance(out[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where} must be an object")
            out[key] = merge_config(out[key], value, where + ".")
        else:
            out[key] = value
    return out


def parse_set(item: str) -> dict:
    """``a.b=value`` -> ``{"a": {"b": value}}``; value parsed as JSON when possible."""
    if "=" not in item:
        raise ConfigError(f"--set expects key=value, got {item!r}")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    out: dict = {}
    node = out
    parts = key.strip().split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value
    return out


@dataclass(frozen=True)
class RunConfig:
    model: toydit.ToyDitConfig
    out: Path
    seed: int
    raw: dict

    def section(self, name: str) -> dict:
        return self.raw[name]


def build_config(raw: dict) -> RunConfig:
    try:
        m = raw["model"]
        rope = RopeSpec(head_dim=m["head_dim"], **raw["rope"])
        model = toydit.ToyDitConfig(
            **m,
            rope=rope,
            anchor=AnchorPolicy(**raw["anchor"]),
            temperature=TemperaturePolicy(**raw["temperature"]),
            timeshift=TimeShiftSpec(**raw["timeshift"]),
            seed=int(raw["seed"]),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(model, Path(raw["out"]), int(raw["seed"]), raw)


def load_config(path: str | None, sets: list[str], seed: int | None, out: str | None) -> RunConfig:
    raw = default_config()
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        raw = merge_config(raw, data)
    for item in sets:
        raw = merge_config(raw, parse_set(item))
    if seed is not None:
        raw["seed"] = seed
    if out is not None:
        raw["out"] = out
    return build_config(raw)


def apply_preset(config: toydit.ToyDitConfig, name: str) -> toydit.ToyDitConfig:
    """Method presets: rope mode, anchoring and temperature per baseline."""
    temp = config.temperature
    anchor = replace(config.anchor, enabled=False)
    rope = replace(config.rope, mode=RopeMode.NTK_BY_PARTS)
    blend = toydit.TimeBlend.NONE
    if name == "direct":
        rope = replace(config.rope, mode=RopeMode.DIRECT)
        temp = replace(temp, mode=TemperatureMode.OFF)
    elif name == "yarn":
        temp = replace(temp, mode=TemperatureMode.STATIC_YARN)
    elif name == "dynamic-global":
        temp = replace(temp, mode=TemperatureMode.DYNAMIC_GLOBAL)
    elif name == "dyyarn-hook":
        temp = replace(temp, mode=TemperatureMode.STATIC_YARN)
        blend = toydit.TimeBlend.LINEAR
    elif name == "tide":
        anchor = replace(config.anchor, enabled=True)
        temp = replace(temp, mode=TemperatureMode.DYNAMIC_PER_FREQUENCY)
    else:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return replace(config, rope=rope, anchor=anchor, temperature=temp, time_blend=blend)


def _grid(value, what: str) -> tuple[int, int]:
    if not (isinstance(value, (list, tuple)) and len(value) == 2):
        raise ConfigError(f"{what} must be [height, width], got {value!r}")
    return int(value[0]), int(value[1])


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()



# --- subcommands ---------------------------------------------------------


def cmd_schedule(cfg: RunConfig) -> list[Path]:
    model = cfg.model
    opts = cfg.section("schedule")
    gh, gw = _grid(opts["grid"], "schedule.grid")
    layout = TokenLayout(model.text_len, gh, gw)
    lam = max(layout.pixel_ratio(toydit.trained_layout(model)), 1.0)
    temp = model.temperature.resolved(math.sqrt(lam))
    mu = sched.shift_mu(layout.image_len, model.timeshift)
    times = sched.shifted_timesteps(model.timeshift, mu)
    steps = model.timeshift.steps

    rows = []
    for i, t in enumerate(times):
        u = 1.0 - i / steps
        rows.append([i, fmt(u), fmt(t), fmt(mu),
                     fmt(sched.dynamic_temperature(float(t), 0.0, temp)),
                     fmt(sched.dynamic_temperature(float(t), 1.0, temp))])
    out = [atomic_write(cfg.out / "schedule.csv", _csv(("step", "u", "t", "mu", "tau_f0", "tau_f1"), rows))]

    bias_rows = []
    for s in opts["scales"]:
        s = float(s)
        beta = anchoring_bias(AnchorPolicy(beta_mode=BetaMode.ADAPTIVE), scale_s=s)
        bias_rows.append([fmt(s), fmt(s * s), fmt(beta), fmt(sched.yarn_temperature(s))])
    out.append(atomic_write(cfg.out / "bias.csv", _csv(("s", "lambda", "beta", "tau_min"), bias_rows)))

    mu_rows = []
    for n in opts["mu_tokens"]:
        mu_rows.append([int(n),
                        fmt(sched.shift_mu(int(n), replace(model.timeshift, mode=sched.ShiftMode.LOGARITHMIC))),
                        fmt(sched.shift_mu(int(n), replace(model.timeshift, mode=sched.ShiftMode.LINEAR)))])
    out.append(atomic_write(cfg.out / "mu.csv", _csv(("L_I", "mu_log", "mu_linear"), mu_rows)))
    return out


def cmd_analyze(cfg: RunConfig) -> list[Path]:
    model = cfg.model
    opts = cfg.section("analyze")
    grids = opts["grids"]
    if not grids:
        raise ConfigError("analyze.grids is empty; nothing to sweep")
    layouts = [TokenLayout(model.text_len, *_grid(g, "analyze.grids entry")) for g in grids]
    weights = _weights(cfg)
    sweeps = {
        on: diag.sweep_text_mass(model, layouts, on, weights, bool(opts["synthetic"]),
                                 int(opts["trials"]), float(opts["sigma"]))
        for on in (False, True)
    }
    rows = [r for pair in zip(sweeps[False], sweeps[True]) for r in pair]
    out = [atomic_write(cfg.out / "text_mass.csv", diag.text_mass_csv(rows))]
    for on, label in ((False, "baseline"), (True, "anchored")):
        for row in sweeps[on]:
            if not row.stats:
                continue
            imap = diag.influence_map(list(row.stats), row.layout, normalize=not opts["absolute"])
            out.append(atomic_write(cfg.out / f"influence_{row.layout.resolution}_{label}.pgm",
                                    pgm_bytes(imap.values)))
    return out


def _weights(cfg: RunConfig) -> toydit.ToyDitWeights:
    path = cfg.section("sample")["weights"]
    if path:
        return toydit.load_weights(path, cfg.model)
    return toydit.init_weights(cfg.model)


def cmd_sample(cfg: RunConfig) -> list[Path]:
    opts = cfg.section("sample")
    gh, gw = _grid(opts["grid"], "sample.grid")
    presets = opts["presets"]
    for name in presets:
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    weights = _weights(cfg)
    noise = toydit.noise_latent(cfg.model, gh, gw, cfg.seed)
    text = toydit.text_tokens(cfg.model)
    out = []
    for name in presets:
        model = apply_preset(cfg.model, name)
        latent, trace = toydit.euler_sample(noise, text, model, weights, record_stats=True)
        if not np.all(np.isfinite(latent)):
            raise NumericError(f"preset {name}: non-finite sample")
        out.append(atomic_write(cfg.out / f"sample_{name}.ppm", ppm_bytes(latent)))
        sidecar = {
            "preset": name,
            "seed": cfg.seed,
            "grid": [gh, gw],
            "config": toydit.config_dict(model),
            "mu": trace[0].mu,
            "steps": [
                {"step": r.step, "t": r.t, "tau_f0": r.tau_f0, "tau_f1": r.tau_f1,
                 "beta": r.beta, "mu": r.mu, "mean_text_mass": r.mean_text_mass}
                for r in trace
            ],
        }
        out.append(atomic_write(cfg.out / f"sample_{name}.json",
                                json.dumps(sidecar, indent=2, sort_keys=True) + "\n"))
    return out


def cmd_bench(cfg: RunConfig) -> list[Path]:
    """Time ``anchored_attention`` per query row at several sequence lengths."""
    opts = cfg.section("bench")
    model = cfg.model
    rows = []
    for idx, n in enumerate(opts["lengths"]):
        n = int(n)
        lt = model.text_len
        if n <= lt:
            raise ConfigError(f"bench length {n} must exceed text_len {lt}")
        r = min(int(opts["rows"]), n)
        rng = Rng(cfg.seed).spawn(4, idx)
        logits = diag.iid_logits(lt, n - lt, r, 1.0, rng)
        beta = math.log(4.0)
        best = math.inf
        for _ in range(max(1, int(opts["repeats"]))):
            t0 = time.perf_counter_ns()
            p = anchored_attention(logits, beta, 1.0, model.head_dim)
            best = min(best, time.perf_counter_ns() - t0)
        checksum = fmt(p[:, :lt].sum())
        rows.append([n, r, int(opts["repeats"]), fmt(best / r), checksum])
    return [atomic_write(cfg.out / "bench.csv",
                         _csv(("L", "rows", "repeats", "ns_per_row", "text_mass_sum"), rows))]


COMMANDS = {"schedule": cmd_schedule, "analyze": cmd_analyze, "sample": cmd_sample, "bench": cmd_bench}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tide", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (dotted path); repeatable")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.set, args.seed, args.out)
        cfg.out.mkdir(parents=True, exist_ok=True)
        written = COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"tide: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"tide: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"tide: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"tide: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    for path in written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
