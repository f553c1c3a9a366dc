"""Run configuration: an INI file with named sections and ``key = value`` entries.

Grammar (all sections optional unless a command needs them)::

    [design]
    n_c = 45
    n_t = 45
    prior_c = 0.001, 0.001          # shape pair
    prior_t = 0.001, 0.001
    n_ch = 180
    y_ch = 54                       # or: p_hat_ch = 0.3 (rounded half up)
    n_ch_e = 45

    [borrowing]                     # default borrowing variant
    method = eb                     # eb | bp | gbc | jsd | fixed
    eta = 1
    theta = 0.5
    delta_max = 0.1                 # inf disables the gate

    [borrowing:fixed180]            # extra variants; unset keys inherit
    method = fixed                  # from [borrowing], n_ch_e from [design]
    n_ch_e = 180
    delta_max = inf

    [simulation]
    mode = exact                    # exact | mc
    n_sims = 100000
    seed = 0
    alpha = 0.1
    eps = 0.01
    threads = 1                     # 0 = one per CPU
    p_null = 0.3                    # calibration rate, default p̂_ch
    tau = 0.9                       # optional fixed threshold

    [scenarios]
    p_c = 0.15, 0.2, 0.25
    p_t_rule = offset               # offset | absolute
    offsets = 0, 0.2                # offset rule: every p_c with every offset
    p_t = 0.35, 0.4, 0.45           # absolute rule: paired with p_c

    [weights]
    p_hat_c = 0.1, 0.2              # or: y_c = 4, 8
    hyperpriors = 0.001 0.001; 1 1  # default: prior_c

    [optimize]
    n_c_min = 20
    n_c_max = 40
    ratio = 2
    multipliers = 1
    target_power = 0.8
    max_mean_pmd = inf
    max_xi = 1
    band = 0.1
    effect = 0.2
    center = 0.27                   # default p̂_ch

Unknown sections or keys are rejected. ``to_text`` emits the effective
configuration in canonical form; parsing it back gives an equal object.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import math
from dataclasses import dataclass, field

from .betacalc import BetaParams, DomainError
from .borrowing import BorrowingPolicy, HistoricalControl, Method
from .engine import EXACT, DesignSpec, MonteCarlo, Scenario, offset_scenarios
from .optimizer import BorrowingTemplate, OptimizationConstraints

__all__ = [
    "ConfigError",
    "DesignSection",
    "BorrowingVariant",
    "SimulationSection",
    "ScenarioSection",
    "WeightsSection",
    "OptimizeSection",
    "RunConfig",
    "load_config",
    "parse_config",
]


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return repr(x)
    return str(x)


def _fmt_list(xs) -> str:
    return ", ".join(_fmt(x) for x in xs)


def _fmt_pair(p: BetaParams) -> str:
    return f"{_fmt(float(p.alpha))}, {_fmt(float(p.beta))}"


@dataclass(frozen=True)
class DesignSection:
    n_c: int = 45
    n_t: int = 45
    prior_c: BetaParams = BetaParams(0.001, 0.001)
    prior_t: BetaParams = BetaParams(0.001, 0.001)
    n_ch: int = 180
    y_ch: int = 54
    n_ch_e: int = 45

    def hist(self, n_ch_e: int | None = None) -> HistoricalControl:
        return HistoricalControl(self.y_ch, self.n_ch, self.n_ch_e if n_ch_e is None else n_ch_e)


@dataclass(frozen=True)
class BorrowingVariant:
    label: str = "default"
    method: Method = Method.EB
    eta: float = 1.0
    theta: float = 0.5
    delta_max: float = math.inf
    n_ch_e: int | None = None  # None: take it from [design]

    def template(self) -> BorrowingTemplate:
        return BorrowingTemplate(self.method, self.delta_max, self.eta, self.theta)


@dataclass(frozen=True)
class SimulationSection:
    mode: str = "exact"
    n_sims: int = 100_000
    seed: int = 0
    alpha: float = 0.1
    eps: float = 0.01
    threads: int = 1
    p_null: float | None = None
    tau: float | None = None


@dataclass(frozen=True)
class ScenarioSection:
    p_c: tuple[float, ...] = ()
    p_t_rule: str = "offset"
    offsets: tuple[float, ...] = (0.0,)
    p_t: tuple[float, ...] = ()


@dataclass(frozen=True)
class WeightsSection:
    p_hat_c: tuple[float, ...] = ()
    y_c: tuple[int, ...] = ()
    hyperpriors: tuple[BetaParams, ...] = ()


@dataclass(frozen=True)
class OptimizeSection:
    n_c_min: int = 20
    n_c_max: int = 40
    ratio: float = 2.0
    multipliers: tuple[float, ...] = (1.0,)
    target_power: float = 0.8
    max_mean_pmd: float = math.inf
    max_xi: float = 1.0
    band: float = 0.1
    effect: float = 0.2
    center: float | None = None


@dataclass(frozen=True)
class RunConfig:
    design: DesignSection = DesignSection()
    borrowing: tuple[BorrowingVariant, ...] = (BorrowingVariant(),)
    simulation: SimulationSection = SimulationSection()
    scenarios: ScenarioSection = ScenarioSection()
    weights: WeightsSection = WeightsSection()
    optimize: OptimizeSection = OptimizeSection()
    # sections present in the source file; controls what to_text emits
    present: frozenset = field(default=frozenset(), compare=False)

    # -- derived objects ---------------------------------------------------

    def hist_for(self, v: BorrowingVariant) -> HistoricalControl:
        return self.design.hist(v.n_ch_e)

    def design_for(self, v: BorrowingVariant) -> DesignSpec:
        h = self.hist_for(v)
        d = self.design
        policy = BorrowingPolicy(v.method, h.global_a, v.delta_max, v.eta, v.theta)
        return DesignSpec(d.n_c, d.n_t, d.prior_c, d.prior_t, h, policy, self.simulation.alpha)

    def mode(self):
        s = self.simulation
        if s.mode == "exact":
            return EXACT
        return MonteCarlo(s.n_sims, s.seed, s.threads)

    def scenario_list(self) -> list[Scenario]:
        sc = self.scenarios
        if sc.p_t_rule == "absolute":
            return [Scenario(c, t) for c, t in zip(sc.p_c, sc.p_t)]
        out = []
        for off in sc.offsets:
            out.extend(offset_scenarios(sc.p_c, off))
        return out

    def constraints(self) -> OptimizationConstraints:
        o = self.optimize
        return OptimizationConstraints(
            o.target_power, self.simulation.alpha, o.max_mean_pmd, o.max_xi, self.simulation.eps, o.band, o.effect
        )

    def with_overrides(self, **sim) -> "RunConfig":
        """Replace ``[simulation]`` entries (CLI flags win over the file)."""
        sim = {k: v for k, v in sim.items() if v is not None}
        if not sim:
            return self
        cfg = dataclasses.replace(
            self, simulation=dataclasses.replace(self.simulation, **sim), present=self.present | {"simulation"}
        )
        _validate(cfg)
        return cfg

    # -- serialization -----------------------------------------------------

    def to_text(self) -> str:
        """Canonical INI text of the effective configuration."""
        d, s = self.design, self.simulation
        lines = [
            "[design]",
            f"n_c = {d.n_c}",
            f"n_t = {d.n_t}",
            f"prior_c = {_fmt_pair(d.prior_c)}",
            f"prior_t = {_fmt_pair(d.prior_t)}",
            f"n_ch = {d.n_ch}",
            f"y_ch = {d.y_ch}",
            f"n_ch_e = {d.n_ch_e}",
            "",
        ]
        for v in self.borrowing:
            lines.append("[borrowing]" if v.label == "default" else f"[borrowing:{v.label}]")
            lines += [
                f"method = {v.method.value}",
                f"eta = {_fmt(v.eta)}",
                f"theta = {_fmt(v.theta)}",
                f"delta_max = {_fmt(v.delta_max)}",
            ]
            if v.n_ch_e is not None:
                lines.append(f"n_ch_e = {v.n_ch_e}")
            lines.append("")
        lines += [
            "[simulation]",
            f"mode = {s.mode}",
            f"n_sims = {s.n_sims}",
            f"seed = {s.seed}",
            f"alpha = {_fmt(s.alpha)}",
            f"eps = {_fmt(s.eps)}",
            f"threads = {s.threads}",
        ]
        if s.p_null is not None:
            lines.append(f"p_null = {_fmt(s.p_null)}")
        if s.tau is not None:
            lines.append(f"tau = {_fmt(s.tau)}")
        lines.append("")
        if "scenarios" in self.present:
            sc = self.scenarios
            lines += ["[scenarios]", f"p_c = {_fmt_list(sc.p_c)}", f"p_t_rule = {sc.p_t_rule}"]
            if sc.p_t_rule == "offset":
                lines.append(f"offsets = {_fmt_list(sc.offsets)}")
            else:
                lines.append(f"p_t = {_fmt_list(sc.p_t)}")
            lines.append("")
        if "weights" in self.present:
            w = self.weights
            lines.append("[weights]")
            if w.y_c:
                lines.append(f"y_c = {_fmt_list(w.y_c)}")
            else:
                lines.append(f"p_hat_c = {_fmt_list(w.p_hat_c)}")
            if w.hyperpriors:
                hp = "; ".join(f"{_fmt(float(p.alpha))} {_fmt(float(p.beta))}" for p in w.hyperpriors)
                lines.append(f"hyperpriors = {hp}")
            lines.append("")
        if "optimize" in self.present:
            o = self.optimize
            lines += [
                "[optimize]",
                f"n_c_min = {o.n_c_min}",
                f"n_c_max = {o.n_c_max}",
                f"ratio = {_fmt(o.ratio)}",
                f"multipliers = {_fmt_list(o.multipliers)}",
                f"target_power = {_fmt(o.target_power)}",
                f"max_mean_pmd = {_fmt(o.max_mean_pmd)}",
                f"max_xi = {_fmt(o.max_xi)}",
                f"band = {_fmt(o.band)}",
                f"effect = {_fmt(o.effect)}",
            ]
            if o.center is not None:
                lines.append(f"center = {_fmt(o.center)}")
            lines.append("")
        return "\n".join(lines)

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    def design_hash(self) -> str:
        """Hash of what determines tau: design, borrowing, alpha and the calibration rate."""
        parts = [self.to_text().split("[simulation]")[0], _fmt(self.simulation.alpha), _fmt(self.simulation.p_null)]
        return hashlib.sha256("\n".join(parts).encode()).hexdigest()[:16]


# -- parsing -------------------------------------------------------------------

_KEYS = {
    "design": {"n_c", "n_t", "prior_c", "prior_t", "n_ch", "y_ch", "p_hat_ch", "n_ch_e"},
    "borrowing": {"method", "eta", "theta", "delta_max", "n_ch_e"},
    "simulation": {"mode", "n_sims", "seed", "alpha", "eps", "threads", "p_null", "tau"},
    "scenarios": {"p_c", "p_t_rule", "offsets", "p_t"},
    "weights": {"p_hat_c", "y_c", "hyperpriors"},
    "optimize": {
        "n_c_min",
        "n_c_max",
        "ratio",
        "multipliers",
        "target_power",
        "max_mean_pmd",
        "max_xi",
        "band",
        "effect",
        "center",
    },
}


def _float(sec: str, key: str, raw: str) -> float:
    try:
        x = float(raw)
    except ValueError:
        raise ConfigError(f"[{sec}] {key}: expected a number, got {raw!r}") from None
    if math.isnan(x):
        raise ConfigError(f"[{sec}] {key}: NaN is not allowed")
    return x


def _int(sec: str, key: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"[{sec}] {key}: expected an integer, got {raw!r}") from None


def _floats(sec: str, key: str, raw: str) -> tuple[float, ...]:
    return tuple(_float(sec, key, t) for t in raw.replace(",", " ").split())


def _ints(sec: str, key: str, raw: str) -> tuple[int, ...]:
    return tuple(_int(sec, key, t) for t in raw.replace(",", " ").split())


def _pair(sec: str, key: str, raw: str) -> BetaParams:
    vals = _floats(sec, key, raw)
    if len(vals) != 2:
        raise ConfigError(f"[{sec}] {key}: expected two shape values, got {raw!r}")
    try:
        return BetaParams(*vals)
    except DomainError as e:
        raise ConfigError(f"[{sec}] {key}: {e}") from None


def _choice(sec: str, key: str, raw: str, options) -> str:
    v = raw.strip().lower()
    if v not in options:
        raise ConfigError(f"[{sec}] {key}: expected one of {sorted(options)}, got {raw!r}")
    return v


def _check_keys(sec: str, section) -> None:
    base = sec.split(":", 1)[0]
    unknown = sorted(set(section) - _KEYS[base])
    if unknown:
        raise ConfigError(f"[{sec}] unknown key(s): {', '.join(unknown)}")


def _parse_design(s) -> DesignSection:
    kw = {}
    for key in ("n_c", "n_t", "n_ch", "n_ch_e"):
        if key in s:
            kw[key] = _int("design", key, s[key])
    for key in ("prior_c", "prior_t"):
        if key in s:
            kw[key] = _pair("design", key, s[key])
    if "y_ch" in s and "p_hat_ch" in s:
        raise ConfigError("[design] give either y_ch or p_hat_ch, not both")
    if "y_ch" in s:
        kw["y_ch"] = _int("design", "y_ch", s["y_ch"])
    elif "p_hat_ch" in s:
        p = _float("design", "p_hat_ch", s["p_hat_ch"])
        n_ch = kw.get("n_ch", DesignSection.n_ch)
        try:
            kw["y_ch"] = HistoricalControl.from_rate(p, n_ch, 0).y_ch
        except DomainError as e:
            raise ConfigError(f"[design] p_hat_ch: {e}") from None
    return DesignSection(**kw)


def _parse_variant(label: str, s, base: dict) -> BorrowingVariant:
    sec = "borrowing" if label == "default" else f"borrowing:{label}"
    kw = dict(base)
    kw["label"] = label
    if "method" in s:
        m = _choice(sec, "method", s["method"], {m.value for m in Method})
        kw["method"] = Method(m)
    for key in ("eta", "theta", "delta_max"):
        if key in s:
            kw[key] = _float(sec, key, s[key])
    if "n_ch_e" in s:
        kw["n_ch_e"] = _int(sec, "n_ch_e", s["n_ch_e"])
    return BorrowingVariant(**kw)


def _parse_simulation(s) -> SimulationSection:
    kw = {}
    if "mode" in s:
        kw["mode"] = _choice("simulation", "mode", s["mode"], {"exact", "mc"})
    for key in ("n_sims", "seed", "threads"):
        if key in s:
            kw[key] = _int("simulation", key, s[key])
    for key in ("alpha", "eps", "p_null", "tau"):
        if key in s:
            kw[key] = _float("simulation", key, s[key])
    return SimulationSection(**kw)


def _parse_scenarios(s) -> ScenarioSection:
    kw = {}
    if "p_c" in s:
        kw["p_c"] = _floats("scenarios", "p_c", s["p_c"])
    rule = _choice("scenarios", "p_t_rule", s.get("p_t_rule", "offset"), {"offset", "absolute"})
    kw["p_t_rule"] = rule
    if rule == "offset":
        if "p_t" in s:
            raise ConfigError("[scenarios] p_t is only valid with p_t_rule = absolute")
        if "offsets" in s:
            kw["offsets"] = _floats("scenarios", "offsets", s["offsets"])
    else:
        if "offsets" in s:
            raise ConfigError("[scenarios] offsets is only valid with p_t_rule = offset")
        kw["p_t"] = _floats("scenarios", "p_t", s.get("p_t", ""))
    return ScenarioSection(**kw)


def _parse_weights(s) -> WeightsSection:
    kw = {}
    if "p_hat_c" in s and "y_c" in s:
        raise ConfigError("[weights] give either p_hat_c or y_c, not both")
    if "p_hat_c" in s:
        kw["p_hat_c"] = _floats("weights", "p_hat_c", s["p_hat_c"])
    if "y_c" in s:
        kw["y_c"] = _ints("weights", "y_c", s["y_c"])
    if "hyperpriors" in s:
        kw["hyperpriors"] = tuple(
            _pair("weights", "hyperpriors", chunk) for chunk in s["hyperpriors"].split(";") if chunk.strip()
        )
    return WeightsSection(**kw)


def _parse_optimize(s) -> OptimizeSection:
    kw = {}
    for key in ("n_c_min", "n_c_max"):
        if key in s:
            kw[key] = _int("optimize", key, s[key])
    for key in ("ratio", "target_power", "max_mean_pmd", "max_xi", "band", "effect", "center"):
        if key in s:
            kw[key] = _float("optimize", key, s[key])
    if "multipliers" in s:
        kw["multipliers"] = _floats("optimize", "multipliers", s["multipliers"])
    return OptimizeSection(**kw)


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def _validate(cfg: RunConfig) -> None:
    d, s, sc, w, o = cfg.design, cfg.simulation, cfg.scenarios, cfg.weights, cfg.optimize
    _require(d.n_c >= 1, f"[design] n_c must be >= 1, got {d.n_c}")
    _require(d.n_t >= 1, f"[design] n_t must be >= 1, got {d.n_t}")
    _require(d.n_ch >= 1, f"[design] n_ch must be >= 1, got {d.n_ch}")
    _require(0 <= d.y_ch <= d.n_ch, f"[design] y_ch must lie in [0, n_ch={d.n_ch}], got {d.y_ch}")
    _require(0 <= d.n_ch_e <= d.n_ch, f"[design] n_ch_e must lie in [0, n_ch={d.n_ch}], got {d.n_ch_e}")
    labels = set()
    for v in cfg.borrowing:
        sec = "borrowing" if v.label == "default" else f"borrowing:{v.label}"
        _require(v.label not in labels, f"[{sec}] duplicate variant label")
        labels.add(v.label)
        _require(v.eta > 0, f"[{sec}] eta must be positive, got {v.eta}")
        _require(0 < v.theta < 1, f"[{sec}] theta must lie in (0, 1), got {v.theta}")
        _require(v.delta_max >= 0, f"[{sec}] delta_max must be non-negative, got {v.delta_max}")
        if v.n_ch_e is not None:
            _require(0 <= v.n_ch_e <= d.n_ch, f"[{sec}] n_ch_e must lie in [0, n_ch={d.n_ch}], got {v.n_ch_e}")
    _require(s.n_sims >= 1, f"[simulation] n_sims must be >= 1, got {s.n_sims}")
    _require(0 <= s.seed < 2**64, f"[simulation] seed must be an unsigned 64-bit integer, got {s.seed}")
    _require(0 < s.alpha < 1, f"[simulation] alpha must lie in (0, 1), got {s.alpha}")
    _require(s.eps >= 0, f"[simulation] eps must be non-negative, got {s.eps}")
    _require(s.threads >= 0, f"[simulation] threads must be >= 0, got {s.threads}")
    _require(s.mode in ("exact", "mc"), f"[simulation] mode must be exact or mc, got {s.mode!r}")
    if s.p_null is not None:
        _require(0 < s.p_null < 1, f"[simulation] p_null must lie in (0, 1), got {s.p_null}")
    if s.tau is not None:
        _require(0 < s.tau < 1, f"[simulation] tau must lie in (0, 1), got {s.tau}")
    for p in sc.p_c:
        _require(0 <= p <= 1, f"[scenarios] p_c values must lie in [0, 1], got {p}")
    if sc.p_t_rule == "absolute":
        _require(len(sc.p_t) == len(sc.p_c), "[scenarios] p_t must list one value per p_c")
        for p in sc.p_t:
            _require(0 <= p <= 1, f"[scenarios] p_t values must lie in [0, 1], got {p}")
    else:
        for off in sc.offsets:
            for p in sc.p_c:
                t = round(p + off, 12)
                _require(0 <= t <= 1, f"[scenarios] offset {off} takes p_c={p} outside [0, 1]")
    for p in w.p_hat_c:
        _require(0 <= p <= 1, f"[weights] p_hat_c values must lie in [0, 1], got {p}")
    for y in w.y_c:
        _require(0 <= y <= d.n_c, f"[weights] y_c values must lie in [0, n_c={d.n_c}], got {y}")
    _require(1 <= o.n_c_min <= o.n_c_max, f"[optimize] need 1 <= n_c_min <= n_c_max, got {o.n_c_min}, {o.n_c_max}")
    _require(o.ratio > 0, f"[optimize] ratio must be positive, got {o.ratio}")
    _require(len(o.multipliers) > 0, "[optimize] multipliers must not be empty")
    for m in o.multipliers:
        _require(m >= 0, f"[optimize] multipliers must be non-negative, got {m}")
        _require(
            math.floor(m * o.n_c_max + 0.5) <= d.n_ch,
            f"[optimize] multiplier {m} at n_c_max={o.n_c_max} exceeds n_ch={d.n_ch}",
        )
    _require(0 <= o.target_power < 1, f"[optimize] target_power must lie in [0, 1), got {o.target_power}")
    _require(o.max_mean_pmd >= 0, f"[optimize] max_mean_pmd must be non-negative, got {o.max_mean_pmd}")
    _require(0 <= o.max_xi <= 1, f"[optimize] max_xi must lie in [0, 1], got {o.max_xi}")
    _require(o.band >= 0, f"[optimize] band must be non-negative, got {o.band}")
    if o.center is not None:
        _require(0 < o.center < 1, f"[optimize] center must lie in (0, 1), got {o.center}")


def parse_config(text: str) -> RunConfig:
    # ';' separates hyperprior pairs, so only '#' starts an inline comment
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None, delimiters=("=",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}") from None

    present = set()
    for sec in cp.sections():
        base = sec.split(":", 1)[0]
        if base not in _KEYS or (":" in sec and base != "borrowing"):
            raise ConfigError(f"unknown section [{sec}]")
        if ":" in sec and not sec.split(":", 1)[1].strip():
            raise ConfigError(f"[{sec}] variant label is empty")
        _check_keys(sec, cp[sec])
        present.add(base)

    design = _parse_design(cp["design"]) if cp.has_section("design") else DesignSection()
    default = _parse_variant("default", cp["borrowing"] if cp.has_section("borrowing") else {}, {})
    inherit = {k: getattr(default, k) for k in ("method", "eta", "theta", "delta_max")}
    variants = [default]
    for sec in cp.sections():
        if sec.startswith("borrowing:"):
            variants.append(_parse_variant(sec.split(":", 1)[1].strip(), cp[sec], inherit))
    cfg = RunConfig(
        design=design,
        borrowing=tuple(variants),
        simulation=_parse_simulation(cp["simulation"]) if cp.has_section("simulation") else SimulationSection(),
        scenarios=_parse_scenarios(cp["scenarios"]) if cp.has_section("scenarios") else ScenarioSection(),
        weights=_parse_weights(cp["weights"]) if cp.has_section("weights") else WeightsSection(),
        optimize=_parse_optimize(cp["optimize"]) if cp.has_section("optimize") else OptimizeSection(),
        present=frozenset(present),
    )
    _validate(cfg)
    return cfg


def load_config(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path!r}: {e.strerror}") from None
    return parse_config(text)
