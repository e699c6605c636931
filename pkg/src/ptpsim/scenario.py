"""Scenario documents: parsing, validation, default filling and provenance.

A scenario is a TOML document with a versioned schema header. See the README
for the full grammar; in short:

    schema = "ptpsim-scenario/1"
    seed = 1
    duration_s = 300

    [switch]            forwarding_delay_ns, queue_jitter, transparent_clock, jitter_per_port
    [pps]               pulse_width_ns
    [servo]             kp, ki, step_threshold_ns, delay_alpha   (defaults for every node)
    [criteria]          convergence_window, convergence_bound_ns, max_p95_skew_ns, max_p95_offset_ns

    [[nodes]]
    id = "gm"
    role = "master"     # master | slave_only | auto
    timestamp_model = "MacB"
    [nodes.descriptor]  priority1, clock_class, ..., clock_identity = "00:00:00:00:00:00:00:01"
    [nodes.clock]       initial_offset_ns, frequency_offset_ppm, granularity_ns, slew_cap_ppb
    [nodes.link]        base_delay_ns, jitter, asymmetry_ns, loss_probability
    [nodes.port]        domain_number, log_sync_interval, log_announce_interval, ...
    [nodes.servo]       per-node servo overrides

Jitter values are inline tables: ``{ kind = "uniform", magnitude_ns = 200 }``.
"""
from __future__ import annotations

import copy
import hashlib
import re
from dataclasses import dataclass, field, replace
from typing import Any, Optional

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from .bmc import ClockDescriptor
from .clock import NS_PER_S, ClockError, PpsConfig
from .engine import PortConfig
from .netsim import (
    APP_C, MAC_B, PHY_A, Jitter, LinkModel, NodeSpec, ScenarioInvalid, SwitchModel,
)
from .servo import ServoState

SCHEMA = "ptpsim-scenario/1"
TIMESTAMP_MODELS = {m.name: m for m in (PHY_A, MAC_B, APP_C)}
ROLES = ("master", "slave_only", "auto")
DEFAULT_TX_TIMESTAMP_LATENCY_NS = 10_000


class ScenarioError(ValueError):
    pass


class ParseError(ScenarioError):
    def __init__(self, message: str, line: Optional[int] = None, field: Optional[str] = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.line = line
        self.field = field


class ValidationError(ScenarioError):
    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


@dataclass(frozen=True)
class Criteria:
    convergence_window: int = 10
    convergence_bound_ns: int = 1000
    max_p95_skew_ns: int = 100
    max_p95_offset_ns: Optional[int] = None


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int
    duration_ns: int
    nodes: tuple[NodeSpec, ...]
    roles: dict[str, str]
    switch: SwitchModel
    pps: PpsConfig
    criteria: Criteria
    tx_timestamp_latency_ns: int
    digest: str
    provenance: tuple[str, ...] = ()
    raw: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def slave_ids(self) -> list[str]:
        return [n.node_id for n in self.nodes if self.roles[n.node_id] != "master"]


def scenario_digest(text: str) -> str:
    """SHA-256 over the UTF-8 text with line endings normalized, so it is platform stable."""
    norm = text.replace("\r\n", "\n").replace("\r", "\n")
    return hashlib.sha256(norm.encode("utf-8")).hexdigest()


def parse_document(text: str) -> dict:
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        m = re.search(r"line (\d+)", str(e))
        raise ParseError(str(e), line=int(m.group(1)) if m else None) from None


class _Reader:
    """Pulls typed values out of a table, filling defaults and logging provenance."""

    def __init__(self, table: Any, path: str, provenance: list[str]):
        if not isinstance(table, dict):
            raise ParseError("expected a table", field=path or "<root>")
        self.table = table
        self.path = path
        self.provenance = provenance
        self.used: set[str] = set()

    def _name(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def get(self, key: str, types, default=None, *, published: bool = False, required: bool = False):
        self.used.add(key)
        if key not in self.table:
            if required:
                raise ParseError("missing required field", field=self._name(key))
            if default is not None and not published:
                self.provenance.append(f"{self._name(key)} = {_show(default)}")
            return default
        v = self.table[key]
        if isinstance(v, bool) and bool not in _as_tuple(types):
            raise ParseError(f"expected {_type_names(types)}, got boolean", field=self._name(key))
        if not isinstance(v, types):
            raise ParseError(f"expected {_type_names(types)}, got {type(v).__name__}", field=self._name(key))
        return v

    def sub(self, key: str) -> _Reader:
        self.used.add(key)
        return _Reader(self.table.get(key, {}), self._name(key), self.provenance)

    def has(self, key: str) -> bool:
        return key in self.table

    def finish(self) -> None:
        extra = sorted(set(self.table) - self.used)
        if extra:
            raise ParseError("unknown field", field=self._name(extra[0]))


def _as_tuple(types) -> tuple:
    return types if isinstance(types, tuple) else (types,)


def _type_names(types) -> str:
    return " or ".join(t.__name__ for t in _as_tuple(types))


def _show(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, Jitter):
        return f'{{ kind = "{v.kind}", magnitude_ns = {_show(v.magnitude_ns)} }}'
    if isinstance(v, str):
        return f'"{v}"'
    if isinstance(v, float) and v.is_integer():
        return str(int(v)) if abs(v) >= 1 or v == 0 else repr(v)
    return repr(v)


def _jitter(r: _Reader, key: str, default: Jitter) -> Jitter:
    v = r.get(key, (dict, int, float), default)
    if isinstance(v, Jitter):
        return v
    name = r._name(key)
    if isinstance(v, (int, float)):
        v = {"kind": "uniform", "magnitude_ns": v}
    jr = _Reader(v, name, r.provenance)
    kind = jr.get("kind", str, required=True)
    mag = jr.get("magnitude_ns", (int, float), 0 if kind == "none" else None, published=True,
                 required=kind != "none")
    jr.finish()
    try:
        return Jitter(kind, float(mag))
    except (ValueError, ScenarioInvalid) as e:
        raise ValidationError(str(e), field=name) from None


def _identity(value: str, field_name: str) -> bytes:
    hexstr = value.replace(":", "").replace("-", "")
    try:
        raw = bytes.fromhex(hexstr)
    except ValueError:
        raise ParseError("clock identity must be 8 hex octets", field=field_name) from None
    if len(raw) != 8:
        raise ParseError("clock identity must be 8 hex octets", field=field_name)
    return raw


def _u(v: int, bits: int, name: str) -> int:
    if not 0 <= v < (1 << bits):
        raise ValidationError(f"{v} outside unsigned {bits}-bit range", field=name)
    return v


def _servo(r: _Reader, base: ServoState, record_defaults: bool) -> ServoState:
    # defaults are only logged once, at the top-level [servo] table
    def g(key, types, default):
        if record_defaults:
            return r.get(key, types, default)
        return r.get(key, types, None) if r.has(key) else (r.used.add(key) or default)

    s = replace(
        base,
        kp=float(g("kp", (int, float), base.kp)),
        ki=float(g("ki", (int, float), base.ki)),
        step_threshold_ns=g("step_threshold_ns", int, base.step_threshold_ns),
        delay_alpha=float(g("delay_alpha", (int, float), base.delay_alpha)),
    )
    r.finish()
    if s.kp < 0 or s.ki < 0:
        raise ValidationError("servo gains must be >= 0", field=r.path)
    if s.step_threshold_ns <= 0:
        raise ValidationError("step threshold must be positive", field=f"{r.path}.step_threshold_ns")
    if not 0 < s.delay_alpha <= 1:
        raise ValidationError("delay_alpha must be in (0, 1]", field=f"{r.path}.delay_alpha")
    return s


def build_scenario(doc: dict, digest: str = "", name: str = "scenario") -> Scenario:
    prov: list[str] = []
    root = _Reader(doc, "", prov)
    schema = root.get("schema", str, required=True)
    if schema != SCHEMA:
        raise ValidationError(f"unsupported schema {schema!r}, expected {SCHEMA!r}", field="schema")
    name = root.get("name", str, name, published=True)
    seed = root.get("seed", int, required=True)
    if not 0 <= seed < 1 << 64:
        raise ValidationError("seed must be an unsigned 64-bit integer", field="seed")
    if root.has("duration_ns") and root.has("duration_s"):
        raise ValidationError("give duration_ns or duration_s, not both", field="duration_ns")
    if root.has("duration_ns"):
        duration_ns = root.get("duration_ns", int)
    else:
        duration_ns = round(root.get("duration_s", (int, float), required=True) * NS_PER_S)
    if duration_ns < 0:
        raise ValidationError("duration must be >= 0", field="duration")
    tx_latency = root.get("tx_timestamp_latency_ns", int, DEFAULT_TX_TIMESTAMP_LATENCY_NS)
    if tx_latency < 0:
        raise ValidationError("must be >= 0", field="tx_timestamp_latency_ns")

    sw = root.sub("switch")
    forwarding = sw.get("forwarding_delay_ns", int, 2_000)
    queue_jitter = _jitter(sw, "queue_jitter", Jitter.uniform(200))
    transparent = sw.get("transparent_clock", bool, False)
    per_port = sw.get("jitter_per_port", bool, False)
    sw.finish()
    if forwarding < 0:
        raise ValidationError("negative delay", field="switch.forwarding_delay_ns")

    pr = root.sub("pps")
    try:
        pps = PpsConfig(pr.get("pulse_width_ns", int, 10_000_000, published=True))
    except ClockError as e:
        raise ValidationError(str(e), field="pps.pulse_width_ns") from None
    pr.finish()

    base_servo = _servo(root.sub("servo"), ServoState(), record_defaults=True)

    cr = root.sub("criteria")
    criteria = Criteria(
        convergence_window=cr.get("convergence_window", int, 10),
        convergence_bound_ns=cr.get("convergence_bound_ns", int, 1000, published=True),
        max_p95_skew_ns=cr.get("max_p95_skew_ns", int, 100, published=True),
        max_p95_offset_ns=cr.get("max_p95_offset_ns", int, None),
    )
    cr.finish()
    if criteria.convergence_window < 1:
        raise ValidationError("must be >= 1", field="criteria.convergence_window")
    if criteria.convergence_bound_ns <= 0:
        raise ValidationError("must be positive", field="criteria.convergence_bound_ns")

    root.used.add("nodes")
    raw_nodes = doc.get("nodes", [])
    if not isinstance(raw_nodes, list) or not raw_nodes:
        raise ValidationError("at least one [[nodes]] entry is required", field="nodes")
    root.finish()

    nodes: list[NodeSpec] = []
    roles: dict[str, str] = {}
    for index, raw in enumerate(raw_nodes, start=1):
        spec, role = _node(raw, index, prov, base_servo)
        if spec.node_id in roles:
            raise ValidationError(f"duplicate node id {spec.node_id!r}", field=f"nodes[{spec.node_id}]")
        roles[spec.node_id] = role
        nodes.append(spec)
    idents = [n.port.descriptor.clock_identity for n in nodes]
    if len(set(idents)) != len(idents):
        raise ValidationError("clock identities must be unique", field="nodes.descriptor.clock_identity")

    try:
        switch = SwitchModel(tuple(n.node_id for n in nodes), forwarding, queue_jitter, transparent, per_port)
    except ScenarioInvalid as e:
        raise ValidationError(str(e), field="switch") from None

    return Scenario(
        name=name, seed=seed, duration_ns=duration_ns, nodes=tuple(nodes), roles=roles, switch=switch,
        pps=pps, criteria=criteria, tx_timestamp_latency_ns=tx_latency, digest=digest,
        provenance=tuple(prov), raw=copy.deepcopy(doc),
    )


def _node(raw: Any, index: int, prov: list[str], base_servo: ServoState) -> tuple[NodeSpec, str]:
    if not isinstance(raw, dict):
        raise ParseError("expected a table", field=f"nodes[{index}]")
    node_id = raw.get("id")
    if not isinstance(node_id, str) or not node_id or any(c.isspace() for c in node_id):
        raise ParseError("node id must be a non-empty string without whitespace", field=f"nodes[{index}].id")
    r = _Reader(raw, f"nodes[{node_id}]", prov)
    r.used.add("id")
    role = r.get("role", str, "auto")
    if role not in ROLES:
        raise ValidationError(f"role must be one of {', '.join(ROLES)}", field=f"{r.path}.role")
    model_name = r.get("timestamp_model", str, "MacB")
    if model_name not in TIMESTAMP_MODELS:
        raise ValidationError(f"timestamp model must be one of {', '.join(TIMESTAMP_MODELS)}",
                              field=f"{r.path}.timestamp_model")

    d = r.sub("descriptor")
    ident_default = f"00:00:00:00:00:00:{index >> 8:02x}:{index & 0xFF:02x}"
    ident_text = d.get("clock_identity", str, ident_default)
    descriptor = ClockDescriptor(
        priority1=_u(d.get("priority1", int, 128), 8, f"{d.path}.priority1"),
        clock_class=_u(d.get("clock_class", int, 248), 8, f"{d.path}.clock_class"),
        clock_accuracy=_u(d.get("clock_accuracy", int, 0xFE), 8, f"{d.path}.clock_accuracy"),
        offset_scaled_log_variance=_u(d.get("offset_scaled_log_variance", int, 0xFFFF), 16,
                                      f"{d.path}.offset_scaled_log_variance"),
        priority2=_u(d.get("priority2", int, 128), 8, f"{d.path}.priority2"),
        clock_identity=_identity(ident_text, f"{d.path}.clock_identity"),
    )
    d.finish()

    c = r.sub("clock")
    offset = c.get("initial_offset_ns", int, 0)
    drift = float(c.get("frequency_offset_ppm", (int, float), 0.0))
    granularity = c.get("granularity_ns", int, 20)
    slew_cap = float(c.get("slew_cap_ppb", (int, float), 100_000))
    c.finish()
    if granularity < 1:
        raise ValidationError("must be >= 1", field=f"{c.path}.granularity_ns")
    if abs(drift) > 500:
        raise ValidationError("|drift| must be <= 500 ppm", field=f"{c.path}.frequency_offset_ppm")
    if slew_cap <= 0:
        raise ValidationError("must be positive", field=f"{c.path}.slew_cap_ppb")

    lk = r.sub("link")
    base_delay = lk.get("base_delay_ns", int, 100)
    link_jitter = _jitter(lk, "jitter", Jitter())
    asym = lk.get("asymmetry_ns", int, 0)
    loss = float(lk.get("loss_probability", (int, float), 0.0))
    lk.finish()
    if base_delay < 0:
        raise ValidationError("negative delay", field=f"{lk.path}.base_delay_ns")
    if base_delay + asym < 0:
        raise ValidationError("asymmetry makes the forward delay negative", field=f"{lk.path}.asymmetry_ns")
    if not 0 <= loss <= 1:
        raise ValidationError("must be in [0, 1]", field=f"{lk.path}.loss_probability")

    p = r.sub("port")
    port_kw = dict(
        port_number=p.get("port_number", int, 1),
        domain_number=p.get("domain_number", int, 0),
        log_sync_interval=p.get("log_sync_interval", int, 0),
        log_announce_interval=p.get("log_announce_interval", int, 1),
        log_min_delay_req_interval=p.get("log_min_delay_req_interval", int, 0),
        announce_receipt_timeout=p.get("announce_receipt_timeout", int, 3),
        qualification_threshold=p.get("qualification_threshold", int, 2),
    )
    p.finish()
    if not 1 <= port_kw["port_number"] <= 0xFFFE:
        raise ValidationError("port number must be in [1, 65534]", field=f"{p.path}.port_number")
    if port_kw["qualification_threshold"] < 1:
        raise ValidationError("must be >= 1", field=f"{p.path}.qualification_threshold")

    servo = _servo(r.sub("servo"), base_servo, record_defaults=False)
    servo = replace(servo, slew_cap_ppb=slew_cap)
    r.finish()

    try:
        port = PortConfig(
            descriptor=descriptor, slave_only=role == "slave_only", master_only=role == "master",
            jitter_seed=index, servo=servo, **port_kw,
        )
        link = LinkModel(base_delay, link_jitter, asym, loss)
    except (ValueError, ScenarioInvalid) as e:
        raise ValidationError(str(e), field=f"{r.path}.port") from None
    spec = NodeSpec(
        node_id=node_id, port=port, initial_offset_ns=offset, frequency_offset_ppm=drift,
        granularity_ns=granularity, slew_cap_ppb=slew_cap, timestamp_model=TIMESTAMP_MODELS[model_name],
        link=link,
    )
    return spec, role


def load_scenario(text: str, name: str = "scenario") -> Scenario:
    return build_scenario(parse_document(text), scenario_digest(text), name)


def load_scenario_file(path) -> Scenario:
    from pathlib import Path

    p = Path(path)
    return load_scenario(p.read_text(encoding="utf-8"), p.stem)


def packaged_scenario_text(name: str) -> str:
    from importlib.resources import files

    return files("ptpsim.scenarios").joinpath(f"{name}.toml").read_text(encoding="utf-8")


def load_packaged(name: str) -> Scenario:
    return load_scenario(packaged_scenario_text(name), name)


def set_param(doc: dict, path: str, value: Any) -> dict:
    """Copy of ``doc`` with the dotted ``path`` set. ``nodes.<id>.…`` addresses a node by id."""
    out = copy.deepcopy(doc)
    parts = path.split(".")
    if not all(parts):
        raise ValidationError("empty path component", field=path)
    target = out
    i = 0
    while i < len(parts) - 1:
        key = parts[i]
        if key == "nodes" and isinstance(target.get("nodes"), list):
            node_id = parts[i + 1]
            match = [n for n in target["nodes"] if isinstance(n, dict) and n.get("id") == node_id]
            if not match:
                raise ValidationError(f"no node with id {node_id!r}", field=path)
            target = match[0]
            i += 2
            continue
        nxt = target.setdefault(key, {})
        if not isinstance(nxt, dict):
            raise ValidationError(f"{key} is not a table", field=path)
        target = nxt
        i += 1
    if i != len(parts) - 1:
        raise ValidationError("path must name a field", field=path)
    target[parts[-1]] = value
    return out


def parse_value(text: str) -> Any:
    """A sweep value as a TOML literal; bare words fall back to strings."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text
