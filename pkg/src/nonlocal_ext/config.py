"""Run configuration: YAML with a strict schema.

Unknown keys, wrong types and out-of-range values are reported with the
line of the offending node.  ``load_config`` returns the fully resolved
configuration (every default filled in) as plain Python data, which the CLI
echoes into its output directory.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import yaml

from .battery import BATTERY_NAMES
from .geometry import BUILTIN_NAMES, RegionSpec

CONFIG_VERSION = 1
CHECKS = ("norm_equivalence", "extension_bounds", "bbm_limit", "char_threshold")


class ConfigError(ValueError):
    pass


@dataclass
class Field:
    kind: str  # int float str bool map list any
    default: object = None
    check: object = None  # callable(value) -> error message or None
    item: object = None  # Field for list items
    fields: dict = None  # for maps
    nullable: bool = False
    choices: tuple = None


def _num(v):
    if isinstance(v, str) and v.strip().lower() in ("inf", "+inf", ".inf"):
        return math.inf
    return v


def _pos(v):
    return None if v > 0 else "must be positive"


def _s_range(v):
    return None if 0 < v <= 1 else "s must satisfy 0<s<=1"


def _p_range(v):
    return None if 1 <= v < math.inf else "p must satisfy 1<=p<inf"


def _s_open(v):
    return None if 0 < v < 1 else "0<s<1 is required for the int-int inequality"


def _prob(v):
    return None if 0 < v < 1 else "must lie in (0, 1)"


def M(**fields):
    return Field("map", fields=fields)


def L(item, default, check=None):
    return Field("list", default, check, item=item)


F = lambda default=None, check=None, nullable=False: Field("float", default, check, nullable=nullable)
I = lambda default=None, check=None, nullable=False: Field("int", default, check, nullable=nullable)
S = lambda default=None, choices=None, nullable=False: Field("str", default, nullable=nullable, choices=choices)

REGION_TAGS = RegionSpec.TAGS

SCHEMA = M(
    version=I(CONFIG_VERSION, lambda v: None if v == CONFIG_VERSION else f"only version {CONFIG_VERSION} is known"),
    seed=I(0),
    output=S("out"),
    domain=M(
        name=S("ball", choices=BUILTIN_NAMES + ("grid",)),
        d=I(1, lambda v: None if v in (1, 2) else "d must be 1 or 2"),
        params=Field("map_any", {}),
        grid_file=S(None, nullable=True),
    ),
    window=Field("window", None, nullable=True),
    m_max=I(None, _pos, nullable=True),
    thickness=M(
        M=F(None, _pos, nullable=True),
        lam=F(1.0 / 125.0, lambda v: None if 0 < v <= 1 else "lambda must lie in (0, 1]", nullable=True),
        kappa=F(0.3, _prob),
    ),
    battery=M(seed=I(0)),
    budget=I(200000, lambda v: None if v >= 10 ** 4 else "budget must be at least 10^4"),
    function=M(
        name=S("sqrt_example", choices=BATTERY_NAMES, nullable=True),
        grid_file=S(None, nullable=True),
        grid_outside=F(0.0),
    ),
    extend=M(
        box=Field("window", None, nullable=True),
        resolution=I(101, lambda v: None if v >= 2 else "resolution must be at least 2"),
        rays=I(8, _pos),
        ray_samples=I(201, lambda v: None if v >= 2 else "need at least 2 samples"),
    ),
    seminorm=M(
        kernel=S("offset", choices=("offset", "cross")),
        A=M(tag=S("Omega", choices=REGION_TAGS), width=F(math.inf, _pos)),
        B=M(tag=S("OmegaComplement", choices=REGION_TAGS), width=F(math.inf, _pos)),
        s=F(0.5, _s_range),
        p=F(2.0, _p_range),
        use_extension=Field("bool", True),
    ),
    verify=M(
        checks=L(S(choices=CHECKS), list(CHECKS)),
        norm_equivalence=M(
            members=L(S(choices=BATTERY_NAMES), ["const", "indicator", "sqrt_example", "collar_0.25", "collar_0.5",
                                                 "collar_1", "bump", "random_grid"]),
            s_grid=L(F(check=_s_range), [0.1, 0.25, 0.5, 0.75, 0.9, 0.95]),
            p_grid=L(F(check=_p_range), [1.0, 2.0, 3.0]),
        ),
        extension_bounds=M(
            members=L(S(choices=BATTERY_NAMES), ["const", "indicator", "sqrt_example", "collar_0.25", "collar_0.5",
                                                 "collar_1", "bump", "random_grid"]),
            p=F(2.0, _p_range),
            int_ext_s=L(F(check=_s_range), [0.1, 0.25, 0.5, 0.75, 0.9, 0.95]),
            int_int_s=L(F(check=_s_open), [0.1, 0.25, 0.5, 0.75, 0.9, 0.95]),
            delta_eps=Field("delta_eps", None, nullable=True),
            betas=L(F(), [0.0, 1.0, -2.0]),
        ),
        bbm_limit=M(
            p=F(2.0, lambda v: None if 1 < v < math.inf else "the gradient bound needs 1<p<inf"),
            s_sequence=L(F(check=_s_open), [0.5, 0.7, 0.9, 0.95, 0.99]),
            sqrt_domain_d=I(None, lambda v: None if v in (1, 2) else "d must be 1 or 2", nullable=True),
        ),
        char_threshold=M(
            p_grid=L(F(check=_p_range), [1.0, 2.0, 3.0]),
            s_grid=L(F(check=_s_range), [0.1, 0.25, 0.5, 0.75, 0.9, 0.95]),
            budget=I(None, lambda v: None if v >= 10 ** 4 else "budget must be at least 10^4", nullable=True),
        ),
        refinement=Field("bool", False),
    ),
)


def _where(source, node):
    return f"{source}:{node.start_mark.line + 1}"


def _scalar(node, kind, path, source, errors):
    if not isinstance(node, yaml.ScalarNode):
        errors.append(f"{_where(source, node)}: {path}: expected a {kind}")
        return None
    val = yaml.safe_load(yaml.serialize(node))
    if val is None:
        return None
    if kind == "float":
        val = _num(val)
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            errors.append(f"{_where(source, node)}: {path}: expected a number, got {val!r}")
            return None
        return float(val)
    if kind == "int":
        if isinstance(val, bool) or not isinstance(val, int):
            errors.append(f"{_where(source, node)}: {path}: expected an integer, got {val!r}")
            return None
        return val
    if kind == "bool":
        if not isinstance(val, bool):
            errors.append(f"{_where(source, node)}: {path}: expected true/false, got {val!r}")
            return None
        return val
    if kind == "str":
        if not isinstance(val, str):
            errors.append(f"{_where(source, node)}: {path}: expected a string, got {val!r}")
            return None
        return val
    raise AssertionError(kind)


def _resolve(spec, node, path, source, errors):
    """Validate ``node`` against ``spec`` and return the resolved value."""
    if node is None:
        return _defaults(spec)
    if isinstance(node, yaml.ScalarNode) and node.tag == "tag:yaml.org,2002:null":
        if spec.kind == "map":
            return _defaults(spec)
        if spec.nullable or spec.default is None:
            return None
        errors.append(f"{_where(source, node)}: {path}: may not be null")
        return None
    if spec.kind == "map":
        if not isinstance(node, yaml.MappingNode):
            errors.append(f"{_where(source, node)}: {path}: expected a mapping")
            return _defaults(spec)
        out = {}
        seen = {}
        for knode, vnode in node.value:
            key = knode.value
            sub = f"{path}.{key}" if path else key
            if key in seen:
                errors.append(f"{_where(source, knode)}: {sub}: duplicate key")
                continue
            seen[key] = vnode
            if key not in spec.fields:
                errors.append(f"{_where(source, knode)}: {sub}: unknown key (allowed: {', '.join(spec.fields)})")
                continue
            out[key] = _resolve(spec.fields[key], vnode, sub, source, errors)
        for key, fs in spec.fields.items():
            if key not in out:
                out[key] = _defaults(fs)
        return out
    if spec.kind == "map_any":
        if not isinstance(node, yaml.MappingNode):
            errors.append(f"{_where(source, node)}: {path}: expected a mapping")
            return {}
        out = {}
        for knode, vnode in node.value:
            out[knode.value] = _scalar(vnode, "float", f"{path}.{knode.value}", source, errors)
        return out
    if spec.kind == "list":
        if not isinstance(node, yaml.SequenceNode):
            errors.append(f"{_where(source, node)}: {path}: expected a list")
            return copy.deepcopy(spec.default)
        vals = [_resolve(spec.item, v, f"{path}[{i}]", source, errors) for i, v in enumerate(node.value)]
        if not vals:
            errors.append(f"{_where(source, node)}: {path}: list may not be empty")
        return vals
    if spec.kind in ("window", "delta_eps"):
        return _pairs(spec, node, path, source, errors)
    val = _scalar(node, spec.kind, path, source, errors)
    if val is None:
        return None
    if spec.choices is not None and val not in spec.choices:
        errors.append(f"{_where(source, node)}: {path}: {val!r} is not one of {', '.join(map(str, spec.choices))}")
    if spec.check is not None:
        msg = spec.check(val)
        if msg:
            errors.append(f"{_where(source, node)}: {path}: {msg} (got {val!r})")
    return val


def _pairs(spec, node, path, source, errors):
    """A window [[lo...], [hi...]] or a list of [delta, eps] pairs."""
    if not isinstance(node, yaml.SequenceNode):
        errors.append(f"{_where(source, node)}: {path}: expected a list")
        return None
    out = []
    for i, sub in enumerate(node.value):
        if not isinstance(sub, yaml.SequenceNode):
            errors.append(f"{_where(source, sub)}: {path}[{i}]: expected a list of numbers")
            continue
        out.append([_scalar(v, "float", f"{path}[{i}][{j}]", source, errors) for j, v in enumerate(sub.value)])
    if spec.kind == "window":
        if len(out) != 2 or len(out[0]) != len(out[1]):
            errors.append(f"{_where(source, node)}: {path}: expected [[lo...], [hi...]]")
        elif any(a is None or b is None or not a < b for a, b in zip(*out)):
            errors.append(f"{_where(source, node)}: {path}: need lo < hi on every axis")
    else:
        for i, pair in enumerate(out):
            if len(pair) != 2 or None in pair:
                errors.append(f"{_where(source, node.value[i])}: {path}[{i}]: expected [delta, eps]")
            elif not 0 < pair[0] <= pair[1]:
                errors.append(f"{_where(source, node.value[i])}: {path}[{i}]: need 0 < delta <= eps")
    return out


def _defaults(spec):
    if spec.kind == "map":
        return {k: _defaults(v) for k, v in spec.fields.items()}
    return copy.deepcopy(spec.default)


def load_config_text(text, source="<config>"):
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else 0
        raise ConfigError(f"{source}:{line}: YAML syntax error: {getattr(exc, 'problem', exc)}") from None
    errors = []
    cfg = _resolve(SCHEMA, root, "", source, errors)
    if not errors:
        _cross_checks(cfg, root, source, errors)
    if errors:
        raise ConfigError("\n".join(errors))
    return cfg


def load_config(path=None):
    if path is None:
        return load_config_text("", "<defaults>")
    with open(path, encoding="utf-8") as fh:
        return load_config_text(fh.read(), str(path))


def _line_of(root, *keys):
    node = root
    for k in keys:
        if not isinstance(node, yaml.MappingNode):
            return 0
        nxt = None
        for kn, vn in node.value:
            if kn.value == k:
                nxt = vn
        if nxt is None:
            return node.start_mark.line + 1
        node = nxt
    return node.start_mark.line + 1


def _cross_checks(cfg, root, source, errors):
    dom = cfg["domain"]
    if dom["name"] == "grid" and not dom["grid_file"]:
        errors.append(f"{source}:{_line_of(root, 'domain')}: domain.grid_file: required when domain.name is grid")
    win = cfg["window"]
    if win is not None and dom["name"] != "grid" and len(win[0]) != dom["d"]:
        errors.append(f"{source}:{_line_of(root, 'window')}: window: dimension {len(win[0])} does not match d={dom['d']}")


def dump_config(cfg):
    """Deterministic YAML text of a resolved configuration."""
    def norm(v):
        if isinstance(v, float) and math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if isinstance(v, dict):
            return {k: norm(x) for k, x in v.items()}
        if isinstance(v, list):
            return [norm(x) for x in v]
        return v
    return yaml.safe_dump(norm(cfg), sort_keys=True, default_flow_style=None, width=100)
