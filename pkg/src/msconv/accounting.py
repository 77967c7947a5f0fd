"""Exact parameter and multiply-accumulate accounting for the two head variants.

Counts come from closed forms over :class:`HeadConfig`, never from walking a
built model, so they can be checked against the allocated parameters.

Conventions: one MAC is one multiply-accumulate (FLOPs = 2 x MACs); bias adds
are not counted.  A modulated deformable conv costs its conv MACs plus
8 MACs per bilinear sample (4 weights, 4 products incl. the mask).  Resizes,
pooling and elementwise ops are reported as element traffic, not MACs.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from msconv.head import HeadConfig
from msconv.pyramid import connection_cost

MAC_CONVENTION = "MACs (1 MAC = 1 multiply-accumulate; FLOPs = 2 x MACs)"

# whole-detector totals incl. ResNet-50 + FPN backbone, for context only
PUBLISHED_PARAMS_M = {"baseline": 37.74, "msconv": 38.49}
PUBLISHED_FLOPS_G = {"baseline": 95.56, "msconv": 98.61}


@dataclass
class CostEntry:
    name: str
    params: int = 0
    macs: int = 0
    traffic: int = 0
    formula: str = ""


@dataclass
class CostReport:
    variant: str
    entries: list[CostEntry] = field(default_factory=list)
    closed_form_params: int = 0
    closed_form_macs: int = 0

    @property
    def total_params(self) -> int:
        return sum(e.params for e in self.entries)

    @property
    def total_macs(self) -> int:
        return sum(e.macs for e in self.entries)

    @property
    def total_traffic(self) -> int:
        return sum(e.traffic for e in self.entries)

    def consistent(self) -> bool:
        return (self.total_params == self.closed_form_params
                and self.total_macs == self.closed_form_macs)

    def as_dict(self) -> dict:
        return {
            "variant": self.variant,
            "convention": MAC_CONVENTION,
            "total_params": self.total_params,
            "total_macs": self.total_macs,
            "total_traffic": self.total_traffic,
            "closed_form_params": self.closed_form_params,
            "closed_form_macs": self.closed_form_macs,
            "entries": [vars(e).copy() for e in self.entries],
        }


def conv_params(c_in: int, c_out: int, k: int, groups: int = 1, bias: bool = True) -> int:
    return k * k * (c_in // groups) * c_out + (c_out if bias else 0)


def conv_macs(c_in: int, c_out: int, k: int, area: int, groups: int = 1) -> int:
    return k * k * (c_in // groups) * c_out * area


def _conv_entry(name, c_in, c_out, k, area, groups=1, copies=1):
    p = conv_params(c_in, c_out, k, groups)
    m = conv_macs(c_in, c_out, k, area, groups)
    g = f"/{groups}" if groups > 1 else ""
    return CostEntry(name, copies * p, copies * m, 0,
                     f"{copies}*({k}^2*{c_in}{g}*{c_out}+{c_out}) params; "
                     f"{copies}*{k}^2*{c_in}{g}*{c_out}*{area} MACs")


def _block_entries(cfg: HeadConfig, prefix: str) -> list[CostEntry]:
    L, C, C_r, k, N = cfg.L, cfg.C, cfg.C_r, cfg.k, cfg.batch
    areas = [h * w for h, w in cfg.shapes]
    A = N * sum(areas)
    out = [CostEntry(f"{prefix}reduce", L * conv_params(C, C_r, 1), conv_macs(C, C_r, 1, A), 0,
                     f"{L}*({C}*{C_r}+{C_r}) params; {C}*{C_r}*{A} MACs")]
    if cfg.use_sa:
        kk = k * k
        out.append(_conv_entry(f"{prefix}offset_gen", C, 3 * L * kk, k, A))
        e = _conv_entry(f"{prefix}deform", L * C_r, L * C_r, k, A, groups=L)
        e.macs += 8 * L * C_r * kk * A
        e.formula += f" + 8*{L * C_r}*{kk}*{A} sampling MACs"
        out.append(e)
    out.append(_conv_entry(f"{prefix}merge", L * C_r, C, 1, A))
    if cfg.use_ca:
        out.append(_conv_entry(f"{prefix}ca_local", C, C, 1, A))
        out.append(_conv_entry(f"{prefix}ca_global", C, C, 1, N * L))
        out.append(_conv_entry(f"{prefix}ca_out", C, C, 1, A))
    out.append(_conv_entry(f"{prefix}out", C, C, 3, A))
    conn = connection_cost(C, C_r, L, cfg.shapes, "gather_scatter", cfg.l_gl)
    out.append(CostEntry(f"{prefix}gather_scatter", traffic=N * conn.element_traffic,
                         formula="resized elements written by gather + scatter"))
    if cfg.use_ca:
        out.append(CostEntry(f"{prefix}pooling", traffic=2 * C * A,
                             formula=f"LAP + GAP read 2*{C}*{A} elements"))
    return out


def _block_params_closed_form(cfg: HeadConfig) -> int:
    L, C, C_r, k = cfg.L, cfg.C, cfg.C_r, cfg.k
    total = L * (C * C_r + C_r) + L * C_r * C + C + 9 * C * C + C
    if cfg.use_sa:
        total += k ** 4 * 3 * L * C + 3 * L * k ** 2 + k ** 2 * C_r * C_r * L + L * C_r
    if cfg.use_ca:
        total += 3 * (C * C + C)
    return total


def _block_macs_closed_form(cfg: HeadConfig) -> int:
    L, C, C_r, k, N = cfg.L, cfg.C, cfg.C_r, cfg.k, cfg.batch
    A = N * sum(h * w for h, w in cfg.shapes)
    per_area = C * C_r + L * C_r * C + 9 * C * C
    extra = 0
    if cfg.use_sa:
        per_area += 3 * L * k ** 4 * C + k ** 2 * C_r * C_r * L + 8 * L * C_r * k ** 2
    if cfg.use_ca:
        per_area += 2 * C * C
        extra += C * C * N * L
    return per_area * A + extra


def _pred_entries(cfg: HeadConfig, A: int) -> list[CostEntry]:
    return [_conv_entry("cls_pred", cfg.C, cfg.cls_channels, 3, A),
            _conv_entry("reg_pred", cfg.C, cfg.reg_channels, 3, A)]


def cost_report(cfg: HeadConfig, variant: str) -> CostReport:
    C = cfg.C
    A = cfg.batch * sum(h * w for h, w in cfg.shapes)
    preds_p = 9 * C * (cfg.cls_channels + cfg.reg_channels) + cfg.cls_channels + cfg.reg_channels
    preds_m = 9 * C * (cfg.cls_channels + cfg.reg_channels) * A
    if variant == "baseline":
        d = cfg.stack_depth
        entries = []
        if d:
            entries += [_conv_entry("cls_convs", C, C, 3, A, copies=d),
                        _conv_entry("reg_convs", C, C, 3, A, copies=d)]
        entries += _pred_entries(cfg, A)
        cf_p = 2 * d * (9 * C * C + C) + preds_p
        cf_m = 2 * d * 9 * C * C * A + preds_m
    elif variant == "msconv":
        entries = []
        for j in range(cfg.msconv_depth):
            entries += _block_entries(cfg, f"blocks.{j}.")
        entries += [_conv_entry("cls_extra", C, C, 3, A), _conv_entry("reg_extra", C, C, 3, A)]
        entries += _pred_entries(cfg, A)
        D = cfg.msconv_depth
        cf_p = D * _block_params_closed_form(cfg) + 2 * (9 * C * C + C) + preds_p
        cf_m = D * _block_macs_closed_form(cfg) + 2 * 9 * C * C * A + preds_m
    elif variant == "block":
        entries = _block_entries(cfg, "")
        cf_p = _block_params_closed_form(cfg)
        cf_m = _block_macs_closed_form(cfg)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return CostReport(variant, entries, cf_p, cf_m)


def count_params(cfg: HeadConfig, variant: str) -> CostReport:
    return cost_report(cfg, variant)


def count_macs(cfg: HeadConfig, variant: str) -> CostReport:
    return cost_report(cfg, variant)


def single_conv_report(c_in: int, c_out: int, k: int, shapes, groups: int = 1,
                       batch: int = 1) -> CostReport:
    A = batch * sum(h * w for h, w in shapes)
    e = _conv_entry("conv", c_in, c_out, k, A, groups)
    return CostReport("conv", [e], conv_params(c_in, c_out, k, groups),
                      conv_macs(c_in, c_out, k, A, groups))


def compare(cfg: HeadConfig) -> dict:
    """Both variants side by side, with the head-only delta and the published whole-model numbers."""
    base = cost_report(cfg, "baseline")
    ms = cost_report(cfg, "msconv")
    dp = ms.total_params - base.total_params
    published_dp = round(PUBLISHED_PARAMS_M["msconv"] - PUBLISHED_PARAMS_M["baseline"], 2)
    return {
        "baseline": base,
        "msconv": ms,
        "params_delta": dp,
        "params_delta_sign": "+" if dp > 0 else "-" if dp < 0 else "0",
        "macs_delta": ms.total_macs - base.total_macs,
        "params_ratio": ms.total_params / base.total_params,
        "macs_ratio": ms.total_macs / base.total_macs,
        "published_params_m": dict(PUBLISHED_PARAMS_M),
        "published_flops_g": dict(PUBLISHED_FLOPS_G),
        "published_params_delta_m": published_dp,
        "sign_agrees_with_published": (dp > 0) == (published_dp > 0),
    }
