"""Desk-scale acceptance harness.

Property checks (gradients, AUC, pooling identities, losses, folds, mapping,
resolution) run on random inputs; the end-to-end check generates the phantom
dataset, trains the reduced-width Max, FC and baseline variants on four
patient-grouped folds and scores them.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
import tempfile
import time
import traceback
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .data.folds import make_folds
from .data.loader import SampleCache
from .data.manifest import DatasetManifest, ImageSample
from .data.phantom import PhantomConfig, generate_phantom_dataset
from .evaluation.mapping import map_gt_cross_schema, map_predictions_cross_schema
from .evaluation.roc import ScoredSet, roc_curve
from .evaluation.run import evaluate_run, pointing_summary
from .losses import bce, combined_loss, diagnostic_loss, lesion_loss
from .model import ArchConfig, ModelVariant, PredictionRecord, aggregate_max, global_max_pool
from .schema import ADAM, ADAM_EVAL, AMDLESIONS, AMDLESIONS_TO_ADAM, LesionSchema
from .training import TrainConfig, init_parameters, train

log = logging.getLogger(__name__)

VARIANTS = (ModelVariant.AL_MAX, ModelVariant.AL_FC, ModelVariant.A_ONLY)

CRITERIA = {
    1: "gradient check",
    2: "AUC oracle equivalence",
    3: "GMP/aggregation identities",
    4: "loss reference values",
    5: "fold constraints",
    6: "cross-schema mapping",
    7: "phantom end-to-end",
    8: "A+L Max vs A-O diagnosis parity",
    9: "determinism and persistence",
    10: "resolution law",
}


@dataclass(frozen=True)
class AcceptanceConfig:
    phantom: PhantomConfig = PhantomConfig()
    folds: int = 4
    epochs: int = 20
    batch_size: int = 8
    learning_rate: float = 1e-4
    width_divisor: int = 8
    normalization: str = "unit"
    variants: tuple[ModelVariant, ...] = VARIANTS
    grad_params: int = 200
    grad_size: int = 48
    random_cases: int = 1000
    budget_seconds: float = 20 * 60
    # thresholds
    min_diag_auc: float = 0.95
    min_lesion_auc: float = 0.90
    min_seg_auc: float = 0.85
    min_pointing: float = 0.80
    max_parity_gap: float = 0.03
    max_grad_rel_err: float = 1e-4
    grad_budget_seconds: float = 120.0

    def train_config(self, variant: ModelVariant, fold: int, seed: int) -> TrainConfig:
        return TrainConfig(
            variant=variant, learning_rate=self.learning_rate, epochs=self.epochs, batch_size=self.batch_size,
            seed=seed + fold, fold=fold, init_source="random", width_divisor=self.width_divisor,
            target_width=self.phantom.image_size, resize_above=10**9, normalization=self.normalization,
        )

    def small(self) -> "AcceptanceConfig":
        """A scaled-down run used to check end-to-end determinism cheaply."""
        ph = replace(self.phantom, image_count=32, image_size=64)
        return replace(self, phantom=ph, folds=2, epochs=2, variants=(ModelVariant.AL_MAX,))


@dataclass
class CriterionResult:
    id: int
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)
    error: str | None = None
    seconds: float = 0.0

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"[{verdict}] criterion {self.id:>2}: {self.name} - {_brief(self.detail, self.error)}"


@dataclass
class AcceptanceReport:
    seed: int
    criteria: list[CriterionResult] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.criteria)

    def criterion(self, cid: int) -> CriterionResult:
        return next(c for c in self.criteria if c.id == cid)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "passed": self.passed,
            "criteria": [asdict(c) for c in self.criteria],
            "metrics": self.metrics,
            "timings": self.timings,
        }

    def to_text(self) -> str:
        lines = [f"acceptance report (seed {self.seed})"]
        lines += [c.line() for c in self.criteria]
        if "phantom" in self.metrics:
            lines.append("")
            lines.append("phantom fold means (per-fold values in report.json):")
            for v, m in self.metrics["phantom"].items():
                lines.append(f"  {v}: " + ", ".join(f"{k}={_fmt(x)}" for k, x in m["summary"].items()))
        lines.append("")
        lines.append("wall clock: " + ", ".join(f"{k} {v:.1f}s" for k, v in self.timings.items()))
        lines.append("overall: " + ("PASS" if self.passed else "FAIL"))
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str | Path) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        j = out / "report.json"
        j.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True, default=_json) + "\n", encoding="utf-8")
        t = out / "report.txt"
        t.write_text(self.to_text(), encoding="utf-8")
        return j, t


def _json(o):
    if isinstance(o, (np.integer, np.floating, np.bool_)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, ModelVariant):
        return o.value
    raise TypeError(type(o).__name__)


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.4g}"
    return str(x)


def _brief(detail: dict, error: str | None) -> str:
    if error:
        return "error: " + error.strip().splitlines()[-1]
    keys = [k for k in detail if not isinstance(detail[k], (dict, list))]
    return ", ".join(f"{k}={_fmt(detail[k])}" for k in keys[:6])


# ---------------------------------------------------------------- criterion 1

class _Pattern:
    """Records which branch every ReLU, max-pool and max took during one forward pass."""

    def __init__(self, model: torch.nn.Module):
        self.parts: list[torch.Tensor] = []
        self.handles = []
        for m in model.modules():
            if isinstance(m, torch.nn.ReLU):
                self.handles.append(m.register_forward_hook(lambda mod, inp, out: self.parts.append(inp[0] > 0)))
            elif isinstance(m, torch.nn.MaxPool2d):
                self.handles.append(m.register_forward_hook(self._pool))

    def _pool(self, mod, inp, out):
        _, idx = torch.nn.functional.max_pool2d(inp[0], mod.kernel_size, mod.stride, return_indices=True)
        self.parts.append(idx)

    def capture(self, fn: Callable[[], dict]) -> tuple[dict, tuple]:
        self.parts = []
        out = fn()
        maps = out["maps"]
        self.parts.append(maps.flatten(2).argmax(-1))
        self.parts.append(out["lesion_logits"].argmax(-1))
        return out, tuple(p.clone() for p in self.parts)

    def close(self) -> None:
        for h in self.handles:
            h.remove()


def _same(a: tuple, b: tuple) -> bool:
    return len(a) == len(b) and all(torch.equal(x, y) for x, y in zip(a, b))


def gradient_check(seed: int = 0, n_params: int = 200, size: int = 48, width_divisor: int = 8,
                   variant: ModelVariant = ModelVariant.AL_FC, step: float = 1e-4) -> dict:
    """Central differences vs autograd for ``combined_loss`` in float64.

    The loss is piecewise smooth: ReLUs, max-pools and the global max switch
    branches at kinks. A parameter whose +/-``step`` perturbation changes any
    branch has no valid central-difference reference, so it is replaced by a
    fresh draw and counted in ``skipped_nonsmooth``. Relative error is
    ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    arch = ArchConfig.reduced(variant, 4, width_divisor)
    model = init_parameters(arch, "random", seed=seed).double()
    model.eval()
    g = torch.Generator().manual_seed(seed + 1)
    x = torch.rand(2, 3, size, size, generator=g, dtype=torch.float64)
    d = torch.tensor([1.0, 0.0], dtype=torch.float64)
    l = torch.tensor([[1, 0, 1, 0], [0, 0, 0, 0]], dtype=torch.float64)

    def loss_of(out: dict) -> float:
        rec = PredictionRecord(out["diagnosis_logit"], torch.sigmoid(out["diagnosis_logit"]),
                               out["lesion_logits"], torch.sigmoid(out["lesion_logits"]), out["maps"])
        return combined_loss(rec, d, l).total

    params = list(model.parameters())
    model.zero_grad()
    loss_of(model(x)).backward()
    grads = [p.grad.detach().clone() for p in params]

    rng = np.random.default_rng(seed)
    sizes = np.array([p.numel() for p in params])
    offsets = np.cumsum(np.r_[0, sizes])
    # every tensor first, then uniformly over all entries
    queue = [(t, int(rng.integers(sizes[t]))) for t in range(len(params))]
    pattern = _Pattern(model)
    worst, worst_all, errors, skipped, done = 0.0, 0.0, [], 0, set()
    with torch.no_grad():
        _, base = pattern.capture(lambda: model(x))
        while len(errors) < n_params:
            if queue:
                t, i = queue.pop(0)
            else:
                f = int(rng.integers(offsets[-1]))
                t = int(np.searchsorted(offsets, f, side="right") - 1)
                i = f - int(offsets[t])
            if (t, i) in done:
                continue
            done.add((t, i))
            if len(done) > 50 * n_params:
                raise RuntimeError("too few smooth parameters for the gradient check")
            v = params[t].view(-1)
            orig = v[i].item()
            v[i] = orig + step
            out_up, pat_up = pattern.capture(lambda: model(x))
            v[i] = orig - step
            out_dn, pat_dn = pattern.capture(lambda: model(x))
            v[i] = orig
            num = (loss_of(out_up).item() - loss_of(out_dn).item()) / (2 * step)
            ana = grads[t].view(-1)[i].item()
            err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            worst_all = max(worst_all, err)
            if not (_same(base, pat_up) and _same(base, pat_dn)):
                skipped += 1
                continue
            errors.append(err)
            worst = max(worst, err)
    pattern.close()
    return {"variant": variant.value, "n_params": len(errors), "max_rel_err": worst,
            "median_rel_err": float(np.median(errors)), "skipped_nonsmooth": skipped,
            "max_rel_err_including_skipped": worst_all}


# ---------------------------------------------------------------- criterion 2

def pairwise_auc(scores, labels) -> float:
    """(concordant + 0.5 * tied) / (positives * negatives), by direct enumeration."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            total += 1.0 if p > q else 0.5 if p == q else 0.0
    return total / (len(pos) * len(neg))


def check_auc_oracle(seed: int, n_sets: int = 200) -> dict:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_sets):
        n = int(rng.integers(2, 201))
        labels = rng.integers(0, 2, n)
        labels[:2] = (0, 1)
        rng.shuffle(labels)
        scores = np.round(rng.random(n), int(rng.integers(1, 3)))  # coarse rounding forces ties
        a = roc_curve(ScoredSet(scores, labels)).auc
        worst = max(worst, abs(a - pairwise_auc(scores.tolist(), labels.tolist())))
    return {"sets": n_sets, "max_abs_diff": worst}


# ---------------------------------------------------------------- criterion 3

def check_pooling_identities(seed: int, n: int = 1000) -> dict:
    rng = np.random.default_rng(seed)
    perm_ok = scan_ok = True
    worst_sig = 0.0
    for _ in range(n):
        N, h, w = (int(v) for v in rng.integers(1, 7, 3))
        stack = torch.from_numpy(rng.normal(0, 3, (N, h, w)))
        logits = global_max_pool(stack)
        perm = torch.from_numpy(rng.permutation(h * w))
        shuffled = stack.reshape(N, -1)[:, perm].reshape(N, h, w)
        perm_ok &= bool(torch.equal(global_max_pool(shuffled), logits))
        a = stack.numpy()
        for c in range(N):
            best = -math.inf
            for i in range(h):
                for j in range(w):
                    best = a[c, i, j] if a[c, i, j] > best else best
            scan_ok &= logits[c].item() == best
        lhs = torch.sigmoid(aggregate_max(logits)).item()
        rhs = torch.sigmoid(logits).max().item()
        worst_sig = max(worst_sig, abs(lhs - rhs))
    return {"stacks": n, "permutation_invariant": perm_ok, "scan_equal": scan_ok, "sigmoid_max_diff": worst_sig}


# ---------------------------------------------------------------- criterion 4

def check_losses() -> dict:
    p = torch.tensor([0.9, 0.2, 0.5], dtype=torch.float64)
    rec = PredictionRecord(torch.tensor([0.0]), torch.tensor([0.73], dtype=torch.float64),
                           torch.logit(p)[None], p[None])
    b = bce(0.5, 1).item()
    ll = lesion_loss(rec, torch.tensor([[1.0, 0.0, 1.0]])).item()
    lv = combined_loss(rec, torch.tensor([1.0]), torch.tensor([[1.0, 0.0, 1.0]]))
    additive = lv.total.item() == (lv.diagnosis + lv.lesion).item()
    return {"bce_0.5_1": b, "lesion_loss": ll, "diag_0.73": diagnostic_loss(rec, torch.tensor([1.0])).item(),
            "additive": additive}


# ---------------------------------------------------------------- criterion 5

def random_manifest(rng: np.random.Generator, n_patients: int, max_images: int = 5) -> DatasetManifest:
    samples = []
    for p in range(n_patients):
        amd = int(rng.random() < 0.5)
        for k in range(int(rng.integers(1, max_images + 1))):
            samples.append(ImageSample(f"p{p:03d}_{k}", f"p{p:03d}", amd))
    return DatasetManifest("random", LesionSchema("none", ("x",)), samples)


def fold_violations(manifest: DatasetManifest, assignment: dict[str, int], k: int) -> list[str]:
    """Patient disjointness and per-class stratification, checked from scratch."""
    out = []
    by_patient: dict[str, set[int]] = {}
    sizes: dict[str, int] = {}
    for s in manifest.samples:
        by_patient.setdefault(s.patient_id, set()).add(assignment[s.image_id])
        sizes[s.patient_id] = sizes.get(s.patient_id, 0) + 1
    out += [f"patient {p} spans folds {sorted(f)}" for p, f in by_patient.items() if len(f) != 1]
    if set(assignment) != {s.image_id for s in manifest.samples}:
        out.append("assignment does not cover every sample exactly once")
    largest = max(sizes.values())
    for cls in (0, 1):
        counts = np.zeros(k)
        for s in manifest.samples:
            if s.diagnosis == cls:
                counts[assignment[s.image_id]] += 1
        share = counts.sum() / k
        dev = np.abs(counts - share).max()
        if dev > largest:
            out.append(f"class {cls}: fold counts {counts.tolist()} deviate {dev:.2f} > {largest}")
    return out


def check_folds(seed: int, n: int = 100, k: int = 4) -> dict:
    rng = np.random.default_rng(seed)
    bad = []
    for t in range(n):
        m = random_manifest(rng, int(rng.integers(10, 201)))
        fa = make_folds(m, k=k, seed=int(rng.integers(2**31)))
        bad += [f"manifest {t}: {v}" for v in fold_violations(m, fa.assignment, k)]
    return {"manifests": n, "violations": len(bad), "examples": bad[:5]}


# ---------------------------------------------------------------- criterion 6

def _oracle_map(vec: dict[str, float], rules: dict[str, list[str]]) -> dict[str, float]:
    return {t: max(vec[s] for s in srcs) for t, srcs in rules.items()}


PRED_RULES = {"drusen": ["drusen"], "exudates": ["exudates"], "hemorrhage": ["hemorrhage"],
              "others": ["fibrosis", "atrophy", "pm", "pa", "ped", "others"]}
GT_RULES = {"drusen": ["drusen"], "exudates": ["exudates"], "hemorrhage": ["hemorrhage"],
            "others": ["scar", "others"]}


def check_mapping(seed: int, n: int = 1000) -> dict:
    pm, gm = AMDLESIONS_TO_ADAM.predictions, AMDLESIONS_TO_ADAM.ground_truth
    mismatches = 0

    def compare(vec, mapping, rules, fn):
        named = dict(zip(mapping.source.lesions, vec))
        want = _oracle_map(named, rules)
        got = fn(np.asarray(vec), mapping)
        return all(got[ADAM_EVAL.index(t)] == want[t] for t in ADAM_EVAL.lesions)

    for bits in itertools.product((0, 1), repeat=len(ADAM)):
        mismatches += not compare(bits, gm, GT_RULES, map_gt_cross_schema)
    for bits in itertools.product((0, 1), repeat=len(AMDLESIONS)):
        mismatches += not compare([float(b) for b in bits], pm, PRED_RULES, map_predictions_cross_schema)
        mismatches += not compare(bits, pm, PRED_RULES, map_gt_cross_schema)
    rng = np.random.default_rng(seed)
    for _ in range(n):
        mismatches += not compare(rng.random(len(AMDLESIONS)).tolist(), pm, PRED_RULES,
                                  map_predictions_cross_schema)
        mismatches += not compare(rng.integers(0, 2, len(ADAM)).tolist(), gm, GT_RULES, map_gt_cross_schema)
    others = {AMDLESIONS.lesions[i] for i in pm.plan[ADAM_EVAL.index("others")]}
    composition = others == {"fibrosis", "atrophy", "pm", "pa", "ped", "others"}
    return {"mismatches": mismatches, "others_composition": composition,
            "others_sources": sorted(others)}


# ---------------------------------------------------------------- criterion 10

def check_resolution(sizes=(96, 144, 720), width_divisor: int = 8) -> dict:
    out = {}
    for v in (ModelVariant.AL_MAX, ModelVariant.AL_FC):
        model = init_parameters(ArchConfig.reduced(v, 4, width_divisor), "random", seed=0)
        model.eval()
        with torch.no_grad():
            for s in sizes:
                maps = model(torch.zeros(1, 3, s, s))["maps"]
                out[f"{v.value}_{s}"] = list(maps.shape[-2:])
    ok = all(dims == [int(k.rsplit("_", 1)[1]) // 16] * 2 for k, dims in out.items())
    return {"ok": ok, "map_dims": out}


# ---------------------------------------------------------------- end to end

def run_phantom(cfg: AcceptanceConfig, seed: int, work: Path, sink: Callable[[dict], None] | None = None) -> dict:
    """Generate, fold, train every variant on every fold and evaluate; returns metrics and checkpoints."""
    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    manifest = generate_phantom_dataset(replace(cfg.phantom, seed=seed), work / "phantom")
    folds = make_folds(manifest, k=cfg.folds, seed=seed)
    folds.save(work / "folds.json")
    timings["generate+folds"] = time.perf_counter() - t0
    cache = SampleCache(manifest, cfg.phantom.image_size, 10**9)
    out: dict = {"variants": {}, "checkpoints": {}, "loss_trend": {}, "timings": timings}
    for v in cfg.variants:
        t0 = time.perf_counter()
        cks = []
        trend = []
        for f in range(cfg.folds):
            tc = cfg.train_config(v, f, seed)
            res = train(tc, manifest, folds, cache=cache,
                        sink=(lambda r, v=v: sink({"variant": v.value, **r})) if sink else None)
            trend.append((res.epochs[0]["loss"], res.epochs[-1]["loss"]))
            cks.append(res.checkpoint)
        timings[f"train {v.value}"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        which = ("diagnosis", "lesions", "segmentation") if v.has_lesions else ("diagnosis",)
        ev = evaluate_run(cks, manifest, folds, which, out_dir=work / "eval" / v.value)
        timings[f"eval {v.value}"] = time.perf_counter() - t0
        out["variants"][v.value] = ev
        out["checkpoints"][v.value] = cks
        out["loss_trend"][v.value] = trend
    out["manifest"] = manifest
    return out


def _variant_summary(ev) -> dict:
    s = {"diagnosis_auc": ev.metric("diagnosis")["mean"]}
    if ev.schema is not None and any(m["task"] == "lesions" for m in ev.metrics):
        for name in ev.schema.lesions:
            s[f"lesion_auc[{name}]"] = ev.metric("lesions", name)["mean"]
        for name in ev.schema.lesions:
            s[f"seg_auc[{name}]"] = ev.metric("segmentation", name)["mean"]
        for gate in ("true_positive", "gt_positive"):
            pr = pointing_summary(ev, gate)
            s[f"pointing[{gate}]"] = pr.rate if pr.total else None
    return s


def _variant_metrics(ev) -> dict:
    return {"summary": _variant_summary(ev), "metrics": ev.metrics, "warnings": ev.warnings}


def _metrics_json(phantom: dict) -> str:
    return json.dumps({v: ev.metrics for v, ev in phantom["variants"].items()}, sort_keys=True, default=_json)


def run_acceptance(
    seed: int = 0,
    out_dir: str | Path | None = None,
    config: AcceptanceConfig = AcceptanceConfig(),
    *,
    only: set[int] | None = None,
    sink: Callable[[dict], None] | None = None,
) -> AcceptanceReport:
    """Run every criterion (or the ids in ``only``); a failing stage never stops independent ones."""
    report = AcceptanceReport(seed)
    tmp = None
    if out_dir is None:
        tmp = tempfile.TemporaryDirectory(prefix="lesionnet-accept-")
        work = Path(tmp.name)
    else:
        work = Path(out_dir)
        work.mkdir(parents=True, exist_ok=True)
    wanted = set(CRITERIA) if only is None else set(only)
    state: dict = {}

    def stage(cid: int, fn: Callable[[], tuple[bool, dict]]) -> None:
        if cid not in wanted:
            return
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
            res = CriterionResult(cid, CRITERIA[cid], bool(ok), detail)
        except Exception:  # recorded, the next stage still runs
            res = CriterionResult(cid, CRITERIA[cid], False, {}, traceback.format_exc())
        res.seconds = time.perf_counter() - t0
        report.timings[f"criterion {cid}"] = res.seconds
        report.criteria.append(res)
        log.info(res.line())

    def c1():
        t0 = time.perf_counter()
        runs = [gradient_check(seed, config.grad_params, config.grad_size, config.width_divisor, v)
                for v in (ModelVariant.AL_MAX, ModelVariant.AL_FC)]
        secs = time.perf_counter() - t0
        worst = max(r["max_rel_err"] for r in runs)
        d = {"max_rel_err": worst, "params_per_variant": config.grad_params,
             "skipped_nonsmooth": sum(r["skipped_nonsmooth"] for r in runs), "seconds": secs, "runs": runs}
        return worst < config.max_grad_rel_err and secs < config.grad_budget_seconds, d

    def c2():
        d = check_auc_oracle(seed)
        return d["max_abs_diff"] <= 1e-9, d

    def c3():
        d = check_pooling_identities(seed, config.random_cases)
        return d["permutation_invariant"] and d["scan_equal"] and d["sigmoid_max_diff"] <= 1e-12, d

    def c4():
        d = check_losses()
        ok = abs(d["bce_0.5_1"] - 0.693147) <= 1e-6 and abs(d["lesion_loss"] - 0.340551) <= 1e-6 and d["additive"]
        return ok, d

    def c5():
        d = check_folds(seed)
        return d["violations"] == 0, d

    def c6():
        d = check_mapping(seed, config.random_cases)
        return d["mismatches"] == 0 and d["others_composition"], d

    def c7():
        t0 = time.perf_counter()
        ph = run_phantom(config, seed, work, sink)
        secs = time.perf_counter() - t0
        state["phantom"] = ph
        report.timings.update(ph["timings"])
        report.metrics["phantom"] = {v: _variant_metrics(ev) for v, ev in ph["variants"].items()}
        report.metrics["loss_trend"] = ph["loss_trend"]
        fails = []
        for v, ev in ph["variants"].items():
            s = _variant_summary(ev)
            if not (s["diagnosis_auc"] is not None and s["diagnosis_auc"] >= config.min_diag_auc):
                fails.append(f"{v} diagnosis {_fmt(s['diagnosis_auc'])} < {config.min_diag_auc}")
            for k, x in s.items():
                lim = (config.min_lesion_auc if k.startswith("lesion_auc") else
                       config.min_seg_auc if k.startswith("seg_auc") else
                       config.min_pointing if k == "pointing[true_positive]" else None)
                if lim is not None and not (x is not None and x >= lim):
                    fails.append(f"{v} {k} {_fmt(x)} < {lim}")
        if secs >= config.budget_seconds:
            fails.append(f"runtime {secs:.0f}s exceeds {config.budget_seconds:.0f}s")
        d = {"seconds": secs, "failures": len(fails), "failed_checks": fails}
        return not fails, d

    def c8():
        ph = state.get("phantom")
        if ph is None:
            raise RuntimeError("phantom run unavailable")
        a = ph["variants"]["al-max"].metric("diagnosis")["mean"]
        b = ph["variants"]["a-only"].metric("diagnosis")["mean"]
        return abs(a - b) <= config.max_parity_gap, {"al_max": a, "a_only": b, "gap": abs(a - b)}

    def c9():
        small = config.small()
        runs = []
        for k in range(2):
            with tempfile.TemporaryDirectory(prefix="lesionnet-det-") as d:
                runs.append(_metrics_json(run_phantom(small, seed, Path(d))))
        same = runs[0] == runs[1]
        ph = state.get("phantom")
        ck = ph["checkpoints"]["al-max"][0] if ph else run_phantom(small, seed, work / "small")["checkpoints"]["al-max"][0]
        path = save_checkpoint(ck, work / "roundtrip.ckpt")
        back = load_checkpoint(path)
        probe = torch.from_numpy(np.random.default_rng(seed).random((2, 3, 64, 64), dtype=np.float32))
        with torch.no_grad():
            o1, o2 = ck.build()(probe), back.build()(probe)
        exact = all(torch.equal(o1[k], o2[k]) for k in o1)
        return same and exact, {"metrics_identical": same, "roundtrip_exact": exact}

    def c10():
        d = check_resolution(width_divisor=config.width_divisor)
        return d["ok"], d

    t_all = time.perf_counter()
    for cid, fn in ((1, c1), (2, c2), (3, c3), (4, c4), (5, c5), (6, c6), (7, c7), (8, c8), (9, c9), (10, c10)):
        stage(cid, fn)
    report.timings["total"] = time.perf_counter() - t_all
    if out_dir is not None:
        report.write(work)
        _plot_phantom(state, work)
    if tmp is not None:
        tmp.cleanup()
    return report


def _plot_phantom(state: dict, work: Path) -> None:
    ph = state.get("phantom")
    if ph is None:
        return
    from .plotting import plot_roc

    curves, legend = {}, {}
    for v, ev in ph["variants"].items():
        c = ev.curves[("diagnosis", None)]["merged"]
        m = ev.metric("diagnosis")
        if c is not None:
            curves[v] = c
            legend[v] = f"{m['mean'] * 100:.2f}±{(m['std'] or 0) * 100:.2f}"
    plot_roc(curves, work / "roc_diagnosis.png", title="Mean ROC curves, phantom diagnosis", legend_auc=legend)
