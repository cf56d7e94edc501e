"""Command-line front end: run checks and decompositions on a scene file.

Exit codes: 0 all requested properties hold and are certified, 1 a
verification failed (the report names it), 2 configuration or scene error,
3 uncertified (budget or truncation too small to decide).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from twistwold.config import override, tol
from twistwold.scene import SceneError, corpus_names, corpus_path, load_scene
from twistwold.twisted import (
    CriterionFailed, EngineError, Uncertified, WanderingViolation, _jsonable, _r, check_doubly_twisted,
    check_twisted, doubly_twisted_decompose, is_twisted_shift, is_twisted_weak_shift,
    principal_angles, subsets, bitmask, twist_commutation_check, twisted_decompose,
    vnw_criterion, vnw_decompose,
)
from twistwold.wold import Kind, NotAnIsometry, NotReducing, classify_restriction
from twistwold.subspace import Subspace

log = logging.getLogger("twistwold")

REPORT_SCHEMA = 1
MODES = ("check", "classify", "decompose-vnw", "decompose-doubly", "decompose-twisted", "oracle-compare")
OK, FAILED, CONFIG, UNCERTIFIED = 0, 1, 2, 3
_VERDICT = {OK: "pass", FAILED: "fail", UNCERTIFIED: "uncertified"}


@dataclass(frozen=True)
class RunConfig:
    scene: str
    mode: str = "check"
    budget: int | None = None
    tol_rank: float | None = None
    tol_residual: float | None = None
    seed: int = 0
    out: str | None = None
    pretty: bool = False
    jobs: int = 1
    compare_D: int | None = None
    timing: bool = False
    with_frames: bool = False

    def validate(self) -> None:
        if self.mode not in MODES:
            raise SceneError(f"unknown mode {self.mode!r}")
        if self.budget is not None and self.budget < 1:
            raise SceneError("--budget must be >= 1")
        for name in ("tol_rank", "tol_residual"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise SceneError(f"--{name.replace('_', '-')} must be positive")
        if self.jobs < 1:
            raise SceneError("--jobs must be >= 1")
        if self.compare_D is not None and self.compare_D < 1:
            raise SceneError("--compare-D must be >= 1")


def _resolve(path: str) -> Path:
    p = Path(path)
    if not p.exists() and path in corpus_names():
        return corpus_path(path)
    return p


def _decomp_code(rep) -> int:
    if not rep.ok:
        return FAILED
    return OK if rep.certified else UNCERTIFIED


def _split(rep, with_frames):
    d = rep.to_json(with_frames)
    return d.pop("blocks"), d


# --- modes ------------------------------------------------------------------

def _check(tup, cfg):
    checks = {"isometry": {"ok": tup.all_isometries, "residuals": tup.isometry_residuals}}
    tw = tup.twist
    if tw is not None:
        checks["twist"] = {"ok": tw.valid, "derived": tw.derived, "exact": tw.exact,
                           "unitarity": tw.unitarity_residual, "commutation": tw.commutation_residual}
        t = check_twisted(tup, tw)
        d = check_doubly_twisted(tup, tw)
        checks["twisted"] = {"ok": t.ok, "relation": t.relation_residual, "commutant": t.commutant_residual}
        checks["doubly_twisted"] = {"ok": d.ok, "relation": d.relation_residual}
        if t.ok:
            c = twist_commutation_check(tup, tw, seed=cfg.seed)
            checks["twist_commutation"] = {"ok": c.ok, "residual": c.residual, "samples": len(c.samples)}
    crit = vnw_criterion(tup, cfg.budget, cfg.jobs)
    checks["vnw_criterion"] = crit.to_json()
    # doubly twisted and the criterion are reported, not required
    required = [checks["isometry"]["ok"]]
    if tw is not None:
        required += [checks["twist"]["ok"], checks["twisted"]["ok"],
                     checks.get("twist_commutation", {"ok": True})["ok"]]
    return (OK if all(required) else FAILED), [], checks


def _classify(tup, cfg):
    checks: dict = {"coordinates": {}}
    whole = Subspace.whole(tup.space)
    uncertified = False
    for i in range(1, tup.n + 1):
        k = classify_restriction(tup.op(i), whole, budget=cfg.budget)
        checks["coordinates"][str(i)] = k
        uncertified |= k is Kind.UNCERTIFIED
    d = check_doubly_twisted(tup) if tup.twist is not None else None
    t = check_twisted(tup) if tup.twist is not None else None
    if d is not None and d.ok:
        v = is_twisted_shift(tup, cfg.budget)
        checks["twisted_shift"] = v.to_json()
        uncertified |= not v.certified
    else:
        checks["twisted_shift"] = {"ok": None, "reason": "tuple is not doubly twisted"}
    if t is not None and t.ok:
        v = is_twisted_weak_shift(tup, budget=cfg.budget)
        checks["twisted_weak_shift"] = v.to_json()
        uncertified |= not v.certified
    else:
        checks["twisted_weak_shift"] = {"ok": None, "reason": "tuple is not twisted"}
    return (UNCERTIFIED if uncertified else OK), [], checks


def _decompose(engine):
    def run(tup, cfg):
        try:
            if engine is vnw_decompose:
                rep = vnw_decompose(tup, cfg.budget, cfg.jobs)
            else:
                rep = engine(tup, budget=cfg.budget, jobs=cfg.jobs)
        except CriterionFailed as exc:
            w = [{"pair": list(x["pair"]), "residual": _r(x["residual"])} for x in exc.witnesses]
            return FAILED, [], {"ok": False, "failures": [str(exc)], "witnesses": w}
        except Uncertified as exc:
            return UNCERTIFIED, [], {"ok": None, "failures": [], "reason": str(exc)}
        except (EngineError, NotReducing) as exc:
            return FAILED, [], {"ok": False, "failures": [str(exc)]}
        blocks, checks = _split(rep, cfg.with_frames)
        return _decomp_code(rep), blocks, checks
    return run


def _oracle_compare(scene, tup, cfg):
    small = cfg.compare_D or scene.compare_D
    graded = [b.D for b in scene.space.blocks if b.graded]
    if small is None and graded:
        raise SceneError("oracle-compare needs --compare-D or a compare_D entry in the scene")
    if graded and small >= min(graded):
        raise SceneError(f"compare_D={small} must be below the scene's degree cap {min(graded)}")
    rows, worst, failures, uncertified = {}, 0.0, [], False
    blocks = []
    for D in (max(graded, default=0), small) if graded else (0,):
        t = tup if D == max(graded, default=0) else scene.tuple(scene.space.regraded(D))
        if not check_doubly_twisted(t).ok:
            return FAILED, [], {"ok": False, "failures": [f"D={D}: tuple is not doubly twisted"]}
        vnw = vnw_decompose(t, cfg.budget, cfg.jobs)
        dbl = doubly_twisted_decompose(t, budget=cfg.budget, jobs=cfg.jobs, cross_check=False)
        key = f"D={D}"
        rows[key] = {"ambient_certified_dim": vnw.ambient_certified_dim,
                     "vnw_complete": vnw.complete, "doubly_complete": dbl.complete}
        for A in subsets(t.n):
            a, b = vnw.block(A), dbl.block(A)
            ang = principal_angles(a.subspace, b.subspace)
            angle = max(ang) if ang else 0.0
            if a.dim != b.dim:
                angle = float(np.pi / 2)
            worst = max(worst, angle)
            blocks.append({"D": D, "A": bitmask(A), "members": sorted(A), "dim_vnw": a.dim,
                           "dim_doubly": b.dim, "certified_dim": b.certified_dim,
                           "max_angle": _r(angle)})
        failures += [f"{key} vnw: {f}" for f in vnw.failures] + [f"{key} doubly: {f}" for f in dbl.failures]
        uncertified |= not (vnw.certified and dbl.certified)
    if worst >= 1e-7:
        failures.append(f"paths disagree (max principal angle {worst:.3e})")
    checks = {"ok": not failures, "failures": failures, "max_angle": worst, "truncations": rows}
    code = FAILED if failures else (UNCERTIFIED if uncertified else OK)
    return code, blocks, checks


_RUNNERS = {"check": _check, "classify": _classify,
            "decompose-vnw": _decompose(vnw_decompose),
            "decompose-doubly": _decompose(doubly_twisted_decompose),
            "decompose-twisted": _decompose(twisted_decompose)}


# --- driver -----------------------------------------------------------------

def _summary(report: dict) -> str:
    lines = [f"{report['mode']}: {report['verdict']}"]
    for b in report["blocks"]:
        if "dim_vnw" in b:
            lines.append(f"  D={b['D']} A={b['members']} dims {b['dim_vnw']}/{b['dim_doubly']} "
                         f"angle {b['max_angle']:.1e}")
        else:
            lines.append(f"  A={b['members']} dim {b['dim']} certified_dim {b['certified_dim']}")
    for f in report["checks"].get("failures", []) if isinstance(report["checks"], dict) else []:
        lines.append(f"  failure: {f}")
    return "\n".join(lines)


def run(cfg: RunConfig) -> tuple[int, dict | None]:
    """Execute one configuration; returns the exit code and the report (None on config errors)."""
    start = time.perf_counter()
    try:
        cfg.validate()
        scene = load_scene(_resolve(cfg.scene))
        changes = {}
        if cfg.tol_rank is not None:
            changes["rank_atol"] = cfg.tol_rank
        if cfg.tol_residual is not None:
            changes["residual"] = cfg.tol_residual
        with override(**changes):
            tup = scene.tuple()
            try:
                if cfg.mode == "oracle-compare":
                    code, blocks, checks = _oracle_compare(scene, tup, cfg)
                else:
                    code, blocks, checks = _RUNNERS[cfg.mode](tup, cfg)
            except (NotAnIsometry, WanderingViolation) as exc:
                code, blocks, checks = FAILED, [], {"ok": False, "failures": [str(exc)]}
            tolerances = {k: getattr(tol(), k) for k in tol().__dataclass_fields__}
    except SceneError as exc:
        log.error("%s", exc)
        return CONFIG, None
    report = {
        "schema_version": REPORT_SCHEMA,
        "scene": scene.name,
        "scene_digest": scene.digest,
        "mode": cfg.mode,
        "verdict": _VERDICT[code],
        "config": {"budget": cfg.budget, "seed": cfg.seed, "tolerances": tolerances},
        "blocks": _jsonable(blocks),
        "checks": _jsonable(checks),
        "timing_ms": round((time.perf_counter() - start) * 1000, 1) if cfg.timing else None,
    }
    return code, report


def dump(report: dict, pretty: bool = False) -> str:
    return json.dumps(report, indent=2 if pretty else None, sort_keys=False, ensure_ascii=False) + "\n"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="twistwold",
        description="Wold-type decompositions of truncated isometry tuples described by scene files.",
        epilog="exit codes: 0 pass, 1 verification failed, 2 scene/config error, 3 uncertified")
    p.add_argument("--scene", required=False, help="scene JSON file, or the name of a bundled scene")
    p.add_argument("--mode", choices=MODES, default="check", help="what to run (default: check)")
    p.add_argument("--budget", type=int, default=None,
                   help="iteration/exponent budget (default: derived from the truncation)")
    p.add_argument("--tol-rank", type=float, default=None, help="absolute rank threshold (default 1e-12)")
    p.add_argument("--tol-residual", type=float, default=None, help="residual threshold (default 1e-9)")
    p.add_argument("--seed", type=int, default=0, help="seed for sampled identity checks (default: 0)")
    p.add_argument("--out", default=None, help="report path (default: stdout)")
    p.add_argument("--pretty", action="store_true", help="indent the report JSON")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers over index sets (default: 1)")
    p.add_argument("--compare-D", type=int, default=None, help="smaller truncation for oracle-compare (default: the scene's compare_D)")
    p.add_argument("--timing", action="store_true", help="record wall time (makes reports nondeterministic)")
    p.add_argument("--with-frames", action="store_true", help="include subspace frames in the report")
    p.add_argument("--list-scenes", action="store_true", help="print the bundled scene names and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    if args.list_scenes:
        print("\n".join(corpus_names()))
        return OK
    if not args.scene:
        log.error("--scene is required")
        return CONFIG
    cfg = RunConfig(args.scene, args.mode, args.budget, args.tol_rank, args.tol_residual, args.seed,
                    args.out, args.pretty, args.jobs, args.compare_D, args.timing, args.with_frames)
    code, report = run(cfg)
    if report is None:
        return code
    text = dump(report, cfg.pretty)
    if cfg.out:
        Path(cfg.out).write_text(text, encoding="utf-8")
        print(_summary(report))
    else:
        sys.stdout.write(text)
        print(_summary(report), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
