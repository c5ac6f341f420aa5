"""Stage composition, innovation accounting, and rate estimation.

The processing chain runs fidelity control (score integration), attribute
tracking (subspace innovation + track reconciliation), graph smoothing
(GED baseline filter), and graph tracking (per-component HMM decoding) in
that order, each stage optional. Atoms are followed across frames by node
overlap, giving per-atom parallel banks whose innovation events are
collected into a ledger; the ledger prices each event by the bit length of
its canonically serialized payload, from which the total and goal-filtered
innovation rates follow.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fileio
from . import subspace as subspace_mod
from .core import (COMPONENT, PREDICATE, AtomicGraph, ClassCatalog, Goal, MultiGraph,
                   NodeRef, atom_key, atom_to_obj, canonical_dumps, goal_filter,
                   split_atoms)
from .errors import InputError, StageError
from .ged import EditCostTable, smooth as smooth_graph_stream
from .hmm import HmmModel, viterbi
from .integrator import IntegrationPolicy, detect, integrate

STAGE_ORDER = ("integrator", "subspace", "ged", "hmm")


@dataclass(frozen=True)
class PipelineConfig:
    catalog: ClassCatalog
    graphs_path: str
    scores_path: str | None = None
    features_path: str | None = None
    goal: Goal | None = None
    integrator: dict | None = None   # {"window": int, "tau": float}
    subspace: dict | None = None     # {"buffer", "lambda", "threshold", "rank", "reconcile_threshold"}
    ged: dict | None = None          # {"costs" | "costs_path", "threshold", "streak"}
    hmm: dict | None = None          # {"classes": {label: {"A", "B", "p"}}}
    frame_rate: float = 30.0
    seed: int = 0
    output_dir: str | None = None

    def __post_init__(self):
        if self.frame_rate <= 0:
            raise InputError("frame rate must be positive")
        if self.integrator is not None and self.scores_path is None:
            raise InputError("integrator stage needs a scores file")
        if self.subspace is not None and self.features_path is None:
            raise InputError("subspace stage needs a features file")

    @staticmethod
    def from_obj(obj: dict, base_dir: Path | None = None) -> "PipelineConfig":
        base = Path(base_dir) if base_dir else Path(".")

        def resolve(p):
            return None if p is None else str(base / p)

        try:
            catalog = ClassCatalog(tuple(obj["catalog"]["components"]),
                                   tuple(obj["catalog"]["predicates"]))
            goal = None
            if obj.get("goal"):
                g = obj["goal"]
                goal = Goal(frozenset(g["components"]), frozenset(g["predicates"]),
                            int(g.get("max_level", 3)))
            stages = obj.get("stages", {})
            inputs = obj["input"]
            return PipelineConfig(
                catalog=catalog,
                graphs_path=resolve(inputs["graphs"]),
                scores_path=resolve(inputs.get("scores")),
                features_path=resolve(inputs.get("features")),
                goal=goal,
                integrator=stages.get("integrator"),
                subspace=stages.get("subspace"),
                ged=stages.get("ged"),
                hmm=stages.get("hmm"),
                frame_rate=float(obj.get("frame_rate", 30.0)),
                seed=int(obj.get("seed", 0)),
                output_dir=resolve(obj.get("output", {}).get("dir")),
            )
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed pipeline config: {exc}") from exc

    @staticmethod
    def load(path) -> "PipelineConfig":
        with open(path) as fh:
            return PipelineConfig.from_obj(json.load(fh), Path(path).parent)


@dataclass
class BankLedger:
    bank_id: int
    class_names: set[str] = field(default_factory=set)
    events: list[tuple[int, int]] = field(default_factory=list)  # (t, bits)


@dataclass
class TrackLedger:
    track_id: int
    level: int
    class_name: str | None = None
    events: list[tuple[int, int]] = field(default_factory=list)


@dataclass
class InnovationLedger:
    n_frames: int
    frame_rate: float
    graph_banks: list[BankLedger] = field(default_factory=list)
    attr_tracks: list[TrackLedger] = field(default_factory=list)

    def to_obj(self) -> dict:
        return {
            "n_frames": self.n_frames,
            "frame_rate": self.frame_rate,
            "graph": [{"bank": b.bank_id, "classes": sorted(b.class_names),
                       "events": [{"t": t, "bits": bits} for t, bits in b.events]}
                      for b in self.graph_banks],
            "attributes": [{"track": a.track_id, "level": a.level, "class": a.class_name,
                            "events": [{"t": t, "bits": bits} for t, bits in a.events]}
                           for a in self.attr_tracks],
        }

    @staticmethod
    def from_obj(obj: dict) -> "InnovationLedger":
        try:
            led = InnovationLedger(int(obj["n_frames"]), float(obj["frame_rate"]))
            for b in obj.get("graph", []):
                led.graph_banks.append(BankLedger(int(b["bank"]), set(b.get("classes", [])),
                                                  [(e["t"], e["bits"]) for e in b["events"]]))
            for a in obj.get("attributes", []):
                led.attr_tracks.append(TrackLedger(int(a["track"]), int(a["level"]),
                                                   a.get("class"),
                                                   [(e["t"], e["bits"]) for e in a["events"]]))
            return led
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed ledger object: {exc}") from exc

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_obj(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @staticmethod
    def load(path) -> "InnovationLedger":
        with open(path) as fh:
            return InnovationLedger.from_obj(json.load(fh))


@dataclass(frozen=True)
class RateReport:
    bits_per_second: float           # R over everything
    goal_bits_per_second: float      # R^ over the goal-filtered subset
    n_atoms: int
    n_atoms_goal: int
    goal_max_level: int | None

    def to_obj(self) -> dict:
        return {"R": self.bits_per_second, "R_goal": self.goal_bits_per_second,
                "atoms": self.n_atoms, "atoms_goal": self.n_atoms_goal,
                "goal_max_level": self.goal_max_level}


def message_length(payload) -> int:
    """Bit length of the canonical serialized form of a payload object."""
    return 8 * len(canonical_dumps(payload).encode("utf-8"))


def graph_bits(graph: AtomicGraph, catalog: ClassCatalog) -> int:
    return message_length(atom_to_obj(graph, catalog))


def _bank_includes(bank: BankLedger, goal: Goal) -> bool:
    whitelisted = bank.class_names & (goal.component_whitelist | goal.predicate_whitelist)
    return bool(whitelisted) or not bank.class_names


def rate(ledger: InnovationLedger, duration_seconds: float, goal: Goal | None = None) -> RateReport:
    """Innovation rate R = sum_i (I_i d_i + sum_l I_i^l d_i^l) / duration.

    The goal-filtered rate sums only banks containing a whitelisted class
    and attribute levels up to the goal's limit, so it never exceeds R.
    """
    if duration_seconds <= 0:
        raise InputError("duration must be positive")
    total = sum(bits for b in ledger.graph_banks for _, bits in b.events)
    total += sum(bits for a in ledger.attr_tracks for _, bits in a.events)

    if goal is None:
        kept_banks = list(ledger.graph_banks)
        kept = total
        max_level = None
    else:
        kept_banks = [b for b in ledger.graph_banks if _bank_includes(b, goal)]
        kept = sum(bits for b in kept_banks for _, bits in b.events)
        max_level = goal.max_attribute_level
        for a in ledger.attr_tracks:
            if a.level > goal.max_attribute_level:
                continue
            if a.class_name is not None and a.class_name not in goal.component_whitelist:
                continue
            kept += sum(bits for _, bits in a.events)
    return RateReport(bits_per_second=total / duration_seconds,
                      goal_bits_per_second=kept / duration_seconds,
                      n_atoms=len(ledger.graph_banks),
                      n_atoms_goal=len(kept_banks),
                      goal_max_level=max_level)


# ---------------------------------------------------------------------------
# Stage helpers

def _prune_orphans(nodes: set[NodeRef], edges: set, before: AtomicGraph) -> set[NodeRef]:
    """Drop predicates whose every edge disappeared with a removed node."""
    kept = set(nodes)
    for n in list(kept):
        if n.kind == PREDICATE and before.degree(n) > 0:
            if not any(n == e[1] for e in edges):
                kept.discard(n)
    return kept


def _gate_frame(mg: MultiGraph, absent_classes: set[str], catalog: ClassCatalog) -> MultiGraph:
    atoms = []
    for atom in mg.atoms:
        kept = {n for n in atom.nodes
                if catalog.class_name(n.kind, n.class_id) not in absent_classes}
        edges = {e for e in atom.edges if e[0] in kept and e[1] in kept}
        kept = _prune_orphans(kept, edges, atom)
        edges = {e for e in edges if e[0] in kept and e[1] in kept}
        attrs = {n: atom.attributes[n] for n in kept if n in atom.attributes}
        atoms.extend(split_atoms(kept, edges, attrs).atoms)
    return MultiGraph(mg.time_index, tuple(atoms))


def _stage_integrator(frames, cfg, catalog) -> list[MultiGraph]:
    streams = fileio.read_scores(cfg.scores_path)
    policy = IntegrationPolicy(window=int(cfg.integrator.get("window", 1)),
                               tau=float(cfg.integrator.get("tau", 0.5)))
    flags = {}
    for label, stream in streams.items():
        smoothed = integrate(stream, policy.window)
        flags[label] = dict(zip(smoothed.times.tolist(), detect(smoothed, policy.tau).tolist()))
    out = []
    for mg in frames:
        absent = {label for label, by_t in flags.items()
                  if not by_t.get(mg.time_index, True)}
        out.append(_gate_frame(mg, absent, catalog) if absent else mg)
    return out


def _remap_ids(frames: list[MultiGraph], mapping: dict[int, int]) -> list[MultiGraph]:
    if not mapping:
        return frames
    out = []
    for mg in frames:
        atoms = []
        changed = False
        merged_nodes: set[NodeRef] = set()
        merged_edges = set()
        merged_attrs = {}
        for atom in mg.atoms:
            node_map = {}
            for n in atom.nodes:
                if n.kind == COMPONENT and n.instance_id in mapping:
                    node_map[n] = NodeRef(n.kind, n.class_id, mapping[n.instance_id])
                    changed = True
                else:
                    node_map[n] = n
            merged_nodes |= set(node_map.values())
            merged_edges |= {(node_map[a], node_map[b]) for a, b in atom.edges}
            merged_attrs.update({node_map[n]: v for n, v in atom.attributes.items()})
        if changed:
            out.append(split_atoms(merged_nodes, merged_edges, merged_attrs, mg.time_index))
        else:
            out.append(mg)
    return out


def _stage_subspace(frames, cfg, catalog, ledger) -> list[MultiGraph]:
    tracks_raw = fileio.read_features(cfg.features_path)
    params = cfg.subspace
    buffer_size = int(params.get("buffer", 32))
    lam = params.get("lambda")
    lam = None if lam in (None, "auto") else float(lam)
    threshold = float(params.get("threshold", 1.0))
    rank_policy = params.get("rank", "auto")

    windows = {tid: subspace_mod.FeatureWindow(tid, tuple(fids), mat)
               for tid, (fids, mat) in tracks_raw.items()}

    mapping: dict[int, int] = {}
    if len(windows) >= 2:
        groups = subspace_mod.reconcile(windows, threshold=params.get("reconcile_threshold"),
                                        lam=lam, rank_policy=rank_policy)
        for group in groups:
            canon = min(group)
            for tid in group:
                if tid != canon:
                    mapping[tid] = canon

    # class lookup for goal filtering of attribute events
    id_class: dict[int, str] = {}
    for mg in frames:
        for atom in mg.atoms:
            for n in atom.nodes:
                if n.kind == COMPONENT:
                    id_class.setdefault(n.instance_id, catalog.class_name(n.kind, n.class_id))

    for tid in sorted(windows):
        fw = windows[tid]
        series = subspace_mod.windowed_innovation(fw.matrix, buffer_size, lam=lam,
                                                  threshold=threshold, rank_policy=rank_policy)
        canon = mapping.get(tid, tid)
        entry = TrackLedger(track_id=canon, level=2, class_name=id_class.get(canon, id_class.get(tid)))
        for peak in series.detected_peaks:
            frame = fw.frame_ids[peak]
            bits = message_length([float(v) for v in fw.matrix[peak]])
            entry.events.append((frame, bits))
        if entry.events:
            ledger.attr_tracks.append(entry)

    return _remap_ids(frames, mapping)


class _BankTracker:
    """Follow atoms across frames by shared nodes; one bank per object."""

    def __init__(self):
        self.last_nodes: dict[int, frozenset[NodeRef]] = {}
        self.next_id = 0

    def assign(self, atoms: tuple[AtomicGraph, ...]) -> dict[int, AtomicGraph]:
        assigned: dict[int, AtomicGraph] = {}
        free = dict(self.last_nodes)
        for atom in sorted(atoms, key=lambda a: sorted(a.nodes)[:1]):
            best, best_overlap = None, 0
            for bank_id, nodes in sorted(free.items()):
                overlap = len(nodes & atom.nodes)
                if overlap > best_overlap:
                    best, best_overlap = bank_id, overlap
            if best is None:
                best = self.next_id
                self.next_id += 1
            else:
                del free[best]
            assigned[best] = atom
            self.last_nodes[best] = atom.nodes
        return assigned


def _track_banks(frames: list[MultiGraph]) -> dict[int, list[AtomicGraph]]:
    """Per-bank graph sequence over all frames (empty graph when absent)."""
    tracker = _BankTracker()
    per_frame: list[dict[int, AtomicGraph]] = [tracker.assign(mg.atoms) for mg in frames]
    banks: dict[int, list[AtomicGraph]] = {b: [AtomicGraph.empty()] * len(frames)
                                           for b in range(tracker.next_id)}
    for idx, assigned in enumerate(per_frame):
        for bank_id, atom in assigned.items():
            banks[bank_id][idx] = atom
    return banks


def _bank_classes(graphs: list[AtomicGraph], catalog: ClassCatalog) -> set[str]:
    return {catalog.class_name(n.kind, n.class_id) for g in graphs for n in g.nodes}


def _stage_ged(frames, cfg, catalog, ledger) -> tuple[list[MultiGraph], list[dict]]:
    params = cfg.ged
    if "costs" in params and isinstance(params["costs"], dict):
        costs = EditCostTable.from_obj(params["costs"])
    else:
        costs = EditCostTable.load(params.get("costs_path") or params["costs"])
    threshold = float(params.get("threshold", 0.2))
    streak = int(params.get("streak", 5))

    times = [mg.time_index for mg in frames]
    banks = _track_banks(frames)
    out_atoms: list[list[AtomicGraph]] = [[] for _ in frames]
    event_objs = []
    for bank_id in sorted(banks):
        stream = banks[bank_id]
        filtered, events = smooth_graph_stream(stream, costs, catalog, threshold,
                                               required_streak=streak, times=times)
        entry = BankLedger(bank_id, _bank_classes(stream, catalog))
        for ev in events:
            entry.events.append((ev.t, graph_bits(ev.after, catalog)))
            event_objs.append({"t": ev.t, "bank": bank_id, "ged": ev.distance,
                               "from": atom_to_obj(ev.before, catalog),
                               "to": atom_to_obj(ev.after, catalog)})
        ledger.graph_banks.append(entry)
        for idx, g in enumerate(filtered):
            if g.nodes:
                out_atoms[idx].append(g)
    merged = [split_atoms(*_union_parts(atoms), time_index=t)
              for atoms, t in zip(out_atoms, times)]
    event_objs.sort(key=lambda e: (e["t"], e["bank"]))
    return merged, event_objs


def _union_parts(atoms: list[AtomicGraph]):
    nodes: set[NodeRef] = set()
    edges = set()
    attrs = {}
    for a in atoms:
        nodes |= a.nodes
        edges |= a.edges
        attrs.update(a.attributes)
    return nodes, edges, attrs


def _raw_change_events(frames, catalog, ledger):
    """With smoothing disabled, every per-bank graph change is an event."""
    banks = _track_banks(frames)
    times = [mg.time_index for mg in frames]
    for bank_id in sorted(banks):
        stream = banks[bank_id]
        entry = BankLedger(bank_id, _bank_classes(stream, catalog))
        prev_key = atom_key(AtomicGraph.empty(), catalog)
        for idx, g in enumerate(stream):
            key = atom_key(g, catalog)
            if key != prev_key:
                entry.events.append((times[idx], graph_bits(g, catalog)))
                prev_key = key
        ledger.graph_banks.append(entry)


def _stage_hmm(frames, cfg, catalog) -> list[MultiGraph]:
    class_models = {}
    for label, spec in cfg.hmm.get("classes", {}).items():
        class_models[label] = HmmModel(np.array(spec["A"]), np.array(spec["B"]),
                                       np.array(spec.get("p", [1.0, 0.0])),
                                       ("absent", "present"))

    instances: dict[tuple[str, int], np.ndarray] = {}
    for idx, mg in enumerate(frames):
        for atom in mg.atoms:
            for n in atom.nodes:
                if n.kind != COMPONENT:
                    continue
                label = catalog.class_name(n.kind, n.class_id)
                if label not in class_models:
                    continue
                key = (label, n.instance_id)
                if key not in instances:
                    instances[key] = np.zeros(len(frames), dtype=np.int64)
                instances[key][idx] = 1

    decoded = {key: viterbi(class_models[key[0]], obs)[0]
               for key, obs in sorted(instances.items())}

    # carry forward the latest seen realization of each decoded-present node
    last_seen: dict[tuple[str, int], tuple[NodeRef, list]] = {}
    out = []
    for idx, mg in enumerate(frames):
        nodes: set[NodeRef] = set()
        edges = set()
        attrs = {}
        present_here: dict[tuple[str, int], AtomicGraph] = {}
        for atom in mg.atoms:
            for n in atom.nodes:
                if n.kind == COMPONENT:
                    label = catalog.class_name(n.kind, n.class_id)
                    if (label, n.instance_id) in instances:
                        present_here[(label, n.instance_id)] = atom
        for atom in mg.atoms:
            keep_nodes = set()
            for n in atom.nodes:
                if n.kind != COMPONENT:
                    continue
                label = catalog.class_name(n.kind, n.class_id)
                key = (label, n.instance_id)
                if key not in instances or decoded[key][idx] == 1:
                    keep_nodes.add(n)
            kept_edges = {e for e in atom.edges if e[0] in keep_nodes}
            preds = {e[1] for e in kept_edges}
            preds |= {n for n in atom.nodes if n.kind == PREDICATE and atom.degree(n) == 0}
            all_kept = keep_nodes | preds
            nodes |= all_kept
            edges |= kept_edges
            attrs.update({n: atom.attributes[n] for n in all_kept if n in atom.attributes})
        for key, atom in present_here.items():
            node = next(n for n in atom.nodes
                        if n.kind == COMPONENT and n.instance_id == key[1]
                        and catalog.class_name(COMPONENT, n.class_id) == key[0])
            incidents = [(e, atom.attributes.get(e[1])) for e in atom.edges if e[0] == node]
            last_seen[key] = (node, incidents)
        for key, seq in decoded.items():
            if seq[idx] == 1 and key not in present_here and key in last_seen:
                node, incidents = last_seen[key]
                nodes.add(node)
                for (comp, pred), pattrs in incidents:
                    nodes.add(pred)
                    edges.add((comp, pred))
                    if pattrs is not None:
                        attrs.setdefault(pred, pattrs)
        out.append(split_atoms(nodes, edges, attrs, mg.time_index))
    return out


def run(config: PipelineConfig):
    """Execute the configured stages over the input graph stream.

    Returns (smoothed frames, innovation ledger, rate report, ged events).
    Writes the stream, ledger, report, events, and report figures into the
    configured output directory when one is given.
    """
    from . import core

    catalog = config.catalog
    frames = core.read_jsonl(config.graphs_path, catalog)
    if not frames:
        raise InputError("empty graph stream")

    if config.goal is not None:
        frames = [goal_filter(mg, config.goal, catalog) for mg in frames]

    ledger = InnovationLedger(n_frames=len(frames), frame_rate=config.frame_rate)
    events: list[dict] = []

    if config.integrator is not None:
        try:
            frames = _stage_integrator(frames, config, catalog)
        except InputError:
            raise
        except Exception as exc:
            raise StageError("integrator", -1, exc) from exc
    if config.subspace is not None:
        try:
            frames = _stage_subspace(frames, config, catalog, ledger)
        except InputError:
            raise
        except Exception as exc:
            raise StageError("subspace", -1, exc) from exc
    if config.ged is not None:
        try:
            frames, events = _stage_ged(frames, config, catalog, ledger)
        except InputError:
            raise
        except Exception as exc:
            raise StageError("ged", -1, exc) from exc
    else:
        _raw_change_events(frames, catalog, ledger)
    if config.hmm is not None:
        try:
            frames = _stage_hmm(frames, config, catalog)
        except InputError:
            raise
        except Exception as exc:
            raise StageError("hmm", -1, exc) from exc

    duration = len(frames) / config.frame_rate
    report = rate(ledger, duration, config.goal)

    if config.output_dir:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        core.write_jsonl(frames, catalog, out / "smoothed.jsonl")
        ledger.save(out / "ledger.json")
        with open(out / "rate.json", "w") as fh:
            json.dump(report.to_obj(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(out / "events.jsonl", "w") as fh:
            for ev in events:
                fh.write(canonical_dumps(ev) + "\n")
        from . import plots
        plots.render_run_report(frames, ledger, events, out)

    return frames, ledger, report, events
