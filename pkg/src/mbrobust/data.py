"""Multi-behavior interaction data: loading, leave-one-out splits, alignment
diagnostics, and seeded edge perturbation.

A dataset lives in a directory with a ``manifest.json`` naming the ordered
behavior list and the target behavior, plus one ``<behavior>.tsv`` file per
behavior (``user_id<TAB>item_id[<TAB>timestamp]``, ``#`` comments allowed).
Raw ids may be arbitrary strings; they are compacted to dense integers via a
lexicographically sorted id map shared across behaviors, so reloading the
same directory always yields identical dense ids.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

Edge = tuple[int, int]
# behavior -> {(user, item): earliest timestamp or None}
EdgeMap = dict[str, dict[Edge, int | None]]


class DatasetError(Exception):
    """Raised for malformed or inconsistent dataset inputs."""


@dataclass(frozen=True)
class DatasetManifest:
    behaviors: tuple[str, ...]
    target: str
    num_users: int
    num_items: int

    def __post_init__(self):
        if len(self.behaviors) == 0:
            raise DatasetError("manifest declares no behaviors")
        if len(set(self.behaviors)) != len(self.behaviors):
            raise DatasetError("duplicate behavior names in manifest")
        if self.target not in self.behaviors:
            raise DatasetError(f"target behavior {self.target!r} not in behavior list")

    @property
    def auxiliary(self) -> tuple[str, ...]:
        return tuple(b for b in self.behaviors if b != self.target)


@dataclass(frozen=True)
class InteractionDataset:
    """Deduplicated per-behavior edge sets over a shared user/item universe.

    ``user_ids[d]`` / ``item_ids[d]`` give the raw id behind dense id ``d``.
    Treat instances as immutable; every transformation returns a new dataset.
    """

    manifest: DatasetManifest
    edges: EdgeMap
    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]

    def edge_count(self, behavior: str) -> int:
        return len(self.edges[behavior])

    def pairs(self, behavior: str) -> set[Edge]:
        return set(self.edges[behavior].keys())


@dataclass(frozen=True)
class SplitDataset:
    """Leave-one-out split: latest target interaction per user held out for
    test, second latest for validation, everything else (and all auxiliary
    edges) in train."""

    train: InteractionDataset
    validation: tuple[Edge, ...]
    test: tuple[Edge, ...]
    users_without_holdout: int = 0


@dataclass(frozen=True)
class DiagnosticsReport:
    bar: dict[str, float]
    dt: float
    dt_approximate: bool
    counts: dict[str, int]
    num_users: int
    num_items: int

    def to_json_dict(self) -> dict:
        return {
            "num_users": self.num_users,
            "num_items": self.num_items,
            "counts": dict(self.counts),
            "bar": dict(self.bar),
            "dt": self.dt,
            "dt_approximate": self.dt_approximate,
        }


@dataclass(frozen=True)
class PerturbationSpec:
    mode: str  # "add" | "remove"
    ratio: float
    behaviors: tuple[str, ...]
    seed: int

    def __post_init__(self):
        if self.mode not in ("add", "remove"):
            raise DatasetError(f"unknown perturbation mode {self.mode!r}")
        if not (0.0 < self.ratio <= 1.0):
            raise DatasetError(f"perturbation ratio must be in (0, 1], got {self.ratio}")


# ----------------------------------------------------------------------
# Loading and serialization
# ----------------------------------------------------------------------

def _parse_tsv(path: str, behavior: str) -> list[tuple[str, str, int | None]]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if len(fields) not in (2, 3):
                raise DatasetError(
                    f"{path}:{lineno}: expected 2 or 3 columns, got {len(fields)}"
                )
            ts: int | None = None
            if len(fields) == 3:
                try:
                    ts = int(fields[2])
                except ValueError:
                    raise DatasetError(
                        f"{path}:{lineno}: timestamp {fields[2]!r} is not an integer"
                    ) from None
                if ts < 0:
                    raise DatasetError(f"{path}:{lineno}: negative timestamp {ts}")
            records.append((fields[0], fields[1], ts))
    return records


def load_dataset(path: str) -> InteractionDataset:
    """Load a dataset directory into a compacted, deduplicated dataset.

    Duplicate (user, item) pairs within a behavior keep the earliest
    timestamp.  Raw ids are mapped to dense ids by sorting the raw id
    strings, which makes reloads bit-identical.
    """
    manifest_path = os.path.join(path, "manifest.json")
    if not os.path.isfile(manifest_path):
        raise DatasetError(f"missing manifest file {manifest_path}")
    with open(manifest_path, encoding="utf-8") as fh:
        raw = json.load(fh)
    behaviors = tuple(raw.get("behaviors", ()))
    target = raw.get("target")
    if not behaviors or target is None:
        raise DatasetError("manifest must declare 'behaviors' and 'target'")

    declared = set(behaviors)
    reserved = {"validation", "test"}
    for name in sorted(os.listdir(path)):
        stem, ext = os.path.splitext(name)
        if ext != ".tsv" or stem in reserved or stem.startswith("train."):
            continue
        if stem not in declared:
            raise DatasetError(f"file {name!r} references undeclared behavior {stem!r}")

    raw_records: dict[str, list[tuple[str, str, int | None]]] = {}
    for b in behaviors:
        tsv = os.path.join(path, f"{b}.tsv")
        if not os.path.isfile(tsv):
            raise DatasetError(f"missing behavior file {tsv}")
        raw_records[b] = _parse_tsv(tsv, b)

    if not raw_records[target]:
        raise DatasetError(f"empty target behavior {target!r}")

    users = sorted({u for recs in raw_records.values() for u, _, _ in recs})
    items = sorted({i for recs in raw_records.values() for _, i, _ in recs})
    u_map = {u: d for d, u in enumerate(users)}
    i_map = {i: d for d, i in enumerate(items)}

    edges: EdgeMap = {}
    for b in behaviors:
        bucket: dict[Edge, int | None] = {}
        for u_raw, i_raw, ts in raw_records[b]:
            key = (u_map[u_raw], i_map[i_raw])
            if key in bucket:
                prev = bucket[key]
                # earliest-occurrence rule; untimed duplicates never override
                if ts is not None and (prev is None or ts < prev):
                    bucket[key] = ts
            else:
                bucket[key] = ts
        edges[b] = bucket

    manifest = DatasetManifest(
        behaviors=behaviors, target=target, num_users=len(users), num_items=len(items)
    )
    return InteractionDataset(
        manifest=manifest, edges=edges, user_ids=tuple(users), item_ids=tuple(items)
    )


def save_dataset(ds: InteractionDataset, path: str) -> None:
    """Write a dataset back to the directory layout `load_dataset` reads."""
    os.makedirs(path, exist_ok=True)
    with open(os.path.join(path, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {"behaviors": list(ds.manifest.behaviors), "target": ds.manifest.target},
            fh,
            indent=2,
        )
        fh.write("\n")
    for b in ds.manifest.behaviors:
        with open(os.path.join(path, f"{b}.tsv"), "w", encoding="utf-8") as fh:
            for (u, i), ts in sorted(ds.edges[b].items()):
                cols = [ds.user_ids[u], ds.item_ids[i]]
                if ts is not None:
                    cols.append(str(ts))
                fh.write("\t".join(cols) + "\n")


def write_id_maps(ds: InteractionDataset, out_dir: str) -> None:
    """Persist users.map / items.map (``raw_id<TAB>dense_id``, sorted by raw id)."""
    os.makedirs(out_dir, exist_ok=True)
    for fname, ids in (("users.map", ds.user_ids), ("items.map", ds.item_ids)):
        with open(os.path.join(out_dir, fname), "w", encoding="utf-8") as fh:
            for dense, raw in sorted(enumerate(ids), key=lambda p: p[1]):
                fh.write(f"{raw}\t{dense}\n")


def write_split(split: SplitDataset, out_dir: str) -> None:
    """Write the split TSVs plus id maps and manifest into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    ds = split.train
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {"behaviors": list(ds.manifest.behaviors), "target": ds.manifest.target},
            fh,
            indent=2,
        )
        fh.write("\n")
    write_id_maps(ds, out_dir)
    for b in ds.manifest.behaviors:
        with open(os.path.join(out_dir, f"train.{b}.tsv"), "w", encoding="utf-8") as fh:
            for (u, i), ts in sorted(ds.edges[b].items()):
                cols = [ds.user_ids[u], ds.item_ids[i]]
                if ts is not None:
                    cols.append(str(ts))
                fh.write("\t".join(cols) + "\n")
    for fname, pairs in (("validation.tsv", split.validation), ("test.tsv", split.test)):
        with open(os.path.join(out_dir, fname), "w", encoding="utf-8") as fh:
            for u, i in pairs:
                fh.write(f"{ds.user_ids[u]}\t{ds.item_ids[i]}\n")


def _read_map(path: str) -> dict[str, int]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            raw, dense = line.rstrip("\n").split("\t")
            out[raw] = int(dense)
    return out


def load_split(path: str) -> SplitDataset:
    """Load a directory previously written by `write_split`."""
    with open(os.path.join(path, "manifest.json"), encoding="utf-8") as fh:
        raw = json.load(fh)
    behaviors = tuple(raw["behaviors"])
    target = raw["target"]
    u_map = _read_map(os.path.join(path, "users.map"))
    i_map = _read_map(os.path.join(path, "items.map"))
    user_ids = tuple(r for r, _ in sorted(u_map.items(), key=lambda p: p[1]))
    item_ids = tuple(r for r, _ in sorted(i_map.items(), key=lambda p: p[1]))

    edges: EdgeMap = {}
    for b in behaviors:
        bucket: dict[Edge, int | None] = {}
        for u_raw, i_raw, ts in _parse_tsv(os.path.join(path, f"train.{b}.tsv"), b):
            bucket[(u_map[u_raw], i_map[i_raw])] = ts
        edges[b] = bucket

    def read_pairs(fname: str) -> tuple[Edge, ...]:
        pairs = []
        fpath = os.path.join(path, fname)
        with open(fpath, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                u_raw, i_raw = line.split()[:2]
                pairs.append((u_map[u_raw], i_map[i_raw]))
        return tuple(pairs)

    manifest = DatasetManifest(
        behaviors=behaviors, target=target, num_users=len(u_map), num_items=len(i_map)
    )
    train = InteractionDataset(
        manifest=manifest, edges=edges, user_ids=user_ids, item_ids=item_ids
    )
    return SplitDataset(
        train=train, validation=read_pairs("validation.tsv"), test=read_pairs("test.tsv")
    )


# ----------------------------------------------------------------------
# Leave-one-out split
# ----------------------------------------------------------------------

def _order_key(item: int, ts: int | None) -> tuple[int, int]:
    # missing timestamps sort as 0; ties broken by ascending item id
    return (0 if ts is None else ts, item)


def split_leave_one_out(ds: InteractionDataset) -> SplitDataset:
    """Per user with >= 3 target interactions, hold out the latest for test
    and the second latest for validation (ordered by (timestamp, item id)).

    Users with fewer target interactions keep everything in train and are
    counted in ``users_without_holdout``.  Auxiliary edges are never held out.
    """
    target = ds.manifest.target
    by_user: dict[int, list[tuple[int, int | None]]] = {}
    for (u, i), ts in ds.edges[target].items():
        by_user.setdefault(u, []).append((i, ts))

    train_target: dict[Edge, int | None] = {}
    validation: list[Edge] = []
    test: list[Edge] = []
    skipped = 0
    for u in sorted(by_user):
        entries = sorted(by_user[u], key=lambda e: _order_key(e[0], e[1]))
        if len(entries) < 3:
            skipped += 1
            for i, ts in entries:
                train_target[(u, i)] = ts
            continue
        *rest, second_latest, latest = entries
        test.append((u, latest[0]))
        validation.append((u, second_latest[0]))
        for i, ts in rest:
            train_target[(u, i)] = ts

    edges: EdgeMap = {b: dict(ds.edges[b]) for b in ds.manifest.behaviors}
    edges[target] = train_target
    train = InteractionDataset(
        manifest=ds.manifest, edges=edges, user_ids=ds.user_ids, item_ids=ds.item_ids
    )
    return SplitDataset(
        train=train,
        validation=tuple(validation),
        test=tuple(test),
        users_without_holdout=skipped,
    )


# ----------------------------------------------------------------------
# Diagnostics
# ----------------------------------------------------------------------

def compute_bar(ds: InteractionDataset, behavior: str) -> float:
    """Fraction of target (user, item) pairs that also occur in ``behavior``."""
    if behavior not in ds.manifest.behaviors:
        raise DatasetError(f"behavior {behavior!r} not declared in manifest")
    target_pairs = ds.pairs(ds.manifest.target)
    if not target_pairs:
        raise DatasetError("empty target behavior: alignment ratio is undefined")
    return len(ds.pairs(behavior) & target_pairs) / len(target_pairs)


def _dt_with_flag(ds: InteractionDataset) -> tuple[float, bool]:
    target = ds.manifest.target
    target_edges = ds.edges[target]
    if not target_edges:
        raise DatasetError("empty target behavior: direct-target ratio is undefined")
    aux = ds.manifest.auxiliary
    approximate = False
    direct = 0
    for pair, t_ts in target_edges.items():
        preceded = False
        for b in aux:
            a_ts = ds.edges[b].get(pair, -1)
            if a_ts == -1:  # pair absent from this behavior
                continue
            if t_ts is None or a_ts is None:
                # no usable event times: degrade "preceding" to "co-occurring"
                preceded = True
                approximate = True
            elif a_ts < t_ts:
                preceded = True
        if not preceded:
            direct += 1
    return direct / len(target_edges), approximate


def compute_dt(ds: InteractionDataset) -> float:
    """Fraction of target interactions with no strictly earlier auxiliary
    interaction on the same (user, item) pair.

    Pairs lacking timestamps fall back to pair-level co-occurrence; the
    `diagnose` report flags that case as approximate.
    """
    return _dt_with_flag(ds)[0]


def diagnose(ds: InteractionDataset) -> DiagnosticsReport:
    dt, approximate = _dt_with_flag(ds)
    bar = {b: compute_bar(ds, b) for b in ds.manifest.behaviors}
    counts = {b: ds.edge_count(b) for b in ds.manifest.behaviors}
    return DiagnosticsReport(
        bar=bar,
        dt=dt,
        dt_approximate=approximate,
        counts=counts,
        num_users=ds.manifest.num_users,
        num_items=ds.manifest.num_items,
    )


def drop_behaviors(ds: InteractionDataset, names: tuple[str, ...]) -> InteractionDataset:
    """Remove auxiliary behaviors from the manifest and edge sets.

    The user/item universe is preserved so embeddings keep their shapes.
    """
    drop = set(names)
    if ds.manifest.target in drop:
        raise DatasetError("cannot drop the target behavior")
    unknown = drop - set(ds.manifest.behaviors)
    if unknown:
        raise DatasetError(f"cannot drop undeclared behaviors {sorted(unknown)}")
    kept = tuple(b for b in ds.manifest.behaviors if b not in drop)
    manifest = DatasetManifest(
        behaviors=kept,
        target=ds.manifest.target,
        num_users=ds.manifest.num_users,
        num_items=ds.manifest.num_items,
    )
    return InteractionDataset(
        manifest=manifest,
        edges={b: dict(ds.edges[b]) for b in kept},
        user_ids=ds.user_ids,
        item_ids=ds.item_ids,
    )


# ----------------------------------------------------------------------
# Seeded perturbation
# ----------------------------------------------------------------------

_MAX_ENUMERABLE = 200_000_000  # complement enumeration cap (pairs)


def perturb(ds: InteractionDataset, spec: PerturbationSpec) -> InteractionDataset:
    """Add or remove edges on the named auxiliary behaviors.

    ``add`` samples ceil(ratio * |edges(b)|) new pairs uniformly without
    replacement from the lexicographically sorted complement of the
    behavior's edge set (added edges get timestamp 0); ``remove`` deletes
    the same count of existing pairs, sampled uniformly without replacement.
    One generator seeded from ``spec.seed`` drives all behaviors, processed
    in manifest order.  Target edges are never touched.
    """
    target = ds.manifest.target
    for b in spec.behaviors:
        if b == target:
            raise DatasetError("perturbation must not touch the target behavior")
        if b not in ds.manifest.behaviors:
            raise DatasetError(f"behavior {b!r} not declared in manifest")

    n_users, n_items = ds.manifest.num_users, ds.manifest.num_items
    rng = np.random.default_rng(spec.seed)
    edges: EdgeMap = {b: dict(ds.edges[b]) for b in ds.manifest.behaviors}

    for b in ds.manifest.behaviors:
        if b not in spec.behaviors:
            continue
        existing = sorted(edges[b])
        count = math.ceil(spec.ratio * len(existing))
        if count == 0:
            continue
        if spec.mode == "remove":
            idx = rng.choice(len(existing), size=count, replace=False)
            for k in idx:
                del edges[b][existing[k]]
        else:
            total = n_users * n_items
            if total > _MAX_ENUMERABLE:
                raise DatasetError(
                    "complement too large to enumerate for edge addition"
                )
            codes = np.full(total, True)
            for u, i in existing:
                codes[u * n_items + i] = False
            complement = np.flatnonzero(codes)
            if len(complement) < count:
                raise DatasetError(
                    f"cannot add {count} edges to {b!r}: only "
                    f"{len(complement)} non-edges available"
                )
            picked = rng.choice(len(complement), size=count, replace=False)
            for code in complement[picked]:
                u, i = divmod(int(code), n_items)
                edges[b][(u, i)] = 0

    return InteractionDataset(
        manifest=ds.manifest, edges=edges, user_ids=ds.user_ids, item_ids=ds.item_ids
    )
