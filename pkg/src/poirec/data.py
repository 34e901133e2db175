"""Check-in log parsing, activity filtering, session splitting and
leave-one-out dataset splits."""

import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

log = logging.getLogger(__name__)

UNKNOWN_CATEGORY = "UNKNOWN"


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class CheckIn:
    user_id: str
    poi_id: str
    category_id: str
    timestamp: float  # UTC seconds
    lat: float
    lon: float

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0 and -180.0 <= self.lon <= 180.0):
            raise DataError(f"coordinates out of bounds: ({self.lat}, {self.lon})")
        if not (self.timestamp >= 0 and self.timestamp == self.timestamp):
            raise DataError(f"bad timestamp: {self.timestamp}")


@dataclass(frozen=True)
class Poi:
    poi_id: str
    category_id: str
    lat: float
    lon: float


@dataclass
class Trajectory:
    user_id: str
    checkins: list  # of CheckIn, ascending timestamp

    def __len__(self):
        return len(self.checkins)

    def poi_ids(self):
        return [c.poi_id for c in self.checkins]


@dataclass
class DatasetSplit:
    train: list = field(default_factory=list)  # Trajectory
    val: list = field(default_factory=list)  # (prefix Trajectory, target CheckIn)
    test: list = field(default_factory=list)
    catalog: list = field(default_factory=list)  # Poi


# -- parsing ---------------------------------------------------------------

_FOURSQUARE_TIME = "%a %b %d %H:%M:%S %z %Y"


def _parse_foursquare_line(parts):
    # user, venue, category_id, category_name, lat, lon, tz_offset_min, utc_time
    user, venue, cat_id, _cat_name, lat, lon, _tz, raw_time = parts[:8]
    ts = datetime.strptime(raw_time, _FOURSQUARE_TIME).timestamp()
    return CheckIn(user, venue, cat_id, ts, float(lat), float(lon))


def _parse_gowalla_line(parts):
    # user, ISO-8601 time, lat, lon, location_id
    user, raw_time, lat, lon, loc = parts[:5]
    dt = datetime.fromisoformat(raw_time.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    # Gowalla has no category labels; a single synthetic one keeps the
    # category encoding well-defined downstream.
    return CheckIn(user, loc, UNKNOWN_CATEGORY, dt.timestamp(), float(lat), float(lon))


_PARSERS = {
    "foursquare": (_parse_foursquare_line, 8),
    "gowalla": (_parse_gowalla_line, 5),
}


def parse_checkins(path, fmt):
    """Parse a raw tab-separated check-in log. Malformed lines are skipped
    and tallied; an unreadable file is fatal."""
    if fmt not in _PARSERS:
        raise DataError(f"unknown format {fmt!r}, expected one of {sorted(_PARSERS)}")
    parser, min_fields = _PARSERS[fmt]
    path = Path(path)
    if not path.is_file():
        raise DataError(f"check-in file not found: {path}")
    checkins = []
    bad = 0
    with path.open("r", encoding="utf-8", errors="replace") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) < min_fields:
                bad += 1
                continue
            try:
                checkins.append(parser(parts))
            except (ValueError, DataError):
                bad += 1
    if bad:
        log.warning("skipped %d malformed line(s) in %s", bad, path)
    return checkins, bad


# -- preprocessing ---------------------------------------------------------


def filter_inactive(checkins, min_user_visits=10, min_poi_users=10):
    """Drop inactive users and unpopular POIs, iterated to a fixpoint: after
    filtering, every remaining user has >= min_user_visits records and every
    remaining POI is visited by >= min_poi_users distinct users."""
    if min_user_visits < 1 or min_poi_users < 1:
        raise DataError("filter thresholds must be >= 1")
    current = list(checkins)
    while True:
        user_counts = {}
        poi_users = {}
        for c in current:
            user_counts[c.user_id] = user_counts.get(c.user_id, 0) + 1
            poi_users.setdefault(c.poi_id, set()).add(c.user_id)
        bad_users = {u for u, n in user_counts.items() if n < min_user_visits}
        bad_pois = {p for p, us in poi_users.items() if len(us) < min_poi_users}
        if not bad_users and not bad_pois:
            return current
        current = [
            c for c in current if c.user_id not in bad_users and c.poi_id not in bad_pois
        ]


def split_sessions(user_checkins, gap_seconds=24 * 3600.0):
    """Split one user's check-ins into trajectories at gaps > gap_seconds.

    Sorts defensively by timestamp (stable, so equal timestamps keep input
    order)."""
    if not user_checkins:
        return []
    ordered = sorted(user_checkins, key=lambda c: c.timestamp)
    user = ordered[0].user_id
    sessions = []
    current = [ordered[0]]
    for prev, cur in zip(ordered, ordered[1:]):
        if cur.timestamp - prev.timestamp > gap_seconds:
            sessions.append(Trajectory(user, current))
            current = [cur]
        else:
            current.append(cur)
    sessions.append(Trajectory(user, current))
    return sessions


def truncate_recent(traj, t_max):
    """Keep the most recent t_max check-ins."""
    if t_max < 1:
        raise DataError("t_max must be >= 1")
    if len(traj) <= t_max:
        return traj
    return Trajectory(traj.user_id, traj.checkins[-t_max:])


def leave_one_out(traj):
    """Split a trajectory into (train part, val pair, test pair).

    Trajectories shorter than 3 are train-only: returns (traj, None, None).
    """
    if len(traj) < 3:
        return traj, None, None
    cs = traj.checkins
    test = (Trajectory(traj.user_id, cs[:-1]), cs[-1])
    val = (Trajectory(traj.user_id, cs[:-2]), cs[-2])
    train = Trajectory(traj.user_id, cs[:-2])
    return train, val, test


def build_catalog(checkins):
    """Derive the POI catalog (first-seen category/coordinates per POI),
    sorted by poi_id."""
    seen = {}
    for c in checkins:
        if c.poi_id not in seen:
            seen[c.poi_id] = Poi(c.poi_id, c.category_id, c.lat, c.lon)
    return [seen[k] for k in sorted(seen)]


def make_split(checkins, min_user_visits=10, min_poi_users=10, gap_seconds=24 * 3600.0,
               t_max=100):
    """Full preprocessing protocol: activity filtering, per-user session
    splitting, truncation to the most recent t_max, leave-one-out."""
    kept = filter_inactive(checkins, min_user_visits, min_poi_users)
    by_user = {}
    for c in kept:
        by_user.setdefault(c.user_id, []).append(c)
    split = DatasetSplit(catalog=build_catalog(kept))
    for user in sorted(by_user):
        for traj in split_sessions(by_user[user], gap_seconds):
            traj = truncate_recent(traj, t_max)
            train, val, test = leave_one_out(traj)
            if len(train) >= 1:
                split.train.append(train)
            if val is not None:
                split.val.append(val)
            if test is not None:
                split.test.append(test)
    return split


# -- serialization ---------------------------------------------------------


def _checkin_to_row(c):
    return [c.user_id, c.poi_id, c.category_id, c.timestamp, c.lat, c.lon]


def _checkin_from_row(row):
    return CheckIn(row[0], row[1], row[2], float(row[3]), float(row[4]), float(row[5]))


def save_split(split, out_dir):
    """Write a DatasetSplit as newline-delimited JSON records, one trajectory
    (or eval pair) per line. Deterministic byte-for-byte."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "catalog.jsonl").open("w", encoding="utf-8") as fh:
        for p in split.catalog:
            fh.write(json.dumps([p.poi_id, p.category_id, p.lat, p.lon]) + "\n")
    with (out / "trajectories.jsonl").open("w", encoding="utf-8") as fh:
        for traj in split.train:
            rec = {"kind": "train", "user": traj.user_id,
                   "checkins": [_checkin_to_row(c) for c in traj.checkins]}
            fh.write(json.dumps(rec) + "\n")
        for kind, pairs in (("val", split.val), ("test", split.test)):
            for prefix, target in pairs:
                rec = {"kind": kind, "user": prefix.user_id,
                       "checkins": [_checkin_to_row(c) for c in prefix.checkins],
                       "target": _checkin_to_row(target)}
                fh.write(json.dumps(rec) + "\n")


def load_split(in_dir):
    src = Path(in_dir)
    cat_path = src / "catalog.jsonl"
    traj_path = src / "trajectories.jsonl"
    if not cat_path.is_file() or not traj_path.is_file():
        raise DataError(f"processed dataset not found under {src}")
    split = DatasetSplit()
    with cat_path.open("r", encoding="utf-8") as fh:
        for line in fh:
            poi_id, cat, lat, lon = json.loads(line)
            split.catalog.append(Poi(poi_id, cat, float(lat), float(lon)))
    with traj_path.open("r", encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            traj = Trajectory(rec["user"], [_checkin_from_row(r) for r in rec["checkins"]])
            if rec["kind"] == "train":
                split.train.append(traj)
            else:
                pair = (traj, _checkin_from_row(rec["target"]))
                (split.val if rec["kind"] == "val" else split.test).append(pair)
    return split
