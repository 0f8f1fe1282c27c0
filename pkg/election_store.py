import json
import logging
from typing import Any, Dict, Optional

from errors import FileUnreadable, SchemaMismatch
from ingest import Election, Exclusion, RawRecord, build_election
from utils import write_json

logger = logging.getLogger(__name__)


def election_to_dict(e: Election) -> Dict[str, Any]:
    """
    Canonical JSON form of an Election: units array plus exclusion log.
    """
    return {
        "name": e.name,
        "units": [
            {
                "unit_id": u.unit_id,
                "neighborhood_id": u.neighborhood_id,
                "electors": u.electors,
                "ballots_cast": u.ballots_cast,
                "winner_votes": u.winner_votes,
                "turnout_pct": u.turnout_pct,
                "winner_pct": u.winner_pct,
            }
            for u in e.units
        ],
        "exclusion_log": [
            {"subject": x.subject, "kind": x.kind, "reason": x.reason, "line": x.line}
            for x in e.exclusion_log
        ],
    }


def election_from_dict(doc: Dict[str, Any]) -> Election:
    """Rebuild an Election from its canonical form.

    The stored units go through the same record validation and inclusion
    gates as a delimited file; percentages are recomputed from counts. Any
    new exclusions are appended to the stored exclusion log.
    """
    try:
        name = str(doc["name"])
        records = [
            RawRecord(
                unit_id=str(u["unit_id"]),
                neighborhood_id=str(u["neighborhood_id"]),
                electors=int(u["electors"]),
                ballots_cast=int(u["ballots_cast"]),
                winner_votes=int(u["winner_votes"]),
            )
            for u in doc["units"]
        ]
        log = tuple(
            Exclusion(subject=str(x["subject"]), kind=str(x["kind"]), reason=str(x["reason"]), line=x.get("line"))
            for x in doc.get("exclusion_log", [])
        )
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaMismatch(f"Not an election document: {e}") from e

    rebuilt = build_election(records, name)
    return Election(name=name, units=rebuilt.units, exclusion_log=log + rebuilt.exclusion_log)


def save_election(e: Election, filename: str, prov: Optional[Dict[str, Any]] = None) -> None:
    """
    Save an Election to a JSON file for chaining pipeline steps.
    """
    write_json(filename, election_to_dict(e), prov)
    logger.info("%s: saved %d units to %s", e.name, len(e.units), filename)


def load_election_json(filename: str) -> Election:
    try:
        with open(filename, "r", encoding="utf-8-sig") as f:
            doc = json.load(f)
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FileUnreadable(f"Could not read {filename}: {e}", {"path": str(filename)}) from e
    return election_from_dict(doc)
