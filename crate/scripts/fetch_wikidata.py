#!/usr/bin/env python3
"""Download property metadata and entity property maps from the Wikidata
SPARQL endpoint in the formats `propsearch` reads.

    fetch_wikidata.py properties properties.jsonl
    fetch_wikidata.py entities qids.txt entities.tsv

`qids.txt` lists one entity id per line.
"""

import argparse
import json
import sys
import time

import requests

ENDPOINT = "https://query.wikidata.org/sparql"
USER_AGENT = "propsearch-fetch/0.1 (https://www.wikidata.org/wiki/Wikidata:Data_access)"

PROPERTIES_QUERY = """
SELECT ?p ?label ?description (GROUP_CONCAT(DISTINCT ?alias; separator="\\u001f") AS ?aliases) WHERE {
  ?p a wikibase:Property ;
     rdfs:label ?label .
  FILTER(LANG(?label) = "%(lang)s")
  OPTIONAL { ?p schema:description ?description . FILTER(LANG(?description) = "%(lang)s") }
  OPTIONAL { ?p skos:altLabel ?alias . FILTER(LANG(?alias) = "%(lang)s") }
}
GROUP BY ?p ?label ?description
"""

ENTITIES_QUERY = """
SELECT ?item (GROUP_CONCAT(DISTINCT ?prop; separator=",") AS ?props) WHERE {
  VALUES ?item { %(values)s }
  ?item ?claim ?value .
  ?prop wikibase:directClaim ?claim .
}
GROUP BY ?item
"""


def sparql(query):
    for attempt in range(5):
        r = requests.get(
            ENDPOINT,
            params={"query": query, "format": "json"},
            headers={"User-Agent": USER_AGENT},
            timeout=300,
        )
        if r.status_code == 429 or r.status_code >= 500:
            time.sleep(2 ** attempt * 5)
            continue
        r.raise_for_status()
        return r.json()["results"]["bindings"]
    r.raise_for_status()


def local_id(uri):
    return uri.rsplit("/", 1)[-1]


def fetch_properties(out, lang):
    rows = sparql(PROPERTIES_QUERY % {"lang": lang})
    records = []
    for row in rows:
        aliases = row.get("aliases", {}).get("value", "")
        records.append({
            "id": local_id(row["p"]["value"]),
            "label": row["label"]["value"],
            "description": row.get("description", {}).get("value"),
            "aliases": [a for a in aliases.split("\x1f") if a],
        })
    # a property can carry several descriptions in one language; keep the first
    seen = set()
    records.sort(key=lambda r: int(r["id"][1:]))
    with open(out, "w", encoding="utf-8") as f:
        for r in records:
            if r["id"] in seen:
                continue
            seen.add(r["id"])
            f.write(json.dumps(r, ensure_ascii=False) + "\n")
    print(f"{len(seen)} properties -> {out}", file=sys.stderr)


def fetch_entities(qids_path, out, batch):
    with open(qids_path, encoding="utf-8") as f:
        qids = [line.strip() for line in f if line.strip() and not line.startswith("#")]
    written = 0
    with open(out, "w", encoding="utf-8") as f:
        for start in range(0, len(qids), batch):
            chunk = qids[start:start + batch]
            values = " ".join(f"wd:{q}" for q in chunk)
            found = {}
            for row in sparql(ENTITIES_QUERY % {"values": values}):
                props = sorted({local_id(p) for p in row["props"]["value"].split(",")},
                               key=lambda p: int(p[1:]))
                found[local_id(row["item"]["value"])] = props
            for q in chunk:
                if found.get(q):
                    f.write(f"{q}\t{','.join(found[q])}\n")
                    written += 1
    print(f"{written} of {len(qids)} entities -> {out}", file=sys.stderr)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("properties")
    p.add_argument("out")
    p.add_argument("--lang", default="en")
    e = sub.add_parser("entities")
    e.add_argument("qids")
    e.add_argument("out")
    e.add_argument("--batch", type=int, default=50)
    args = ap.parse_args()
    if args.command == "properties":
        fetch_properties(args.out, args.lang)
    else:
        fetch_entities(args.qids, args.out, args.batch)


if __name__ == "__main__":
    main()
