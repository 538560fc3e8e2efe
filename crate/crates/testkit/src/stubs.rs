//! `main.py` sources for stub submissions.
//!
//! The baselines read the public bundle through the command-line contract
//! and handle both tasks. They expect Top-N columns named `user_id` and
//! `item_id`, as produced by [`crate::topn_dataset`].

const BASELINE_COMMON: &str = r#"
import argparse
import csv
import random
from collections import Counter, defaultdict


def parse_args():
    p = argparse.ArgumentParser()
    for name in ("--task", "--train", "--valid", "--test-input", "--output"):
        p.add_argument(name, required=True)
    return p.parse_args()


def read_rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def write_rows(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def ctr_parts(args):
    train = read_rows(args.train) + read_rows(args.valid)
    test = read_rows(args.test_input)
    label = next(c for c in train[0] if c not in test[0])
    features = [c for c in test[0] if c != "row_id"]
    return train, test, label, features


def topn_parts(args):
    train = read_rows(args.train) + read_rows(args.valid)
    users = [r["user_id"] for r in read_rows(args.test_input)]
    seen = defaultdict(set)
    for r in train:
        seen[r["user_id"]].add(r["item_id"])
    popularity = Counter(r["item_id"] for r in train)
    return users, seen, popularity
"#;

const POPULARITY_MAIN: &str = r#"

def ctr(args):
    train, test, label, features = ctr_parts(args)
    base = sum(int(r[label]) for r in train) / len(train)
    stats = {f: defaultdict(lambda: [0, 0]) for f in features}
    for r in train:
        for f in features:
            s = stats[f][r[f]]
            s[0] += int(r[label])
            s[1] += 1
    out = []
    for r in test:
        rates = []
        for f in features:
            clicks, views = stats[f].get(r[f], (0, 0))
            rates.append((clicks + 5 * base) / (views + 5))
        out.append((r["row_id"], repr(sum(rates) / len(rates))))
    write_rows(args.output, ["row_id", "score"], out)


def topn(args):
    users, seen, popularity = topn_parts(args)
    ranked = sorted(popularity, key=lambda i: (-popularity[i], i))
    out = []
    for u in users:
        recs = [i for i in ranked if i not in seen[u]][:10]
        out.extend((u, item, rank) for rank, item in enumerate(recs, 1))
    write_rows(args.output, ["user_id", "item_id", "rank"], out)


args = parse_args()
ctr(args) if args.task == "ctr" else topn(args)
"#;

const RANDOM_MAIN: &str = r#"

def ctr(args):
    rng = random.Random(20240101)
    _, test, _, _ = ctr_parts(args)
    write_rows(args.output, ["row_id", "score"], [(r["row_id"], repr(rng.random())) for r in test])


def topn(args):
    rng = random.Random(20240101)
    users, seen, popularity = topn_parts(args)
    catalog = sorted(popularity)
    out = []
    for u in users:
        unseen = [i for i in catalog if i not in seen[u]]
        recs = rng.sample(unseen, min(10, len(unseen)))
        out.extend((u, item, rank) for rank, item in enumerate(recs, 1))
    write_rows(args.output, ["user_id", "item_id", "rank"], out)


args = parse_args()
ctr(args) if args.task == "ctr" else topn(args)
"#;

/// Scores CTR rows by smoothed per-feature click rates and recommends the
/// most popular unseen items. Deterministic.
pub fn popularity() -> String {
    format!("{BASELINE_COMMON}{POPULARITY_MAIN}")
}

/// Uniform random scores and items from a fixed seed. Deterministic.
pub fn random() -> String {
    format!("{BASELINE_COMMON}{RANDOM_MAIN}")
}

/// `body` run after sleeping `seconds`.
pub fn sleep_then(seconds: f64, body: &str) -> String {
    format!("import time\ntime.sleep({seconds})\n{body}")
}

pub const SLEEP_FOREVER: &str = "import time\nwhile True:\n    time.sleep(60)\n";

pub const EXIT_3: &str = "import sys\nprint('stub failing on purpose')\nsys.exit(3)\n";

/// Exits 0 without writing predictions.
pub const NO_OUTPUT: &str = "print('hello')\n";

/// Writes a prediction file with the wrong header.
pub const BAD_OUTPUT: &str = r#"
import sys
out = sys.argv[sys.argv.index("--output") + 1]
with open(out, "w") as f:
    f.write("id,value\n0,0.5\n")
"#;

/// Prints `mib` MiB to stdout, then exits 0 without predictions.
pub fn noisy(mib: usize) -> String {
    format!("import sys\nchunk = 'x' * 1023 + '\\n'\nfor _ in range({mib} * 1024):\n    sys.stdout.write(chunk)\nsys.stdout.flush()\n")
}

/// Prints every path reachable from the working directory and from the
/// directories named in its arguments, resolving symlinks, then runs the
/// popularity baseline.
pub fn tree_probe() -> String {
    let probe = r#"
import os
import sys

roots = {os.getcwd(), os.path.expanduser("~")}
roots.update(os.path.dirname(a) for a in sys.argv if a.startswith("/"))
for root in sorted(roots):
    for dirpath, dirnames, filenames in os.walk(root, followlinks=True):
        for name in dirnames + filenames:
            p = os.path.join(dirpath, name)
            print("PATH", p, os.path.realpath(p))
"#;
    format!("{probe}{}", popularity())
}

/// Tries to open a TCP connection and reports the outcome on stdout.
pub const NETWORK_PROBE: &str = r#"
import socket
try:
    socket.create_connection(("1.1.1.1", 53), timeout=2)
    print("NETWORK reachable")
except OSError as e:
    print("NETWORK blocked", e.errno)
"#;
