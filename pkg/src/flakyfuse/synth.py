"""Synthetic planted-signal corpus of Java-like test methods.

Every flaky category owns ten one-token signal statements built from its
indicator tokens. A statement owned by category ``c`` appears in a test with
probability ``q_signal`` when the test is labeled ``c`` and ``q_noise``
otherwise, so equal probabilities make tokens independent of labels. The rest
of each method is filler: generic assertions plus project-specific service
names, which never generalize across projects.
"""

from __future__ import annotations

import logging
import random
from dataclasses import asdict, dataclass

from .corpus import CATEGORIES, FLAKY_CATEGORIES, Corpus, FlakinessCategory, TestCase, tokenize

log = logging.getLogger(__name__)

C = FlakinessCategory
# Each statement contributes exactly one token, so a category plants ten tokens
# and a test's per-category hit count is the number of its statements present.
SIGNAL_STATEMENTS: dict[FlakinessCategory, tuple[str, ...]] = {
    C.ASYNC_WAIT: (
        "sleep(500);", "await();", "new CompletableFuture<>();", "new Promise();",
        'new Socket("localhost", 8080);', "connect();", 'new URL("http://localhost");',
        "new Future();", "new Http();", "new Netty();",
    ),
    C.CONCURRENCY: (
        "new AtomicInteger(0);", "new AtomicBoolean(false);", "new AtomicLong(0L);",
        "new CyclicBarrier(2);", "new Semaphore(1);", "new CountDownLatch(1);",
        "new ReentrantLock();", "new ExecutorService();", "new Runnable();", "new Phaser();",
    ),
    C.TIME: (
        "currentTimeMillis();", "nanoTime();", "new Stopwatch();", "new Clock();",
        "new Duration();", "new Instant();", "new LocalDateTime();", "new TimeZone();",
        "new Timer();", "new Calendar();",
    ),
    C.UNORDERED_COLLECTIONS: (
        "new HashMap<>();", "new HashSet<>();", "keySet();", "iterator();", "new JSON();",
        "entrySet();", "new JSONObject();", "new Properties();", "new Map();", "new Set();",
    ),
    C.ORDER_DEPENDENCY: (
        "save();", "delete();", "new Repository();", "new Database();", "new FileSystem();",
        "reset();", "new Cache();", "new TempFile();", "new Singleton();", "clear();",
    ),
}


def planted_tokens(category: FlakinessCategory) -> set[str]:
    return {tok for stmt in SIGNAL_STATEMENTS.get(category, ()) for tok in tokenize(stmt)}


_DOMAINS = """order invoice user account payment cart ticket report session profile
catalog product review shipment warehouse ledger budget contract tenant device sensor
channel message mailbox calendar booking flight hotel patient doctor course student
grade library author article comment forum badge policy claim vehicle route""".split()
_ROLES = ("Service", "Manager", "Client", "Helper", "Registry")
_VERBS = ("load", "compute", "build", "fetch", "render", "apply", "resolve", "convert")
_LOCALS = ("result", "value", "actual", "expected", "item", "data", "output", "response",
           "total", "name")
_TEST_WORDS = ("Loads", "Handles", "Returns", "Creates", "Updates", "Rejects", "Parses",
               "Builds", "Finds", "Accepts")


@dataclass(frozen=True)
class SynthSpec:
    n_projects: int = 40
    n_tests: int = 400
    flaky_fraction: float = 0.10
    n_flaky: int | None = None
    q_signal: float = 0.8
    q_noise: float = 0.05
    n_min_projects: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.n_projects < 1 or self.n_tests < self.n_projects:
            raise ValueError("need at least one test per project")
        if not 0.0 <= self.flaky_fraction <= 1.0:
            raise ValueError("flaky_fraction must lie in [0, 1]")
        for q in (self.q_signal, self.q_noise):
            if not 0.0 <= q <= 1.0:
                raise ValueError("signal probabilities must lie in [0, 1]")
        if self.n_flaky is not None and not 0 <= self.n_flaky <= self.n_tests:
            raise ValueError("n_flaky out of range")

    @classmethod
    def paper_scaled(cls, scale: float, **overrides) -> "SynthSpec":
        """280 flaky / 8,294 non-flaky tests over 97 projects, times ``scale``."""
        n_tests = round(8574 * scale)
        return cls(**{"n_projects": max(1, min(n_tests, round(97 * scale))),
                      "n_tests": n_tests, "n_flaky": round(280 * scale), **overrides})

    @property
    def flaky_total(self) -> int:
        if self.n_flaky is not None:
            return self.n_flaky
        return round(self.n_tests * self.flaky_fraction)

    def category_counts(self) -> dict[FlakinessCategory, int]:
        base, extra = divmod(self.flaky_total, len(FLAKY_CATEGORIES))
        counts = {c: base + (1 if i < extra else 0) for i, c in enumerate(FLAKY_CATEGORIES)}
        counts[C.NON_FLAKY] = self.n_tests - self.flaky_total
        return counts

    def to_dict(self) -> dict:
        return asdict(self)


def _project_names(n: int, rng: random.Random) -> list[tuple[str, str]]:
    """(project id, service identifier) pairs."""
    out = []
    for i in range(n):
        domain = _DOMAINS[i % len(_DOMAINS)]
        role = _ROLES[(i // len(_DOMAINS) + rng.randrange(len(_ROLES))) % len(_ROLES)]
        suffix = "" if i < len(_DOMAINS) else str(i // len(_DOMAINS))
        out.append((f"proj{i:02d}-{domain}", f"{domain}{role}{suffix}"))
    return out


def _filler(service: str, rng: random.Random) -> list[str]:
    names = rng.sample(_LOCALS, 3)
    v, w, x = names
    pool = [
        f"String {v} = {service}.{rng.choice(_VERBS)}();",
        f"assertEquals({w}, {v});",
        f"assertNotNull({v});",
        f"int {x} = {service}.count();",
        f"List<String> {w} = helper.items();",
        f'{service}.configure("mode");',
        f"assertTrue({x} > 0);",
    ]
    k = rng.randint(3, 6)
    return pool[:2] + rng.sample(pool[2:], k - 2)


def _render(method: str, statements: list[str]) -> str:
    body = "".join(f"    {s}\n" for s in statements)
    return f"@Test\npublic void {method}() throws Exception {{\n{body}}}\n"


def generate(spec: SynthSpec = SynthSpec()) -> Corpus:
    rng = random.Random(spec.seed)
    projects = _project_names(spec.n_projects, rng)
    counts = spec.category_counts()

    owner_of: list[tuple[str, str]] = []  # (project, service) per test slot
    labels: list[FlakinessCategory] = []
    for cat in FLAKY_CATEGORIES:
        n = counts[cat]
        if 0 < n < spec.n_min_projects:
            log.warning("%s has %d tests, fewer than n_min_projects=%d", cat, n,
                        spec.n_min_projects)
        spread = projects[:]
        rng.shuffle(spread)
        for i in range(n):
            owner_of.append(spread[i % len(spread)])
            labels.append(cat)
    n_plain = counts[C.NON_FLAKY]
    order = projects[:]
    rng.shuffle(order)
    flaky_projects = {p for p, _ in owner_of}
    # projects without flaky tests get plain tests first so none is left empty
    order.sort(key=lambda ps: ps[0] in flaky_projects)
    for i in range(n_plain):
        owner_of.append(order[i % len(order)])
        labels.append(C.NON_FLAKY)
    if len({p for p, _ in owner_of}) < spec.n_projects:
        raise ValueError("not enough tests to populate every project")

    tests = []
    for idx, ((project, service), label) in enumerate(zip(owner_of, labels)):
        statements = _filler(service, rng)
        for cat in FLAKY_CATEGORIES:
            q = spec.q_signal if cat is label else spec.q_noise
            statements.extend(s for s in SIGNAL_STATEMENTS[cat] if rng.random() < q)
        head, tail = statements[:1], statements[1:]
        rng.shuffle(tail)
        method = f"test{rng.choice(_TEST_WORDS)}{service[0].upper()}{service[1:]}{idx}"
        tests.append(TestCase(f"{project}::{method}", project, _render(method, head + tail),
                              label))
    rng.shuffle(tests)
    corpus = Corpus(tests)
    assert [corpus.category_counts[c] for c in CATEGORIES] == [counts[c] for c in CATEGORIES]
    return corpus
