"""Semantics-preserving perturbations of Java test methods.

Three transforms, all lexical:

* variable renaming: locally declared names are rewritten everywhere they
  stand alone (never after ``.``/``::``, never right before ``(``, never in
  comments or literals);
* dead-code injection: a false-guarded block of decoy statements right after
  the method's opening brace;
* decoy comments: line comments mentioning decoy tokens before the closing
  brace, optionally with a guarded print statement.

Every injection is wrapped in ``/*AUG-BEGIN*/ ... /*AUG-END*/`` so it can be
stripped mechanically. Training and stress testing draw guard templates, decoy
pools and renaming schemes from disjoint sets.
"""

from __future__ import annotations

import hashlib
import random
import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from .corpus import (FLAKY_CATEGORIES, PRIMITIVE_TYPES, STOPWORDS, Lexeme, TestCase,
                     lex)
from .dtm import SymbolicVocabulary

BEGIN = "/*AUG-BEGIN*/"
END = "/*AUG-END*/"
_REGION = re.compile(re.escape(BEGIN) + ".*?" + re.escape(END), re.DOTALL)

RENAME, DEADCODE, DECOY = "rename", "deadcode", "decoy"
TRANSFORM_SUBSETS: tuple[tuple[str, ...], ...] = (
    (RENAME,), (DEADCODE,), (DECOY,), (RENAME, DEADCODE), (RENAME, DECOY),
    (DEADCODE, DECOY), (RENAME, DEADCODE, DECOY),
)
STRESS_MODES = ("rename", "deadcode", "both")

GUARD_TEMPLATES: dict[str, tuple[str, str]] = {
    "if_false": ("if (false) {\n", "}\n"),
    "catch_never": ("try {\n} catch (IllegalStateException unreachable) {\n", "}\n"),
    "while_false": ("while (false) {\n", "}\n"),
}

_JAVA_NAMES = """
Thread sleep TimeUnit SECONDS MILLISECONDS await Awaitility CountDownLatch
CompletableFuture Future Promise Socket URL Http HttpClient Netty connect
ExecutorService Executors Runnable AtomicInteger AtomicBoolean AtomicLong
CyclicBarrier Semaphore Lock ReentrantLock System currentTimeMillis nanoTime
Stopwatch Clock Duration Instant Map Set HashMap HashSet Iterator JSON JSONArray
JSONObject keySet iterator Repository Database FileSystem save delete reset
ofMillis ofSeconds supplyAsync runAsync
""".split()
_DISPLAY = {name.lower(): name for name in _JAVA_NAMES}


class AugmentationError(ValueError):
    pass


def derive_seed(*parts) -> int:
    digest = hashlib.sha256(":".join(map(str, parts)).encode()).digest()
    return int.from_bytes(digest[:8], "big")


# ---------------------------------------------------------------------------
# Renaming


def _code_positions(lexemes: Sequence[Lexeme]) -> list[int]:
    return [i for i, lx in enumerate(lexemes) if lx.kind not in ("space", "comment")]


def _generic_type_before(code: Sequence[Lexeme], j: int) -> bool:
    """True when code[j] is a '>' closing a generic argument list after a type name."""
    depth = 0
    while j >= 0:
        t = code[j].text
        if t == ">":
            depth += 1
        elif t == "<":
            depth -= 1
            if depth == 0:
                return j > 0 and code[j - 1].kind == "ident"
        elif not (code[j].kind == "ident" or t in {",", ".", "?", "[", "]", "&"}):
            return False
        j -= 1
    return False


def _is_type_end(code: Sequence[Lexeme], j: int) -> bool:
    lx = code[j]
    if lx.kind == "ident":
        return lx.text not in STOPWORDS or lx.text in PRIMITIVE_TYPES
    if lx.text == ">":
        return _generic_type_before(code, j)
    if lx.text == "]":
        return j >= 2 and code[j - 1].text == "[" and _is_type_end(code, j - 2)
    return False


def find_declarations(source: str) -> list[str]:
    """Locally declared variable names in order of first declaration."""
    code = [lx for lx in lex(source) if lx.kind not in ("space", "comment")]
    found: list[str] = []

    def add(name: str):
        if name not in STOPWORDS and name not in found:
            found.append(name)

    for k, lx in enumerate(code):
        if lx.kind != "ident" or lx.text in STOPWORDS:
            continue
        nxt = code[k + 1].text if k + 1 < len(code) else ""
        prev_dot = k > 0 and code[k - 1].text in (".", "::", "@")
        if nxt in ("=", ";", ",", ":", ")") and k > 0 and _is_type_end(code, k - 1):
            add(lx.text)
        elif nxt == "->" and not prev_dot:
            add(lx.text)
    # parenthesized lambda parameters: (a, b) -> ...
    for k, lx in enumerate(code):
        if lx.text != "->" or k == 0 or code[k - 1].text != ")":
            continue
        j, names = k - 2, []
        while j >= 0 and code[j].text != "(":
            if code[j].kind == "ident" and code[j + 1].text in (",", ")"):
                names.append(code[j].text)
            elif code[j].kind != "ident" and code[j].text not in (",", "<", ">", ".", "[", "]"):
                names = []
                break
            j -= 1
        for name in reversed(names):
            add(name)
    return found


def _name_generator(scheme: str, rng: random.Random, taken: set[str]):
    counters = {"_t": 0, "_s": 0, "_val": 0}
    k = 0
    while True:
        if scheme == "var":
            name = f"VAR_{k}"
            k += 1
        else:
            family = rng.choice(("_t", "_s", "_val"))
            counters[family] += 1
            n = counters[family]
            if family == "_val":
                suffix = ""
                while n:
                    n, r = divmod(n - 1, 26)
                    suffix = chr(ord("A") + r) + suffix
                name = family + suffix
            else:
                name = f"{family}{n}"
        if name not in taken:
            taken.add(name)
            yield name


def rename_variables(source: str, seed: int = 0, scheme: str = "var"
                     ) -> tuple[str, dict[str, str]]:
    """Rename local variables; ``scheme`` is ``"var"`` (VAR_k) or ``"stress"`` (_t1/_valA)."""
    if scheme not in ("var", "stress"):
        raise ValueError(f"unknown renaming scheme {scheme!r}")
    lexemes = lex(source)
    declared = find_declarations(source)
    if not declared:
        return source, {}
    taken = {lx.text for lx in lexemes if lx.kind == "ident"}
    names = _name_generator(scheme, random.Random(seed), taken)
    mapping = {old: next(names) for old in declared}
    pos = _code_positions(lexemes)
    out = [lx.text for lx in lexemes]
    for rank, i in enumerate(pos):
        lx = lexemes[i]
        if lx.kind != "ident" or lx.text not in mapping:
            continue
        prev = lexemes[pos[rank - 1]].text if rank > 0 else ""
        nxt = lexemes[pos[rank + 1]].text if rank + 1 < len(pos) else ""
        if prev in (".", "::", "@") or nxt == "(":
            continue
        out[i] = mapping[lx.text]
    return "".join(out), mapping


def standalone_occurrences(source: str, name: str) -> int:
    """Occurrences of ``name`` that renaming is required to rewrite."""
    lexemes = lex(source)
    pos = _code_positions(lexemes)
    count = 0
    for rank, i in enumerate(pos):
        if lexemes[i].kind == "ident" and lexemes[i].text == name:
            prev = lexemes[pos[rank - 1]].text if rank > 0 else ""
            nxt = lexemes[pos[rank + 1]].text if rank + 1 < len(pos) else ""
            if prev not in (".", "::", "@") and nxt != "(":
                count += 1
    return count


# ---------------------------------------------------------------------------
# Injection


def display_token(token: str) -> str:
    return ".".join(_DISPLAY.get(part, part) for part in token.split("."))


def decoy_statement(token: str) -> str:
    shown = display_token(token)
    if "." in shown:
        return f"{shown}();"
    if shown[:1].isupper():
        return f"new {shown}();"
    return f"{shown}();"


def _body_open(lexemes: Sequence[Lexeme]) -> int | None:
    depth = 0
    for lx in lexemes:
        if lx.kind != "op":
            continue
        if lx.text == "(":
            depth += 1
        elif lx.text == ")":
            depth -= 1
        elif lx.text == "{" and depth <= 0:
            return lx.start + 1
    return None


def _body_close(lexemes: Sequence[Lexeme]) -> int | None:
    for lx in reversed(lexemes):
        if lx.kind == "op" and lx.text == "}":
            return lx.start
    return None


def _pick_decoys(decoys: Sequence[str], rng: random.Random, low: int, high: int) -> list[str]:
    pool = sorted(set(decoys))
    if not pool:
        raise AugmentationError("decoy pool is empty")
    n = rng.randint(low, high)
    if n <= len(pool):
        return rng.sample(pool, n)
    return [rng.choice(pool) for _ in range(n)]


def guarded_block(guard_style: str, statements: Iterable[str]) -> str:
    try:
        head, tail = GUARD_TEMPLATES[guard_style]
    except KeyError:
        raise AugmentationError(f"unknown guard style {guard_style!r}") from None
    return head + "".join(f"    {s}\n" for s in statements) + tail


def inject_dead_code(source: str, guard_style: str, decoys: Sequence[str], seed: int = 0
                     ) -> str:
    rng = random.Random(seed)
    at = _body_open(lex(source))
    if at is None:
        raise AugmentationError("no method body found")
    chosen = _pick_decoys(decoys, rng, 2, 5)
    block = guarded_block(guard_style, (decoy_statement(t) for t in chosen))
    return source[:at] + BEGIN + "\n" + block + END + source[at:]


def inject_decoy_comments(source: str, decoys: Sequence[str], seed: int = 0,
                          guard_style: str | None = None) -> str:
    """Append 1-3 decoy comments; with ``guard_style`` also a guarded print."""
    rng = random.Random(seed)
    lexemes = lex(source)
    at = _body_close(lexemes)
    chosen = _pick_decoys(decoys, rng, 1, 3)
    lines = [f"// decoy: {display_token(t)} timing\n" for t in chosen]
    if guard_style is not None:
        words = " ".join(display_token(t) for t in chosen)
        lines.append(guarded_block(guard_style, [f'System.out.println("{words}");']))
    region = BEGIN + "\n" + "".join(lines) + END
    if at is None:
        return source + region
    return source[:at] + region + source[at:]


def strip_augmentations(source: str) -> str:
    return _REGION.sub("", source)


def injected_regions(source: str) -> list[str]:
    return [m.group(0)[len(BEGIN): -len(END)] for m in _REGION.finditer(source)]


# ---------------------------------------------------------------------------
# Policy and drivers


def split_decoy_pools(vocab: SymbolicVocabulary) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """Deal each flaky category's mined tokens alternately into two pools."""
    train, stress, seen = [], [], set()
    for cat in FLAKY_CATEGORIES:
        fresh = [t for t in vocab.tokens(cat) if t not in seen]
        seen.update(fresh)
        train.extend(fresh[0::2])
        stress.extend(fresh[1::2])
    return tuple(train), tuple(stress)


def _fallback_pools() -> tuple[tuple[str, ...], tuple[str, ...]]:
    from .symbolic import DEFAULT_GROUPS

    triggers = sorted({t for _, g in DEFAULT_GROUPS.groups for t in g
                       if not t.endswith("*") and t not in STOPWORDS})
    return tuple(triggers[0::2]), tuple(triggers[1::2])


@dataclass(frozen=True)
class AugmentationPolicy:
    p_base: float = 0.5
    p_rare: float = 0.95
    train_guard_styles: tuple[str, ...] = ("if_false", "catch_never")
    stress_guard_styles: tuple[str, ...] = ("while_false",)
    train_decoys: tuple[str, ...] = ()
    stress_decoys: tuple[str, ...] = ()
    seed: int = 0

    def __post_init__(self):
        for p in (self.p_base, self.p_rare):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability out of range: {p}")
        for style in self.train_guard_styles + self.stress_guard_styles:
            if style not in GUARD_TEMPLATES:
                raise ValueError(f"unknown guard style {style!r}")
        if set(self.train_guard_styles) & set(self.stress_guard_styles):
            raise ValueError("training and stress guard styles must be disjoint")
        if set(self.train_decoys) & set(self.stress_decoys):
            raise ValueError("training and stress decoy pools must be disjoint")

    def with_decoys(self, vocab: SymbolicVocabulary | None) -> "AugmentationPolicy":
        train, stress = split_decoy_pools(vocab) if vocab is not None else ((), ())
        if not train or not stress:
            train, stress = _fallback_pools()
        return replace(self, train_decoys=train, stress_decoys=stress)

    def to_dict(self) -> dict:
        return {"p_base": self.p_base, "p_rare": self.p_rare,
                "train_guard_styles": list(self.train_guard_styles),
                "stress_guard_styles": list(self.stress_guard_styles),
                "train_decoys": list(self.train_decoys),
                "stress_decoys": list(self.stress_decoys), "seed": self.seed}


@dataclass(frozen=True)
class PerturbedTest:
    test: TestCase
    original_id: str
    applied_transforms: tuple[str, ...] = ()
    rename_map: dict[str, str] = field(default_factory=dict)

    @property
    def source(self) -> str:
        return self.test.source


def _apply(test: TestCase, transforms: Sequence[str], rng: random.Random, *,
           scheme: str, guards: Sequence[str], decoys: Sequence[str],
           comment_guards: Sequence[str] | None) -> PerturbedTest:
    source, mapping, applied = test.source, {}, []
    for name in transforms:
        sub_seed = rng.randrange(2**32)
        if name == RENAME:
            source, mapping = rename_variables(source, sub_seed, scheme)
            if mapping:
                applied.append(RENAME)
        elif name == DEADCODE:
            if decoys and _body_open(lex(source)) is not None:
                source = inject_dead_code(source, rng.choice(list(guards)), decoys, sub_seed)
                applied.append(DEADCODE)
        elif name == DECOY:
            if decoys:
                guard = rng.choice(list(comment_guards)) if comment_guards else None
                source = inject_decoy_comments(source, decoys, sub_seed, guard)
                applied.append(DECOY)
        else:
            raise ValueError(f"unknown transform {name!r}")
    return PerturbedTest(replace(test, source=source), test.id, tuple(applied), mapping)


def augment_training_detailed(test: TestCase, policy: AugmentationPolicy,
                              rng: random.Random) -> PerturbedTest:
    p = policy.p_rare if test.label.is_flaky else policy.p_base
    if rng.random() >= p:
        return PerturbedTest(test, test.id)
    transforms = TRANSFORM_SUBSETS[rng.randrange(len(TRANSFORM_SUBSETS))]
    return _apply(test, transforms, rng, scheme="var", guards=policy.train_guard_styles,
                  decoys=policy.train_decoys,
                  comment_guards=policy.train_guard_styles if rng.random() < 0.5 else None)


def augment_training(test: TestCase, policy: AugmentationPolicy, rng: random.Random
                     ) -> TestCase:
    """Randomly perturb one training example; the label is never touched."""
    return augment_training_detailed(test, policy, rng).test


def perturb_for_stress(test: TestCase, mode: str, policy: AugmentationPolicy
                       ) -> PerturbedTest:
    """Deterministic unseen perturbation using only the stress-side templates."""
    if mode not in STRESS_MODES:
        raise ValueError(f"unknown stress mode {mode!r}")
    if mode != "rename" and not policy.stress_decoys:
        raise AugmentationError("stress decoy pool is empty")
    transforms = {"rename": (RENAME,), "deadcode": (DEADCODE,),
                  "both": (RENAME, DEADCODE)}[mode]
    rng = random.Random(derive_seed(policy.seed, test.id, mode))
    return _apply(test, transforms, rng, scheme="stress",
                  guards=policy.stress_guard_styles, decoys=policy.stress_decoys,
                  comment_guards=None)
