import re

import pytest
from hypothesis import settings, strategies as st

from flakyfuse.corpus import STOPWORDS, Corpus, TestCase

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")

# Bcrypt timing test in the shape of the password-encoder example used to
# illustrate renaming of timing variables.
TIMING_TEST = """@Test
public void bcryptTiming() {
    int iterations = 10000;
    String password = "password";
    String encodedBcrypt = cachingPasswordEncoder.encode(password);
    long nanoStart = System.nanoTime();
    for (int i = 0; i < iterations; i++) {
        assertTrue(bcryptPasswordEncoder.matches(password, encodedBcrypt));
    }
    long nanoStop = System.nanoTime();
    long bcryptTime = nanoStop - nanoStart;
    nanoStart = System.nanoTime();
    for (int j = 0; j < iterations; j++) {
        assertTrue(cachingPasswordEncoder.matches(password, encodedBcrypt));
    }
    nanoStop = System.nanoTime();
    long cacheTime = nanoStop - nanoStart;
    assertTrue(bcryptTime > (10 * cacheTime));
}
"""

LATCH_TEST = """@Test
public void testMessageDelivery() throws Exception {
    Consumer consumer = new Consumer(queue);
    consumer.start();
    producer.send("hello");
    assertEquals(1, consumer.received());
}
"""


def make_test(i, project, label, source=None):
    return TestCase(f"{project}::t{i}", project, source or f"void t{i}() {{ run{i}(); }}", label)


def reference_tokens(source):
    """Independent regex tokenizer used as an oracle for the production lexer."""
    skip = re.compile(r'"""[\s\S]*?(?:"""|$)|"(?:\\.|[^"\\\n])*"?|\'(?:\\.|[^\'\\\n])*\'?'
                      r'|//[^\n]*|/\*[\s\S]*?(?:\*/|$)')
    text = skip.sub(" ", source)
    lexemes = re.findall(r"[A-Za-z_]\w*|\.?\d[\w.]*|\S", text, flags=re.ASCII)
    out = []
    for k, word in enumerate(lexemes):
        if not re.fullmatch(r"[A-Za-z_]\w*", word, flags=re.ASCII):
            continue
        low = word.lower()
        if low in STOPWORDS:
            continue
        if k + 2 < len(lexemes) and lexemes[k + 1] == "." and \
                re.fullmatch(r"[A-Za-z_]\w*", lexemes[k + 2], flags=re.ASCII) and \
                lexemes[k + 2].lower() not in STOPWORDS:
            out.append(f"{low}.{lexemes[k + 2].lower()}")
        out.append(low)
    return out


identifiers = st.from_regex(r"[A-Za-z_][A-Za-z0-9_]{0,8}", fullmatch=True)
java_fragments = st.one_of(
    identifiers,
    st.sampled_from(["Thread.sleep(100);", "while", "if (x) {", "}", "new ", "int ", ".", "(",
                     ")", ";", " ", "\n", "=", "0x1F", "1.5e10", "10L", "List<Map<K, V>>",
                     "x -> x", "a::b", "@Test"]),
    identifiers.map(lambda s: f'"{s} // not a comment"'),
    identifiers.map(lambda s: f"// {s}\n"),
    identifiers.map(lambda s: f"/* {s}.{s} */"),
    st.just("'c'"),
)
java_like = st.lists(java_fragments, max_size=40).map("".join)


@pytest.fixture
def tiny_corpus():
    tests = [make_test(i, f"p{i % 4}", lab) for i, lab in enumerate(
        ["time", "non_flaky", "concurrency", "non_flaky", "time", "non_flaky",
         "async_wait", "non_flaky"])]
    return Corpus(tests)


ACCEPTANCE_LINES: list[str] = []


def record_acceptance(criterion: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1][1:-1])):
            terminalreporter.write_line(line)
