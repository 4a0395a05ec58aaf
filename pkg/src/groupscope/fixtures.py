"""Deterministic themed test corpora.

Every theme carries plain vocabulary plus synonym clusters. Cluster members in
``post_terms`` are written into generated posts; ``query_paraphrases`` never
appear in any generated post, so a query built from them has no lexical match
and only the embedding path can find the cluster's posts.
"""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass

from .corpus import Corpus, Group, Post, QueryRecord
from .textproc import tokenize


@dataclass(frozen=True)
class SynonymCluster:
    cluster_id: str
    theme: str
    post_terms: tuple[str, ...]
    query_paraphrases: tuple[str, ...]


THEME_WORDS: dict[str, tuple[str, ...]] = {
    "baking": ("flour", "oven", "butter", "dough", "recipe", "bread", "cookies",
               "sugar", "pastry", "bakery", "vanilla", "sprinkles"),
    "coffee": ("espresso", "beans", "roast", "barista", "mug", "grinder", "latte",
               "brew", "cafe", "milk", "foam", "decaf"),
    "sports": ("match", "coach", "team", "league", "score", "practice", "court",
               "season", "training", "goal", "ball", "referee"),
    "gardening": ("soil", "seeds", "compost", "tomatoes", "pruning", "garden",
                  "bloom", "watering", "mulch", "shovel", "greenhouse", "roses"),
    "pets": ("puppy", "leash", "kitten", "vet", "collar", "grooming", "kibble",
             "adoption", "shelter", "walk", "fur", "litter"),
    "travel": ("passport", "luggage", "flight", "hotel", "beach", "itinerary",
               "hostel", "museum", "backpack", "train", "visa", "airport"),
}

THEMES = tuple(THEME_WORDS)

CLUSTERS: tuple[SynonymCluster, ...] = (
    SynonymCluster("cupcakes", "baking", ("cupcakes", "small individual cakes"),
                   ("tiny frosted treats", "mini iced sponges")),
    SynonymCluster("croissant", "baking", ("croissant", "crescent roll"),
                   ("flaky french viennoiserie", "buttery layered crescents")),
    SynonymCluster("cappuccino", "coffee", ("cappuccino", "italian coffee drink"),
                   ("frothy cuppa", "steamed foamy shot")),
    SynonymCluster("cold brew", "coffee", ("cold brew", "iced steeped coffee"),
                   ("chilled overnight infusion", "slow drip chiller")),
    SynonymCluster("basketball", "sports", ("basketball", "hoops"),
                   ("slam dunk contest", "nba pickup runs")),
    SynonymCluster("tennis", "sports", ("tennis", "racket sport"),
                   ("wimbledon volleys", "grand slam rallies")),
    SynonymCluster("succulents", "gardening", ("succulents", "desert plants"),
                   ("drought tolerant greenery", "aloe echeveria potting")),
    SynonymCluster("labrador", "pets", ("labrador", "lab retriever"),
                   ("loyal yellow hound", "gundog companion")),
    SynonymCluster("ryokan", "travel", ("ryokan", "japanese inn"),
                   ("tatami guesthouse", "onsen lodging")),
    SynonymCluster("backpacking", "travel", ("backpacking", "budget trekking"),
                   ("shoestring wandering", "gap year roaming")),
)

FILLER = ("great", "today", "new", "love", "anyone", "tips", "share", "best",
          "looking", "week", "weekend", "thanks", "help", "the", "for", "with",
          "and", "to", "a", "my", "at", "in", "is", "this", "our")

BASE_TIME = 1_700_000_000
TIME_SPAN = 90 * 86400


def synonym_table() -> dict[str, str]:
    """Every cluster phrase (post-side and query-only) mapped to its cluster id."""
    table: dict[str, str] = {}
    for c in CLUSTERS:
        for phrase in (c.cluster_id, *c.post_terms, *c.query_paraphrases):
            table[phrase] = c.cluster_id
    return table


def topic_map() -> dict[str, str]:
    """Term/cluster-id → theme tag, consumed by the mock judge."""
    topics: dict[str, str] = {}
    for theme, words in THEME_WORDS.items():
        for w in words:
            topics[w] = theme
    for c in CLUSTERS:
        topics[c.cluster_id] = c.theme
    return topics


def cluster_terms() -> list[str]:
    return [t for c in CLUSTERS for t in c.post_terms]


def _post_text(rng: random.Random, theme: str, forced_term: str | None) -> str:
    words = list(rng.sample(THEME_WORDS[theme], rng.randint(2, 4)))
    words += rng.sample(FILLER, rng.randint(2, 5))
    if forced_term is None and rng.random() < 0.3:
        forced_term = rng.choice([t for c in CLUSTERS if c.theme == theme for t in c.post_terms])
    if forced_term is not None:
        words.append(forced_term)
    rng.shuffle(words)
    text = " ".join(words)
    return text[0].upper() + text[1:] + rng.choice(("", "!", ".", "?", "!!"))


def _generate(seed: int, n_groups: int, posts_per_group: int) -> tuple[list[Group], list[Post], Counter]:
    if n_groups < 1 or posts_per_group < 1:
        raise ValueError("n_groups and posts_per_group must be >= 1")
    rng = random.Random(seed)
    groups, posts = [], []
    counts: Counter = Counter()
    coverage = [(c.theme, t) for c in CLUSTERS for t in c.post_terms]
    for gi in range(n_groups):
        gid = f"g{gi + 1}"
        primary = THEMES[gi % len(THEMES)]
        groups.append(Group(gid, f"{primary} community {gi + 1}"))
        for j in range(posts_per_group):
            if j < len(coverage):
                theme, forced = coverage[j]
            else:
                theme = primary if rng.random() < 0.7 else rng.choice(THEMES)
                forced = None
            clicks = rng.randint(0, 40)
            posts.append(Post(
                post_id=f"{gid}-{j:06d}",
                group_id=gid,
                author_id=f"u{rng.randrange(1000):04d}",
                text=_post_text(rng, theme, forced),
                created_at=BASE_TIME + rng.randrange(TIME_SPAN),
                clicks=clicks,
                shares=rng.randint(0, clicks // 4 + 1),
                comments=rng.randint(0, clicks // 3 + 1),
            ))
            counts[gid] += 1
    return groups, posts, counts


def generate_fixture_corpus(seed: int, n_groups: int, posts_per_group: int) -> Corpus:
    groups, posts, _ = _generate(seed, n_groups, posts_per_group)
    return Corpus(groups, posts)


def generate_fixture_with_counts(seed: int, n_groups: int, posts_per_group: int) -> tuple[Corpus, Counter]:
    """Like :func:`generate_fixture_corpus` but also returns the generator's own per-group tally."""
    groups, posts, counts = _generate(seed, n_groups, posts_per_group)
    return Corpus(groups, posts), counts


@dataclass(frozen=True)
class SynonymFixture:
    corpus: Corpus
    queries: list[QueryRecord]
    targets: dict[str, str]  # query_id -> post_id the embedding path must surface


def synonym_fixture(seed: int = 11, distractors_per_group: int = 24) -> SynonymFixture:
    """One group per theme holding one target post per cluster plus themed distractors.

    Each cluster contributes one paraphrase query per held-out phrase (20 in
    total). No post in any group contains a paraphrase token, so the keyword
    path comes back empty for all of them.
    """
    rng = random.Random(seed)
    groups, posts, queries = [], [], []
    targets: dict[str, str] = {}
    qn = 0
    for gi, theme in enumerate(THEMES):
        gid = f"s{gi + 1}"
        groups.append(Group(gid, f"{theme} synonym group"))
        pn = 0

        def add(text: str) -> str:
            nonlocal pn
            pid = f"{gid}-{pn:04d}"
            pn += 1
            posts.append(Post(pid, gid, f"u{rng.randrange(100):03d}", text,
                              BASE_TIME + rng.randrange(TIME_SPAN), rng.randint(0, 9), 0, 0))
            return pid

        for c in (c for c in CLUSTERS if c.theme == theme):
            extra = rng.sample(THEME_WORDS[theme], 2)
            pid = add(f"{c.post_terms[0].capitalize()} {extra[0]} {extra[1]}")
            for phrase in c.query_paraphrases:
                qid = f"q{qn:03d}"
                qn += 1
                queries.append(QueryRecord(qid, gid, phrase))
                targets[qid] = pid
        for _ in range(distractors_per_group):
            t = theme if rng.random() < 0.5 else rng.choice(THEMES)
            words = rng.sample(THEME_WORDS[t], 3) + rng.sample(FILLER[:13], 2)
            rng.shuffle(words)
            add(" ".join(words))
    corpus = Corpus(groups, posts)
    for q in queries:
        qtoks = set(tokenize(q.query_text))
        for p in corpus.posts_in_group(q.group_id):
            assert not qtoks & set(tokenize(p.text)), (q, p)
    return SynonymFixture(corpus, queries, targets)


@dataclass(frozen=True)
class MixedFixture:
    corpus: Corpus
    queries: list[QueryRecord]
    semantic_miss: frozenset[str]  # query_ids whose intent is only reachable through synonyms


def mixed_fixture(seed: int = 5, n_groups: int = 6, posts_per_group: int = 80) -> MixedFixture:
    """Generated corpus plus a query set mixing plain keyword queries with paraphrase queries.

    Paraphrase queries carry a couple of stopwords so the keyword path still
    returns (mostly off-target) posts for them.
    """
    corpus = generate_fixture_corpus(seed, n_groups, posts_per_group)
    rng = random.Random(seed + 1)
    queries: list[QueryRecord] = []
    miss: set[str] = set()
    for gi, gid in enumerate(corpus.group_ids()):
        theme = THEMES[gi % len(THEMES)]
        for w in rng.sample(THEME_WORDS[theme], 3):
            queries.append(QueryRecord(f"m{len(queries):03d}", gid, w))
        for c in (c for c in CLUSTERS if c.theme == theme):
            phrase = rng.choice(c.query_paraphrases)
            qid = f"m{len(queries):03d}"
            queries.append(QueryRecord(qid, gid, f"any {phrase} for me"))
            miss.add(qid)
    return MixedFixture(corpus, queries, frozenset(miss))
