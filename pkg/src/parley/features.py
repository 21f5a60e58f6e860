"""Per-agent communication features extracted from negotiation transcripts.

Eight features per role seat: verbal mimicry (TF-IDF cosine against the
counterpart's preceding utterance), hedge/apology/gratitude/first-person-
plural rates, words per utterance, question rate, and lexicon positivity.
"""

from __future__ import annotations

import math
import re
import string
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import SchemaError
from .session import Transcript

DEFAULT_LEXICONS = (
    "hedges",
    "apologies",
    "gratitude",
    "first_person_plural",
    "sentiment",
)

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def tokenize(text: str) -> list[str]:
    """Lowercase, strip punctuation characters, split on whitespace."""
    return text.lower().translate(_PUNCT_TABLE).split()


@dataclass(frozen=True)
class Lexicon:
    name: str
    phrases: tuple[str, ...]
    match_mode: str = "word-boundary"  # or "phrase" (plain substring)
    polarity: dict[str, float] | None = None

    def __post_init__(self):
        if not self.phrases:
            raise SchemaError(f"lexicon {self.name!r} is empty")
        if len(set(self.phrases)) != len(self.phrases):
            raise SchemaError(f"lexicon {self.name!r} has duplicate phrases")

    def matches(self, text: str) -> list[tuple[int, int, str]]:
        """Case-insensitive matches resolved leftmost-longest, so a phrase
        covering a position suppresses shorter phrases starting inside it
        (one count per occurrence position)."""
        text = text.lower()
        candidates: list[tuple[int, int, str]] = []
        for phrase in self.phrases:
            pattern = re.escape(phrase)
            if self.match_mode == "word-boundary":
                pattern = r"(?<!\w)" + pattern + r"(?!\w)"
            for m in re.finditer(pattern, text):
                candidates.append((m.start(), m.end(), phrase))
        candidates.sort(key=lambda c: (c[0], -(c[1] - c[0])))
        taken: list[tuple[int, int, str]] = []
        cursor = -1
        for start, end, phrase in candidates:
            if start > cursor:
                taken.append((start, end, phrase))
                cursor = end - 1
        return taken


def load_lexicon(path: str | Path, name: str | None = None, match_mode: str = "word-boundary") -> Lexicon:
    """One phrase per line; '#' comments; optional tab-separated polarity."""
    path = Path(path)
    phrases: list[str] = []
    polarity: dict[str, float] = {}
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "\t" in line:
            phrase, raw_score = line.split("\t", 1)
            phrase = phrase.strip().lower()
            score = float(raw_score)
            if not -1.0 <= score <= 1.0:
                raise SchemaError(f"{path}: polarity for {phrase!r} outside [-1, 1]")
            polarity[phrase] = score
        else:
            phrase = line.lower()
        phrases.append(phrase)
    return Lexicon(
        name=name or path.stem,
        phrases=tuple(phrases),
        match_mode=match_mode,
        polarity=polarity or None,
    )


def load_default_lexicons(directory: str | Path | None = None) -> dict[str, Lexicon]:
    if directory is not None:
        return {
            name: load_lexicon(Path(directory) / f"{name}.txt")
            for name in DEFAULT_LEXICONS
        }
    lexicons = {}
    base = resources.files("parley.data.lexicons")
    for name in DEFAULT_LEXICONS:
        ref = base / f"{name}.txt"
        with resources.as_file(ref) as path:
            lexicons[name] = load_lexicon(path, name=name)
    return lexicons


# ---------------------------------------------------------------------------
# TF-IDF and mimicry


@dataclass
class TfidfResult:
    vectors: list[dict[str, float]]  # one per utterance, in order
    all_empty: bool


def build_tfidf(utterance_texts: list[str]) -> TfidfResult:
    """Term-weight vectors with each utterance as a document in the
    conversation: weight = tf * (ln((1+N)/(1+df)) + 1)."""
    if not utterance_texts:
        raise SchemaError("conversation has no utterances")
    docs = [tokenize(text) for text in utterance_texts]
    n_docs = len(docs)
    df: dict[str, int] = {}
    for doc in docs:
        for term in set(doc):
            df[term] = df.get(term, 0) + 1
    idf = {
        term: math.log((1 + n_docs) / (1 + count)) + 1.0 for term, count in df.items()
    }
    vectors = []
    for doc in docs:
        tf: dict[str, int] = {}
        for term in doc:
            tf[term] = tf.get(term, 0) + 1
        vectors.append({term: count * idf[term] for term, count in tf.items()})
    return TfidfResult(vectors=vectors, all_empty=all(not d for d in docs))


def cosine_similarity(u: dict[str, float], v: dict[str, float]) -> float:
    norm_u = math.sqrt(sum(x * x for x in u.values()))
    norm_v = math.sqrt(sum(x * x for x in v.values()))
    if norm_u == 0.0 or norm_v == 0.0:
        return 0.0
    shared = set(u) & set(v)
    dot = sum(u[t] * v[t] for t in shared)
    return dot / (norm_u * norm_v)


def score_mimicry(transcript: Transcript, role_name: str) -> float | None:
    """Mean cosine similarity between each of the seat's utterances and the
    counterpart utterance immediately before it; None when the seat never
    replies (it only opened)."""
    texts = [u.text for u in transcript.utterances]
    if not texts:
        return None
    tfidf = build_tfidf(texts)
    similarities = []
    for i, utterance in enumerate(transcript.utterances):
        if utterance.role_name != role_name or i == 0:
            continue
        prev = transcript.utterances[i - 1]
        if prev.role_name == role_name:
            continue
        similarities.append(cosine_similarity(tfidf.vectors[i], tfidf.vectors[i - 1]))
    if not similarities:
        return None
    return sum(similarities) / len(similarities)


# ---------------------------------------------------------------------------
# Lexicon rates and positivity


def count_lexicon(transcript: Transcript, role_name: str, lexicon: Lexicon) -> float | None:
    """Matches per utterance, averaged over the seat's utterances."""
    counts = [
        len(lexicon.matches(u.text))
        for u in transcript.utterances
        if u.role_name == role_name
    ]
    if not counts:
        return None
    return sum(counts) / len(counts)


def score_positivity(transcript: Transcript, role_name: str, lexicon: Lexicon) -> float | None:
    """Mean polarity of matched terms per utterance (0 when none match),
    averaged over the seat's utterances."""
    if lexicon.polarity is None:
        raise SchemaError(f"lexicon {lexicon.name!r} carries no polarity scores")
    per_utterance = []
    for utterance in transcript.utterances:
        if utterance.role_name != role_name:
            continue
        matched = [
            lexicon.polarity[phrase]
            for _, _, phrase in lexicon.matches(utterance.text)
            if phrase in lexicon.polarity
        ]
        per_utterance.append(sum(matched) / len(matched) if matched else 0.0)
    if not per_utterance:
        return None
    return sum(per_utterance) / len(per_utterance)


# ---------------------------------------------------------------------------
# Full feature vector


@dataclass
class FeatureVector:
    mimicry: float | None
    hedges: float | None
    apologies: float | None
    gratitude: float | None
    first_person_plural: float | None
    message_length: float | None
    questions: float | None
    positivity: float | None

    def as_dict(self) -> dict[str, float | None]:
        return {
            "mimicry": self.mimicry,
            "hedges": self.hedges,
            "apologies": self.apologies,
            "gratitude": self.gratitude,
            "first_person_plural": self.first_person_plural,
            "message_length": self.message_length,
            "questions": self.questions,
            "positivity": self.positivity,
        }


def extract_features(
    transcript: Transcript, lexicons: dict[str, Lexicon] | None = None
) -> dict[str, FeatureVector]:
    """All eight features for both role seats; None where undefined."""
    lexicons = lexicons or load_default_lexicons()
    features = {}
    for role_name in transcript.role_map:
        own = [u.text for u in transcript.utterances if u.role_name == role_name]
        if own:
            message_length = sum(len(t.split()) for t in own) / len(own)
            questions = sum(t.count("?") for t in own) / len(own)
        else:
            message_length = None
            questions = None
        features[role_name] = FeatureVector(
            mimicry=score_mimicry(transcript, role_name),
            hedges=count_lexicon(transcript, role_name, lexicons["hedges"]),
            apologies=count_lexicon(transcript, role_name, lexicons["apologies"]),
            gratitude=count_lexicon(transcript, role_name, lexicons["gratitude"]),
            first_person_plural=count_lexicon(
                transcript, role_name, lexicons["first_person_plural"]
            ),
            message_length=message_length,
            questions=questions,
            positivity=score_positivity(transcript, role_name, lexicons["sentiment"]),
        )
    return features


FEATURE_TABLE_COLUMNS = (
    "negotiation_id",
    "exercise",
    "agent_id",
    "counterpart_id",
    "role",
    "mimicry",
    "hedges",
    "apologies",
    "gratitude",
    "first_person_plural",
    "message_length",
    "questions",
    "positivity",
    "cluster_agent",
    "cluster_dyad",
    "cluster_negotiation",
)


def feature_rows(
    transcript: Transcript, lexicons: dict[str, Lexicon] | None = None
) -> list[dict]:
    """Two agent-observation rows per negotiation, keyed like the outcome table."""
    from .scoring import dyad_id

    features = extract_features(transcript, lexicons)
    roles = list(transcript.role_map)
    rows = []
    for role_name in roles:
        counterpart_role = roles[1] if role_name == roles[0] else roles[0]
        agent_id = transcript.role_map[role_name]
        counterpart_id = transcript.role_map[counterpart_role]
        row = {
            "negotiation_id": transcript.negotiation_id,
            "exercise": transcript.scenario_id,
            "agent_id": agent_id,
            "counterpart_id": counterpart_id,
            "role": role_name,
            "cluster_agent": agent_id,
            "cluster_dyad": dyad_id(agent_id, counterpart_id, transcript.scenario_id),
            "cluster_negotiation": transcript.negotiation_id,
        }
        for key, value in features[role_name].as_dict().items():
            row[key] = "" if value is None else value
        rows.append(row)
    return rows
