"""Indicator names, state names, short phrases and report sentences.

Template file format, one entry per line (``#`` starts a comment)::

    indicator_id|state_id|phrase words...|template sentence

``indicator_id`` and ``state_id`` are identifiers such as
``pleural_effusion`` and ``positive``; indicator and state order follow
first appearance in the file.
"""

from .errors import ContractError

STATES = ("uncertain", "negative", "positive")

# (uncertain, negative, positive) sentences per indicator
_DEFAULT = [
    ("cardiomediastinal silhouette", (
        "the cardiomediastinal silhouette is possibly enlarged .",
        "the cardiomediastinal silhouette is normal .",
        "the cardiomediastinal silhouette is enlarged .")),
    ("pneumothorax", (
        "a small pneumothorax cannot be excluded .",
        "no pneumothorax .",
        "there is a pneumothorax .")),
    ("granuloma", (
        "a possible calcified granuloma is seen .",
        "no granuloma .",
        "a calcified granuloma is present .")),
    ("consolidation", (
        "focal consolidation cannot be excluded .",
        "no focal consolidation .",
        "there is focal consolidation .")),
    ("pleural effusion", (
        "a small pleural effusion is questioned .",
        "no pleural effusion .",
        "there is a pleural effusion .")),
    ("pneumonia", (
        "pneumonia is not excluded .",
        "no evidence of pneumonia .",
        "findings are consistent with pneumonia .")),
    ("lung opacity", (
        "there is a questionable lung opacity .",
        "the lungs are clear .",
        "there is a lung opacity .")),
    ("pulmonary edema", (
        "mild pulmonary edema is possible .",
        "no pulmonary edema .",
        "there is pulmonary edema .")),
    ("cardiomegaly", (
        "the heart size is borderline .",
        "the heart size is normal .",
        "the heart is enlarged .")),
    ("atelectasis", (
        "possible basilar atelectasis .",
        "no atelectasis .",
        "there is basilar atelectasis .")),
    ("fracture", (
        "a rib fracture cannot be excluded .",
        "no acute bony fracture .",
        "there is an acute rib fracture .")),
]

DEFAULT_INDICATORS = tuple(name for name, _ in _DEFAULT)


def _key(name):
    return name.strip().replace(" ", "_")


class IndicatorTemplates:
    """Phrase and sentence lookup for every (indicator, state) pair."""

    def __init__(self, names, states, phrases, sentences):
        self.names = list(names)
        self.states = list(states)
        self.phrases = {k: list(v) for k, v in phrases.items()}
        self.sentences = dict(sentences)
        for t in range(len(self.names)):
            for m in range(len(self.states)):
                if not self.phrases.get((t, m)):
                    raise ValueError(f"missing phrase for ({self.names[t]}, {self.states[m]})")
                if not self.sentences.get((t, m)):
                    raise ValueError(f"missing sentence for ({self.names[t]}, {self.states[m]})")

    @classmethod
    def default(cls, n_indicators=None):
        rows = _DEFAULT[:n_indicators] if n_indicators else _DEFAULT
        if n_indicators and n_indicators > len(_DEFAULT):
            raise ValueError(f"default templates cover {len(_DEFAULT)} indicators, asked for {n_indicators}")
        names = [name for name, _ in rows]
        phrases, sentences = {}, {}
        for t, (name, sents) in enumerate(rows):
            for m, state in enumerate(STATES):
                phrases[(t, m)] = name.split() + [state]
                sentences[(t, m)] = sents[m]
        return cls(names, STATES, phrases, sentences)

    @property
    def n_indicators(self):
        return len(self.names)

    @property
    def n_states(self):
        return len(self.states)

    @property
    def keys(self):
        return [_key(n) for n in self.names]

    def words(self):
        return sorted({w for p in self.phrases.values() for w in p})

    def phrase(self, t, m):
        self._check(t, m)
        return list(self.phrases[(t, m)])

    def sentence(self, t, m):
        self._check(t, m)
        return self.sentences[(t, m)]

    def render(self, states):
        """Report text for a sequence of state indices, in indicator order."""
        if len(states) != self.n_indicators:
            raise ContractError(f"expected {self.n_indicators} states, got {len(states)}")
        return " ".join(self.sentence(t, int(m)) for t, m in enumerate(states))

    def indicator_index(self, name):
        """Resolve an indicator by key, display name or integer index."""
        name = str(name).strip()
        if name.isdigit() and int(name) < self.n_indicators:
            return int(name)
        keys = self.keys
        k = _key(name)
        if k in keys:
            return keys.index(k)
        raise ContractError(f"unknown indicator {name!r}; known: {', '.join(keys)}")

    def state_index(self, name):
        name = str(name).strip()
        if name.isdigit() and int(name) < self.n_states:
            return int(name)
        if name in self.states:
            return self.states.index(name)
        raise ContractError(f"unknown state {name!r}; known: {', '.join(self.states)}")

    def _check(self, t, m):
        if not 0 <= t < self.n_indicators:
            raise ContractError(f"unknown indicator id {t}")
        if not 0 <= m < self.n_states:
            raise ContractError(f"unknown state id {m}")

    # -- files ----------------------------------------------------------

    def dumps(self):
        lines = []
        for t, key in enumerate(self.keys):
            for m, state in enumerate(self.states):
                lines.append(f"{key}|{state}|{' '.join(self.phrases[(t, m)])}|{self.sentences[(t, m)]}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text):
        keys, states, phrases, sentences = [], [], {}, {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("|")
            if len(parts) != 4:
                raise ValueError(f"template line {lineno}: expected 4 '|'-separated fields")
            ind, state, phrase, sentence = (p.strip() for p in parts)
            if ind not in keys:
                keys.append(ind)
            if state not in states:
                states.append(state)
            phrases[(keys.index(ind), states.index(state))] = phrase.split()
            sentences[(keys.index(ind), states.index(state))] = sentence
        names = [k.replace("_", " ") for k in keys]
        return cls(names, states, phrases, sentences)

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read())
