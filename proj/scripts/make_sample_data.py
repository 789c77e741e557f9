#!/usr/bin/env python3
"""Generate the bundled sample data under data/.

Everything is synthetic and seeded, so rerunning the script reproduces the
files byte for byte:

  en_sample.txt          ~10k English-like sentences (vocabulary calibration)
  en_probe_train.txt     en_sample without sentences using held-out words
  probe_holdout.txt      the held-out words
  lexicon.tsv            word, lemma, synonyms (~500 entries)
  toy_{train,valid}.{src,tgt}  short sentences and a letter-cipher "translation"
  sentiment_{train,valid}.tsv  label<TAB>text
  smoke.cfg              run configuration for the smoke pipeline
"""

import argparse
import random
from pathlib import Path

VERB_GROUPS = [
    ["take", "grab", "seize"], ["make", "build", "create"], ["give", "offer"],
    ["walk", "stroll", "march"], ["talk", "speak", "chat"], ["run", "sprint", "race"],
    ["see", "watch", "notice"], ["find", "discover", "locate"], ["keep", "hold", "retain"],
    ["bring", "carry", "fetch"], ["buy", "purchase"], ["help", "assist"],
    ["want", "wish", "desire"], ["like", "enjoy", "love"], ["close", "shut"],
    ["start", "begin"], ["stop", "halt"], ["fix", "repair", "mend"],
    ["clean", "wash", "scrub"], ["pull", "drag", "tug"], ["push", "shove", "press"],
    ["jump", "leap", "hop"], ["throw", "toss", "hurl"], ["break", "smash", "shatter"],
    ["choose", "select", "pick"], ["shout", "yell", "scream"], ["cook", "bake"],
    ["paint"], ["open"], ["visit"], ["sell"], ["write"], ["read"],
]

IRREGULAR = {
    "take": ("took", "taken"), "make": ("made", "made"), "build": ("built", "built"),
    "give": ("gave", "given"), "speak": ("spoke", "spoken"), "run": ("ran", "run"),
    "see": ("saw", "seen"), "find": ("found", "found"), "keep": ("kept", "kept"),
    "hold": ("held", "held"), "bring": ("brought", "brought"), "buy": ("bought", "bought"),
    "shut": ("shut", "shut"), "begin": ("began", "begun"), "leap": ("leapt", "leapt"),
    "throw": ("threw", "thrown"), "break": ("broke", "broken"), "choose": ("chose", "chosen"),
    "sell": ("sold", "sold"), "write": ("wrote", "written"), "read": ("read", "read"),
}
DOUBLING = {"stop", "chat", "drag", "tug", "hop", "shop", "run", "begin", "shut"}

NOUN_GROUPS = [
    ["house", "home", "dwelling"], ["car", "auto", "vehicle"], ["road", "street", "path"],
    ["child", "kid"], ["man", "guy"], ["woman", "lady"], ["friend", "pal", "buddy"],
    ["town", "city"], ["river", "stream", "creek"], ["stone", "rock", "pebble"],
    ["boat", "ship", "vessel"], ["gift", "present"], ["job", "task", "chore"],
    ["shop", "store"], ["doctor", "physician"], ["teacher", "tutor"],
    ["book", "novel"], ["story", "tale"], ["hill", "mound"], ["bag", "sack"],
    ["cat"], ["dog"], ["bird"], ["table"], ["tree"], ["window"], ["garden"],
    ["letter"], ["apple"], ["door"], ["song"], ["box"], ["cup"], ["field"],
]
IRREGULAR_PLURAL = {"child": "children", "man": "men", "woman": "women"}

ADJ_GROUPS = [
    ["big", "large", "huge"], ["small", "little", "tiny"], ["fast", "quick", "rapid"],
    ["happy", "glad", "cheerful"], ["sad", "unhappy", "gloomy"], ["smart", "clever", "bright"],
    ["old", "ancient"], ["new", "fresh"], ["cold", "chilly", "cool"], ["hot", "warm"],
    ["quiet", "calm"], ["loud", "noisy"], ["pretty", "lovely", "beautiful"],
    ["slow"], ["red"], ["green"], ["tall"], ["dark"],
]
NO_DEGREE = {"rapid", "cheerful", "unhappy", "gloomy", "ancient", "beautiful", "red", "green"}
DOUBLE_DEGREE = {"big", "sad", "hot", "glad", "red"}

POSITIVE = {"happy", "glad", "cheerful", "pretty", "lovely", "beautiful", "smart", "clever", "bright",
            "warm", "calm", "new", "fresh"}
NEGATIVE = {"sad", "unhappy", "gloomy", "loud", "noisy", "cold", "chilly", "old", "ancient", "dark", "slow"}

VOWELS = set("aeiou")


def third_person(v):
    if v.endswith(("s", "x", "z", "ch", "sh")):
        return v + "es"
    if v.endswith("y") and v[-2] not in VOWELS:
        return v[:-1] + "ies"
    return v + "s"


def past(v):
    if v in IRREGULAR:
        return IRREGULAR[v][0]
    if v in DOUBLING:
        return v + v[-1] + "ed"
    if v.endswith("e"):
        return v + "d"
    if v.endswith("y") and v[-2] not in VOWELS:
        return v[:-1] + "ied"
    return v + "ed"


def participle(v):
    return IRREGULAR[v][1] if v in IRREGULAR else past(v)


def gerund(v):
    if v in DOUBLING:
        return v + v[-1] + "ing"
    if v.endswith("e") and not v.endswith("ee"):
        return v[:-1] + "ing"
    return v + "ing"


def plural(n):
    if n in IRREGULAR_PLURAL:
        return IRREGULAR_PLURAL[n]
    if n.endswith(("s", "x", "z", "ch", "sh")):
        return n + "es"
    if n.endswith("y") and n[-2] not in VOWELS:
        return n[:-1] + "ies"
    return n + "s"


def degrees(a):
    if a in NO_DEGREE:
        return []
    stem = a
    if a in DOUBLE_DEGREE:
        stem = a + a[-1]
    elif a.endswith("e"):
        stem = a[:-1]
    elif a.endswith("y") and a[-2] not in VOWELS:
        stem = a[:-1] + "i"
    return [stem + "er", stem + "est"]


def verb_forms(v):
    return {"base": v, "s": third_person(v), "past": past(v), "pp": participle(v), "ing": gerund(v)}


def build_lexicon():
    """word -> (lemma, set of synonyms); forms are matched slot by slot."""
    entries = {}

    def add_group(group, forms_of):
        forms = {w: forms_of(w) for w in group}
        for w in group:
            for slot, form in forms[w].items():
                syns = {forms[o][slot] for o in group if o != w and slot in forms[o]}
                syns.discard(form)
                lemma, old = entries.get(form, (w, set()))
                entries[form] = (lemma, old | syns)

    for g in VERB_GROUPS:
        add_group(g, verb_forms)
    for g in NOUN_GROUPS:
        add_group(g, lambda n: {"sg": n, "pl": plural(n)})
    for g in ADJ_GROUPS:
        add_group(g, lambda a: dict(zip(["base", "er", "est"], [a] + degrees(a))))
    return entries


PRONOUNS_SG = ["he", "she", "it"]
PRONOUNS_PL = ["we", "they", "you", "I"]
DETS = ["the", "a", "this", "that", "my", "your", "our", "every"]
PREPS = ["in", "near", "with", "behind", "under", "after", "before", "beside"]
ADVERBS = ["quickly", "slowly", "today", "yesterday", "again", "often", "never", "happily"]


class Grammar:
    def __init__(self, rng, banned=frozenset()):
        self.rng = rng
        self.verbs = [verb_forms(v) for g in VERB_GROUPS for v in g]
        self.nouns = [n for g in NOUN_GROUPS for n in g]
        self.adjs = [a for g in ADJ_GROUPS for a in g]
        self.banned = banned

    def adj(self):
        a = self.rng.choice(self.adjs)
        forms = [a] + degrees(a)
        return self.rng.choice(forms) if self.rng.random() < 0.3 else a

    def noun_phrase(self, plural_ok=True):
        r = self.rng
        if r.random() < 0.2:
            pl = r.random() < 0.5
            return r.choice(PRONOUNS_PL if pl else PRONOUNS_SG), pl
        pl = plural_ok and r.random() < 0.35
        n = r.choice(self.nouns)
        word = plural(n) if pl else n
        det = r.choice(["the", "my", "your", "our", "some", "these", "those"]) if pl else r.choice(DETS)
        if r.random() < 0.4:
            return f"{det} {self.adj()} {word}", pl
        return f"{det} {word}", pl

    def object_phrase(self):
        np, _ = self.noun_phrase()
        return {"he": "him", "she": "her", "we": "us", "they": "them", "I": "me"}.get(np, np)

    def sentence(self):
        r = self.rng
        subj, pl = self.noun_phrase()
        v = r.choice(self.verbs)
        kind = r.random()
        if kind < 0.35:
            verb = v["past"]
        elif kind < 0.6:
            verb = v["base"] if pl or subj in ("I", "you") else v["s"]
        elif kind < 0.8:
            aux = "were" if pl or subj == "you" else "was"
            verb = f"{aux} {v['ing']}"
        else:
            aux = "have" if pl or subj in ("I", "you") else "has"
            verb = f"{aux} {v['pp']}"
        parts = [subj, verb, self.object_phrase()]
        if r.random() < 0.5:
            np, _ = self.noun_phrase()
            parts.append(f"{r.choice(PREPS)} {np}")
        if r.random() < 0.3:
            parts.append(r.choice(ADVERBS))
        text = " ".join(parts)
        if r.random() < 0.15:
            first, rest = text.split(" ", 1)
            text = f"{first}, {rest}" if r.random() < 0.5 else text
        text = text[0].upper() + text[1:]
        return text + r.choice([".", ".", ".", "!", "?"])


def cipher(text):
    """Deterministic letter substitution used as the toy target language."""
    src = "abcdefghijklmnopqrstuvwxyz"
    dst = "qwertyuiopasdfghjklzxcvbnm"
    table = str.maketrans(src + src.upper(), dst + dst.upper())
    return text.translate(table)


def words_of(sentence):
    return {w.strip(".,!?").lower() for w in sentence.split()}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "data"))
    ap.add_argument("--seed", type=int, default=20240611)
    ap.add_argument("--sentences", type=int, default=10000)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(args.seed)

    lexicon = build_lexicon()
    with open(out / "lexicon.tsv", "w", encoding="utf-8") as f:
        f.write("# word\tlemma\tsynonyms\n")
        for word in sorted(lexicon):
            lemma, syns = lexicon[word]
            f.write(f"{word}\t{lemma}\t{','.join(sorted(syns))}\n")

    g = Grammar(rng)
    sentences = [g.sentence() for _ in range(args.sentences)]
    (out / "en_sample.txt").write_text("\n".join(sentences) + "\n", encoding="utf-8")

    # Held-out words: every form of a fixed sample of lemmas.
    lemmas = sorted({lemma for lemma, _ in lexicon.values()})
    held_lemmas = set(random.Random(args.seed + 1).sample(lemmas, len(lemmas) // 5))
    held = sorted(w for w, (lemma, _) in lexicon.items() if lemma in held_lemmas)
    held_set = set(held)
    (out / "probe_holdout.txt").write_text("\n".join(held) + "\n", encoding="utf-8")
    probe_train = [s for s in sentences if not (words_of(s) & held_set)]
    (out / "en_probe_train.txt").write_text("\n".join(probe_train) + "\n", encoding="utf-8")

    short = Grammar(random.Random(args.seed + 2))
    pairs = []
    while len(pairs) < 2100:
        s = short.sentence()
        if len(s.split()) <= 7:
            pairs.append((s, cipher(s)))
    for name, chunk in (("train", pairs[:2000]), ("valid", pairs[2000:])):
        (out / f"toy_{name}.src").write_text("\n".join(p[0] for p in chunk) + "\n", encoding="utf-8")
        (out / f"toy_{name}.tgt").write_text("\n".join(p[1] for p in chunk) + "\n", encoding="utf-8")

    srng = random.Random(args.seed + 3)
    labeled = []
    nouns = [n for grp in NOUN_GROUPS for n in grp]
    while len(labeled) < 660:
        label = srng.choice(["pos", "neg"])
        adj = srng.choice(sorted(POSITIVE if label == "pos" else NEGATIVE))
        noun = srng.choice(nouns)
        template = srng.choice(["the {n} was {a}", "what a {a} {n}", "my {n} is so {a} today",
                                "they said the {n} looked {a}", "a {a} {n} again"])
        labeled.append(f"{label}\t{template.format(n=noun, a=adj)}")
    (out / "sentiment_train.tsv").write_text("\n".join(labeled[:600]) + "\n", encoding="utf-8")
    (out / "sentiment_valid.tsv").write_text("\n".join(labeled[600:]) + "\n", encoding="utf-8")

    (out / "smoke.cfg").write_text(
        "# Smoke pipeline: a tiny SDD model on the toy cipher pairs.\n"
        "seed = 1\n"
        "variant = sdd\n"
        "model.preset = tiny\n"
        "downsampler.d_char = 16\n"
        "upsampler.d_slice = 16\n"
        "upsampler.d_char_embed = 16\n"
        "upsampler.lstm_hidden = 32\n"
        "upsampler.lmax_bytes = 8\n"
        "data.train_src = toy_train.src\n"
        "data.train_tgt = toy_train.tgt\n"
        "data.valid_src = toy_valid.src\n"
        "data.valid_tgt = toy_valid.tgt\n"
        "vocab.size = 400\n"
        "vocab.lmax = 6\n"
        "train.batch_size = 16\n"
        "train.grad_accum = 2\n"
        "train.lr = 0.002\n"
        "train.warmup_steps = 20\n"
        "train.max_steps = 100\n"
        "train.eval_every = 50\n"
        "train.log_every = 10\n"
        "train.valid_limit = 20\n"
        "train.max_blocks = 64\n"
        "output.dir = ../runs/smoke\n",
        encoding="utf-8")

    print(f"lexicon {len(lexicon)} entries, {len(sentences)} sentences, "
          f"{len(held)} held-out words, {len(probe_train)} probe training sentences")


if __name__ == "__main__":
    main()
