"""Spanish Snowball stemmer.

Implements the published Snowball algorithm for Spanish: regions RV/R1/R2,
attached pronouns (step 0), standard suffixes (1), verb suffixes (2a/2b),
residual suffixes (3) and final acute-accent removal.
"""

VOWELS = frozenset("aeiouáéíóúü")

_PRONOUNS = ("selas", "selos", "sela", "selo", "las", "les", "los", "nos",
             "me", "se", "la", "le", "lo")
_PRONOUN_HOSTS = {
    "iéndo": "iendo", "ándo": "ando", "ár": "ar", "ér": "er", "ír": "ir",
    "ando": "ando", "iendo": "iendo", "ar": "ar", "er": "er", "ir": "ir",
}

_STEP1 = {
    # suffix -> action tag
    **dict.fromkeys(("anza", "anzas", "ico", "ica", "icos", "icas", "ismo", "ismos",
                     "able", "ables", "ible", "ibles", "ista", "istas", "oso", "osa",
                     "osos", "osas", "amiento", "amientos", "imiento", "imientos"), "del"),
    **dict.fromkeys(("adora", "ador", "ación", "adoras", "adores", "aciones", "ante",
                     "antes", "ancia", "ancias"), "del_ic"),
    **dict.fromkeys(("logía", "logías"), "log"),
    **dict.fromkeys(("ución", "uciones"), "u"),
    **dict.fromkeys(("encia", "encias"), "ente"),
    "amente": "amente",
    "mente": "mente",
    **dict.fromkeys(("idad", "idades"), "idad"),
    **dict.fromkeys(("iva", "ivo", "ivas", "ivos"), "iv"),
}

_STEP2A = ("ya", "ye", "yan", "yen", "yeron", "yendo", "yo", "yó", "yas", "yes",
           "yais", "yamos")

_STEP2B_GU = ("en", "es", "éis", "emos")
_STEP2B = (
    "arían", "arías", "arán", "arás", "aríais", "aría", "aréis", "aríamos", "aremos",
    "ará", "aré", "erían", "erías", "erán", "erás", "eríais", "ería", "eréis",
    "eríamos", "eremos", "erá", "eré", "irían", "irías", "irán", "irás", "iríais",
    "iría", "iréis", "iríamos", "iremos", "irá", "iré", "aba", "ada", "ida", "ía",
    "ara", "iera", "ad", "ed", "id", "ase", "iese", "aste", "iste", "an", "aban",
    "ían", "aran", "ieran", "asen", "iesen", "aron", "ieron", "ado", "ido", "ando",
    "iendo", "ió", "ar", "er", "ir", "as", "abas", "adas", "idas", "ías", "aras",
    "ieras", "ases", "ieses", "ís", "áis", "abais", "íais", "arais", "ierais",
    "aseis", "ieseis", "asteis", "isteis", "ados", "idos", "amos", "ábamos",
    "íamos", "imos", "áramos", "iéramos", "iésemos", "ásemos",
)

_STEP3_PLAIN = ("os", "a", "o", "á", "í", "ó")
_STEP3_E = ("e", "é")

_UNACCENT = str.maketrans("áéíóú", "aeiou")


def _by_length(suffixes):
    return tuple(sorted(set(suffixes), key=len, reverse=True))


_PRONOUNS = _by_length(_PRONOUNS)
_HOSTS = _by_length(list(_PRONOUN_HOSTS) + ["yendo"])
_STEP1_ORDER = _by_length(_STEP1)
_STEP2A = _by_length(_STEP2A)
_STEP2B_ALL = _by_length(_STEP2B + _STEP2B_GU)
_STEP3_ALL = _by_length(_STEP3_PLAIN + _STEP3_E)


def _longest(word, suffixes, start=0):
    """Longest suffix of ``word[start:]`` from ``suffixes`` (pre-sorted by length)."""
    for s in suffixes:
        if word.endswith(s) and len(word) - len(s) >= start:
            return s
    return None


def _after_nonvowel_following_vowel(word, start):
    for i in range(max(start, 1), len(word)):
        if word[i] not in VOWELS and word[i - 1] in VOWELS:
            return i + 1
    return len(word)


def regions(word):
    """Start indices ``(rv, r1, r2)`` of the three stemming regions."""
    n = len(word)
    rv = n
    if n >= 2:
        if word[1] not in VOWELS:
            for i in range(2, n):
                if word[i] in VOWELS:
                    rv = i + 1
                    break
        elif word[0] in VOWELS:
            for i in range(2, n):
                if word[i] not in VOWELS:
                    rv = i + 1
                    break
        else:
            rv = 3 if n >= 3 else n
    rv = min(rv, n)
    r1 = _after_nonvowel_following_vowel(word, 1)
    r2 = _after_nonvowel_following_vowel(word, r1 + 1) if r1 < n else n
    return rv, r1, r2


def _step0(word, rv):
    pron = _longest(word, _PRONOUNS)
    if pron is None:
        return word
    base = word[: -len(pron)]
    host = _longest(base, _HOSTS)
    if host is None or len(base) - len(host) < rv:
        return word
    if host == "yendo":
        return base if base[:-5].endswith("u") else word
    return base[: -len(host)] + _PRONOUN_HOSTS[host]


def _step1(word, r1, r2):
    """Returns the new word, or None when no suffix was removed."""
    suffix = _longest(word, _STEP1_ORDER)
    if suffix is None:
        return None
    action = _STEP1[suffix]
    cut = len(word) - len(suffix)

    def in_r2(pos):
        return pos >= r2

    if action == "amente":
        if cut < r1:
            return None
        w = word[:cut]
        if w.endswith("iv") and in_r2(len(w) - 2):
            w = w[:-2]
            if w.endswith("at") and in_r2(len(w) - 2):
                w = w[:-2]
        else:
            for pre in ("os", "ic", "ad"):
                if w.endswith(pre):
                    if in_r2(len(w) - 2):
                        w = w[:-2]
                    break
        return w

    if not in_r2(cut):
        return None
    w = word[:cut]
    if action == "del":
        return w
    if action == "del_ic":
        if w.endswith("ic") and in_r2(len(w) - 2):
            w = w[:-2]
        return w
    if action == "log":
        return w + "log"
    if action == "u":
        return w + "u"
    if action == "ente":
        return w + "ente"
    if action == "mente":
        for pre in ("ante", "able", "ible"):
            if w.endswith(pre):
                if in_r2(len(w) - 4):
                    w = w[:-4]
                break
        return w
    if action == "idad":
        for pre in ("abil", "ic", "iv"):
            if w.endswith(pre):
                if in_r2(len(w) - len(pre)):
                    w = w[: -len(pre)]
                break
        return w
    if action == "iv":
        if w.endswith("at") and in_r2(len(w) - 2):
            w = w[:-2]
        return w
    raise AssertionError(action)


def _step2a(word, rv):
    suffix = _longest(word, _STEP2A, rv)
    if suffix is not None and word[: -len(suffix)].endswith("u"):
        return word[: -len(suffix)]
    return None


def _step2b(word, rv):
    suffix = _longest(word, _STEP2B_ALL, rv)
    if suffix is None:
        return word
    w = word[: -len(suffix)]
    if suffix in _STEP2B_GU and w.endswith("gu"):
        w = w[:-1]
    return w


def _step3(word, rv):
    suffix = _longest(word, _STEP3_ALL)
    if suffix is None or len(word) - len(suffix) < rv:
        return word
    w = word[: -len(suffix)]
    if suffix in _STEP3_E and w.endswith("gu") and len(w) - 1 >= rv:
        w = w[:-1]
    return w


def stem(word: str) -> str:
    """Stem one lowercase Spanish word."""
    if not word:
        return word
    rv, r1, r2 = regions(word)
    word = _step0(word, rv)
    # the regions are prefixes of the word, so they survive suffix edits unchanged
    stemmed = _step1(word, r1, r2)
    if stemmed is None:
        stemmed = _step2a(word, rv)
        if stemmed is None:
            stemmed = _step2b(word, rv)
    word = _step3(stemmed, rv)
    return word.translate(_UNACCENT)
