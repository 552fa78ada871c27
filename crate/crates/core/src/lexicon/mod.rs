//! Unit inventories, the phoneme-to-viseme mapping, pronunciation
//! dictionaries and homophone analysis.

mod lm;

pub use lm::{read_arpa, train_bigram_lm, write_arpa, BigramLm};

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

pub const SILENCE: &str = "sil";
pub const SHORT_PAUSE: &str = "sp";
pub const SILENCE_VISEME: &str = "S";

const NETI_P2V: &str = include_str!("../../data/neti_p2v.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitKind {
    Phoneme,
    Viseme,
}

impl std::fmt::Display for UnitKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            UnitKind::Phoneme => write!(f, "phoneme"),
            UnitKind::Viseme => write!(f, "viseme"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitSet {
    pub units: Vec<String>,
    pub kind: UnitKind,
    pub silence: BTreeSet<String>,
}

impl UnitSet {
    pub fn new(units: Vec<String>, kind: UnitKind, silence: Vec<String>) -> Result<Self> {
        let set: BTreeSet<&String> = units.iter().collect();
        if set.len() != units.len() {
            return Err(Error::invalid("duplicate unit symbols"));
        }
        for s in &silence {
            if !units.contains(s) {
                return Err(Error::invalid(format!("silence unit {s} not in unit set")));
            }
        }
        Ok(UnitSet { units, kind, silence: silence.into_iter().collect() })
    }

    pub fn contains(&self, u: &str) -> bool {
        self.units.iter().any(|x| x == u)
    }

    /// Non-silence units.
    pub fn speech_units(&self) -> Vec<&str> {
        self.units
            .iter()
            .filter(|u| !self.silence.contains(*u))
            .map(|s| s.as_str())
            .collect()
    }
}

/// Total phoneme -> viseme map.
#[derive(Debug, Clone, PartialEq)]
pub struct P2VMap {
    pub map: BTreeMap<String, String>,
}

impl P2VMap {
    /// Parses `<viseme> <phoneme> <phoneme> ...` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            let viseme = it.next().unwrap().to_string();
            for ph in it {
                if map.insert(ph.to_string(), viseme.clone()).is_some() {
                    return Err(Error::Parse(format!("phoneme {ph} mapped twice")));
                }
            }
        }
        if map.is_empty() {
            return Err(Error::Parse("empty phoneme-to-viseme map".into()));
        }
        Ok(P2VMap { map })
    }

    pub fn viseme_of(&self, phoneme: &str) -> Result<&str> {
        self.map
            .get(phoneme)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::UnknownUnit(phoneme.to_string()))
    }

    pub fn visemes(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.map.values().collect();
        set.into_iter().cloned().collect()
    }
}

/// The Neti mapping shipped with the toolkit: 13 visemes (8 consonant,
/// 4 vowel, 1 silence).
pub fn neti_p2v_map() -> P2VMap {
    P2VMap::parse(NETI_P2V).expect("built-in map parses")
}

pub fn builtin_phoneme_set() -> UnitSet {
    let map = neti_p2v_map();
    let units: Vec<String> = map.map.keys().cloned().collect();
    UnitSet::new(units, UnitKind::Phoneme, vec![SILENCE.into(), SHORT_PAUSE.into()])
        .expect("built-in phoneme set is valid")
}

pub fn builtin_viseme_set() -> UnitSet {
    let map = neti_p2v_map();
    UnitSet::new(map.visemes(), UnitKind::Viseme, vec![SILENCE_VISEME.into()])
        .expect("built-in viseme set is valid")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    pub kind: UnitKind,
    entries: BTreeMap<String, Vec<Vec<String>>>,
}

#[derive(Debug, Clone)]
pub struct DictLoad {
    pub lexicon: Lexicon,
    /// Number of exact (word, pronunciation) duplicates collapsed.
    pub duplicates: usize,
}

impl Lexicon {
    pub fn new(kind: UnitKind) -> Self {
        Lexicon { kind, entries: BTreeMap::new() }
    }

    /// Adds a pronunciation; returns false if the (word, pronunciation)
    /// pair was already present.
    pub fn add(&mut self, word: &str, pron: Vec<String>) -> bool {
        let prons = self.entries.entry(word.to_string()).or_default();
        if prons.contains(&pron) {
            false
        } else {
            prons.push(pron);
            true
        }
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn word_count(&self) -> usize {
        self.entries.len()
    }

    pub fn pronunciations(&self, word: &str) -> Option<&[Vec<String>]> {
        self.entries.get(word).map(|v| v.as_slice())
    }

    pub fn entries(&self) -> &BTreeMap<String, Vec<Vec<String>>> {
        &self.entries
    }

    /// All units appearing in any pronunciation.
    pub fn unit_inventory(&self) -> BTreeSet<String> {
        let mut set = BTreeSet::new();
        for prons in self.entries.values() {
            for p in prons {
                for u in p {
                    set.insert(u.clone());
                }
            }
        }
        set
    }

    pub fn distinct_pronunciations(&self) -> usize {
        let mut set = BTreeSet::new();
        for prons in self.entries.values() {
            for p in prons {
                set.insert(p.clone());
            }
        }
        set.len()
    }
}

/// Parses `<WORD> <unit> <unit> ...` lines; `#` starts a comment.
pub fn load_dictionary(text: &str, units: &UnitSet) -> Result<DictLoad> {
    let mut lexicon = Lexicon::new(units.kind);
    let mut duplicates = 0;
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let word = it.next().unwrap().to_string();
        let pron: Vec<String> = it.map(|s| s.to_string()).collect();
        if pron.is_empty() {
            return Err(Error::Parse(format!(
                "line {}: word {word} has empty pronunciation",
                ln + 1
            )));
        }
        for u in &pron {
            if !units.contains(u) {
                return Err(Error::UnknownUnit(u.clone()));
            }
        }
        if !lexicon.add(&word, pron) {
            duplicates += 1;
        }
    }
    Ok(DictLoad { lexicon, duplicates })
}

/// Element-wise phoneme-to-viseme mapping; length preserving.
pub fn map_pronunciation(pron: &[String], m: &P2VMap) -> Result<Vec<String>> {
    pron.iter().map(|p| m.viseme_of(p).map(|v| v.to_string())).collect()
}

/// Maps every pronunciation of a phoneme lexicon into viseme units,
/// collapsing (word, pronunciation) duplicates that mapping creates.
pub fn derive_viseme_lexicon(lexicon: &Lexicon, m: &P2VMap) -> Result<Lexicon> {
    if lexicon.kind != UnitKind::Phoneme {
        return Err(Error::invalid("wrong unit kind: expected a phoneme lexicon"));
    }
    let mut out = Lexicon::new(UnitKind::Viseme);
    for (word, prons) in &lexicon.entries {
        for pron in prons {
            out.add(word, map_pronunciation(pron, m)?);
        }
    }
    Ok(out)
}

/// Bins (word, pronunciation) items by how many items share the same
/// pronunciation string. A group of size k contributes k to bin k.
pub fn homophone_histogram(lexicon: &Lexicon) -> BTreeMap<usize, usize> {
    let mut groups: BTreeMap<&[String], usize> = BTreeMap::new();
    for prons in lexicon.entries.values() {
        for p in prons {
            *groups.entry(p.as_slice()).or_default() += 1;
        }
    }
    let mut hist = BTreeMap::new();
    for (_, size) in groups {
        *hist.entry(size).or_default() += size;
    }
    hist
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabStats {
    pub word_count: usize,
    pub distinct_pronunciations: usize,
}

/// Word-count and distinct-pronunciation stats for a phoneme lexicon and
/// its viseme counterpart over the same word list.
pub fn vocabulary_stats(phoneme: &Lexicon, viseme: &Lexicon) -> Result<(VocabStats, VocabStats)> {
    let pw: Vec<&str> = phoneme.words().collect();
    let vw: Vec<&str> = viseme.words().collect();
    if pw != vw {
        return Err(Error::invalid("word lists differ between lexicons"));
    }
    Ok((
        VocabStats {
            word_count: phoneme.word_count(),
            distinct_pronunciations: phoneme.distinct_pronunciations(),
        },
        VocabStats {
            word_count: viseme.word_count(),
            distinct_pronunciations: viseme.distinct_pronunciations(),
        },
    ))
}

#[cfg(test)]
pub(crate) fn table2_lexicon() -> Lexicon {
    let mut lex = Lexicon::new(UnitKind::Phoneme);
    for (w, p) in [
        ("TALK", "t ao k"),
        ("TONGUE", "t ah ng"),
        ("DOG", "d ao g"),
        ("DUG", "d ah g"),
        ("CARE", "k eh r"),
        ("WELL", "w eh l"),
        ("WHERE", "w eh r"),
        ("WEAR", "w eh r"),
        ("WHILE", "w ay l"),
    ] {
        lex.add(w, p.split_whitespace().map(|s| s.to_string()).collect());
    }
    lex
}
