use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;
pub type TokenSequence = Vec<TokenId>;

pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";
pub const EOS_ID: TokenId = 0;
pub const UNK_ID: TokenId = 1;

/// Collapse runs of whitespace to single spaces and trim the ends.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Word-level vocabulary. Ids are dense, `<eos>` is 0 and `<unk>` is 1, the
/// remaining ids are assigned by descending corpus frequency (ties broken by
/// the surface string).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabFile", into = "VocabFile")]
pub struct Vocabulary {
    tokens: Vec<String>,
    frequency: Vec<u64>,
    id_of: HashMap<String, TokenId>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
    frequency: Vec<u64>,
}

impl From<VocabFile> for Vocabulary {
    fn from(f: VocabFile) -> Self {
        Vocabulary::from_parts(f.tokens, f.frequency)
    }
}

impl From<Vocabulary> for VocabFile {
    fn from(v: Vocabulary) -> Self {
        VocabFile {
            tokens: v.tokens,
            frequency: v.frequency,
        }
    }
}

impl Vocabulary {
    pub fn from_parts(tokens: Vec<String>, frequency: Vec<u64>) -> Self {
        let id_of = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        Self {
            tokens,
            frequency,
            id_of,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn eos_id(&self) -> TokenId {
        EOS_ID
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn frequency(&self) -> &[u64] {
        &self.frequency
    }

    pub fn id(&self, word: &str) -> Option<TokenId> {
        self.id_of.get(word).copied()
    }

    pub fn surface(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokenize(&self, text: &str) -> TokenSequence {
        text.split_whitespace()
            .map(|w| self.id(w).unwrap_or(UNK_ID))
            .collect()
    }

    /// Join surface forms with single spaces; `<eos>` is dropped.
    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .filter(|&&i| i != EOS_ID)
            .map(|&i| self.surface(i))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let v: Vocabulary = serde_json::from_slice(&std::fs::read(path)?)?;
        if v.tokens.get(EOS_ID as usize).map(String::as_str) != Some(EOS)
            || v.tokens.get(UNK_ID as usize).map(String::as_str) != Some(UNK)
            || v.tokens.len() != v.frequency.len()
        {
            return Err(Error::format(path, "not a vocabulary file"));
        }
        Ok(v)
    }
}

/// Count whitespace tokens over `corpus` and keep the `max_size - 2` most
/// frequent words after `<eos>` and `<unk>`.
pub fn build_vocabulary<S: AsRef<str>>(corpus: &[S], max_size: usize) -> Result<Vocabulary> {
    if corpus.is_empty() || corpus.iter().all(|l| l.as_ref().trim().is_empty()) {
        return Err(Error::EmptyCorpus);
    }
    if max_size < 3 {
        return Err(Error::InvalidArgument(format!(
            "max_size must be at least 3, got {max_size}"
        )));
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for line in corpus {
        for w in line.as_ref().split_whitespace() {
            *counts.entry(w).or_default() += 1;
        }
    }
    counts.remove(EOS);
    counts.remove(UNK);
    let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let keep = max_size - 2;
    let dropped: u64 = ranked.iter().skip(keep).map(|(_, c)| c).sum();
    ranked.truncate(keep);

    let mut tokens = vec![EOS.to_string(), UNK.to_string()];
    let mut frequency = vec![corpus.len() as u64, dropped];
    for (w, c) in ranked {
        tokens.push(w.to_string());
        frequency.push(c);
    }
    Ok(Vocabulary::from_parts(tokens, frequency))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_corpus() {
        let v = build_vocabulary(&["a b", "a c"], 5).unwrap();
        assert_eq!(v.tokens(), &[EOS, UNK, "a", "b", "c"]);
        assert_eq!(v.frequency()[v.id("a").unwrap() as usize], 2);
    }

    #[test]
    fn single_word_corpus() {
        let v = build_vocabulary(&["x"], 8).unwrap();
        assert_eq!(v.len(), 3);
    }

    #[test]
    fn errors() {
        let empty: [&str; 0] = [];
        assert!(matches!(
            build_vocabulary(&empty, 10),
            Err(Error::EmptyCorpus)
        ));
        assert!(build_vocabulary(&["a"], 2).is_err());
    }

    #[test]
    fn unknown_words_map_to_unk_and_eos_is_not_rendered() {
        let v = build_vocabulary(&["red circle"], 8).unwrap();
        let ids = v.tokenize("red  triangle\tcircle");
        assert_eq!(ids[1], UNK_ID);
        let mut with_eos = v.tokenize("red circle");
        with_eos.push(EOS_ID);
        assert_eq!(v.detokenize(&with_eos), "red circle");
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let v = build_vocabulary(&["the red circle", "a blue square"], 16).unwrap();
        v.save(&dir.path().join("v.json")).unwrap();
        assert_eq!(Vocabulary::load(&dir.path().join("v.json")).unwrap(), v);
    }

    proptest! {
        #[test]
        fn detokenize_inverts_tokenize_on_known_text(words in proptest::collection::vec("[a-e]{1,3}", 1..12), pad in "[ \t]{1,3}") {
            let text = words.join(&pad);
            let v = build_vocabulary(std::slice::from_ref(&text), 64).unwrap();
            prop_assert_eq!(v.detokenize(&v.tokenize(&text)), normalize_whitespace(&text));
        }

        #[test]
        fn ids_are_stable(lines in proptest::collection::vec("[a-f ]{0,20}", 1..8)) {
            prop_assume!(lines.iter().any(|l| !l.trim().is_empty()));
            let a = build_vocabulary(&lines, 10).unwrap();
            let b = build_vocabulary(&lines, 10).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
