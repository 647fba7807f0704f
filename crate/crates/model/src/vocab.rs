//! Word-level vocabulary with reserved special tokens.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{ModelError, Result};

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const SPT: &str = "[SPT]";
pub const IMG: &str = "<img>";
pub const UNK: &str = "<unk>";
pub const SPECIALS: [&str; 6] = [PAD, BOS, EOS, SPT, IMG, UNK];

/// Lower-cases and splits on whitespace, detaching `, . ? ! :` into tokens.
/// Special tokens pass through unchanged.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut cur = String::new();
        let mut rest = word;
        while let Some(ch) = rest.chars().next() {
            if let Some(sp) = SPECIALS.iter().find(|s| rest.starts_with(**s)) {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(sp.to_string());
                rest = &rest[sp.len()..];
                continue;
            }
            if matches!(ch, ',' | '.' | '?' | '!' | ':' | ';') {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(ch.to_string());
            } else {
                cur.extend(ch.to_lowercase());
            }
            rest = &rest[ch.len_utf8()..];
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Specials first, then the given words in first-seen order.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, u32> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        for text in texts {
            for t in tokenize(text) {
                if !index.contains_key(&t) {
                    index.insert(t.clone(), tokens.len() as u32);
                    tokens.push(t);
                }
            }
        }
        Vocabulary { tokens, index }
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS.map(String::from) {
            return Err(ModelError::Checkpoint("vocabulary must start with the special tokens".into()));
        }
        let mut index = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(ModelError::Checkpoint(format!("duplicate token {t}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    fn special(&self, s: &str) -> u32 {
        self.index[s]
    }

    pub fn pad(&self) -> u32 {
        self.special(PAD)
    }
    pub fn bos(&self) -> u32 {
        self.special(BOS)
    }
    pub fn eos(&self) -> u32 {
        self.special(EOS)
    }
    pub fn spt(&self) -> u32 {
        self.special(SPT)
    }
    pub fn unk(&self) -> u32 {
        self.special(UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map(String::as_str).unwrap_or(UNK)
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        tokenize(text).iter().map(|t| self.id(t).unwrap_or(self.unk())).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter().map(|&i| self.token(i)).collect::<Vec<_>>().join(" ")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.tokens.join("\n") + "\n").map_err(|e| ModelError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ModelError::io(path, e))?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizes_punctuation_and_specials() {
        assert_eq!(tokenize("Sure, the [SPT] Red Knife [SPT]."), ["sure", ",", "the", "[SPT]", "red", "knife", "[SPT]", "."]);
    }

    #[test]
    fn roundtrip_and_reserved_ids() {
        let v = Vocabulary::build(["pick up the red knife ."]);
        assert_eq!(v.spt(), 3);
        let ids = v.encode("the red knife");
        assert_eq!(v.encode(&v.decode(&ids)), ids);
        assert_eq!(v.encode("purple"), vec![v.unk()]);
        let dir = tempfile::tempdir().unwrap();
        v.save(&dir.path().join("vocab.txt")).unwrap();
        assert_eq!(Vocabulary::load(&dir.path().join("vocab.txt")).unwrap(), v);
    }
}
