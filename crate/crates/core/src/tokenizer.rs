//! Word-level vocabulary with a character fallback.
//!
//! Id layout is fixed: the specials `<pad> <s> </s> <mask> [S]` and the
//! sentinels `<extra_id_0>` .. `<extra_id_99>` occupy ids `0..105`. Then come
//! the fallback characters (printable ASCII, each in a word-initial form `c`
//! and a continuation form `##c`), then corpus words by descending frequency.
//!
//! Text is split on whitespace, then into runs of alphanumeric characters and
//! single punctuation marks. Literal special markers are recognised anywhere.
//! A word missing from the vocabulary is spelled out as `c ##c ##c ...`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

pub type TokenId = u32;

pub const PAD_ID: TokenId = 0;
pub const BOS_ID: TokenId = 1;
pub const EOS_ID: TokenId = 2;
pub const MASK_ID: TokenId = 3;
pub const SEP_ID: TokenId = 4;
pub const SENTINEL_BASE: TokenId = 5;
pub const NUM_SENTINELS: usize = 100;
pub const NUM_SPECIALS: usize = SENTINEL_BASE as usize + NUM_SENTINELS;

pub const PAD_MARKER: &str = "<pad>";
pub const BOS_MARKER: &str = "<s>";
pub const EOS_MARKER: &str = "</s>";
pub const MASK_MARKER: &str = "<mask>";
pub const SEP_MARKER: &str = "[S]";

const CONTINUATION: &str = "##";

/// Characters that can always be encoded, in id order.
pub fn fallback_alphabet() -> impl Iterator<Item = char> {
    '!'..='~'
}

/// Number of ids taken by the fallback alphabet (both forms of each character).
pub fn fallback_len() -> usize {
    2 * fallback_alphabet().count()
}

pub fn sentinel_id(k: usize) -> Option<TokenId> {
    (k < NUM_SENTINELS).then(|| SENTINEL_BASE + k as TokenId)
}

pub fn sentinel_marker(k: usize) -> String {
    format!("<extra_id_{k}>")
}

pub fn is_special(id: TokenId) -> bool {
    (id as usize) < NUM_SPECIALS
}

pub fn is_sentinel(id: TokenId) -> bool {
    (SENTINEL_BASE..SENTINEL_BASE + NUM_SENTINELS as TokenId).contains(&id)
}

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("vocabulary configuration: {0}")]
    Config(String),
    #[error("character {ch:?} is outside the fallback alphabet")]
    UnknownCharacter { ch: char },
    #[error("token id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: TokenId, size: usize },
    #[error("malformed vocabulary file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Piece<'t> {
    Special(TokenId),
    Word(&'t str),
    Punct(char),
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn special_prefix(s: &str) -> Option<(TokenId, usize)> {
    for (marker, id) in [
        (MASK_MARKER, MASK_ID),
        (SEP_MARKER, SEP_ID),
        (PAD_MARKER, PAD_ID),
        (BOS_MARKER, BOS_ID),
        (EOS_MARKER, EOS_ID),
    ] {
        if s.starts_with(marker) {
            return Some((id, marker.len()));
        }
    }
    let rest = s.strip_prefix("<extra_id_")?;
    let digits = rest.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 || digits > 2 || !rest[digits..].starts_with('>') {
        return None;
    }
    let k: usize = rest[..digits].parse().ok()?;
    let id = sentinel_id(k)?;
    Some((id, "<extra_id_".len() + digits + 1))
}

fn pretokenize(text: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut rest = chunk;
        while let Some(c) = rest.chars().next() {
            if c == '<' || c == '[' {
                if let Some((id, len)) = special_prefix(rest) {
                    out.push(Piece::Special(id));
                    rest = &rest[len..];
                    continue;
                }
            }
            if is_word_char(c) {
                let end = rest.find(|ch: char| !is_word_char(ch)).unwrap_or(rest.len());
                out.push(Piece::Word(&rest[..end]));
                rest = &rest[end..];
            } else {
                out.push(Piece::Punct(c));
                rest = &rest[c.len_utf8()..];
            }
        }
    }
    out
}

/// Immutable token ↔ id table.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    /// Specials, then the fallback alphabet, then the most frequent words of
    /// `corpus` (ties broken lexicographically) until `max_size` ids exist.
    pub fn build<S: AsRef<str>>(corpus: &[S], max_size: usize) -> Result<Self, TokenizerError> {
        if corpus.is_empty() {
            return Err(TokenizerError::Config("corpus is empty".into()));
        }
        let base = NUM_SPECIALS + fallback_len();
        if max_size <= base {
            return Err(TokenizerError::Config(format!(
                "max_size {max_size} leaves no room for words (specials and alphabet take {base})"
            )));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for text in corpus {
            for piece in pretokenize(text.as_ref()) {
                if let Piece::Word(w) = piece {
                    if w.chars().count() >= 2 {
                        *counts.entry(w).or_default() += 1;
                    }
                }
            }
        }
        let mut words: Vec<(&str, usize)> = counts.into_iter().collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut tokens = base_tokens();
        tokens.extend(words.into_iter().take(max_size - base).map(|(w, _)| w.to_string()));
        Self::from_tokens(tokens)
    }

    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, TokenizerError> {
        let base = base_tokens();
        if tokens.len() < base.len() || tokens[..base.len()] != base[..] {
            return Err(TokenizerError::Format(
                "token list does not start with the reserved specials and alphabet".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(TokenizerError::Format(format!("invalid token {t:?} at id {i}")));
            }
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(TokenizerError::Format(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>, TokenizerError> {
        let mut ids = Vec::new();
        for piece in pretokenize(text) {
            match piece {
                Piece::Special(id) => ids.push(id),
                Piece::Punct(c) => ids.push(self.char_id(c, false)?),
                Piece::Word(w) => match self.word_id(w) {
                    Some(id) => ids.push(id),
                    None => {
                        for (i, c) in w.chars().enumerate() {
                            ids.push(self.char_id(c, i > 0)?);
                        }
                    }
                },
            }
        }
        Ok(ids)
    }

    fn word_id(&self, w: &str) -> Option<TokenId> {
        // single characters always resolve through the alphabet
        if w.chars().count() < 2 {
            return None;
        }
        self.id(w)
    }

    fn char_id(&self, c: char, continuation: bool) -> Result<TokenId, TokenizerError> {
        let key = if continuation {
            format!("{CONTINUATION}{c}")
        } else {
            c.to_string()
        };
        match self.index.get(&key) {
            Some(&id) if (id as usize) < NUM_SPECIALS + fallback_len() => Ok(id),
            _ => Err(TokenizerError::UnknownCharacter { ch: c }),
        }
    }

    /// Joins tokens with single spaces, attaching closing punctuation and
    /// continuation characters to the left. `<pad>` and `<s>` are dropped and
    /// `</s>` ends the text.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String, TokenizerError> {
        let mut out = String::new();
        let mut glue_next = false;
        for &id in ids {
            let tok = self.token(id).ok_or(TokenizerError::IdOutOfRange {
                id,
                size: self.len(),
            })?;
            match id {
                PAD_ID | BOS_ID => continue,
                EOS_ID => break,
                _ => {}
            }
            let (text, glue_left) = match tok.strip_prefix(CONTINUATION) {
                Some(c) if !c.is_empty() && !is_special(id) => (c, true),
                _ => (tok, matches!(tok, "." | "," | ":" | ";" | "?" | "!" | ")" | "]" | "}")),
            };
            if !out.is_empty() && !glue_left && !glue_next {
                out.push(' ');
            }
            out.push_str(text);
            glue_next = matches!(tok, "(" | "[" | "{");
        }
        Ok(out)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), TokenizerError> {
        for t in &self.tokens {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self, TokenizerError> {
        let tokens = r.lines().collect::<Result<Vec<_>, _>>()?;
        Self::from_tokens(tokens)
    }

    /// One token per line; the line number is the id.
    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn base_tokens() -> Vec<String> {
    let mut tokens = vec![
        PAD_MARKER.to_string(),
        BOS_MARKER.to_string(),
        EOS_MARKER.to_string(),
        MASK_MARKER.to_string(),
        SEP_MARKER.to_string(),
    ];
    tokens.extend((0..NUM_SENTINELS).map(sentinel_marker));
    for c in fallback_alphabet() {
        tokens.push(c.to_string());
        tokens.push(format!("{CONTINUATION}{c}"));
    }
    tokens
}
