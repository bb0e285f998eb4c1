use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MENTION_PLACEHOLDER: &str = "MENTIONPLACEHOLDER";
pub const URL_PLACEHOLDER: &str = "URLPLACEHOLDER";

const DEFAULT_STOPWORDS: &str = include_str!("../../data/stopwords_en.txt");

/// Lowercased stopword set. Entries are compared against tokens after
/// punctuation stripping, so entries that still contain punctuation never
/// match anything.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Stopwords(HashSet<String>);

impl Stopwords {
    pub fn from_lines(text: &str) -> Self {
        Stopwords(
            text.lines()
                .map(|l| l.trim().to_lowercase())
                .filter(|l| !l.is_empty())
                .collect(),
        )
    }

    pub fn contains(&self, token: &str) -> bool {
        self.0.contains(token)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<S: Into<String>> FromIterator<S> for Stopwords {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Stopwords(iter.into_iter().map(|s| s.into().to_lowercase()).collect())
    }
}

pub fn load_stopwords(path: &Path) -> Result<Stopwords> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(Stopwords::from_lines(&text))
}

/// The English list bundled with the crate.
pub fn default_stopwords() -> Stopwords {
    Stopwords::from_lines(DEFAULT_STOPWORDS)
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn is_url(token: &str) -> bool {
    let t = token.to_lowercase();
    t.starts_with("http://") || t.starts_with("https://") || t.starts_with("www.")
}

/// Substitute placeholders for URLs and @mentions. A URL token is replaced
/// whole; a mention replaces the `@handle` prefix and leaves any trailing
/// characters as a separate token.
fn substitute_placeholders(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for token in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        if is_url(token) {
            out.push_str(URL_PLACEHOLDER);
            continue;
        }
        if let Some(rest) = token.strip_prefix('@') {
            let handle_len: usize = rest.chars().take_while(|c| is_word_char(*c)).map(char::len_utf8).sum();
            if handle_len > 0 {
                out.push_str(MENTION_PLACEHOLDER);
                out.push(' ');
                out.push_str(&rest[handle_len..]);
                continue;
            }
        }
        out.push_str(token);
    }
    out
}

/// Normalize raw text into tokens: placeholders, lowercase, punctuation and
/// digit-only tokens stripped, whitespace split, stopwords removed.
pub fn normalize_text(text: &str, stopwords: &Stopwords) -> Vec<String> {
    let lowered = substitute_placeholders(text).to_lowercase();
    lowered
        .split_whitespace()
        .filter_map(|raw| {
            let stripped: String = raw.chars().filter(|c| c.is_alphanumeric()).collect();
            if stripped.is_empty() || stripped.chars().all(char::is_numeric) {
                return None;
            }
            if stopwords.contains(&stripped) {
                return None;
            }
            Some(stripped)
        })
        .collect()
}
