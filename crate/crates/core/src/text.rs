//! Tokenization and the word vocabulary shared by narrations and queries.

use std::collections::{BTreeSet, HashMap};

/// Function words removed before encoding a query.
pub const STOP_WORDS: &[&str] = &[
    "a", "after", "an", "before", "c", "did", "during", "how", "i", "in", "interact", "is", "it", "location", "many",
    "of", "put", "s", "see", "state", "the", "was", "what", "where", "who", "with",
];

pub const UNK: &str = "<unk>";

fn raw_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Lowercased content tokens with stop words removed.
pub fn content_tokens(text: &str) -> Vec<String> {
    raw_tokens(text).filter(|t| !STOP_WORDS.contains(&t.as_str())).collect()
}

/// Singular candidates for a possibly plural token, most specific first.
fn singular_candidates(token: &str) -> Vec<String> {
    let mut out = Vec::new();
    if let Some(stem) = token.strip_suffix("ies") {
        out.push(format!("{stem}y"));
    }
    if let Some(stem) = token.strip_suffix("es") {
        out.push(stem.to_string());
    }
    if let Some(stem) = token.strip_suffix('s') {
        out.push(stem.to_string());
    }
    out
}

/// English plural of the last `_`-separated segment.
pub fn pluralize(noun: &str) -> String {
    let (head, last) = match noun.rfind('_') {
        Some(i) => noun.split_at(i + 1),
        None => ("", noun),
    };
    let consonant_y = last.len() > 1
        && last.ends_with('y')
        && !matches!(last.as_bytes()[last.len() - 2], b'a' | b'e' | b'i' | b'o' | b'u');
    let plural = if consonant_y {
        format!("{}ies", &last[..last.len() - 1])
    } else if ["s", "x", "z", "ch", "sh"].iter().any(|s| last.ends_with(s)) {
        format!("{last}es")
    } else {
        format!("{last}s")
    };
    format!("{head}{plural}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Builds a vocabulary from every content token in `texts`. Plural
    /// forms whose singular also occurs are folded into the singular.
    /// Id 0 is reserved for unknown words.
    pub fn build<'a, I: IntoIterator<Item = &'a str>>(texts: I) -> Vocab {
        let raw: BTreeSet<String> = texts.into_iter().flat_map(content_tokens).collect();
        let canonical: BTreeSet<String> = raw
            .iter()
            .map(|t| {
                singular_candidates(t)
                    .into_iter()
                    .find(|c| raw.contains(c))
                    .unwrap_or_else(|| t.clone())
            })
            .collect();
        Self::from_tokens(canonical)
    }

    fn from_tokens<I: IntoIterator<Item = String>>(words: I) -> Vocab {
        let mut tokens = vec![UNK.to_string()];
        tokens.extend(words.into_iter().filter(|w| w != UNK));
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocab { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        if let Some(&id) = self.index.get(token) {
            return Some(id);
        }
        singular_candidates(token).iter().find_map(|c| self.index.get(c).copied())
    }

    /// Content-token ids of `text`; unknown words map to id 0 and an
    /// all-stop-word text encodes as `[0]`.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let ids: Vec<u32> = content_tokens(text).iter().map(|t| self.id(t).unwrap_or(0)).collect();
        if ids.is_empty() {
            vec![0]
        } else {
            ids
        }
    }

    /// Canonical content tokens of `text` as known to this vocabulary.
    pub fn canonical_tokens(&self, text: &str) -> Vec<String> {
        self.encode(text).into_iter().map(|id| self.tokens[id as usize].clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn content_tokens_drop_function_words() {
        assert_eq!(content_tokens("C picks_up the knife in the kitchen"), vec!["picks_up", "knife", "kitchen"]);
        assert_eq!(content_tokens("Where did I put the knife?"), vec!["knife"]);
    }

    #[test]
    fn plurals() {
        assert_eq!(pluralize("funnel"), "funnels");
        assert_eq!(pluralize("box"), "boxes");
        assert_eq!(pluralize("brush"), "brushes");
        assert_eq!(pluralize("berry"), "berries");
        assert_eq!(pluralize("tray"), "trays");
        assert_eq!(pluralize("red_glass"), "red_glasses");
    }

    #[test]
    fn vocab_folds_plurals() {
        let v = Vocab::build(["C cleans the funnel in the garage", "How many funnels?", "How many boxes?"]);
        assert_eq!(v.tokens()[0], UNK);
        assert!(v.id("funnels").is_some());
        assert_eq!(v.id("funnels"), v.id("funnel"));
        assert!(!v.tokens().contains(&"funnels".to_string()));
        // singular never seen: the plural stays its own token
        assert!(v.tokens().contains(&"boxes".to_string()));
        assert_eq!(v.encode("Where is it?"), vec![0]);
        assert_eq!(v.encode("the zebra"), vec![0]);
        assert_eq!(v.canonical_tokens("How many funnels?"), vec!["funnel"]);
    }

    #[test]
    fn build_is_order_independent() {
        let a = Vocab::build(["C opens the drawer", "C cuts the onion"]);
        let b = Vocab::build(["C cuts the onion", "C opens the drawer"]);
        assert_eq!(a, b);
    }
}
