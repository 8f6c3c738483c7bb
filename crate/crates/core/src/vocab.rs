//! Token inventory: text words, specials, and category phrases that are kept
//! whole ("hot dog" is one token).
//!
//! Layout is `[specials + text words | category segment 0 | segment 1 | ...]`.
//! A segment holds the singular phrases of its categories followed by their
//! plural phrases. Training builds the first segment; every vocabulary
//! expansion appends a new one, so existing ids never move.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Number {
    Singular,
    Plural,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Special {
    Bos,
    Eos,
    Unk,
}

impl Special {
    pub fn surface(self) -> &'static str {
        match self {
            Special::Bos => "<bos>",
            Special::Eos => "<eos>",
            Special::Unk => "<unk>",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Special(Special),
    Text,
    /// `category` indexes the model's category list.
    Category { category: usize, number: Number },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenEntry {
    pub surface: String,
    pub kind: TokenKind,
}

/// Surface forms of one describable category, as found in category list files.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryName {
    pub name: String,
    pub singular: String,
    pub plural: String,
}

pub const BOS: TokenId = TokenId(0);
pub const EOS: TokenId = TokenId(1);
pub const UNK: TokenId = TokenId(2);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    entries: Vec<TokenEntry>,
    text_end: usize,
    words: HashMap<String, TokenId>,
    /// Category phrases split into words, for longest-match scanning.
    phrases: Vec<(Vec<String>, TokenId)>,
    /// (singular, plural) token per category index.
    category_tokens: Vec<(TokenId, TokenId)>,
}

/// Lowercases, strips `.,!?`, collapses whitespace.
pub fn normalize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .chars()
        .filter(|c| !matches!(c, '.' | ',' | '!' | '?'))
        .collect::<String>()
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

fn split_surface(surface: &str) -> Vec<String> {
    surface.split_whitespace().map(str::to_owned).collect()
}

impl Vocabulary {
    /// Text block from words with corpus frequency `>= min_count`, after
    /// category phrase spans have been cut out of every caption.
    pub fn build<S: AsRef<str>>(
        captions: &[S],
        categories: &[CategoryName],
        min_count: usize,
    ) -> Result<Self> {
        if min_count < 1 {
            return Err(Error::config("min_count must be at least 1"));
        }
        let mut vocab = Vocabulary {
            entries: Vec::new(),
            text_end: 0,
            words: HashMap::new(),
            phrases: Vec::new(),
            category_tokens: Vec::new(),
        };
        for special in [Special::Bos, Special::Eos, Special::Unk] {
            vocab.push_word(special.surface(), TokenKind::Special(special));
        }
        // Phrases are needed first so their spans can be excised.
        let probe = Vocabulary::phrase_index(categories, 0)?;
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for caption in captions {
            let words = normalize(caption.as_ref());
            let mut i = 0;
            while i < words.len() {
                if let Some((len, _)) = longest_phrase(&probe, &words[i..]) {
                    i += len;
                    continue;
                }
                *counts.entry(words[i].clone()).or_default() += 1;
                i += 1;
            }
        }
        for (word, count) in counts {
            if count >= min_count && !vocab.words.contains_key(&word) {
                vocab.push_word(&word, TokenKind::Text);
            }
        }
        vocab.text_end = vocab.entries.len();
        vocab.append_segment(categories, 0)
    }

    fn push_word(&mut self, surface: &str, kind: TokenKind) {
        let id = TokenId(self.entries.len() as u32);
        self.words.insert(surface.to_owned(), id);
        self.entries.push(TokenEntry {
            surface: surface.to_owned(),
            kind,
        });
    }

    fn phrase_index(categories: &[CategoryName], first_id: usize) -> Result<Vec<(Vec<String>, TokenId)>> {
        let n = categories.len();
        let mut out = Vec::with_capacity(2 * n);
        for (i, c) in categories.iter().enumerate() {
            out.push((split_surface(&c.singular), TokenId((first_id + i) as u32)));
            out.push((split_surface(&c.plural), TokenId((first_id + n + i) as u32)));
        }
        for (words, _) in &out {
            if words.is_empty() {
                return Err(Error::data("category surface is empty"));
            }
        }
        Ok(out)
    }

    /// Appends one category segment; `first_category` is the category index
    /// of `categories[0]`.
    fn append_segment(mut self, categories: &[CategoryName], first_category: usize) -> Result<Self> {
        if first_category != self.category_tokens.len() {
            return Err(Error::data(format!(
                "category segment starts at {first_category}, vocabulary has {} categories",
                self.category_tokens.len()
            )));
        }
        let mut seen: HashMap<String, String> = HashMap::new();
        for e in &self.entries {
            seen.insert(split_surface(&e.surface).join(" "), e.surface.clone());
        }
        for c in categories {
            for surface in [&c.singular, &c.plural] {
                let key = split_surface(surface).join(" ");
                if key.is_empty() {
                    return Err(Error::data(format!("category '{}' has an empty surface", c.name)));
                }
                if seen.insert(key.clone(), surface.clone()).is_some() {
                    return Err(Error::data(format!(
                        "duplicate surface '{key}' (category '{}')",
                        c.name
                    )));
                }
            }
        }
        let start = self.entries.len();
        let n = categories.len();
        let phrases = Vocabulary::phrase_index(categories, start)?;
        for (i, c) in categories.iter().enumerate() {
            self.entries.push(TokenEntry {
                surface: split_surface(&c.singular).join(" "),
                kind: TokenKind::Category {
                    category: first_category + i,
                    number: Number::Singular,
                },
            });
        }
        for (i, c) in categories.iter().enumerate() {
            self.entries.push(TokenEntry {
                surface: split_surface(&c.plural).join(" "),
                kind: TokenKind::Category {
                    category: first_category + i,
                    number: Number::Plural,
                },
            });
        }
        for i in 0..n {
            self.category_tokens.push((
                TokenId((start + i) as u32),
                TokenId((start + n + i) as u32),
            ));
        }
        self.phrases.extend(phrases);
        Ok(self)
    }

    /// New vocabulary with one more category segment; existing ids are kept.
    pub fn with_categories(&self, categories: &[CategoryName]) -> Result<Self> {
        let first = self.category_tokens.len();
        self.clone().append_segment(categories, first)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn text_end(&self) -> usize {
        self.text_end
    }

    pub fn entries(&self) -> &[TokenEntry] {
        &self.entries
    }

    pub fn entry(&self, id: TokenId) -> Option<&TokenEntry> {
        self.entries.get(id.index())
    }

    pub fn surface(&self, id: TokenId) -> Option<&str> {
        self.entry(id).map(|e| e.surface.as_str())
    }

    pub fn word_id(&self, word: &str) -> Option<TokenId> {
        self.words.get(word).copied()
    }

    pub fn category_count(&self) -> usize {
        self.category_tokens.len()
    }

    /// (singular, plural) token ids of a category.
    pub fn category_tokens(&self, category: usize) -> Option<(TokenId, TokenId)> {
        self.category_tokens.get(category).copied()
    }

    /// Text words in id order (specials excluded).
    pub fn text_words(&self) -> Vec<&str> {
        self.entries[3..self.text_end].iter().map(|e| e.surface.as_str()).collect()
    }

    /// Number of categories in each appended segment, in order.
    pub fn segment_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::new();
        let mut i = self.text_end;
        while i < self.entries.len() {
            let n = self.entries[i..]
                .iter()
                .take_while(|e| matches!(e.kind, TokenKind::Category { number: Number::Singular, .. }))
                .count();
            sizes.push(n);
            i += 2 * n.max(1);
        }
        sizes
    }

    /// Rebuilds a vocabulary from its text words (kept in the given order)
    /// and its category segments.
    pub fn from_parts<S: AsRef<str>>(text_words: &[S], segments: &[Vec<CategoryName>]) -> Result<Self> {
        let mut vocab = Vocabulary {
            entries: Vec::new(),
            text_end: 0,
            words: HashMap::new(),
            phrases: Vec::new(),
            category_tokens: Vec::new(),
        };
        for special in [Special::Bos, Special::Eos, Special::Unk] {
            vocab.push_word(special.surface(), TokenKind::Special(special));
        }
        for w in text_words {
            let w = w.as_ref();
            if w.is_empty() || w.contains(char::is_whitespace) || vocab.words.contains_key(w) {
                return Err(Error::data(format!("invalid or repeated text word '{w}'")));
            }
            vocab.push_word(w, TokenKind::Text);
        }
        vocab.text_end = vocab.entries.len();
        for seg in segments {
            vocab = vocab.with_categories(seg)?;
        }
        Ok(vocab)
    }

    /// Greedy longest match over category phrases, then single words;
    /// unknown words map to `<unk>`. The result is framed by bos/eos.
    pub fn tokenize(&self, caption: &str) -> Result<Vec<TokenId>> {
        let words = normalize(caption);
        if words.is_empty() {
            return Err(Error::data(format!("caption '{caption}' is empty after normalization")));
        }
        let mut out = vec![BOS];
        let mut i = 0;
        while i < words.len() {
            if let Some((len, id)) = longest_phrase(&self.phrases, &words[i..]) {
                out.push(id);
                i += len;
            } else {
                out.push(self.words.get(&words[i]).copied().unwrap_or(UNK));
                i += 1;
            }
        }
        out.push(EOS);
        Ok(out)
    }

    /// Joins surfaces with single spaces, dropping the bos/eos frame. With
    /// `article_fix`, "a" before a vowel-initial surface becomes "an" and "an"
    /// before a consonant-initial surface becomes "a".
    pub fn detokenize(&self, tokens: &[TokenId], article_fix: bool) -> Result<String> {
        if tokens.len() < 2 || tokens[0] != BOS || tokens[tokens.len() - 1] != EOS {
            return Err(Error::data("token sequence is not framed by <bos> ... <eos>"));
        }
        let mut surfaces = Vec::with_capacity(tokens.len() - 2);
        for &t in &tokens[1..tokens.len() - 1] {
            let s = self
                .surface(t)
                .ok_or_else(|| Error::data(format!("token {t} out of range")))?;
            surfaces.push(s.to_owned());
        }
        if article_fix {
            fix_articles(&mut surfaces);
        }
        Ok(surfaces.join(" "))
    }
}

pub(crate) fn fix_articles(surfaces: &mut [String]) {
    for i in 0..surfaces.len().saturating_sub(1) {
        let vowel = surfaces[i + 1]
            .chars()
            .next()
            .is_some_and(|c| matches!(c, 'a' | 'e' | 'i' | 'o' | 'u'));
        if surfaces[i] == "a" && vowel {
            surfaces[i] = "an".to_owned();
        } else if surfaces[i] == "an" && !vowel {
            surfaces[i] = "a".to_owned();
        }
    }
}

fn longest_phrase(phrases: &[(Vec<String>, TokenId)], words: &[String]) -> Option<(usize, TokenId)> {
    let mut best: Option<(usize, TokenId)> = None;
    for (p, id) in phrases {
        if p.len() <= words.len()
            && p.iter().zip(words).all(|(a, b)| a == b)
            && best.is_none_or(|(len, _)| p.len() > len)
        {
            best = Some((p.len(), *id));
        }
    }
    best
}

/// Reads a category list: one JSON object per line with `name`, `singular`
/// and `plural`. Blank lines are skipped.
pub fn read_category_list(path: &Path) -> Result<Vec<CategoryName>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let c: CategoryName = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(c);
    }
    Ok(out)
}

pub fn write_category_list(path: &Path, categories: &[CategoryName]) -> Result<()> {
    let mut text = String::new();
    for c in categories {
        text.push_str(&serde_json::to_string(c).expect("category serializes"));
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cat(name: &str, plural: &str) -> CategoryName {
        CategoryName {
            name: name.to_owned(),
            singular: name.to_owned(),
            plural: plural.to_owned(),
        }
    }

    fn surfaces(v: &Vocabulary, ids: &[TokenId]) -> Vec<String> {
        ids.iter().map(|&t| v.surface(t).unwrap().to_owned()).collect()
    }

    #[test]
    fn teddy_bear_is_one_token() {
        let v = Vocabulary::build(&["a teddy bear on a chair"], &[cat("teddy bear", "teddy bears")], 1).unwrap();
        let ids = v.tokenize("a teddy bear on a chair").unwrap();
        assert_eq!(
            surfaces(&v, &ids),
            ["<bos>", "a", "teddy bear", "on", "a", "chair", "<eos>"]
        );
        assert_eq!(
            v.entry(ids[2]).unwrap().kind,
            TokenKind::Category {
                category: 0,
                number: Number::Singular
            }
        );
        // "teddy" and "bear" never reach the text block.
        assert!(v.word_id("teddy").is_none());
        assert!(v.word_id("bear").is_none());
    }

    #[test]
    fn plain_word_without_categories() {
        let v = Vocabulary::build(&["hello"], &[], 1).unwrap();
        let ids = v.tokenize("hello").unwrap();
        assert_eq!(surfaces(&v, &ids), ["<bos>", "hello", "<eos>"]);
    }

    #[test]
    fn plural_then_singular_phrase() {
        let v = Vocabulary::build(&["two hot dogs and a hot dog"], &[cat("hot dog", "hot dogs")], 1).unwrap();
        let ids = v.tokenize("two hot dogs and a hot dog").unwrap();
        assert_eq!(
            surfaces(&v, &ids),
            ["<bos>", "two", "hot dogs", "and", "a", "hot dog", "<eos>"]
        );
    }

    #[test]
    fn min_count_and_excision() {
        let v = Vocabulary::build(&["a cat", "a cat"], &[], 2).unwrap();
        assert_eq!(v.text_end(), 5);
        assert!(v.word_id("a").is_some() && v.word_id("cat").is_some());

        let v = Vocabulary::build(&["a zebra", "a dog"], &[cat("zebra", "zebras")], 1).unwrap();
        assert!(v.word_id("zebra").is_none());
        let (s, p) = v.category_tokens(0).unwrap();
        assert_eq!(v.surface(s), Some("zebra"));
        assert_eq!(v.surface(p), Some("zebras"));
        assert!(Vocabulary::build(&["x"], &[], 0).is_err());
    }

    #[test]
    fn duplicate_surfaces_rejected() {
        let err = Vocabulary::build(&["a"], &[cat("dog", "dogs"), cat("dog", "hounds")], 1);
        assert!(err.is_err());
        let same = CategoryName {
            name: "sheep".into(),
            singular: "sheep".into(),
            plural: "sheep".into(),
        };
        assert!(Vocabulary::build(&["a"], &[same], 1).is_err());
    }

    #[test]
    fn unknown_words_and_empty_caption() {
        let v = Vocabulary::build(&["a dog"], &[], 1).unwrap();
        let ids = v.tokenize("A dog, running!").unwrap();
        assert_eq!(ids[3], UNK);
        assert!(v.tokenize(" ?! ").is_err());
    }

    #[test]
    fn detokenize_article_fix() {
        let v = Vocabulary::build(&["a"], &[cat("antelope", "antelopes")], 1).unwrap();
        let (s, _) = v.category_tokens(0).unwrap();
        let a = v.word_id("a").unwrap();
        assert_eq!(v.detokenize(&[BOS, a, s, EOS], true).unwrap(), "an antelope");
        assert_eq!(v.detokenize(&[BOS, a, s, EOS], false).unwrap(), "a antelope");
        assert_eq!(v.detokenize(&[BOS, EOS], true).unwrap(), "");
        assert!(v.detokenize(&[a, EOS], false).is_err());
        assert!(v.detokenize(&[BOS, a], false).is_err());
    }

    #[test]
    fn an_before_consonant_becomes_a() {
        let mut s = vec!["an".to_owned(), "dog".to_owned(), "an".to_owned()];
        fix_articles(&mut s);
        assert_eq!(s, ["a", "dog", "an"]);
    }

    #[test]
    fn expansion_keeps_existing_ids() {
        let v = Vocabulary::build(&["a dog on a mat"], &[cat("dog", "dogs")], 1).unwrap();
        let w = v.with_categories(&[cat("zebra", "zebras"), cat("bus", "buses")]).unwrap();
        assert_eq!(&w.entries()[..v.len()], v.entries());
        assert_eq!(w.len(), v.len() + 4);
        assert_eq!(w.category_count(), 3);
        let (s, p) = w.category_tokens(2).unwrap();
        assert_eq!(w.surface(s), Some("bus"));
        assert_eq!(w.surface(p), Some("buses"));
        assert!(w.with_categories(&[cat("zebra", "zebrae")]).is_err());
        assert!(w.with_categories(&[cat("mat", "mats")]).is_err());
        let ids = w.tokenize("two zebras on a mat").unwrap();
        assert_eq!(w.entry(ids[2]).unwrap().kind, TokenKind::Category { category: 1, number: Number::Plural });
    }

    /// Exhaustive segmentation: among all ways to cut the words into
    /// phrases and single words, pick the one whose segment-length sequence
    /// is lexicographically largest.
    fn reference_segmentation(words: &[String], phrases: &[Vec<String>]) -> Vec<Vec<String>> {
        fn all(words: &[String], phrases: &[Vec<String>]) -> Vec<Vec<Vec<String>>> {
            if words.is_empty() {
                return vec![vec![]];
            }
            let mut out = Vec::new();
            let mut lens = vec![1];
            for p in phrases {
                if p.len() > 1 && words.len() >= p.len() && &words[..p.len()] == p.as_slice() {
                    lens.push(p.len());
                }
            }
            for len in lens {
                for mut rest in all(&words[len..], phrases) {
                    rest.insert(0, words[..len].to_vec());
                    out.push(rest);
                }
            }
            out
        }
        all(words, phrases)
            .into_iter()
            .max_by(|a, b| {
                let la: Vec<usize> = a.iter().map(Vec::len).collect();
                let lb: Vec<usize> = b.iter().map(Vec::len).collect();
                la.cmp(&lb)
            })
            .unwrap()
    }

    #[test]
    fn longest_match_agrees_with_exhaustive_segmentation() {
        let cats = [
            cat("hot dog", "hot dogs"),
            cat("dog", "dogs"),
            CategoryName {
                name: "big hot dog stand".into(),
                singular: "hot dog stand".into(),
                plural: "hot dog stands".into(),
            },
        ];
        let lexicon = ["hot", "dog", "dogs", "stand", "two", "a", "and"];
        let v = Vocabulary::build(&lexicon, &cats, 1).unwrap();
        let phrases: Vec<Vec<String>> = cats
            .iter()
            .flat_map(|c| [split_surface(&c.singular), split_surface(&c.plural)])
            .collect();
        let mut rng = crate::numerics::SeededRng::new(11);
        for _ in 0..400 {
            let n = 1 + rng.below(8);
            let words: Vec<String> = (0..n).map(|_| rng.choose(&lexicon).to_string()).collect();
            let ids = v.tokenize(&words.join(" ")).unwrap();
            let got: Vec<String> = surfaces(&v, &ids[1..ids.len() - 1]);
            let want: Vec<String> = reference_segmentation(&words, &phrases)
                .into_iter()
                .map(|seg| seg.join(" "))
                .collect();
            assert_eq!(got, want, "{words:?}");
        }
    }

    #[test]
    fn category_list_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cats.jsonl");
        let cats = vec![cat("zebra", "zebras"), cat("hot dog", "hot dogs")];
        write_category_list(&path, &cats).unwrap();
        assert_eq!(read_category_list(&path).unwrap(), cats);
        fs::write(&path, "{\"name\":\"a\",\"singular\":\"a\",\"plural\":\"as\"}\n{\"name\":1}\n").unwrap();
        match read_category_list(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
