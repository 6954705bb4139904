//! Text ingestion: sentence splitting, vocabulary, tokenization and the
//! `<sen>`/`<dis>` layout the decoder is trained on.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
pub const BOS: TokenId = 2;
pub const EOS: TokenId = 3;
pub const SEN: TokenId = 4;
pub const DIS: TokenId = 5;

/// Surface forms of the reserved ids, in id order.
pub const RESERVED_TOKENS: [&str; 6] = ["<pad>", "<unk>", "<bos>", "<eos>", "<sen>", "<dis>"];
pub const FIRST_WORD_ID: TokenId = 6;

/// Ids that only ever appear as layout markers, never inside a sentence.
pub fn is_structural(id: TokenId) -> bool {
    matches!(id, PAD | BOS | EOS | SEN | DIS)
}

/// Word-level vocabulary with six fixed reserved ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    /// Builds a vocabulary from already-ordered word tokens (ids 6.. in order).
    pub fn from_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, TokenId> = HashMap::new();
        for w in words {
            let w = w.into();
            if RESERVED_TOKENS.contains(&w.as_str()) || w.chars().any(char::is_whitespace) || w.is_empty() {
                return Err(Error::Config(format!("invalid vocabulary word {w:?}")));
            }
            if index.contains_key(&w) {
                return Err(Error::Config(format!("duplicate vocabulary word {w:?}")));
            }
            index.insert(w.clone(), tokens.len() as TokenId);
            tokens.push(w);
        }
        if tokens.len() <= FIRST_WORD_ID as usize {
            return Err(Error::EmptyVocabulary);
        }
        Ok(Vocab { tokens, index })
    }

    /// Case-folded whitespace tokens with frequency >= `min_freq`, ordered by
    /// descending frequency and then lexicographically.
    pub fn build(corpus: &[Document], min_freq: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Empty("corpus"));
        }
        let min_freq = min_freq.max(1);
        let mut counts: HashMap<String, usize> = HashMap::new();
        for doc in corpus {
            for tok in tokenize(&doc.input_text).chain(tokenize(&doc.target_text)) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut words: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_freq && !RESERVED_TOKENS.contains(&w.as_str()))
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_words(words.into_iter().map(|(w, _)| w))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Id of a (case-folded) word; unknown words map to `UNK`.
    pub fn id(&self, word: &str) -> TokenId {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    /// Like [`Vocab::id`] but also resolves the reserved surface forms.
    pub fn id_or_reserved(&self, token: &str) -> TokenId {
        match RESERVED_TOKENS.iter().position(|r| *r == token) {
            Some(i) => i as TokenId,
            None => self.id(token),
        }
    }

    pub fn get(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    pub fn token(&self, id: TokenId) -> &str {
        self.tokens.get(id as usize).map(String::as_str).unwrap_or(RESERVED_TOKENS[UNK as usize])
    }

    pub fn encode_text(&self, text: &str) -> Vec<TokenId> {
        tokenize(text).map(|t| self.id(&t)).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter().map(|&i| self.token(i)).collect::<Vec<_>>().join(" ")
    }

    /// Writes the reserved header followed by one word per line.
    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        for t in &self.tokens {
            writeln!(w, "{t}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = Vec::new();
        for line in BufReader::new(f).lines() {
            lines.push(line.map_err(|e| Error::io(path, e))?);
        }
        for (i, expected) in RESERVED_TOKENS.iter().enumerate() {
            if lines.get(i).map(String::as_str) != Some(*expected) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: format!("expected reserved token {expected}"),
                });
            }
        }
        Self::from_words(lines.into_iter().skip(RESERVED_TOKENS.len()))
    }
}

/// Whitespace split plus lowercasing.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_lowercase)
}

/// One input/target pair as stored in corpus files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    #[serde(rename = "input", default)]
    pub input_text: String,
    #[serde(rename = "target")]
    pub target_text: String,
}

impl Document {
    pub fn new(id: impl Into<String>, input: impl Into<String>, target: impl Into<String>) -> Self {
        Document {
            id: id.into(),
            input_text: input.into(),
            target_text: target.into(),
        }
    }
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Splits after `.`, `!` or `?` (optionally followed by closing quotes) when
/// whitespace follows. Abbreviations are not special-cased, so "Mr. Smith"
/// splits after "Mr.".
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut sentences = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for word in text.split_whitespace() {
        current.push(word);
        if ends_sentence(word) {
            sentences.push(current.join(" "));
            current.clear();
        }
    }
    if !current.is_empty() {
        sentences.push(current.join(" "));
    }
    sentences
}

fn ends_sentence(word: &str) -> bool {
    let trimmed = word.trim_end_matches(['"', '\'', '\u{201d}', '\u{2019}', ')']);
    trimmed.ends_with(['.', '!', '?'])
}

/// Input tokens plus the target split into tokenized sentences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentedDocument {
    pub id: String,
    pub input_tokens: Vec<TokenId>,
    pub sentences: Vec<Vec<TokenId>>,
}

impl SegmentedDocument {
    pub fn num_sentences(&self) -> usize {
        self.sentences.len()
    }

    /// Keeps the longest sentence prefix whose augmented layout fits in
    /// `max_len`. Returns `None` when not even the first sentence fits.
    pub fn truncated(&self, max_len: usize) -> Option<SegmentedDocument> {
        let mut len = 2;
        let mut keep = 0;
        for s in &self.sentences {
            if len + s.len() + 2 > max_len {
                break;
            }
            len += s.len() + 2;
            keep += 1;
        }
        (keep > 0).then(|| SegmentedDocument {
            id: self.id.clone(),
            input_tokens: self.input_tokens.clone(),
            sentences: self.sentences[..keep].to_vec(),
        })
    }
}

pub fn encode_document(doc: &Document, vocab: &Vocab) -> Result<SegmentedDocument> {
    let sentences: Vec<Vec<TokenId>> = split_sentences(&doc.target_text)
        .iter()
        .map(|s| vocab.encode_text(s))
        .filter(|s| !s.is_empty())
        .collect();
    if sentences.is_empty() {
        return Err(Error::EmptyTarget);
    }
    Ok(SegmentedDocument {
        id: doc.id.clone(),
        input_tokens: vocab.encode_text(&doc.input_text),
        sentences,
    })
}

/// Re-frames a long unconditional text as (one input sentence, up to
/// `k_target` following target sentences) windows.
pub fn frame_windows(id: &str, sentences: &[String], k_target: usize) -> Vec<Document> {
    let k_target = k_target.max(1);
    let mut docs = Vec::new();
    let mut start = 0;
    let mut n = 0;
    while start + 1 < sentences.len() {
        let end = (start + 1 + k_target).min(sentences.len());
        docs.push(Document::new(
            format!("{id}#{n}"),
            sentences[start].clone(),
            sentences[start + 1..end].join(" "),
        ));
        n += 1;
        start = end;
    }
    docs
}

/// Decoder target: `[BOS, Y1, SEN, DIS, ..., YK, SEN, DIS, EOS]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedSequence {
    pub ids: Vec<TokenId>,
    pub sen_positions: Vec<usize>,
    pub dis_positions: Vec<usize>,
    /// Half-open `[start, end)` ranges of each sentence's word tokens in `ids`.
    pub sentence_spans: Vec<(usize, usize)>,
}

impl AugmentedSequence {
    pub fn from_sentences(sentences: &[Vec<TokenId>]) -> Self {
        let total = 2 + sentences.iter().map(|s| s.len() + 2).sum::<usize>();
        let mut ids = Vec::with_capacity(total);
        let mut sen_positions = Vec::with_capacity(sentences.len());
        let mut dis_positions = Vec::with_capacity(sentences.len());
        let mut sentence_spans = Vec::with_capacity(sentences.len());
        ids.push(BOS);
        for s in sentences {
            let start = ids.len();
            ids.extend_from_slice(s);
            sentence_spans.push((start, ids.len()));
            sen_positions.push(ids.len());
            ids.push(SEN);
            dis_positions.push(ids.len());
            ids.push(DIS);
        }
        ids.push(EOS);
        AugmentedSequence {
            ids,
            sen_positions,
            dis_positions,
            sentence_spans,
        }
    }

    /// Rebuilds the layout from raw ids (e.g. a generated sequence). Words
    /// following the last `<dis>` without a closing `<sen>` are dropped.
    pub fn parse(ids: &[TokenId]) -> Self {
        let mut sentences = Vec::new();
        let mut current = Vec::new();
        for &id in ids {
            match id {
                SEN => {
                    if !current.is_empty() {
                        sentences.push(std::mem::take(&mut current));
                    }
                }
                PAD | BOS | EOS | DIS => {}
                w => current.push(w),
            }
        }
        Self::from_sentences(&sentences)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn num_sentences(&self) -> usize {
        self.sen_positions.len()
    }

    pub fn sentence(&self, k: usize) -> &[TokenId] {
        let (s, e) = self.sentence_spans[k];
        &self.ids[s..e]
    }

    pub fn sentences(&self) -> Vec<Vec<TokenId>> {
        (0..self.num_sentences()).map(|k| self.sentence(k).to_vec()).collect()
    }

    /// Word tokens only, in order.
    pub fn content(&self) -> Vec<TokenId> {
        self.ids.iter().copied().filter(|&i| !is_structural(i)).collect()
    }
}

pub fn insert_special_tokens(seg: &SegmentedDocument) -> AugmentedSequence {
    AugmentedSequence::from_sentences(&seg.sentences)
}
