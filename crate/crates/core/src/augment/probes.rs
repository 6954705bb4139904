//! Coherent/incoherent probe texts for five coherence aspects.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Lexicons;
use crate::corpus::{read_jsonl, write_jsonl, AugmentedSequence, SegmentedDocument, TokenId, Vocab, FIRST_WORD_ID};
use crate::error::{Error, Result};
use crate::seed::{rng_for, Salt};
use crate::teacher::{similarity_matrix, SimilarityOracle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aspect {
    Repetition,
    Relatedness,
    Negation,
    Causal,
    Temporal,
}

impl Aspect {
    pub const ALL: [Aspect; 5] = [
        Aspect::Repetition,
        Aspect::Relatedness,
        Aspect::Negation,
        Aspect::Causal,
        Aspect::Temporal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Aspect::Repetition => "repetition",
            Aspect::Relatedness => "relatedness",
            Aspect::Negation => "negation",
            Aspect::Causal => "causal",
            Aspect::Temporal => "temporal",
        }
    }
}

impl fmt::Display for Aspect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Aspect {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Aspect::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown aspect {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Coherent,
    Incoherent,
}

impl Polarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Coherent => "coherent",
            Polarity::Incoherent => "incoherent",
        }
    }
}

/// Which perturbation the causal and temporal aspects use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeMode {
    /// Coin flip between reversal and antonym substitution.
    Either,
    Reversal,
    Antonym,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// Relatedness: coherent texts have max pairwise similarity below this.
    pub theta_rel: f64,
    /// Share of tokens (relatedness) or sentences (negation) perturbed.
    pub perturb_fraction: f64,
    /// Width of the frequency-rank window used for near-copy replacements.
    pub band_width: usize,
    pub mode: ProbeMode,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            theta_rel: 0.55,
            perturb_fraction: 0.2,
            band_width: 10,
            mode: ProbeMode::Either,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeExample {
    pub aspect: Aspect,
    pub polarity: Polarity,
    pub input_tokens: Vec<TokenId>,
    pub seq: AugmentedSequence,
    pub source_id: String,
}

#[derive(Debug, Clone, Default)]
pub struct ProbeSet {
    pub examples: Vec<ProbeExample>,
    /// Set when no corpus text matched the aspect.
    pub warning: Option<String>,
}

/// Shared view of the vocabulary for lexicon matching.
struct Matcher<'a> {
    vocab: &'a Vocab,
    lex: &'a Lexicons,
}

impl Matcher<'_> {
    /// Surface form with leading/trailing punctuation removed.
    fn core(&self, id: TokenId) -> String {
        self.vocab
            .token(id)
            .trim_matches(|c: char| !c.is_alphanumeric())
            .to_string()
    }

    fn in_list(&self, id: TokenId, list: &[String]) -> bool {
        let c = self.core(id);
        list.iter().any(|w| *w == c)
    }

    fn is_stopword(&self, id: TokenId) -> bool {
        self.in_list(id, &self.lex.stopwords)
    }

    fn occurrences(&self, sentences: &[Vec<TokenId>], list: &[String]) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (k, s) in sentences.iter().enumerate() {
            for (j, &id) in s.iter().enumerate() {
                if self.in_list(id, list) {
                    out.push((k, j));
                }
            }
        }
        out
    }

    /// The token with its core word swapped for `replacement`, keeping any
    /// attached punctuation.
    fn replace_core(&self, id: TokenId, replacement: &str) -> TokenId {
        let surface = self.vocab.token(id);
        let core = self.core(id);
        match surface.find(&core) {
            Some(at) if !core.is_empty() => {
                let swapped = format!("{}{}{}", &surface[..at], replacement, &surface[at + core.len()..]);
                self.vocab.id(&swapped)
            }
            _ => self.vocab.id(replacement),
        }
    }
}

/// Builds the coherent and incoherent examples of one aspect. Each document
/// draws from its own stream seeded by `hash(seed, aspect, source_id)`.
pub fn build_probe_set(
    corpus: &[SegmentedDocument],
    aspect: Aspect,
    oracle: &dyn SimilarityOracle,
    lexicons: &Lexicons,
    vocab: &Vocab,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<ProbeSet> {
    let m = Matcher { vocab, lex: lexicons };
    let mut examples = Vec::new();
    for (idx, doc) in corpus.iter().enumerate() {
        let mut rng = rng_for(seed, &[Salt::Str("probe"), Salt::Str(aspect.as_str()), Salt::Str(&doc.id)]);
        let selected = match aspect {
            Aspect::Repetition => true,
            Aspect::Relatedness => max_pair_similarity(&doc.sentences, oracle)?.is_some_and(|s| s < cfg.theta_rel),
            Aspect::Negation => !m.occurrences(&doc.sentences, &lexicons.negation).is_empty(),
            Aspect::Causal => !m.occurrences(&doc.sentences, &lexicons.causal_connectives).is_empty(),
            Aspect::Temporal => !m.occurrences(&doc.sentences, &lexicons.temporal_connectives).is_empty(),
        };
        if !selected {
            continue;
        }
        let perturbed = match aspect {
            Aspect::Repetition => Some(repeat_near_copy(&m, &doc.sentences, cfg, &mut rng)),
            Aspect::Relatedness => unrelate(&m, doc, corpus, idx, cfg, &mut rng),
            Aspect::Negation => Some(flip_negation(&m, &doc.sentences, cfg, &mut rng)),
            Aspect::Causal => reverse_or_swap(
                &m,
                &doc.sentences,
                &lexicons.causal_connectives,
                &lexicons.causal_antonyms,
                cfg.mode,
                &mut rng,
            ),
            Aspect::Temporal => reverse_or_swap(
                &m,
                &doc.sentences,
                &lexicons.temporal_connectives,
                &lexicons.temporal_antonyms,
                cfg.mode,
                &mut rng,
            ),
        };
        // Repetition has no coherent selection rule.
        if aspect != Aspect::Repetition {
            examples.push(ProbeExample {
                aspect,
                polarity: Polarity::Coherent,
                input_tokens: doc.input_tokens.clone(),
                seq: AugmentedSequence::from_sentences(&doc.sentences),
                source_id: doc.id.clone(),
            });
        }
        if let Some(sentences) = perturbed.filter(|s| *s != doc.sentences) {
            examples.push(ProbeExample {
                aspect,
                polarity: Polarity::Incoherent,
                input_tokens: doc.input_tokens.clone(),
                seq: AugmentedSequence::from_sentences(&sentences),
                source_id: doc.id.clone(),
            });
        }
    }
    let warning = examples
        .is_empty()
        .then(|| format!("no corpus text matched aspect {aspect}"));
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    Ok(ProbeSet { examples, warning })
}

fn max_pair_similarity(sentences: &[Vec<TokenId>], oracle: &dyn SimilarityOracle) -> Result<Option<f64>> {
    if sentences.len() < 2 {
        return Ok(None);
    }
    let t = similarity_matrix(sentences, oracle)?;
    let mut best = f64::NEG_INFINITY;
    for i in 0..t.len() {
        for j in i + 1..t.len() {
            best = best.max(t[i][j]);
        }
    }
    Ok(Some(best))
}

fn count_fraction(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).ceil() as usize).clamp(1, n.max(1))
}

/// A token from the frequency-rank window around `id` (ids are ranked by
/// frequency), never `id` itself.
fn band_neighbor<R: Rng + ?Sized>(vocab: &Vocab, id: TokenId, width: usize, rng: &mut R) -> TokenId {
    let n_words = vocab.len() - FIRST_WORD_ID as usize;
    if n_words < 2 {
        return id;
    }
    let rank = (id.max(FIRST_WORD_ID) - FIRST_WORD_ID) as usize;
    let width = width.max(2).min(n_words);
    let lo = rank.saturating_sub(width / 2).min(n_words - width);
    loop {
        let cand = (lo + rng.random_range(0..width)) as TokenId + FIRST_WORD_ID;
        if cand != id {
            return cand;
        }
    }
}

fn repeat_near_copy<R: Rng + ?Sized>(
    m: &Matcher<'_>,
    sentences: &[Vec<TokenId>],
    cfg: &ProbeConfig,
    rng: &mut R,
) -> Vec<Vec<TokenId>> {
    let i = rng.random_range(0..sentences.len());
    let mut copy = sentences[i].clone();
    let content: Vec<usize> = (0..copy.len()).filter(|&j| !m.is_stopword(copy[j])).collect();
    let j = if content.is_empty() {
        rng.random_range(0..copy.len())
    } else {
        content[rng.random_range(0..content.len())]
    };
    copy[j] = band_neighbor(m.vocab, copy[j], cfg.band_width, rng);
    let mut out = sentences.to_vec();
    out.insert(i + 1, copy);
    out
}

fn unrelate<R: Rng + ?Sized>(
    m: &Matcher<'_>,
    doc: &SegmentedDocument,
    corpus: &[SegmentedDocument],
    idx: usize,
    cfg: &ProbeConfig,
    rng: &mut R,
) -> Option<Vec<Vec<TokenId>>> {
    let positions: Vec<(usize, usize)> = doc
        .sentences
        .iter()
        .enumerate()
        .flat_map(|(k, s)| (0..s.len()).map(move |j| (k, j)))
        .filter(|&(k, j)| !m.is_stopword(doc.sentences[k][j]))
        .collect();
    let donors: Vec<&SegmentedDocument> = corpus
        .iter()
        .enumerate()
        .filter(|(i, d)| *i != idx && d.id != doc.id && !d.sentences.is_empty())
        .map(|(_, d)| d)
        .collect();
    let n_words = m.vocab.len() - FIRST_WORD_ID as usize;
    let use_tokens = rng.random_bool(0.5);
    let replace_tokens = |rng: &mut R| {
        let mut out = doc.sentences.clone();
        let n = count_fraction(positions.len(), cfg.perturb_fraction);
        for p in sample(rng, positions.len(), n).into_iter() {
            let (k, j) = positions[p];
            let old = out[k][j];
            if n_words < 2 {
                continue;
            }
            out[k][j] = loop {
                let cand = FIRST_WORD_ID + rng.random_range(0..n_words) as TokenId;
                if cand != old {
                    break cand;
                }
            };
        }
        out
    };
    let replace_sentence = |rng: &mut R| {
        let mut out = doc.sentences.clone();
        let slot = rng.random_range(0..out.len());
        let donor = donors[rng.random_range(0..donors.len())];
        out[slot] = donor.sentences[rng.random_range(0..donor.sentences.len())].clone();
        out
    };
    match (use_tokens && !positions.is_empty(), donors.is_empty()) {
        (true, _) => Some(replace_tokens(rng)),
        (false, false) => Some(replace_sentence(rng)),
        (false, true) if !positions.is_empty() => Some(replace_tokens(rng)),
        _ => None,
    }
}

fn flip_negation<R: Rng + ?Sized>(
    m: &Matcher<'_>,
    sentences: &[Vec<TokenId>],
    cfg: &ProbeConfig,
    rng: &mut R,
) -> Vec<Vec<TokenId>> {
    let mut out = sentences.to_vec();
    let n = count_fraction(out.len(), cfg.perturb_fraction);
    let inserted = m
        .lex
        .negation
        .first()
        .map(|w| m.vocab.id(w))
        .unwrap_or(crate::corpus::UNK);
    let mut chosen = sample(rng, out.len(), n).into_vec();
    chosen.sort_unstable();
    for k in chosen {
        let s = &mut out[k];
        match s.iter().position(|&id| m.in_list(id, &m.lex.negation)) {
            Some(j) if s.len() > 1 => {
                s.remove(j);
            }
            _ => s.insert(1.min(s.len()), inserted),
        }
    }
    out
}

/// Swaps the two events around the first usable connective: either the
/// previous sentence and the remainder of a connective-initial sentence, or
/// the two clauses of a sentence with an inner connective. The connective
/// stays in place.
fn reverse_events(m: &Matcher<'_>, sentences: &[Vec<TokenId>], connectives: &[String]) -> Option<Vec<Vec<TokenId>>> {
    for (k, j) in m.occurrences(sentences, connectives) {
        let s = &sentences[k];
        if j == 0 && k > 0 && s.len() > 1 {
            let mut out = sentences.to_vec();
            out[k - 1] = s[1..].to_vec();
            out[k] = std::iter::once(s[0]).chain(sentences[k - 1].iter().copied()).collect();
            return Some(out);
        }
        if j > 0 && j + 1 < s.len() {
            let mut out = sentences.to_vec();
            out[k] = s[j + 1..]
                .iter()
                .chain(std::iter::once(&s[j]))
                .chain(&s[..j])
                .copied()
                .collect();
            return Some(out);
        }
    }
    None
}

fn swap_antonym(m: &Matcher<'_>, sentences: &[Vec<TokenId>], pairs: &[(String, String)]) -> Option<Vec<Vec<TokenId>>> {
    for (k, s) in sentences.iter().enumerate() {
        for (j, &id) in s.iter().enumerate() {
            let core = m.core(id);
            let partner = pairs.iter().find_map(|(a, b)| {
                if *a == core {
                    Some(b)
                } else if *b == core {
                    Some(a)
                } else {
                    None
                }
            });
            if let Some(p) = partner {
                let mut out = sentences.to_vec();
                out[k][j] = m.replace_core(id, p);
                return Some(out);
            }
        }
    }
    None
}

fn reverse_or_swap<R: Rng + ?Sized>(
    m: &Matcher<'_>,
    sentences: &[Vec<TokenId>],
    connectives: &[String],
    antonyms: &[(String, String)],
    mode: ProbeMode,
    rng: &mut R,
) -> Option<Vec<Vec<TokenId>>> {
    let reverse_first = match mode {
        ProbeMode::Reversal => return reverse_events(m, sentences, connectives),
        ProbeMode::Antonym => return swap_antonym(m, sentences, antonyms),
        ProbeMode::Either => rng.random_bool(0.5),
    };
    if reverse_first {
        reverse_events(m, sentences, connectives).or_else(|| swap_antonym(m, sentences, antonyms))
    } else {
        swap_antonym(m, sentences, antonyms).or_else(|| reverse_events(m, sentences, connectives))
    }
}

/// JSON-Lines form of a probe example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub aspect: Aspect,
    pub polarity: Polarity,
    pub source_id: String,
    /// Space-joined decoder layout, special tokens included.
    pub tokens: String,
    /// Space-joined encoder input.
    #[serde(default)]
    pub input: String,
}

pub fn write_probes(path: &Path, probes: &[ProbeExample], vocab: &Vocab) -> Result<()> {
    let records: Vec<ProbeRecord> = probes
        .iter()
        .map(|p| ProbeRecord {
            aspect: p.aspect,
            polarity: p.polarity,
            source_id: p.source_id.clone(),
            tokens: vocab.decode(&p.seq.ids),
            input: vocab.decode(&p.input_tokens),
        })
        .collect();
    write_jsonl(path, &records)
}

pub fn read_probes(path: &Path, vocab: &Vocab) -> Result<Vec<ProbeExample>> {
    let records: Vec<ProbeRecord> = read_jsonl(path)?;
    Ok(records
        .into_iter()
        .map(|r| {
            let ids: Vec<TokenId> = r.tokens.split_whitespace().map(|t| vocab.id_or_reserved(t)).collect();
            ProbeExample {
                aspect: r.aspect,
                polarity: r.polarity,
                input_tokens: r.input.split_whitespace().map(|t| vocab.id(t)).collect(),
                seq: AugmentedSequence::parse(&ids),
                source_id: r.source_id,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{encode_document, Document};
    use crate::teacher::{golden_similarity, HashOracle};

    fn setup(texts: &[&str]) -> (Vocab, Vec<SegmentedDocument>) {
        let docs: Vec<Document> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Document::new(format!("d{i}"), "", *t))
            .collect();
        let vocab = Vocab::build(&docs, 1).unwrap();
        let segs = docs.iter().map(|d| encode_document(d, &vocab).unwrap()).collect();
        (vocab, segs)
    }

    fn text(vocab: &Vocab, p: &ProbeExample) -> String {
        vocab.decode(&p.seq.content())
    }

    fn build(segs: &[SegmentedDocument], vocab: &Vocab, aspect: Aspect, mode: ProbeMode) -> ProbeSet {
        let cfg = ProbeConfig {
            mode,
            ..ProbeConfig::default()
        };
        build_probe_set(segs, aspect, &HashOracle::default(), &Lexicons::default(), vocab, &cfg, 1).unwrap()
    }

    #[test]
    fn temporal_reversal_swaps_events_around_then() {
        let (vocab, segs) = setup(&["she had to go to the hospital. then she felt better."]);
        let set = build(&segs, &vocab, Aspect::Temporal, ProbeMode::Reversal);
        assert_eq!(set.examples.len(), 2);
        assert_eq!(set.examples[0].polarity, Polarity::Coherent);
        assert_eq!(text(&vocab, &set.examples[0]), "she had to go to the hospital. then she felt better.");
        assert_eq!(text(&vocab, &set.examples[1]), "she felt better. then she had to go to the hospital.");
    }

    #[test]
    fn temporal_antonym_swap() {
        let (vocab, segs) = setup(&["he ate before he slept. it was after dark."]);
        let set = build(&segs, &vocab, Aspect::Temporal, ProbeMode::Antonym);
        assert_eq!(text(&vocab, &set.examples[1]), "he ate after he slept. it was after dark.");
    }

    #[test]
    fn causal_reversal_of_inner_clause() {
        let (vocab, segs) = setup(&["he was tired so he slept."]);
        let set = build(&segs, &vocab, Aspect::Causal, ProbeMode::Reversal);
        assert_eq!(text(&vocab, &set.examples[1]), "he slept. so he was tired");
    }

    #[test]
    fn negation_deletion() {
        let (vocab, segs) = setup(&["it did not respond."]);
        let set = build(&segs, &vocab, Aspect::Negation, ProbeMode::Either);
        assert_eq!(text(&vocab, &set.examples[1]), "it did respond.");
    }

    #[test]
    fn negation_insertion_when_absent() {
        let (vocab, segs) = setup(&["it did not respond. the man left. he sat. we ran. you hid. they sang."]);
        // ceil(0.2 * 6) = 2 sentences perturbed
        let set = build(&segs, &vocab, Aspect::Negation, ProbeMode::Either);
        let inc = &set.examples[1];
        let changed = (0..6).filter(|&k| inc.seq.sentence(k) != segs[0].sentences[k]).count();
        assert_eq!(changed, 2);
    }

    #[test]
    fn repetition_near_copy_is_similar() {
        let (vocab, segs) = setup(&[
            "the brave knight rode his horse across the green valley today.",
            "one two three four five six seven eight nine ten eleven twelve.",
        ]);
        let set = build(&segs[..1], &vocab, Aspect::Repetition, ProbeMode::Either);
        assert_eq!(set.examples.len(), 1);
        let p = &set.examples[0];
        assert_eq!(p.polarity, Polarity::Incoherent);
        assert_eq!(p.seq.num_sentences(), 2);
        let diff = p.seq.sentence(0).iter().zip(p.seq.sentence(1)).filter(|(a, b)| a != b).count();
        assert_eq!(diff, 1);
        let t = golden_similarity(p.seq.sentence(0), p.seq.sentence(1), &HashOracle::default()).unwrap();
        assert!(t > 0.9, "near-copy similarity {t}");
    }

    #[test]
    fn relatedness_selection_and_perturbation() {
        let (vocab, segs) = setup(&[
            "alpha beta gamma. delta epsilon zeta.",
            "red blue green. red blue green.",
            "one two three. four five six.",
        ]);
        let cfg = ProbeConfig::default();
        let set = build_probe_set(
            &segs,
            Aspect::Relatedness,
            &HashOracle::default(),
            &Lexicons::default(),
            &vocab,
            &cfg,
            3,
        )
        .unwrap();
        // the duplicated-sentence text is never selected as coherent
        assert!(set.examples.iter().all(|p| p.source_id != "d1"));
        for p in set.examples.iter().filter(|p| p.polarity == Polarity::Incoherent) {
            let src = segs.iter().find(|s| s.id == p.source_id).unwrap();
            assert_ne!(p.seq.sentences(), src.sentences);
        }
    }

    #[test]
    fn unmatched_aspect_warns() {
        let (vocab, segs) = setup(&["a b c. d e f."]);
        let set = build(&segs, &vocab, Aspect::Causal, ProbeMode::Either);
        assert!(set.examples.is_empty());
        assert!(set.warning.is_some());
    }

    #[test]
    fn probes_file_round_trip() {
        let (vocab, segs) = setup(&["she went home. then she slept."]);
        let set = build(&segs, &vocab, Aspect::Temporal, ProbeMode::Reversal);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        write_probes(&path, &set.examples, &vocab).unwrap();
        let line = std::fs::read_to_string(&path).unwrap();
        let first: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
        assert_eq!(first["aspect"], "temporal");
        assert_eq!(first["polarity"], "coherent");
        assert_eq!(first["tokens"], "<bos> she went home. <sen> <dis> then she slept. <sen> <dis> <eos>");
        assert_eq!(read_probes(&path, &vocab).unwrap(), set.examples);
    }

    #[test]
    fn incoherent_always_differs_from_source() {
        let texts = [
            "she woke up. then she ate. she was not hungry so she left.",
            "he ran before he walked. because it rained he stayed.",
            "they never sang. the end came after a while.",
        ];
        let (vocab, segs) = setup(&texts);
        for aspect in Aspect::ALL {
            let set = build(&segs, &vocab, aspect, ProbeMode::Either);
            for p in set.examples.iter().filter(|p| p.polarity == Polarity::Incoherent) {
                let src = segs.iter().find(|s| s.id == p.source_id).unwrap();
                assert_ne!(p.seq.sentences(), src.sentences, "{aspect}");
            }
        }
    }
}
