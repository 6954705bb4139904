use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Word lists used to select and perturb probe texts.
///
/// A lexicon directory holds one plain-text file per list: single entries one
/// per line, antonym pairs as `a<TAB>b`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicons {
    pub negation: Vec<String>,
    pub causal_connectives: Vec<String>,
    pub causal_antonyms: Vec<(String, String)>,
    pub temporal_connectives: Vec<String>,
    pub temporal_antonyms: Vec<(String, String)>,
    pub stopwords: Vec<String>,
}

const NEGATION: &str = include_str!("../../resources/negation.txt");
const CAUSAL_CONNECTIVES: &str = include_str!("../../resources/causal_connectives.txt");
const CAUSAL_ANTONYMS: &str = include_str!("../../resources/causal_antonyms.txt");
const TEMPORAL_CONNECTIVES: &str = include_str!("../../resources/temporal_connectives.txt");
const TEMPORAL_ANTONYMS: &str = include_str!("../../resources/temporal_antonyms.txt");
const STOPWORDS: &str = include_str!("../../resources/stopwords.txt");

fn entries(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty())
        .collect()
}

fn pairs(text: &str, origin: &Path) -> Result<Vec<(String, String)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.split_once('\t')
                .map(|(a, b)| (a.trim().to_lowercase(), b.trim().to_lowercase()))
                .ok_or_else(|| Error::Parse {
                    path: origin.to_path_buf(),
                    line: i + 1,
                    msg: "expected a<TAB>b".into(),
                })
        })
        .collect()
}

impl Default for Lexicons {
    fn default() -> Self {
        let builtin = Path::new("<builtin>");
        Lexicons {
            negation: entries(NEGATION),
            causal_connectives: entries(CAUSAL_CONNECTIVES),
            causal_antonyms: pairs(CAUSAL_ANTONYMS, builtin).expect("builtin lexicon"),
            temporal_connectives: entries(TEMPORAL_CONNECTIVES),
            temporal_antonyms: pairs(TEMPORAL_ANTONYMS, builtin).expect("builtin lexicon"),
            stopwords: entries(STOPWORDS),
        }
    }
}

impl Lexicons {
    /// Loads from a directory; files that are absent keep their defaults.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut lex = Lexicons::default();
        let read = |name: &str| -> Result<Option<(String, std::path::PathBuf)>> {
            let p = dir.join(name);
            if !p.exists() {
                return Ok(None);
            }
            fs::read_to_string(&p).map(|t| Some((t, p.clone()))).map_err(|e| Error::io(&p, e))
        };
        if let Some((t, _)) = read("negation.txt")? {
            lex.negation = entries(&t);
        }
        if let Some((t, _)) = read("causal_connectives.txt")? {
            lex.causal_connectives = entries(&t);
        }
        if let Some((t, p)) = read("causal_antonyms.txt")? {
            lex.causal_antonyms = pairs(&t, &p)?;
        }
        if let Some((t, _)) = read("temporal_connectives.txt")? {
            lex.temporal_connectives = entries(&t);
        }
        if let Some((t, p)) = read("temporal_antonyms.txt")? {
            lex.temporal_antonyms = pairs(&t, &p)?;
        }
        if let Some((t, _)) = read("stopwords.txt")? {
            lex.stopwords = entries(&t);
        }
        Ok(lex)
    }
}
