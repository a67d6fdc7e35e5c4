//! Time-ordered bag-of-words corpora, their on-disk formats, and the
//! interleaved three-way sample split.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Ordered list of unique tokens; a token's id is its position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(words: Vec<String>) -> Result<Self> {
        if words.is_empty() {
            return Err(Error::invalid("vocabulary must contain at least one token"));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary token {w:?}")));
            }
        }
        Ok(Self { words, index })
    }

    /// Vocabulary induced from a token set, sorted lexicographically.
    pub fn from_tokens<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let set: BTreeSet<&str> = tokens.into_iter().collect();
        Self::new(set.into_iter().map(str::to_owned).collect())
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Hex SHA-256 over the newline-joined token list.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for w in &self.words {
            h.update(w.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// One token per line.
    pub fn read(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut words = Vec::new();
        for line in reader.lines() {
            let line = line?;
            let w = line.trim();
            if !w.is_empty() {
                words.push(w.to_owned());
            }
        }
        Self::new(words)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        for w in &self.words {
            writeln!(out, "{w}")?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub time_index: i64,
    pub token_ids: Vec<u32>,
}

impl Document {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// Documents in strictly increasing `time_index` order over one vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    vocabulary: Vocabulary,
    documents: Vec<Document>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFormat {
    /// `{"t": 0, "tokens": ["a", "b"]}`
    TokensJsonl,
    /// `{"t": 0, "counts": {"a": 2}}`
    CountsJsonl,
}

/// A parsed but not yet indexed document line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawDocument {
    pub time_index: i64,
    pub tokens: Vec<String>,
    /// 1-based source line, for error reporting.
    pub line: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TokensLine {
    t: i64,
    tokens: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CountsLine {
    t: i64,
    counts: BTreeMap<String, u64>,
}

#[derive(Serialize)]
struct TokensLineOut<'a> {
    t: i64,
    tokens: Vec<&'a str>,
}

/// Parses a JSONL corpus without building a vocabulary.
pub fn read_raw(path: &Path, format: CorpusFormat) -> Result<Vec<RawDocument>> {
    let reader = BufReader::new(File::open(path)?);
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |e: serde_json::Error| Error::Parse {
            line: line_no,
            message: e.to_string(),
        };
        let (t, tokens) = match format {
            CorpusFormat::TokensJsonl => {
                let l: TokensLine = serde_json::from_str(&line).map_err(parse_err)?;
                (l.t, l.tokens)
            }
            CorpusFormat::CountsJsonl => {
                let l: CountsLine = serde_json::from_str(&line).map_err(parse_err)?;
                let mut tokens = Vec::new();
                for (w, c) in l.counts {
                    if c == 0 {
                        return Err(Error::Parse {
                            line: line_no,
                            message: format!("count for {w:?} must be positive"),
                        });
                    }
                    tokens.extend(std::iter::repeat_n(w, c as usize));
                }
                (l.t, tokens)
            }
        };
        if tokens.is_empty() {
            return Err(Error::EmptyDocument { line: line_no });
        }
        docs.push(RawDocument {
            time_index: t,
            tokens,
            line: line_no,
        });
    }
    Ok(docs)
}

/// Reads a corpus file. With `vocabulary = None` the vocabulary is induced
/// from the corpus and sorted.
pub fn load_corpus(
    path: &Path,
    format: CorpusFormat,
    vocabulary: Option<Vocabulary>,
) -> Result<Corpus> {
    Corpus::from_raw(read_raw(path, format)?, vocabulary)
}

impl Corpus {
    pub fn new(vocabulary: Vocabulary, mut documents: Vec<Document>) -> Result<Self> {
        if documents.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let v = vocabulary.len();
        for d in &documents {
            if let Some(&bad) = d.token_ids.iter().find(|&&id| id as usize >= v) {
                return Err(Error::TokenOutOfRange {
                    id: bad as usize,
                    vocab_size: v,
                });
            }
        }
        documents.sort_by_key(|d| d.time_index);
        if let Some(w) = documents.windows(2).find(|w| w[0].time_index == w[1].time_index) {
            return Err(Error::DuplicateTimeIndex(w[0].time_index));
        }
        Ok(Self {
            vocabulary,
            documents,
        })
    }

    pub fn from_raw(raw: Vec<RawDocument>, vocabulary: Option<Vocabulary>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let vocabulary = match vocabulary {
            Some(v) => v,
            None => Vocabulary::from_tokens(raw.iter().flat_map(|d| d.tokens.iter().map(String::as_str)))?,
        };
        let mut documents = Vec::with_capacity(raw.len());
        for d in raw {
            if d.tokens.is_empty() {
                return Err(Error::EmptyDocument { line: d.line });
            }
            let token_ids = d
                .tokens
                .iter()
                .map(|w| {
                    vocabulary
                        .id(w)
                        .map(|id| id as u32)
                        .ok_or_else(|| Error::Parse {
                            line: d.line,
                            message: format!("token {w:?} is not in the vocabulary"),
                        })
                })
                .collect::<Result<Vec<_>>>()?;
            documents.push(Document {
                time_index: d.time_index,
                token_ids,
            });
        }
        Self::new(vocabulary, documents)
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    /// Number of documents.
    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn num_tokens(&self) -> usize {
        self.documents.iter().map(Document::len).sum()
    }

    /// Sub-corpus holding the documents at the given positions (in order).
    pub fn select(&self, positions: &[usize]) -> Result<Corpus> {
        let docs = positions.iter().map(|&p| self.documents[p].clone()).collect();
        Corpus::new(self.vocabulary.clone(), docs)
    }

    /// Writes the corpus as TokensJsonl. Tokens are emitted in stored order,
    /// so reading the file back with the same vocabulary is lossless.
    pub fn write_tokens_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        for d in &self.documents {
            let line = TokensLineOut {
                t: d.time_index,
                tokens: d
                    .token_ids
                    .iter()
                    .map(|&id| self.vocabulary.word(id as usize))
                    .collect(),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }
}

/// How documents are dealt into the three parts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitScheme {
    /// position mod 3: 0 → first training part, 1 → held-out part, 2 → detection part.
    #[default]
    ThirdsInterleaved,
    /// position mod 4: 1 → first training part, 3 → held-out part, 0 or 2 → detection part.
    QuartersInterleaved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    /// Topic fitting.
    Train,
    /// Model selection.
    Heldout,
    /// Changepoint analysis.
    Detect,
}

impl SplitScheme {
    pub fn part_of(self, position: usize) -> Part {
        match self {
            SplitScheme::ThirdsInterleaved => match position % 3 {
                0 => Part::Train,
                1 => Part::Heldout,
                _ => Part::Detect,
            },
            SplitScheme::QuartersInterleaved => match position % 4 {
                1 => Part::Train,
                3 => Part::Heldout,
                _ => Part::Detect,
            },
        }
    }

    /// Position in the source corpus of the `index`-th document of `part`.
    pub fn source_position(self, part: Part, index: usize) -> usize {
        match (self, part) {
            (SplitScheme::ThirdsInterleaved, Part::Train) => 3 * index,
            (SplitScheme::ThirdsInterleaved, Part::Heldout) => 3 * index + 1,
            (SplitScheme::ThirdsInterleaved, Part::Detect) => 3 * index + 2,
            (SplitScheme::QuartersInterleaved, Part::Train) => 4 * index + 1,
            (SplitScheme::QuartersInterleaved, Part::Heldout) => 4 * index + 3,
            (SplitScheme::QuartersInterleaved, Part::Detect) => 2 * index,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SplitCorpus {
    pub w_tilde_1: Corpus,
    pub w_tilde_2: Corpus,
    pub w: Corpus,
    pub split_scheme: SplitScheme,
}

impl SplitCorpus {
    pub fn part(&self, part: Part) -> &Corpus {
        match part {
            Part::Train => &self.w_tilde_1,
            Part::Heldout => &self.w_tilde_2,
            Part::Detect => &self.w,
        }
    }

    pub fn source_position(&self, part: Part, index: usize) -> usize {
        self.split_scheme.source_position(part, index)
    }
}

/// Deals the corpus into the three interleaved parts.
pub fn split_three_way(corpus: &Corpus, scheme: SplitScheme) -> Result<SplitCorpus> {
    let needed = match scheme {
        SplitScheme::ThirdsInterleaved => 3,
        SplitScheme::QuartersInterleaved => 4,
    };
    if corpus.len() < needed {
        return Err(Error::TooFewDocuments {
            needed,
            got: corpus.len(),
        });
    }
    let mut positions: [Vec<usize>; 3] = Default::default();
    for p in 0..corpus.len() {
        let slot = match scheme.part_of(p) {
            Part::Train => 0,
            Part::Heldout => 1,
            Part::Detect => 2,
        };
        positions[slot].push(p);
    }
    Ok(SplitCorpus {
        w_tilde_1: corpus.select(&positions[0])?,
        w_tilde_2: corpus.select(&positions[1])?,
        w: corpus.select(&positions[2])?,
        split_scheme: scheme,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    fn toy(n: usize) -> Corpus {
        let vocab = Vocabulary::new(vec!["a".into(), "b".into()]).unwrap();
        let docs = (0..n)
            .map(|i| Document {
                time_index: i as i64,
                token_ids: vec![(i % 2) as u32],
            })
            .collect();
        Corpus::new(vocab, docs).unwrap()
    }

    #[test]
    fn loads_tokens_format() {
        let f = write_lines(&[
            r#"{"t": 1, "tokens": ["c", "d"]}"#,
            r#"{"t": 0, "tokens": ["a", "b"]}"#,
            r#"{"t": 2, "tokens": ["e"]}"#,
        ]);
        let c = load_corpus(f.path(), CorpusFormat::TokensJsonl, None).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.vocab_size(), 5);
        assert_eq!(c.documents()[0].time_index, 0);
        assert_eq!(c.vocabulary().words(), &["a", "b", "c", "d", "e"]);
    }

    #[test]
    fn empty_document_is_rejected() {
        let f = write_lines(&[r#"{"t": 0, "tokens": ["a"]}"#, r#"{"t": 1, "tokens": []}"#]);
        let err = load_corpus(f.path(), CorpusFormat::TokensJsonl, None).unwrap_err();
        assert!(matches!(err, Error::EmptyDocument { line: 2 }));
        assert!(err.to_string().contains("empty document"));
    }

    #[test]
    fn counts_format_expands_multiset() {
        let f = write_lines(&[r#"{"t":0,"counts":{"a":2,"b":1}}"#]);
        let c = load_corpus(f.path(), CorpusFormat::CountsJsonl, None).unwrap();
        assert_eq!(c.documents()[0].len(), 3);
    }

    #[test]
    fn parse_errors_report_line() {
        let f = write_lines(&[r#"{"t": 0, "tokens": ["a"]}"#, "not json"]);
        match load_corpus(f.path(), CorpusFormat::TokensJsonl, None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_time_index_rejected() {
        let f = write_lines(&[r#"{"t": 4, "tokens": ["a"]}"#, r#"{"t": 4, "tokens": ["b"]}"#]);
        assert!(matches!(
            load_corpus(f.path(), CorpusFormat::TokensJsonl, None),
            Err(Error::DuplicateTimeIndex(4))
        ));
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        let f = write_lines(&[]);
        assert!(matches!(
            load_corpus(f.path(), CorpusFormat::TokensJsonl, None),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn external_vocabulary_rejects_unknown() {
        let f = write_lines(&[r#"{"t": 0, "tokens": ["a", "zz"]}"#]);
        let v = Vocabulary::new(vec!["a".into()]).unwrap();
        assert!(load_corpus(f.path(), CorpusFormat::TokensJsonl, Some(v)).is_err());
    }

    #[test]
    fn thirds_split_matches_mod_three() {
        let s = split_three_way(&toy(9), SplitScheme::ThirdsInterleaved).unwrap();
        let times = |c: &Corpus| c.documents().iter().map(|d| d.time_index).collect::<Vec<_>>();
        assert_eq!(times(&s.w_tilde_1), vec![0, 3, 6]);
        assert_eq!(times(&s.w_tilde_2), vec![1, 4, 7]);
        assert_eq!(times(&s.w), vec![2, 5, 8]);
    }

    #[test]
    fn quarters_split_keeps_half_for_detection() {
        let s = split_three_way(&toy(8), SplitScheme::QuartersInterleaved).unwrap();
        let times = |c: &Corpus| c.documents().iter().map(|d| d.time_index).collect::<Vec<_>>();
        assert_eq!(times(&s.w_tilde_1), vec![1, 5]);
        assert_eq!(times(&s.w_tilde_2), vec![3, 7]);
        assert_eq!(times(&s.w), vec![0, 2, 4, 6]);
        for (i, t) in times(&s.w).into_iter().enumerate() {
            assert_eq!(s.source_position(Part::Detect, i) as i64, t);
        }
    }

    #[test]
    fn minimal_split_and_too_small() {
        let s = split_three_way(&toy(3), SplitScheme::ThirdsInterleaved).unwrap();
        assert_eq!((s.w_tilde_1.len(), s.w_tilde_2.len(), s.w.len()), (1, 1, 1));
        assert!(matches!(
            split_three_way(&toy(2), SplitScheme::ThirdsInterleaved),
            Err(Error::TooFewDocuments { .. })
        ));
    }

    #[test]
    fn writer_round_trips() {
        let f = write_lines(&[
            r#"{"t": 0, "tokens": ["b", "a", "b"]}"#,
            r#"{"t": 5, "tokens": ["c"]}"#,
        ]);
        let c = load_corpus(f.path(), CorpusFormat::TokensJsonl, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.jsonl");
        c.write_tokens_jsonl(&p1).unwrap();
        let c2 = load_corpus(&p1, CorpusFormat::TokensJsonl, None).unwrap();
        assert_eq!(c, c2);
        let p2 = dir.path().join("b.jsonl");
        c2.write_tokens_jsonl(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }
}
