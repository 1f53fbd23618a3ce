//! Data model, tokenization, sentence segmentation, compression-rate
//! computation, and streaming corpus I/O.
//!
//! Corpora are UTF-8 line-delimited JSON, one record per line. All readers
//! are streaming (constant memory in corpus size) and report malformed lines
//! with their line number. Text is NFC-normalized before tokenization so
//! token identity is stable for surface-form membership tests.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("text is empty after normalization")]
    EmptyText,
    #[error("document has no tokens")]
    EmptyDocument,
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

/// A single token. Non-empty and free of whitespace.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(String);

impl Token {
    pub fn new(surface: impl Into<String>) -> Result<Self, CorpusError> {
        let surface = surface.into();
        if surface.is_empty() || surface.chars().any(char::is_whitespace) {
            return Err(CorpusError::EmptyText);
        }
        Ok(Token(surface))
    }

    pub fn surface(&self) -> &str {
        &self.0
    }
}

impl AsRef<str> for Token {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A tokenized sentence with its 0-based position in the document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<Token>,
    pub index: usize,
}

impl Sentence {
    pub fn token_count(&self) -> usize {
        self.tokens.len()
    }

    pub fn text(&self) -> String {
        self.tokens.iter().map(Token::surface).collect::<Vec<_>>().join(" ")
    }
}

/// A sentence-segmented, tokenized document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    sentences: Vec<Sentence>,
}

impl Document {
    /// Builds a document from pre-tokenized sentences, reindexing them
    /// contiguously. Empty sentences are rejected.
    pub fn new(sentences: Vec<Vec<Token>>) -> Result<Self, CorpusError> {
        if sentences.is_empty() || sentences.iter().any(Vec::is_empty) {
            return Err(CorpusError::EmptyDocument);
        }
        Ok(Document {
            sentences: sentences
                .into_iter()
                .enumerate()
                .map(|(index, tokens)| Sentence { tokens, index })
                .collect(),
        })
    }

    /// Segments `text` into sentences and tokenizes each.
    pub fn from_text(text: &str, tokenizer: &Tokenizer) -> Result<Self, CorpusError> {
        let mut sentences = Vec::new();
        for seg in segment_sentences(text) {
            sentences.push(tokenizer.tokenize(&seg)?);
        }
        Document::new(sentences)
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Sentence::token_count).sum()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &Token> {
        self.sentences.iter().flat_map(|s| s.tokens.iter())
    }
}

/// One cross-lingual summarization sample: source document, monolingual
/// summary (same language as the source), and cross-lingual summary.
#[derive(Debug, Clone, PartialEq)]
pub struct ClsSample {
    pub id: String,
    pub doc_src: Document,
    pub mono_summary: Document,
    pub cross_summary: Document,
}

/// Provenance of a unified training pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairOrigin {
    Cls,
    Augmented,
    Mt,
    Synthetic,
}

/// A unified (source, target, compression rate, bin) training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub src: Vec<String>,
    pub tgt: Vec<String>,
    pub gamma: f64,
    pub bin: usize,
    pub origin: PairOrigin,
}

/// An augmentation output: the pruned source document plus bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSample {
    pub base_id: String,
    pub doc: Document,
    pub cross_summary: Document,
    pub gamma_target: f64,
    pub gamma_actual: f64,
    pub deleted_sentence_indices: Vec<usize>,
    pub deleted_word_count: usize,
}

// ---------------------------------------------------------------------------
// Tokenization
// ---------------------------------------------------------------------------

/// Plain-text subword inventory applied by greedy longest match.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergesTable {
    entries: BTreeSet<String>,
    max_len: usize,
}

impl MergesTable {
    pub fn new(entries: impl IntoIterator<Item = String>) -> Self {
        let entries: BTreeSet<String> =
            entries.into_iter().filter(|e| !e.is_empty()).collect();
        let max_len = entries.iter().map(|e| e.chars().count()).max().unwrap_or(0);
        MergesTable { entries, max_len }
    }

    /// Loads one subword per line, skipping blank lines.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let reader = BufReader::new(File::open(path)?);
        let mut entries = Vec::new();
        for line in reader.lines() {
            let line = line?;
            let trimmed = line.trim();
            if !trimmed.is_empty() {
                entries.push(trimmed.nfc().collect());
            }
        }
        Ok(MergesTable::new(entries))
    }

    pub fn contains(&self, piece: &str) -> bool {
        self.entries.contains(piece)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TokenizerScheme {
    /// Split on Unicode whitespace.
    Whitespace,
    /// Split on whitespace, then split out each CJK codepoint as its own
    /// token. The default scheme.
    WhitespaceCjk,
    /// Whitespace split followed by greedy longest-match against a merges
    /// table; characters without a table match become single-char tokens.
    Subword(MergesTable),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tokenizer {
    scheme: TokenizerScheme,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Tokenizer { scheme: TokenizerScheme::WhitespaceCjk }
    }
}

fn is_cjk(c: char) -> bool {
    matches!(c,
        '\u{3400}'..='\u{4DBF}'      // CJK ext A
        | '\u{4E00}'..='\u{9FFF}'    // CJK unified
        | '\u{F900}'..='\u{FAFF}'    // CJK compatibility
        | '\u{3040}'..='\u{30FF}'    // hiragana + katakana
        | '\u{AC00}'..='\u{D7AF}'    // hangul syllables
        | '\u{20000}'..='\u{2A6DF}') // CJK ext B
}

impl Tokenizer {
    pub fn new(scheme: TokenizerScheme) -> Self {
        Tokenizer { scheme }
    }

    pub fn scheme(&self) -> &TokenizerScheme {
        &self.scheme
    }

    /// Tokenizes NFC-normalized text. Deterministic; identical inputs yield
    /// identical token sequences.
    pub fn tokenize(&self, text: &str) -> Result<Vec<Token>, CorpusError> {
        let normalized: String = text.nfc().collect();
        let mut tokens = Vec::new();
        for chunk in normalized.split_whitespace() {
            match &self.scheme {
                TokenizerScheme::Whitespace => tokens.push(Token::new(chunk)?),
                TokenizerScheme::WhitespaceCjk => split_cjk(chunk, &mut tokens)?,
                TokenizerScheme::Subword(table) => split_subword(chunk, table, &mut tokens)?,
            }
        }
        if tokens.is_empty() {
            return Err(CorpusError::EmptyText);
        }
        Ok(tokens)
    }
}

fn split_cjk(chunk: &str, out: &mut Vec<Token>) -> Result<(), CorpusError> {
    let mut run = String::new();
    for c in chunk.chars() {
        if is_cjk(c) {
            if !run.is_empty() {
                out.push(Token::new(std::mem::take(&mut run))?);
            }
            out.push(Token::new(c.to_string())?);
        } else {
            run.push(c);
        }
    }
    if !run.is_empty() {
        out.push(Token::new(run)?);
    }
    Ok(())
}

fn split_subword(chunk: &str, table: &MergesTable, out: &mut Vec<Token>) -> Result<(), CorpusError> {
    let chars: Vec<char> = chunk.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let max = table.max_len.min(chars.len() - i);
        let mut matched = None;
        for len in (1..=max).rev() {
            let piece: String = chars[i..i + len].iter().collect();
            if table.contains(&piece) {
                matched = Some((piece, len));
                break;
            }
        }
        let (piece, len) = matched.unwrap_or_else(|| (chars[i].to_string(), 1));
        out.push(Token::new(piece)?);
        i += len;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Sentence segmentation
// ---------------------------------------------------------------------------

const TERMINATORS: [char; 6] = ['.', '!', '?', '\u{3002}', '\u{FF01}', '\u{FF1F}'];

/// Splits text after any of `. ! ? 。 ！ ？` followed by whitespace or end of
/// input. Trailing unterminated text becomes a final sentence. The literal
/// rule is applied with no abbreviation handling; segments are trimmed.
pub fn segment_sentences(text: &str) -> Vec<String> {
    let mut segments = Vec::new();
    let mut current = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        current.push(c);
        if TERMINATORS.contains(&c) {
            let at_boundary = match chars.peek() {
                None => true,
                Some(&next) => next.is_whitespace(),
            };
            if at_boundary {
                let seg = current.trim();
                if !seg.is_empty() {
                    segments.push(seg.to_string());
                }
                current.clear();
            }
        }
    }
    let seg = current.trim();
    if !seg.is_empty() {
        segments.push(seg.to_string());
    }
    segments
}

// ---------------------------------------------------------------------------
// Compression rate
// ---------------------------------------------------------------------------

/// Raw token-length ratio summary/document, unclipped. Clipping is the
/// quantizer's job.
pub fn compression_rate(doc: &Document, summary: &Document) -> Result<f64, CorpusError> {
    let n = doc.token_count();
    if n == 0 {
        return Err(CorpusError::EmptyDocument);
    }
    Ok(summary.token_count() as f64 / n as f64)
}

// ---------------------------------------------------------------------------
// Wire records and streaming I/O
// ---------------------------------------------------------------------------

/// On-disk form of a [`ClsSample`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClsRecord {
    pub id: String,
    pub doc: Vec<String>,
    pub mono_summary: String,
    pub cross_summary: String,
}

/// On-disk form of an [`AugmentedSample`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedRecord {
    pub id: String,
    pub doc: Vec<String>,
    pub cross_summary: String,
    pub gamma_target: f64,
    pub gamma_actual: f64,
    pub deleted_sentences: Vec<usize>,
    pub deleted_words: usize,
}

/// On-disk form of a machine-translation pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtRecord {
    pub id: String,
    pub src: String,
    pub tgt: String,
}

impl ClsSample {
    pub fn from_record(record: &ClsRecord, tokenizer: &Tokenizer) -> Result<Self, CorpusError> {
        let mut sentences = Vec::new();
        for sent in &record.doc {
            sentences.push(tokenizer.tokenize(sent)?);
        }
        Ok(ClsSample {
            id: record.id.clone(),
            doc_src: Document::new(sentences)?,
            mono_summary: Document::from_text(&record.mono_summary, tokenizer)?,
            cross_summary: Document::from_text(&record.cross_summary, tokenizer)?,
        })
    }

    pub fn to_record(&self) -> ClsRecord {
        ClsRecord {
            id: self.id.clone(),
            doc: self.doc_src.sentences().iter().map(Sentence::text).collect(),
            mono_summary: self
                .mono_summary
                .sentences()
                .iter()
                .map(Sentence::text)
                .collect::<Vec<_>>()
                .join(" "),
            cross_summary: self
                .cross_summary
                .sentences()
                .iter()
                .map(Sentence::text)
                .collect::<Vec<_>>()
                .join(" "),
        }
    }
}

impl AugmentedSample {
    pub fn to_record(&self) -> AugmentedRecord {
        AugmentedRecord {
            id: self.base_id.clone(),
            doc: self.doc.sentences().iter().map(Sentence::text).collect(),
            cross_summary: self
                .cross_summary
                .sentences()
                .iter()
                .map(Sentence::text)
                .collect::<Vec<_>>()
                .join(" "),
            gamma_target: self.gamma_target,
            gamma_actual: self.gamma_actual,
            deleted_sentences: self.deleted_sentence_indices.clone(),
            deleted_words: self.deleted_word_count,
        }
    }
}

/// Streaming JSONL reader yielding one deserialized record per line.
pub struct JsonlReader<T> {
    lines: io::Lines<BufReader<File>>,
    line_no: usize,
    _marker: std::marker::PhantomData<T>,
}

impl<T: DeserializeOwned> JsonlReader<T> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        Ok(JsonlReader {
            lines: BufReader::new(File::open(path)?).lines(),
            line_no: 0,
            _marker: std::marker::PhantomData,
        })
    }
}

impl<T: DeserializeOwned> Iterator for JsonlReader<T> {
    type Item = Result<T, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            return Some(serde_json::from_str(&line).map_err(|e| CorpusError::Schema {
                line: self.line_no,
                message: e.to_string(),
            }));
        }
    }
}

/// Streams `ClsSample`s from a JSONL corpus under the given tokenizer.
pub fn read_corpus(
    path: impl AsRef<Path>,
    tokenizer: Tokenizer,
) -> Result<impl Iterator<Item = Result<ClsSample, CorpusError>>, CorpusError> {
    let reader: JsonlReader<ClsRecord> = JsonlReader::open(path)?;
    let mut line_no = 0usize;
    Ok(reader.map(move |record| {
        line_no += 1;
        record.and_then(|r| {
            ClsSample::from_record(&r, &tokenizer).map_err(|e| match e {
                CorpusError::Schema { .. } | CorpusError::Io(_) => e,
                other => CorpusError::Schema { line: line_no, message: other.to_string() },
            })
        })
    }))
}

/// Writes serializable records as one JSON object per line.
pub fn write_jsonl<T: Serialize>(
    records: impl IntoIterator<Item = T>,
    path: impl AsRef<Path>,
) -> Result<(), CorpusError> {
    let mut writer = BufWriter::new(File::create(path)?);
    for record in records {
        serde_json::to_writer(&mut writer, &record)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}
