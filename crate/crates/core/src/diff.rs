//! Tokenization and LCS alignment of chosen/rejected responses.
//!
//! Tokens outside the longest common subsequence form the "changed" set of
//! their sequence and receive weight `gamma`; aligned tokens keep weight 1.

use std::collections::HashMap;
use std::path::Path;
use std::str::FromStr;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

pub type TokenId = u32;

#[derive(Debug, thiserror::Error)]
pub enum DiffError {
    #[error("no vocabulary entry matches `{0}` and the vocabulary has no fallback")]
    UnknownToken(String),
    #[error("gamma must be positive, got {0}")]
    NonPositiveGamma(f64),
    #[error("sequences were produced by different tokenizers ({0} vs {1})")]
    TokenizerMismatch(String, String),
    #[error("unknown tokenizer `{0}`")]
    UnknownTokenizer(String),
    #[error("reading vocabulary: {0}")]
    Io(#[from] std::io::Error),
}

impl DiffError {
    pub fn name(&self) -> &'static str {
        match self {
            DiffError::UnknownToken(_) => "UnknownToken",
            DiffError::NonPositiveGamma(_) => "NonPositiveGamma",
            DiffError::TokenizerMismatch(..) => "TokenizerMismatch",
            DiffError::UnknownTokenizer(_) => "UnknownTokenizer",
            DiffError::Io(_) => "Io",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenizerKind {
    Whitespace,
    Byte,
    ExternalVocab,
}

impl TokenizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TokenizerKind::Whitespace => "whitespace",
            TokenizerKind::Byte => "byte",
            TokenizerKind::ExternalVocab => "external-vocab",
        }
    }
}

impl FromStr for TokenizerKind {
    type Err = DiffError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "whitespace" => Ok(Self::Whitespace),
            "byte" => Ok(Self::Byte),
            "external-vocab" | "vocab" => Ok(Self::ExternalVocab),
            other => Err(DiffError::UnknownTokenizer(other.into())),
        }
    }
}

#[derive(Debug, Default)]
struct Vocab {
    pieces: Vec<String>,
    index: HashMap<String, TokenId>,
    max_piece_chars: usize,
}

impl Vocab {
    fn intern(&mut self, piece: &str) -> TokenId {
        if let Some(&id) = self.index.get(piece) {
            return id;
        }
        let id = self.pieces.len() as TokenId;
        self.pieces.push(piece.to_string());
        self.index.insert(piece.to_string(), id);
        self.max_piece_chars = self.max_piece_chars.max(piece.chars().count());
        id
    }
}

/// Fallback entry for the external vocabulary.
pub const UNK_PIECE: &str = "<unk>";

/// A deterministic tokenizer.
///
/// The whitespace tokenizer interns pieces in first-seen order, so ids
/// depend on the order texts are tokenized. External vocabularies are fixed
/// at load time.
#[derive(Debug)]
pub struct Tokenizer {
    kind: TokenizerKind,
    vocab: RwLock<Vocab>,
    unk: Option<TokenId>,
}

impl Tokenizer {
    pub fn whitespace() -> Self {
        Self {
            kind: TokenizerKind::Whitespace,
            vocab: RwLock::default(),
            unk: None,
        }
    }

    pub fn byte() -> Self {
        Self {
            kind: TokenizerKind::Byte,
            vocab: RwLock::default(),
            unk: None,
        }
    }

    /// Builds a greedy longest-match tokenizer over `pieces`. A `<unk>`
    /// entry, if present, absorbs characters no piece covers.
    pub fn from_vocab<I, S>(pieces: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = Vocab::default();
        for p in pieces {
            let p = p.as_ref();
            if !p.is_empty() {
                vocab.intern(p);
            }
        }
        let unk = vocab.index.get(UNK_PIECE).copied();
        Self {
            kind: TokenizerKind::ExternalVocab,
            vocab: RwLock::new(vocab),
            unk,
        }
    }

    /// Loads a newline-delimited UTF-8 vocabulary file.
    pub fn load_vocab(path: &Path) -> Result<Self, DiffError> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::from_vocab(text.lines()))
    }

    pub fn kind(&self) -> TokenizerKind {
        self.kind
    }

    /// Number of distinct token ids this tokenizer has produced or can produce.
    pub fn vocab_len(&self) -> usize {
        match self.kind {
            TokenizerKind::Byte => 256,
            _ => self.vocab.read().unwrap().pieces.len(),
        }
    }

    pub fn piece(&self, id: TokenId) -> String {
        match self.kind {
            TokenizerKind::Byte => format!("{id:#04x}"),
            _ => self
                .vocab
                .read()
                .unwrap()
                .pieces
                .get(id as usize)
                .cloned()
                .unwrap_or_else(|| UNK_PIECE.to_string()),
        }
    }

    pub fn tokenize(&self, text: &str) -> Result<TokenSeq, DiffError> {
        let tokens = match self.kind {
            TokenizerKind::Whitespace => {
                let mut vocab = self.vocab.write().unwrap();
                text.split_whitespace().map(|p| vocab.intern(p)).collect()
            }
            TokenizerKind::Byte => text.bytes().map(TokenId::from).collect(),
            TokenizerKind::ExternalVocab => self.greedy(text)?,
        };
        Ok(TokenSeq {
            tokens,
            surface: text.to_string(),
            tokenizer: self.kind,
        })
    }

    fn greedy(&self, text: &str) -> Result<Vec<TokenId>, DiffError> {
        let vocab = self.vocab.read().unwrap();
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let start = chars[i].0;
            let longest = (1..=vocab.max_piece_chars.min(chars.len() - i))
                .rev()
                .find_map(|len| {
                    let end = chars.get(i + len).map_or(text.len(), |c| c.0);
                    vocab.index.get(&text[start..end]).map(|&id| (id, len))
                });
            match (longest, self.unk) {
                (Some((id, len)), _) => {
                    out.push(id);
                    i += len;
                }
                (None, Some(unk)) => {
                    out.push(unk);
                    i += 1;
                }
                (None, None) => {
                    return Err(DiffError::UnknownToken(chars[i].1.to_string()));
                }
            }
        }
        Ok(out)
    }

    /// Inverse of [`Tokenizer::tokenize`]. Whitespace runs come back as
    /// single spaces and `<unk>` pieces stay as written.
    pub fn detokenize(&self, tokens: &[TokenId]) -> String {
        match self.kind {
            TokenizerKind::Byte => {
                let bytes: Vec<u8> = tokens.iter().map(|&t| t as u8).collect();
                String::from_utf8_lossy(&bytes).into_owned()
            }
            TokenizerKind::Whitespace => {
                let vocab = self.vocab.read().unwrap();
                tokens
                    .iter()
                    .map(|&t| vocab.pieces[t as usize].as_str())
                    .collect::<Vec<_>>()
                    .join(" ")
            }
            TokenizerKind::ExternalVocab => {
                let vocab = self.vocab.read().unwrap();
                tokens
                    .iter()
                    .map(|&t| vocab.pieces[t as usize].as_str())
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSeq {
    pub tokens: Vec<TokenId>,
    pub surface: String,
    pub tokenizer: TokenizerKind,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Per-token changed flags of one sequence and the weight given to changed
/// tokens. Unchanged tokens always weigh 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMask {
    pub changed: Vec<bool>,
    pub gamma: f64,
}

impl WeightMask {
    pub fn unchanged(len: usize, gamma: f64) -> Self {
        Self {
            changed: vec![false; len],
            gamma,
        }
    }

    pub fn len(&self) -> usize {
        self.changed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.changed.is_empty()
    }

    pub fn changed_count(&self) -> usize {
        self.changed.iter().filter(|&&c| c).count()
    }

    pub fn with_gamma(&self, gamma: f64) -> Self {
        Self {
            changed: self.changed.clone(),
            gamma,
        }
    }
}

pub fn weight_vector(mask: &WeightMask) -> Result<Vec<f64>, DiffError> {
    if !(mask.gamma > 0.0) {
        return Err(DiffError::NonPositiveGamma(mask.gamma));
    }
    Ok(mask
        .changed
        .iter()
        .map(|&c| if c { mask.gamma } else { 1.0 })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffResult {
    pub chosen_mask: WeightMask,
    pub rejected_mask: WeightMask,
    /// `(chosen index, rejected index)` of every aligned token pair.
    pub aligned: Vec<(usize, usize)>,
}

impl DiffResult {
    pub fn lcs_len(&self) -> usize {
        self.aligned.len()
    }
}

/// LCS alignment of two token sequences. Masks are created with gamma 1;
/// callers apply their own weight via [`WeightMask::with_gamma`].
pub fn align(chosen: &TokenSeq, rejected: &TokenSeq) -> Result<DiffResult, DiffError> {
    if chosen.tokenizer != rejected.tokenizer {
        return Err(DiffError::TokenizerMismatch(
            chosen.tokenizer.as_str().into(),
            rejected.tokenizer.as_str().into(),
        ));
    }
    Ok(align_tokens(&chosen.tokens, &rejected.tokens))
}

/// Core alignment on raw slices.
///
/// Builds the suffix LCS table and walks it forward. On a tie between
/// skipping a chosen or a rejected token the rejected token is skipped, so
/// chosen-side matches land as early as possible.
pub fn align_tokens<T: PartialEq>(a: &[T], b: &[T]) -> DiffResult {
    let (n, m) = (a.len(), b.len());
    let w = m + 1;
    // suffix[i * w + j] = LCS length of a[i..] and b[j..]
    let mut suffix = vec![0u32; (n + 1) * w];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            suffix[i * w + j] = if a[i] == b[j] {
                suffix[(i + 1) * w + j + 1] + 1
            } else {
                suffix[(i + 1) * w + j].max(suffix[i * w + j + 1])
            };
        }
    }

    let mut chosen_changed = vec![true; n];
    let mut rejected_changed = vec![true; m];
    let mut aligned = Vec::with_capacity(suffix[0] as usize);
    let (mut i, mut j) = (0, 0);
    while i < n && j < m {
        if a[i] == b[j] {
            chosen_changed[i] = false;
            rejected_changed[j] = false;
            aligned.push((i, j));
            i += 1;
            j += 1;
        } else if suffix[i * w + j + 1] >= suffix[(i + 1) * w + j] {
            j += 1;
        } else {
            i += 1;
        }
    }

    DiffResult {
        chosen_mask: WeightMask {
            changed: chosen_changed,
            gamma: 1.0,
        },
        rejected_mask: WeightMask {
            changed: rejected_changed,
            gamma: 1.0,
        },
        aligned,
    }
}

/// Debug dump of one masked sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskDump {
    pub tokens: Vec<String>,
    pub changed: Vec<bool>,
    pub weights: Vec<f64>,
}

pub fn mask_dump(
    tokenizer: &Tokenizer,
    seq: &TokenSeq,
    mask: &WeightMask,
) -> Result<MaskDump, DiffError> {
    Ok(MaskDump {
        tokens: seq.tokens.iter().map(|&t| tokenizer.piece(t)).collect(),
        changed: mask.changed.clone(),
        weights: weight_vector(mask)?,
    })
}
