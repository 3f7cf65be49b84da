use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use indexmap::{IndexMap, IndexSet};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ClaimType, Modality, PatientRecord, Visit};
use crate::error::{Error, Result};

/// `(modality, code) -> category` table, e.g. a CCS grouping.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CategoryMap {
    entries: IndexMap<(Modality, String), String>,
}

impl CategoryMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, modality: Modality, code: impl Into<String>, category: impl Into<String>) {
        self.entries.insert((modality, code.into()), category.into());
    }

    pub fn get(&self, modality: Modality, code: &str) -> Option<&str> {
        self.entries
            .get(&(modality, code.to_string()))
            .map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Modality, &str, &str)> {
        self.entries
            .iter()
            .map(|((m, c), cat)| (*m, c.as_str(), cat.as_str()))
    }

    /// Parses `modality<TAB>code<TAB>category` lines.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = CategoryMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [m, code, cat] = fields[..] else {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected 3 tab-separated fields, got {}", fields.len()),
                });
            };
            let modality = Modality::parse(m).ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("unknown modality {m:?}"),
            })?;
            if code.is_empty() || cat.is_empty() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "empty code or category".into(),
                });
            }
            map.insert(modality, code, cat);
        }
        Ok(map)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (m, code, cat) in self.iter() {
            let _ = writeln!(out, "{m}\t{code}\t{cat}");
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

/// Dense per-modality code indices plus the code -> category grouping.
///
/// For each modality, `codes[m]` maps a code to its category index; the
/// code's own index is its insertion position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeVocabulary {
    codes: [IndexMap<String, usize>; 3],
    categories: IndexSet<String>,
}

impl CodeVocabulary {
    pub fn empty() -> Self {
        CodeVocabulary {
            codes: Default::default(),
            categories: IndexSet::new(),
        }
    }

    pub fn size(&self, modality: Modality) -> usize {
        self.codes[modality.index()].len()
    }

    pub fn category_count(&self) -> usize {
        self.categories.len()
    }

    /// Width of the concatenated multi-hot target.
    pub fn total_codes(&self) -> usize {
        Modality::ALL.iter().map(|&m| self.size(m)).sum()
    }

    /// Offset of a modality's block within the concatenated vocabulary.
    pub fn offset(&self, modality: Modality) -> usize {
        Modality::ALL[..modality.index()]
            .iter()
            .map(|&m| self.size(m))
            .sum()
    }

    pub fn index_of(&self, modality: Modality, code: &str) -> Option<usize> {
        self.codes[modality.index()].get_index_of(code)
    }

    pub fn code_at(&self, modality: Modality, index: usize) -> Option<&str> {
        self.codes[modality.index()]
            .get_index(index)
            .map(|(c, _)| c.as_str())
    }

    pub fn category_of(&self, modality: Modality, index: usize) -> Option<usize> {
        self.codes[modality.index()].get_index(index).map(|(_, c)| *c)
    }

    pub fn category_name(&self, index: usize) -> Option<&str> {
        self.categories.get_index(index).map(String::as_str)
    }

    pub fn category_index(&self, name: &str) -> Option<usize> {
        self.categories.get_index_of(name)
    }

    /// Category index of every code of one modality, in code-index order.
    pub fn categories_of(&self, modality: Modality) -> Vec<usize> {
        self.codes[modality.index()].values().copied().collect()
    }

    /// SHA-256 over the canonical listing of every code, its index and category.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for m in Modality::ALL {
            for (i, (code, cat)) in self.codes[m.index()].iter().enumerate() {
                hasher.update(format!("{m}\t{i}\t{code}\t{}\n", self.categories[*cat]).as_bytes());
            }
        }
        for (i, cat) in self.categories.iter().enumerate() {
            hasher.update(format!("CAT\t{i}\t{cat}\n").as_bytes());
        }
        hasher
            .finalize()
            .iter()
            .fold(String::with_capacity(64), |mut s, b| {
                let _ = write!(s, "{b:02x}");
                s
            })
    }
}

/// Indexes codes per modality in order of first appearance.
pub fn build_vocabulary(records: &[PatientRecord], category_map: &CategoryMap) -> Result<CodeVocabulary> {
    let mut vocab = CodeVocabulary::empty();
    for record in records {
        for visit in &record.visits {
            for m in Modality::ALL {
                for code in visit.codes(m) {
                    if vocab.codes[m.index()].contains_key(code) {
                        continue;
                    }
                    let cat = category_map.get(m, code).ok_or_else(|| Error::MissingCategory {
                        code: code.clone(),
                        modality: m.to_string(),
                    })?;
                    let (cat_idx, _) = vocab.categories.insert_full(cat.to_string());
                    vocab.codes[m.index()].insert(code.clone(), cat_idx);
                }
            }
        }
    }
    Ok(vocab)
}

/// A visit with every code replaced by its sorted, deduplicated vocabulary index.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedVisit {
    pub diag: Vec<usize>,
    pub proc: Vec<usize>,
    pub drug: Vec<usize>,
    pub claim_type: ClaimType,
    pub date: u16,
    pub cost: f64,
}

impl EncodedVisit {
    pub fn indices(&self, modality: Modality) -> &[usize] {
        match modality {
            Modality::Diag => &self.diag,
            Modality::Proc => &self.proc,
            Modality::Drug => &self.drug,
        }
    }

    pub fn utilization_index(&self) -> usize {
        self.claim_type.index()
    }

    pub fn code_count(&self) -> usize {
        self.diag.len() + self.proc.len() + self.drug.len()
    }

    /// Reconstruction target over the concatenated vocabulary.
    pub fn multi_hot(&self, vocab: &CodeVocabulary) -> Vec<f64> {
        let mut out = vec![0.0; vocab.total_codes()];
        for m in Modality::ALL {
            let off = vocab.offset(m);
            for &i in self.indices(m) {
                out[off + i] = 1.0;
            }
        }
        out
    }
}

pub fn encode_visit(visit: &Visit, vocab: &CodeVocabulary) -> Result<EncodedVisit> {
    let lookup = |m: Modality| -> Result<Vec<usize>> {
        let mut idx = visit
            .codes(m)
            .iter()
            .map(|c| {
                vocab.index_of(m, c).ok_or_else(|| Error::UnknownCode {
                    code: c.clone(),
                    modality: m.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        idx.sort_unstable();
        idx.dedup();
        Ok(idx)
    };
    Ok(EncodedVisit {
        diag: lookup(Modality::Diag)?,
        proc: lookup(Modality::Proc)?,
        drug: lookup(Modality::Drug)?,
        claim_type: visit.claim_type,
        date: visit.date,
        cost: visit.cost,
    })
}
