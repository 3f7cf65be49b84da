use crate::data::{encode_visit, CodeVocabulary, Modality, PatientRecord};
use crate::error::Result;

/// One row per patient over the concatenated vocabulary: the number of
/// visits containing each code, or 0/1 presence when `binary`.
pub fn aggregate_multi_hot(records: &[PatientRecord], vocab: &CodeVocabulary, binary: bool) -> Result<Vec<Vec<f64>>> {
    records
        .iter()
        .map(|r| {
            let mut row = vec![0.0; vocab.total_codes()];
            for v in &r.visits {
                let enc = encode_visit(v, vocab)?;
                for m in Modality::ALL {
                    let off = vocab.offset(m);
                    for &i in enc.indices(m) {
                        if binary {
                            row[off + i] = 1.0;
                        } else {
                            row[off + i] += 1.0;
                        }
                    }
                }
            }
            Ok(row)
        })
        .collect()
}

/// The aggregate-then-PCA baseline embedding at `dim` dimensions.
pub fn pca_baseline(records: &[PatientRecord], vocab: &CodeVocabulary, dim: usize, binary: bool) -> Result<Vec<Vec<f64>>> {
    let features = aggregate_multi_hot(records, vocab, binary)?;
    Ok(super::pca_fit_transform(&features, dim)?.0)
}
