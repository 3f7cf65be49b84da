//! Input embeddings: demographics, utilization, date, cost and the three
//! code modalities, aggregated into one pooled vector per visit.

mod pretrain;

use serde::{Deserialize, Serialize};

use crate::data::{ClaimType, Demographics, EncodedVisit, Modality};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::rng;
use crate::tensor::{ParamId, ParamSet, Tape, Tensor, Var};

pub use pretrain::{init_code_tables, pretrain_code_embeddings, CodeTables, PretrainConfig};

pub const COST_BINS: usize = 100;
pub const DATE_SLOTS: usize = crate::data::MAX_DATE as usize + 1;
/// Half-width of the uniform initializer for every embedding table.
pub const INIT_RANGE: f64 = 0.05;

/// Equal-frequency discretization of visit costs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostBinner {
    /// `COST_BINS + 1` non-decreasing edges: the lower edge of every bin
    /// followed by the largest fitted value.
    edges: Vec<f64>,
    fitted_on: usize,
}

impl CostBinner {
    /// Bin `b` starts at the `floor(b * n / 100)`-th order statistic, so
    /// populations differ by at most one when values are distinct.
    pub fn fit(costs: &[f64]) -> Result<Self> {
        if costs.len() < COST_BINS {
            return Err(Error::invalid(format!(
                "cost binning needs at least {COST_BINS} observations, got {}",
                costs.len()
            )));
        }
        if costs.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("non-finite cost"));
        }
        let mut sorted = costs.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let mut edges: Vec<f64> = (0..COST_BINS).map(|b| sorted[b * n / COST_BINS]).collect();
        edges.push(sorted[n - 1]);
        Ok(CostBinner { edges, fitted_on: n })
    }

    pub fn from_edges(edges: Vec<f64>, fitted_on: usize) -> Result<Self> {
        if edges.len() != COST_BINS + 1 || edges.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::invalid("cost bin edges must be 101 non-decreasing values"));
        }
        Ok(CostBinner { edges, fitted_on })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn fitted_on(&self) -> usize {
        self.fitted_on
    }

    /// Right-open intervals, last one closed. Values below the minimum go to
    /// bin 0 and above the maximum to bin 99. Where several bins share a
    /// lower edge (tied observations) the lowest of them is used.
    pub fn bin(&self, cost: f64) -> usize {
        let lower = &self.edges[..COST_BINS];
        let k = lower.partition_point(|e| *e <= cost);
        if k == 0 {
            return 0;
        }
        let edge = lower[k - 1];
        lower.partition_point(|e| *e < edge)
    }
}

/// Age bands `[0,2) [2,5) [5,8) [8,12) [12,18) [18,30) [30,50) [50,120]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgeGrouper {
    boundaries: Vec<u8>,
}

impl Default for AgeGrouper {
    fn default() -> Self {
        AgeGrouper {
            boundaries: vec![2, 5, 8, 12, 18, 30, 50],
        }
    }
}

impl AgeGrouper {
    pub fn boundaries(&self) -> &[u8] {
        &self.boundaries
    }

    pub fn group_count(&self) -> usize {
        self.boundaries.len() + 1
    }

    pub fn group(&self, age: u8) -> usize {
        self.boundaries.partition_point(|b| *b <= age)
    }
}

/// Fixed sinusoidal code for a nonnegative integer position.
pub fn sinusoid_embed(index: usize, d: usize) -> Result<Vec<f64>> {
    if d % 2 != 0 {
        return Err(Error::invalid(format!("sinusoid dimension must be even, got {d}")));
    }
    let pos = index as f64;
    let mut out = vec![0.0; d];
    for i in 0..d / 2 {
        let angle = pos / 10000f64.powf((2 * i) as f64 / d as f64);
        out[2 * i] = angle.sin();
        out[2 * i + 1] = angle.cos();
    }
    Ok(out)
}

/// Parameter handles of every embedding table.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTables {
    pub codes: [ParamId; 3],
    /// Present when codes are concatenated with their category embedding.
    pub category: Option<ParamId>,
    pub utilization: ParamId,
    pub age: ParamId,
    pub gender: ParamId,
    /// Learned date/cost tables, only with `learned_date_cost`.
    pub date: Option<ParamId>,
    pub cost: Option<ParamId>,
    /// `d` when learned tables are off: sinusoid rows for every date and cost bin.
    date_sinusoids: Vec<Vec<f64>>,
    cost_sinusoids: Vec<Vec<f64>>,
    d: usize,
}

pub(crate) fn uniform_table(rows: usize, cols: usize, rng: &mut rng::Rng) -> Tensor {
    use rand::Rng as _;
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-INIT_RANGE..=INIT_RANGE))
        .collect();
    Tensor::matrix(rows, cols, data).expect("shape")
}

impl EmbeddingTables {
    /// Registers all tables in `params`. Code (and category) tables come
    /// from `code_tables`; the rest are drawn uniformly from the seed.
    pub fn register(
        params: &mut ParamSet,
        cfg: &ModelConfig,
        code_tables: CodeTables,
        grouper: &AgeGrouper,
        seed: u64,
    ) -> Result<Self> {
        let d = cfg.d;
        let half = d / 2;
        let mut rng = rng::stream(seed, "embedding-tables");
        let CodeTables { codes, categories } = code_tables;
        let [diag, proc, drug] = codes;
        let codes = [
            params.add("emb.diag", diag)?,
            params.add("emb.proc", proc)?,
            params.add("emb.drug", drug)?,
        ];
        let category = match (cfg.use_category_concat, categories) {
            (true, Some(t)) => Some(params.add("emb.category", t)?),
            (true, None) => return Err(Error::invalid("category concatenation needs a category table")),
            (false, _) => None,
        };
        let utilization = params.add("emb.util", uniform_table(ClaimType::ALL.len(), d, &mut rng))?;
        let age = params.add("emb.age", uniform_table(grouper.group_count(), half, &mut rng))?;
        let gender = params.add("emb.gender", uniform_table(2, half, &mut rng))?;
        let (date, cost) = if cfg.learned_date_cost {
            (
                Some(params.add("emb.date", uniform_table(DATE_SLOTS, d, &mut rng))?),
                Some(params.add("emb.cost", uniform_table(COST_BINS, d, &mut rng))?),
            )
        } else {
            (None, None)
        };
        Self::attach(params, cfg, codes, category, utilization, age, gender, date, cost)
    }

    /// Rebuilds handles for tables already present in `params` (e.g. after
    /// loading a checkpoint).
    pub fn from_params(params: &ParamSet, cfg: &ModelConfig) -> Result<Self> {
        let get = |name: &str| {
            params
                .id(name)
                .ok_or_else(|| Error::CorruptCheckpoint(format!("missing parameter {name}")))
        };
        let codes = [get("emb.diag")?, get("emb.proc")?, get("emb.drug")?];
        let category = if cfg.use_category_concat {
            Some(get("emb.category")?)
        } else {
            None
        };
        let (date, cost) = if cfg.learned_date_cost {
            (Some(get("emb.date")?), Some(get("emb.cost")?))
        } else {
            (None, None)
        };
        Self::attach(
            params,
            cfg,
            codes,
            category,
            get("emb.util")?,
            get("emb.age")?,
            get("emb.gender")?,
            date,
            cost,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn attach(
        params: &ParamSet,
        cfg: &ModelConfig,
        codes: [ParamId; 3],
        category: Option<ParamId>,
        utilization: ParamId,
        age: ParamId,
        gender: ParamId,
        date: Option<ParamId>,
        cost: Option<ParamId>,
    ) -> Result<Self> {
        let d = cfg.d;
        let code_width = if category.is_some() { d / 2 } else { d };
        for id in codes {
            let t = params.value(id);
            if t.shape().len() != 2 || t.cols() != code_width {
                return Err(Error::ConfigMismatch(format!(
                    "{} has shape {:?}, expected width {code_width}",
                    params.get(id).name,
                    t.shape()
                )));
            }
        }
        if let Some(c) = category {
            if params.value(c).cols() != d / 2 {
                return Err(Error::ConfigMismatch("category table width".into()));
            }
        }
        if params.value(utilization).cols() != d {
            return Err(Error::ConfigMismatch(format!(
                "utilization table width {} but d = {d}",
                params.value(utilization).cols()
            )));
        }
        let (date_sinusoids, cost_sinusoids) = if date.is_none() {
            (
                (0..DATE_SLOTS).map(|i| sinusoid_embed(i, d)).collect::<Result<_>>()?,
                (0..COST_BINS).map(|i| sinusoid_embed(i, d)).collect::<Result<_>>()?,
            )
        } else {
            (Vec::new(), Vec::new())
        };
        Ok(EmbeddingTables {
            codes,
            category,
            utilization,
            age,
            gender,
            date,
            cost,
            date_sinusoids,
            cost_sinusoids,
            d,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Date row as a `1 x d` node.
    pub fn date_row(&self, tape: &mut Tape<'_>, date: u16) -> Result<Var> {
        match self.date {
            Some(t) => {
                let table = tape.param(t);
                tape.gather_rows(table, &[date as usize])
            }
            None => {
                let row = self
                    .date_sinusoids
                    .get(date as usize)
                    .ok_or_else(|| Error::IndexOutOfRange {
                        what: "date".into(),
                        index: date as usize,
                        size: DATE_SLOTS,
                    })?;
                Ok(tape.constant(Tensor::matrix(1, self.d, row.clone())?))
            }
        }
    }

    pub fn cost_row(&self, tape: &mut Tape<'_>, bin: usize) -> Result<Var> {
        match self.cost {
            Some(t) => {
                let table = tape.param(t);
                tape.gather_rows(table, &[bin])
            }
            None => {
                let row = self.cost_sinusoids.get(bin).ok_or_else(|| Error::IndexOutOfRange {
                    what: "cost bin".into(),
                    index: bin,
                    size: COST_BINS,
                })?;
                Ok(tape.constant(Tensor::matrix(1, self.d, row.clone())?))
            }
        }
    }

    pub fn utilization_row(&self, tape: &mut Tape<'_>, claim_type: ClaimType) -> Result<Var> {
        let table = tape.param(self.utilization);
        tape.gather_rows(table, &[claim_type.index()])
    }

    /// Embedding rows for a list of codes of one modality: the code row,
    /// concatenated with the category row when category concatenation is on.
    pub fn code_rows(
        &self,
        tape: &mut Tape<'_>,
        modality: Modality,
        code_indices: &[usize],
        category_indices: &[usize],
    ) -> Result<Var> {
        let table = tape.param(self.codes[modality.index()]);
        let codes = tape.gather_rows(table, code_indices)?;
        match self.category {
            Some(cat) => {
                let cat_table = tape.param(cat);
                let cats = tape.gather_rows(cat_table, category_indices)?;
                tape.concat_cols(&[codes, cats])
            }
            None => Ok(codes),
        }
    }
}

/// Concatenated code-and-category vector of one code, code half first.
pub fn embed_code(
    params: &ParamSet,
    tables: &EmbeddingTables,
    modality: Modality,
    code_index: usize,
    category_index: usize,
) -> Result<Vec<f64>> {
    let code_table = params.value(tables.codes[modality.index()]);
    if code_index >= code_table.rows() {
        return Err(Error::IndexOutOfRange {
            what: format!("{modality} code table"),
            index: code_index,
            size: code_table.rows(),
        });
    }
    let mut out = code_table.row(code_index).to_vec();
    if let Some(cat) = tables.category {
        let cat_table = params.value(cat);
        if category_index >= cat_table.rows() {
            return Err(Error::IndexOutOfRange {
                what: "category table".into(),
                index: category_index,
                size: cat_table.rows(),
            });
        }
        out.extend_from_slice(cat_table.row(category_index));
    }
    Ok(out)
}

/// `E_t`: one row per diagnosis, procedure and drug code, then the
/// utilization, date and cost rows, `(j + k + l + 3) x d`.
pub fn build_visit_matrix(
    tape: &mut Tape<'_>,
    visit: &EncodedVisit,
    categories: &[Vec<usize>; 3],
    tables: &EmbeddingTables,
    binner: &CostBinner,
) -> Result<Var> {
    let mut rows = Vec::with_capacity(6);
    for m in Modality::ALL {
        let idx = visit.indices(m);
        if idx.is_empty() {
            continue;
        }
        let cats: Vec<usize> = idx
            .iter()
            .map(|&i| {
                categories[m.index()].get(i).copied().ok_or(Error::IndexOutOfRange {
                    what: format!("{m} vocabulary"),
                    index: i,
                    size: categories[m.index()].len(),
                })
            })
            .collect::<Result<_>>()?;
        rows.push(tables.code_rows(tape, m, idx, &cats)?);
    }
    rows.push(tables.utilization_row(tape, visit.claim_type)?);
    rows.push(tables.date_row(tape, visit.date)?);
    rows.push(tables.cost_row(tape, binner.bin(visit.cost))?);
    tape.concat_rows(&rows)
}

/// `e_t = maxpool(E_t)`, a `1 x d` node.
pub fn pool_visit(tape: &mut Tape<'_>, visit_matrix: Var) -> Result<Var> {
    tape.max_pool_rows(visit_matrix)
}

/// Age-band half and gender half concatenated into one `1 x d` token.
pub fn embed_demographics(
    tape: &mut Tape<'_>,
    demo: &Demographics,
    tables: &EmbeddingTables,
    grouper: &AgeGrouper,
) -> Result<Var> {
    let age_table = tape.param(tables.age);
    let age = tape.gather_rows(age_table, &[grouper.group(demo.age_years)])?;
    let gender_table = tape.param(tables.gender);
    let gender = tape.gather_rows(gender_table, &[demo.gender.index()])?;
    tape.concat_cols(&[age, gender])
}
