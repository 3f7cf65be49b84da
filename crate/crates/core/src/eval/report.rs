use std::collections::HashMap;
use std::fmt::Write as _;

use indexmap::IndexMap;
use serde::Serialize;

use crate::data::{ClaimType, Gender, PatientRecord};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClusterRow {
    pub cluster: String,
    pub size: usize,
    pub average_age: f64,
    pub female_pct: f64,
    pub average_op_visits: f64,
    pub average_ip_visits: f64,
    pub median_rx_cost: f64,
    pub median_total_cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClusterReport {
    pub rows: Vec<ClusterRow>,
}

pub const REPORT_HEADER: [&str; 8] = [
    "cluster",
    "size",
    "avg_age",
    "female_pct",
    "avg_op_visits",
    "avg_ip_visits",
    "median_rx_cost",
    "median_total_cost",
];

/// Element `(n - 1) / 2` of the sorted values.
pub fn lower_median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    values[(values.len() - 1) / 2]
}

/// Per-cluster demographics and resource use. Rows follow the order in
/// which clusters first appear in `assignments`; every record must be
/// assigned exactly once.
pub fn cohort_report(records: &[PatientRecord], assignments: &IndexMap<String, String>) -> Result<ClusterReport> {
    let by_id: HashMap<&str, &PatientRecord> = records.iter().map(|r| (r.patient_id.as_str(), r)).collect();
    if let Some(missing) = assignments.keys().find(|id| !by_id.contains_key(id.as_str())) {
        return Err(Error::invalid(format!("assigned patient {missing} is not in the records")));
    }
    if let Some(r) = records.iter().find(|r| !assignments.contains_key(&r.patient_id)) {
        return Err(Error::invalid(format!("patient {} has no cluster assignment", r.patient_id)));
    }
    let mut clusters: IndexMap<&str, Vec<&PatientRecord>> = IndexMap::new();
    for (id, cluster) in assignments {
        clusters.entry(cluster.as_str()).or_default().push(by_id[id.as_str()]);
    }
    let rows = clusters
        .into_iter()
        .map(|(cluster, members)| {
            let n = members.len() as f64;
            let mean = |f: &dyn Fn(&PatientRecord) -> f64| members.iter().map(|r| f(r)).sum::<f64>() / n;
            let mut rx: Vec<f64> = members.iter().map(|r| r.cost_of(ClaimType::RX)).collect();
            let mut total: Vec<f64> = members.iter().map(|r| r.total_cost()).collect();
            ClusterRow {
                cluster: cluster.to_string(),
                size: members.len(),
                average_age: mean(&|r| f64::from(r.demographics.age_years)),
                female_pct: 100.0 * mean(&|r| f64::from(u8::from(r.demographics.gender == Gender::F))),
                average_op_visits: mean(&|r| r.count_visits(ClaimType::OP) as f64),
                average_ip_visits: mean(&|r| r.count_visits(ClaimType::IP) as f64),
                median_rx_cost: lower_median(&mut rx),
                median_total_cost: lower_median(&mut total),
            }
        })
        .collect();
    Ok(ClusterReport { rows })
}

impl ClusterReport {
    pub fn to_tsv(&self) -> String {
        let mut out = REPORT_HEADER.join("\t");
        out.push('\n');
        for r in &self.rows {
            writeln!(
                out,
                "{}\t{}\t{:.2}\t{:.1}\t{:.2}\t{:.2}\t{:.2}\t{:.2}",
                r.cluster,
                r.size,
                r.average_age,
                r.female_pct,
                r.average_op_visits,
                r.average_ip_visits,
                r.median_rx_cost,
                r.median_total_cost
            )
            .expect("write to string");
        }
        out
    }
}
