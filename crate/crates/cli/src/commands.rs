use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use sha2::{Digest, Sha256};

use tmae::benchmark::{run_benchmark, BenchmarkConfig};
use tmae::data::{build_vocabulary, load_claims, to_jsonl, CategoryMap, CodeVocabulary, Modality};
use tmae::eval::{
    assignments_tsv, calinski_harabasz, cluster_labels, cohort_report, davies_bouldin, elbow_select, embeddings_csv, kmeans,
    pca_fit_transform, plot_csv, read_assignments, read_embeddings, wss_curve_csv,
};
use tmae::model::{check, ModelConfig, Variant};
use tmae::synth::{
    condition_specs, cost_tier_specs, generate_condition_benchmark, generate_cost_tier_benchmark, generate_custom,
    parse_labels, CustomBenchmark, LabeledDataset, CATEGORIES_FILE, COST_TIER_COUNTS,
};
use tmae::train::{load_checkpoint, save_checkpoint, train_variant, write_loss_history};

use crate::config::RunConfig;
use crate::{BenchmarkArgs, BenchmarkKind, ClusterArgs, EmbedArgs, GenerateArgs, GradcheckArgs, ReportArgs, TrainArgs};

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn generate(args: &GenerateArgs) -> Result<()> {
    let (dataset, spec_json): (LabeledDataset, String) = match args.benchmark {
        BenchmarkKind::Conditions => (
            generate_condition_benchmark(args.n_per_cohort, args.seed)?,
            serde_json::to_string(&(condition_specs(), args.n_per_cohort))?,
        ),
        BenchmarkKind::CostTiers => (
            generate_cost_tier_benchmark(args.seed)?,
            serde_json::to_string(&(cost_tier_specs(), COST_TIER_COUNTS))?,
        ),
        BenchmarkKind::Custom => {
            let path = args.spec.as_ref().context("--benchmark custom requires --spec FILE")?;
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let bench: CustomBenchmark =
                serde_json::from_str(&text).map_err(|e| tmae::Error::invalid(format!("invalid spec: {e}")))?;
            (generate_custom(&bench, args.seed)?, serde_json::to_string(&bench)?)
        }
    };
    if args.spec.is_some() && args.benchmark != BenchmarkKind::Custom {
        bail!(tmae::Error::invalid("--spec is only used with --benchmark custom"));
    }
    let claims = to_jsonl(&dataset.records);
    let manifest = serde_json::json!({
        "benchmark": format!("{:?}", args.benchmark).to_lowercase(),
        "seed": args.seed,
        "patients": dataset.records.len(),
        "labels": dataset.labels(),
        "spec_sha256": sha256_hex(spec_json.as_bytes()),
        "claims_sha256": sha256_hex(claims.as_bytes()),
    });
    let manifest = serde_json::to_string_pretty(&manifest)? + "\n";
    dataset.write_dir(&args.out)?;
    write(&args.out.join("manifest.json"), &manifest)?;
    println!(
        "wrote {} patients to {} (manifest sha256 {})",
        dataset.records.len(),
        args.out.display(),
        sha256_hex(manifest.as_bytes())
    );
    Ok(())
}

fn categories_path(explicit: Option<&PathBuf>, data: &Path) -> PathBuf {
    explicit
        .cloned()
        .unwrap_or_else(|| data.parent().unwrap_or(Path::new(".")).join(CATEGORIES_FILE))
}

fn load_categories(path: &Path) -> Result<CategoryMap> {
    Ok(CategoryMap::load(path)?)
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let cfg = RunConfig::load(&args.config)?;
    let variant: Variant = args.variant.parse()?;
    let data = args
        .data
        .clone()
        .or(cfg.claims.clone())
        .context("no training data: pass --data or set data.claims")?;
    let categories = load_categories(&categories_path(args.categories.as_ref().or(cfg.categories.as_ref()), &data))?;
    let records = load_claims(&data)?;
    let outcome = train_variant(variant, &records, &categories, &cfg.model, &cfg.train)?;
    let history = args
        .history
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.loss.csv", args.out.display())));
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    save_checkpoint(&outcome.state, &args.out)?;
    write_loss_history(&outcome.history, &history)?;
    let first = outcome.history.first().expect("at least one step");
    let last = outcome.history.last().expect("at least one step");
    println!(
        "{variant}: {} steps, loss {:.4e} -> {:.4e} (code {:.5}, cost {:.4}); checkpoint {}",
        outcome.history.len(),
        first.l_loss,
        last.l_loss,
        last.l_code,
        last.l_cost,
        args.out.display()
    );
    if let Some(ratio) = outcome.balance_ratio {
        println!("lambda*L_code / L_cost = {ratio:.3e}");
    }
    Ok(())
}

/// Every code of `records` must exist in `vocab` with the same category.
fn check_subset(data_vocab: &CodeVocabulary, vocab: &CodeVocabulary) -> Result<()> {
    for m in Modality::ALL {
        for i in 0..data_vocab.size(m) {
            let code = data_vocab.code_at(m, i).expect("index in range");
            let Some(j) = vocab.index_of(m, code) else {
                bail!(tmae::Error::UnknownCode {
                    code: code.to_string(),
                    modality: m.to_string(),
                });
            };
            let ours = data_vocab.category_of(m, i).and_then(|c| data_vocab.category_name(c));
            let theirs = vocab.category_of(m, j).and_then(|c| vocab.category_name(c));
            if ours != theirs {
                bail!(tmae::Error::invalid(format!("{m} code {code} has a different category in the checkpoint")));
            }
        }
    }
    Ok(())
}

pub fn embed(args: &EmbedArgs) -> Result<()> {
    let state = load_checkpoint(&args.ckpt)?;
    let records = load_claims(&args.data)?;
    let categories = load_categories(&categories_path(args.categories.as_ref(), &args.data))?;
    let data_vocab = build_vocabulary(&records, &categories)?;
    if args.allow_subset {
        check_subset(&data_vocab, &state.vocab)?;
    } else {
        state.ensure_fingerprint(&data_vocab.fingerprint())?;
    }
    let rows = state.embed_all(&records)?;
    let ids: Vec<String> = records.iter().map(|r| r.patient_id.clone()).collect();
    write(&args.out, embeddings_csv(&ids, &rows))?;
    println!("wrote {} embeddings of width {} to {}", rows.len(), state.config.d, args.out.display());
    Ok(())
}

fn fmt_metric(r: tmae::Result<f64>) -> String {
    match r {
        Ok(v) => format!("{v:.6}"),
        Err(e) => format!("NA ({e})"),
    }
}

pub fn cluster(args: &ClusterArgs) -> Result<()> {
    let (ids, points) = read_embeddings(&args.embeddings)?;
    if points.is_empty() {
        bail!(tmae::Error::invalid("embeddings file has no rows"));
    }
    let truth = args.labels.as_ref().map(|p| read_assignments(p)).transpose()?;
    let (k, elbow) = match (args.k, args.elbow) {
        (Some(k), _) => (k, None),
        (None, _) => {
            let k_max = args.k_max.context("--elbow requires --k-max")?;
            let e = elbow_select(&points, args.k_min..=k_max, args.seed)?;
            (e.k, Some(e))
        }
    };
    let result = kmeans(&points, k, args.seed)?;
    let clusters = cluster_labels(&result.assignments);
    let ch = fmt_metric(calinski_harabasz(&points, &result.assignments));
    let db = fmt_metric(davies_bouldin(&points, &result.assignments));
    let plot_labels: Vec<String> = match &truth {
        Some(t) => ids
            .iter()
            .map(|id| t.get(id).cloned().with_context(|| format!("no label for {id}")))
            .collect::<Result<_>>()?,
        None => clusters.clone(),
    };
    let dim = 2.min(points[0].len()).min(points.len());
    let (xy, _) = pca_fit_transform(&points, dim)?;

    write(&args.out.join("assignments.tsv"), assignments_tsv(&ids, &clusters))?;
    if let Some(e) = &elbow {
        write(&args.out.join("wss_curve.csv"), wss_curve_csv(&e.curve))?;
        println!("elbow: chosen k = {}", e.k);
        for (kk, w) in &e.curve {
            println!("  k = {kk:>2}  WSS = {w:.6}");
        }
    }
    let metrics = format!("k={k} wss={:.6} C-H={ch} D-B={db}\n", result.wss);
    write(&args.out.join("metrics.txt"), &metrics)?;
    write(&args.out.join("plot.csv"), plot_csv(&ids, &xy, &plot_labels))?;
    print!("{metrics}");
    Ok(())
}

pub fn report(args: &ReportArgs) -> Result<()> {
    let records = load_claims(&args.data)?;
    let text = fs::read_to_string(&args.assignments).with_context(|| format!("reading {}", args.assignments.display()))?;
    let assignments = parse_labels(&text)?;
    let table = cohort_report(&records, &assignments)?.to_tsv();
    if let Some(out) = &args.out {
        write(out, &table)?;
    }
    print!("{table}");
    Ok(())
}

pub fn gradcheck(args: &GradcheckArgs) -> Result<()> {
    let variant: Variant = args.variant.parse()?;
    let cfg = variant.apply(&ModelConfig::with_width(args.d, args.heads));
    let report = check::tmae_grad_check(&cfg, args.seed, args.eps)?;
    let verdict = if report.passed() { "PASS" } else { "FAIL" };
    println!(
        "max relative error {:.3e} over {} coordinates ({} patients, tolerance {:.0e}): {verdict}",
        report.max_relative_error,
        report.coordinates,
        report.patients,
        check::TOLERANCE
    );
    if !report.passed() {
        bail!("gradient check failed");
    }
    Ok(())
}

pub fn benchmark(args: &BenchmarkArgs) -> Result<()> {
    let mut cfg = BenchmarkConfig::with_seed(args.seed);
    cfg.n_per_cohort = args.n_per_cohort;
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    let report = run_benchmark(&cfg)?;
    if let Some(out) = &args.out {
        write(out, serde_json::to_string_pretty(&report)? + "\n")?;
    }
    print!("{}", report.to_table());
    Ok(())
}
