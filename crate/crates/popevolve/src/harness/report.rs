//! Report emission over one or more completed runs: a summary JSON, a
//! per-iteration accuracy curve CSV, a per-iteration cost ledger CSV, an
//! ablation CSV when runs differ only in population size, and a pass@k
//! table when baseline runs are present. Every number is recomputed from
//! the event logs and outcomes; nothing is carried over from summaries.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::domain::StrategyKind;
use crate::harness::dataset::{ingest_dataset, Dataset};
use crate::harness::run::load_run;
use crate::harness::HarnessError;
use crate::metrics::{
    aggregate_trials, pass_at_k, score_run, AggregateReport, CurvePoint, LedgerRow,
};
use crate::record::{RunRecord, SCHEMA_VERSION};

#[derive(Debug, Clone)]
pub struct ReportOptions {
    pub out_dir: PathBuf,
    /// Re-reads the dataset from here instead of the path stored in the run
    /// configs (useful when runs moved between machines).
    pub dataset_override: Option<PathBuf>,
    /// Keep iteration 0 in the ledger CSV. The initial generation phase is
    /// shared by every method, so cost comparisons often drop it.
    pub include_iteration_zero: bool,
}

#[derive(Debug, Clone)]
pub struct ReportFiles {
    pub summary: PathBuf,
    pub curve: PathBuf,
    pub ledger: PathBuf,
    pub ablation: Option<PathBuf>,
    pub passk: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MethodReport {
    method: String,
    strategy: crate::domain::StrategySpec,
    trials: usize,
    run_ids: Vec<String>,
    master_seeds: Vec<u64>,
    accuracy_mean_pct: f64,
    accuracy_std_pct: f64,
    curve: Vec<CurvePoint>,
    ledger: Vec<LedgerRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pass_at_k_pct: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ReportSummary {
    schema_version: u32,
    dataset_name: String,
    dataset_sha256: String,
    problems: usize,
    methods: Vec<MethodReport>,
}

fn method_tag(spec: &crate::domain::StrategySpec) -> String {
    match spec.kind {
        StrategyKind::PopulationEvolve => {
            format!("population_evolve-P{}-T{}", spec.population_size, spec.max_iterations)
        }
        StrategyKind::Dser => format!("dser-T{}", spec.max_iterations),
        StrategyKind::GenSelect => {
            format!("genselect-P{}-R{}", spec.population_size, spec.selection_rounds)
        }
        StrategyKind::Baseline => format!("baseline-k{}", spec.population_size),
    }
}

/// Pooled pass@k over every baseline record: per problem, rollout counts
/// from every trial are combined before the unbiased estimate, and the
/// table runs k = 1 ..= min pooled n.
fn pooled_pass_at_k(
    records: &[&RunRecord],
    dataset: &Dataset,
) -> Result<BTreeMap<String, f64>, HarnessError> {
    let mut per_problem: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    for record in records {
        let score = score_run(record, dataset)?;
        for problem in &score.scores {
            let entry = per_problem.entry(problem.problem_id.clone()).or_insert((0, 0));
            entry.0 += problem.n;
            entry.1 += problem.c;
        }
    }
    let mut table = BTreeMap::new();
    let Some(min_n) = per_problem.values().map(|(n, _)| *n).min().filter(|n| *n > 0) else {
        return Ok(table);
    };
    for k in 1..=min_n {
        let mut sum = 0.0;
        for (n, c) in per_problem.values() {
            sum += pass_at_k(*n, *c, k).map_err(HarnessError::Metrics)?;
        }
        table.insert(format!("pass@{k}"), sum / per_problem.len() as f64 * 100.0);
    }
    Ok(table)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>, HarnessError> {
    let mut file = File::create(path)?;
    writeln!(file, "# schema_version={SCHEMA_VERSION}")?;
    Ok(csv::Writer::from_writer(file))
}

/// Loads the given run directories, groups them into trial sets (identical
/// configuration, different master seeds), and writes the report files.
/// Runs recorded against different datasets refuse to mix.
pub fn emit_report(
    run_dirs: &[PathBuf],
    options: &ReportOptions,
) -> Result<ReportFiles, HarnessError> {
    if run_dirs.is_empty() {
        return Err(HarnessError::Refused("no run directories given".into()));
    }
    let records: Vec<RunRecord> =
        run_dirs.iter().map(|d| load_run(d)).collect::<Result<_, _>>()?;

    let first_hash = &records[0].config.dataset_sha256;
    if let Some(clash) = records.iter().find(|r| &r.config.dataset_sha256 != first_hash) {
        return Err(HarnessError::Refused(format!(
            "incompatible runs: {} and {} were recorded against different datasets",
            records[0].config.run_id, clash.config.run_id
        )));
    }

    let dataset_path = options
        .dataset_override
        .clone()
        .unwrap_or_else(|| PathBuf::from(&records[0].config.dataset_path));
    let dataset = ingest_dataset(&dataset_path)?;
    if &dataset.sha256 != first_hash {
        return Err(HarnessError::Refused(format!(
            "dataset at {} does not match the runs' recorded fingerprint",
            dataset_path.display()
        )));
    }

    // Trial groups: identical strategy/params/budget, any master seed.
    let mut groups: BTreeMap<String, Vec<&RunRecord>> = BTreeMap::new();
    for record in &records {
        let key = serde_json::to_string(&(
            &record.config.strategy,
            &record.config.params,
            record.config.evolve_budget_chars,
            record.config.backend.label(),
        ))?;
        groups.entry(key).or_default().push(record);
    }

    std::fs::create_dir_all(&options.out_dir)?;
    let mut methods = Vec::new();
    for group in groups.values() {
        let aggregate: AggregateReport = aggregate_trials(group, &dataset)?;
        let spec = group[0].config.strategy.clone();
        let pass_table = (spec.kind == StrategyKind::Baseline)
            .then(|| pooled_pass_at_k(group, &dataset))
            .transpose()?;
        methods.push(MethodReport {
            method: method_tag(&spec),
            strategy: spec,
            trials: group.len(),
            run_ids: group.iter().map(|r| r.config.run_id.clone()).collect(),
            master_seeds: group.iter().map(|r| r.config.master_seed).collect(),
            accuracy_mean_pct: aggregate.accuracy_mean_pct,
            accuracy_std_pct: aggregate.accuracy_std_pct,
            curve: aggregate.curve,
            ledger: aggregate.ledger,
            pass_at_k_pct: pass_table,
        });
    }

    let summary_path = options.out_dir.join("summary.json");
    let summary = ReportSummary {
        schema_version: SCHEMA_VERSION,
        dataset_name: dataset.name.clone(),
        dataset_sha256: dataset.sha256.clone(),
        problems: dataset.problems.len(),
        methods,
    };
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)?;

    let curve_path = options.out_dir.join("curve.csv");
    let mut curve_csv = csv_writer(&curve_path)?;
    curve_csv.write_record([
        "method",
        "population_size",
        "max_iterations",
        "trials",
        "iteration",
        "mean_accuracy_pct",
        "std_accuracy_pct",
    ])?;
    for method in &summary.methods {
        for point in &method.curve {
            curve_csv.write_record([
                method.method.as_str(),
                &method.strategy.population_size.to_string(),
                &method.strategy.max_iterations.to_string(),
                &method.trials.to_string(),
                &point.iteration.to_string(),
                &format!("{:.2}", point.mean_pct),
                &format!("{:.2}", point.std_pct),
            ])?;
        }
    }
    curve_csv.flush()?;

    let ledger_path = options.out_dir.join("ledger.csv");
    let mut ledger_csv = csv_writer(&ledger_path)?;
    ledger_csv.write_record([
        "method",
        "iteration",
        "requests",
        "prompt_tokens",
        "completion_tokens",
        "wall_time_ms",
    ])?;
    for method in &summary.methods {
        for row in &method.ledger {
            if row.iteration == 0 && !options.include_iteration_zero {
                continue;
            }
            ledger_csv.write_record([
                method.method.as_str(),
                &row.iteration.to_string(),
                &row.requests.to_string(),
                &row.prompt_tokens.to_string(),
                &row.completion_tokens.to_string(),
                &row.wall_time_ms.to_string(),
            ])?;
        }
    }
    ledger_csv.flush()?;

    // Ablation across population sizes, per strategy kind.
    let mut kinds_with_multiple_p: BTreeSet<String> = BTreeSet::new();
    {
        let mut sizes: BTreeMap<String, BTreeSet<u32>> = BTreeMap::new();
        for method in &summary.methods {
            sizes
                .entry(method.strategy.kind.to_string())
                .or_default()
                .insert(method.strategy.population_size);
        }
        for (kind, populations) in sizes {
            if populations.len() >= 2 {
                kinds_with_multiple_p.insert(kind);
            }
        }
    }
    let ablation = if kinds_with_multiple_p.is_empty() {
        None
    } else {
        let path = options.out_dir.join("ablation.csv");
        let mut csv = csv_writer(&path)?;
        csv.write_record(["kind", "population_size", "iteration", "mean_accuracy_pct"])?;
        for method in &summary.methods {
            let kind = method.strategy.kind.to_string();
            if !kinds_with_multiple_p.contains(&kind) {
                continue;
            }
            for point in &method.curve {
                csv.write_record([
                    kind.as_str(),
                    &method.strategy.population_size.to_string(),
                    &point.iteration.to_string(),
                    &format!("{:.2}", point.mean_pct),
                ])?;
            }
        }
        csv.flush()?;
        Some(path)
    };

    let passk = {
        let tables: Vec<(&str, &BTreeMap<String, f64>)> = summary
            .methods
            .iter()
            .filter_map(|m| m.pass_at_k_pct.as_ref().map(|t| (m.method.as_str(), t)))
            .collect();
        if tables.is_empty() {
            None
        } else {
            let path = options.out_dir.join("passk.csv");
            let mut csv = csv_writer(&path)?;
            csv.write_record(["method", "k", "pass_at_k_pct"])?;
            for (method, table) in tables {
                let mut rows: Vec<(u64, f64)> = table
                    .iter()
                    .filter_map(|(key, v)| {
                        key.strip_prefix("pass@").and_then(|k| k.parse().ok()).map(|k| (k, *v))
                    })
                    .collect();
                rows.sort_unstable_by_key(|(k, _)| *k);
                for (k, pct) in rows {
                    csv.write_record([method, &k.to_string(), &format!("{pct:.2}")])?;
                }
            }
            csv.flush()?;
            Some(path)
        }
    };

    Ok(ReportFiles {
        summary: summary_path,
        curve: curve_path,
        ledger: ledger_path,
        ablation,
        passk,
    })
}
