//! The five official metrics (Pearson R, Spearman Rho, MAE, MSE, R2),
//! whole-set and per-domain evaluation reports, and the plot-ready
//! analysis exports.
//!
//! Degenerate inputs (zero variance) raise an error instead of quietly
//! returning 0 — a constant prediction vector is a pipeline bug worth
//! surfacing, not a score.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{partition_by_domain, Dataset, Domain};
use crate::error::{Error, Result};

fn check_paired(a: &[f64], b: &[f64], min_len: usize) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < min_len {
        return Err(Error::invalid(format!(
            "need at least {min_len} paired values, got {}",
            a.len()
        )));
    }
    Ok(())
}

/// Sample Pearson correlation. Errors when either sequence has zero
/// variance (the correlation is undefined there).
pub fn pearson(pred: &[f64], gold: &[f64]) -> Result<f64> {
    check_paired(pred, gold, 2)?;
    let n = pred.len() as f64;
    let mean_p = pred.iter().sum::<f64>() / n;
    let mean_g = gold.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_p = 0.0;
    let mut var_g = 0.0;
    for (p, g) in pred.iter().zip(gold) {
        let dp = p - mean_p;
        let dg = g - mean_g;
        cov += dp * dg;
        var_p += dp * dp;
        var_g += dg * dg;
    }
    if var_p == 0.0 || var_g == 0.0 {
        return Err(Error::Undefined(
            "Pearson correlation undefined: zero variance input".into(),
        ));
    }
    Ok(cov / (var_p.sqrt() * var_g.sqrt()))
}

/// Average fractional ranks (1-based); ties share the mean of the ranks
/// they span.
fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share the average 1-based rank
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson on average fractional ranks.
pub fn spearman(pred: &[f64], gold: &[f64]) -> Result<f64> {
    check_paired(pred, gold, 2)?;
    pearson(&fractional_ranks(pred), &fractional_ranks(gold))
}

pub fn mae(pred: &[f64], gold: &[f64]) -> Result<f64> {
    check_paired(pred, gold, 1)?;
    let n = pred.len() as f64;
    Ok(pred.iter().zip(gold).map(|(p, g)| (p - g).abs()).sum::<f64>() / n)
}

pub fn mse(pred: &[f64], gold: &[f64]) -> Result<f64> {
    check_paired(pred, gold, 1)?;
    let n = pred.len() as f64;
    Ok(pred
        .iter()
        .zip(gold)
        .map(|(p, g)| (p - g) * (p - g))
        .sum::<f64>()
        / n)
}

/// Coefficient of determination: 1 − Σ(g−p)²/Σ(g−ḡ)². May be negative
/// for predictions worse than the mean baseline.
pub fn r2(pred: &[f64], gold: &[f64]) -> Result<f64> {
    check_paired(pred, gold, 2)?;
    let n = gold.len() as f64;
    let mean_g = gold.iter().sum::<f64>() / n;
    let ss_tot: f64 = gold.iter().map(|g| (g - mean_g) * (g - mean_g)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Undefined("R2 undefined: zero gold variance".into()));
    }
    let ss_res: f64 = pred
        .iter()
        .zip(gold)
        .map(|(p, g)| (g - p) * (g - p))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Instance id → predicted score in [0,1]. Insertion validates range and
/// uniqueness; iteration order is sorted by id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    scores: BTreeMap<String, f64>,
}

impl PredictionSet {
    pub fn new() -> Self {
        PredictionSet::default()
    }

    pub fn insert(&mut self, id: &str, score: f64) -> Result<()> {
        if !score.is_finite() || !(0.0..=1.0).contains(&score) {
            return Err(Error::invalid(format!(
                "prediction {score} for '{id}' outside [0, 1]"
            )));
        }
        if self.scores.insert(id.to_string(), score).is_some() {
            return Err(Error::invalid(format!("duplicate prediction id '{id}'")));
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<f64> {
        self.scores.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, f64)> {
        self.scores.iter().map(|(k, v)| (k, *v))
    }

    pub fn ids(&self) -> impl Iterator<Item = &String> {
        self.scores.keys()
    }

    /// Writes `id,prediction` CSV. Scores use the shortest decimal form
    /// that round-trips, so save → load is lossless.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::from("id,prediction\n");
        for (id, score) in &self.scores {
            out.push_str(id);
            out.push(',');
            out.push_str(&score.to_string());
            out.push('\n');
        }
        crate::pipeline::write_atomic(path.as_ref(), out.as_bytes())
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let fname = path.display().to_string();
        let mut lines = BufReader::new(file).lines().enumerate();
        match lines.next() {
            Some((_, Ok(h))) if h.trim_end() == "id,prediction" => {}
            Some((_, Ok(h))) => {
                return Err(Error::parse(&fname, 1, format!("unexpected header '{h}'")))
            }
            Some((_, Err(e))) => return Err(Error::io(path, e)),
            None => return Err(Error::parse(&fname, 1, "empty prediction file")),
        }
        let mut set = PredictionSet::new();
        for (lineno, line) in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.is_empty() {
                continue;
            }
            let row = lineno + 1;
            let (id, score) = line
                .split_once(',')
                .ok_or_else(|| Error::parse(&fname, row, "expected id,prediction"))?;
            let score: f64 = score
                .parse()
                .map_err(|_| Error::parse(&fname, row, format!("unparseable score '{score}'")))?;
            set.insert(id, score)
                .map_err(|e| Error::parse(&fname, row, e.to_string()))?;
        }
        Ok(set)
    }
}

/// The five metrics over one instance set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricBlock {
    pub pearson: f64,
    pub spearman: f64,
    pub mae: f64,
    pub mse: f64,
    pub r2: f64,
    pub count: usize,
}

impl MetricBlock {
    pub fn compute(pred: &[f64], gold: &[f64]) -> Result<MetricBlock> {
        Ok(MetricBlock {
            pearson: pearson(pred, gold)?,
            spearman: spearman(pred, gold)?,
            mae: mae(pred, gold)?,
            mse: mse(pred, gold)?,
            r2: r2(pred, gold)?,
            count: pred.len(),
        })
    }
}

/// Whole-set metrics plus per-domain blocks. Domains with fewer than two
/// instances (or degenerate values) are simply absent from the map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    #[serde(flatten)]
    pub overall: MetricBlock,
    pub per_domain: BTreeMap<Domain, MetricBlock>,
}

impl EvaluationReport {
    /// Single fixed-order line for diffing: R, Rho, MAE, MSE, R2, count.
    pub fn tsv_line(&self) -> String {
        let m = &self.overall;
        format!(
            "{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}",
            m.pearson, m.spearman, m.mae, m.mse, m.r2, m.count
        )
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_vec_pretty(self)
            .map_err(|e| Error::invalid(format!("report serialization failed: {e}")))?;
        crate::pipeline::write_atomic(path.as_ref(), &json)
    }
}

fn paired_vectors(preds: &PredictionSet, gold: &Dataset) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut p = Vec::with_capacity(gold.len());
    let mut g = Vec::with_capacity(gold.len());
    for inst in &gold.instances {
        let label = inst
            .gold
            .ok_or_else(|| Error::invalid(format!("instance '{}' has no gold label", inst.id)))?;
        let score = preds
            .get(&inst.id)
            .ok_or_else(|| Error::invalid(format!("no prediction for instance '{}'", inst.id)))?;
        p.push(score);
        g.push(label);
    }
    Ok((p, g))
}

/// Whole-set and per-domain metric blocks against a labeled dataset.
pub fn evaluate(preds: &PredictionSet, gold: &Dataset) -> Result<EvaluationReport> {
    let (p, g) = paired_vectors(preds, gold)?;
    let overall = MetricBlock::compute(&p, &g)?;
    let mut per_domain = BTreeMap::new();
    for (domain, subset) in partition_by_domain(gold) {
        if subset.len() < 2 {
            continue;
        }
        let (dp, dg) = paired_vectors(preds, &subset)?;
        if let Ok(block) = MetricBlock::compute(&dp, &dg) {
            per_domain.insert(domain, block);
        }
    }
    Ok(EvaluationReport { overall, per_domain })
}

pub const HISTOGRAM_BIN_WIDTH: f64 = 0.05;

/// Writes the three analysis files: a per-instance scatter CSV, a
/// score-distribution histogram CSV (bin width 0.05 over [0,1]), and a
/// per-domain MAE/Pearson table CSV. Returns the paths written.
pub fn export_analysis(
    preds: &PredictionSet,
    gold: &Dataset,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    let (p, g) = paired_vectors(preds, gold)?;

    let mut scatter = String::from("id,domain,prediction,gold\n");
    for (inst, (pv, gv)) in gold.instances.iter().zip(p.iter().zip(&g)) {
        scatter.push_str(&format!("{},{},{},{}\n", inst.id, inst.domain, pv, gv));
    }
    let scatter_path = out_dir.join("scatter.csv");
    crate::pipeline::write_atomic(&scatter_path, scatter.as_bytes())?;

    let bins = (1.0 / HISTOGRAM_BIN_WIDTH).round() as usize;
    let mut pred_counts = vec![0usize; bins];
    let mut gold_counts = vec![0usize; bins];
    let bin_of = |v: f64| ((v / HISTOGRAM_BIN_WIDTH) as usize).min(bins - 1);
    for (pv, gv) in p.iter().zip(&g) {
        pred_counts[bin_of(*pv)] += 1;
        gold_counts[bin_of(*gv)] += 1;
    }
    let mut hist = String::from("bin_start,bin_end,prediction_count,gold_count\n");
    for b in 0..bins {
        hist.push_str(&format!(
            "{:.2},{:.2},{},{}\n",
            b as f64 * HISTOGRAM_BIN_WIDTH,
            (b + 1) as f64 * HISTOGRAM_BIN_WIDTH,
            pred_counts[b],
            gold_counts[b]
        ));
    }
    let hist_path = out_dir.join("histogram.csv");
    crate::pipeline::write_atomic(&hist_path, hist.as_bytes())?;

    let mut per_domain = String::from("domain,count,mae,pearson\n");
    for (domain, subset) in partition_by_domain(gold) {
        if subset.is_empty() {
            continue;
        }
        let (dp, dg) = paired_vectors(preds, &subset)?;
        let mae_cell = mae(&dp, &dg).map(|v| format!("{v:.6}")).unwrap_or_default();
        let r_cell = pearson(&dp, &dg).map(|v| format!("{v:.6}")).unwrap_or_default();
        per_domain.push_str(&format!("{},{},{},{}\n", domain, subset.len(), mae_cell, r_cell));
    }
    let domain_path = out_dir.join("per_domain.csv");
    crate::pipeline::write_atomic(&domain_path, per_domain.as_bytes())?;

    Ok(vec![scatter_path, hist_path, domain_path])
}
