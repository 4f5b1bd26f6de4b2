//! Ranking metrics, embedding alignment, subgroup breakdowns and Integrated
//! Gradients attribution.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var, EPS};
use crate::error::{Error, Result};
use crate::stats::average_ranks;

fn check_lengths(op: &'static str, scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::dim(
            op,
            format!("{} scores for {} labels", scores.len(), labels.len()),
        ));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Domain {
            op,
            detail: format!("non-finite score {s}"),
        });
    }
    Ok(())
}

/// Mann–Whitney AUROC; ties between a positive and a negative count one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths("auroc", scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Degenerate(format!(
            "auroc needs both classes, got {n_pos} positives and {n_neg} negatives"
        )));
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let p = n_pos as f64;
    let u = rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * n_neg as f64))
}

/// Average precision: `Σ_k (R_k − R_{k−1}) · P_k` over distinct score thresholds,
/// highest first, with no interpolation between points.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths("auprc", scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return Err(Error::Degenerate("auprc needs at least one positive".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentEntry {
    pub patient_id: String,
    pub modality_id: String,
    pub embedding: Vec<f64>,
}

/// Pooled embeddings from every modality; one entry per (patient, modality).
#[derive(Clone, Debug, Default)]
pub struct AlignmentCorpus {
    entries: Vec<AlignmentEntry>,
}

impl AlignmentCorpus {
    pub fn new(entries: Vec<AlignmentEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        let dim = entries.first().map_or(0, |e| e.embedding.len());
        for e in &entries {
            if !seen.insert((e.patient_id.as_str(), e.modality_id.as_str())) {
                return Err(Error::Contract(format!(
                    "duplicate alignment entry for patient {} modality {}",
                    e.patient_id, e.modality_id
                )));
            }
            if e.embedding.len() != dim {
                return Err(Error::dim(
                    "alignment_corpus",
                    format!("embedding width {} vs {dim}", e.embedding.len()),
                ));
            }
            let norm = e.embedding.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > EPS) {
                return Err(Error::Degenerate(format!(
                    "zero-norm embedding for patient {} modality {}",
                    e.patient_id, e.modality_id
                )));
            }
        }
        Ok(Self { entries })
    }

    /// Builds a corpus from per-modality `[N, n]` matrices whose rows follow `patient_ids`.
    pub fn from_matrices(patient_ids: &[String], modalities: &[(String, Tensor)]) -> Result<Self> {
        let mut entries = Vec::with_capacity(patient_ids.len() * modalities.len());
        for (name, m) in modalities {
            if m.rows() != patient_ids.len() {
                return Err(Error::dim(
                    "alignment_corpus",
                    format!("{name} has {} rows for {} patients", m.rows(), patient_ids.len()),
                ));
            }
            for (r, pid) in patient_ids.iter().enumerate() {
                entries.push(AlignmentEntry {
                    patient_id: pid.clone(),
                    modality_id: name.clone(),
                    embedding: m.row(r).to_vec(),
                });
            }
        }
        Self::new(entries)
    }

    pub fn entries(&self) -> &[AlignmentEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub const ALIGNMENT_NEIGHBORS: usize = 5;

/// Fraction of entries with a same-patient entry among their five nearest
/// cosine neighbours in the pooled space. Equal similarities keep corpus order.
pub fn top5_alignment_accuracy(corpus: &AlignmentCorpus) -> Result<f64> {
    let n = corpus.len();
    if n < ALIGNMENT_NEIGHBORS + 2 {
        return Err(Error::Contract(format!(
            "top-5 alignment needs at least {} entries, got {n}",
            ALIGNMENT_NEIGHBORS + 2
        )));
    }
    let unit: Vec<Vec<f64>> = corpus
        .entries
        .iter()
        .map(|e| {
            let norm = e.embedding.iter().map(|v| v * v).sum::<f64>().sqrt();
            e.embedding.iter().map(|v| v / norm).collect()
        })
        .collect();
    let mut hits = 0usize;
    let mut sims: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        sims.clear();
        for j in (0..n).filter(|&j| j != i) {
            let s: f64 = unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum();
            sims.push((s, j));
        }
        // partial_cmp so that 0.0 and -0.0 tie; similarities are finite here
        sims.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite").then(a.1.cmp(&b.1)));
        let pid = &corpus.entries[i].patient_id;
        if sims[..ALIGNMENT_NEIGHBORS]
            .iter()
            .any(|&(_, j)| &corpus.entries[j].patient_id == pid)
        {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub task: String,
    pub auroc: f64,
    pub auprc: f64,
    pub seed: u64,
    pub group_key: Option<String>,
    pub label_group: Option<String>,
}

impl MetricsRecord {
    pub fn binary(task: impl Into<String>, seed: u64, scores: &[f64], labels: &[bool]) -> Result<Self> {
        Ok(Self {
            task: task.into(),
            auroc: auroc(scores, labels)?,
            auprc: auprc(scores, labels)?,
            seed,
            group_key: None,
            label_group: None,
        })
    }

    /// Macro average over labels of a row-major `[N, L]` score matrix.
    /// Labels lacking a class are left out; all of them lacking one is an error.
    pub fn multilabel(
        task: impl Into<String>,
        seed: u64,
        scores: &Tensor,
        labels: &[bool],
    ) -> Result<Self> {
        let per_label = per_label_metrics(scores, labels)?;
        let valid: Vec<(f64, f64)> = per_label.into_iter().flatten().collect();
        if valid.is_empty() {
            return Err(Error::Degenerate("no label has both classes".into()));
        }
        let k = valid.len() as f64;
        Ok(Self {
            task: task.into(),
            auroc: valid.iter().map(|v| v.0).sum::<f64>() / k,
            auprc: valid.iter().map(|v| v.1).sum::<f64>() / k,
            seed,
            group_key: None,
            label_group: None,
        })
    }
}

/// `(auroc, auprc)` for each column, `None` where a column lacks a class.
pub fn per_label_metrics(scores: &Tensor, labels: &[bool]) -> Result<Vec<Option<(f64, f64)>>> {
    let (n, l) = scores
        .as_matrix_dims()
        .ok_or_else(|| Error::dim("per_label_metrics", "scores must be a matrix"))?;
    if labels.len() != n * l {
        return Err(Error::dim(
            "per_label_metrics",
            format!("{} labels for [{n}, {l}] scores", labels.len()),
        ));
    }
    let mut out = Vec::with_capacity(l);
    for c in 0..l {
        let s: Vec<f64> = (0..n).map(|r| scores.data()[r * l + c]).collect();
        let y: Vec<bool> = (0..n).map(|r| labels[r * l + c]).collect();
        out.push(match (auroc(&s, &y), auprc(&s, &y)) {
            (Ok(a), Ok(p)) => Some((a, p)),
            _ => None,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroupwiseMetrics {
    pub records: BTreeMap<String, MetricsRecord>,
    /// Groups whose metrics could not be computed, with the reason.
    pub skipped: Vec<(String, String)>,
}

/// Applies `metrics_fn` to each group's samples separately.
pub fn groupwise<F>(metrics_fn: F, scores: &[f64], labels: &[bool], groups: &[String]) -> Result<GroupwiseMetrics>
where
    F: Fn(&[f64], &[bool]) -> Result<MetricsRecord>,
{
    check_lengths("groupwise", scores, labels)?;
    if groups.len() != scores.len() {
        return Err(Error::dim(
            "groupwise",
            format!("{} group tags for {} scores", groups.len(), scores.len()),
        ));
    }
    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        members.entry(g.as_str()).or_default().push(i);
    }
    let mut out = GroupwiseMetrics::default();
    for (g, idx) in members {
        let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let y: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
        match metrics_fn(&s, &y) {
            Ok(mut rec) => {
                rec.group_key = Some(g.to_string());
                out.records.insert(g.to_string(), rec);
            }
            Err(e) => out.skipped.push((g.to_string(), e.to_string())),
        }
    }
    Ok(out)
}

/// Unweighted mean of per-label values within each group.
pub fn label_group_aggregate(
    per_label: &BTreeMap<String, f64>,
    grouping: &BTreeMap<String, String>,
) -> Result<BTreeMap<String, f64>> {
    let mut sums: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for (label, value) in per_label {
        let group = grouping
            .get(label)
            .ok_or_else(|| Error::Contract(format!("label {label} has no group")))?;
        let e = sums.entry(group.as_str()).or_insert((0.0, 0));
        e.0 += value;
        e.1 += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(g, (s, c))| (g.to_string(), s / c as f64))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub per_feature: Vec<f64>,
    /// Filled by [`AttributionReport::aggregate`].
    pub per_modality: Vec<f64>,
    pub baseline: Vec<f64>,
    pub steps: usize,
    /// `f(x) − f(baseline)`.
    pub output_delta: f64,
    /// `|Σ IG − (f(x) − f(baseline))|`.
    pub completeness_residual: f64,
}

impl AttributionReport {
    pub fn aggregate(&mut self, layout: &[ModalitySlice]) -> Result<&[f64]> {
        self.per_modality = modality_aggregate(self, layout)?;
        Ok(&self.per_modality)
    }
}

/// Integrated Gradients with a right-endpoint Riemann sum over `steps` points.
///
/// `model` receives a `[S, f]` batch and must return one output per row
/// (`[S]` or `[S, 1]`), treating rows independently; every path point plus
/// the two endpoints is evaluated in a single batch.
pub fn integrated_gradients<F>(model: F, input: &[f64], baseline: &[f64], steps: usize) -> Result<AttributionReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if steps < 2 {
        return Err(Error::Contract(format!("integrated gradients needs steps >= 2, got {steps}")));
    }
    if input.len() != baseline.len() || input.is_empty() {
        return Err(Error::dim(
            "integrated_gradients",
            format!("input width {} vs baseline width {}", input.len(), baseline.len()),
        ));
    }
    let f = input.len();
    let rows = steps + 2;
    let mut path = Vec::with_capacity(rows * f);
    for s in 1..=steps {
        let alpha = s as f64 / steps as f64;
        path.extend(baseline.iter().zip(input).map(|(b, x)| b + alpha * (x - b)));
    }
    path.extend_from_slice(input);
    path.extend_from_slice(baseline);

    let mut tape = Tape::new();
    let x = tape.variable(Tensor::matrix(rows, f, path)?);
    let out = model(&mut tape, x)?;
    let out_shape = tape.shape(out).to_vec();
    if tape.value(out).numel() != rows {
        return Err(Error::Contract(format!(
            "attributed output must be one value per row, got shape {out_shape:?} for {rows} rows"
        )));
    }
    let values = tape.value(out).data().to_vec();
    let total = tape.sum(out);
    tape.backward(total)?;
    // no gradient means the output ignores the input entirely
    let grads = tape
        .grad(x)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; rows * f]);

    // running mean: a constant gradient (linear model) comes back bit-exact
    let mut per_feature = vec![0.0; f];
    for s in 0..steps {
        let k = (s + 1) as f64;
        for (m, g) in per_feature.iter_mut().zip(&grads[s * f..(s + 1) * f]) {
            *m += (g - *m) / k;
        }
    }
    for ((a, x), b) in per_feature.iter_mut().zip(input).zip(baseline) {
        *a *= x - b;
    }
    let output_delta = values[steps] - values[steps + 1];
    let completeness_residual = (per_feature.iter().sum::<f64>() - output_delta).abs();
    Ok(AttributionReport {
        per_feature,
        per_modality: Vec::new(),
        baseline: baseline.to_vec(),
        steps,
        output_delta,
        completeness_residual,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalitySlice {
    pub name: String,
    pub start: usize,
    pub width: usize,
}

/// Consecutive slices of the given widths, in order.
pub fn contiguous_layout(parts: &[(String, usize)]) -> Vec<ModalitySlice> {
    let mut start = 0;
    parts
        .iter()
        .map(|(name, width)| {
            let s = ModalitySlice {
                name: name.clone(),
                start,
                width: *width,
            };
            start += width;
            s
        })
        .collect()
}

/// Sum of absolute attributions per slice, normalized to a probability vector.
pub fn modality_aggregate(report: &AttributionReport, layout: &[ModalitySlice]) -> Result<Vec<f64>> {
    let f = report.per_feature.len();
    let mut sorted: Vec<&ModalitySlice> = layout.iter().collect();
    sorted.sort_by_key(|s| s.start);
    let mut cursor = 0;
    for s in &sorted {
        if s.start != cursor || s.width == 0 {
            return Err(Error::Contract(format!(
                "slice {} at {}..{} does not continue a partition ending at {cursor}",
                s.name,
                s.start,
                s.start + s.width
            )));
        }
        cursor += s.width;
    }
    if cursor != f {
        return Err(Error::Contract(format!(
            "slices cover {cursor} of {f} features"
        )));
    }
    let mass: Vec<f64> = layout
        .iter()
        .map(|s| report.per_feature[s.start..s.start + s.width].iter().map(|v| v.abs()).sum())
        .collect();
    let total: f64 = mass.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("attributions are all zero".into()));
    }
    Ok(mass.into_iter().map(|m| m / total).collect())
}
