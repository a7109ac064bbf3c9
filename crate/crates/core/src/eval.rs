//! Metrics, corpus statistics, and the noise-sweep experiment driver.
//!
//! Headline numbers are macro averages: per-class rates first, then the
//! class mean, so majority classes cannot mask minority performance. A
//! micro accuracy is reported alongside, clearly labeled. All percentages
//! are in [0, 100].

use serde::Serialize;

use crate::corpus::{build_decision_samples, Corpus, Split};
use crate::error::{OscaError, Result};
use crate::labels::{StateChangeClass, NUM_CLASSES};
use crate::model::{predict, ModelParams, PredictionDistribution};
use crate::recognizers::{recognized_histories, NoiseSpec, RecognizerSpec};

fn check_pairs(preds: &[PredictionDistribution], targets: &[StateChangeClass]) -> Result<()> {
    if preds.len() != targets.len() {
        return Err(OscaError::Validation(format!(
            "{} predictions vs {} targets",
            preds.len(),
            targets.len()
        )));
    }
    if preds.is_empty() {
        return Err(OscaError::Validation("no samples to score".into()));
    }
    Ok(())
}

/// Macro top-k accuracy in percent: the per-class rate of the target
/// appearing among the k most probable classes (probability ties broken by
/// ascending class index), averaged over the classes present in `targets`.
pub fn topk_mean_accuracy(
    preds: &[PredictionDistribution],
    targets: &[StateChangeClass],
    k: usize,
) -> Result<f64> {
    check_pairs(preds, targets)?;
    if k < 1 || k > NUM_CLASSES {
        return Err(OscaError::Validation(format!(
            "k must lie in 1..={NUM_CLASSES}, got {k}"
        )));
    }
    let mut hits = [0u64; NUM_CLASSES];
    let mut support = [0u64; NUM_CLASSES];
    for (p, &t) in preds.iter().zip(targets) {
        let c = t.index();
        support[c] += 1;
        if p.ranking()[..k].contains(&c) {
            hits[c] += 1;
        }
    }
    let mut sum = 0.0;
    let mut classes = 0usize;
    for c in 0..NUM_CLASSES {
        if support[c] > 0 {
            sum += hits[c] as f64 / support[c] as f64;
            classes += 1;
        }
    }
    Ok(sum / classes as f64 * 100.0)
}

/// Confusion counts, row = target class, column = argmax prediction.
pub fn confusion(
    preds: &[PredictionDistribution],
    targets: &[StateChangeClass],
) -> [[u64; NUM_CLASSES]; NUM_CLASSES] {
    let mut counts = [[0u64; NUM_CLASSES]; NUM_CLASSES];
    for (p, &t) in preds.iter().zip(targets) {
        counts[t.index()][p.argmax().index()] += 1;
    }
    counts
}

fn f1_from_counts(tp: u64, fp: u64, fn_: u64) -> (f64, f64, f64) {
    let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let recall = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    (precision, recall, f1)
}

/// Macro F1 in percent over argmax predictions, averaged across the classes
/// that occur in the targets or the predictions. F1 is 2PR/(P+R), zero when
/// both precision and recall vanish.
pub fn macro_f1(preds: &[PredictionDistribution], targets: &[StateChangeClass]) -> Result<f64> {
    check_pairs(preds, targets)?;
    let counts = confusion(preds, targets);
    let mut sum = 0.0;
    let mut classes = 0usize;
    for c in 0..NUM_CLASSES {
        let tp = counts[c][c];
        let row: u64 = counts[c].iter().sum();
        let col: u64 = (0..NUM_CLASSES).map(|r| counts[r][c]).sum();
        if row == 0 && col == 0 {
            continue;
        }
        let (_, _, f1) = f1_from_counts(tp, col - tp, row - tp);
        sum += f1;
        classes += 1;
    }
    Ok(sum / classes as f64 * 100.0)
}

/// Plain sample-level accuracy in percent. Biased toward majority classes;
/// reported alongside the macro numbers for comparison only.
pub fn micro_accuracy(
    preds: &[PredictionDistribution],
    targets: &[StateChangeClass],
) -> Result<f64> {
    check_pairs(preds, targets)?;
    let correct = preds
        .iter()
        .zip(targets)
        .filter(|(p, &t)| p.argmax() == t)
        .count();
    Ok(correct as f64 / preds.len() as f64 * 100.0)
}

/// Per-class row of a [`MetricsReport`]. Percentages; `support` counts the
/// class in the targets, `predicted` counts it among argmax predictions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerClassMetrics {
    pub class: StateChangeClass,
    pub support: u64,
    pub predicted: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Scores of one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub top1_macc: f64,
    pub top5_macc: f64,
    pub macro_f1: f64,
    pub micro_accuracy: f64,
    /// One row per class, including absent ones.
    pub per_class: Vec<PerClassMetrics>,
    /// Classes with zero target support, excluded from the macro means.
    pub absent_classes: Vec<StateChangeClass>,
    pub n_samples: usize,
}

impl MetricsReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "samples: {}\ntop-1 mAcc: {:.2}%\ntop-5 mAcc: {:.2}%\nmacro F1: {:.2}%\nmicro accuracy: {:.2}%\n",
            self.n_samples, self.top1_macc, self.top5_macc, self.macro_f1, self.micro_accuracy
        ));
        out.push_str("class,support,predicted,precision,recall,f1\n");
        for row in &self.per_class {
            out.push_str(&format!(
                "{},{},{},{:.2},{:.2},{:.2}\n",
                row.class, row.support, row.predicted, row.precision, row.recall, row.f1
            ));
        }
        if !self.absent_classes.is_empty() {
            let names: Vec<&str> = self.absent_classes.iter().map(|c| c.as_str()).collect();
            out.push_str(&format!(
                "absent classes (excluded from macro means): {}\n",
                names.join(",")
            ));
        }
        out
    }
}

/// Full report over one prediction set.
pub fn metrics_report(
    preds: &[PredictionDistribution],
    targets: &[StateChangeClass],
) -> Result<MetricsReport> {
    check_pairs(preds, targets)?;
    let counts = confusion(preds, targets);
    let mut per_class = Vec::with_capacity(NUM_CLASSES);
    let mut absent = Vec::new();
    for c in 0..NUM_CLASSES {
        let class = StateChangeClass::from_index(c).unwrap();
        let tp = counts[c][c];
        let row: u64 = counts[c].iter().sum();
        let col: u64 = (0..NUM_CLASSES).map(|r| counts[r][c]).sum();
        let (precision, recall, f1) = f1_from_counts(tp, col - tp, row - tp);
        per_class.push(PerClassMetrics {
            class,
            support: row,
            predicted: col,
            precision: precision * 100.0,
            recall: recall * 100.0,
            f1: f1 * 100.0,
        });
        if row == 0 {
            absent.push(class);
        }
    }
    Ok(MetricsReport {
        top1_macc: topk_mean_accuracy(preds, targets, 1)?,
        top5_macc: topk_mean_accuracy(preds, targets, 5)?,
        macro_f1: macro_f1(preds, targets)?,
        micro_accuracy: micro_accuracy(preds, targets)?,
        per_class,
        absent_classes: absent,
        n_samples: preds.len(),
    })
}

/// Counts of consecutive state-change pairs within videos.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitionMatrix {
    /// Row = earlier segment's class, column = the following segment's.
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl TransitionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Row-normalized transition frequencies; rows without observations are
    /// `None` rather than silently zero.
    pub fn normalized(&self) -> [Option<[f64; NUM_CLASSES]>; NUM_CLASSES] {
        let mut out = [None; NUM_CLASSES];
        for (i, row) in self.counts.iter().enumerate() {
            let total: u64 = row.iter().sum();
            if total > 0 {
                let mut norm = [0.0; NUM_CLASSES];
                for (slot, &c) in norm.iter_mut().zip(row) {
                    *slot = c as f64 / total as f64;
                }
                out[i] = Some(norm);
            }
        }
        out
    }

    pub fn counts_csv(&self) -> String {
        let mut out = String::from("from\\to");
        for c in StateChangeClass::ALL {
            out.push(',');
            out.push_str(c.as_str());
        }
        out.push('\n');
        for (i, row) in self.counts.iter().enumerate() {
            out.push_str(StateChangeClass::from_index(i).unwrap().as_str());
            for &v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn normalized_csv(&self) -> String {
        let normalized = self.normalized();
        let mut out = String::from("from\\to");
        for c in StateChangeClass::ALL {
            out.push(',');
            out.push_str(c.as_str());
        }
        out.push('\n');
        for (i, row) in normalized.iter().enumerate() {
            out.push_str(StateChangeClass::from_index(i).unwrap().as_str());
            match row {
                Some(values) => {
                    for v in values {
                        out.push_str(&format!(",{v:.6}"));
                    }
                }
                None => {
                    for _ in 0..NUM_CLASSES {
                        out.push_str(",unobserved");
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Consecutive-pair transition counts over the chosen split; pairs never
/// cross video boundaries.
pub fn transition_matrix(corpus: &Corpus, split: Option<Split>) -> TransitionMatrix {
    let mut counts = [[0u64; NUM_CLASSES]; NUM_CLASSES];
    for video in corpus.videos_in_split(split) {
        for pair in video.segments.windows(2) {
            counts[pair[0].state_change.index()][pair[1].state_change.index()] += 1;
        }
    }
    TransitionMatrix { counts }
}

/// How often one vocabulary token co-occurs with each state-change class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TokenStateCounts {
    /// Index into the vocabulary list this row came from.
    pub index: usize,
    pub token: String,
    pub by_state: [u64; NUM_CLASSES],
}

impl TokenStateCounts {
    pub fn total(&self) -> u64 {
        self.by_state.iter().sum()
    }

    pub fn distinct_states(&self) -> usize {
        self.by_state.iter().filter(|&&c| c > 0).count()
    }
}

/// Cross-tabulations of verbs and nouns against state-change classes.
/// Rows are ordered by descending total frequency, ties by vocabulary index.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateHistograms {
    pub verbs: Vec<TokenStateCounts>,
    pub nouns: Vec<TokenStateCounts>,
    /// Distinct states seen per verb, descending, ties by vocabulary index.
    pub states_per_verb: Vec<(String, usize)>,
    pub states_per_noun: Vec<(String, usize)>,
}

fn token_table(tokens: &[String], counts: Vec<[u64; NUM_CLASSES]>) -> Vec<TokenStateCounts> {
    let mut rows: Vec<TokenStateCounts> = tokens
        .iter()
        .enumerate()
        .map(|(index, token)| TokenStateCounts {
            index,
            token: token.clone(),
            by_state: counts[index],
        })
        .collect();
    rows.sort_by(|a, b| b.total().cmp(&a.total()).then(a.index.cmp(&b.index)));
    rows
}

fn distinct_table(rows: &[TokenStateCounts]) -> Vec<(String, usize)> {
    let mut out: Vec<(usize, String, usize)> = rows
        .iter()
        .map(|r| (r.index, r.token.clone(), r.distinct_states()))
        .collect();
    out.sort_by(|a, b| b.2.cmp(&a.2).then(a.0.cmp(&b.0)));
    out.into_iter().map(|(_, token, n)| (token, n)).collect()
}

pub fn histogram_csv(rows: &[TokenStateCounts]) -> String {
    let mut out = String::from("token,total");
    for c in StateChangeClass::ALL {
        out.push(',');
        out.push_str(c.as_str());
    }
    out.push('\n');
    for row in rows {
        out.push_str(&format!("{},{}", row.token, row.total()));
        for &v in &row.by_state {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

/// Tabulates every segment of the corpus.
pub fn state_histograms(corpus: &Corpus) -> StateHistograms {
    let vocab = &corpus.vocabulary;
    let mut verb_counts = vec![[0u64; NUM_CLASSES]; vocab.num_verbs()];
    let mut noun_counts = vec![[0u64; NUM_CLASSES]; vocab.num_nouns()];
    for video in &corpus.videos {
        for seg in &video.segments {
            let s = seg.state_change.index();
            verb_counts[seg.action.verb_id][s] += 1;
            noun_counts[seg.action.noun_id][s] += 1;
        }
    }
    let verbs = token_table(vocab.verbs(), verb_counts);
    let nouns = token_table(vocab.nouns(), noun_counts);
    let states_per_verb = distinct_table(&verbs);
    let states_per_noun = distinct_table(&nouns);
    StateHistograms {
        verbs,
        nouns,
        states_per_verb,
        states_per_noun,
    }
}

/// Runs the model over every decision sample of the split with histories
/// from the given source and scores the predictions.
pub fn evaluate(
    corpus: &Corpus,
    split: Option<Split>,
    params: &ModelParams,
    window: usize,
    spec: &RecognizerSpec,
) -> Result<MetricsReport> {
    let (preds, targets) = collect_predictions(corpus, split, params, window, spec)?;
    metrics_report(&preds, &targets)
}

pub(crate) fn collect_predictions(
    corpus: &Corpus,
    split: Option<Split>,
    params: &ModelParams,
    window: usize,
    spec: &RecognizerSpec,
) -> Result<(Vec<PredictionDistribution>, Vec<StateChangeClass>)> {
    let mut preds = Vec::new();
    let mut targets = Vec::new();
    for video in corpus.videos_in_split(split) {
        let samples = build_decision_samples(video, window)?;
        let histories = recognized_histories(video, spec, &corpus.vocabulary)?;
        debug_assert_eq!(samples.len(), histories.len());
        for (sample, history) in samples.iter().zip(&histories) {
            preds.push(predict(sample, params, Some(history))?);
            targets.push(sample.target);
        }
    }
    if preds.is_empty() {
        return Err(OscaError::Validation(
            "the chosen split holds no decision samples".into(),
        ));
    }
    Ok((preds, targets))
}

/// One noise level of a sweep; means and population standard deviations
/// across the evaluation seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub action_noise: f64,
    pub state_noise: f64,
    pub top1_mean: f64,
    pub top1_std: f64,
    pub top5_mean: f64,
    pub top5_std: f64,
    pub f1_mean: f64,
    pub f1_std: f64,
}

/// Mean and population standard deviation. A spread of identical values
/// collapses to that exact value with zero deviation, which keeps the
/// zero-noise sweep row bit-identical to a plain oracle evaluation.
fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.iter().all(|&x| x == xs[0]) {
        return (xs[0], 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Evaluates the model under token corruption at each noise level, once per
/// seed, and aggregates across seeds.
pub fn noise_sweep(
    corpus: &Corpus,
    split: Option<Split>,
    params: &ModelParams,
    window: usize,
    levels: &[(f64, f64)],
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    if levels.is_empty() {
        return Err(OscaError::Validation("noise sweep needs at least one level".into()));
    }
    if seeds.is_empty() {
        return Err(OscaError::Validation("noise sweep needs at least one seed".into()));
    }
    let mut rows = Vec::with_capacity(levels.len());
    for &(action_rate, state_rate) in levels {
        let mut top1 = Vec::with_capacity(seeds.len());
        let mut top5 = Vec::with_capacity(seeds.len());
        let mut f1 = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let spec = RecognizerSpec::Noisy(NoiseSpec { action_rate, state_rate, seed });
            let report = evaluate(corpus, split, params, window, &spec)?;
            top1.push(report.top1_macc);
            top5.push(report.top5_macc);
            f1.push(report.macro_f1);
        }
        let (top1_mean, top1_std) = mean_std(&top1);
        let (top5_mean, top5_std) = mean_std(&top5);
        let (f1_mean, f1_std) = mean_std(&f1);
        rows.push(SweepRow {
            action_noise: action_rate,
            state_noise: state_rate,
            top1_mean,
            top1_std,
            top5_mean,
            top5_std,
            f1_mean,
            f1_std,
        });
    }
    Ok(rows)
}

/// Sweep table as CSV. The `stddev` column is the top-1 spread; the full
/// per-metric spreads live in [`SweepRow`].
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("action_noise,state_noise,top1,top5,f1,stddev\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.4},{:.4},{:.4},{:.4}\n",
            r.action_noise, r.state_noise, r.top1_mean, r.top5_mean, r.f1_mean, r.top1_std
        ));
    }
    out
}
