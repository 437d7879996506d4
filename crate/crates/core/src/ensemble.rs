//! Two-member ensemble inference and error-diversity statistics.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::store::short_hex;
use crate::nn::Classifier;
use crate::objective::soften_rows;
use crate::tensor::{argmax, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleMode {
    /// Average softmax probabilities (τ = 1).
    #[default]
    Probability,
    /// Average raw scores.
    Logit,
}

/// Averaged member outputs in the mode's domain, N×K.
pub fn ensemble_scores(s_scores: &Tensor, q_scores: &Tensor, mode: EnsembleMode) -> Result<Tensor> {
    if s_scores.shape() != q_scores.shape() || s_scores.shape().len() != 2 {
        return Err(Error::input(format!(
            "ensemble members disagree on shape: {:?} vs {:?}",
            s_scores.shape(),
            q_scores.shape()
        )));
    }
    let (a, b) = match mode {
        EnsembleMode::Probability => (soften_rows(s_scores, 1.0)?, soften_rows(q_scores, 1.0)?),
        EnsembleMode::Logit => (s_scores.clone(), q_scores.clone()),
    };
    let data = a.data().iter().zip(b.data()).map(|(x, y)| (x + y) / 2.0).collect();
    Tensor::new(s_scores.shape().to_vec(), data)
}

/// Argmax of the averaged outputs; ties go to the lower class index.
pub fn ensemble_predict(s_scores: &Tensor, q_scores: &Tensor, mode: EnsembleMode) -> Result<Vec<usize>> {
    let avg = ensemble_scores(s_scores, q_scores, mode)?;
    Ok((0..avg.rows()).map(|i| argmax(avg.row(i))).collect())
}

/// Output-averaging ensemble of two classifiers.
pub struct Ensemble<'a> {
    pub pruned: &'a dyn Classifier,
    pub quantized: &'a dyn Classifier,
    pub mode: EnsembleMode,
}

impl Classifier for Ensemble<'_> {
    fn num_classes(&self) -> usize {
        self.pruned.num_classes()
    }
    fn input_shape(&self) -> [usize; 3] {
        self.pruned.input_shape()
    }
    fn scores(&self, inputs: &Tensor) -> Result<Tensor> {
        ensemble_scores(&self.pruned.scores(inputs)?, &self.quantized.scores(inputs)?, self.mode)
    }
    fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.pruned.fingerprint());
        h.update(self.quantized.fingerprint());
        h.update([self.mode as u8]);
        short_hex(h)
    }
}

/// Misclassified sample indices per model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorSets {
    pub quantized: BTreeSet<usize>,
    pub pruned: BTreeSet<usize>,
    pub baseline: BTreeSet<usize>,
    pub ensemble: BTreeSet<usize>,
    pub num_samples: usize,
}

/// `{i : predictions[i] != labels[i]}`
pub fn error_set(predictions: &[usize], labels: &[usize]) -> Result<BTreeSet<usize>> {
    if predictions.len() != labels.len() {
        return Err(Error::input(format!("{} predictions for {} labels", predictions.len(), labels.len())));
    }
    Ok(predictions.iter().zip(labels).enumerate().filter(|(_, (p, y))| p != y).map(|(i, _)| i).collect())
}

/// Predictions of each model on the same samples.
#[derive(Debug, Clone, Copy)]
pub struct MemberPredictions<'a> {
    pub quantized: &'a [usize],
    pub pruned: &'a [usize],
    pub baseline: &'a [usize],
    pub ensemble: &'a [usize],
}

pub fn error_sets(preds: MemberPredictions<'_>, labels: &[usize]) -> Result<ErrorSets> {
    Ok(ErrorSets {
        quantized: error_set(preds.quantized, labels)?,
        pruned: error_set(preds.pruned, labels)?,
        baseline: error_set(preds.baseline, labels)?,
        ensemble: error_set(preds.ensemble, labels)?,
        num_samples: labels.len(),
    })
}

impl ErrorSets {
    pub fn validate(&self) -> Result<()> {
        for (name, set) in self.named() {
            if let Some(&bad) = set.iter().next_back().filter(|&&i| i >= self.num_samples) {
                return Err(Error::input(format!("{name} error index {bad} outside {} samples", self.num_samples)));
            }
        }
        Ok(())
    }

    fn named(&self) -> [(&'static str, &BTreeSet<usize>); 4] {
        [("quantized", &self.quantized), ("pruned", &self.pruned), ("baseline", &self.baseline), ("ensemble", &self.ensemble)]
    }
}

/// Counts per region of the quantized / pruned / ensemble error Venn diagram.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VennCounts {
    pub q_only: usize,
    pub s_only: usize,
    pub e_only: usize,
    pub q_s: usize,
    pub q_e: usize,
    pub s_e: usize,
    pub q_s_e: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub quantized_errors: usize,
    pub pruned_errors: usize,
    pub baseline_errors: usize,
    pub ensemble_errors: usize,
    pub intersection: usize,
    pub union: usize,
    /// `|E_Q ∩ E_S| / |E_Q ∪ E_S|`
    pub overlap_ratio: f64,
    /// Fraction of `E_Q ∪ E_S` the ensemble gets right.
    pub corrected_fraction: f64,
    /// Fraction of `E_Q \ E_S` the ensemble gets right.
    pub corrected_q_only_fraction: f64,
    /// Set when a denominator was empty and the matching ratio was defined as 0.
    pub empty_union: bool,
    pub venn: VennCounts,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn diversity_report(sets: &ErrorSets) -> Result<DiversityReport> {
    sets.validate()?;
    let (q, s, e) = (&sets.quantized, &sets.pruned, &sets.ensemble);
    let intersection = q.intersection(s).count();
    let union = q.len() + s.len() - intersection;
    let member_union: BTreeSet<usize> = q.union(s).copied().collect();
    let corrected = member_union.iter().filter(|i| !e.contains(i)).count();
    let q_only: Vec<usize> = q.difference(s).copied().collect();
    let corrected_q_only = q_only.iter().filter(|i| !e.contains(i)).count();

    let mut venn = VennCounts::default();
    let everything: BTreeSet<usize> = member_union.union(e).copied().collect();
    for i in everything {
        match (q.contains(&i), s.contains(&i), e.contains(&i)) {
            (true, false, false) => venn.q_only += 1,
            (false, true, false) => venn.s_only += 1,
            (false, false, true) => venn.e_only += 1,
            (true, true, false) => venn.q_s += 1,
            (true, false, true) => venn.q_e += 1,
            (false, true, true) => venn.s_e += 1,
            (true, true, true) => venn.q_s_e += 1,
            (false, false, false) => unreachable!(),
        }
    }
    Ok(DiversityReport {
        quantized_errors: q.len(),
        pruned_errors: s.len(),
        baseline_errors: sets.baseline.len(),
        ensemble_errors: e.len(),
        intersection,
        union,
        overlap_ratio: ratio(intersection, union),
        corrected_fraction: ratio(corrected, union),
        corrected_q_only_fraction: ratio(corrected_q_only, q_only.len()),
        empty_union: union == 0,
        venn,
    })
}

impl DiversityReport {
    /// Plain-text Venn region table.
    pub fn venn_table(&self) -> String {
        let v = &self.venn;
        let mut out = String::new();
        let _ = writeln!(out, "region\tcount");
        for (name, n) in [
            ("Q only", v.q_only),
            ("S only", v.s_only),
            ("ensemble only", v.e_only),
            ("Q & S (ensemble right)", v.q_s),
            ("Q & ensemble", v.q_e),
            ("S & ensemble", v.s_e),
            ("Q & S & ensemble", v.q_s_e),
        ] {
            let _ = writeln!(out, "{name}\t{n}");
        }
        let _ = writeln!(out, "baseline errors\t{}", self.baseline_errors);
        let _ = writeln!(out, "overlap ratio\t{:.4}", self.overlap_ratio);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probability_average_example() {
        // logits whose softmax is [0.6, 0.4] and [0.2, 0.8]
        let s = Tensor::new(vec![1, 2], vec![(0.6f64).ln(), (0.4f64).ln()]).unwrap();
        let q = Tensor::new(vec![1, 2], vec![(0.2f64).ln(), (0.8f64).ln()]).unwrap();
        let avg = ensemble_scores(&s, &q, EnsembleMode::Probability).unwrap();
        assert!((avg.data()[0] - 0.4).abs() < 1e-12 && (avg.data()[1] - 0.6).abs() < 1e-12);
        assert_eq!(ensemble_predict(&s, &q, EnsembleMode::Probability).unwrap(), vec![1]);
    }

    #[test]
    fn shape_mismatch_is_an_input_error() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 4]);
        assert!(matches!(ensemble_predict(&a, &b, EnsembleMode::Logit), Err(Error::Input(_))));
    }

    #[test]
    fn single_error_index() {
        let labels = [0, 1, 2, 1, 0];
        let mut preds = labels.to_vec();
        assert!(error_set(&preds, &labels).unwrap().is_empty());
        preds[3] = 2;
        assert_eq!(error_set(&preds, &labels).unwrap(), BTreeSet::from([3]));
    }

    #[test]
    fn identical_error_sets_overlap_fully() {
        let e: BTreeSet<usize> = [1, 4, 7].into();
        let sets = ErrorSets { quantized: e.clone(), pruned: e.clone(), baseline: e.clone(), ensemble: e, num_samples: 10 };
        let r = diversity_report(&sets).unwrap();
        assert_eq!(r.overlap_ratio, 1.0);
        assert_eq!(r.corrected_fraction, 0.0);
    }

    #[test]
    fn empty_union_is_flagged() {
        let r = diversity_report(&ErrorSets { num_samples: 3, ..Default::default() }).unwrap();
        assert!(r.empty_union);
        assert_eq!(r.overlap_ratio, 0.0);
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        let sets = ErrorSets { quantized: [5].into(), num_samples: 5, ..Default::default() };
        assert!(diversity_report(&sets).is_err());
    }
}
