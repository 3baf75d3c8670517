//! Threshold and operating-point metrics, the train-context by test-context
//! matrix, regional agreement and heatmap maps.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::bagging::{gather_embeddings, Bag};
use crate::embeddings::EmbeddingStore;
use crate::error::{Error, Result};
use crate::geometry::{self, Context, SlideGrid};
use crate::model::{self, AbmilParams};

/// Sensitivity floor of the reported operating point.
pub const TARGET_SENSITIVITY: f64 = 0.98;
/// Binarization threshold of region probability maps (display only).
pub const VISUAL_THRESHOLD: f64 = 0.9;

/// Scores with matching binary labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Empty("scored set"));
        }
        if scores.len() != labels.len() {
            return Err(Error::DimensionMismatch { expected: scores.len(), found: labels.len() });
        }
        Ok(ScoredSet { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    fn class_counts(&self) -> Result<(usize, usize)> {
        let pos = self.labels.iter().filter(|&&l| l).count();
        let neg = self.labels.len() - pos;
        if pos == 0 {
            return Err(Error::BalancedAccuracyUndefined("no positive labels"));
        }
        if neg == 0 {
            return Err(Error::BalancedAccuracyUndefined("no negative labels"));
        }
        Ok((pos, neg))
    }
}

/// `100 * (sensitivity + specificity) / 2` with predictions `score >= tau`.
pub fn balanced_accuracy(set: &ScoredSet, tau: f64) -> Result<f64> {
    let (pos, neg) = set.class_counts()?;
    let (mut tp, mut tn) = (0usize, 0usize);
    for (&s, &l) in set.scores.iter().zip(&set.labels) {
        match (model::predict(s, tau), l) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            _ => {}
        }
    }
    Ok(50.0 * (tp as f64 / pos as f64 + tn as f64 / neg as f64))
}

/// Smallest true-positive count meeting `target` sensitivity.
fn required_true_positives(target: f64, positives: usize) -> usize {
    libm::ceil(target * positives as f64 - 1e-9).max(0.0) as usize
}

/// Highest specificity (percent) among achievable operating points whose
/// sensitivity reaches `target`. Candidate thresholds are the distinct score
/// values; no interpolation between points.
pub fn spec_at_sens(set: &ScoredSet, target: f64) -> Result<f64> {
    let (pos, neg) = set.class_counts()?;
    let need = required_true_positives(target, pos);
    let mut order: Vec<usize> = (0..set.scores.len()).collect();
    order.sort_by(|&a, &b| set.scores[b].total_cmp(&set.scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut best: Option<usize> = None;
    let mut i = 0;
    while i < order.len() {
        let t = set.scores[order[i]];
        while i < order.len() && set.scores[order[i]] == t {
            if set.labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        if tp >= need {
            let tn = neg - fp;
            best = Some(best.map_or(tn, |b| b.max(tn)));
        }
    }
    // the lowest threshold predicts everything positive, so `best` is set
    Ok(100.0 * best.unwrap_or(0) as f64 / neg as f64)
}

/// Balanced accuracy and specificity at 98% sensitivity, both percent.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ContextMetrics {
    pub ba: f64,
    pub s_at_98: f64,
}

/// Scores every bag with the model.
pub fn score_bags(params: &AbmilParams, bags: &[Bag]) -> Result<ScoredSet> {
    let mut scores = Vec::with_capacity(bags.len());
    for b in bags {
        scores.push(model::forward(params, &b.embeddings)?.p_hat);
    }
    ScoredSet::new(scores, bags.iter().map(|b| b.label).collect())
}

/// Metrics of the model on test bags of a single context.
pub fn evaluate_context(params: &AbmilParams, bags: &[Bag], tau: f64) -> Result<ContextMetrics> {
    if let Some(first) = bags.first() {
        if bags.iter().any(|b| b.context != first.context) {
            return Err(Error::InvalidConfig("test bags mix contexts".into()));
        }
    }
    let set = score_bags(params, bags)?;
    Ok(ContextMetrics {
        ba: balanced_accuracy(&set, tau)?,
        s_at_98: spec_at_sens(&set, TARGET_SENSITIVITY)?,
    })
}

/// One row of the context table: per-context metrics in table order
/// (slide, 4 mm, 2 mm, 1 mm).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ContextMatrix {
    pub entries: [ContextMetrics; 4],
}

impl ContextMatrix {
    pub fn get(&self, context: Context) -> ContextMetrics {
        self.entries[context.table_index()]
    }

    /// Arithmetic mean over the four contexts.
    pub fn average(&self) -> ContextMetrics {
        let n = self.entries.len() as f64;
        ContextMetrics {
            ba: self.entries.iter().map(|m| m.ba).sum::<f64>() / n,
            s_at_98: self.entries.iter().map(|m| m.s_at_98).sum::<f64>() / n,
        }
    }
}

/// Evaluates the model on the four test sets, given in table order.
pub fn context_matrix(params: &AbmilParams, test_sets: [&[Bag]; 4], tau: f64) -> Result<ContextMatrix> {
    let mut m = ContextMatrix::default();
    for (slot, bags) in m.entries.iter_mut().zip(test_sets) {
        *slot = evaluate_context(params, bags, tau)?;
    }
    Ok(m)
}

/// Region probability at 2 mm for every region holding tissue, row-major by
/// region index.
pub fn regional_probabilities(
    params: &AbmilParams,
    grid: &SlideGrid,
    store: &EmbeddingStore,
    context: Context,
) -> Result<BTreeMap<(u32, u32), f64>> {
    let mut out = BTreeMap::new();
    for frame in geometry::partition_regions(grid, context)? {
        let members = grid.tissue_in(&frame);
        if members.is_empty() {
            continue;
        }
        let x = gather_embeddings(grid.slide_id(), &members, store)?;
        out.insert(frame.index(), model::forward(params, &x)?.p_hat);
    }
    Ok(out)
}

/// Percent of truth-labeled 2 mm regions whose thresholded prediction matches
/// the truth. Inference runs on every tissue region of the slide.
pub fn regional_agreement(
    params: &AbmilParams,
    grid: &SlideGrid,
    store: &EmbeddingStore,
    truth: &BTreeMap<(u32, u32), bool>,
    tau: f64,
) -> Result<f64> {
    let (matches, total) = regional_agreement_counts(params, grid, store, truth, tau)?;
    Ok(100.0 * matches as f64 / total as f64)
}

/// `(matching, labeled)` region counts behind [`regional_agreement`], for
/// pooling across slides.
pub fn regional_agreement_counts(
    params: &AbmilParams,
    grid: &SlideGrid,
    store: &EmbeddingStore,
    truth: &BTreeMap<(u32, u32), bool>,
    tau: f64,
) -> Result<(usize, usize)> {
    if truth.is_empty() {
        return Err(Error::Empty("regional truth"));
    }
    let (rows, cols) = geometry::region_counts(grid.n_rows(), grid.n_cols(), Context::Mm2)?;
    if let Some((&(r, c), _)) = truth.iter().find(|((r, c), _)| *r >= rows || *c >= cols) {
        return Err(Error::RegionOutsideGrid { row: r, col: c });
    }
    let probs = regional_probabilities(params, grid, store, Context::Mm2)?;
    let mut matches = 0;
    for (&region, &label) in truth {
        let p = probs
            .get(&region)
            .ok_or(Error::RegionWithoutTissue { row: region.0, col: region.1 })?;
        if model::predict(*p, tau) == label {
            matches += 1;
        }
    }
    Ok((matches, truth.len()))
}

/// Heatmap layers of one slide.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmaps {
    pub n_rows: u32,
    pub n_cols: u32,
    /// Slide-bag attention per patch, row-major; zero off tissue.
    pub attention_raw: Vec<f64>,
    /// `attention_raw` divided by its maximum.
    pub attention: Vec<f64>,
    pub region_rows: u32,
    pub region_cols: u32,
    /// 2 mm region probabilities, row-major; `None` for regions without tissue.
    pub region_prob: Vec<Option<f64>>,
    /// `region_prob >= 0.9`; display only.
    pub region_bin: Vec<Option<bool>>,
}

pub fn export_heatmap(params: &AbmilParams, grid: &SlideGrid, store: &EmbeddingStore) -> Result<Heatmaps> {
    let x = gather_embeddings(grid.slide_id(), grid.tissue(), store)?;
    let score = model::forward(params, &x)?;
    let cols = grid.n_cols() as usize;
    let mut attention_raw = alloc::vec![0.0; grid.n_rows() as usize * cols];
    for (p, a) in grid.tissue().iter().zip(&score.attention) {
        attention_raw[p.row as usize * cols + p.col as usize] = *a;
    }
    let max = score.attention.iter().copied().fold(0.0, f64::max);
    let attention = attention_raw.iter().map(|a| a / max).collect();

    let (region_rows, region_cols) = geometry::region_counts(grid.n_rows(), grid.n_cols(), Context::Mm2)?;
    let probs = regional_probabilities(params, grid, store, Context::Mm2)?;
    let region_prob: Vec<Option<f64>> = (0..region_rows)
        .flat_map(|r| (0..region_cols).map(move |c| (r, c)))
        .map(|idx| probs.get(&idx).copied())
        .collect();
    let region_bin = region_prob.iter().map(|p| p.map(|p| p >= VISUAL_THRESHOLD)).collect();
    Ok(Heatmaps {
        n_rows: grid.n_rows(),
        n_cols: grid.n_cols(),
        attention_raw,
        attention,
        region_rows,
        region_cols,
        region_prob,
        region_bin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bagging::Split;
    use crate::geometry::Patch;
    use crate::matrix::Matrix;
    use alloc::vec;

    fn set(pos: &[f64], neg: &[f64]) -> ScoredSet {
        let scores = pos.iter().chain(neg).copied().collect();
        let labels = pos.iter().map(|_| true).chain(neg.iter().map(|_| false)).collect();
        ScoredSet::new(scores, labels).unwrap()
    }

    #[test]
    fn balanced_accuracy_examples() {
        assert_eq!(balanced_accuracy(&set(&[0.9, 0.8], &[0.1, 0.2]), 0.5).unwrap(), 100.0);
        // 49/50 sensitivity, 45/50 specificity
        let mut pos = vec![0.9; 49];
        pos.push(0.1);
        let mut neg = vec![0.1; 45];
        neg.extend([0.9; 5]);
        assert!((balanced_accuracy(&set(&pos, &neg), 0.5).unwrap() - 94.0).abs() < 1e-12);
        assert_eq!(balanced_accuracy(&set(&[0.5; 3], &[0.5; 3]), 0.5).unwrap(), 50.0);
        let one = ScoredSet::new(vec![0.3, 0.7], vec![true, true]).unwrap();
        let err = balanced_accuracy(&one, 0.5).unwrap_err();
        assert!(alloc::string::ToString::to_string(&err).contains("balanced accuracy undefined"));
        assert!(spec_at_sens(&one, 0.98).is_err());
        assert!(ScoredSet::new(vec![], vec![]).is_err());
    }

    #[test]
    fn spec_at_sens_examples() {
        assert_eq!(spec_at_sens(&set(&[0.9, 0.8], &[0.1, 0.2]), 0.98).unwrap(), 100.0);
        assert_eq!(spec_at_sens(&set(&[0.4; 4], &[0.4; 3]), 0.98).unwrap(), 0.0);
        assert_eq!(spec_at_sens(&set(&[0.9, 0.8, 0.2], &[0.7, 0.1]), 0.98).unwrap(), 50.0);
    }

    fn const_bag(ctx: Context, label: bool, v: f64) -> Bag {
        Bag {
            slide_id: "s".into(),
            context: ctx,
            region: None,
            members: vec![Patch::new(0, 0)],
            embeddings: Matrix::from_rows(&[[v]]).unwrap(),
            label,
            split: Split::Test,
        }
    }

    #[test]
    fn perfect_model_scores_full_marks() {
        let mut p = AbmilParams::zeros(1, 1);
        p.parts_mut().3[0] = 10.0;
        let bags = vec![const_bag(Context::Mm2, true, 1.0), const_bag(Context::Mm2, false, -1.0)];
        let m = evaluate_context(&p, &bags, 0.5).unwrap();
        assert_eq!(m, ContextMetrics { ba: 100.0, s_at_98: 100.0 });
        let mixed = vec![const_bag(Context::Mm2, true, 1.0), const_bag(Context::Mm1, false, -1.0)];
        assert!(evaluate_context(&p, &mixed, 0.5).is_err());
    }

    #[test]
    fn constant_model_gives_identical_rows() {
        let p = AbmilParams::zeros(1, 1);
        let bags = vec![const_bag(Context::Slide, true, 1.0), const_bag(Context::Slide, false, -1.0)];
        let m = context_matrix(&p, [&bags, &bags, &bags, &bags], 0.5).unwrap();
        assert!(m.entries.iter().all(|e| *e == m.entries[0]));
        assert_eq!(m.average(), m.entries[0]);
    }

    fn single_patch_slide() -> (SlideGrid, EmbeddingStore) {
        let g = SlideGrid::new("one", 3, 3, vec![Patch::new(1, 2)], true).unwrap();
        let mut s = EmbeddingStore::new(2);
        s.insert(Patch::new(1, 2), &[0.5, -0.5]).unwrap();
        (g, s)
    }

    #[test]
    fn heatmap_of_single_patch() {
        let (g, s) = single_patch_slide();
        let p = crate::model::init_params(2, 3, 0).unwrap();
        let h = export_heatmap(&p, &g, &s).unwrap();
        assert_eq!(h.attention[5], 1.0);
        assert_eq!(h.attention.iter().sum::<f64>(), 1.0);
        assert_eq!(h.region_prob.len(), 1);
        assert!(h.region_prob[0].is_some());
    }

    #[test]
    fn heatmap_binarization_threshold() {
        let (g, s) = single_patch_slide();
        let mut p = AbmilParams::zeros(2, 1);
        // logit = b exactly, so p_hat = sigmoid(b)
        for (prob, expect) in [(0.91, true), (0.89, false)] {
            *p.parts_mut().4 = libm::log(prob / (1.0 - prob));
            let h = export_heatmap(&p, &g, &s).unwrap();
            assert_eq!(h.region_bin[0], Some(expect));
        }
    }

    #[test]
    fn agreement_counts_matches() {
        let g = SlideGrid::full("g", 32, 16, true).unwrap();
        let mut s = EmbeddingStore::new(1);
        for p in g.tissue() {
            s.insert(*p, &[if p.row < 16 { 1.0 } else { -1.0 }]).unwrap();
        }
        let mut p = AbmilParams::zeros(1, 1);
        p.parts_mut().3[0] = 5.0;
        let truth: BTreeMap<_, _> = [((0, 0), true), ((1, 0), false)].into_iter().collect();
        assert_eq!(regional_agreement(&p, &g, &s, &truth, 0.5).unwrap(), 100.0);
        let wrong: BTreeMap<_, _> = [((1, 0), true)].into_iter().collect();
        assert_eq!(regional_agreement(&p, &g, &s, &wrong, 0.5).unwrap(), 0.0);
        let outside: BTreeMap<_, _> = [((2, 0), true)].into_iter().collect();
        assert!(matches!(
            regional_agreement(&p, &g, &s, &outside, 0.5),
            Err(Error::RegionOutsideGrid { row: 2, col: 0 })
        ));
        assert!(regional_agreement(&p, &g, &s, &BTreeMap::new(), 0.5).is_err());
    }
}
