//! Composition-vector quotas, one-context-per-slide assignment and per-context
//! class balancing.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::{index, SliceRandom};

use crate::bagging::Bag;
use crate::error::{Error, Result};
use crate::geometry::{Context, SlideGrid};
use crate::rng::Rng;

const SUM_TOLERANCE: f64 = 1e-9;

/// Fractions of training slides per supervision context.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompositionVector {
    pub slide: f64,
    pub mm4: f64,
    pub mm2: f64,
    pub mm1: f64,
}

impl CompositionVector {
    pub fn new(slide: f64, mm4: f64, mm2: f64, mm1: f64) -> Result<Self> {
        let v = CompositionVector { slide, mm4, mm2, mm1 };
        let parts = [slide, mm4, mm2, mm1];
        if parts.iter().any(|a| !a.is_finite() || *a < 0.0 || *a > 1.0) {
            return Err(Error::InvalidConfig(format!("composition components must lie in [0, 1]: {v}")));
        }
        if libm::fabs(parts.iter().sum::<f64>() - 1.0) > SUM_TOLERANCE {
            return Err(Error::InvalidConfig(format!("composition must sum to 1: {v}")));
        }
        Ok(v)
    }

    /// From integer percents in table order (slide, 4 mm, 2 mm, 1 mm).
    pub fn from_percents(p: [u32; 4]) -> Result<Self> {
        let total: u32 = p.iter().sum();
        if total != 100 {
            return Err(Error::InvalidConfig(format!(
                "composition percents must sum to 100, got {total}"
            )));
        }
        let f = |x: u32| f64::from(x) / 100.0;
        CompositionVector::new(f(p[0]), f(p[1]), f(p[2]), f(p[3]))
    }

    pub fn slide_only() -> Self {
        CompositionVector { slide: 1.0, mm4: 0.0, mm2: 0.0, mm1: 0.0 }
    }

    pub fn fraction(&self, context: Context) -> f64 {
        match context {
            Context::Slide => self.slide,
            Context::Mm4 => self.mm4,
            Context::Mm2 => self.mm2,
            Context::Mm1 => self.mm1,
        }
    }

    /// Components as rounded percents, table order.
    pub fn percents(&self) -> [u32; 4] {
        Context::TABLE_ORDER.map(|c| libm::round(self.fraction(c) * 100.0) as u32)
    }
}

impl fmt::Display for CompositionVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d] = self.percents();
        write!(f, "({a},{b},{c},{d})")
    }
}

/// Slide counts per context.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Quota {
    pub slide: usize,
    pub mm4: usize,
    pub mm2: usize,
    pub mm1: usize,
}

impl Quota {
    pub fn get(&self, context: Context) -> usize {
        match context {
            Context::Slide => self.slide,
            Context::Mm4 => self.mm4,
            Context::Mm2 => self.mm2,
            Context::Mm1 => self.mm1,
        }
    }

    fn get_mut(&mut self, context: Context) -> &mut usize {
        match context {
            Context::Slide => &mut self.slide,
            Context::Mm4 => &mut self.mm4,
            Context::Mm2 => &mut self.mm2,
            Context::Mm1 => &mut self.mm1,
        }
    }

    pub fn total(&self) -> usize {
        self.slide + self.mm4 + self.mm2 + self.mm1
    }
}

/// Largest-remainder rounding of `alpha * n_slides`; equal remainders go to
/// the finer context first.
pub fn quota(alpha: &CompositionVector, n_slides: usize) -> Quota {
    let n = n_slides as f64;
    let mut q = Quota::default();
    let mut remainders: Vec<(u64, Context)> = Vec::with_capacity(4);
    for ctx in Context::GRANULARITY_ORDER {
        let exact = alpha.fraction(ctx) * n;
        // absorb representation error such as 0.6 * 25 = 14.999...
        let floor = libm::floor(exact + SUM_TOLERANCE);
        *q.get_mut(ctx) = floor as usize;
        // quantized so that 172.4999... and 127.5 count as a tie
        let rem = libm::round((exact - floor).max(0.0) / SUM_TOLERANCE) as u64;
        remainders.push((rem, ctx));
    }
    // stable sort keeps granularity order among equal remainders
    remainders.sort_by_key(|r| core::cmp::Reverse(r.0));
    let mut left = n_slides.saturating_sub(q.total());
    for (_, ctx) in remainders.iter().cycle() {
        if left == 0 {
            break;
        }
        *q.get_mut(*ctx) += 1;
        left -= 1;
    }
    q
}

/// Non-fatal events raised during allocation or balancing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Warning {
    /// A regional quota could not be met from eligible slides; the shortfall
    /// moved to the next coarser context.
    QuotaShortfall { context: Context, requested: usize, filled: usize, moved_to: Context },
    /// A context partition lacked one of the labels and was dropped.
    PartitionDropped { context: Context, cancer: usize, non_cancer: usize },
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::QuotaShortfall { context, requested, filled, moved_to } => write!(
                f,
                "{context} quota of {requested} filled with {filled} eligible slides; \
                 {} moved to {moved_to}",
                requested - filled
            ),
            Warning::PartitionDropped { context, cancer, non_cancer } => write!(
                f,
                "dropped {context} partition with {cancer} cancer and {non_cancer} non-cancer bags"
            ),
        }
    }
}

/// Supervision context of every allocated slide.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ContextAssignment {
    pub contexts: BTreeMap<String, Context>,
}

impl ContextAssignment {
    pub fn get(&self, slide_id: &str) -> Option<Context> {
        self.contexts.get(slide_id).copied()
    }

    pub fn count(&self, context: Context) -> usize {
        self.contexts.values().filter(|&&c| c == context).count()
    }

    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }
}

/// Assigns each slide exactly one context, filling quotas finest first.
///
/// For each regional context in the order 1 mm, 2 mm, 4 mm the quota (plus
/// any shortfall carried from a finer context) is drawn uniformly without
/// replacement from the still-unassigned slides eligible there. Whatever is
/// left goes to the slide context. The result depends only on the slide order
/// and the generator state.
pub fn allocate_contexts(
    slides: &[SlideGrid],
    eligibility: &BTreeMap<String, BTreeSet<Context>>,
    alpha: &CompositionVector,
    rng: &mut Rng,
) -> Result<(ContextAssignment, Vec<Warning>)> {
    let mut seen = BTreeSet::new();
    for s in slides {
        if !seen.insert(s.slide_id()) {
            return Err(Error::InvalidConfig(format!("slide {} listed twice", s.slide_id())));
        }
    }
    let q = quota(alpha, slides.len());
    let mut assigned: Vec<Option<Context>> = alloc::vec![None; slides.len()];
    let mut warnings = Vec::new();
    let mut carry = 0usize;
    for (i, ctx) in Context::REGIONAL.into_iter().enumerate() {
        let want = q.get(ctx) + carry;
        let candidates: Vec<usize> = slides
            .iter()
            .enumerate()
            .filter(|(k, s)| {
                assigned[*k].is_none()
                    && eligibility.get(s.slide_id()).is_some_and(|e| e.contains(&ctx))
            })
            .map(|(k, _)| k)
            .collect();
        let take = want.min(candidates.len());
        if want > 0 {
            for pos in index::sample(rng, candidates.len(), take) {
                assigned[candidates[pos]] = Some(ctx);
            }
        }
        carry = want - take;
        if carry > 0 {
            let moved_to = if i + 1 < Context::REGIONAL.len() {
                Context::REGIONAL[i + 1]
            } else {
                Context::Slide
            };
            warnings.push(Warning::QuotaShortfall { context: ctx, requested: want, filled: take, moved_to });
        }
    }
    let contexts = slides
        .iter()
        .zip(assigned)
        .map(|(s, c)| (s.slide_id().into(), c.unwrap_or(Context::Slide)))
        .collect();
    Ok((ContextAssignment { contexts }, warnings))
}

/// Undersamples the majority label within each context partition to the
/// minority count. Retained bags keep their relative order; a partition
/// missing one label is dropped.
pub fn balance_bags(bags: Vec<Bag>, rng: &mut Rng) -> (Vec<Bag>, Vec<Warning>) {
    let mut keep = alloc::vec![false; bags.len()];
    let mut warnings = Vec::new();
    for ctx in Context::GRANULARITY_ORDER {
        let (pos, neg): (Vec<usize>, Vec<usize>) = bags
            .iter()
            .enumerate()
            .filter(|(_, b)| b.context == ctx)
            .map(|(i, _)| i)
            .partition(|&i| bags[i].label);
        if pos.is_empty() && neg.is_empty() {
            continue;
        }
        if pos.is_empty() || neg.is_empty() {
            warnings.push(Warning::PartitionDropped {
                context: ctx,
                cancer: pos.len(),
                non_cancer: neg.len(),
            });
            continue;
        }
        let (minority, majority) = if pos.len() <= neg.len() { (pos, neg) } else { (neg, pos) };
        for &i in &minority {
            keep[i] = true;
        }
        for pos in index::sample(rng, majority.len(), minority.len()) {
            keep[majority[pos]] = true;
        }
    }
    let out = bags
        .into_iter()
        .zip(keep)
        .filter_map(|(b, k)| k.then_some(b))
        .collect();
    (out, warnings)
}

/// Stratified slide-level split. Within each label the slides are shuffled and
/// cut by `val` and `test` fractions (rounded), the rest going to training.
pub fn stratified_split(
    labels: &[bool],
    val: f64,
    test: f64,
    rng: &mut Rng,
) -> Result<Vec<crate::bagging::Split>> {
    use crate::bagging::Split;
    if !(0.0..=1.0).contains(&val) || !(0.0..=1.0).contains(&test) || val + test > 1.0 {
        return Err(Error::InvalidConfig(format!("invalid split fractions val={val} test={test}")));
    }
    let mut out = alloc::vec![Split::Train; labels.len()];
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(rng);
        let n = idx.len() as f64;
        let n_test = libm::round(n * test) as usize;
        let n_val = (libm::round(n * val) as usize).min(idx.len() - n_test);
        for &i in &idx[..n_test] {
            out[i] = Split::Test;
        }
        for &i in &idx[n_test..n_test + n_val] {
            out[i] = Split::Val;
        }
    }
    Ok(out)
}
