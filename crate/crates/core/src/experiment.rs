//! The full chain for one composition vector: eligibility, allocation,
//! balancing, training and the evaluation matrix.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec::Vec;

use crate::allocation::{allocate_contexts, balance_bags, CompositionVector, ContextAssignment, Warning};
use crate::bagging::{build_bags, usable_contexts, Bag, PatchAnnotation, RegionRule, Split};
use crate::embeddings::EmbeddingStore;
use crate::error::{Error, Result};
use crate::evaluation::{context_matrix, ContextMatrix};
use crate::geometry::{Context, SlideGrid};
use crate::rng::{stream_rng, streams};
use crate::training::{train, TrainConfig, TrainReport};

/// A slide with everything needed to bag it.
#[derive(Clone, Debug)]
pub struct CohortSlide {
    pub grid: SlideGrid,
    pub split: Split,
    pub annotations: Vec<PatchAnnotation>,
    pub store: EmbeddingStore,
}

/// A slide's bags at every context it can supervise, built once and reused
/// across composition vectors.
#[derive(Clone, Debug)]
pub struct PreparedSlide {
    pub grid: SlideGrid,
    pub split: Split,
    pub usable: BTreeSet<Context>,
    pub bags: BTreeMap<Context, Vec<Bag>>,
}

#[derive(Clone, Debug)]
pub struct PreparedCohort {
    pub dim: usize,
    pub slides: Vec<PreparedSlide>,
}

impl PreparedCohort {
    pub fn prepare(cohort: &[CohortSlide], rule: &RegionRule) -> Result<Self> {
        let dim = cohort.first().ok_or(Error::Empty("cohort"))?.store.dim();
        let mut slides = Vec::with_capacity(cohort.len());
        for s in cohort {
            if s.store.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: s.store.dim() });
            }
            let usable = usable_contexts(&s.grid, &s.annotations, rule)?;
            let mut bags = BTreeMap::new();
            for &ctx in &usable {
                bags.insert(ctx, build_bags(&s.grid, &s.store, &s.annotations, ctx, s.split, rule)?);
            }
            slides.push(PreparedSlide { grid: s.grid.clone(), split: s.split, usable, bags });
        }
        Ok(PreparedCohort { dim, slides })
    }

    fn in_split(&self, split: Split) -> impl Iterator<Item = &PreparedSlide> {
        self.slides.iter().filter(move |s| s.split == split)
    }

    /// Every bag of the test slides at each context, in table order.
    pub fn test_sets(&self) -> [Vec<Bag>; 4] {
        Context::TABLE_ORDER.map(|ctx| {
            self.in_split(Split::Test)
                .flat_map(|s| s.bags.get(&ctx).into_iter().flatten().cloned())
                .collect()
        })
    }

    /// Allocates the slides of one split.
    pub fn allocate(
        &self,
        split: Split,
        alpha: &CompositionVector,
        stream: u64,
        seed: u64,
    ) -> Result<(ContextAssignment, Vec<Warning>)> {
        let slides: Vec<&PreparedSlide> = self.in_split(split).collect();
        let grids: Vec<SlideGrid> = slides.iter().map(|s| s.grid.clone()).collect();
        let eligibility = slides
            .iter()
            .map(|s| (s.grid.slide_id().into(), s.usable.clone()))
            .collect();
        allocate_contexts(&grids, &eligibility, alpha, &mut stream_rng(seed, stream))
    }

    /// Bags of the split's slides at their assigned contexts. Slides missing
    /// from the assignment are skipped; an assignment to a context the slide
    /// cannot supervise is an error.
    pub fn assigned_bags(&self, split: Split, assignment: &ContextAssignment) -> Result<Vec<Bag>> {
        let mut bags = Vec::new();
        for s in self.in_split(split) {
            let Some(ctx) = assignment.get(s.grid.slide_id()) else { continue };
            let b = s.bags.get(&ctx).ok_or_else(|| {
                Error::InvalidConfig(format!("slide {} has no usable {ctx} regions", s.grid.slide_id()))
            })?;
            bags.extend(b.iter().cloned());
        }
        Ok(bags)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub alpha: CompositionVector,
    /// Drives allocation and balancing.
    pub seed: u64,
    pub train: TrainConfig,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub train_assignment: ContextAssignment,
    pub val_assignment: ContextAssignment,
    /// Balanced training bags per context, table order.
    pub train_bag_counts: [usize; 4],
    pub report: TrainReport,
    pub matrix: ContextMatrix,
    pub warnings: Vec<Warning>,
}

/// Trained model and test metrics for fixed train and validation
/// assignments.
#[derive(Clone, Debug)]
pub struct TrainedOutcome {
    /// Balanced training bags per context, table order.
    pub train_bag_counts: [usize; 4],
    pub report: TrainReport,
    pub matrix: ContextMatrix,
    pub warnings: Vec<Warning>,
}

/// Balances the assigned training bags (seeded by `balance_seed`), trains, and
/// evaluates on every test context.
pub fn train_and_evaluate(
    cohort: &PreparedCohort,
    train_assignment: &ContextAssignment,
    val_assignment: &ContextAssignment,
    balance_seed: u64,
    config: &TrainConfig,
) -> Result<TrainedOutcome> {
    let train_bags = cohort.assigned_bags(Split::Train, train_assignment)?;
    let val_bags = cohort.assigned_bags(Split::Val, val_assignment)?;
    let (train_bags, warnings) = balance_bags(train_bags, &mut stream_rng(balance_seed, streams::BALANCE));
    if train_bags.is_empty() {
        return Err(Error::Empty("balanced training bags"));
    }
    let train_bag_counts = Context::TABLE_ORDER.map(|ctx| train_bags.iter().filter(|b| b.context == ctx).count());
    let report = train(&train_bags, &val_bags, cohort.dim, config)?;
    let tests = cohort.test_sets();
    let matrix = context_matrix(
        &report.best_params,
        [&tests[0][..], &tests[1][..], &tests[2][..], &tests[3][..]],
        config.tau,
    )?;
    Ok(TrainedOutcome { train_bag_counts, report, matrix, warnings })
}

/// Runs one composition vector end to end. Training slides are allocated and
/// their bags balanced per context; validation slides are allocated with the
/// same vector but left unbalanced.
pub fn run_experiment(cohort: &PreparedCohort, config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let (train_assignment, mut warnings) =
        cohort.allocate(Split::Train, &config.alpha, streams::ALLOCATE_TRAIN, config.seed)?;
    let (val_assignment, val_warnings) =
        cohort.allocate(Split::Val, &config.alpha, streams::ALLOCATE_VAL, config.seed)?;
    warnings.extend(val_warnings);
    let out = train_and_evaluate(cohort, &train_assignment, &val_assignment, config.seed, &config.train)?;
    warnings.extend(out.warnings);
    Ok(ExperimentOutcome {
        train_assignment,
        val_assignment,
        train_bag_counts: out.train_bag_counts,
        report: out.report,
        matrix: out.matrix,
        warnings,
    })
}
