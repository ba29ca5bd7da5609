//! Randomized finite-difference checks of every analytic gradient.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec::DataTagIndexSet;
use crate::contrastive::{positive_sets, span_contrastive_loss, SpanAxis};
use crate::corpus::{generate_annotations, generate_grid, sample_rng, CorpusConfig};
use crate::filter::{filter_bce_loss, FilterParams};
use crate::losses::{finite_diff_gradient, relative_error, tag_classification_loss, LossError, TagLogits};
use crate::matrix::FeatureMatrix;
use crate::pointer::{empty_pointer_loss, pointer_feature_grads, pointer_logits, pointer_loss, Temperature};

pub const DEFAULT_STEP: f64 = 1e-6;

/// Largest relative error seen per gradient.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GradientCheck {
    pub seeds: usize,
    pub ptr: f64,
    pub ptr_features: f64,
    pub ptr_empty: f64,
    pub contr: f64,
    pub cls: f64,
    pub filter: f64,
}

impl GradientCheck {
    pub fn max(&self) -> f64 {
        [
            self.ptr,
            self.ptr_features,
            self.ptr_empty,
            self.contr,
            self.cls,
            self.filter,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

fn uniform<R: Rng>(rng: &mut R, rows: usize, dim: usize, scale: f64) -> FeatureMatrix {
    let values = (0..rows * dim).map(|_| rng.gen_range(-scale..scale)).collect();
    FeatureMatrix::new(rows, dim, values).expect("finite")
}

fn reshape(like: &FeatureMatrix, values: &[f64]) -> FeatureMatrix {
    FeatureMatrix::new(like.rows(), like.dim(), values.to_vec()).expect("finite probe")
}

/// Random data-tag positions among `t` tags, at least one.
fn random_tags<R: Rng>(rng: &mut R, t: usize) -> DataTagIndexSet {
    let mut positions: Vec<usize> = (0..t).filter(|_| rng.gen_bool(0.6)).collect();
    if positions.is_empty() {
        positions.push(rng.gen_range(0..t));
    }
    DataTagIndexSet::from_positions(positions)
}

pub fn check_pointer<R: Rng>(rng: &mut R, h: f64) -> Result<(f64, f64), LossError> {
    let (n, t, d) = (rng.gen_range(1..6), rng.gen_range(1..7), rng.gen_range(2..6));
    let tags_d = random_tags(rng, t);
    let boxes = uniform(rng, n, d, 1.0);
    let tags = uniform(rng, t, d, 1.0);
    let tau = Temperature::new(rng.gen_range(0.1..1.0)).expect("positive");
    let targets: Vec<usize> = (0..n).map(|_| rng.gen_range(0..tags_d.len())).collect();

    let logits = pointer_logits(&boxes, &tags, &tags_d, tau).expect("shapes");
    let loss = pointer_loss(&logits, &targets).expect("targets");
    let numeric = finite_diff_gradient(
        |x| pointer_loss(&reshape(&logits, x), &targets).expect("targets").loss,
        logits.values(),
        h,
    )?;
    let at_logits = relative_error(loss.grad_logits.values(), &numeric);

    let (g_boxes, g_tags) = pointer_feature_grads(&boxes, &tags, &tags_d, tau, &loss.grad_logits).expect("shapes");
    let split = boxes.values().len();
    let mut x0 = boxes.values().to_vec();
    x0.extend_from_slice(tags.values());
    let numeric = finite_diff_gradient(
        |x| {
            let b = reshape(&boxes, &x[..split]);
            let t = reshape(&tags, &x[split..]);
            let l = pointer_logits(&b, &t, &tags_d, tau).expect("shapes");
            pointer_loss(&l, &targets).expect("targets").loss
        },
        &x0,
        h,
    )?;
    let mut analytic = g_boxes.values().to_vec();
    analytic.extend_from_slice(g_tags.values());
    Ok((at_logits, relative_error(&analytic, &numeric)))
}

pub fn check_empty<R: Rng>(rng: &mut R, h: f64) -> Result<f64, LossError> {
    let (t, d) = (rng.gen_range(1..7), rng.gen_range(2..6));
    let tags_d = random_tags(rng, t);
    let special: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let tags = uniform(rng, t, d, 1.5);
    let labels: Vec<bool> = (0..tags_d.len()).map(|_| rng.gen_bool(0.5)).collect();
    let loss = empty_pointer_loss(&special, &tags, &tags_d, &labels).expect("shapes");
    let mut x0 = special.clone();
    x0.extend_from_slice(tags.values());
    let numeric = finite_diff_gradient(
        |x| {
            empty_pointer_loss(&x[..d], &reshape(&tags, &x[d..]), &tags_d, &labels)
                .expect("shapes")
                .loss
        },
        &x0,
        h,
    )?;
    let mut analytic = loss.grad_special.clone();
    analytic.extend_from_slice(loss.grad_tags.values());
    Ok(relative_error(&analytic, &numeric))
}

/// Returns `None` when the random table has no positive pairs.
pub fn check_contrastive<R: Rng>(rng: &mut R, h: f64) -> Result<Option<f64>, LossError> {
    let cfg = CorpusConfig {
        max_rows: 4,
        max_cols: 4,
        span_probability: 0.4,
        max_span: 3,
        max_boxes_per_cell: 2,
        ..CorpusConfig::default()
    };
    let grid = generate_grid(rng, &cfg);
    let ann = generate_annotations(rng, &grid);
    let axis = if rng.gen_bool(0.5) {
        SpanAxis::Row
    } else {
        SpanAxis::Column
    };
    let sets = positive_sets(&grid, &ann, axis).expect("targets exist");
    if ann.is_empty() {
        return Ok(None);
    }
    let d = rng.gen_range(2..6);
    let emb = uniform(rng, ann.len(), d, 1.0);
    let tau = Temperature::new(rng.gen_range(0.2..1.0)).expect("positive");
    let loss = span_contrastive_loss(&emb, &sets, tau).expect("valid sets");
    if loss.counted == 0 {
        return Ok(None);
    }
    let numeric = finite_diff_gradient(
        |x| {
            span_contrastive_loss(&reshape(&emb, x), &sets, tau)
                .expect("valid sets")
                .mean
        },
        emb.values(),
        h,
    )?;
    Ok(Some(relative_error(loss.grad.values(), &numeric)))
}

pub fn check_cls<R: Rng>(rng: &mut R, h: f64) -> Result<f64, LossError> {
    let (t, v) = (rng.gen_range(1..8), rng.gen_range(2..7));
    let logits = uniform(rng, t, v, 3.0);
    let targets = (0..t).map(|_| rng.gen_range(0..v)).collect();
    let tl = TagLogits::new(logits.clone(), targets)?;
    let analytic = tag_classification_loss(&tl).grad;
    let numeric = finite_diff_gradient(
        |x| {
            let probe = TagLogits::new(reshape(&logits, x), tl.targets().to_vec()).expect("same targets");
            tag_classification_loss(&probe).loss
        },
        logits.values(),
        h,
    )?;
    Ok(relative_error(analytic.values(), &numeric))
}

pub fn check_filter<R: Rng>(rng: &mut R, h: f64) -> Result<f64, LossError> {
    let (n, d) = (rng.gen_range(1..7), rng.gen_range(2..6));
    let hidden = FilterParams::default_hidden(d);
    let params = FilterParams::new(
        uniform(rng, hidden, d, 1.0),
        (0..hidden).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        (0..hidden).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        rng.gen_range(-0.5..0.5),
    )
    .expect("finite");
    let b = uniform(rng, n, d, 1.0);
    let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
    let analytic = filter_bce_loss(&b, &params, &labels).expect("shapes").grad.flatten();
    let numeric = finite_diff_gradient(
        |x| {
            let p = FilterParams::from_flat(d, hidden, x).expect("same layout");
            filter_bce_loss(&b, &p, &labels).expect("shapes").loss
        },
        &params.flatten(),
        h,
    )?;
    Ok(relative_error(&analytic, &numeric))
}

/// Runs every check once per seed in `0..n_seeds` of the stream family `seed`.
pub fn run_gradient_suite(seed: u64, n_seeds: usize, h: f64) -> Result<GradientCheck, LossError> {
    let mut report = GradientCheck {
        seeds: n_seeds,
        ..Default::default()
    };
    for i in 0..n_seeds as u64 {
        let mut rng = sample_rng(seed, i);
        let (at_logits, at_features) = check_pointer(&mut rng, h)?;
        report.ptr = report.ptr.max(at_logits);
        report.ptr_features = report.ptr_features.max(at_features);
        report.ptr_empty = report.ptr_empty.max(check_empty(&mut rng, h)?);
        if let Some(e) = check_contrastive(&mut rng, h)? {
            report.contr = report.contr.max(e);
        }
        report.cls = report.cls.max(check_cls(&mut rng, h)?);
        report.filter = report.filter.max(check_filter(&mut rng, h)?);
    }
    Ok(report)
}
