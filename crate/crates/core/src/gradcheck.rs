//! Finite-difference audit of the analytic gradients, block by block.

use crate::captioner::{backward, nll_loss};
use crate::converter::BiasPolicy;
use crate::error::Result;
use crate::features::{CategoryRecord, CategoryStatus};
use crate::model::{CaptionModel, ModelConfig};
use crate::numerics::{finite_difference_gradient, SeededRng, Vector, DEFAULT_FD_STEP};
use crate::vocab::{TokenId, Vocabulary, BOS, EOS};

/// Denominator floor of the relative error, so coordinates whose gradient is
/// numerically zero are judged by absolute error instead.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Model with feature dimension 4, hidden size 6 and 9 tokens (three
/// specials, two words, two categories in both numbers), parameters drawn
/// from N(0, 0.5²), plus a random image feature and a caption that mentions
/// both categories.
pub fn tiny_model(seed: u64) -> (CaptionModel, Vector, Vec<TokenId>) {
    let mut rng = SeededRng::new(seed);
    let proto = |rng: &mut SeededRng| Vector::from_vec((0..4).map(|_| rng.normal()).collect());
    let cats = vec![
        CategoryRecord {
            name: "ox".into(),
            singular: "ox".into(),
            plural: "oxen".into(),
            prototype: proto(&mut rng),
            sample_count: 3,
            status: CategoryStatus::Known,
        },
        CategoryRecord {
            name: "hot dog".into(),
            singular: "hot dog".into(),
            plural: "hot dogs".into(),
            prototype: proto(&mut rng),
            sample_count: 3,
            status: CategoryStatus::Known,
        },
    ];
    let names: Vec<_> = cats.iter().map(CategoryRecord::names).collect();
    let vocab = Vocabulary::build(&["a b"], &names, 1).expect("tiny vocabulary");
    let cfg = ModelConfig {
        feature_dim: 4,
        embed_dim: 5,
        hidden_dim: 6,
        converter_bias: true,
        bias_policy: BiasPolicy::default(),
    };
    let mut model = CaptionModel::init(cfg, vocab, cats, seed).expect("tiny model");
    for (_, block) in model.params.blocks_mut() {
        for v in block.iter_mut() {
            *v = 0.5 * rng.normal();
        }
    }
    let feature = Vector::from_vec((0..4).map(|_| rng.normal()).collect());
    let v = model.vocab.len() as u32;
    let mut tokens = vec![BOS];
    for _ in 0..5 {
        // Any token except <bos>.
        tokens.push(TokenId(1 + rng.below(v as usize - 1) as u32));
    }
    let (s, p) = model.vocab.category_tokens(1).expect("category");
    tokens.extend([s, p, EOS]);
    (model, feature, tokens)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockCheck {
    pub name: &'static str,
    pub max_relative_error: f64,
    pub passed: bool,
}

/// Compares every parameter block's analytic gradient with central
/// differences. `corrupt` names a block whose analytic gradient is
/// deliberately perturbed (negative control).
pub fn audit_model(
    model: &CaptionModel,
    feature: &[f64],
    tokens: &[TokenId],
    tolerance: f64,
    corrupt: Option<&str>,
) -> Result<Vec<BlockCheck>> {
    let tables = model.tables()?;
    let (_, mut grads) = backward(model, &tables, feature, tokens)?;
    if let Some(target) = corrupt {
        for (name, g) in grads.blocks_mut() {
            if name == target {
                if let Some(first) = g.first_mut() {
                    *first += 1.0;
                }
            }
        }
    }
    let analytic = grads.blocks();
    let names: Vec<&'static str> = model.params.blocks().iter().map(|(n, _)| *n).collect();
    let mut report = Vec::with_capacity(names.len());
    for (k, name) in names.into_iter().enumerate() {
        let x = model.params.blocks()[k].1.to_vec();
        let numeric = finite_difference_gradient(
            |probe| {
                let mut m = model.clone();
                m.params.blocks_mut()[k].1.copy_from_slice(probe);
                let loss = m
                    .tables()
                    .and_then(|t| nll_loss(&m.params.captioner, &t, feature, tokens));
                loss.unwrap_or(f64::NAN)
            },
            &x,
            DEFAULT_FD_STEP,
        )?;
        let max_relative_error = analytic[k]
            .1
            .iter()
            .zip(numeric.iter())
            .map(|(a, n)| relative_error(*a, *n))
            .fold(0.0, f64::max);
        report.push(BlockCheck {
            name,
            max_relative_error,
            passed: max_relative_error < tolerance,
        });
    }
    Ok(report)
}

/// Runs [`audit_model`] on `seeds` tiny models and keeps the worst error per
/// block.
pub fn gradient_audit(first_seed: u64, seeds: u64, tolerance: f64, corrupt: Option<&str>) -> Result<Vec<BlockCheck>> {
    let mut worst: Vec<BlockCheck> = Vec::new();
    for seed in first_seed..first_seed + seeds {
        let (model, feature, tokens) = tiny_model(seed);
        let report = audit_model(&model, &feature, &tokens, tolerance, corrupt)?;
        if worst.is_empty() {
            worst = report;
        } else {
            for (w, r) in worst.iter_mut().zip(report) {
                if r.max_relative_error > w.max_relative_error {
                    w.max_relative_error = r.max_relative_error;
                }
                w.passed &= r.passed;
            }
        }
    }
    Ok(worst)
}

pub fn block_names() -> Vec<&'static str> {
    let (model, _, _) = tiny_model(0);
    model.params.blocks().iter().map(|(n, _)| *n).collect()
}
