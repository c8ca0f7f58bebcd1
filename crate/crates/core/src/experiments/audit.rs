//! Checks that every fitted component saw training rows only.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{Prepared, SplitKind};
use crate::autoencoder::input_stats;
use crate::classifiers::{fit_standardizer, TrainedModel};
use crate::preprocess::ResampledSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageAudit {
    pub passed: bool,
    pub checks: Vec<AuditCheck>,
}

impl LeakageAudit {
    pub fn failures(&self) -> Vec<String> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{}: {}", c.name, c.detail))
            .collect()
    }
}

type Key = (String, String);

fn source_keys(rows: &[ResampledSequence]) -> BTreeSet<Key> {
    rows.iter()
        .map(|r| (r.subject_id.clone(), r.source_id().to_string()))
        .collect()
}

fn row_keys(rows: &[ResampledSequence]) -> Vec<Key> {
    rows.iter()
        .map(|r| (r.subject_id.clone(), r.sequence_id.clone()))
        .collect()
}

struct Checks(Vec<AuditCheck>);

impl Checks {
    fn add(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.0.push(AuditCheck {
            name: name.to_string(),
            passed,
            detail: if passed { "ok".into() } else { detail.into() },
        });
    }
}

/// Audits prepared partitions and the model trained on `p.train`.
///
/// Fitted statistics (autoencoder input transforms and the classifier's
/// standardization) are recomputed from the training partition alone and
/// must match bit for bit.
pub fn audit(p: &Prepared, model: &TrainedModel) -> LeakageAudit {
    let mut c = Checks(Vec::new());
    let train_src = source_keys(&p.train_original);
    let dev_src = source_keys(&p.dev);
    let test_src = source_keys(&p.test);

    let overlap = train_src.intersection(&dev_src).count()
        + train_src.intersection(&test_src).count()
        + dev_src.intersection(&test_src).count();
    c.add(
        "partitions_disjoint",
        overlap == 0,
        format!("{overlap} source sequences shared between partitions"),
    );

    if p.split == SplitKind::Subject {
        let subj = |rows: &[ResampledSequence]| rows.iter().map(|r| r.subject_id.clone()).collect::<BTreeSet<_>>();
        let (a, b, t) = (subj(&p.train_original), subj(&p.dev), subj(&p.test));
        let shared = a.intersection(&b).count() + a.intersection(&t).count() + b.intersection(&t).count();
        c.add("subjects_disjoint", shared == 0, format!("{shared} subjects shared between partitions"));
    }

    let eval_augmented = p.dev.iter().chain(&p.test).filter(|r| r.is_augmented()).count();
    c.add(
        "no_augmented_eval_rows",
        eval_augmented == 0,
        format!("{eval_augmented} augmented rows in dev/test"),
    );
    let foreign = source_keys(&p.train_augmented).difference(&train_src).count();
    c.add(
        "augmentation_from_train",
        foreign == 0,
        format!("{foreign} augmented rows derive from outside the training partition"),
    );

    if let Some(aes) = &p.autoencoders {
        let mut ok = true;
        for (ch, ae) in aes.models.iter().enumerate() {
            if ae.mean == 0.0 && ae.std == 1.0 {
                continue;
            }
            let data: Vec<Vec<f64>> = p.train_augmented.iter().map(|r| r.channel(ch)).collect();
            let (mean, std) = input_stats(&data);
            ok &= ae.mean.to_bits() == mean.to_bits() && ae.std.to_bits() == std.to_bits();
        }
        c.add(
            "autoencoder_fit_on_train",
            ok,
            "autoencoder input statistics differ from the training partition's",
        );
        let same = row_keys(&p.train) == row_keys(&p.train_augmented);
        c.add("denoised_train_rows", same, "denoised training rows differ from the fitted rows");
    }

    let refit = fit_standardizer(model.kind(), &p.train);
    c.add(
        "standardizer_fit_on_train",
        &refit == model.standardizer(),
        "classifier standardization differs from the training partition's",
    );

    if let TrainedModel::Knn(m) = model {
        let same = m.train_x.len() == p.train.len()
            && m.train_x.iter().zip(&p.train).all(|(x, r)| *x == m.standardizer.flat(r));
        c.add("knn_memory_is_train", same, "stored neighbours are not the training rows");
    }

    LeakageAudit {
        passed: c.0.iter().all(|x| x.passed),
        checks: c.0,
    }
}
