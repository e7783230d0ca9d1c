use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::proto::{encode_all, nearest_prototype, single_concept_groups, stack, Prototype, ProtoModel};
use crate::corpus::{Concept, Corpus, Split};
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExportConfig {
    pub trials: usize,
    pub support: usize,
    pub seed: u64,
}

impl Default for ExportConfig {
    fn default() -> Self {
        ExportConfig {
            trials: 100,
            support: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtoPointKind {
    Prototype,
    Example,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtoPoint {
    pub kind: ProtoPointKind,
    pub concept_id: String,
    pub x: f64,
    pub y: f64,
    pub problem_id: Option<String>,
}

/// Correct in at least 95% of trials.
pub fn is_prototypical(correct: usize, trials: usize) -> bool {
    trials > 0 && 100 * correct >= 95 * trials
}

/// Projects rows onto their top two principal components. Each component's
/// loading vector is signed so its first nonzero entry is positive; missing
/// components (rank < 2) give zero coordinates.
pub fn pca_2d(points: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = points.nrows();
    let mut out = Array2::zeros((n, 2));
    if n == 0 {
        return out;
    }
    let mean = points.mean_axis(Axis(0)).expect("non-empty");
    let xc = &points - &mean;
    let gram = xc.dot(&xc.t());
    let g = DMatrix::from_fn(n, n, |i, j| gram[[i, j]]);
    let eig = g.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let scale = gram.diag().sum().max(1.0);
    for (c, &k) in order.iter().take(2).enumerate() {
        let lambda = eig.eigenvalues[k];
        if lambda <= 1e-12 * scale {
            continue;
        }
        let u = Array1::from_iter(eig.eigenvectors.column(k).iter().copied());
        let mut loading = xc.t().dot(&u) / lambda.sqrt();
        let tol = 1e-12 * loading.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if let Some(&first) = loading.iter().find(|v| v.abs() > tol) {
            if first < 0.0 {
                loading.mapv_inplace(|v| -v);
            }
        }
        out.column_mut(c).assign(&xc.dot(&loading));
    }
    out
}

/// Repeats random support draws, keeps dev problems classified correctly in
/// at least 95% of draws, and projects them with one drawn prototype per
/// concept into the plane.
pub fn export_prototypes(
    model: &ProtoModel,
    corpus: &Corpus,
    table: &EmbeddingTable,
    concepts: &[Concept],
    cfg: &ExportConfig,
) -> Result<Vec<ProtoPoint>> {
    if cfg.trials < 20 {
        return Err(Error::invalid(format!("need at least 20 trials, got {}", cfg.trials)));
    }
    if cfg.support == 0 {
        return Err(Error::invalid("support size must be positive"));
    }
    let order: BTreeMap<&str, u32> = concepts.iter().map(|c| (c.id.as_str(), c.order_index)).collect();
    let groups = single_concept_groups(corpus, Split::Train);
    let classes: Vec<&String> = groups
        .iter()
        .filter(|(c, ps)| ps.len() >= cfg.support && order.contains_key(c.as_str()))
        .map(|(c, _)| c)
        .collect();
    if classes.is_empty() {
        return Err(Error::invalid(format!(
            "no concept has {} single-concept train problems",
            cfg.support
        )));
    }
    let train_enc = encode_all(
        model,
        table,
        classes.iter().flat_map(|c| groups[*c].iter().map(|p| p.id.as_str())),
    )?;
    let dev: Vec<(&str, &String)> = single_concept_groups(corpus, Split::Dev)
        .into_iter()
        .filter(|(c, _)| classes.contains(&c))
        .flat_map(|(_, ps)| ps.into_iter().map(|p| (p.id.as_str(), p.concept_tags.iter().next().expect("one"))))
        .collect();
    let dev_enc = encode_all(model, table, dev.iter().map(|(id, _)| *id))?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut correct = vec![0usize; dev.len()];
    let mut drawn: Vec<Vec<Prototype>> = Vec::with_capacity(cfg.trials);
    for _ in 0..cfg.trials {
        let mut protos = Vec::with_capacity(classes.len());
        for c in &classes {
            let picks: Vec<_> = groups[*c].choose_multiple(&mut rng, cfg.support).collect();
            let rows: Vec<&Array1<f64>> = picks.iter().map(|p| &train_enc[&p.id]).collect();
            let mean = stack(&rows).mean_axis(Axis(0)).expect("non-empty");
            protos.push(Prototype {
                concept_id: (*c).clone(),
                order_index: order[c.as_str()],
                vector: mean.to_vec(),
                support: picks.iter().map(|p| p.id.clone()).collect(),
            });
        }
        for (i, (id, gold)) in dev.iter().enumerate() {
            let q = &dev_enc[*id];
            let k = nearest_prototype(q.as_slice().expect("contiguous"), &protos).expect("non-empty");
            if &protos[k].concept_id == *gold {
                correct[i] += 1;
            }
        }
        drawn.push(protos);
    }

    let mut labels = Vec::new();
    let mut rows: Vec<Array1<f64>> = Vec::new();
    for (k, c) in classes.iter().enumerate() {
        let t = rng.random_range(0..cfg.trials);
        rows.push(Array1::from(drawn[t][k].vector.clone()));
        labels.push((ProtoPointKind::Prototype, (*c).clone(), None));
    }
    for (i, (id, gold)) in dev.iter().enumerate() {
        if is_prototypical(correct[i], cfg.trials) {
            rows.push(dev_enc[*id].clone());
            labels.push((ProtoPointKind::Example, (*gold).clone(), Some((*id).to_owned())));
        }
    }
    let refs: Vec<&Array1<f64>> = rows.iter().collect();
    let xy = pca_2d(stack(&refs).view());
    Ok(labels
        .into_iter()
        .enumerate()
        .map(|(i, (kind, concept_id, problem_id))| ProtoPoint {
            kind,
            concept_id,
            x: xy[[i, 0]],
            y: xy[[i, 1]],
            problem_id,
        })
        .collect())
}

pub fn prototype_csv(points: &[ProtoPoint]) -> String {
    let mut out = String::from("kind,concept_id,x,y,problem_id\n");
    for p in points {
        let kind = match p.kind {
            ProtoPointKind::Prototype => "prototype",
            ProtoPointKind::Example => "example",
        };
        let _ = writeln!(
            out,
            "{kind},{},{},{},{}",
            p.concept_id,
            p.x,
            p.y,
            p.problem_id.as_deref().unwrap_or("")
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn threshold_edges() {
        assert!(!is_prototypical(94, 100));
        assert!(is_prototypical(95, 100));
        assert!(is_prototypical(96, 100));
        assert!(is_prototypical(19, 20));
        assert!(!is_prototypical(18, 20));
    }

    #[test]
    fn planar_points_keep_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dim = 768;
        let basis: Vec<Array1<f64>> = (0..2)
            .map(|_| Array1::from_shape_fn(dim, |_| rng.random_range(-1.0..1.0)))
            .collect();
        // orthonormalise
        let e0 = &basis[0] / basis[0].dot(&basis[0]).sqrt();
        let b1 = &basis[1] - &(&e0 * e0.dot(&basis[1]));
        let e1 = &b1 / b1.dot(&b1).sqrt();
        let offset = Array1::from_shape_fn(dim, |_| rng.random_range(-5.0..5.0));
        let n = 12;
        let mut pts = Array2::zeros((n, dim));
        for i in 0..n {
            let (a, b) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            pts.row_mut(i).assign(&(&offset + &(&e0 * a) + &(&e1 * b)));
        }
        let xy = pca_2d(pts.view());
        for i in 0..n {
            for j in 0..n {
                let d_full = (&pts.row(i) - &pts.row(j)).mapv(|v| v * v).sum().sqrt();
                let d_flat = (&xy.row(i) - &xy.row(j)).mapv(|v| v * v).sum().sqrt();
                assert!((d_full - d_flat).abs() < 1e-6, "{d_full} vs {d_flat}");
            }
        }
    }

    #[test]
    fn sign_rule_is_stable_under_point_negation() {
        let pts = ndarray::array![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.5, 0.0], [0.0, -0.5, 0.0]];
        let a = pca_2d(pts.view());
        let b = pca_2d((-&pts).view());
        // negating inputs flips the centred data, so coordinates flip with loadings pinned
        for i in 0..4 {
            assert!((a[[i, 0]] + b[[i, 0]]).abs() < 1e-12);
        }
    }
}
