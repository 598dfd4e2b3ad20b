//! Exact path-dependent Shapley values for trees (polynomial-time
//! TreeSHAP), plus a brute-force coalition oracle for small trees.

use crate::error::{NowcastError, Result};
use crate::models::{FittedModel, ModelParams, Tree};

use super::{AttributionVector, Method};

#[derive(Debug, Clone, Copy)]
struct PathElem {
    feature: usize,
    zero: f64,
    one: f64,
    weight: f64,
}

const NO_FEATURE: usize = usize::MAX;

fn extend(path: &mut Vec<PathElem>, zero: f64, one: f64, feature: usize) {
    let l = path.len();
    path.push(PathElem {
        feature,
        zero,
        one,
        weight: if l == 0 { 1.0 } else { 0.0 },
    });
    for i in (0..l).rev() {
        path[i + 1].weight += one * path[i].weight * (i + 1) as f64 / (l + 1) as f64;
        path[i].weight = zero * path[i].weight * (l - i) as f64 / (l + 1) as f64;
    }
}

fn unwind(path: &mut Vec<PathElem>, k: usize) {
    let d = path.len() - 1;
    let (one, zero) = (path[k].one, path[k].zero);
    let mut next = path[d].weight;
    for i in (0..d).rev() {
        if one != 0.0 {
            let tmp = path[i].weight;
            path[i].weight = next * (d + 1) as f64 / ((i + 1) as f64 * one);
            next = tmp - path[i].weight * zero * (d - i) as f64 / (d + 1) as f64;
        } else {
            path[i].weight = path[i].weight * (d + 1) as f64 / (zero * (d - i) as f64);
        }
    }
    for i in k..d {
        path[i].feature = path[i + 1].feature;
        path[i].zero = path[i + 1].zero;
        path[i].one = path[i + 1].one;
    }
    path.pop();
}

fn unwound_sum(path: &[PathElem], k: usize) -> f64 {
    let d = path.len() - 1;
    let (one, zero) = (path[k].one, path[k].zero);
    let mut next = path[d].weight;
    let mut total = 0.0;
    for i in (0..d).rev() {
        if one != 0.0 {
            let tmp = next * (d + 1) as f64 / ((i + 1) as f64 * one);
            total += tmp;
            next = path[i].weight - tmp * zero * (d - i) as f64 / (d + 1) as f64;
        } else {
            total += path[i].weight * (d + 1) as f64 / (zero * (d - i) as f64);
        }
    }
    total
}

fn recurse(
    tree: &Tree,
    x: &[f64],
    phi: &mut [f64],
    node: usize,
    mut path: Vec<PathElem>,
    zero: f64,
    one: f64,
    feature: usize,
) {
    extend(&mut path, zero, one, feature);
    let n = &tree.nodes[node];
    match &n.split {
        None => {
            for i in 1..path.len() {
                let w = unwound_sum(&path, i);
                phi[path[i].feature] += w * (path[i].one - path[i].zero) * n.value;
            }
        }
        Some(s) => {
            let (hot, cold) = if x[s.feature] <= s.threshold {
                (s.left, s.right)
            } else {
                (s.right, s.left)
            };
            let (mut in_zero, mut in_one) = (1.0, 1.0);
            if let Some(k) = (1..path.len()).find(|&k| path[k].feature == s.feature) {
                in_zero = path[k].zero;
                in_one = path[k].one;
                unwind(&mut path, k);
            }
            let cover = n.cover;
            recurse(
                tree,
                x,
                phi,
                hot,
                path.clone(),
                in_zero * tree.nodes[hot].cover / cover,
                in_one,
                s.feature,
            );
            recurse(
                tree,
                x,
                phi,
                cold,
                path,
                in_zero * tree.nodes[cold].cover / cover,
                0.0,
                s.feature,
            );
        }
    }
}

/// Shapley values of one tree at `x` over `p` features, and the base value.
pub fn tree_shap_single(tree: &Tree, x: &[f64], p: usize) -> (f64, Vec<f64>) {
    let mut phi = vec![0.0; p];
    recurse(tree, x, &mut phi, 0, Vec::new(), 1.0, 1.0, NO_FEATURE);
    (tree.expected_value(), phi)
}

/// Expected tree output when only the features in `known` are fixed to
/// `x`, others integrated out by cover-weighted traversal.
fn conditional(tree: &Tree, x: &[f64], known: u64, node: usize) -> f64 {
    let n = &tree.nodes[node];
    match &n.split {
        None => n.value,
        Some(s) if known >> s.feature & 1 == 1 => conditional(
            tree,
            x,
            known,
            if x[s.feature] <= s.threshold {
                s.left
            } else {
                s.right
            },
        ),
        Some(s) => {
            let (l, r) = (&tree.nodes[s.left], &tree.nodes[s.right]);
            (l.cover * conditional(tree, x, known, s.left)
                + r.cover * conditional(tree, x, known, s.right))
                / n.cover
        }
    }
}

/// Shapley values by enumerating all `2^p` coalitions (p <= 20).
pub fn brute_force_shapley(tree: &Tree, x: &[f64], p: usize) -> (f64, Vec<f64>) {
    assert!(p <= 20, "coalition enumeration limited to 20 features");
    let values: Vec<f64> = (0..1u64 << p).map(|s| conditional(tree, x, s, 0)).collect();
    let mut fact = vec![1.0f64; p + 1];
    for k in 1..=p {
        fact[k] = fact[k - 1] * k as f64;
    }
    let mut phi = vec![0.0; p];
    for (i, ph) in phi.iter_mut().enumerate() {
        for s in 0..1u64 << p {
            if s >> i & 1 == 1 {
                continue;
            }
            let size = s.count_ones() as usize;
            let w = fact[size] * fact[p - size - 1] / fact[p];
            *ph += w * (values[(s | 1 << i) as usize] - values[s as usize]);
        }
    }
    (values[0], phi)
}

/// Ensemble Shapley values: base value and per-feature attributions.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeShap {
    pub base: f64,
    pub values: Vec<f64>,
}

fn ensemble(model: &FittedModel, x: &[f64]) -> Result<TreeShap> {
    let p = model.feature_names.len();
    match &model.params {
        ModelParams::Forest(f) => {
            let m = f.trees.len() as f64;
            let mut base = 0.0;
            let mut values = vec![0.0; p];
            for t in &f.trees {
                let (b, phi) = tree_shap_single(t, x, p);
                base += b / m;
                values.iter_mut().zip(&phi).for_each(|(v, ph)| *v += ph / m);
            }
            Ok(TreeShap { base, values })
        }
        ModelParams::Boosted(b) => {
            let mut base = b.init;
            let mut values = vec![0.0; p];
            for t in &b.trees {
                let (e, phi) = tree_shap_single(t, x, p);
                base += b.learning_rate * e;
                values
                    .iter_mut()
                    .zip(&phi)
                    .for_each(|(v, ph)| *v += b.learning_rate * ph);
            }
            Ok(TreeShap { base, values })
        }
        _ => Err(NowcastError::UnsupportedFamily {
            method: "tree_shap",
            family: model.family().to_string(),
        }),
    }
}

/// Local Shapley attribution of a forest or boosted ensemble at `x`.
pub fn tree_shap(model: &FittedModel, x: &[f64]) -> Result<AttributionVector> {
    let s = ensemble(model, x)?;
    let mut v = AttributionVector::new(
        &model.spec.id,
        Method::TreeShap,
        model.feature_names.clone(),
        s.values,
    )
    .meta("algorithm", "path-dependent exact TreeSHAP")
    .meta("background", "none (training covers)");
    v.base_value = Some(s.base);
    v.prediction = Some(model.predict_input(x));
    Ok(v)
}
