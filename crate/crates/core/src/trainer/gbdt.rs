//! Binary log-loss gradient boosting with exact greedy splits and
//! second-order (Newton) leaf values.

use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use super::{log_loss, sigmoid, Dataset, Scorer};
use crate::error::{Error, Result};
use crate::features::FeatureVector;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_child_weight: f64,
    pub l2_leaf_reg: f64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        GbdtConfig {
            n_trees: 100,
            max_depth: 2,
            learning_rate: 0.05,
            min_child_weight: 20.0,
            l2_leaf_reg: 10.0,
        }
    }
}

impl GbdtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth == 0 {
            return Err(Error::Config("max_depth must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::Config(format!("learning_rate {} outside (0, 1]", self.learning_rate)));
        }
        if !(self.min_child_weight >= 0.0) || !(self.l2_leaf_reg >= 0.0) {
            return Err(Error::Config("min_child_weight and l2_leaf_reg must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Tree {
            nodes: vec![Node::Leaf { value }],
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    fn scale_leaves(&mut self, factor: f64) {
        for node in &mut self.nodes {
            if let Node::Leaf { value } = node {
                *value *= factor;
            }
        }
    }
}

/// Trained ensemble: `p(x) = sigmoid(base_score + sum_t tree_t(x))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub format_version: u32,
    pub base_score: f64,
    /// Weighted positive fraction of the training data.
    pub base_rate: f64,
    pub config: GbdtConfig,
    pub feature_names: Vec<String>,
    pub trees: Vec<Tree>,
}

impl GbdtModel {
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    pub fn predict_values(&self, x: &[f64]) -> f64 {
        if self.trees.is_empty() {
            // sigmoid(logit(p)) can be an ulp away from p
            return self.base_rate;
        }
        sigmoid(self.margin(x))
    }

    /// Checked prediction on a feature vector.
    pub fn predict(&self, fv: &FeatureVector) -> Result<f64> {
        if fv.len() != self.feature_names.len() {
            return Err(Error::Schema(format!(
                "feature width {} does not match model width {}",
                fv.len(),
                self.feature_names.len()
            )));
        }
        Ok(self.predict_values(&fv.values))
    }

    /// The model after its first `rounds` trees.
    pub fn truncated(&self, rounds: usize) -> GbdtModel {
        GbdtModel {
            trees: self.trees[..rounds.min(self.trees.len())].to_vec(),
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: GbdtModel =
            serde_json::from_str(text).map_err(|e| Error::Model(format!("bad model json: {e}")))?;
        model.validate()?;
        Ok(model)
    }

    /// Structural checks for a deserialized model.
    pub fn validate(&self) -> Result<()> {
        let model = self;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Model(format!(
                "unsupported model format version {}",
                model.format_version
            )));
        }
        if !(model.base_rate > 0.0 && model.base_rate < 1.0) {
            return Err(Error::Model(format!("base rate {} outside (0, 1)", model.base_rate)));
        }
        let width = model.feature_names.len();
        for tree in &model.trees {
            let n = tree.nodes.len();
            if n == 0 {
                return Err(Error::Model("empty tree".into()));
            }
            for node in &tree.nodes {
                if let Node::Split {
                    feature, left, right, ..
                } = *node
                {
                    if feature >= width || left >= n || right >= n {
                        return Err(Error::Model("tree node index out of range".into()));
                    }
                }
            }
        }
        Ok(())
    }
}

impl Scorer for GbdtModel {
    fn score(&self, fv: &FeatureVector) -> Result<f64> {
        self.predict(fv)
    }

    fn feature_names(&self) -> &[String] {
        &self.feature_names
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

struct NodeStats {
    grad: f64,
    hess: f64,
}

/// Fits the ensemble on the dataset's labels and instance weights.
pub fn fit_gbdt(data: &Dataset, cfg: &GbdtConfig) -> Result<GbdtModel> {
    fit_gbdt_traced(data, cfg).map(|(m, _)| m)
}

/// As [`fit_gbdt`], also returning the weighted training log-loss before
/// the first round and after every round.
pub fn fit_gbdt_traced(data: &Dataset, cfg: &GbdtConfig) -> Result<(GbdtModel, Vec<f64>)> {
    cfg.validate()?;
    data.check_binary()?;
    let n = data.len();
    let width = data.width();
    let total_w: f64 = data.weights.iter().sum();
    let pos_w: f64 = data.weights.iter().zip(&data.labels).map(|(w, y)| w * y).sum();
    let p0 = pos_w / total_w;
    let base_score = (p0 / (1.0 - p0)).ln();

    let sorted: Vec<Vec<u32>> = (0..width)
        .map(|f| {
            let col = &data.columns[f];
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
            idx
        })
        .collect();

    let mut margins = vec![base_score; n];
    let mut losses = vec![log_loss(&margins, &data.labels, &data.weights)];
    let mut trees = Vec::with_capacity(cfg.n_trees);
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];

    for _round in 0..cfg.n_trees {
        for i in 0..n {
            let p = sigmoid(margins[i]);
            grad[i] = data.weights[i] * (p - data.labels[i]);
            hess[i] = data.weights[i] * p * (1.0 - p);
        }
        let (mut tree, leaf_of) = grow_tree(data, &sorted, &grad, &hess, cfg);
        let before = *losses.last().expect("initial loss");

        // Newton steps can overshoot where curvature is badly estimated;
        // halve the step until the round does not increase the loss.
        let mut candidate: Vec<f64>;
        let mut factor = 1.0;
        let mut after;
        loop {
            candidate = margins
                .iter()
                .zip(&leaf_of)
                .map(|(m, &leaf)| m + factor * leaf_value(&tree, leaf))
                .collect();
            after = log_loss(&candidate, &data.labels, &data.weights);
            if after <= before || factor < 1e-6 {
                break;
            }
            factor *= 0.5;
        }
        if after > before {
            factor = 0.0;
            candidate = margins.clone();
            after = before;
        }
        if factor != 1.0 {
            tree.scale_leaves(factor);
        }
        margins = candidate;
        losses.push(after);
        trees.push(tree);
    }

    Ok((
        GbdtModel {
            format_version: MODEL_FORMAT_VERSION,
            base_score,
            base_rate: p0,
            config: cfg.clone(),
            feature_names: data.feature_names.clone(),
            trees,
        },
        losses,
    ))
}

fn leaf_value(tree: &Tree, node: usize) -> f64 {
    match tree.nodes[node] {
        Node::Leaf { value } => value,
        Node::Split { .. } => unreachable!("rows end in leaves"),
    }
}

/// Depth-wise growth. Returns the tree and each row's leaf index.
fn grow_tree(
    data: &Dataset,
    sorted: &[Vec<u32>],
    grad: &[f64],
    hess: &[f64],
    cfg: &GbdtConfig,
) -> (Tree, Vec<usize>) {
    let n = data.len();
    let lambda = cfg.l2_leaf_reg;
    let mut node_of = vec![0usize; n];
    let mut stats = vec![NodeStats {
        grad: grad.iter().sum(),
        hess: hess.iter().sum(),
    }];
    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    let mut frontier = vec![0usize];

    for _depth in 0..cfg.max_depth {
        if frontier.is_empty() {
            break;
        }
        // slot of each frontier node, indexed by node id
        let mut slot = vec![usize::MAX; nodes.len()];
        for (s, &node) in frontier.iter().enumerate() {
            slot[node] = s;
        }
        let search = |f: usize| best_splits_for_feature(f, data, &sorted[f], &node_of, &slot, &stats, &frontier, grad, hess, cfg);
        #[cfg(feature = "parallel")]
        let per_feature: Vec<Vec<Option<Candidate>>> = (0..data.width()).into_par_iter().map(search).collect();
        #[cfg(not(feature = "parallel"))]
        let per_feature: Vec<Vec<Option<Candidate>>> = (0..data.width()).map(search).collect();

        let mut best: Vec<Option<Candidate>> = vec![None; frontier.len()];
        for feature_best in per_feature {
            for (b, c) in best.iter_mut().zip(feature_best) {
                if let Some(c) = c {
                    if b.is_none_or(|cur| beats(c.gain, cur.gain)) {
                        *b = Some(c);
                    }
                }
            }
        }

        let mut next = Vec::new();
        let mut children = vec![None; frontier.len()];
        for (s, &node) in frontier.iter().enumerate() {
            let Some(c) = best[s] else { continue };
            let left = nodes.len();
            let right = left + 1;
            nodes.push(Node::Leaf { value: 0.0 });
            nodes.push(Node::Leaf { value: 0.0 });
            stats.push(NodeStats { grad: 0.0, hess: 0.0 });
            stats.push(NodeStats { grad: 0.0, hess: 0.0 });
            nodes[node] = Node::Split {
                feature: c.feature,
                threshold: c.threshold,
                left,
                right,
            };
            children[s] = Some((c.feature, c.threshold, left, right));
            next.push(left);
            next.push(right);
        }
        for i in 0..n {
            let s = slot[node_of[i]];
            if s == usize::MAX {
                continue;
            }
            if let Some((feature, threshold, left, right)) = children[s] {
                let child = if data.columns[feature][i] <= threshold { left } else { right };
                node_of[i] = child;
                stats[child].grad += grad[i];
                stats[child].hess += hess[i];
            }
        }
        frontier = next;
    }

    for (id, node) in nodes.iter_mut().enumerate() {
        if let Node::Leaf { value } = node {
            let denom = stats[id].hess + lambda;
            *value = if denom > 0.0 {
                -cfg.learning_rate * stats[id].grad / denom
            } else {
                0.0
            };
        }
    }
    (Tree { nodes }, node_of)
}

#[allow(clippy::too_many_arguments)]
fn best_splits_for_feature(
    feature: usize,
    data: &Dataset,
    order: &[u32],
    node_of: &[usize],
    slot: &[usize],
    stats: &[NodeStats],
    frontier: &[usize],
    grad: &[f64],
    hess: &[f64],
    cfg: &GbdtConfig,
) -> Vec<Option<Candidate>> {
    let lambda = cfg.l2_leaf_reg;
    let col = &data.columns[feature];
    let k = frontier.len();
    let mut gl = vec![0.0; k];
    let mut hl = vec![0.0; k];
    let mut last: Vec<Option<f64>> = vec![None; k];
    let mut best: Vec<Option<Candidate>> = vec![None; k];
    let parent_score: Vec<f64> = frontier
        .iter()
        .map(|&node| {
            let s = &stats[node];
            score(s.grad, s.hess, lambda)
        })
        .collect();

    for &i in order {
        let i = i as usize;
        let s = slot[node_of[i]];
        if s == usize::MAX {
            continue;
        }
        let x = col[i];
        if let Some(prev) = last[s] {
            if x > prev {
                let node = &stats[frontier[s]];
                let (g_left, h_left) = (gl[s], hl[s]);
                let (g_right, h_right) = (node.grad - g_left, node.hess - h_left);
                if h_left >= cfg.min_child_weight && h_right >= cfg.min_child_weight {
                    let gain = 0.5
                        * (score(g_left, h_left, lambda) + score(g_right, h_right, lambda) - parent_score[s]);
                    if gain > 0.0 && best[s].is_none_or(|b| beats(gain, b.gain)) {
                        let mid = prev + (x - prev) / 2.0;
                        let threshold = if mid >= x || mid < prev { prev } else { mid };
                        best[s] = Some(Candidate {
                            gain,
                            feature,
                            threshold,
                        });
                    }
                }
            }
        }
        gl[s] += grad[i];
        hl[s] += hess[i];
        last[s] = Some(x);
    }
    best
}

/// Gains within rounding noise of each other count as a tie, which the
/// earlier (lower feature, lower threshold) candidate wins.
fn beats(gain: f64, current: f64) -> bool {
    gain > current + 1e-10 * current.abs()
}

fn score(g: f64, h: f64, lambda: f64) -> f64 {
    let denom = h + lambda;
    if denom > 0.0 {
        g * g / denom
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::auc;

    fn dataset(rows: Vec<Vec<f64>>, labels: Vec<f64>) -> Dataset {
        let n = rows.len();
        Dataset::from_rows(&rows, labels, vec![1.0; n], None).unwrap()
    }

    #[test]
    fn zero_trees_is_base_rate() {
        let d = dataset(vec![vec![0.0]; 10], vec![1., 1., 1., 0., 0., 0., 0., 0., 0., 0.]);
        let cfg = GbdtConfig {
            n_trees: 0,
            ..GbdtConfig::default()
        };
        let m = fit_gbdt(&d, &cfg).unwrap();
        assert!(m.trees.is_empty());
        assert_eq!(m.predict_values(&[5.0]), 0.3);
    }

    #[test]
    fn separable_single_feature() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64]).collect();
        let labels: Vec<f64> = (0..40).map(|i| (i >= 20) as u8 as f64).collect();
        let d = dataset(rows.clone(), labels.clone());
        let cfg = GbdtConfig {
            n_trees: 1,
            min_child_weight: 1.0,
            ..GbdtConfig::default()
        };
        let m = fit_gbdt(&d, &cfg).unwrap();
        let scores: Vec<f64> = rows.iter().map(|r| m.predict_values(r)).collect();
        let y: Vec<u8> = labels.iter().map(|&l| l as u8).collect();
        assert_eq!(auc(&scores, &y).unwrap(), 1.0);
        match m.trees[0].nodes[0] {
            Node::Split { threshold, .. } => assert_eq!(threshold, 19.5),
            _ => panic!("root should split"),
        }
    }

    #[test]
    fn hand_built_tree_prediction() {
        let m = GbdtModel {
            format_version: MODEL_FORMAT_VERSION,
            base_score: 0.0,
            base_rate: 0.5,
            config: GbdtConfig::default(),
            feature_names: vec!["f0".into(), "f1".into()],
            trees: vec![Tree {
                nodes: vec![
                    Node::Split {
                        feature: 0,
                        threshold: 0.5,
                        left: 1,
                        right: 2,
                    },
                    Node::Leaf { value: -1.0 },
                    Node::Leaf { value: 1.0 },
                ],
            }],
        };
        assert!((m.predict_values(&[0.7, 0.0]) - 0.731059).abs() < 1e-6);
        assert!((m.predict_values(&[0.2, 0.0]) - 0.268941).abs() < 1e-6);
        let mut with_zero = m.clone();
        with_zero.trees.push(Tree::leaf(0.0));
        for x in [[0.1, 3.0], [0.9, -1.0]] {
            assert_eq!(m.predict_values(&x), with_zero.predict_values(&x));
        }
    }

    #[test]
    fn depth_is_bounded() {
        let rows: Vec<Vec<f64>> = (0..200).map(|i| vec![(i * 37 % 101) as f64, (i % 7) as f64]).collect();
        let labels: Vec<f64> = (0..200).map(|i| ((i * 13) % 5 == 0) as u8 as f64).collect();
        for depth in 1..4 {
            let cfg = GbdtConfig {
                n_trees: 10,
                max_depth: depth,
                min_child_weight: 0.0,
                ..GbdtConfig::default()
            };
            let m = fit_gbdt(&dataset(rows.clone(), labels.clone()), &cfg).unwrap();
            assert!(m.trees.iter().all(|t| t.depth() <= depth));
            assert!(m.trees.iter().any(|t| t.depth() == depth));
        }
    }

    #[test]
    fn single_class_is_degenerate() {
        let d = dataset(vec![vec![0.0]; 3], vec![0.0; 3]);
        assert!(matches!(fit_gbdt(&d, &GbdtConfig::default()), Err(Error::Degenerate(_))));
    }

    #[test]
    fn tie_break_prefers_lowest_feature() {
        // identical columns: every split ties, feature 0 must win
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, i as f64]).collect();
        let labels: Vec<f64> = (0..20).map(|i| (i >= 10) as u8 as f64).collect();
        let cfg = GbdtConfig {
            n_trees: 3,
            ..GbdtConfig::default()
        };
        let m = fit_gbdt(&dataset(rows, labels), &cfg).unwrap();
        for t in &m.trees {
            for node in &t.nodes {
                if let Node::Split { feature, .. } = node {
                    assert_eq!(*feature, 0);
                }
            }
        }
    }

    #[test]
    fn json_validation() {
        assert!(GbdtModel::from_json("{}").is_err());
        let m = GbdtModel {
            format_version: MODEL_FORMAT_VERSION,
            base_score: 0.1,
            base_rate: 0.52,
            config: GbdtConfig::default(),
            feature_names: vec!["a".into()],
            trees: vec![Tree {
                nodes: vec![Node::Split {
                    feature: 3,
                    threshold: 0.0,
                    left: 1,
                    right: 2,
                }],
            }],
        };
        assert!(matches!(GbdtModel::from_json(&m.to_json()), Err(Error::Model(_))));
    }
}
