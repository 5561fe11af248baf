//! Speculator-side policies: flat top-k guessing, breadth-limited tree
//! speculation, and call-count prediction for dialogue turns.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::call::CallSpec;
use crate::env::{Environment, Guess, GuessSource};
use crate::error::SpeculatorError;

/// How the executor speculates when a window opens.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    /// One-step speculation with `k` guesses, pre-launching each implied call.
    TopK { k: usize },
    /// Multi-step speculation up to `depth` steps with `beam` children per
    /// expanded node. Only depth-1 implied calls are pre-launched when the
    /// window closes; deeper ones launch once their parent is confirmed.
    Tree { depth: usize, beam: usize },
}

impl Strategy {
    pub fn width(&self) -> usize {
        match *self {
            Strategy::TopK { k } => k,
            Strategy::Tree { beam, .. } => beam,
        }
    }

    pub fn depth(&self) -> usize {
        match *self {
            Strategy::TopK { .. } => 1,
            Strategy::Tree { depth, .. } => depth,
        }
    }

    pub fn is_disabled(&self) -> bool {
        self.width() == 0 || self.depth() == 0
    }
}

/// Sort by non-increasing confidence (stable, so ties keep generation order),
/// drop repeated values, keep at most `k`.
pub fn rank_guesses(mut guesses: Vec<Guess>, k: usize) -> Vec<Guess> {
    guesses.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let mut out: Vec<Guess> = Vec::with_capacity(k.min(guesses.len()));
    for mut g in guesses {
        if out.len() == k {
            break;
        }
        if out.iter().any(|o| o.value == g.value) {
            continue;
        }
        g.depth = 1;
        out.push(g);
    }
    out
}

pub fn try_speculate_topk<S>(
    source: &dyn GuessSource<S>,
    state: &S,
    call: &CallSpec,
    k: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<Guess>, SpeculatorError> {
    if k == 0 {
        return Ok(Vec::new());
    }
    Ok(rank_guesses(source.guesses(state, call, k, rng)?, k))
}

/// Top-k guesses for the response to `call`; a failing source yields none.
pub fn speculate_topk<S>(
    source: &dyn GuessSource<S>,
    state: &S,
    call: &CallSpec,
    k: usize,
    rng: &mut dyn RngCore,
) -> Vec<Guess> {
    try_speculate_topk(source, state, call, k, rng).unwrap_or_default()
}

#[derive(Clone, Debug)]
pub struct TreeNode<S> {
    pub guess: Guess,
    pub parent: Option<usize>,
    /// Product of confidences along the path from the root.
    pub path_confidence: f64,
    /// State reached by applying the guess.
    pub state: S,
    /// Call the policy issues from `state`.
    pub implied_call: CallSpec,
    /// False when the implied call is irreversible (or unregistered); such
    /// nodes are leaves and are never pre-launched.
    pub launchable: bool,
    pub children: Vec<usize>,
    /// Rank among siblings.
    pub rank: usize,
}

#[derive(Clone, Debug)]
pub struct SpeculationTree<S> {
    pub root_digest: String,
    pub beam_width: usize,
    pub max_depth: usize,
    pub nodes: Vec<TreeNode<S>>,
    roots: Vec<usize>,
}

impl<S> SpeculationTree<S> {
    /// Depth-1 nodes in rank order.
    pub fn roots(&self) -> &[usize] {
        &self.roots
    }

    pub fn node(&self, i: usize) -> &TreeNode<S> {
        &self.nodes[i]
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.nodes[i].children
    }

    pub fn depth_of(&self, i: usize) -> usize {
        self.nodes[i].guess.depth
    }

    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().enumerate().filter(|(_, n)| n.children.is_empty()).map(|(i, _)| i)
    }

    pub fn level(&self, depth: usize) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().enumerate().filter(move |(_, n)| n.guess.depth == depth).map(|(i, _)| i)
    }

    /// Depth-1 guesses in rank order.
    pub fn root_guesses(&self) -> Vec<Guess> {
        self.roots.iter().map(|&i| self.nodes[i].guess.clone()).collect()
    }

    /// Index of the first child of `parent` (or of a root, when `None`) whose
    /// guess equals `actual`.
    pub fn find_child(&self, parent: Option<usize>, actual: &crate::call::ActionValue) -> Option<usize> {
        let pool = match parent {
            None => &self.roots,
            Some(p) => &self.nodes[p].children,
        };
        pool.iter().copied().find(|&i| &self.nodes[i].guess.value == actual)
    }
}

fn make_children<E: Environment>(
    env: &E,
    tree: &mut SpeculationTree<E::State>,
    parent: Option<usize>,
    parent_state: &E::State,
    guesses: Vec<Guess>,
    depth: usize,
) -> Vec<usize> {
    let base_conf = parent.map(|p| tree.nodes[p].path_confidence).unwrap_or(1.0);
    let mut out = Vec::with_capacity(guesses.len());
    for (rank, mut g) in guesses.into_iter().enumerate() {
        g.depth = depth;
        let state = env.transition(parent_state, &g.value);
        let implied_call = env.policy(&state);
        let launchable = env.registry().safety(implied_call.handler_id()).is_some_and(|s| s.allows_prelaunch());
        let idx = tree.nodes.len();
        tree.nodes.push(TreeNode {
            path_confidence: base_conf * g.confidence,
            guess: g,
            parent,
            state,
            implied_call,
            launchable,
            children: Vec::new(),
            rank,
        });
        if let Some(p) = parent {
            tree.nodes[p].children.push(idx);
        }
        out.push(idx);
    }
    out
}

/// Breadth-limited speculation tree. Level 1 holds the top-`beam` guesses for
/// `call`; every further level expands the `beam` most confident launchable
/// frontier nodes by `beam` guesses each. A failure at the root is an error; a
/// failure deeper down leaves that node as a leaf.
pub fn speculate_tree<E: Environment>(
    env: &E,
    state: &E::State,
    call: &CallSpec,
    max_depth: usize,
    beam: usize,
    rng: &mut dyn RngCore,
) -> Result<SpeculationTree<E::State>, SpeculatorError> {
    let mut tree = SpeculationTree {
        root_digest: env.digest(state),
        beam_width: beam,
        max_depth,
        nodes: Vec::new(),
        roots: Vec::new(),
    };
    if max_depth == 0 || beam == 0 {
        return Ok(tree);
    }
    let source = env.speculator();
    let first = try_speculate_topk(source, state, call, beam, rng)?;
    tree.roots = make_children(env, &mut tree, None, state, first, 1);
    let mut frontier = tree.roots.clone();
    for depth in 2..=max_depth {
        let mut candidates: Vec<usize> = frontier.into_iter().filter(|&i| tree.nodes[i].launchable).collect();
        // Stable: equal confidences keep insertion order.
        candidates.sort_by(|&a, &b| tree.nodes[b].path_confidence.total_cmp(&tree.nodes[a].path_confidence));
        candidates.truncate(beam);
        let mut next = Vec::new();
        for idx in candidates {
            let node_state = tree.nodes[idx].state.clone();
            let node_call = tree.nodes[idx].implied_call.clone();
            let Ok(gs) = try_speculate_topk(source, &node_state, &node_call, beam, rng) else {
                continue;
            };
            next.extend(make_children(env, &mut tree, Some(idx), &node_state, gs, depth));
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    Ok(tree)
}

/// Largest call count accepted from a model; anything above is clamped.
pub const MAX_PREDICTED_CALLS: usize = 64;

/// Parse a model's raw call-count answer. Negative, non-integer or otherwise
/// malformed output means "no call expected".
pub fn parse_call_count(raw: &str) -> usize {
    match raw.trim().parse::<i64>() {
        Ok(n) if n > 0 => (n as usize).min(MAX_PREDICTED_CALLS),
        _ => 0,
    }
}

/// A model that predicts how many tool calls a dialogue turn needs.
pub trait CallCountModel<S>: Send + Sync {
    fn raw_count(&self, state: &S, context: &str) -> String;
}

/// Predicted number of calls for the coming turn; 0 means speculation is skipped.
pub fn predict_call_count<S>(state: &S, context: &str, model: &dyn CallCountModel<S>) -> usize {
    parse_call_count(&model.raw_count(state, context))
}
