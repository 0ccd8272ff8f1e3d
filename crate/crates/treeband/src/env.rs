//! Episodic tree-building environment.
//!
//! An episode starts from a root node holding a projected ruleset and builds
//! one decision tree. Pending nodes are processed FIFO (breadth-first): at
//! each step the policy picks a dimension and an operation (cut ×2/4/8/16/32
//! or partition) for the front node; children too large for a leaf join the
//! back of the queue. Nodes that cannot legally be split — and every pending
//! node once the step or depth budget runs out — are closed as overflow
//! leaves. Rewards are computed only after the tree is complete, either per
//! action (−children created) or from each node's finished subtree shape.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::Rng;

use crate::ruleset::{Ruleset, FIELDS};
use crate::tree::{
    create_root, cut_node, mark_overflow, partition_node, partition_sides, tree_stats,
    DecisionTree, PartitionDepthMode, CUT_COUNTS,
};
use crate::{Error, Result};

/// Operation column count: five cut arities plus partition.
pub const OP_COUNT: usize = 6;
/// Column index of the partition operation.
pub const OP_PARTITION: usize = 5;

/// How transitions are rewarded once the tree is finished.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RewardMode {
    /// −(children the action created, after empty-pruning). Leaf-sized and
    /// interior children cost the same: one node of memory each.
    #[default]
    PerChild,
    /// −(c·subtree walk cost + (1−c)·subtree node count) for the acted node.
    ObjectiveBackprop,
}

impl std::str::FromStr for RewardMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "per_child" => Ok(RewardMode::PerChild),
            "objective_backprop" | "objective" => Ok(RewardMode::ObjectiveBackprop),
            other => Err(Error::invalid(format!(
                "unknown reward mode `{other}` (expected per_child or objective_backprop)"
            ))),
        }
    }
}

/// Environment knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvConfig {
    pub leaf_threshold: usize,
    /// Partition is legal only on nodes at this depth or shallower.
    pub partition_depth_limit: usize,
    /// Coverage fraction separating partition sides.
    pub theta: f64,
    /// Nodes at this depth are closed instead of split.
    pub max_tree_depth: usize,
    /// Policy steps per episode; on exhaustion the queue drains to overflow
    /// leaves.
    pub max_steps: usize,
    pub reward_mode: RewardMode,
    /// Count pruned-empty children in per-child rewards too.
    pub count_pruned: bool,
    /// Time-space trade-off: 1 = pure depth, 0 = pure node count.
    pub c: f64,
    /// How partition nodes combine child walk costs.
    pub depth_mode: PartitionDepthMode,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            leaf_threshold: 16,
            partition_depth_limit: 1,
            theta: 0.5,
            max_tree_depth: 100,
            max_steps: 1000,
            reward_mode: RewardMode::PerChild,
            count_pruned: false,
            c: 1.0,
            depth_mode: PartitionDepthMode::Max,
        }
    }
}

/// One policy decision: a subset dimension and an operation column
/// (0..=4 → cut ×2,4,8,16,32; 5 → partition).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionSpec {
    pub dim: usize,
    pub op: usize,
}

impl ActionSpec {
    pub fn cut(dim: usize, k: u64) -> Self {
        let op = CUT_COUNTS.iter().position(|&c| c == k).expect("k must be 2,4,8,16,32");
        ActionSpec { dim, op }
    }

    pub fn partition(dim: usize) -> Self {
        ActionSpec { dim, op: OP_PARTITION }
    }

    /// The cut arity for cut columns, None for partition.
    pub fn cut_arity(&self) -> Option<u64> {
        CUT_COUNTS.get(self.op).copied()
    }

    pub fn op_name(&self) -> &'static str {
        match self.op {
            0 => "cut2",
            1 => "cut4",
            2 => "cut8",
            3 => "cut16",
            4 => "cut32",
            OP_PARTITION => "partition",
            _ => "invalid",
        }
    }
}

/// One recorded decision. `reward` and `value_target` stay 0 until the
/// episode finishes (see [`TreeEnv::finish`]); rewards cannot be observed
/// before the acted node's subtree is complete.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub node: usize,
    pub observation: Vec<f64>,
    pub action: ActionSpec,
    /// False when the action was masked: the node was forced into an
    /// overflow leaf and the transition is rewarded −1.
    pub valid: bool,
    /// Children the action created, after empty-pruning.
    pub children_created: usize,
    /// Cut children discarded because no rule intersected them.
    pub pruned: usize,
    pub reward: f64,
    pub value_target: f64,
}

/// A finished episode: the decisions, the tree they built, and the scalar
/// objective used for model selection.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub transitions: Vec<Transition>,
    pub tree: DecisionTree,
    pub objective: f64,
    pub steps: usize,
}

/// Observation vector length for a subset: per dimension the lo and hi bit
/// patterns (field width each), two partition-state entries, and the
/// flattened |dims|×6 action mask.
pub fn observation_len(subset: &[usize]) -> usize {
    let bits: usize = subset.iter().map(|&f| 2 * FIELDS[f].width as usize).sum();
    bits + 2 + subset.len() * OP_COUNT
}

/// Scalar quality of a finished tree: −(c·depth + (1−c)·node count).
/// Larger is better; a single-leaf tree with c=1 scores −1.
pub fn objective(tree: &DecisionTree, c: f64, mode: PartitionDepthMode) -> f64 {
    let stats = tree_stats(tree, mode);
    -(c * stats.depth as f64 + (1.0 - c) * stats.node_count as f64)
}

/// The environment itself. Create with [`TreeEnv::new`], drive with
/// [`TreeEnv::step`] until done, then call [`TreeEnv::finish`].
#[derive(Debug, Clone)]
pub struct TreeEnv {
    pub config: EnvConfig,
    tree: DecisionTree,
    queue: VecDeque<usize>,
    /// Per node: (created under a partition?, on the small side?).
    part_state: Vec<(bool, bool)>,
    transitions: Vec<Transition>,
    steps: usize,
    done: bool,
}

impl TreeEnv {
    /// Fresh episode over a projected ruleset. The root may already satisfy
    /// the leaf threshold, in which case the episode starts done.
    pub fn new(projected: &Ruleset, config: EnvConfig) -> Self {
        let tree = create_root(projected, config.leaf_threshold);
        let mut env = TreeEnv {
            config,
            tree,
            queue: VecDeque::from([0]),
            part_state: vec![(false, false)],
            transitions: Vec::new(),
            steps: 0,
            done: false,
        };
        env.settle_queue();
        env
    }

    pub fn done(&self) -> bool {
        self.done
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// The tree as built so far.
    pub fn tree(&self) -> &DecisionTree {
        &self.tree
    }

    /// The node the next action applies to.
    pub fn current_node(&self) -> Option<usize> {
        self.queue.front().copied()
    }

    /// Observation for the front node; None when the episode is done.
    pub fn current_observation(&self) -> Option<Vec<f64>> {
        self.current_node().map(|n| self.observation(n))
    }

    /// Mask for the front node; None when the episode is done.
    pub fn current_mask(&self) -> Option<Vec<[bool; OP_COUNT]>> {
        self.current_node().map(|n| self.action_mask(n))
    }

    /// The observation is a pure function of the node's state: range bit
    /// patterns (most-significant bit first), partition placement, and the
    /// action mask.
    pub fn observation(&self, node: usize) -> Vec<f64> {
        let n = &self.tree.nodes[node];
        let mut v = Vec::with_capacity(observation_len(&self.tree.subset));
        for (dim, &field) in self.tree.subset.iter().enumerate() {
            let width = FIELDS[field].width;
            for value in [n.range.lo[dim], n.range.hi[dim]] {
                for bit in (0..width).rev() {
                    v.push(((value >> bit) & 1) as f64);
                }
            }
        }
        let (inside, small_side) = self.part_state[node];
        v.push(f64::from(inside));
        v.push(f64::from(small_side));
        for row in self.action_mask(node) {
            v.extend(row.iter().map(|&b| f64::from(b)));
        }
        v
    }

    /// Per-dimension legality: cut ×k needs at least k representable values;
    /// partition needs the node shallow enough and both sides nonempty.
    pub fn action_mask(&self, node: usize) -> Vec<[bool; OP_COUNT]> {
        let n = &self.tree.nodes[node];
        let mut mask = Vec::with_capacity(self.tree.subset.len());
        for dim in 0..self.tree.subset.len() {
            let width = n.range.width(dim);
            let mut row = [false; OP_COUNT];
            for (i, &k) in CUT_COUNTS.iter().enumerate() {
                row[i] = k <= width;
            }
            if n.depth <= self.config.partition_depth_limit {
                let (big, small) = partition_sides(&self.tree, node, dim, self.config.theta);
                row[OP_PARTITION] = !big.is_empty() && !small.is_empty();
            }
            mask.push(row);
        }
        mask
    }

    /// All actions the current mask allows, dimension-major.
    pub fn legal_actions(&self, node: usize) -> Vec<ActionSpec> {
        let mut out = Vec::new();
        for (dim, row) in self.action_mask(node).iter().enumerate() {
            for (op, &ok) in row.iter().enumerate() {
                if ok {
                    out.push(ActionSpec { dim, op });
                }
            }
        }
        out
    }

    /// Uniformly random legal action for the front node. Never emits a
    /// masked action.
    pub fn sample_legal<R: Rng>(&self, rng: &mut R) -> Option<ActionSpec> {
        let node = self.current_node()?;
        let legal = self.legal_actions(node);
        if legal.is_empty() {
            return None;
        }
        Some(legal[rng.gen_range(0..legal.len())])
    }

    /// Close nodes that need no decision: under-threshold nodes are plain
    /// leaves; nodes past the depth or step budget, and nodes with no legal
    /// action, become overflow leaves. Ends the episode when the queue
    /// empties.
    fn settle_queue(&mut self) {
        while let Some(&node) = self.queue.front() {
            if self.tree.nodes[node].rule_refs.len() <= self.config.leaf_threshold {
                self.queue.pop_front();
                continue;
            }
            let out_of_budget = self.steps >= self.config.max_steps
                || self.tree.nodes[node].depth >= self.config.max_tree_depth;
            if out_of_budget || self.legal_actions(node).is_empty() {
                self.queue.pop_front();
                mark_overflow(&mut self.tree, node);
                continue;
            }
            break;
        }
        if self.queue.is_empty() {
            self.done = true;
        }
    }

    /// Apply `action` to the front node. A masked action closes the node as
    /// an overflow leaf and records an invalid transition (rewarded −1 at
    /// finish); the episode continues either way. Returns the done flag.
    pub fn step(&mut self, action: ActionSpec) -> Result<bool> {
        let Some(node) = self.current_node() else {
            return Err(Error::invalid("step on a finished episode"));
        };
        let observation = self.observation(node);
        let mask = self.action_mask(node);
        self.steps += 1;
        self.queue.pop_front();

        let legal = action.dim < mask.len() && action.op < OP_COUNT && mask[action.dim][action.op];
        let (valid, children_created, pruned) = if legal {
            let parent_state = self.part_state[node];
            match action.cut_arity() {
                Some(k) => {
                    let children = cut_node(&mut self.tree, node, action.dim, k)
                        .expect("masked preconditions hold");
                    self.part_state.extend(children.iter().map(|_| parent_state));
                    self.queue.extend(&children);
                    (true, children.len(), k as usize - children.len())
                }
                None => {
                    let (big, small) = partition_node(&mut self.tree, node, action.dim, self.config.theta)
                        .expect("masked preconditions hold");
                    self.part_state.push((true, false));
                    self.part_state.push((true, true));
                    self.queue.push_back(big);
                    self.queue.push_back(small);
                    (true, 2, 0)
                }
            }
        } else {
            mark_overflow(&mut self.tree, node);
            (false, 0, 0)
        };
        self.transitions.push(Transition {
            node,
            observation,
            action,
            valid,
            children_created,
            pruned,
            reward: 0.0,
            value_target: 0.0,
        });
        self.settle_queue();
        Ok(self.done)
    }

    /// Reward per transition for the finished tree. Invalid transitions are
    /// always −1; valid ones follow `mode`.
    pub fn compute_rewards(&self, c: f64, mode: RewardMode) -> Vec<f64> {
        assert!(self.done, "rewards are defined only once the tree is complete");
        match mode {
            RewardMode::PerChild => self
                .transitions
                .iter()
                .map(|t| {
                    if !t.valid {
                        return -1.0;
                    }
                    let pruned = if self.config.count_pruned { t.pruned } else { 0 };
                    -((t.children_created + pruned) as f64)
                })
                .collect(),
            RewardMode::ObjectiveBackprop => {
                let (cost, size) = self.subtree_measures();
                self.transitions
                    .iter()
                    .map(|t| {
                        if !t.valid {
                            return -1.0;
                        }
                        -(c * cost[t.node] as f64 + (1.0 - c) * size[t.node] as f64)
                    })
                    .collect()
            }
        }
    }

    /// Per node: costliest root-to-leaf walk below it and subtree node
    /// count. Children always have larger ids, so one reverse scan suffices.
    fn subtree_measures(&self) -> (Vec<usize>, Vec<usize>) {
        let nodes = &self.tree.nodes;
        let mut cost = vec![0usize; nodes.len()];
        let mut size = vec![0usize; nodes.len()];
        for id in (0..nodes.len()).rev() {
            let n = &nodes[id];
            size[id] = 1 + n.children.iter().map(|&c| size[c]).sum::<usize>();
            cost[id] = if n.is_leaf() {
                1
            } else {
                let combine_max = matches!(n.kind, crate::tree::NodeKind::Cut { .. })
                    || self.config.depth_mode == PartitionDepthMode::Max;
                let combined = if combine_max {
                    n.children.iter().map(|&c| cost[c]).max().unwrap_or(0)
                } else {
                    n.children.iter().map(|&c| cost[c]).sum()
                };
                1 + combined
            };
        }
        (cost, size)
    }

    /// Consume the finished episode: fill rewards (value targets equal the
    /// rewards — each decision is a one-step problem) and score the tree.
    pub fn finish(mut self) -> EpisodeRecord {
        assert!(self.done, "finish called before the episode completed");
        let rewards = self.compute_rewards(self.config.c, self.config.reward_mode);
        for (t, r) in self.transitions.iter_mut().zip(&rewards) {
            t.reward = *r;
            t.value_target = *r;
        }
        let objective = objective(&self.tree, self.config.c, self.config.depth_mode);
        EpisodeRecord {
            transitions: self.transitions,
            tree: self.tree,
            objective,
            steps: self.steps,
        }
    }
}

/// Debug dump of an episode: one row per decision.
pub fn episode_trace_csv(record: &EpisodeRecord) -> String {
    let mut out = String::from("node,dim,op,reward\n");
    for t in &record.transitions {
        let _ = writeln!(out, "{},{},{},{}", t.node, t.action.dim, t.action.op_name(), t.reward);
    }
    out
}
