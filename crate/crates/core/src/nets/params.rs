use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::{Gradients, Graph, Var};
use crate::seed;
use crate::tensor::Tensor;

/// Optimisation groups; each training sub-step owns exactly one set of them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    /// `G_p` and `G_p'`.
    PixelGen,
    /// Feature generator `G_f` including its RGB input adapter.
    Backbone,
    /// Classifier and embedder.
    Heads,
    /// Every discriminator.
    Disc,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 4] = [ParamGroup::PixelGen, ParamGroup::Backbone, ParamGroup::Heads, ParamGroup::Disc];

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub group: ParamGroup,
    pub value: Arc<Tensor>,
    /// Buffers (running statistics) are stored alongside but never optimised.
    pub trainable: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

pub(crate) enum Init {
    /// N(0, 2 / fan_in)
    Fan(usize),
    Const(f64),
}

impl ParamStore {
    pub(crate) fn add(
        &mut self,
        name: &str,
        group: ParamGroup,
        shape: &[usize],
        init: Init,
        trainable: bool,
        master_seed: u64,
    ) -> ParamId {
        assert!(self.find(name).is_none(), "duplicate parameter {name}");
        let value = match init {
            Init::Fan(fan_in) => {
                let mut rng = seed::rng(master_seed, name, 0);
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                Tensor::from_fn(shape, |_| normal.sample(&mut rng))
            }
            Init::Const(c) => Tensor::full(shape, c),
        };
        self.entries.push(ParamEntry {
            name: name.to_string(),
            group,
            value: Arc::new(value),
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Arc<Tensor> {
        &self.entries[id.0].value
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) {
        assert_eq!(value.shape(), self.entries[id.0].value.shape(), "parameter shape change");
        self.entries[id.0].value = Arc::new(value);
    }

    /// Mutable access without reallocating when no graph holds the value.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        Arc::make_mut(&mut self.entries[id.0].value)
    }

    pub fn num_trainable(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.len()).sum()
    }

    /// Order-sensitive fingerprint of every value in a group (bit-exact).
    pub fn group_checksum(&self, group: ParamGroup) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for e in self.entries.iter().filter(|e| e.group == group) {
            for v in e.value.data() {
                h = (h ^ v.to_bits()).wrapping_mul(0x0100_0000_01b3);
                h = seed::splitmix64(h);
            }
        }
        h
    }
}

/// Per-forward state: which groups receive gradients, train/eval mode, the
/// dropout stream, and pending running-statistic updates.
pub struct Ctx<'g> {
    pub graph: &'g Graph,
    store: &'g ParamStore,
    trainable: [bool; 4],
    train: bool,
    update_stats: bool,
    rng: RefCell<ChaCha8Rng>,
    leaves: RefCell<HashMap<ParamId, Var<'g>>>,
    stat_updates: RefCell<Vec<(ParamId, Tensor)>>,
}

impl<'g> Ctx<'g> {
    /// Inference: running statistics, no dropout, no gradients.
    pub fn eval(graph: &'g Graph, store: &'g ParamStore) -> Self {
        Self::new(graph, store, &[], false, false, 0)
    }

    pub fn new(
        graph: &'g Graph,
        store: &'g ParamStore,
        trainable: &[ParamGroup],
        train: bool,
        update_stats: bool,
        dropout_seed: u64,
    ) -> Self {
        let mut flags = [false; 4];
        for g in trainable {
            flags[g.index()] = true;
        }
        Ctx {
            graph,
            store,
            trainable: flags,
            train,
            update_stats,
            rng: RefCell::new(seed::rng(dropout_seed, "dropout", 0)),
            leaves: RefCell::new(HashMap::new()),
            stat_updates: RefCell::new(Vec::new()),
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn param(&self, id: ParamId) -> Var<'g> {
        if let Some(v) = self.leaves.borrow().get(&id) {
            return *v;
        }
        let e = self.store.entry(id);
        let var = self
            .graph
            .leaf(e.value.clone(), e.trainable && self.trainable[e.group.index()]);
        self.leaves.borrow_mut().insert(id, var);
        var
    }

    pub(crate) fn buffer(&self, id: ParamId) -> Arc<Tensor> {
        self.store.value(id).clone()
    }

    pub(crate) fn record_stat(&self, id: ParamId, value: Tensor) {
        if self.update_stats {
            self.stat_updates.borrow_mut().push((id, value));
        }
    }

    /// Inverted-dropout mask scaled by `1 / (1 - p)`.
    pub(crate) fn dropout_mask(&self, shape: &[usize], p: f64) -> Tensor {
        let mut rng = self.rng.borrow_mut();
        let keep = 1.0 - p;
        Tensor::from_fn(shape, |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
    }

    /// Gradients for every trainable parameter leaf used in this forward.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<(ParamId, Tensor)> {
        let leaves = self.leaves.borrow();
        let mut out: Vec<(ParamId, Tensor)> = leaves
            .iter()
            .filter_map(|(id, v)| grads.wrt(*v).map(|g| (*id, g.clone())))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    pub fn take_stat_updates(&self) -> Vec<(ParamId, Tensor)> {
        std::mem::take(&mut self.stat_updates.borrow_mut())
    }
}
