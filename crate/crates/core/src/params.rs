//! Named parameter storage shared by every network in the model.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::Tensor;

/// Index of a parameter tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Which sub-network a parameter belongs to. The trainer uses this to freeze
/// or exclude whole groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    MelEncoder,
    PhonemeEncoder,
    Recognition,
    Prior,
    SpeakerPredictor,
    ContentProjection,
    VarianceAdaptor,
    Decoder,
    SpeakerTable,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 9] = [
        ParamGroup::MelEncoder,
        ParamGroup::PhonemeEncoder,
        ParamGroup::Recognition,
        ParamGroup::Prior,
        ParamGroup::SpeakerPredictor,
        ParamGroup::ContentProjection,
        ParamGroup::VarianceAdaptor,
        ParamGroup::Decoder,
        ParamGroup::SpeakerTable,
    ];

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor,
}

/// Flat list of named parameter tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

/// How a freshly registered tensor is initialised.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Constant(f64),
    /// Normal with the given standard deviation.
    Normal(f64),
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Xavier,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        group: ParamGroup,
        rows: usize,
        cols: usize,
        init: Init,
        rng: &mut R,
    ) -> ParamId {
        let mut value = Tensor::zeros(rows, cols);
        match init {
            Init::Zeros => {}
            Init::Constant(c) => value.fill(c),
            Init::Normal(std) => {
                for v in value.data.iter_mut() {
                    let e: f64 = StandardNormal.sample(rng);
                    *v = std * e;
                }
            }
            Init::Xavier => {
                let bound = libm::sqrt(6.0 / (rows + cols) as f64);
                for v in value.data.iter_mut() {
                    *v = rng.gen_range(-bound..bound);
                }
            }
        }
        self.push(ParamEntry { name: name.into(), group, value })
    }

    pub fn push(&mut self, entry: ParamEntry) -> ParamId {
        self.entries.push(entry);
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn group_ids(&self, group: ParamGroup) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(move |id| self.entries[id.0].group == group)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn zeros_like(&self) -> ParamGrads {
        ParamGrads { grads: self.entries.iter().map(|e| Tensor::zeros(e.value.rows, e.value.cols)).collect() }
    }

    /// `self += scale * direction`, entry by entry.
    pub fn axpy(&mut self, scale: f64, direction: &ParamGrads) {
        for (e, d) in self.entries.iter_mut().zip(&direction.grads) {
            for (v, g) in e.value.data.iter_mut().zip(&d.data) {
                *v += scale * g;
            }
        }
    }
}

/// Gradient buffers laid out like a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub grads: Vec<Tensor>,
}

impl ParamGrads {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id.0]
    }

    pub fn zero(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(0.0));
    }

    pub fn scale(&mut self, k: f64) {
        for g in &mut self.grads {
            g.data.iter_mut().for_each(|v| *v *= k);
        }
    }

    pub fn dot(&self, other: &ParamGrads) -> f64 {
        self.grads
            .iter()
            .zip(&other.grads)
            .map(|(a, b)| a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum::<f64>())
            .sum()
    }

    pub fn squared_norm(&self) -> f64 {
        self.dot(self)
    }

    /// Squared norm restricted to one parameter group.
    pub fn group_squared_norm(&self, store: &ParamStore, group: ParamGroup) -> f64 {
        store.group_ids(group).map(|id| self.grads[id.0].squared_norm()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(Tensor::is_finite)
    }
}
