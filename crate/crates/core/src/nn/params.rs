use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Which side of the model a parameter belongs to; finetuning freezes
/// [`ParamGroup::Encoder`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Encoder,
    Decoder,
    PageHead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub group: ParamGroup,
    pub tensor: Tensor,
    pub frozen: bool,
}

/// Named, ordered collection of trainable leaves.
///
/// Tensors are immutable, so an update swaps in a fresh leaf.
#[derive(Debug, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

/// Cloning copies the values into fresh leaves, so gradients never leak
/// between the copies.
impl Clone for ParamStore {
    fn clone(&self) -> Self {
        let entries = self
            .entries
            .iter()
            .map(|e| ParamEntry {
                tensor: Tensor::new(e.tensor.to_vec(), e.tensor.shape())
                    .expect("shape of an existing tensor")
                    .with_requires_grad(!e.frozen),
                ..e.clone()
            })
            .collect();
        Self { entries }
    }
}

pub enum Init {
    Zeros,
    Ones,
    Normal(f64),
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, group: ParamGroup, shape: &[usize], init: Init, rng: &mut Rng) -> ParamId {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Normal(std) => (0..n).map(|_| rng.normal() * std).collect(),
        };
        assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name {name}"
        );
        self.entries.push(ParamEntry {
            name: name.to_string(),
            group,
            tensor: Tensor::param(data, shape).expect("shape matches data"),
            frozen: false,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.numel()).sum()
    }

    /// Replace the values of a parameter, dropping its gradient.
    pub fn set_data(&mut self, id: ParamId, data: Vec<f64>) -> Result<()> {
        let e = &mut self.entries[id.0];
        if data.len() != e.tensor.numel() {
            return Err(Error::Shape(format!(
                "parameter {} holds {} values, got {}",
                e.name,
                e.tensor.numel(),
                data.len()
            )));
        }
        let shape = e.tensor.shape().to_vec();
        e.tensor.zero_grad();
        e.tensor = Tensor::new(data, &shape)?.with_requires_grad(!e.frozen);
        Ok(())
    }

    /// Stop (or resume) gradient tracking for every parameter in `group`.
    pub fn set_frozen(&mut self, group: ParamGroup, frozen: bool) {
        for e in self.entries.iter_mut().filter(|e| e.group == group) {
            e.frozen = frozen;
            e.tensor = e.tensor.with_requires_grad(!frozen);
        }
    }

    pub fn is_frozen(&self, group: ParamGroup) -> bool {
        self.entries.iter().filter(|e| e.group == group).all(|e| e.frozen)
    }

    pub fn zero_grad(&self) {
        for e in &self.entries {
            e.tensor.zero_grad();
        }
    }
}
