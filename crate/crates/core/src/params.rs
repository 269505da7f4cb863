//! Named parameter storage.

use std::sync::Arc;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::rng::{he_normal_init, Rng};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// He normal with the given fan-in.
    HeNormal { fan_in: usize },
    Zeros,
    Ones,
}

/// A parameter a model needs, as discovered by tracing it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamDecl {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
    /// `false` for batch-norm running statistics.
    pub trainable: bool,
}

#[derive(Clone, Debug)]
pub struct Entry<T: Element> {
    pub tensor: Arc<Tensor<T>>,
    pub trainable: bool,
}

/// Ordered map of named tensors: trainable weights and running statistics.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Element = f32> {
    entries: IndexMap<String, Entry<T>>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: IndexMap::new(),
        }
    }

    /// Allocates every declared parameter, drawing weights from `rng` in
    /// declaration order.
    pub fn from_decls(decls: &[ParamDecl], rng: &mut Rng) -> Result<Self> {
        let mut store = ParamStore::new();
        for d in decls {
            let t = match d.init {
                Init::HeNormal { fan_in } => he_normal_init(rng, &d.shape, fan_in)?,
                Init::Zeros => Tensor::zeros(&d.shape)?,
                Init::Ones => Tensor::ones(&d.shape)?,
            };
            store.insert(&d.name, t, d.trainable);
        }
        Ok(store)
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<T>, trainable: bool) {
        self.entries.insert(
            name.to_string(),
            Entry {
                tensor: Arc::new(tensor),
                trainable,
            },
        );
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .get(name)
            .map(|e| &*e.tensor)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub(crate) fn get_arc(&self, name: &str) -> Result<Arc<Tensor<T>>> {
        self.entries
            .get(name)
            .map(|e| e.tensor.clone())
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    /// Mutable access; copies the tensor first if a tape still shares it.
    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.entries
            .get_mut(name)
            .map(|e| Arc::make_mut(&mut e.tensor))
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.entries.get(name).is_some_and(|e| e.trainable)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>, bool)> {
        self.entries
            .iter()
            .map(|(n, e)| (n.as_str(), &*e.tensor, e.trainable))
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .values()
            .filter(|e| e.trainable)
            .map(|e| e.tensor.len())
            .sum()
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(n, e)| {
                    (
                        n.clone(),
                        Entry {
                            tensor: Arc::new(e.tensor.cast()),
                            trainable: e.trainable,
                        },
                    )
                })
                .collect(),
        }
    }

    /// Sets every trainable tensor whose name satisfies `pred` to zero.
    pub fn zero_where(&mut self, pred: impl Fn(&str) -> bool) {
        for (name, e) in self.entries.iter_mut() {
            if e.trainable && pred(name) {
                Arc::make_mut(&mut e.tensor)
                    .data_mut()
                    .iter_mut()
                    .for_each(|v| *v = T::zero());
            }
        }
    }
}
