use sha2::{Digest, Sha256};

use super::{NnetError, Tensor};
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId {
    pub group: usize,
    pub index: usize,
}

/// First and second Adam moments plus the step count, one per group.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Moments<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamGroup<T> {
    pub name: String,
    pub frozen: bool,
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<T>>,
    pub(crate) moments: Option<Moments<T>>,
}

impl<T: Scalar> ParamGroup<T> {
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// SHA-256 over the little-endian `f64` bytes of every tensor in order.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tensors {
            h.update(t.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Adam step count so far (0 before the first update).
    pub fn adam_steps(&self) -> u64 {
        self.moments.as_ref().map_or(0, |m| m.step)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    groups: Vec<ParamGroup<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { groups: Vec::new() }
    }

    /// Adds a group and returns its index. Names must be unique.
    pub fn add_group(&mut self, name: &str, tensors: Vec<(String, Tensor<T>)>) -> Result<usize, NnetError> {
        if self.group_index(name).is_some() {
            return Err(NnetError::Shape(format!("duplicate parameter group {name}")));
        }
        let (names, tensors) = tensors.into_iter().unzip();
        self.groups.push(ParamGroup { name: name.to_string(), frozen: false, names, tensors, moments: None });
        Ok(self.groups.len() - 1)
    }

    /// Removes a group by name, returning it if present. Indices of later
    /// groups shift down, so existing `ParamId`s must be rebound.
    pub fn remove_group(&mut self, name: &str) -> Option<ParamGroup<T>> {
        let i = self.group_index(name)?;
        Some(self.groups.remove(i))
    }

    pub fn groups(&self) -> &[ParamGroup<T>] {
        &self.groups
    }

    pub fn groups_mut(&mut self) -> &mut [ParamGroup<T>] {
        &mut self.groups
    }

    pub fn group_index(&self, name: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.name == name)
    }

    pub fn group(&self, name: &str) -> Option<&ParamGroup<T>> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn id(&self, group: &str, tensor: &str) -> Option<ParamId> {
        let gi = self.group_index(group)?;
        let ti = self.groups[gi].names.iter().position(|n| n == tensor)?;
        Some(ParamId { group: gi, index: ti })
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.groups[id.group].tensors[id.index]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.groups[id.group].tensors[id.index]
    }

    pub fn is_frozen(&self, group: usize) -> bool {
        self.groups[group].frozen
    }

    /// Returns false if no group has that name.
    pub fn set_frozen(&mut self, name: &str, frozen: bool) -> bool {
        match self.group_index(name) {
            Some(i) => {
                self.groups[i].frozen = frozen;
                true
            }
            None => false,
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.groups.iter().map(ParamGroup::num_scalars).sum()
    }

    pub fn trainable_scalars(&self) -> usize {
        self.groups.iter().filter(|g| !g.frozen).map(ParamGroup::num_scalars).sum()
    }

    pub fn checksum(&self, name: &str) -> Option<String> {
        self.group(name).map(ParamGroup::checksum)
    }

    /// Drops all optimiser state (used when a new training stage starts).
    pub fn reset_moments(&mut self) {
        for g in &mut self.groups {
            g.moments = None;
        }
    }
}

/// Gradient accumulator. Only tensors that received a gradient are allocated;
/// frozen groups never do.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads<T> {
    tensors: Vec<Vec<Option<Tensor<T>>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn for_store(store: &ParamStore<T>) -> Self {
        Grads { tensors: store.groups.iter().map(|g| vec![None; g.tensors.len()]).collect() }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.tensors.get(id.group)?.get(id.index)?.as_ref()
    }

    pub fn group(&self, group: usize) -> &[Option<Tensor<T>>] {
        &self.tensors[group]
    }

    pub fn accumulate_param(&mut self, id: ParamId, g: &Tensor<T>) {
        match &mut self.tensors[id.group][id.index] {
            Some(t) => t.add_assign(g),
            slot @ None => *slot = Some(g.clone()),
        }
    }

    /// Adds another accumulator. Summation order is the caller's, so folding
    /// per-sample gradients in index order gives bit-identical results
    /// regardless of how they were computed.
    pub fn merge(&mut self, other: &Grads<T>) {
        for (gi, group) in other.tensors.iter().enumerate() {
            for (ti, t) in group.iter().enumerate() {
                if let Some(t) = t {
                    self.accumulate_param(ParamId { group: gi, index: ti }, t);
                }
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for t in self.tensors.iter_mut().flatten().flatten() {
            t.scale_in_place(s);
        }
    }

    pub fn global_norm(&self) -> T {
        self.tensors.iter().flatten().flatten().map(Tensor::sum_squares).sum::<T>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flatten().flatten().all(Tensor::is_finite)
    }

    /// Gradient of one scalar parameter, zero if never touched.
    pub fn value(&self, id: ParamId, flat: usize) -> T {
        self.get(id).map_or(T::zero(), |t| t.data()[flat])
    }
}
