use crate::rng::{hash_str, CounterRng};
use crate::tensor::Tensor;

/// Handle to one parameter tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId {
    pub(crate) flat: usize,
    pub(crate) rows: usize,
    pub(crate) cols: usize,
}

impl ParamId {
    pub fn flat(&self) -> usize {
        self.flat
    }
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

#[derive(Clone, Debug)]
pub struct ParamGroup {
    pub name: String,
    pub params: Vec<usize>, // flat indices
}

/// Flat list of named parameters partitioned into named groups
/// (e.g. "idm", "quantizer", "wm_backbone"). Group membership drives
/// freezing, checkpointing and digesting; order is registration order
/// and therefore deterministic for a fixed model-building sequence.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    groups: Vec<ParamGroup>,
    group_of: Vec<usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, group: &str, name: &str, value: Tensor) -> ParamId {
        let gi = match self.groups.iter().position(|g| g.name == group) {
            Some(i) => i,
            None => {
                self.groups.push(ParamGroup { name: group.to_string(), params: Vec::new() });
                self.groups.len() - 1
            }
        };
        let flat = self.params.len();
        let id = ParamId { flat, rows: value.rows(), cols: value.cols() };
        self.params.push(Param { name: name.to_string(), value });
        self.groups[gi].params.push(flat);
        self.group_of.push(gi);
        id
    }

    /// Add a parameter initialized as normal(0, std) keyed by (seed, name),
    /// so values do not depend on registration order.
    pub fn add_normal(&mut self, group: &str, name: &str, rows: usize, cols: usize, std: f32, seed: u64) -> ParamId {
        let mut rng = CounterRng::keyed(&[seed, hash_str(name)]);
        let mut data = vec![0.0f32; rows * cols];
        rng.fill_normal(&mut data);
        for v in data.iter_mut() {
            *v *= std;
        }
        self.add(group, name, Tensor::new(rows, cols, data))
    }

    /// Kaiming-style init for a linear layer weight of shape (out, in).
    pub fn add_linear_weight(&mut self, group: &str, name: &str, out_dim: usize, in_dim: usize, seed: u64) -> ParamId {
        let std = (2.0 / in_dim as f32).sqrt() * 0.5;
        self.add_normal(group, name, out_dim, in_dim, std, seed)
    }

    pub fn add_zeros(&mut self, group: &str, name: &str, rows: usize, cols: usize) -> ParamId {
        self.add(group, name, Tensor::zeros(rows, cols))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.flat].value
    }

    pub fn get(&self, flat: usize) -> &Param {
        &self.params[flat]
    }

    pub fn get_mut(&mut self, flat: usize) -> &mut Param {
        &mut self.params[flat]
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn group_names(&self) -> Vec<&str> {
        self.groups.iter().map(|g| g.name.as_str()).collect()
    }

    pub fn group_of(&self, flat: usize) -> &str {
        &self.groups[self.group_of[flat]].name
    }

    pub fn group_params(&self, group: &str) -> &[usize] {
        self.groups
            .iter()
            .find(|g| g.name == group)
            .map(|g| g.params.as_slice())
            .unwrap_or(&[])
    }

    /// Total scalar count across a group, handy for reporting.
    pub fn group_numel(&self, group: &str) -> usize {
        self.group_params(group).iter().map(|&i| self.params[i].value.numel()).sum()
    }

    /// Copy values for all shared (group, name) pairs from `other` into `self`.
    /// Returns the number of tensors copied.
    pub fn copy_group_from(&mut self, other: &ParamStore, group: &str) -> usize {
        let mut copied = 0;
        let theirs: Vec<usize> = other.group_params(group).to_vec();
        for &oi in &theirs {
            let oname = other.params[oi].name.clone();
            if let Some(&mi) = self
                .group_params(group)
                .iter()
                .find(|&&mi| self.params[mi].name == oname)
            {
                assert_eq!(
                    self.params[mi].value.numel(),
                    other.params[oi].value.numel(),
                    "shape mismatch for {oname}"
                );
                self.params[mi].value = other.params[oi].value.clone();
                copied += 1;
            }
        }
        copied
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registration_builds_groups_in_order() {
        let mut s = ParamStore::new();
        let a = s.add_zeros("idm", "a", 2, 2);
        let b = s.add_zeros("quantizer", "b", 1, 4);
        let c = s.add_zeros("idm", "c", 3, 1);
        assert_eq!(s.group_names(), vec!["idm", "quantizer"]);
        assert_eq!(s.group_params("idm"), &[a.flat(), c.flat()]);
        assert_eq!(s.group_params("quantizer"), &[b.flat()]);
        assert_eq!(s.group_of(b.flat()), "quantizer");
    }

    #[test]
    fn name_keyed_init_is_order_independent() {
        let mut s1 = ParamStore::new();
        let x1 = s1.add_normal("g", "w1", 2, 3, 1.0, 42);
        let _y1 = s1.add_normal("g", "w2", 2, 3, 1.0, 42);

        let mut s2 = ParamStore::new();
        let _y2 = s2.add_normal("g", "w2", 2, 3, 1.0, 42);
        let x2 = s2.add_normal("g", "w1", 2, 3, 1.0, 42);

        assert_eq!(s1.value(x1), s2.value(x2));
    }
}
