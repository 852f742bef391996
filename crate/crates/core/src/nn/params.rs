use std::collections::HashMap;

use super::Scalar;
use crate::{Error, Result};

/// Handle to one entry of a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<T>,
    pub grads: Vec<T>,
}

/// Named learnable arrays in declaration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn declare(&mut self, name: impl Into<String>, shape: &[usize], values: Vec<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::DuplicateParam(name));
        }
        let len: usize = shape.iter().product();
        if values.len() != len {
            return Err(Error::shape(format!(
                "parameter `{name}` with shape {shape:?} needs {len} values, got {}",
                values.len()
            )));
        }
        let id = self.entries.len();
        self.by_name.insert(name.clone(), id);
        self.entries.push(ParamEntry {
            name,
            shape: shape.to_vec(),
            grads: vec![T::zero(); len],
            values,
        });
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn total_len(&self) -> usize {
        self.entries.iter().map(|e| e.values.len()).sum()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamEntry<T> {
        &mut self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry<T>)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grads.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// All values concatenated in declaration order.
    pub fn flat_values(&self) -> Vec<T> {
        self.entries.iter().flat_map(|e| e.values.iter().copied()).collect()
    }

    pub fn flat_grads(&self) -> Vec<T> {
        self.entries.iter().flat_map(|e| e.grads.iter().copied()).collect()
    }

    /// Overwrites every value from a flat payload in declaration order.
    pub fn load_flat_values(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.total_len() {
            return Err(Error::shape(format!(
                "payload holds {} values, store needs {}",
                flat.len(),
                self.total_len()
            )));
        }
        let mut offset = 0;
        for e in &mut self.entries {
            let n = e.values.len();
            e.values.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Converts every value to another precision, keeping names and order.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for e in &self.entries {
            let values = e.values.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect();
            out.declare(e.name.clone(), &e.shape, values).expect("names already unique");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn declaration_order_and_uniqueness() {
        let mut store = ParamStore::<f32>::new();
        let a = store.declare("a", &[2], vec![1.0, 2.0]).unwrap();
        let b = store.declare("b", &[1, 3], vec![3.0, 4.0, 5.0]).unwrap();
        assert_eq!(store.id("b"), Some(b));
        assert_eq!(store.get(a).grads, vec![0.0, 0.0]);
        assert_eq!(store.flat_values(), vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!(matches!(store.declare("a", &[1], vec![0.0]), Err(Error::DuplicateParam(_))));
        assert!(store.declare("c", &[2], vec![0.0]).is_err());

        store.load_flat_values(&[9.0, 8.0, 7.0, 6.0, 5.0]).unwrap();
        assert_eq!(store.get(b).values, vec![7.0, 6.0, 5.0]);
        assert!(store.load_flat_values(&[1.0]).is_err());
    }
}
