use std::collections::BTreeMap;

use super::{Array, Gradients, Real, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T = f32> {
    pub value: Array<T>,
    pub trainable: bool,
}

/// Named parameter arrays, each flagged trainable or frozen. Iteration order
/// is lexicographic by name, which fixes checkpoint layout and checksums.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T = f32> {
    entries: BTreeMap<String, Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array<T>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::param(name, "duplicate parameter name"));
        }
        self.entries.insert(
            name,
            Param {
                value,
                trainable: true,
            },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Array<T>> {
        self.entries.get(name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array<T>> {
        self.entries.get_mut(name).map(|p| &mut p.value)
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.entries.get(name)
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.entries.get(name).is_some_and(|p| p.trainable)
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        let p = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::param(name, "no such parameter"))?;
        p.trainable = trainable;
        Ok(())
    }

    pub fn freeze_all(&mut self) {
        self.entries.values_mut().for_each(|p| p.trainable = false);
    }

    pub fn unfreeze_all(&mut self) {
        self.entries.values_mut().for_each(|p| p.trainable = true);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    /// Copies every entry whose name starts with `prefix` into a new store.
    pub fn subset(&self, prefix: &str) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Merges `other` into `self`; names must not collide.
    pub fn extend(&mut self, other: Self) -> Result<()> {
        for (k, v) in other.entries {
            if self.entries.contains_key(&k) {
                return Err(Error::param(k, "duplicate parameter name"));
            }
            self.entries.insert(k, v);
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            value: p.value.cast(),
                            trainable: p.trainable,
                        },
                    )
                })
                .collect(),
        }
    }

    /// FNV-1a over names and raw little-endian values; detects any write.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for (k, p) in &self.entries {
            eat(k.as_bytes());
            for v in p.value.data() {
                eat(&v.as_f64().to_le_bytes());
            }
        }
        h
    }

    /// Records every parameter on `tape` as a leaf; trainable entries require
    /// gradients, frozen ones are constants.
    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> Bound<'t, T> {
        Bound {
            vars: self
                .entries
                .iter()
                .map(|(k, p)| (k.clone(), (tape.leaf(p.value.clone(), p.trainable), p.trainable)))
                .collect(),
        }
    }

    /// Records every parameter as a constant, whatever its flag.
    pub fn bind_constants<'t>(&self, tape: &'t Tape<T>) -> Bound<'t, T> {
        Bound {
            vars: self
                .entries
                .iter()
                .map(|(k, p)| (k.clone(), (tape.constant(p.value.clone()), false)))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(|p| p.value.is_finite())
    }
}

/// Parameters of a [`ParamStore`] recorded on a tape.
pub struct Bound<'t, T: Real = f32> {
    vars: BTreeMap<String, (Var<'t, T>, bool)>,
}

impl<'t, T: Real> Bound<'t, T> {
    pub fn get(&self, name: &str) -> Var<'t, T> {
        match self.vars.get(name) {
            Some((v, _)) => *v,
            None => panic!("parameter `{name}` not bound"),
        }
    }

    /// Gradients of every trainable parameter (zeros where none flowed).
    pub fn grads(&self, g: &Gradients<T>) -> BTreeMap<String, Array<T>> {
        self.vars
            .iter()
            .filter(|(_, (_, trainable))| *trainable)
            .map(|(k, (v, _))| (k.clone(), g.get_or_zeros(*v)))
            .collect()
    }
}
