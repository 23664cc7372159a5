//! Flat parameter storage.
//!
//! All of a model's weights live in one contiguous buffer with a named
//! layout.  The optimizer, gradient checker, and checkpoint code all work on
//! the flat view; forward/backward code takes shaped views by name.

use std::collections::HashMap;

use ndarray::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Scalar;

/// How a tensor is filled at initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Normal with standard deviation 0.02 (embeddings and linear maps).
    Normal002,
    /// Zeros (biases).
    Zero,
    /// Ones (layer-norm gains).
    One,
}

/// Name, flat offset, and shape of one tensor in the buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    pub fn size(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Declares tensors in a fixed order, then builds the initialized buffer.
pub struct LayoutBuilder {
    entries: Vec<(String, Vec<usize>, Init)>,
    total: usize,
}

impl LayoutBuilder {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            total: 0,
        }
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) {
        let size: usize = shape.iter().product();
        self.entries.push((name.into(), shape.to_vec(), init));
        self.total += size;
    }

    /// Sample the buffer deterministically from `seed`.  Normal draws are
    /// taken in f64 in declaration order, so f32 and f64 instantiations of
    /// the same layout agree to rounding.
    pub fn build<F: Scalar>(self, seed: u64) -> ParamSet<F> {
        let mut data = Vec::with_capacity(self.total);
        let mut specs = Vec::with_capacity(self.entries.len());
        let mut index = HashMap::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f64, 0.02).expect("valid normal");
        let mut offset = 0;
        for (name, shape, init) in self.entries {
            let size: usize = shape.iter().product();
            match init {
                Init::Normal002 => {
                    data.extend((0..size).map(|_| F::from_f64(normal.sample(&mut rng))))
                }
                Init::Zero => data.extend(std::iter::repeat_n(F::zero(), size)),
                Init::One => data.extend(std::iter::repeat_n(F::one(), size)),
            }
            index.insert(name.clone(), specs.len());
            specs.push(TensorSpec {
                name,
                offset,
                shape,
            });
            offset += size;
        }
        ParamSet { data, specs, index }
    }
}

impl Default for LayoutBuilder {
    fn default() -> Self {
        Self::new()
    }
}

/// A named, flat collection of tensors of one scalar type.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<F: Scalar> {
    data: Vec<F>,
    specs: Vec<TensorSpec>,
    index: HashMap<String, usize>,
}

impl<F: Scalar> ParamSet<F> {
    /// Total number of scalars.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    /// Same layout, all zeros; the gradient buffer.
    pub fn zeros_like(&self) -> Self {
        Self {
            data: vec![F::zero(); self.data.len()],
            specs: self.specs.clone(),
            index: self.index.clone(),
        }
    }

    fn spec(&self, name: &str) -> Option<&TensorSpec> {
        self.index.get(name).map(|&i| &self.specs[i])
    }

    pub fn slice_of(&self, name: &str) -> Option<&[F]> {
        let s = self.spec(name)?;
        Some(&self.data[s.offset..s.offset + s.size()])
    }

    pub fn slice_of_mut(&mut self, name: &str) -> Option<&mut [F]> {
        let i = *self.index.get(name)?;
        let (offset, size) = {
            let s = &self.specs[i];
            (s.offset, s.size())
        };
        Some(&mut self.data[offset..offset + size])
    }

    pub fn view1(&self, name: &str) -> Option<ArrayView1<'_, F>> {
        let s = self.spec(name)?;
        debug_assert_eq!(s.shape.len(), 1);
        Some(ArrayView1::from(&self.data[s.offset..s.offset + s.size()]))
    }

    pub fn view2(&self, name: &str) -> Option<ArrayView2<'_, F>> {
        let s = self.spec(name)?;
        debug_assert_eq!(s.shape.len(), 2);
        let (r, c) = (s.shape[0], s.shape[1]);
        ArrayView2::from_shape((r, c), &self.data[s.offset..s.offset + s.size()]).ok()
    }

    pub fn view1_mut(&mut self, name: &str) -> Option<ArrayViewMut1<'_, F>> {
        let i = *self.index.get(name)?;
        let (offset, size) = {
            let s = &self.specs[i];
            (s.offset, s.size())
        };
        Some(ArrayViewMut1::from(&mut self.data[offset..offset + size]))
    }

    pub fn view2_mut(&mut self, name: &str) -> Option<ArrayViewMut2<'_, F>> {
        let i = *self.index.get(name)?;
        let (offset, shape) = {
            let s = &self.specs[i];
            (s.offset, (s.shape[0], s.shape[1]))
        };
        let size = shape.0 * shape.1;
        ArrayViewMut2::from_shape(shape, &mut self.data[offset..offset + size]).ok()
    }

    /// Copy a named tensor's payload in from a checkpoint.
    pub fn load_tensor(&mut self, name: &str, shape: &[usize], values: &[f64]) -> crate::Result<()> {
        let s = self
            .spec(name)
            .ok_or_else(|| crate::Error::Format(format!("unknown tensor {name}")))?
            .clone();
        if s.shape != shape || values.len() != s.size() {
            return Err(crate::Error::Format(format!(
                "tensor {name} has shape {:?}, checkpoint has {:?}",
                s.shape, shape
            )));
        }
        for (dst, &v) in self.data[s.offset..s.offset + s.size()]
            .iter_mut()
            .zip(values)
        {
            *dst = F::from_f64(v);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> LayoutBuilder {
        let mut b = LayoutBuilder::new();
        b.add("w", &[3, 4], Init::Normal002);
        b.add("bias", &[4], Init::Zero);
        b.add("gain", &[4], Init::One);
        b
    }

    #[test]
    fn build_is_deterministic() {
        let a: ParamSet<f32> = layout().build(7);
        let b: ParamSet<f32> = layout().build(7);
        assert_eq!(a.data(), b.data());
        let c: ParamSet<f32> = layout().build(8);
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn init_kinds_fill_as_declared() {
        let p: ParamSet<f64> = layout().build(0);
        assert!(p.slice_of("bias").unwrap().iter().all(|&v| v == 0.0));
        assert!(p.slice_of("gain").unwrap().iter().all(|&v| v == 1.0));
        let w = p.view2("w").unwrap();
        assert_eq!(w.dim(), (3, 4));
        assert!(w.iter().any(|&v| v != 0.0));
        // draws at std 0.02 stay small
        assert!(w.iter().all(|&v| v.abs() < 0.2));
    }

    #[test]
    fn f32_and_f64_builds_agree_to_rounding() {
        let a: ParamSet<f32> = layout().build(3);
        let b: ParamSet<f64> = layout().build(3);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x.into_f64() - y).abs() < 1e-7);
        }
    }

    #[test]
    fn load_tensor_round_trip_and_mismatch() {
        let mut p: ParamSet<f32> = layout().build(1);
        let vals: Vec<f64> = (0..12).map(|i| i as f64).collect();
        p.load_tensor("w", &[3, 4], &vals).unwrap();
        assert_eq!(p.view2("w").unwrap()[[2, 3]], 11.0);
        assert!(p.load_tensor("w", &[4, 3], &vals).is_err());
        assert!(p.load_tensor("nope", &[1], &[0.0]).is_err());
    }
}
