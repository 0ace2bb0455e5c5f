//! Named parameter views shared by the optimizer, checkpoints and gradient
//! checks.

use sha2::{Digest, Sha256};

pub struct ParamView<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

pub struct ParamViewMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [f64],
}

/// Anything holding trainable tensors. Gradients and optimizer moments use
/// the same type as the model, so views of two instances line up by index.
pub trait ParamSet {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a>>);
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a>>);

    fn views(&self) -> Vec<ParamView<'_>> {
        let mut out = Vec::new();
        self.params("", &mut out);
        out
    }

    fn views_mut(&mut self) -> Vec<ParamViewMut<'_>> {
        let mut out = Vec::new();
        self.params_mut("", &mut out);
        out
    }

    fn num_params(&self) -> usize {
        self.views().iter().map(|v| v.data.len()).sum()
    }

    fn fill(&mut self, value: f64) {
        for v in self.views_mut() {
            v.data.fill(value);
        }
    }

    fn scale(&mut self, factor: f64) {
        for v in self.views_mut() {
            v.data.iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// Elementwise `self += other`.
    fn add_assign(&mut self, other: &Self)
    where
        Self: Sized,
    {
        let rhs = other.views();
        for (l, r) in self.views_mut().into_iter().zip(rhs) {
            l.data.iter_mut().zip(r.data).for_each(|(a, b)| *a += b);
        }
    }

    /// SHA-256 over names, shapes and little-endian values.
    fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for v in self.views() {
            h.update(v.name.as_bytes());
            for d in &v.shape {
                h.update((*d as u64).to_le_bytes());
            }
            for x in v.data {
                h.update(x.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

macro_rules! push_arrays {
    ($prefix:expr, $out:expr, $method:ident, $($field:expr => $name:literal),+ $(,)?) => {
        $(
            let shape = $field.shape().to_vec();
            $out.push($crate::encoder::params::ParamView {
                name: $crate::encoder::params::join($prefix, $name),
                shape,
                data: $field.$method().expect("parameters are contiguous"),
            });
        )+
    };
}

macro_rules! push_arrays_mut {
    ($prefix:expr, $out:expr, $($field:expr => $name:literal),+ $(,)?) => {
        $(
            let shape = $field.shape().to_vec();
            $out.push($crate::encoder::params::ParamViewMut {
                name: $crate::encoder::params::join($prefix, $name),
                shape,
                data: $field.as_slice_mut().expect("parameters are contiguous"),
            });
        )+
    };
}

pub(crate) use push_arrays;
pub(crate) use push_arrays_mut;
