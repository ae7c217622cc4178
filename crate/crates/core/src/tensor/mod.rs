//! Dense 64-bit tensors, a reverse-mode autodiff tape and the Adam optimizer.
//!
//! Values are row-major `f64`. There is no general broadcasting: the only
//! implicit expansion is row-wise bias addition ([`Graph::add_row`]) and the
//! column scaling used for masking ([`Graph::mul_col`]). Every operation
//! checks shapes and reports expected/actual shapes on mismatch.

mod adam;
mod graph;
pub mod gradcheck;
mod io;
pub(crate) mod kernels;
mod params;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::{AdamConfig, AdamState};
pub use graph::{Gradients, Graph, Var};
pub use io::{read_params, write_params, FORMAT_VERSION, MAGIC};
pub use params::{Bound, Param, ParamId, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!("{expected} values for shape {shape:?}"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::shape("Tensor::from_rows", "rows of equal length", "ragged rows"));
        }
        Ok(Tensor {
            shape: vec![r, c],
            data: rows.concat(),
        })
    }

    pub fn uniform<R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    pub(crate) fn reshaped(mut self, shape: Vec<usize>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), self.data.len());
        self.shape = shape;
        self
    }

    /// Appends rows to a 2-D tensor.
    pub fn append_rows(&mut self, extra: &Tensor) -> Result<()> {
        if self.shape.len() != 2 || extra.shape.len() != 2 || extra.shape[1] != self.shape[1] {
            return Err(Error::shape(
                "append_rows",
                format!("[_, {}]", self.cols()),
                format!("{:?}", extra.shape),
            ));
        }
        self.data.extend_from_slice(&extra.data);
        self.shape[0] += extra.shape[0];
        Ok(())
    }
}

pub(crate) fn shape_str(shape: &[usize]) -> String {
    format!("{shape:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        let err = Tensor::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(err.to_string().contains("[2, 3]"));
    }

    #[test]
    fn append_rows_grows_first_dim() {
        let mut t = Tensor::zeros(&[2, 3]);
        t.append_rows(&Tensor::filled(&[1, 3], 1.0)).unwrap();
        assert_eq!(t.shape(), &[3, 3]);
        assert_eq!(t.row(2), &[1.0, 1.0, 1.0]);
        assert!(t.append_rows(&Tensor::zeros(&[1, 2])).is_err());
    }
}
