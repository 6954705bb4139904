//! Flat parameter storage with named tensor views.
//!
//! All weights live in one `Vec<f64>`; gradients and optimizer moments use
//! buffers of the same length, so updates and checkpoints are plain slices.

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub specs: Vec<TensorSpec>,
    pub total: usize,
}

impl ParamLayout {
    pub(crate) fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> TensorId {
        let id = TensorId(self.specs.len());
        self.specs.push(TensorSpec {
            name: name.into(),
            rows,
            cols,
            offset: self.total,
        });
        self.total += rows * cols;
        id
    }

    pub fn spec(&self, id: TensorId) -> &TensorSpec {
        &self.specs[id.0]
    }

    /// Index of the tensor owning flat coordinate `i`.
    pub fn tensor_of(&self, i: usize) -> Option<&TensorSpec> {
        self.specs.iter().find(|s| s.range().contains(&i))
    }

    pub fn mat<'a>(&self, data: &'a [f64], id: TensorId) -> ArrayView2<'a, f64> {
        let s = self.spec(id);
        ArrayView2::from_shape((s.rows, s.cols), &data[s.range()]).expect("layout shape")
    }

    pub fn vector<'a>(&self, data: &'a [f64], id: TensorId) -> ArrayView1<'a, f64> {
        let s = self.spec(id);
        ArrayView1::from_shape(s.len(), &data[s.range()]).expect("layout shape")
    }

    pub fn mat_mut<'a>(&self, data: &'a mut [f64], id: TensorId) -> ArrayViewMut2<'a, f64> {
        let s = self.spec(id);
        let r = s.range();
        ArrayViewMut2::from_shape((s.rows, s.cols), &mut data[r]).expect("layout shape")
    }

    pub fn vector_mut<'a>(&self, data: &'a mut [f64], id: TensorId) -> ArrayViewMut1<'a, f64> {
        let s = self.spec(id);
        let r = s.range();
        ArrayViewMut1::from_shape(s.len(), &mut data[r]).expect("layout shape")
    }
}
