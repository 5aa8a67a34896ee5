use rand::Rng;

use super::AdError;

/// Handle of a recorded tape node. Carries the owning tape's id so that a
/// tensor built on one tape cannot silently be fed to another.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeRef {
    pub(crate) tape: u64,
    pub(crate) index: usize,
}

/// Dense row-major `f64` tensor.
///
/// A tensor is a plain value; the optional [`NodeRef`] ties it to a
/// computation tape for gradient tracking. A tensor without a node
/// participates in forward arithmetic identically to one with a node.
#[derive(Clone, Debug)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    node: Option<NodeRef>,
}

impl Tensor {
    /// Build a tensor, checking that `product(shape) == data.len()`.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, AdError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(AdError::ShapeDataMismatch {
                shape,
                len: data.len(),
            });
        }
        Ok(Self {
            shape,
            data,
            node: None,
        })
    }

    pub(crate) fn raw(shape: Vec<usize>, data: Vec<f64>, node: Option<NodeRef>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data, node }
    }

    /// Rank-0 scalar.
    pub fn scalar(value: f64) -> Self {
        Self::raw(vec![], vec![value], None)
    }

    /// 1-D tensor from a vector.
    pub fn from_vec(data: Vec<f64>) -> Self {
        let n = data.len();
        Self::raw(vec![n], data, None)
    }

    /// 1-D tensor from a slice.
    pub fn from_slice(data: &[f64]) -> Self {
        Self::from_vec(data.to_vec())
    }

    /// 2-D tensor from row-major data.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, AdError> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self::raw(shape, vec![0.0; numel], None)
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let numel = shape.iter().product();
        Self::raw(shape, vec![value; numel], None)
    }

    /// Identity matrix.
    pub fn eye(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self::raw(vec![n, n], data, None)
    }

    /// Entries drawn i.i.d. from `U(-bound, bound)`.
    pub fn uniform<R: Rng + ?Sized>(shape: Vec<usize>, bound: f64, rng: &mut R) -> Self {
        let numel = shape.iter().product();
        let data = (0..numel)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Self::raw(shape, data, None)
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// The single element of a one-element tensor.
    ///
    /// Panics if the tensor has more than one element; that is a programming
    /// error, not a runtime condition.
    pub fn item(&self) -> f64 {
        assert!(
            self.numel() == 1,
            "item() on tensor of shape {:?}",
            self.shape
        );
        self.data[0]
    }

    pub fn node(&self) -> Option<NodeRef> {
        self.node
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    /// The same values with gradient tracking dropped.
    pub fn detached(&self) -> Tensor {
        Self::raw(self.shape.clone(), self.data.clone(), None)
    }
}
