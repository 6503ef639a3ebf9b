use std::collections::{BTreeMap, HashMap};

use super::Tensor;
use crate::error::{Result, StarError};

/// A trainable tensor together with its gradient and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub adam_m: Tensor,
    pub adam_v: Tensor,
    pub step: u64,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let shape = value.shape().to_vec();
        Parameter {
            name: name.into(),
            value,
            grad: Tensor::zeros(&shape),
            adam_m: Tensor::zeros(&shape),
            adam_v: Tensor::zeros(&shape),
            step: 0,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// Rounds value and optimizer state through `f32`.
    pub fn round_to_f32(&mut self) {
        for t in [&mut self.value, &mut self.adam_m, &mut self.adam_v] {
            for v in t.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named parameters kept in ascending name order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore {
    params: Vec<Parameter>,
    index: HashMap<String, ParamId>,
}

impl ParameterStore {
    pub fn new(mut params: Vec<Parameter>) -> Result<Self> {
        params.sort_by(|a, b| a.name.cmp(&b.name));
        let mut index = HashMap::with_capacity(params.len());
        for (i, p) in params.iter().enumerate() {
            if index.insert(p.name.clone(), ParamId(i)).is_some() {
                return Err(StarError::InvalidArgument(format!(
                    "duplicate parameter name `{}`",
                    p.name
                )));
            }
        }
        Ok(ParameterStore { params, index })
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.id(name).map(|id| &mut self.params[id.0])
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Adds `grads` into the stored gradients.
    pub fn accumulate(&mut self, grads: &GradSet) {
        for (p, g) in self.params.iter_mut().zip(&grads.bufs) {
            match g {
                GradBuf::Dense(d) => {
                    for (a, b) in p.grad.data_mut().iter_mut().zip(d) {
                        *a += b;
                    }
                }
                GradBuf::Rows { rows, .. } => {
                    for (&r, row) in rows {
                        for (a, b) in p.grad.row_mut(r).iter_mut().zip(row) {
                            *a += b;
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
enum GradBuf {
    Dense(Vec<f64>),
    Rows {
        cols: usize,
        rows: BTreeMap<usize, Vec<f64>>,
    },
}

/// Scratch gradient buffers aligned with a [`ParameterStore`].
///
/// Parameters marked sparse keep only the rows that were touched, which
/// keeps per-chunk buffers small for large lookup tables.
#[derive(Debug, Clone)]
pub struct GradSet {
    bufs: Vec<GradBuf>,
}

impl GradSet {
    pub fn new(store: &ParameterStore, sparse: &[ParamId]) -> Self {
        let bufs = store
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| {
                if sparse.contains(&ParamId(i)) {
                    GradBuf::Rows {
                        cols: p.value.cols(),
                        rows: BTreeMap::new(),
                    }
                } else {
                    GradBuf::Dense(vec![0.0; p.value.len()])
                }
            })
            .collect();
        GradSet { bufs }
    }

    /// Whole gradient buffer of a dense parameter.
    pub fn dense(&mut self, id: ParamId) -> &mut [f64] {
        match &mut self.bufs[id.0] {
            GradBuf::Dense(d) => d,
            GradBuf::Rows { .. } => panic!("parameter {} is row-sparse", id.0),
        }
    }

    /// Gradient row `row` of a row-sparse parameter.
    pub fn row(&mut self, id: ParamId, row: usize) -> &mut [f64] {
        match &mut self.bufs[id.0] {
            GradBuf::Dense(_) => panic!("parameter {} is dense", id.0),
            GradBuf::Rows { cols, rows } => {
                let cols = *cols;
                rows.entry(row).or_insert_with(|| vec![0.0; cols])
            }
        }
    }

    /// Adds `other` into `self`.
    pub fn merge(&mut self, other: &GradSet) {
        for (a, b) in self.bufs.iter_mut().zip(&other.bufs) {
            match (a, b) {
                (GradBuf::Dense(x), GradBuf::Dense(y)) => {
                    for (u, v) in x.iter_mut().zip(y) {
                        *u += v;
                    }
                }
                (GradBuf::Rows { cols, rows }, GradBuf::Rows { rows: other, .. }) => {
                    for (&r, v) in other {
                        let row = rows.entry(r).or_insert_with(|| vec![0.0; *cols]);
                        for (u, w) in row.iter_mut().zip(v) {
                            *u += w;
                        }
                    }
                }
                _ => panic!("gradient sets built with different sparsity"),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_sorted_and_unique() {
        let store = ParameterStore::new(vec![
            Parameter::new("b", Tensor::zeros(&[2])),
            Parameter::new("a", Tensor::zeros(&[3])),
        ])
        .unwrap();
        let names: Vec<_> = store.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, ["a", "b"]);
        assert!(ParameterStore::new(vec![
            Parameter::new("a", Tensor::zeros(&[1])),
            Parameter::new("a", Tensor::zeros(&[1])),
        ])
        .is_err());
    }

    #[test]
    fn sparse_rows_accumulate() {
        let mut store = ParameterStore::new(vec![
            Parameter::new("table", Tensor::zeros(&[4, 2])),
            Parameter::new("w", Tensor::zeros(&[3])),
        ])
        .unwrap();
        let table = store.id("table").unwrap();
        let w = store.id("w").unwrap();
        let mut g = GradSet::new(&store, &[table]);
        g.row(table, 2)[1] = 1.5;
        g.dense(w)[0] = 2.0;
        let mut h = GradSet::new(&store, &[table]);
        h.row(table, 2)[1] = 0.5;
        g.merge(&h);
        store.accumulate(&g);
        assert_eq!(store.value(table).shape(), [4, 2]);
        assert_eq!(store.get(table).grad.row(2), [0.0, 2.0]);
        assert_eq!(store.get(w).grad.data(), [2.0, 0.0, 0.0]);
    }
}
