use std::sync::Arc;

use super::kernels::{self, ConvGeom};
use super::{Backend, ParamId, ParamStore, PoolMode, Tensor};
use crate::error::Result;

/// Inference-only backend: computes values immediately and keeps nothing
/// beyond what the caller holds, so memory stays bounded by the live
/// feature maps.
pub struct Eager {
    params: Vec<Arc<Tensor>>,
}

impl Eager {
    pub fn new(store: &ParamStore) -> Self {
        Self {
            params: store.iter().map(|(_, p)| Arc::new(p.tensor.clone())).collect(),
        }
    }

    pub fn value(t: Tensor) -> Arc<Tensor> {
        Arc::new(t)
    }

    fn make(shape: Vec<usize>, data: Vec<f64>) -> Arc<Tensor> {
        Arc::new(Tensor::new(shape, data).expect("kernel output matches shape"))
    }

    fn elementwise(
        op: &'static str,
        a: &Tensor,
        b: &Tensor,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Arc<Tensor>> {
        if a.shape() == b.shape() {
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            return Ok(Self::make(a.shape().to_vec(), data));
        }
        let (full, part) = if kernels::broadcast_strides(op, a.shape(), b.shape()).is_ok() {
            (a, b)
        } else {
            (b, a)
        };
        let strides = kernels::broadcast_strides(op, full.shape(), part.shape())?;
        let idx = kernels::broadcast_index(full.shape(), &strides);
        let pv = part.data();
        let data = full
            .data()
            .iter()
            .zip(&idx)
            .map(|(&x, &i)| f(x, pv[i]))
            .collect();
        Ok(Self::make(full.shape().to_vec(), data))
    }
}

impl Backend for Eager {
    type Value = Arc<Tensor>;

    fn param(&mut self, id: ParamId) -> Arc<Tensor> {
        Arc::clone(&self.params[id.index()])
    }

    fn shape(&self, v: &Arc<Tensor>) -> Vec<usize> {
        v.shape().to_vec()
    }

    fn conv2d(
        &mut self,
        input: &Arc<Tensor>,
        weight: &Arc<Tensor>,
        bias: &Arc<Tensor>,
        pad: usize,
        stride: usize,
    ) -> Result<Arc<Tensor>> {
        let geom = ConvGeom::new(input.shape(), weight.shape(), bias.shape(), pad, stride)?;
        let data = kernels::conv2d_forward(input.data(), weight.data(), bias.data(), &geom);
        Ok(Self::make(geom.output_shape(), data))
    }

    fn relu(&mut self, x: &Arc<Tensor>) -> Arc<Tensor> {
        Self::make(x.shape().to_vec(), kernels::relu(x.data()))
    }

    fn sigmoid(&mut self, x: &Arc<Tensor>) -> Arc<Tensor> {
        Self::make(x.shape().to_vec(), kernels::sigmoid(x.data()))
    }

    fn pool_spatial(&mut self, x: &Arc<Tensor>, mode: PoolMode) -> Result<Arc<Tensor>> {
        let (data, _) = kernels::pool_spatial(x.data(), x.shape(), mode)?;
        let s = x.shape();
        Ok(Self::make(vec![s[0], s[1], 1, 1], data))
    }

    fn pool_channel(&mut self, x: &Arc<Tensor>, mode: PoolMode) -> Result<Arc<Tensor>> {
        let (data, _) = kernels::pool_channel(x.data(), x.shape(), mode)?;
        let s = x.shape();
        Ok(Self::make(vec![s[0], 1, s[2], s[3]], data))
    }

    fn concat_channels(&mut self, a: &Arc<Tensor>, b: &Arc<Tensor>) -> Result<Arc<Tensor>> {
        let shape = kernels::concat_shape(a.shape(), b.shape())?;
        let data = kernels::concat_channels(a.data(), a.shape(), b.data(), b.shape());
        Ok(Self::make(shape, data))
    }

    fn slice_channels(&mut self, x: &Arc<Tensor>, start: usize, len: usize) -> Result<Arc<Tensor>> {
        let shape = kernels::slice_shape(x.shape(), start, len)?;
        Ok(Self::make(shape, kernels::slice_channels(x.data(), x.shape(), start, len)))
    }

    fn add(&mut self, a: &Arc<Tensor>, b: &Arc<Tensor>) -> Result<Arc<Tensor>> {
        Self::elementwise("add", a, b, |x, y| x + y)
    }

    fn mul(&mut self, a: &Arc<Tensor>, b: &Arc<Tensor>) -> Result<Arc<Tensor>> {
        Self::elementwise("mul", a, b, |x, y| x * y)
    }
}
