//! Event head: 1×1 projection to class logits, block max-pooling, channel
//! softmax, winner-take-all and upsampling back to frame resolution.

use crate::error::{Error, Result};
use crate::tensor::{
    channel_softmax, channel_softmax_backward, channel_wta, channel_wta_backward, conv2d_same, conv2d_same_backward,
    maxpool2d, maxpool2d_backward, upsample_nn, upsample_nn_backward, ConvGrads, ConvTrace, PoolTrace, Tensor,
    WtaTrace,
};

use super::ConvLayer;

/// Per-frame event activations `[n, M, M]`: within every grid block one
/// class carries the block's winning softmax probability, all others are 0.
#[derive(Clone, Debug, PartialEq)]
pub struct EventMap {
    map: Tensor,
    grid: usize,
}

impl EventMap {
    /// Build a map block by block; `block(row, col)` gives the active class and value.
    pub fn from_blocks(
        classes: usize,
        rows: usize,
        cols: usize,
        grid: usize,
        block: impl Fn(usize, usize) -> (usize, f64),
    ) -> Self {
        let mut map = Tensor::zeros(&[classes, rows * grid, cols * grid]);
        for by in 0..rows {
            for bx in 0..cols {
                let (c, v) = block(by, bx);
                for y in by * grid..(by + 1) * grid {
                    for x in bx * grid..(bx + 1) * grid {
                        map.set3(c, y, x, v);
                    }
                }
            }
        }
        Self { map, grid }
    }

    pub fn tensor(&self) -> &Tensor {
        &self.map
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn classes(&self) -> usize {
        self.map.shape()[0]
    }

    /// Number of grid blocks along `(rows, cols)`.
    pub fn blocks(&self) -> (usize, usize) {
        (self.map.shape()[1] / self.grid, self.map.shape()[2] / self.grid)
    }

    /// Active `(class, value)` of grid block `(by, bx)`.
    pub fn block(&self, by: usize, bx: usize) -> (usize, f64) {
        let (y, x) = (by * self.grid, bx * self.grid);
        (0..self.classes()).map(|c| (c, self.map.get3(c, y, x))).find(|&(_, v)| v != 0.0).unwrap_or((0, 0.0))
    }

    /// Check the structural contract; returns a description of the first violation.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let (n, h, w) = (self.classes(), self.map.shape()[1], self.map.shape()[2]);
        let g = self.grid;
        if h % g != 0 || w % g != 0 {
            return Err(format!("{h}x{w} not divisible by grid {g}"));
        }
        for by in 0..h / g {
            for bx in 0..w / g {
                let mut active = 0;
                for c in 0..n {
                    let v0 = self.map.get3(c, by * g, bx * g);
                    for y in by * g..(by + 1) * g {
                        for x in bx * g..(bx + 1) * g {
                            if self.map.get3(c, y, x) != v0 {
                                return Err(format!("block ({by},{bx}) class {c} not constant"));
                            }
                        }
                    }
                    if v0 != 0.0 {
                        if !(v0 > 0.0 && v0 <= 1.0) {
                            return Err(format!("block ({by},{bx}) class {c} value {v0} outside (0,1]"));
                        }
                        active += 1;
                    }
                }
                if active != 1 {
                    return Err(format!("block ({by},{bx}) has {active} active classes"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct HeadTrace {
    proj: ConvTrace,
    pool: PoolTrace,
    /// Softmax output on the pooled grid, before winner-take-all.
    pub probabilities: Tensor,
    wta: WtaTrace,
    grid: usize,
}

impl HeadTrace {
    /// Discrete routing decisions (pool argmaxes, then WTA winners).
    pub fn routing(&self) -> impl Iterator<Item = usize> + '_ {
        self.pool.argmax().iter().chain(self.wta.winners()).copied()
    }
}

pub fn event_head(hidden: &Tensor, proj: &ConvLayer, grid: usize) -> Result<(EventMap, HeadTrace)> {
    let (_, h, w) = hidden.dims3()?;
    if grid == 0 || h % grid != 0 || w % grid != 0 {
        return Err(Error::InvalidArgument(format!("event head: {h}x{w} frame not divisible by grid {grid}")));
    }
    let (logits, proj_trace) = conv2d_same(hidden, &proj.kernel, Some(&proj.bias))?;
    let (pooled, pool) = maxpool2d(&logits, grid)?;
    let probabilities = channel_softmax(&pooled)?;
    let (winners, wta) = channel_wta(&probabilities)?;
    let map = upsample_nn(&winners, grid)?;
    Ok((EventMap { map, grid }, HeadTrace { proj: proj_trace, pool, probabilities, wta, grid }))
}

/// Gradients on the hidden state (`input`) and on the projection.
pub fn event_head_backward(trace: &HeadTrace, proj: &ConvLayer, upstream: &Tensor) -> Result<ConvGrads> {
    let d_winners = upsample_nn_backward(upstream, trace.grid)?;
    let d_prob = channel_wta_backward(&trace.wta, &d_winners)?;
    let d_pooled = channel_softmax_backward(&trace.probabilities, &d_prob)?;
    let d_logits = maxpool2d_backward(&trace.pool, &d_pooled)?;
    conv2d_same_backward(&trace.proj, &proj.kernel, &d_logits)
}
