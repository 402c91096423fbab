//! Composite blocks: inverted residual, local representation, ECA gating and
//! the grouped local/global fusion block.

mod eca;
mod gmlgff;
mod inres;

pub use eca::{eca_kernel_size, Eca};
pub use gmlgff::{split_sizes, Gmlgff, GmlgffConfig, LocalRepresentation};
pub use inres::{InRes, InResConfig};

use std::ops::{Add, AddAssign};

/// Trainable parameters and multiply-accumulates of a layer at a given input.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Cost {
    pub params: usize,
    pub macs: usize,
}

impl Cost {
    pub const fn new(params: usize, macs: usize) -> Self {
        Self { params, macs }
    }

    /// Conv plus batch norm: `k*k*(cin/groups)*cout` weights and `2*cout`
    /// affine terms; MACs over an `ho x wo` output.
    pub const fn conv_bn(cin_per_group: usize, cout: usize, k: usize, ho: usize, wo: usize) -> Self {
        let w = k * k * cin_per_group * cout;
        Self::new(w + 2 * cout, w * ho * wo)
    }
}

impl Add for Cost {
    type Output = Cost;

    fn add(self, rhs: Cost) -> Cost {
        Cost::new(self.params + rhs.params, self.macs + rhs.macs)
    }
}

impl AddAssign for Cost {
    fn add_assign(&mut self, rhs: Cost) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for Cost {
    fn sum<I: Iterator<Item = Cost>>(iter: I) -> Cost {
        iter.fold(Cost::default(), Add::add)
    }
}
