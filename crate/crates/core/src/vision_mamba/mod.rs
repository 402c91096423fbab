//! Vision Mamba layer: a 2-D map is flattened four ways, each sequence runs
//! through its own selective scan, and the results are folded back and summed.

mod layer;
pub mod scan;

pub use layer::{VmLayer, VmLayerConfig};
pub use scan::{cross_merge, cross_scan, ScanDirection};
