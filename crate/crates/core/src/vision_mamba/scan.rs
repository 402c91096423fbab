//! Four-direction flattening of 2-D feature maps and its inverse.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScanDirection {
    RowForward,
    ColForward,
    RowReverse,
    ColReverse,
}

impl ScanDirection {
    pub const ALL: [ScanDirection; 4] = [
        ScanDirection::RowForward,
        ScanDirection::ColForward,
        ScanDirection::RowReverse,
        ScanDirection::ColReverse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScanDirection::RowForward => "row_forward",
            ScanDirection::ColForward => "col_forward",
            ScanDirection::RowReverse => "row_reverse",
            ScanDirection::ColReverse => "col_reverse",
        }
    }

    /// Grid position `y * w + x` visited at sequence step `i`.
    #[inline]
    pub fn grid_index(self, i: usize, h: usize, w: usize) -> usize {
        let len = h * w;
        let col_major = |j: usize| (j % h) * w + j / h;
        match self {
            ScanDirection::RowForward => i,
            ScanDirection::ColForward => col_major(i),
            ScanDirection::RowReverse => len - 1 - i,
            ScanDirection::ColReverse => col_major(len - 1 - i),
        }
    }

    fn table(self, h: usize, w: usize) -> Vec<usize> {
        (0..h * w).map(|i| self.grid_index(i, h, w)).collect()
    }
}

/// `[n, c, h, w] -> [n, h*w, c]` in the order of `dir`.
pub fn scan_batched<T: Scalar>(input: &Tensor<T>, dir: ScanDirection) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    let len = h * w;
    let table = dir.table(h, w);
    let x = input.data();
    let mut out = vec![T::zero(); n * len * c];
    for b in 0..n {
        let src = &x[b * c * len..][..c * len];
        let dst = &mut out[b * len * c..][..len * c];
        for (i, &p) in table.iter().enumerate() {
            for ch in 0..c {
                dst[i * c + ch] = src[ch * len + p];
            }
        }
    }
    Tensor::new(&[n, len, c], out)
}

/// Inverse of [`scan_batched`]: `[n, h*w, c] -> [n, c, h, w]`.
pub fn unscan_batched<T: Scalar>(seq: &Tensor<T>, dir: ScanDirection, h: usize, w: usize) -> Result<Tensor<T>> {
    let (n, len, c) = seq.dims3()?;
    if len != h * w {
        return Err(Error::dim(format!("sequence length {len} does not match {h}x{w} grid")));
    }
    let table = dir.table(h, w);
    let s = seq.data();
    let mut out = vec![T::zero(); n * c * len];
    for b in 0..n {
        let src = &s[b * len * c..][..len * c];
        let dst = &mut out[b * c * len..][..c * len];
        for (i, &p) in table.iter().enumerate() {
            for ch in 0..c {
                dst[ch * len + p] = src[i * c + ch];
            }
        }
    }
    Tensor::new(&[n, c, h, w], out)
}

/// Sum of the four un-permuted sequences, accumulated in [`ScanDirection::ALL`] order.
pub fn merge_batched<T: Scalar>(seqs: [&Tensor<T>; 4], h: usize, w: usize) -> Result<Tensor<T>> {
    let mut acc = unscan_batched(seqs[0], ScanDirection::ALL[0], h, w)?;
    for (seq, dir) in seqs.iter().zip(ScanDirection::ALL).skip(1) {
        if seq.shape() != seqs[0].shape() {
            return Err(Error::dim(format!(
                "merge: sequence {:?} vs {:?}",
                seq.shape(),
                seqs[0].shape()
            )));
        }
        acc.add_assign(&unscan_batched(seq, dir, h, w)?)?;
    }
    Ok(acc)
}

/// Four flattenings of a single `[c, h, w]` map, each `[h*w, c]`,
/// in [`ScanDirection::ALL`] order.
pub fn cross_scan<T: Scalar>(fmap: &Tensor<T>) -> Result<[Tensor<T>; 4]> {
    let (c, h, w) = fmap.dims3()?;
    let batched = fmap.clone().reshape(&[1, c, h, w])?;
    let one = |dir| -> Result<Tensor<T>> { scan_batched(&batched, dir)?.reshape(&[h * w, c]) };
    Ok([
        one(ScanDirection::RowForward)?,
        one(ScanDirection::ColForward)?,
        one(ScanDirection::RowReverse)?,
        one(ScanDirection::ColReverse)?,
    ])
}

/// Un-permutes each `[h*w, c]` sequence to grid order and sums them into `[c, h, w]`.
pub fn cross_merge<T: Scalar>(seqs: &[Tensor<T>; 4], h: usize, w: usize) -> Result<Tensor<T>> {
    let lift = |s: &Tensor<T>| -> Result<Tensor<T>> {
        let (len, c) = s.dims2()?;
        s.clone().reshape(&[1, len, c])
    };
    let lifted = [lift(&seqs[0])?, lift(&seqs[1])?, lift(&seqs[2])?, lift(&seqs[3])?];
    let merged = merge_batched([&lifted[0], &lifted[1], &lifted[2], &lifted[3]], h, w)?;
    let c = merged.shape()[1];
    merged.reshape(&[c, h, w])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_orders() {
        // a b / c d encoded as 1 2 / 3 4
        let m = Tensor::<f64>::from_f64(&[1, 2, 2], &[1., 2., 3., 4.]).unwrap();
        let [rf, cf, rr, cr] = cross_scan(&m).unwrap();
        assert_eq!(rf.data(), &[1., 2., 3., 4.]);
        assert_eq!(cf.data(), &[1., 3., 2., 4.]);
        assert_eq!(rr.data(), &[4., 3., 2., 1.]);
        assert_eq!(cr.data(), &[4., 2., 3., 1.]);
    }

    #[test]
    fn single_pixel() {
        let m = Tensor::<f64>::from_f64(&[3, 1, 1], &[5., 6., 7.]).unwrap();
        for s in cross_scan(&m).unwrap() {
            assert_eq!(s.data(), &[5., 6., 7.]);
        }
    }

    #[test]
    fn lengths_for_fourteen_square() {
        let m = Tensor::<f32>::zeros(&[4, 14, 14]);
        for s in cross_scan(&m).unwrap() {
            assert_eq!(s.shape(), &[196, 4]);
        }
    }

    #[test]
    fn merge_of_untouched_scans_is_four_times() {
        let vals: Vec<f64> = (0..2 * 3 * 5).map(|i| (i as f64 * 0.37).sin()).collect();
        let m = Tensor::<f64>::from_f64(&[2, 3, 5], &vals).unwrap();
        let merged = cross_merge(&cross_scan(&m).unwrap(), 3, 5).unwrap();
        assert!(merged.max_abs_diff(&m.scale(4.0)) < 1e-12);
    }

    #[test]
    fn single_row_forward_scan_reconstructs() {
        let m = Tensor::<f64>::from_f64(&[1, 2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap();
        let scans = cross_scan(&m).unwrap();
        let z = Tensor::zeros(&[6, 1]);
        let merged = cross_merge(&[scans[0].clone(), z.clone(), z.clone(), z], 2, 3).unwrap();
        assert_eq!(merged, m);
    }

    #[test]
    fn directions_are_distinct_bijections() {
        let (h, w) = (3, 4);
        let tables: Vec<Vec<usize>> = ScanDirection::ALL.iter().map(|d| d.table(h, w)).collect();
        for t in &tables {
            let mut sorted = t.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..h * w).collect::<Vec<_>>());
        }
        for i in 0..4 {
            for j in i + 1..4 {
                assert_ne!(tables[i], tables[j]);
            }
        }
        let rev = |t: &Vec<usize>| t.iter().rev().copied().collect::<Vec<_>>();
        assert_eq!(tables[2], rev(&tables[0]));
        assert_eq!(tables[3], rev(&tables[1]));
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let a = Tensor::<f64>::zeros(&[4, 2]);
        let b = Tensor::<f64>::zeros(&[5, 2]);
        assert!(cross_merge(&[a.clone(), a.clone(), a, b], 2, 2).is_err());
    }
}
