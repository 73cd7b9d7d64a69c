//! ℓ2 binary search trees.
//!
//! An [`L2Bst`] stores a real vector in a complete binary tree whose leaves
//! hold the squared components (signs kept alongside), and every internal
//! node holds the sum of its two children. The root therefore stores
//! `||x||^2`. Updates touch one root-to-leaf path, and an index can be
//! sampled with probability `x_i^2 / ||x||^2` by walking from the root,
//! choosing each child proportionally to its subtree sum.
//!
//! [`L2BstMatrix`] is the append-only matrix variant: one tree per row plus a
//! tree over the row norms, so entries can be sampled with probability
//! `X_ij^2 / ||X||_F^2` in two walks.

use std::io::{Read, Write};

use rand::Rng;

use crate::{Error, Result};

const SNAPSHOT_MAGIC: &[u8; 6] = b"L2BST1";

/// How many updates may accumulate before the path sums are recomputed from
/// the leaves. Incremental maintenance is exact per path, but long runs
/// re-sum different leaf subsets in different orders; periodic rebuilds keep
/// any float drift bounded.
pub const DEFAULT_REBUILD_INTERVAL: u64 = 1 << 20;

/// Sampling tree over the squared components of a vector.
#[derive(Debug, Clone, PartialEq)]
pub struct L2Bst {
    /// Logical dimension.
    len: usize,
    /// Power-of-two padded leaf count.
    capacity: usize,
    /// Heap-ordered sums, 1-indexed: `sums[1]` is the root,
    /// `sums[capacity + i]` is `values[i]^2`.
    sums: Vec<f64>,
    /// Signed leaf values.
    values: Vec<f64>,
    touches: u64,
    updates_since_rebuild: u64,
    rebuild_interval: u64,
}

impl L2Bst {
    /// Build a tree over `x`. Takes time linear in the padded length.
    pub fn build(x: &[f64]) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::EmptyInput("cannot build a tree over an empty vector".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite entry".into()));
        }
        let capacity = x.len().next_power_of_two();
        let mut tree = Self {
            len: x.len(),
            capacity,
            sums: vec![0.0; 2 * capacity],
            values: x.to_vec(),
            touches: 0,
            updates_since_rebuild: 0,
            rebuild_interval: DEFAULT_REBUILD_INTERVAL,
        };
        tree.rebuild();
        Ok(tree)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Signed component `x_i`.
    pub fn query(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn values(&self) -> &[f64] {
        &self.values[..self.len]
    }

    /// `||x||^2` (the root sum).
    pub fn sq_norm(&self) -> f64 {
        self.sums[1]
    }

    pub fn norm(&self) -> f64 {
        self.sums[1].sqrt()
    }

    /// Set component `i` to `v`, recomputing only the root-to-leaf path.
    /// Each parent is recomputed as the sum of its two children, so the
    /// parent-sum invariant holds bitwise after every update.
    pub fn update(&mut self, i: usize, v: f64) -> Result<()> {
        if i >= self.len {
            return Err(Error::IndexOutOfRange { index: i, len: self.len });
        }
        if !v.is_finite() {
            return Err(Error::Domain("non-finite entry".into()));
        }
        self.values[i] = v;
        let mut node = self.capacity + i;
        self.sums[node] = v * v;
        self.touches += 1;
        while node > 1 {
            node /= 2;
            self.sums[node] = self.sums[2 * node] + self.sums[2 * node + 1];
            self.touches += 1;
        }
        self.updates_since_rebuild += 1;
        if self.updates_since_rebuild >= self.rebuild_interval {
            self.rebuild();
        }
        Ok(())
    }

    /// Append a component, growing capacity (and rebuilding) as needed.
    pub fn push(&mut self, v: f64) -> Result<()> {
        if !v.is_finite() {
            return Err(Error::Domain("non-finite entry".into()));
        }
        if self.len == self.capacity {
            self.values.push(v);
            self.len += 1;
            self.capacity = self.len.next_power_of_two();
            self.sums = vec![0.0; 2 * self.capacity];
            self.rebuild();
        } else {
            self.values.push(v);
            self.len += 1;
            self.update(self.len - 1, v)?;
        }
        Ok(())
    }

    /// Recompute every internal node from the leaves.
    pub fn rebuild(&mut self) {
        for slot in &mut self.sums {
            *slot = 0.0;
        }
        for (i, &v) in self.values.iter().enumerate() {
            self.sums[self.capacity + i] = v * v;
        }
        for node in (1..self.capacity).rev() {
            self.sums[node] = self.sums[2 * node] + self.sums[2 * node + 1];
        }
        self.updates_since_rebuild = 0;
    }

    /// Sample an index with probability `x_i^2 / ||x||^2`. Walks from the
    /// root, branching on each pair of child sums, so zero components (and
    /// the zero padding) are never returned.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<usize> {
        if self.sums[1] <= 0.0 {
            return Err(Error::ZeroNorm);
        }
        let mut node = 1usize;
        while node < self.capacity {
            let left = self.sums[2 * node];
            let right = self.sums[2 * node + 1];
            let u: f64 = rng.gen();
            node = if u * (left + right) < left { 2 * node } else { 2 * node + 1 };
        }
        Ok(node - self.capacity)
    }

    /// Cumulative count of node writes performed by `update`.
    pub fn node_touches(&self) -> u64 {
        self.touches
    }

    pub fn set_rebuild_interval(&mut self, interval: u64) {
        self.rebuild_interval = interval.max(1);
    }

    /// Snapshot: magic, logical length, capacity, then the signed leaves as
    /// little-endian f64. Internal sums are rebuilt on load.
    pub fn write_snapshot<W: Write>(&self, out: &mut W) -> Result<()> {
        out.write_all(SNAPSHOT_MAGIC)?;
        out.write_all(&(self.len as u64).to_le_bytes())?;
        out.write_all(&(self.capacity as u64).to_le_bytes())?;
        for v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(input: &mut R) -> Result<Self> {
        let mut magic = [0u8; 6];
        input.read_exact(&mut magic)?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(Error::Format("bad l2bst snapshot magic".into()));
        }
        let mut buf = [0u8; 8];
        input.read_exact(&mut buf)?;
        let len = u64::from_le_bytes(buf) as usize;
        input.read_exact(&mut buf)?;
        let capacity = u64::from_le_bytes(buf) as usize;
        if len == 0 || capacity != len.next_power_of_two() {
            return Err(Error::Format("inconsistent l2bst snapshot header".into()));
        }
        let mut values = vec![0.0f64; len];
        for v in &mut values {
            input.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        Self::build(&values)
    }
}

/// Append-only matrix with Frobenius-weighted entry sampling.
#[derive(Debug, Clone)]
pub struct L2BstMatrix {
    width: usize,
    rows: Vec<L2Bst>,
    row_norm_tree: Option<L2Bst>,
}

impl L2BstMatrix {
    pub fn new(width: usize) -> Result<Self> {
        if width == 0 {
            return Err(Error::EmptyInput("zero-width matrix".into()));
        }
        Ok(Self { width, rows: Vec::new(), row_norm_tree: None })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn append_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.width {
            return Err(Error::ShapeMismatch(format!(
                "row width {} vs matrix width {}",
                row.len(),
                self.width
            )));
        }
        let tree = L2Bst::build(row)?;
        let norm = tree.norm();
        self.rows.push(tree);
        match &mut self.row_norm_tree {
            Some(t) => t.push(norm)?,
            None => self.row_norm_tree = Some(L2Bst::build(&[norm])?),
        }
        Ok(())
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.rows[row].query(col)
    }

    pub fn row(&self, row: usize) -> &L2Bst {
        &self.rows[row]
    }

    /// `||X||_F^2`, read off the row-norm tree root.
    pub fn frobenius_sq(&self) -> f64 {
        self.row_norm_tree.as_ref().map_or(0.0, |t| t.sq_norm())
    }

    pub fn frobenius(&self) -> f64 {
        self.frobenius_sq().sqrt()
    }

    /// Sample `(row, col)` with probability `X_rc^2 / ||X||_F^2`: a row-norm
    /// walk followed by a walk inside that row.
    pub fn sample_entry<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(usize, usize)> {
        let tree = self.row_norm_tree.as_ref().ok_or(Error::ZeroNorm)?;
        let row = tree.sample(rng)?;
        let col = self.rows[row].sample(rng)?;
        Ok((row, col))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn build_three_four_five() {
        let t = L2Bst::build(&[3.0, 4.0]).unwrap();
        assert_relative_eq!(t.norm(), 5.0, max_relative = 1e-15);
        assert_eq!(t.query(0), 3.0);
        assert_eq!(t.query(1), 4.0);
    }

    #[test]
    fn zero_vector_is_unsampleable() {
        let t = L2Bst::build(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(t.norm(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(t.sample(&mut rng), Err(Error::ZeroNorm)));
        assert!(L2Bst::build(&[]).is_err());
    }

    #[test]
    fn point_mass_sampling() {
        let mut x = vec![0.0; 16];
        x[7] = 2.5;
        let t = L2Bst::build(&x).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            assert_eq!(t.sample(&mut rng).unwrap(), 7);
        }
    }

    #[test]
    fn update_adjusts_norm() {
        let mut t = L2Bst::build(&[3.0, 4.0]).unwrap();
        t.update(0, 0.0).unwrap();
        assert_relative_eq!(t.norm(), 4.0, max_relative = 1e-15);
        assert!(t.update(2, 1.0).is_err());
    }

    #[test]
    fn update_involution_is_bitwise() {
        let mut t = L2Bst::build(&[1.0, -2.0, 3.0, 0.5, 0.25]).unwrap();
        let before = t.clone();
        t.update(2, 9.0).unwrap();
        t.update(2, 3.0).unwrap();
        assert_eq!(t.values(), before.values());
        assert_eq!(t.sums, before.sums);
    }

    #[test]
    fn update_touches_log_many_nodes() {
        let x = vec![1.0; 1024];
        let mut t = L2Bst::build(&x).unwrap();
        let bound = 1024f64.log2() as u64 + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let before = t.node_touches();
            let i = rng.gen_range(0..1024);
            t.update(i, rng.gen_range(-1.0..1.0)).unwrap();
            assert!(t.node_touches() - before <= bound);
        }
    }

    #[test]
    fn squared_amplitude_law() {
        let t = L2Bst::build(&[3.0, 4.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 100_000;
        let mut ones = 0usize;
        for _ in 0..n {
            if t.sample(&mut rng).unwrap() == 1 {
                ones += 1;
            }
        }
        let freq = ones as f64 / n as f64;
        assert!((freq - 16.0 / 25.0).abs() < 0.01, "freq {freq}");
    }

    #[test]
    fn dominant_entry_probability() {
        let mut t = L2Bst::build(&[1.0, 1.0]).unwrap();
        t.update(0, 1000.0).unwrap();
        // P(0) = 10^6 / (10^6 + 1)
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 200_000;
        let zeros = (0..n).filter(|_| t.sample(&mut rng).unwrap() == 0).count();
        assert!(zeros as f64 / n as f64 > 0.9999);
    }

    #[test]
    fn sampling_never_returns_zero_component() {
        let t = L2Bst::build(&[0.0, 2.0, 0.0, -1.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..2000 {
            let i = t.sample(&mut rng).unwrap();
            assert!(t.query(i) != 0.0);
        }
    }

    #[test]
    fn snapshot_roundtrip() {
        let mut t = L2Bst::build(&[0.5, -1.5, 2.0]).unwrap();
        t.update(1, 0.75).unwrap();
        let mut buf = Vec::new();
        t.write_snapshot(&mut buf).unwrap();
        let back = L2Bst::read_snapshot(&mut buf.as_slice()).unwrap();
        assert_eq!(back.values(), t.values());
        assert_relative_eq!(back.sq_norm(), t.sq_norm(), max_relative = 1e-12);
        assert!(L2Bst::read_snapshot(&mut &b"NOPE"[..]).is_err());
    }

    #[test]
    fn matrix_identity_sampling_is_uniform() {
        let mut m = L2BstMatrix::new(2).unwrap();
        m.append_row(&[1.0, 0.0]).unwrap();
        m.append_row(&[0.0, 1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let mut diag0 = 0usize;
        for _ in 0..n {
            let (r, c) = m.sample_entry(&mut rng).unwrap();
            assert_eq!(r, c);
            if r == 0 {
                diag0 += 1;
            }
        }
        assert!((diag0 as f64 / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn matrix_single_entry_point_mass() {
        let mut m = L2BstMatrix::new(3).unwrap();
        m.append_row(&[0.0, 0.0, 0.0]).unwrap();
        m.append_row(&[0.0, -2.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            assert_eq!(m.sample_entry(&mut rng).unwrap(), (1, 1));
        }
    }

    #[test]
    fn matrix_rejects_ragged_rows() {
        let mut m = L2BstMatrix::new(3).unwrap();
        assert!(m.append_row(&[1.0, 2.0]).is_err());
        assert!(matches!(
            m.sample_entry(&mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::ZeroNorm)
        ));
    }

    #[test]
    fn matrix_frobenius_tracks_rows() {
        let mut m = L2BstMatrix::new(2).unwrap();
        m.append_row(&[3.0, 4.0]).unwrap();
        assert_relative_eq!(m.frobenius(), 5.0, max_relative = 1e-12);
        m.append_row(&[1.0, 2.0]).unwrap();
        assert_relative_eq!(m.frobenius_sq(), 30.0, max_relative = 1e-12);
    }

    proptest! {
        /// Parent-sum invariant and root identity after arbitrary updates,
        /// checked against a full recompute.
        #[test]
        fn parent_sums_hold_under_updates(
            dims in 1usize..33,
            ops in prop::collection::vec((0usize..33, -10.0f64..10.0), 0..64),
            seed in 0u64..100,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..dims).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let mut t = L2Bst::build(&x).unwrap();
            for (i, v) in ops {
                let _ = t.update(i % dims, v);
            }
            for node in 1..t.capacity {
                prop_assert_eq!(t.sums[node], t.sums[2 * node] + t.sums[2 * node + 1]);
            }
            let direct: f64 = t.values().iter().map(|v| v * v).sum();
            if direct > 0.0 {
                prop_assert!((t.sq_norm() - direct).abs() <= 1e-9 * direct);
            }
        }

        /// Matrix Frobenius norm equals the root of the sum of row norms.
        #[test]
        fn frobenius_consistency(rows in 1usize..8, cols in 1usize..8, seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut m = L2BstMatrix::new(cols).unwrap();
            let mut total = 0.0;
            for _ in 0..rows {
                let row: Vec<f64> = (0..cols).map(|_| rng.gen_range(-3.0..3.0)).collect();
                total += row.iter().map(|v| v * v).sum::<f64>();
                m.append_row(&row).unwrap();
            }
            prop_assert!((m.frobenius_sq() - total).abs() <= 1e-9 * total.max(1.0));
        }
    }
}
