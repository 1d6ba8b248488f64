//! Grid assignment, pillar-center offsets, the PointNet pillar encoder and
//! gather/scatter between sparse pillar rows and the dense pseudo-image.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::features::PointFeatures;
use crate::nn::ops::{linear, relu_inplace, BatchNorm};
use crate::nn::{FeatureMap, Matrix, Scalar};
use crate::radar_io::RadarFrame;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub n_x: usize,
    pub n_y: usize,
    pub max_points_per_pillar: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            x_min: 0.0,
            x_max: 51.2,
            y_min: -25.6,
            y_max: 25.6,
            z_min: -3.0,
            z_max: 2.0,
            n_x: 320,
            n_y: 320,
            max_points_per_pillar: 10,
        }
    }
}

impl GridConfig {
    pub fn cell_x(&self) -> f64 {
        (self.x_max - self.x_min) / self.n_x as f64
    }

    pub fn cell_y(&self) -> f64 {
        (self.y_max - self.y_min) / self.n_y as f64
    }

    pub fn z_mid(&self) -> f64 {
        0.5 * (self.z_min + self.z_max)
    }

    pub fn num_cells(&self) -> usize {
        self.n_x * self.n_y
    }

    /// Same physical range at a different resolution.
    pub fn with_cells(&self, n_x: usize, n_y: usize) -> Self {
        Self { n_x, n_y, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.x_max, self.y_min, self.y_max, self.z_min, self.z_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.n_x == 0 || self.n_y == 0 {
            return Err(Error::config("grid needs finite ranges and positive cell counts"));
        }
        if !(self.cell_x() > 0.0 && self.cell_y() > 0.0 && self.z_max > self.z_min) {
            return Err(Error::config("grid ranges must be increasing"));
        }
        if self.max_points_per_pillar == 0 {
            return Err(Error::config("max_points_per_pillar must be positive"));
        }
        Ok(())
    }

    /// `(ix, iy)` of a point, or `None` outside the half-open ranges.
    pub fn cell_of(&self, x: f64, y: f64, z: f64) -> Option<(usize, usize)> {
        let inside = |v: f64, lo: f64, hi: f64| v >= lo && v < hi;
        if !(inside(x, self.x_min, self.x_max) && inside(y, self.y_min, self.y_max) && inside(z, self.z_min, self.z_max))
        {
            return None;
        }
        // Rounding can land a value just below the upper bound on n.
        let ix = (((x - self.x_min) / self.cell_x()).floor() as usize).min(self.n_x - 1);
        let iy = (((y - self.y_min) / self.cell_y()).floor() as usize).min(self.n_y - 1);
        Some((ix, iy))
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (self.x_min + (ix as f64 + 0.5) * self.cell_x(), self.y_min + (iy as f64 + 0.5) * self.cell_y())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PillarAssignment {
    pub n_x: usize,
    pub n_y: usize,
    pub max_points_per_pillar: usize,
    /// Row-major indices `iy * n_x + ix` of occupied pillars, increasing.
    pub occupied: Vec<usize>,
    /// In-range point indices of each occupied pillar in key order, including
    /// points beyond the cap.
    pub members: Vec<Vec<usize>>,
    /// Retained points per occupied pillar, `1..=max_points_per_pillar`.
    pub counts: Vec<usize>,
    /// Position in `occupied` for every frame point, `None` when out of range.
    pub point_pillar: Vec<Option<usize>>,
    /// Slot within the pillar for retained points.
    pub point_slot: Vec<Option<usize>>,
}

impl PillarAssignment {
    pub fn num_pillars(&self) -> usize {
        self.occupied.len()
    }

    /// Number of frame points the assignment was built from.
    pub fn members_len(&self) -> usize {
        self.point_pillar.len()
    }

    /// Point indices that occupy a slot, per pillar.
    pub fn retained_members(&self) -> impl Iterator<Item = &[usize]> + '_ {
        self.members.iter().zip(&self.counts).map(|(m, &c)| &m[..c])
    }

    pub fn num_retained(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn cell(&self, pillar: usize) -> (usize, usize) {
        let idx = self.occupied[pillar];
        (idx % self.n_x, idx / self.n_x)
    }

    pub fn check(&self) -> Result<()> {
        if !self.occupied.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Invariant("occupied pillars not strictly increasing".into()));
        }
        for (m, &c) in self.members.iter().zip(&self.counts) {
            if c == 0 || c > self.max_points_per_pillar || c > m.len() {
                return Err(Error::Invariant(format!("pillar count {c} out of range")));
            }
        }
        Ok(())
    }
}

/// Deterministic in-pillar order: x, y, z, radial velocity, then the rest.
fn key_order(frame: &RadarFrame, a: usize, b: usize) -> Ordering {
    frame.points[a].key_cmp(&frame.points[b]).then(a.cmp(&b))
}

pub fn assign_pillars(frame: &RadarFrame, grid: &GridConfig) -> Result<PillarAssignment> {
    grid.validate()?;
    let n = frame.len();
    let mut keyed: Vec<(usize, usize)> = Vec::with_capacity(n);
    for (i, p) in frame.points.iter().enumerate() {
        if let Some((ix, iy)) = grid.cell_of(p.x, p.y, p.z) {
            keyed.push((iy * grid.n_x + ix, i));
        }
    }
    keyed.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| key_order(frame, a.1, b.1)));

    let mut occupied = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (cell, i) in keyed {
        if occupied.last() != Some(&cell) {
            occupied.push(cell);
            members.push(Vec::new());
        }
        members.last_mut().expect("pushed above").push(i);
    }

    let cap = grid.max_points_per_pillar;
    let counts: Vec<usize> = members.iter().map(|m| m.len().min(cap)).collect();
    let mut point_pillar = vec![None; n];
    let mut point_slot = vec![None; n];
    for (pi, m) in members.iter().enumerate() {
        for (slot, &i) in m.iter().enumerate() {
            point_pillar[i] = Some(pi);
            if slot < cap {
                point_slot[i] = Some(slot);
            }
        }
    }
    Ok(PillarAssignment {
        n_x: grid.n_x,
        n_y: grid.n_y,
        max_points_per_pillar: cap,
        occupied,
        members,
        counts,
        point_pillar,
        point_slot,
    })
}

/// Offsets `(x_c, y_c, z_c)` of every frame point from its pillar center (and
/// the vertical middle of the grid). Out-of-range points get zeros.
pub fn compute_center_offsets(frame: &RadarFrame, assignment: &PillarAssignment, grid: &GridConfig) -> Vec<[f64; 3]> {
    let z_mid = grid.z_mid();
    frame
        .points
        .iter()
        .zip(&assignment.point_pillar)
        .map(|(p, pillar)| match pillar {
            Some(pi) => {
                let (ix, iy) = assignment.cell(*pi);
                let (cx, cy) = grid.cell_center(ix, iy);
                [p.x - cx, p.y - cy, p.z - z_mid]
            }
            None => [0.0; 3],
        })
        .collect()
}

/// Per-point encoder input rows `[features..., x_c, y_c, z_c]` in the model
/// scalar type, indexed like the frame.
pub fn point_inputs<T: Scalar>(features: &PointFeatures, offsets: &[[f64; 3]]) -> Result<Matrix<T>> {
    if offsets.len() != features.num_points {
        return Err(Error::shape(format!("{} offsets for {} points", offsets.len(), features.num_points)));
    }
    let d = features.dim();
    Ok(Matrix::from_fn(features.num_points, d + 3, |i, j| {
        if j < d {
            T::from_f64(features.row(i)[j])
        } else {
            T::from_f64(offsets[i][j - d])
        }
    }))
}

/// Rows gathered from occupied (row-major) grid positions.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePillarTensor<T> {
    pub features: Matrix<T>,
    pub indices: Vec<usize>,
    pub height: usize,
    pub width: usize,
}

impl<T: Scalar> SparsePillarTensor<T> {
    pub fn new(features: Matrix<T>, indices: Vec<usize>, height: usize, width: usize) -> Result<Self> {
        let s = Self { features, indices, height, width };
        s.check()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.features.cols
    }

    pub fn check(&self) -> Result<()> {
        if self.features.rows != self.indices.len() {
            return Err(Error::shape(format!("{} rows for {} indices", self.features.rows, self.indices.len())));
        }
        if self.indices.iter().any(|&i| i >= self.height * self.width) {
            return Err(Error::Invariant("pillar index outside the grid".into()));
        }
        if !self.indices.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Invariant("pillar indices must be strictly increasing".into()));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> SparsePillarTensor<U> {
        SparsePillarTensor {
            features: self.features.cast(),
            indices: self.indices.clone(),
            height: self.height,
            width: self.width,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrid<T> {
    pub features: FeatureMap<T>,
    pub mask: Vec<bool>,
}

impl<T: Scalar> DenseGrid<T> {
    pub fn occupied_indices(&self) -> Vec<usize> {
        self.mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect()
    }
}

/// Places rows at their grid positions; every other cell is zero.
pub fn scatter_to_grid<T: Scalar>(sparse: &SparsePillarTensor<T>) -> Result<DenseGrid<T>> {
    let (h, w) = (sparse.height, sparse.width);
    if sparse.features.rows != sparse.indices.len() {
        return Err(Error::shape("scatter: row/index count mismatch"));
    }
    let c = sparse.channels();
    let mut mask = vec![false; h * w];
    let mut features = FeatureMap::zeros(c, h, w);
    for (row, &idx) in sparse.indices.iter().enumerate() {
        if idx >= h * w {
            return Err(Error::Invariant(format!("scatter index {idx} outside {h}x{w} grid")));
        }
        if mask[idx] {
            return Err(Error::Invariant(format!("duplicate scatter index {idx}")));
        }
        mask[idx] = true;
        let src = sparse.features.row(row);
        for (ch, &v) in src.iter().enumerate() {
            features.data[ch * h * w + idx] = v;
        }
    }
    Ok(DenseGrid { features, mask })
}

/// Reads the rows at the mask's occupied cells.
pub fn gather_from_grid<T: Scalar>(grid: &DenseGrid<T>) -> SparsePillarTensor<T> {
    let (c, h, w) = grid.features.shape();
    let indices = grid.occupied_indices();
    let features = Matrix::from_fn(indices.len(), c, |r, ch| grid.features.data[ch * h * w + indices[r]]);
    SparsePillarTensor { features, indices, height: h, width: w }
}

/// Pillar feature network: per-point `linear -> batch norm -> ReLU`, then a
/// channel-wise max over the pillar's retained points.
#[derive(Debug, Clone, PartialEq)]
pub struct PfnWeights<T> {
    /// `C x (D + 3)`, no bias.
    pub linear: Matrix<T>,
    pub bn: BatchNorm<T>,
}

impl<T: Scalar> PfnWeights<T> {
    pub fn out_channels(&self) -> usize {
        self.linear.rows
    }

    pub fn in_channels(&self) -> usize {
        self.linear.cols
    }
}

/// Per-point PFN activations before pooling.
pub fn pfn_point_activations<T: Scalar>(inputs: &Matrix<T>, pfn: &PfnWeights<T>) -> Result<Matrix<T>> {
    if pfn.bn.channels() != pfn.out_channels() {
        return Err(Error::shape("pfn: batch norm width differs from linear output"));
    }
    let mut h = linear(inputs, &pfn.linear, None)?;
    for r in 0..h.rows {
        pfn.bn.apply_row(h.row_mut(r));
    }
    relu_inplace(&mut h.data);
    Ok(h)
}

/// Max over each pillar's retained rows of `activations` (indexed like the
/// frame). ReLU outputs are non-negative, so pooling starts from the first
/// member rather than zero to stay exact for arbitrary inputs.
pub fn max_pool_pillars<T: Scalar>(activations: &Matrix<T>, assignment: &PillarAssignment) -> Matrix<T> {
    let c = activations.cols;
    let mut out = Matrix::zeros(assignment.num_pillars(), c);
    for (pi, members) in assignment.retained_members().enumerate() {
        let dst = out.row_mut(pi);
        dst.copy_from_slice(activations.row(members[0]));
        for &i in &members[1..] {
            for (d, &v) in dst.iter_mut().zip(activations.row(i)) {
                if v > *d {
                    *d = v;
                }
            }
        }
    }
    out
}

/// Encodes the frame's points (rows of `inputs`, frame order) into one feature
/// row per occupied pillar, ordered like `assignment.occupied`.
pub fn encode_pillars<T: Scalar>(
    inputs: &Matrix<T>,
    assignment: &PillarAssignment,
    pfn: &PfnWeights<T>,
) -> Result<SparsePillarTensor<T>> {
    if inputs.cols != pfn.in_channels() {
        return Err(Error::shape(format!("pfn expects {} inputs per point, got {}", pfn.in_channels(), inputs.cols)));
    }
    if inputs.rows != assignment.members_len() {
        return Err(Error::shape(format!("{} input rows for {} points", inputs.rows, assignment.members_len())));
    }
    // Only retained points reach the encoder.
    let retained: Vec<usize> = assignment.retained_members().flatten().copied().collect();
    let mut compact = Matrix::zeros(retained.len(), inputs.cols);
    for (r, &i) in retained.iter().enumerate() {
        compact.row_mut(r).copy_from_slice(inputs.row(i));
    }
    let act = pfn_point_activations(&compact, pfn)?;
    let mut full = Matrix::zeros(inputs.rows, act.cols);
    for (r, &i) in retained.iter().enumerate() {
        full.row_mut(i).copy_from_slice(act.row(r));
    }
    let pooled = max_pool_pillars(&full, assignment);
    SparsePillarTensor::new(pooled, assignment.occupied.clone(), assignment.n_y, assignment.n_x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radar_io::RadarPoint;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn pt(x: f64, y: f64, z: f64, v_r: f64) -> RadarPoint {
        RadarPoint { x, y, z, rcs: 1.0, v_rel: v_r, v_r }
    }

    fn frame(points: Vec<RadarPoint>) -> RadarFrame {
        RadarFrame::new("t", points)
    }

    #[test]
    fn corner_cell_and_out_of_range() {
        let g = GridConfig::default();
        let a = assign_pillars(&frame(vec![pt(0.08, -25.52, 0.5, 0.0), pt(60.0, 0.0, 0.0, 0.0)]), &g).unwrap();
        assert_eq!(a.occupied, vec![0]);
        assert_eq!(a.point_pillar, vec![Some(0), None]);
        assert_eq!(g.cell_of(51.2, 0.0, 0.0), None);
        assert_eq!(g.cell_of(0.0, 25.6, 0.0), None);
        assert_eq!(g.cell_of(0.0, 0.0, 2.0), None);
    }

    #[test]
    fn cap_keeps_lowest_keys() {
        let g = GridConfig::default();
        let pts: Vec<_> = (0..12).rev().map(|k| pt(10.0 + 0.001 * k as f64, 0.01, 0.0, 0.0)).collect();
        let a = assign_pillars(&frame(pts), &g).unwrap();
        assert_eq!(a.counts, vec![10]);
        assert_eq!(a.members[0].len(), 12);
        // Points were listed with decreasing x; the two largest x (indices 0, 1) are dropped.
        assert_eq!(a.point_slot[0], None);
        assert_eq!(a.point_slot[1], None);
        assert_eq!(a.point_slot[11], Some(0));
        a.check().unwrap();
    }

    #[test]
    fn center_offsets() {
        let g = GridConfig::default();
        let f = frame(vec![pt(0.08, -25.52, -0.5, 0.0), pt(0.0, -25.6, 1.0, 0.0)]);
        let a = assign_pillars(&f, &g).unwrap();
        let o = compute_center_offsets(&f, &a, &g);
        for (got, want) in o[0].iter().zip([0.0, 0.0, 0.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((o[1][0] + 0.08).abs() < 1e-12 && (o[1][1] + 0.08).abs() < 1e-12);
        assert!((o[1][2] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn empty_frame() {
        let a = assign_pillars(&frame(vec![]), &GridConfig::default()).unwrap();
        assert_eq!(a.num_pillars(), 0);
        let s = SparsePillarTensor::<f32>::new(Matrix::zeros(0, 4), vec![], 320, 320).unwrap();
        let d = scatter_to_grid(&s).unwrap();
        assert!(d.features.data.iter().all(|&v| v == 0.0));
        assert!(d.mask.iter().all(|&m| !m));
    }

    #[test]
    fn single_pillar_at_origin_cell() {
        let s = SparsePillarTensor::new(Matrix::from_vec(1, 2, vec![1.5f32, -2.0]).unwrap(), vec![0], 3, 4).unwrap();
        let d = scatter_to_grid(&s).unwrap();
        assert_eq!(d.features.get(0, 0, 0), 1.5);
        assert_eq!(d.features.get(1, 0, 0), -2.0);
        assert_eq!(gather_from_grid(&d), s);
    }

    #[test]
    fn duplicate_scatter_index_rejected() {
        let s = SparsePillarTensor {
            features: Matrix::<f32>::zeros(2, 1),
            indices: vec![3, 3],
            height: 2,
            width: 2,
        };
        assert!(matches!(scatter_to_grid(&s), Err(Error::Invariant(_))));
    }

    fn identity_pfn(d: usize) -> PfnWeights<f64> {
        PfnWeights { linear: Matrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { 0.0 }), bn: BatchNorm::identity(d) }
    }

    #[test]
    fn pfn_single_point_and_dominating_max() {
        let g = GridConfig::default();
        let f = frame(vec![pt(10.0, 0.05, 0.0, 0.0), pt(10.01, 0.06, 0.0, 0.0), pt(30.0, 3.0, 0.0, 0.0)]);
        let a = assign_pillars(&f, &g).unwrap();
        assert_eq!(a.num_pillars(), 2);
        let inputs = Matrix::from_vec(3, 2, vec![1.0, -4.0, 2.0, 5.0, -1.0, 3.0]).unwrap();
        let s = encode_pillars(&inputs, &a, &identity_pfn(2)).unwrap();
        let k = (1.0f64 + 1e-3).sqrt().recip();
        // Pillar 0 holds points 0 and 1, channel-wise max then ReLU.
        assert_eq!(s.features.row(0), &[2.0 * k, 5.0 * k]);
        assert_eq!(s.features.row(1), &[0.0, 3.0 * k]);
    }

    fn random_frame(rng: &mut SplitMix64, n: usize) -> RadarFrame {
        let pts = (0..n)
            .map(|_| {
                // Coarse values so that many points share pillars and keys tie on x.
                let x = (rng.below(40) as f64) * 0.05;
                let y = (rng.below(40) as f64) * 0.05 - 1.0;
                RadarPoint {
                    x,
                    y,
                    z: rng.uniform(-1.0, 1.0),
                    rcs: rng.uniform(-5.0, 5.0),
                    v_rel: rng.uniform(-3.0, 3.0),
                    v_r: rng.uniform(-3.0, 3.0),
                }
            })
            .collect();
        RadarFrame::new("r", pts)
    }

    proptest! {
        #[test]
        fn permutation_invariant_pipeline(seed in any::<u64>(), n in 0usize..120) {
            let mut rng = SplitMix64::new(seed);
            let g = GridConfig { max_points_per_pillar: 3, ..GridConfig::default() };
            let f = random_frame(&mut rng, n);
            let mut perm: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut perm);
            let f2 = RadarFrame::new("r", perm.iter().map(|&i| f.points[i].clone()).collect());
            let pfn = PfnWeights {
                linear: Matrix::from_fn(5, 4, |i, j| ((i * 7 + j * 3) % 5) as f32 - 2.0),
                bn: BatchNorm::identity(5),
            };
            let run = |f: &RadarFrame| {
                let a = assign_pillars(f, &g).unwrap();
                let inputs = Matrix::from_fn(f.len(), 4, |i, j| {
                    let p = &f.points[i];
                    [p.x, p.y, p.z, p.v_r][j] as f32
                });
                let s = encode_pillars(&inputs, &a, &pfn).unwrap();
                prop_assert!(a.num_pillars() <= f.len());
                a.check().unwrap();
                Ok(scatter_to_grid(&s).unwrap())
            };
            let d1 = run(&f)?;
            let d2 = run(&f2)?;
            prop_assert_eq!(d1.mask, d2.mask);
            prop_assert!(d1.features.data.iter().zip(&d2.features.data).all(|(a, b)| a.to_bits() == b.to_bits()));
        }

        #[test]
        fn scatter_gather_roundtrip(seed in any::<u64>(), h in 1usize..9, w in 1usize..9, c in 1usize..4) {
            let mut rng = SplitMix64::new(seed);
            let mut idx: Vec<usize> = (0..h * w).filter(|_| rng.below(3) == 0).collect();
            idx.sort_unstable();
            let feats = Matrix::from_fn(idx.len(), c, |_, _| rng.uniform(-1.0, 1.0));
            let s = SparsePillarTensor::new(feats, idx, h, w).unwrap();
            let d = scatter_to_grid(&s).unwrap();
            for (cell, &m) in d.mask.iter().enumerate() {
                if !m {
                    for ch in 0..c {
                        prop_assert_eq!(d.features.data[ch * h * w + cell], 0.0);
                    }
                }
            }
            let back = gather_from_grid(&d);
            prop_assert_eq!(&back, &s);
            prop_assert_eq!(scatter_to_grid(&back).unwrap(), d);
        }

        #[test]
        fn offsets_bounded(seed in any::<u64>()) {
            let mut rng = SplitMix64::new(seed);
            let g = GridConfig::default();
            let f = RadarFrame::new("o", (0..50).map(|_| pt(rng.uniform(0.0, 51.2), rng.uniform(-25.6, 25.6), rng.uniform(-3.0, 2.0), 0.0)).collect());
            let a = assign_pillars(&f, &g).unwrap();
            for o in compute_center_offsets(&f, &a, &g) {
                prop_assert!(o[0].abs() <= g.cell_x() / 2.0 + 1e-9);
                prop_assert!(o[1].abs() <= g.cell_y() / 2.0 + 1e-9);
            }
        }
    }
}
