//! Geometry of `W_k^l`: volumes, cube grids in free coordinates, neighbors
//! and the scaling map about the simplex center.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use thiserror::Error;

use crate::strategies::ParamPoint;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("parameter space needs k >= 2 and at least one block, got k={k}, blocks={blocks}")]
    InvalidSpace { k: usize, blocks: usize },
    #[error("grid spacing must lie in (0, 1], got {0}")]
    InvalidSpacing(f64),
    #[error("grid would hold {points} points, more than the cap of {cap}")]
    GridTooLarge { points: u128, cap: usize },
}

pub type Result<T> = std::result::Result<T, GeomError>;

/// Cells whose share of a full cube falls below this are treated as empty.
const MIN_CELL_FRACTION: f64 = 1e-12;

/// Default limit on the number of grid points.
pub const DEFAULT_GRID_CAP: usize = 50_000_000;

/// `W_k^l`: `l` copies of the `(k-1)`-simplex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamSpace {
    pub k: usize,
    pub blocks: usize,
}

impl ParamSpace {
    pub fn new(k: usize, blocks: usize) -> Result<Self> {
        if k < 2 || blocks == 0 {
            return Err(GeomError::InvalidSpace { k, blocks });
        }
        Ok(Self { k, blocks })
    }

    pub fn diameter(&self) -> f64 {
        (2.0 * self.blocks as f64).sqrt()
    }

    /// Dimension of the free-coordinate frame.
    pub fn free_dim(&self) -> usize {
        (self.k - 1) * self.blocks
    }

    /// Two proposal slots per free axis.
    pub fn neighbor_slots(&self) -> usize {
        2 * self.free_dim()
    }

    pub fn center(&self) -> ParamPoint {
        ParamPoint::uniform(self.k, self.blocks)
    }
}

/// `sqrt(k) / (k-1)!`.
pub fn simplex_volume(k: usize) -> f64 {
    assert!(k >= 2, "simplex arity must be at least 2");
    (k as f64).sqrt() / factorial(k - 1)
}

/// Volume of a `(k-1)`-ball of radius `rho`.
pub fn ball_volume(k: usize, rho: f64) -> f64 {
    assert!(k >= 2, "simplex arity must be at least 2");
    let n = (k - 1) as f64;
    std::f64::consts::PI.powf(n / 2.0) * rho.powf(n) / gamma_half_integer(n / 2.0 + 1.0)
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// Gamma function on positive integers and half-integers.
fn gamma_half_integer(x: f64) -> f64 {
    let mut acc = 1.0;
    let mut y = x;
    while y > 1.0 + 1e-9 {
        y -= 1.0;
        acc *= y;
    }
    if (y - 0.5).abs() < 1e-9 {
        acc * std::f64::consts::PI.sqrt()
    } else {
        acc
    }
}

/// Rejection estimate of the simplex volume: uniform draws in the unit cube of
/// free coordinates, scaled by the `sqrt(k)` embedding factor.
pub fn monte_carlo_simplex_volume(k: usize, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..samples {
        let s: f64 = (0..k - 1).map(|_| rng.random::<f64>()).sum();
        if s <= 1.0 {
            hits += 1;
        }
    }
    (k as f64).sqrt() * hits as f64 / samples as f64
}

/// Uniform draw from `W_k^l` (Dirichlet(1) per block).
pub fn sample_uniform_point<R: Rng + ?Sized>(space: ParamSpace, rng: &mut R) -> ParamPoint {
    let mut coords = Vec::with_capacity(space.k * space.blocks);
    for _ in 0..space.blocks {
        let draws: Vec<f64> = (0..space.k).map(|_| Exp1.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        coords.extend(draws.iter().map(|d| d / total));
    }
    ParamPoint::unchecked(space.k, coords).expect("shape follows from space")
}

/// `(1 + chi)(w - center) + center`; the flag reports whether the result is in `W`.
pub fn scale_point(p: &ParamPoint, chi: f64) -> (ParamPoint, bool) {
    let c = 1.0 / p.k() as f64;
    let coords: Vec<f64> = p
        .coords()
        .iter()
        .map(|w| (1.0 + chi) * (w - c) + c)
        .collect();
    let q = ParamPoint::unchecked(p.k(), coords).expect("same shape as input");
    let inside = q.in_domain();
    (q, inside)
}

/// Volume of `{x in box [lo, hi] : sum(x) <= 1}`, with `lo >= 0`.
fn clipped_box_volume(lo: &[f64], hi: &[f64]) -> f64 {
    let d = lo.len();
    if hi.iter().sum::<f64>() <= 1.0 {
        return lo.iter().zip(hi).map(|(a, b)| b - a).product();
    }
    let slack = 1.0 - lo.iter().sum::<f64>();
    if slack <= 0.0 {
        return 0.0;
    }
    let len: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| b - a).collect();
    let mut total = 0.0;
    for mask in 0u64..(1u64 << d) {
        let cut: f64 = (0..d).filter(|j| mask >> j & 1 == 1).map(|j| len[j]).sum();
        let r = slack - cut;
        if r > 0.0 {
            let term = r.powi(d as i32);
            if mask.count_ones() % 2 == 0 {
                total += term;
            } else {
                total -= term;
            }
        }
    }
    (total / factorial(d)).max(0.0)
}

/// Cells of one simplex block.
#[derive(Debug, Clone)]
struct BlockGrid {
    /// Full `k`-vectors of the cell centers.
    points: Vec<Vec<f64>>,
    log_weights: Vec<f64>,
    /// `neighbors[c][2 j + dir]`, `dir = 0` for the lower neighbor.
    neighbors: Vec<Vec<Option<usize>>>,
}

impl BlockGrid {
    fn build(k: usize, delta: f64) -> Self {
        let d = k - 1;
        let full = delta.powi(d as i32);
        let max_index = (1.0 / delta).ceil() as i64 + 1;
        let mut cells: Vec<(Vec<i64>, f64)> = Vec::new();
        let mut idx = vec![0i64; d];
        enumerate(&mut idx, 0, 0.0, delta, max_index, &mut |index| {
            let lo: Vec<f64> = index
                .iter()
                .map(|&i| ((i as f64 - 0.5) * delta).max(0.0))
                .collect();
            let hi: Vec<f64> = index.iter().map(|&i| (i as f64 + 0.5) * delta).collect();
            let vol = clipped_box_volume(&lo, &hi);
            if vol > MIN_CELL_FRACTION * full {
                cells.push((index.to_vec(), vol));
            }
        });
        let lookup: std::collections::HashMap<Vec<i64>, usize> = cells
            .iter()
            .enumerate()
            .map(|(c, (index, _))| (index.clone(), c))
            .collect();
        let mut points = Vec::with_capacity(cells.len());
        let mut log_weights = Vec::with_capacity(cells.len());
        let mut neighbors = Vec::with_capacity(cells.len());
        for (index, vol) in &cells {
            let mut free: Vec<f64> = index.iter().map(|&i| i as f64 * delta).collect();
            let s: f64 = free.iter().sum();
            if s > 1.0 {
                free.iter_mut().for_each(|x| *x /= s);
            }
            let last = (1.0 - free.iter().sum::<f64>()).max(0.0);
            free.push(last);
            points.push(free);
            log_weights.push(vol.ln());
            let mut slots = Vec::with_capacity(2 * d);
            for j in 0..d {
                for step in [-1i64, 1] {
                    let mut other = index.clone();
                    other[j] += step;
                    slots.push(lookup.get(&other).copied());
                }
            }
            neighbors.push(slots);
        }
        Self {
            points,
            log_weights,
            neighbors,
        }
    }

    fn single(point: &[f64]) -> Self {
        Self {
            points: vec![point.to_vec()],
            log_weights: vec![0.0],
            neighbors: vec![vec![None; 2 * (point.len() - 1)]],
        }
    }
}

/// Lexicographic walk over index vectors whose cell's lower corner lies below the
/// hyperplane `sum = 1`.
fn enumerate(
    idx: &mut Vec<i64>,
    pos: usize,
    lower_sum: f64,
    delta: f64,
    max_index: i64,
    visit: &mut dyn FnMut(&[i64]),
) {
    if pos == idx.len() {
        visit(idx);
        return;
    }
    for i in 0..=max_index {
        let lower = ((i as f64 - 0.5) * delta).max(0.0);
        if lower_sum + lower >= 1.0 {
            break;
        }
        idx[pos] = i;
        enumerate(idx, pos + 1, lower_sum + lower, delta, max_index, visit);
    }
}

/// Centers of the spacing-`delta` cubes meeting `W_k^l`, weighted by the volume
/// of their intersection with the domain.
///
/// Global indices are mixed-radix over blocks with block 0 most significant.
#[derive(Debug, Clone)]
pub struct GridSpec {
    space: ParamSpace,
    delta: f64,
    block: BlockGrid,
    /// Set when the grid is a single arbitrary point.
    single: Option<Vec<BlockGrid>>,
    len: usize,
}

impl GridSpec {
    pub fn space(&self) -> ParamSpace {
        self.space
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Number of centers per simplex block.
    pub fn block_len(&self) -> usize {
        self.block.points.len()
    }

    /// A one-point grid at `p`.
    pub fn single_point(p: &ParamPoint) -> Self {
        let space = p.space();
        let blocks = (0..space.blocks)
            .map(|b| BlockGrid::single(p.block(b)))
            .collect();
        Self {
            space,
            delta: 1.0,
            block: BlockGrid::single(p.block(0)),
            single: Some(blocks),
            len: 1,
        }
    }

    fn block_grid(&self, b: usize) -> &BlockGrid {
        match &self.single {
            Some(blocks) => &blocks[b],
            None => &self.block,
        }
    }

    fn block_radix(&self) -> usize {
        if self.single.is_some() {
            1
        } else {
            self.block.points.len()
        }
    }

    /// Per-block cell indices of global index `g`.
    pub fn block_indices(&self, g: usize) -> Vec<usize> {
        let radix = self.block_radix();
        let mut out = vec![0; self.space.blocks];
        let mut rest = g;
        for b in (0..self.space.blocks).rev() {
            out[b] = rest % radix;
            rest /= radix;
        }
        out
    }

    fn compose(&self, indices: &[usize]) -> usize {
        let radix = self.block_radix();
        indices.iter().fold(0, |acc, i| acc * radix + i)
    }

    pub fn point(&self, g: usize) -> ParamPoint {
        let coords: Vec<f64> = self
            .block_indices(g)
            .iter()
            .enumerate()
            .flat_map(|(b, &c)| self.block_grid(b).points[c].iter().copied())
            .collect();
        ParamPoint::unchecked(self.space.k, coords).expect("grid points have block shape")
    }

    pub fn points(&self) -> Vec<ParamPoint> {
        (0..self.len).map(|g| self.point(g)).collect()
    }

    /// Log of the domain volume covered by the cell of `g`.
    pub fn log_cell_weight(&self, g: usize) -> f64 {
        self.block_indices(g)
            .iter()
            .enumerate()
            .map(|(b, &c)| self.block_grid(b).log_weights[c])
            .sum()
    }

    pub fn log_cell_weights(&self) -> Vec<f64> {
        (0..self.len).map(|g| self.log_cell_weight(g)).collect()
    }

    /// Neighbor in proposal slot `(b (k-1) + j) * 2 + dir`; `None` when the
    /// adjacent cube misses the domain.
    pub fn neighbor(&self, g: usize, slot: usize) -> Option<usize> {
        let d = self.space.k - 1;
        let axis = slot / 2;
        let (b, j, dir) = (axis / d, axis % d, slot % 2);
        let mut indices = self.block_indices(g);
        let next = self.block_grid(b).neighbors[indices[b]][2 * j + dir]?;
        indices[b] = next;
        Some(self.compose(&indices))
    }

    pub fn neighbors(&self, g: usize) -> Vec<Option<usize>> {
        (0..self.space.neighbor_slots())
            .map(|s| self.neighbor(g, s))
            .collect()
    }
}

/// Builds the cube grid of spacing `delta` over `space`.
pub fn build_grid(space: ParamSpace, delta: f64) -> Result<GridSpec> {
    build_grid_capped(space, delta, DEFAULT_GRID_CAP)
}

pub fn build_grid_capped(space: ParamSpace, delta: f64, cap: usize) -> Result<GridSpec> {
    let space = ParamSpace::new(space.k, space.blocks)?;
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(GeomError::InvalidSpacing(delta));
    }
    // Cheap upper bound before enumerating a block.
    let per_axis = (1.0 / delta).ceil() + 2.0;
    let d = (space.k - 1) as f64;
    let rough = per_axis.powf(d) / factorial(space.k - 1);
    if rough.powi(space.blocks as i32) > 4.0 * cap as f64 {
        return Err(GeomError::GridTooLarge {
            points: rough.powi(space.blocks as i32).min(u128::MAX as f64) as u128,
            cap,
        });
    }
    let block = BlockGrid::build(space.k, delta);
    let total = (block.points.len() as u128).pow(space.blocks as u32);
    if total > cap as u128 {
        return Err(GeomError::GridTooLarge { points: total, cap });
    }
    Ok(GridSpec {
        space,
        delta,
        len: total as usize,
        block,
        single: None,
    })
}
