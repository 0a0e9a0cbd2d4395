use std::rc::Rc;

use crate::diff::{Csr, Tensor};
use crate::error::{CodanoError, Result};
use crate::field::{dist, Mesh};

/// Uniform binning of mesh points into cubic cells.
pub struct SpatialBins<'a> {
    mesh: &'a Mesh,
    cell: f64,
    dims: Vec<usize>,
    /// Point indices grouped by cell; `starts[c]..starts[c+1]` spans cell `c`.
    starts: Vec<usize>,
    order: Vec<usize>,
}

impl<'a> SpatialBins<'a> {
    pub fn new(mesh: &'a Mesh, cell: f64) -> Self {
        let dom = mesh.domain();
        let cell = if cell > 0.0 { cell } else { 1.0 };
        let dims: Vec<usize> = dom
            .extent
            .iter()
            .map(|&e| ((e / cell).ceil() as usize).clamp(1, 1 << 20))
            .collect();
        let total: usize = dims.iter().product();
        let mut counts = vec![0usize; total + 1];
        let mut bins = vec![0usize; mesh.len()];
        for (i, b) in bins.iter_mut().enumerate() {
            *b = Self::cell_of(&dims, &dom.lo, cell, mesh.point(i));
            counts[*b + 1] += 1;
        }
        for c in 0..total {
            counts[c + 1] += counts[c];
        }
        let starts = counts.clone();
        let mut fill = counts;
        let mut order = vec![0; mesh.len()];
        for (i, &b) in bins.iter().enumerate() {
            order[fill[b]] = i;
            fill[b] += 1;
        }
        Self {
            mesh,
            cell,
            dims,
            starts,
            order,
        }
    }

    fn axis_cell(dims: &[usize], lo: &[f64], cell: f64, a: usize, x: f64) -> i64 {
        (((x - lo[a]) / cell).floor() as i64).clamp(0, dims[a] as i64 - 1)
    }

    fn cell_of(dims: &[usize], lo: &[f64], cell: f64, p: &[f64]) -> usize {
        let mut c = 0usize;
        for a in 0..dims.len() {
            c = c * dims[a] + Self::axis_cell(dims, lo, cell, a, p[a]) as usize;
        }
        c
    }

    /// Indices of mesh points within distance `r` of `p` (inclusive), in no particular order.
    pub fn within(&self, p: &'a [f64], r: f64) -> impl Iterator<Item = usize> + '_ {
        let lo = &self.mesh.domain().lo;
        let reach = (r / self.cell).ceil() as i64;
        let d = self.dims.len();
        let mut ranges = Vec::with_capacity(d);
        for a in 0..d {
            let c = Self::axis_cell(&self.dims, lo, self.cell, a, p[a]);
            let hi = self.dims[a] as i64 - 1;
            ranges.push(((c - reach).max(0), (c + reach).min(hi)));
        }
        let mut cells = Vec::new();
        let mut cur: Vec<i64> = ranges.iter().map(|r| r.0).collect();
        'outer: loop {
            let mut flat = 0usize;
            for a in 0..d {
                flat = flat * self.dims[a] + cur[a] as usize;
            }
            cells.push(flat);
            for a in (0..d).rev() {
                if cur[a] < ranges[a].1 {
                    cur[a] += 1;
                    continue 'outer;
                }
                cur[a] = ranges[a].0;
            }
            break;
        }
        cells.into_iter().flat_map(move |c| {
            self.order[self.starts[c]..self.starts[c + 1]]
                .iter()
                .copied()
                .filter(move |&j| dist(self.mesh.point(j), p) <= r)
        })
    }
}

/// Radius neighbourhoods of query points among source points.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    pub radius: f64,
    /// Rows are query points, columns source points sorted ascending,
    /// values the source quadrature weights.
    pub csr: Rc<Csr>,
    /// Query points with no source point in range.
    pub empty: Vec<usize>,
    pub query_len: usize,
    pub source_len: usize,
}

impl NeighborIndex {
    pub fn neighbors(&self, q: usize) -> &[usize] {
        &self.csr.cols[self.csr.row(q)]
    }

    pub fn pair_count(&self) -> usize {
        self.csr.nnz()
    }

    /// Kernel inputs `(x, y)` for every listed pair, `[pairs, 2·dim]`.
    pub fn pair_features(&self, query: &Mesh, source: &Mesh) -> Result<Tensor> {
        if query.len() != self.query_len || source.len() != self.source_len {
            return Err(CodanoError::shape("neighbour index built for other meshes"));
        }
        let d = query.dim();
        let mut out = Vec::with_capacity(self.pair_count() * 2 * d);
        for q in 0..self.query_len {
            for e in self.csr.row(q) {
                out.extend_from_slice(query.point(q));
                out.extend_from_slice(source.point(self.csr.cols[e]));
            }
        }
        Tensor::new(vec![self.pair_count(), 2 * d], out)
    }
}

/// Exact radius search `‖x − y‖ ≤ r` via uniform binning with cells of side `r`.
pub fn build_neighbors(query: &Mesh, source: &Mesh, r: f64) -> Result<NeighborIndex> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(CodanoError::Config(format!(
            "neighbour radius must be positive, got {r}"
        )));
    }
    if query.dim() != source.dim() {
        return Err(CodanoError::shape("query and source meshes differ in dimension"));
    }
    let bins = SpatialBins::new(source, r);
    let mut offsets = Vec::with_capacity(query.len() + 1);
    offsets.push(0);
    let mut cols = Vec::new();
    let mut empty = Vec::new();
    let mut row = Vec::new();
    for q in 0..query.len() {
        row.clear();
        row.extend(bins.within(query.point(q), r));
        row.sort_unstable();
        if row.is_empty() {
            empty.push(q);
        }
        cols.extend_from_slice(&row);
        offsets.push(cols.len());
    }
    let weights = cols.iter().map(|&j| source.weights()[j]).collect();
    Ok(NeighborIndex {
        radius: r,
        csr: Rc::new(Csr { offsets, cols, weights }),
        empty,
        query_len: query.len(),
        source_len: source.len(),
    })
}
