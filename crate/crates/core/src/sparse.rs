//! Assembled-matrix counterpart of the stencil kernels plus the analytic
//! memory model that compares the two.
//!
//! Unknowns are numbered globally as [vertex | edge x | edge y | edge xy],
//! each block in row-major triangle order. The assembled matrix mirrors the
//! kernels exactly: an unknown written by a kernel gets that kernel's weights
//! as a row (vertex rows inside both vertex kernels' domains have 19 entries,
//! edge rows inside both edge kernels' domains 9 per orientation, rim rows
//! only the wider kernel's part), every unknown no kernel writes gets an
//! identity row.

use std::io::Write;

use crate::fields::{P2Function, P2Operator};
use crate::grid::{self, ArrayId};
use crate::kernels::KernelKind;
use crate::{Error, Result};

/// Offset of an array's block in the global numbering.
pub fn block_offset(array: ArrayId, level: u32) -> u64 {
    let v = grid::vertex_count(level);
    let e = grid::edge_count(level);
    match array {
        ArrayId::Vertex => 0,
        ArrayId::Edge(o) => v + e * o as u64,
    }
}

pub fn flat_len(level: u32) -> usize {
    grid::dof_counts(level).map(|c| c.total as usize).unwrap_or(0)
}

/// Concatenates the four component arrays into one vector.
pub fn p2_to_flat(f: &P2Function) -> Vec<f64> {
    let mut out = Vec::with_capacity(f.total_len() as usize);
    for array in ArrayId::ALL {
        out.extend_from_slice(f.component(array));
    }
    out
}

pub fn flat_to_p2(values: &[f64], level: u32) -> Result<P2Function> {
    let expected = flat_len(level);
    if values.len() != expected {
        return Err(Error::DimensionMismatch {
            expected: expected as u64,
            actual: values.len() as u64,
        });
    }
    let mut f = P2Function::new(level, crate::fields::Fill::Zeros)?;
    let mut pos = 0;
    for array in ArrayId::ALL {
        let dst = f.component_mut(array);
        dst.copy_from_slice(&values[pos..pos + dst.len()]);
        pos += dst.len();
    }
    Ok(f)
}

/// True per unknown when some kernel writes it; identity rows are the rest.
pub fn written_mask(level: u32) -> Result<Vec<bool>> {
    let mut mask = vec![false; flat_len(level)];
    for kernel in KernelKind::ALL {
        let spec = kernel.spec();
        let dom = grid::interior_domain(&spec, level)?;
        for target in &spec.targets {
            let base = block_offset(target.target, level);
            for row in &dom.rows {
                let start = base + grid::row_start(target.target, row.y, level);
                for x in row.x_begin..row.x_end {
                    mask[(start + x as u64) as usize] = true;
                }
            }
        }
    }
    Ok(mask)
}

/// Zeroes every entry no kernel writes. With sources cleaned this way, matrix
/// application and kernel application agree on identity rows too (both yield
/// zero there when the output starts zeroed).
pub fn zero_identity_slots(f: &mut P2Function) -> Result<()> {
    let mask = written_mask(f.level())?;
    let mut pos = 0;
    for array in ArrayId::ALL {
        let vals = f.component_mut(array);
        for v in vals.iter_mut() {
            if !mask[pos] {
                *v = 0.0;
            }
            pos += 1;
        }
    }
    Ok(())
}

/// Compressed-row matrix with sorted column indices per row.
#[derive(Debug, Clone)]
pub struct CrsMatrix {
    pub dim: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CrsMatrix {
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Builds from triplets; entries may arrive in any order but duplicates
    /// are rejected.
    pub fn from_coo(dim: usize, mut entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
        for pair in entries.windows(2) {
            if pair[0].0 == pair[1].0 && pair[0].1 == pair[1].1 {
                return Err(Error::DuplicateEntry {
                    row: pair[0].0 as u64,
                    col: pair[0].1 as u64,
                });
            }
        }
        let mut row_ptr = vec![0usize; dim + 1];
        for &(r, c, _) in &entries {
            if r >= dim || c >= dim {
                return Err(Error::DimensionMismatch {
                    expected: dim as u64,
                    actual: (r.max(c) + 1) as u64,
                });
            }
            row_ptr[r + 1] += 1;
        }
        for i in 0..dim {
            row_ptr[i + 1] += row_ptr[i];
        }
        let col_idx = entries.iter().map(|e| e.1).collect();
        let values = entries.iter().map(|e| e.2).collect();
        Ok(CrsMatrix {
            dim,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn row_nnz(&self, row: usize) -> usize {
        self.row_ptr[row + 1] - self.row_ptr[row]
    }

    pub fn spmv(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        if x.len() != self.dim || y.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim as u64,
                actual: x.len().min(y.len()) as u64,
            });
        }
        for r in 0..self.dim {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[r] = acc;
        }
        Ok(())
    }

    /// Coordinate-format export, 1-based, general real.
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.dim, self.dim, self.nnz())?;
        for r in 0..self.dim {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                writeln!(w, "{} {} {}", r + 1, self.col_idx[k] + 1, self.values[k])?;
            }
        }
        Ok(())
    }
}

/// Assembles the operator as an explicit matrix over the global numbering.
pub fn assemble(op: &P2Operator, level: u32) -> Result<CrsMatrix> {
    let dim = flat_len(level);
    if dim == 0 {
        grid::check_level(level)?;
    }
    let mut entries: Vec<(usize, usize, f64)> = Vec::new();
    let mut written = vec![false; dim];
    for kernel in KernelKind::ALL {
        let spec = kernel.spec();
        let weights = op.weights(kernel);
        let dom = grid::interior_domain(&spec, level)?;
        for target in &spec.targets {
            let target_base = block_offset(target.target, level);
            for row in &dom.rows {
                let out_start =
                    target_base + grid::row_start(target.target, row.y, level);
                let col_starts: Vec<i64> = target
                    .accesses
                    .iter()
                    .map(|a| {
                        (block_offset(a.source, level)
                            + grid::row_start(
                                a.source,
                                (row.y as i32 + a.dy as i32) as u32,
                                level,
                            )) as i64
                            + a.dx as i64
                    })
                    .collect();
                for x in row.x_begin as i64..row.x_end as i64 {
                    let r = (out_start as i64 + x) as usize;
                    written[r] = true;
                    for (i, a) in target.accesses.iter().enumerate() {
                        entries.push((r, (col_starts[i] + x) as usize, weights[a.weight]));
                    }
                }
            }
        }
    }
    for (i, w) in written.iter().enumerate() {
        if !w {
            entries.push((i, i, 1.0));
        }
    }
    CrsMatrix::from_coo(dim, entries)
}

/// Largest relative difference, scaled by the larger magnitude of the two
/// vectors. Zero when both are all-zero.
pub fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let scale = inf(a).max(inf(b));
    if scale == 0.0 {
        return 0.0;
    }
    let diff = a
        .iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    diff / scale
}

/// Width of the integer type used for matrix indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexWidth {
    U32,
    U64,
}

impl IndexWidth {
    pub fn bytes(self) -> u64 {
        match self {
            IndexWidth::U32 => 4,
            IndexWidth::U64 => 8,
        }
    }

    /// Largest signed value of the width, the practical ceiling imposed by
    /// solver packages that take signed index buffers.
    pub fn signed_max(self) -> u128 {
        match self {
            IndexWidth::U32 => i32::MAX as u128,
            IndexWidth::U64 => i64::MAX as u128,
        }
    }
}

/// Nonzeros of the asymptotic storage model: every vertex row holds the full
/// 19-entry coupling, every edge row 9 entries (27 per vertex-edge-edge
/// triple). Rim and identity rows are deliberately not discounted.
pub fn model_nnz(level: u32) -> u64 {
    19 * grid::vertex_count(level) + 27 * grid::edge_count(level)
}

/// Byte counts of one operator application at a given level, for the
/// assembled and the matrix-free form.
#[derive(Debug, Clone, Copy)]
pub struct MemoryFootprint {
    pub level: u32,
    pub index_bytes: u64,
    /// one full coefficient vector
    pub dof_bytes: u64,
    pub crs_values_bytes: u64,
    pub crs_col_bytes: u64,
    pub crs_row_bytes: u64,
    /// matrix data plus the source and result vector
    pub crs_total_bytes: u64,
    /// source and result vector only
    pub matrix_free_bytes: u64,
    /// streamed traffic of the kernel sweep: source and result, result
    /// counted twice for the write-allocate
    pub stream_bytes: u64,
}

impl MemoryFootprint {
    pub fn ratio_vs_matrix_free(&self) -> f64 {
        self.crs_total_bytes as f64 / self.matrix_free_bytes as f64
    }

    pub fn ratio_vs_stream(&self) -> f64 {
        self.crs_total_bytes as f64 / self.stream_bytes as f64
    }
}

pub fn footprint(level: u32, width: IndexWidth) -> Result<MemoryFootprint> {
    let counts = grid::dof_counts(level)?;
    let nnz = model_nnz(level);
    let ib = width.bytes();
    let dof_bytes = 8 * counts.total;
    let crs_values_bytes = 8 * nnz;
    let crs_col_bytes = ib * nnz;
    let crs_row_bytes = ib * counts.total;
    let matrix_free_bytes = 2 * dof_bytes;
    Ok(MemoryFootprint {
        level,
        index_bytes: ib,
        dof_bytes,
        crs_values_bytes,
        crs_col_bytes,
        crs_row_bytes,
        crs_total_bytes: crs_values_bytes + crs_col_bytes + crs_row_bytes + matrix_free_bytes,
        matrix_free_bytes,
        stream_bytes: 4 * dof_bytes,
    })
}

pub fn bytes_to_mb(bytes: u64) -> f64 {
    bytes as f64 / 1e6
}

/// First level at which the nonzero count of `triangles` assembled macro
/// triangles no longer fits the signed range of the index width. `None` when
/// every supported level fits.
pub fn index_overflow_level(width: IndexWidth, triangles: u64) -> Option<u32> {
    (0..=grid::MAX_LEVEL)
        .find(|&l| model_nnz(l) as u128 * triangles as u128 > width.signed_max())
}
