//! Index arithmetic for row-major triangular arrays.
//!
//! One macro triangle refined `level` times has `n = 2^level` edges per side.
//! Vertices live on rows `y = 0..=n`, row `y` holding `n + 1 - y` entries.
//! Edge midpoints come in three orientations (X: horizontal, Y: vertical,
//! XY: diagonal); each orientation forms its own triangular array with rows
//! `y = 0..n` of `n - y` entries. All four arrays are stored flat, row by row,
//! from the bottom row upwards.

use crate::kernels::StencilAccessSpec;
use crate::{Error, Result};

/// Largest refinement level the index arithmetic is validated for.
/// At level 20 linear indices stay far below 2^63.
pub const MAX_LEVEL: u32 = 20;

/// Edges per macro triangle side, `n = 2^level`.
#[inline]
pub fn edges_per_side(level: u32) -> u64 {
    debug_assert!(level <= MAX_LEVEL);
    1u64 << level
}

pub fn check_level(level: u32) -> Result<()> {
    if level > MAX_LEVEL {
        return Err(Error::LevelTooLarge(level));
    }
    Ok(())
}

/// The three edge orientations of the structured refinement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Orientation {
    X,
    Y,
    Xy,
}

impl Orientation {
    pub const ALL: [Orientation; 3] = [Orientation::X, Orientation::Y, Orientation::Xy];

    pub fn name(self) -> &'static str {
        match self {
            Orientation::X => "edge_x",
            Orientation::Y => "edge_y",
            Orientation::Xy => "edge_xy",
        }
    }
}

/// Identifies one of the four flat arrays of a P2 function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ArrayId {
    Vertex,
    Edge(Orientation),
}

impl ArrayId {
    pub const ALL: [ArrayId; 4] = [
        ArrayId::Vertex,
        ArrayId::Edge(Orientation::X),
        ArrayId::Edge(Orientation::Y),
        ArrayId::Edge(Orientation::Xy),
    ];

    pub fn is_vertex(self) -> bool {
        matches!(self, ArrayId::Vertex)
    }

    pub fn name(self) -> &'static str {
        match self {
            ArrayId::Vertex => "vertex",
            ArrayId::Edge(o) => o.name(),
        }
    }
}

/// Entry counts of the four arrays at one level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DofCounts {
    pub vertices: u64,
    pub edges_per_orientation: u64,
    pub total: u64,
}

/// Closed-form array sizes. O(1); no enumeration.
pub fn dof_counts(level: u32) -> Result<DofCounts> {
    check_level(level)?;
    let n = edges_per_side(level);
    let vertices = (n + 1) * (n + 2) / 2;
    let edges = n * (n + 1) / 2;
    Ok(DofCounts {
        vertices,
        edges_per_orientation: edges,
        total: vertices + 3 * edges,
    })
}

#[inline]
pub fn vertex_count(level: u32) -> u64 {
    let n = edges_per_side(level);
    (n + 1) * (n + 2) / 2
}

#[inline]
pub fn edge_count(level: u32) -> u64 {
    let n = edges_per_side(level);
    n * (n + 1) / 2
}

#[inline]
pub fn array_len(array: ArrayId, level: u32) -> u64 {
    match array {
        ArrayId::Vertex => vertex_count(level),
        ArrayId::Edge(_) => edge_count(level),
    }
}

/// Entries in vertex row `y`.
#[inline]
pub fn vertex_row_len(y: u32, level: u32) -> u64 {
    edges_per_side(level) + 1 - y as u64
}

/// Entries in edge row `y` (any orientation).
#[inline]
pub fn edge_row_len(y: u32, level: u32) -> u64 {
    edges_per_side(level) - y as u64
}

#[inline]
pub fn is_valid_vertex(x: i64, y: i64, level: u32) -> bool {
    let n = edges_per_side(level) as i64;
    y >= 0 && y <= n && x >= 0 && x <= n - y
}

#[inline]
pub fn is_valid_edge(x: i64, y: i64, level: u32) -> bool {
    let n = edges_per_side(level) as i64;
    y >= 0 && y < n && x >= 0 && x < n - y
}

#[inline]
pub fn is_valid(array: ArrayId, x: i64, y: i64, level: u32) -> bool {
    match array {
        ArrayId::Vertex => is_valid_vertex(x, y, level),
        ArrayId::Edge(_) => is_valid_edge(x, y, level),
    }
}

/// First linear index of vertex row `y`. Row lengths shrink by one per row,
/// hence the triangular correction.
#[inline]
pub fn vertex_row_start(y: u32, level: u32) -> u64 {
    let n = edges_per_side(level);
    let y = y as u64;
    (n + 2) * y - y * (y + 1) / 2
}

/// First linear index of edge row `y` (any orientation).
#[inline]
pub fn edge_row_start(y: u32, level: u32) -> u64 {
    let n = edges_per_side(level);
    let y = y as u64;
    (n + 1) * y - y * (y + 1) / 2
}

#[inline]
pub fn row_start(array: ArrayId, y: u32, level: u32) -> u64 {
    match array {
        ArrayId::Vertex => vertex_row_start(y, level),
        ArrayId::Edge(_) => edge_row_start(y, level),
    }
}

/// Linear index of vertex `(x, y)`.
pub fn vertex_index(x: u32, y: u32, level: u32) -> Result<u64> {
    check_level(level)?;
    if !is_valid_vertex(x as i64, y as i64, level) {
        return Err(Error::OutOfTriangle {
            kind: "vertex",
            x: x as i64,
            y: y as i64,
            level,
        });
    }
    Ok(vertex_row_start(y, level) + x as u64)
}

/// Linear index of an edge midpoint `(x, y)`; all orientations share the layout.
pub fn edge_index(x: u32, y: u32, level: u32) -> Result<u64> {
    check_level(level)?;
    if !is_valid_edge(x as i64, y as i64, level) {
        return Err(Error::OutOfTriangle {
            kind: "edge",
            x: x as i64,
            y: y as i64,
            level,
        });
    }
    Ok(edge_row_start(y, level) + x as u64)
}

/// Coefficient of `y` in the linearization `x + stride*y - y*(y+1)/2`.
#[inline]
pub fn row_stride(array: ArrayId, level: u32) -> u64 {
    let n = edges_per_side(level);
    match array {
        ArrayId::Vertex => n + 2,
        ArrayId::Edge(_) => n + 1,
    }
}

/// Closed-form loop bounds of an iteration domain.
///
/// The target set is `y in y_begin..y_end`, `x in x_begin..(x_limit - y)`.
/// Rows near `y_end` may be empty; the inner bound handles that naturally.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoopBounds {
    pub y_begin: u32,
    pub y_end: u32,
    pub x_begin: u32,
    /// Inner loops run while `x < x_limit - y`.
    pub x_limit: u32,
}

/// One non-empty row of an iteration domain; `x_end` is exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowSpan {
    pub y: u32,
    pub x_begin: u32,
    pub x_end: u32,
}

/// Target points a stencil may be applied to without any access leaving its
/// array. Row lists skip empty rows; `bounds` keeps the closed form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IterationDomain {
    pub bounds: LoopBounds,
    pub rows: Vec<RowSpan>,
    pub size: u64,
}

impl IterationDomain {
    pub fn is_empty(&self) -> bool {
        self.size == 0
    }
}

/// Derives the maximal set of target points `(x, y)` such that every target
/// write and every source read of `spec` stays in bounds. Each constraint is
/// linear with slope -1 in `y`, so the result is again triangular.
pub fn interior_domain(spec: &StencilAccessSpec, level: u32) -> Result<IterationDomain> {
    check_level(level)?;
    let n = edges_per_side(level) as i64;

    // (max row, row length constant) per array kind; row y holds x < len - y.
    let kind_limits = |array: ArrayId| -> (i64, i64) {
        match array {
            ArrayId::Vertex => (n, n + 1),
            ArrayId::Edge(_) => (n - 1, n),
        }
    };

    let mut y_begin: i64 = 0;
    let mut y_last: i64 = i64::MAX;
    let mut x_begin: i64 = 0;
    let mut x_limit: i64 = i64::MAX;

    for target in &spec.targets {
        let (max_row, len_c) = kind_limits(target.target);
        y_last = y_last.min(max_row);
        x_limit = x_limit.min(len_c);
        for acc in &target.accesses {
            let (src_max_row, src_len_c) = kind_limits(acc.source);
            let (dx, dy) = (acc.dx as i64, acc.dy as i64);
            y_begin = y_begin.max(-dy);
            y_last = y_last.min(src_max_row - dy);
            x_begin = x_begin.max(-dx);
            x_limit = x_limit.min(src_len_c - dx - dy);
        }
    }

    let y_end = (y_last + 1).max(y_begin);
    let mut rows = Vec::new();
    let mut size = 0u64;
    for y in y_begin..y_end {
        let x_end = x_limit - y;
        if x_end > x_begin {
            rows.push(RowSpan {
                y: y as u32,
                x_begin: x_begin as u32,
                x_end: x_end as u32,
            });
            size += (x_end - x_begin) as u64;
        }
    }

    Ok(IterationDomain {
        bounds: LoopBounds {
            y_begin: y_begin as u32,
            y_end: y_end as u32,
            x_begin: x_begin as u32,
            x_limit: x_limit.clamp(0, i64::from(u32::MAX)) as u32,
        },
        rows,
        size,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelKind;

    #[test]
    fn counts_match_enumeration() {
        for level in 0..=6 {
            let n = edges_per_side(level);
            let mut vertices = 0u64;
            for y in 0..=n {
                vertices += n + 1 - y;
            }
            let mut edges = 0u64;
            for y in 0..n {
                edges += n - y;
            }
            let c = dof_counts(level).unwrap();
            assert_eq!(c.vertices, vertices);
            assert_eq!(c.edges_per_orientation, edges);
            assert_eq!(c.total, vertices + 3 * edges);
        }
    }

    #[test]
    fn known_counts() {
        let c = dof_counts(10).unwrap();
        assert_eq!(
            (c.vertices, c.edges_per_orientation, c.total),
            (525_825, 524_800, 2_100_225)
        );
        let c = dof_counts(13).unwrap();
        assert_eq!(
            (c.vertices, c.edges_per_orientation, c.total),
            (33_566_721, 33_558_528, 134_242_305)
        );
        assert_eq!(dof_counts(0).unwrap().total, 6);
    }

    #[test]
    fn indices_enumerate_row_major() {
        for level in 0..=5 {
            let n = edges_per_side(level) as u32;
            let mut next = 0u64;
            for y in 0..=n {
                for x in 0..=(n - y) {
                    assert_eq!(vertex_index(x, y, level).unwrap(), next);
                    next += 1;
                }
            }
            assert_eq!(next, vertex_count(level));

            let mut next = 0u64;
            for y in 0..n {
                for x in 0..(n - y) {
                    assert_eq!(edge_index(x, y, level).unwrap(), next);
                    next += 1;
                }
            }
            assert_eq!(next, edge_count(level));
        }
    }

    #[test]
    fn known_indices() {
        assert_eq!(vertex_index(0, 2, 3).unwrap(), 17);
        assert_eq!(edge_index(1, 1, 3).unwrap(), 9);
        assert_eq!(vertex_index(1, 1, 10).unwrap(), 1026);
    }

    #[test]
    fn rejects_out_of_triangle() {
        assert!(vertex_index(9, 0, 3).is_err());
        assert!(vertex_index(1, 8, 3).is_err());
        assert!(edge_index(8, 0, 3).is_err());
        assert!(edge_index(0, 8, 3).is_err());
        assert!(matches!(dof_counts(21), Err(Error::LevelTooLarge(21))));
    }

    #[test]
    fn vtv_domain_level10() {
        let spec = KernelKind::VertexToVertex.spec();
        let dom = interior_domain(&spec, 10).unwrap();
        assert_eq!(dom.bounds.y_begin, 1);
        assert_eq!(dom.bounds.y_end, 1024);
        assert_eq!(dom.bounds.x_begin, 1);
        assert_eq!(dom.bounds.x_limit, 1024);
        assert_eq!(dom.size, 522_753);
        // closed form (n-2)(n-1)/2 for the interior vertices
        for level in 2..=8 {
            let n = edges_per_side(level);
            let dom = interior_domain(&spec, level).unwrap();
            assert_eq!(dom.size, (n - 2) * (n - 1) / 2);
        }
    }

    /// Exhaustive bounds check: every point inside the domain must keep all
    /// accesses valid, every point outside must violate at least one.
    #[test]
    fn domains_match_brute_force() {
        for kernel in KernelKind::ALL {
            let spec = kernel.spec();
            for level in 1..=4 {
                let dom = interior_domain(&spec, level).unwrap();
                let n = edges_per_side(level) as i64;
                let mut expected = Vec::new();
                for y in -2..=(n + 2) {
                    for x in -2..=(n + 2) {
                        let ok = spec.targets.iter().all(|t| {
                            is_valid(t.target, x, y, level)
                                && t.accesses.iter().all(|a| {
                                    is_valid(a.source, x + a.dx as i64, y + a.dy as i64, level)
                                })
                        });
                        if ok {
                            expected.push((x, y));
                        }
                    }
                }
                let mut got = Vec::new();
                for row in &dom.rows {
                    for x in row.x_begin..row.x_end {
                        got.push((x as i64, row.y as i64));
                    }
                }
                expected.sort_by_key(|&(x, y)| (y, x));
                got.sort_by_key(|&(x, y)| (y, x));
                assert_eq!(got, expected, "{:?} level {}", kernel, level);
                assert_eq!(dom.size as usize, expected.len());
            }
        }
    }

    #[test]
    fn ete_domain_level3() {
        let dom = interior_domain(&KernelKind::EdgeToEdge.spec(), 3).unwrap();
        assert_eq!(dom.size, 15);
        assert_eq!(dom.bounds.y_begin, 1);
        assert_eq!(dom.bounds.y_end, 7);
        assert_eq!(dom.bounds.x_limit, 7);
    }
}
