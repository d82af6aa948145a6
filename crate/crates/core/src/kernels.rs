//! The four matrix-free stencil kernels of the constant-coefficient P2
//! operator, a generic interpreter over stencil specs, and the composite
//! operator application.
//!
//! Evaluation order is part of every kernel's contract: each target entry is
//! the left-to-right sum of `weight * source` products in spec order. The
//! specialized kernels, [`reference_apply`] and the generated-plan executor in
//! [`crate::codegen`] must agree bit for bit, so none of them may reassociate.

use crate::fields::{EdgeField, P2Function, P2Operator, VertexField};
use crate::grid::{self, ArrayId, IterationDomain, Orientation, RowSpan};
use crate::{Error, Result};

/// One weighted read: `source[(x + dx, y + dy)] * weights[weight]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StencilAccess {
    pub source: ArrayId,
    pub dx: i8,
    pub dy: i8,
    pub weight: usize,
}

/// All reads feeding one target array at the current point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetSpec {
    pub target: ArrayId,
    pub accesses: Vec<StencilAccess>,
}

/// A full kernel description: which arrays are written and from which
/// weighted neighbor reads. Weight indices are dense and unique across all
/// targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StencilAccessSpec {
    pub name: String,
    pub targets: Vec<TargetSpec>,
}

impl StencilAccessSpec {
    pub fn weight_count(&self) -> usize {
        self.targets.iter().map(|t| t.accesses.len()).sum()
    }

    /// Checks the structural invariants: at least one target, offsets at most
    /// one row/column wide, weight indices exactly 0..n, and no duplicate
    /// (target, source, offset) reads.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Error::Parse {
            path: format!("spec {}", self.name),
            line: 0,
            msg,
        };
        if self.targets.is_empty() {
            return Err(fail("no target arrays".into()));
        }
        let n = self.weight_count();
        let mut seen_weight = vec![false; n];
        let mut seen_read = std::collections::HashSet::new();
        for target in &self.targets {
            if target.accesses.is_empty() {
                return Err(fail(format!("target {} has no reads", target.target.name())));
            }
            for a in &target.accesses {
                if a.dx.abs() > 1 || a.dy.abs() > 1 {
                    return Err(fail(format!("offset ({}, {}) too wide", a.dx, a.dy)));
                }
                if a.weight >= n || seen_weight[a.weight] {
                    return Err(fail(format!("weight index {} not dense", a.weight)));
                }
                seen_weight[a.weight] = true;
                if !seen_read.insert((target.target, a.source, a.dx, a.dy)) {
                    return Err(fail(format!(
                        "duplicate read of {} at ({}, {})",
                        a.source.name(),
                        a.dx,
                        a.dy
                    )));
                }
            }
        }
        Ok(())
    }

    /// Source arrays in first-use order, without duplicates.
    pub fn source_arrays(&self) -> Vec<ArrayId> {
        let mut out = Vec::new();
        for t in &self.targets {
            for a in &t.accesses {
                if !out.contains(&a.source) {
                    out.push(a.source);
                }
            }
        }
        out
    }

    /// Arrays touched by the kernel (targets and sources).
    pub fn touched_arrays(&self) -> Vec<ArrayId> {
        let mut out: Vec<ArrayId> = self.targets.iter().map(|t| t.target).collect();
        for a in self.source_arrays() {
            if !out.contains(&a) {
                out.push(a);
            }
        }
        out
    }
}

/// The four kernels of the P2 operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelKind {
    VertexToVertex,
    EdgeToVertex,
    VertexToEdge,
    EdgeToEdge,
}

use ArrayId::{Edge, Vertex};
use Orientation::{X, Xy, Y};

impl KernelKind {
    pub const ALL: [KernelKind; 4] = [
        KernelKind::VertexToVertex,
        KernelKind::EdgeToVertex,
        KernelKind::VertexToEdge,
        KernelKind::EdgeToEdge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::VertexToVertex => "vtv",
            KernelKind::EdgeToVertex => "etv",
            KernelKind::VertexToEdge => "vte",
            KernelKind::EdgeToEdge => "ete",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownKernel(s.to_string()))
    }

    /// Multiplications and additions per target point.
    pub fn flops(self) -> (u32, u32) {
        match self {
            KernelKind::VertexToVertex => (7, 6),
            KernelKind::EdgeToVertex => (12, 11),
            KernelKind::VertexToEdge => (12, 9),
            KernelKind::EdgeToEdge => (15, 12),
        }
    }

    pub fn weight_count(self) -> usize {
        self.flops().0 as usize
    }

    /// The access pattern, one entry per weight in evaluation order.
    pub fn spec(self) -> StencilAccessSpec {
        let acc = |source, dx: i8, dy: i8, weight: usize| StencilAccess {
            source,
            dx,
            dy,
            weight,
        };
        let targets = match self {
            KernelKind::VertexToVertex => vec![TargetSpec {
                target: Vertex,
                accesses: vec![
                    acc(Vertex, 1, -1, 0),
                    acc(Vertex, 1, 0, 1),
                    acc(Vertex, 0, -1, 2),
                    acc(Vertex, 0, 0, 3),
                    acc(Vertex, 0, 1, 4),
                    acc(Vertex, -1, 0, 5),
                    acc(Vertex, -1, 1, 6),
                ],
            }],
            KernelKind::EdgeToVertex => vec![TargetSpec {
                target: Vertex,
                accesses: vec![
                    acc(Edge(X), 0, 1, 0),
                    acc(Edge(X), 0, 0, 1),
                    acc(Edge(X), -1, 0, 2),
                    acc(Edge(X), 0, -1, 3),
                    acc(Edge(Y), -1, 0, 4),
                    acc(Edge(Y), 0, 0, 5),
                    acc(Edge(Y), 0, -1, 6),
                    acc(Edge(Y), 1, -1, 7),
                    acc(Edge(Xy), -1, 0, 8),
                    acc(Edge(Xy), 0, 0, 9),
                    acc(Edge(Xy), -1, -1, 10),
                    acc(Edge(Xy), 0, -1, 11),
                ],
            }],
            KernelKind::VertexToEdge => vec![
                TargetSpec {
                    target: Edge(X),
                    accesses: vec![
                        acc(Vertex, -1, 1, 0),
                        acc(Vertex, 0, 0, 1),
                        acc(Vertex, 1, 0, 2),
                        acc(Vertex, 1, -1, 3),
                    ],
                },
                TargetSpec {
                    target: Edge(Xy),
                    accesses: vec![
                        acc(Vertex, 0, 1, 4),
                        acc(Vertex, 1, 1, 5),
                        acc(Vertex, 0, 0, 6),
                        acc(Vertex, 1, 0, 7),
                    ],
                },
                TargetSpec {
                    target: Edge(Y),
                    accesses: vec![
                        acc(Vertex, -1, 1, 8),
                        acc(Vertex, 0, 1, 9),
                        acc(Vertex, 0, 0, 10),
                        acc(Vertex, 1, 0, 11),
                    ],
                },
            ],
            KernelKind::EdgeToEdge => vec![
                TargetSpec {
                    target: Edge(X),
                    accesses: vec![
                        acc(Edge(X), 0, 0, 0),
                        acc(Edge(Y), 0, 0, 1),
                        acc(Edge(Y), 1, -1, 2),
                        acc(Edge(Xy), 0, 0, 3),
                        acc(Edge(Xy), 0, -1, 4),
                    ],
                },
                TargetSpec {
                    target: Edge(Y),
                    accesses: vec![
                        acc(Edge(Y), 0, 0, 5),
                        acc(Edge(X), 0, 0, 6),
                        acc(Edge(X), -1, 1, 7),
                        acc(Edge(Xy), 0, 0, 8),
                        acc(Edge(Xy), -1, 0, 9),
                    ],
                },
                TargetSpec {
                    target: Edge(Xy),
                    accesses: vec![
                        acc(Edge(Xy), 0, 0, 10),
                        acc(Edge(X), 0, 0, 11),
                        acc(Edge(X), 0, 1, 12),
                        acc(Edge(Y), 0, 0, 13),
                        acc(Edge(Y), 1, 0, 14),
                    ],
                },
            ],
        };
        StencilAccessSpec {
            name: self.name().to_string(),
            targets,
        }
    }

    pub fn domain(self, level: u32) -> Result<IterationDomain> {
        grid::interior_domain(&self.spec(), level)
    }
}

fn check_weights(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::WeightCount { expected, actual });
    }
    Ok(())
}

fn check_levels(levels: &[u32]) -> Result<u32> {
    let first = levels[0];
    for &l in &levels[1..] {
        if l != first {
            return Err(Error::LevelMismatch(first, l));
        }
    }
    Ok(first)
}

/// Walks `spec` over its interior domain and writes each target entry as the
/// in-order weighted sum. Ground truth for the specialized kernels and the
/// generated-code executor.
pub fn reference_apply(
    spec: &StencilAccessSpec,
    weights: &[f64],
    src: &P2Function,
    dst: &mut P2Function,
) -> Result<()> {
    spec.validate()?;
    check_weights(spec.weight_count(), weights.len())?;
    let level = check_levels(&[src.level(), dst.level()])?;
    let dom = grid::interior_domain(spec, level)?;

    for target in &spec.targets {
        let out = dst.component_mut(target.target);
        for row in &dom.rows {
            // per-access linear base of this row; index = base + x
            let bases: Vec<i64> = target
                .accesses
                .iter()
                .map(|a| {
                    grid::row_start(a.source, (row.y as i32 + a.dy as i32) as u32, level) as i64
                        + a.dx as i64
                })
                .collect();
            let out_base = grid::row_start(target.target, row.y, level) as i64;
            for x in row.x_begin..row.x_end {
                let x = x as i64;
                let mut acc = 0.0;
                for (i, a) in target.accesses.iter().enumerate() {
                    let v = src.component(a.source)[(bases[i] + x) as usize];
                    let term = weights[a.weight] * v;
                    // first term initializes to keep the sum a pure chain
                    acc = if i == 0 { term } else { acc + term };
                }
                out[(out_base + x) as usize] = acc;
            }
        }
    }
    Ok(())
}

/// Row-restricted core of [`apply_vtv`]. `d` starts at flat index `d_off` of
/// the target array, so disjoint row ranges can go to disjoint slices; the
/// threaded sweep in [`crate::harness`] shares this body with the full apply.
pub(crate) fn vtv_rows(
    s: &[f64],
    w: &[f64; 7],
    d: &mut [f64],
    d_off: i64,
    rows: &[RowSpan],
    level: u32,
) {
    for row in rows {
        let y = row.y;
        let bm = grid::vertex_row_start(y - 1, level) as i64;
        let b0 = grid::vertex_row_start(y, level) as i64;
        let bp = grid::vertex_row_start(y + 1, level) as i64;
        let o0 = b0 - d_off;
        for x in row.x_begin as i64..row.x_end as i64 {
            d[(o0 + x) as usize] = w[0] * s[(bm + x + 1) as usize]
                + w[1] * s[(b0 + x + 1) as usize]
                + w[2] * s[(bm + x) as usize]
                + w[3] * s[(b0 + x) as usize]
                + w[4] * s[(bp + x) as usize]
                + w[5] * s[(b0 + x - 1) as usize]
                + w[6] * s[(bp + x - 1) as usize];
        }
    }
}

/// Vertex result from the seven vertex neighbors.
pub fn apply_vtv(src: &VertexField, weights: &[f64; 7], dst: &mut VertexField) -> Result<()> {
    let level = check_levels(&[src.level(), dst.level()])?;
    let dom = KernelKind::VertexToVertex.domain(level)?;
    vtv_rows(src.as_slice(), weights, dst.as_mut_slice(), 0, &dom.rows, level);
    Ok(())
}

/// Row-restricted core of the edge-to-vertex sums; see [`vtv_rows`] for the
/// `d_off` convention.
#[allow(clippy::too_many_arguments)]
pub(crate) fn etv_rows(
    ex: &[f64],
    ey: &[f64],
    exy: &[f64],
    w: &[f64; 12],
    d: &mut [f64],
    d_off: i64,
    rows: &[RowSpan],
    level: u32,
    add: bool,
) {
    for row in rows {
        let y = row.y;
        let em = grid::edge_row_start(y - 1, level) as i64;
        let e0 = grid::edge_row_start(y, level) as i64;
        let ep = grid::edge_row_start(y + 1, level) as i64;
        let v0 = grid::vertex_row_start(y, level) as i64 - d_off;
        for x in row.x_begin as i64..row.x_end as i64 {
            let sum = w[0] * ex[(ep + x) as usize]
                + w[1] * ex[(e0 + x) as usize]
                + w[2] * ex[(e0 + x - 1) as usize]
                + w[3] * ex[(em + x) as usize]
                + w[4] * ey[(e0 + x - 1) as usize]
                + w[5] * ey[(e0 + x) as usize]
                + w[6] * ey[(em + x) as usize]
                + w[7] * ey[(em + x + 1) as usize]
                + w[8] * exy[(e0 + x - 1) as usize]
                + w[9] * exy[(e0 + x) as usize]
                + w[10] * exy[(em + x - 1) as usize]
                + w[11] * exy[(em + x) as usize];
            let i = (v0 + x) as usize;
            if add {
                d[i] += sum;
            } else {
                d[i] = sum;
            }
        }
    }
}

fn etv_sums(
    src_x: &EdgeField,
    src_y: &EdgeField,
    src_xy: &EdgeField,
    weights: &[f64; 12],
    dst: &mut VertexField,
    add: bool,
) -> Result<()> {
    let level = check_levels(&[src_x.level(), src_y.level(), src_xy.level(), dst.level()])?;
    let dom = KernelKind::EdgeToVertex.domain(level)?;
    etv_rows(
        src_x.as_slice(),
        src_y.as_slice(),
        src_xy.as_slice(),
        weights,
        dst.as_mut_slice(),
        0,
        &dom.rows,
        level,
        add,
    );
    Ok(())
}

/// Vertex result from the twelve neighboring edge midpoints.
pub fn apply_etv(
    src_x: &EdgeField,
    src_y: &EdgeField,
    src_xy: &EdgeField,
    weights: &[f64; 12],
    dst: &mut VertexField,
) -> Result<()> {
    etv_sums(src_x, src_y, src_xy, weights, dst, false)
}

/// Like [`apply_etv`] but accumulating into `dst`.
pub fn apply_etv_add(
    src_x: &EdgeField,
    src_y: &EdgeField,
    src_xy: &EdgeField,
    weights: &[f64; 12],
    dst: &mut VertexField,
) -> Result<()> {
    etv_sums(src_x, src_y, src_xy, weights, dst, true)
}

/// Row-restricted core of [`apply_vte`]; all three targets share one edge-row
/// layout, so one `d_off` covers them.
#[allow(clippy::too_many_arguments)]
pub(crate) fn vte_rows(
    s: &[f64],
    w: &[f64; 12],
    dx: &mut [f64],
    dy: &mut [f64],
    dxy: &mut [f64],
    d_off: i64,
    rows: &[RowSpan],
    level: u32,
) {
    for row in rows {
        let y = row.y;
        let vm = grid::vertex_row_start(y - 1, level) as i64;
        let v0 = grid::vertex_row_start(y, level) as i64;
        let vp = grid::vertex_row_start(y + 1, level) as i64;
        let e0 = grid::edge_row_start(y, level) as i64 - d_off;
        for x in row.x_begin as i64..row.x_end as i64 {
            let i = (e0 + x) as usize;
            dx[i] = w[0] * s[(vp + x - 1) as usize]
                + w[1] * s[(v0 + x) as usize]
                + w[2] * s[(v0 + x + 1) as usize]
                + w[3] * s[(vm + x + 1) as usize];
            dxy[i] = w[4] * s[(vp + x) as usize]
                + w[5] * s[(vp + x + 1) as usize]
                + w[6] * s[(v0 + x) as usize]
                + w[7] * s[(v0 + x + 1) as usize];
            dy[i] = w[8] * s[(vp + x - 1) as usize]
                + w[9] * s[(vp + x) as usize]
                + w[10] * s[(v0 + x) as usize]
                + w[11] * s[(v0 + x + 1) as usize];
        }
    }
}

/// Edge results from the neighboring vertices, all three orientations in one
/// sweep.
pub fn apply_vte(
    src: &VertexField,
    weights: &[f64; 12],
    dst_x: &mut EdgeField,
    dst_y: &mut EdgeField,
    dst_xy: &mut EdgeField,
) -> Result<()> {
    let level = check_levels(&[src.level(), dst_x.level(), dst_y.level(), dst_xy.level()])?;
    let dom = KernelKind::VertexToEdge.domain(level)?;
    vte_rows(
        src.as_slice(),
        weights,
        dst_x.as_mut_slice(),
        dst_y.as_mut_slice(),
        dst_xy.as_mut_slice(),
        0,
        &dom.rows,
        level,
    );
    Ok(())
}

/// Row-restricted core of the edge-to-edge sums; see [`vte_rows`].
#[allow(clippy::too_many_arguments)]
pub(crate) fn ete_rows(
    ex: &[f64],
    ey: &[f64],
    exy: &[f64],
    w: &[f64; 15],
    dx: &mut [f64],
    dy: &mut [f64],
    dxy: &mut [f64],
    d_off: i64,
    rows: &[RowSpan],
    level: u32,
    add: bool,
) {
    for row in rows {
        let y = row.y;
        let em = grid::edge_row_start(y - 1, level) as i64;
        let e0 = grid::edge_row_start(y, level) as i64;
        let ep = grid::edge_row_start(y + 1, level) as i64;
        let o0 = e0 - d_off;
        for x in row.x_begin as i64..row.x_end as i64 {
            let i = (e0 + x) as usize;
            let o = (o0 + x) as usize;
            let sx = w[0] * ex[i]
                + w[1] * ey[i]
                + w[2] * ey[(em + x + 1) as usize]
                + w[3] * exy[i]
                + w[4] * exy[(em + x) as usize];
            let sy = w[5] * ey[i]
                + w[6] * ex[i]
                + w[7] * ex[(ep + x - 1) as usize]
                + w[8] * exy[i]
                + w[9] * exy[(e0 + x - 1) as usize];
            let sxy = w[10] * exy[i]
                + w[11] * ex[i]
                + w[12] * ex[(ep + x) as usize]
                + w[13] * ey[i]
                + w[14] * ey[(e0 + x + 1) as usize];
            if add {
                dx[o] += sx;
                dy[o] += sy;
                dxy[o] += sxy;
            } else {
                dx[o] = sx;
                dy[o] = sy;
                dxy[o] = sxy;
            }
        }
    }
}

fn ete_sums(
    src_x: &EdgeField,
    src_y: &EdgeField,
    src_xy: &EdgeField,
    weights: &[f64; 15],
    dst_x: &mut EdgeField,
    dst_y: &mut EdgeField,
    dst_xy: &mut EdgeField,
    add: bool,
) -> Result<()> {
    let level = check_levels(&[
        src_x.level(),
        src_y.level(),
        src_xy.level(),
        dst_x.level(),
        dst_y.level(),
        dst_xy.level(),
    ])?;
    let dom = KernelKind::EdgeToEdge.domain(level)?;
    ete_rows(
        src_x.as_slice(),
        src_y.as_slice(),
        src_xy.as_slice(),
        weights,
        dst_x.as_mut_slice(),
        dst_y.as_mut_slice(),
        dst_xy.as_mut_slice(),
        0,
        &dom.rows,
        level,
        add,
    );
    Ok(())
}

/// Edge results from the neighboring edge midpoints.
pub fn apply_ete(
    src_x: &EdgeField,
    src_y: &EdgeField,
    src_xy: &EdgeField,
    weights: &[f64; 15],
    dst_x: &mut EdgeField,
    dst_y: &mut EdgeField,
    dst_xy: &mut EdgeField,
) -> Result<()> {
    ete_sums(src_x, src_y, src_xy, weights, dst_x, dst_y, dst_xy, false)
}

/// Like [`apply_ete`] but accumulating into the targets.
pub fn apply_ete_add(
    src_x: &EdgeField,
    src_y: &EdgeField,
    src_xy: &EdgeField,
    weights: &[f64; 15],
    dst_x: &mut EdgeField,
    dst_y: &mut EdgeField,
    dst_xy: &mut EdgeField,
) -> Result<()> {
    ete_sums(src_x, src_y, src_xy, weights, dst_x, dst_y, dst_xy, true)
}

/// Full operator application in four passes: the vertex-source pass of each
/// target group writes, the edge-source pass accumulates. Entries outside the
/// kernels' interior domains are left untouched.
pub fn apply_p2(op: &P2Operator, src: &P2Function, dst: &mut P2Function) -> Result<()> {
    apply_vtv(&src.vertex, &op.vtv, &mut dst.vertex)?;
    apply_etv_add(&src.edge_x, &src.edge_y, &src.edge_xy, &op.etv, &mut dst.vertex)?;
    apply_vte(
        &src.vertex,
        &op.vte,
        &mut dst.edge_x,
        &mut dst.edge_y,
        &mut dst.edge_xy,
    )?;
    apply_ete_add(
        &src.edge_x,
        &src.edge_y,
        &src.edge_xy,
        &op.ete,
        &mut dst.edge_x,
        &mut dst.edge_y,
        &mut dst.edge_xy,
    )?;
    Ok(())
}

/// Runs one kernel of the operator with store semantics.
pub fn apply_kernel(
    kind: KernelKind,
    op: &P2Operator,
    src: &P2Function,
    dst: &mut P2Function,
) -> Result<()> {
    match kind {
        KernelKind::VertexToVertex => apply_vtv(&src.vertex, &op.vtv, &mut dst.vertex),
        KernelKind::EdgeToVertex => {
            apply_etv(&src.edge_x, &src.edge_y, &src.edge_xy, &op.etv, &mut dst.vertex)
        }
        KernelKind::VertexToEdge => apply_vte(
            &src.vertex,
            &op.vte,
            &mut dst.edge_x,
            &mut dst.edge_y,
            &mut dst.edge_xy,
        ),
        KernelKind::EdgeToEdge => apply_ete(
            &src.edge_x,
            &src.edge_y,
            &src.edge_xy,
            &op.ete,
            &mut dst.edge_x,
            &mut dst.edge_y,
            &mut dst.edge_xy,
        ),
    }
}

/// Write-semantics sweep of one kernel restricted to `rows`, storing into
/// per-target slices that begin at flat index `d_off` of their arrays. `outs`
/// holds one slice for the vertex-target kernels and the fixed x, y, xy
/// triple for the edge-target kernels. Same row bodies as [`apply_kernel`],
/// so results over the covered rows are bit-identical to it.
pub(crate) fn apply_kernel_rows(
    kind: KernelKind,
    op: &P2Operator,
    src: &P2Function,
    outs: &mut [&mut [f64]],
    d_off: i64,
    rows: &[RowSpan],
) {
    let level = src.level();
    match kind {
        KernelKind::VertexToVertex => {
            vtv_rows(src.vertex.as_slice(), &op.vtv, &mut *outs[0], d_off, rows, level)
        }
        KernelKind::EdgeToVertex => etv_rows(
            src.edge_x.as_slice(),
            src.edge_y.as_slice(),
            src.edge_xy.as_slice(),
            &op.etv,
            &mut *outs[0],
            d_off,
            rows,
            level,
            false,
        ),
        KernelKind::VertexToEdge => {
            let [dx, dy, dxy] = outs else {
                panic!("edge-target sweep needs three output slices")
            };
            vte_rows(src.vertex.as_slice(), &op.vte, dx, dy, dxy, d_off, rows, level)
        }
        KernelKind::EdgeToEdge => {
            let [dx, dy, dxy] = outs else {
                panic!("edge-target sweep needs three output slices")
            };
            ete_rows(
                src.edge_x.as_slice(),
                src.edge_y.as_slice(),
                src.edge_xy.as_slice(),
                &op.ete,
                dx,
                dy,
                dxy,
                d_off,
                rows,
                level,
                false,
            )
        }
    }
}

fn row_span(dom: &IterationDomain, y: u32) -> Option<RowSpan> {
    let first = dom.rows.first()?.y;
    if y < first {
        return None;
    }
    dom.rows.get((y - first) as usize).filter(|r| r.y == y).copied()
}

/// Single-sweep variant of [`apply_p2`]: per target group both source terms
/// are evaluated in one pass over the rows. Bit-identical to the four-pass
/// version since each pair of partial sums is combined in the same order.
pub fn apply_p2_fused(op: &P2Operator, src: &P2Function, dst: &mut P2Function) -> Result<()> {
    let level = check_levels(&[src.level(), dst.level()])?;

    // vertex group: vtv everywhere in its domain, etv added on its subdomain
    {
        let dom_v = KernelKind::VertexToVertex.domain(level)?;
        let dom_e = KernelKind::EdgeToVertex.domain(level)?;
        let s = src.vertex.as_slice();
        let (ex, ey, exy) = (
            src.edge_x.as_slice(),
            src.edge_y.as_slice(),
            src.edge_xy.as_slice(),
        );
        let d = dst.vertex.as_mut_slice();
        let (wv, we) = (&op.vtv, &op.etv);
        for row in &dom_v.rows {
            let y = row.y;
            let vm = grid::vertex_row_start(y - 1, level) as i64;
            let v0 = grid::vertex_row_start(y, level) as i64;
            let vp = grid::vertex_row_start(y + 1, level) as i64;
            let em = y.checked_sub(1).map(|p| grid::edge_row_start(p, level) as i64);
            let e0 = grid::edge_row_start(y, level) as i64;
            let espan = row_span(&dom_e, y);
            for x in row.x_begin as i64..row.x_end as i64 {
                let vsum = wv[0] * s[(vm + x + 1) as usize]
                    + wv[1] * s[(v0 + x + 1) as usize]
                    + wv[2] * s[(vm + x) as usize]
                    + wv[3] * s[(v0 + x) as usize]
                    + wv[4] * s[(vp + x) as usize]
                    + wv[5] * s[(v0 + x - 1) as usize]
                    + wv[6] * s[(vp + x - 1) as usize];
                let i = (v0 + x) as usize;
                let in_etv = espan
                    .map(|sp| x >= sp.x_begin as i64 && x < sp.x_end as i64)
                    .unwrap_or(false);
                if in_etv {
                    let em = em.expect("etv rows start at y = 1");
                    let ep = grid::edge_row_start(y + 1, level) as i64;
                    let esum = we[0] * ex[(ep + x) as usize]
                        + we[1] * ex[(e0 + x) as usize]
                        + we[2] * ex[(e0 + x - 1) as usize]
                        + we[3] * ex[(em + x) as usize]
                        + we[4] * ey[(e0 + x - 1) as usize]
                        + we[5] * ey[(e0 + x) as usize]
                        + we[6] * ey[(em + x) as usize]
                        + we[7] * ey[(em + x + 1) as usize]
                        + we[8] * exy[(e0 + x - 1) as usize]
                        + we[9] * exy[(e0 + x) as usize]
                        + we[10] * exy[(em + x - 1) as usize]
                        + we[11] * exy[(em + x) as usize];
                    d[i] = vsum + esum;
                } else {
                    d[i] = vsum;
                }
            }
        }
    }

    // edge group: vte everywhere in its domain, ete added on its subdomain
    {
        let dom_v = KernelKind::VertexToEdge.domain(level)?;
        let dom_e = KernelKind::EdgeToEdge.domain(level)?;
        let s = src.vertex.as_slice();
        let (ex, ey, exy) = (
            src.edge_x.as_slice(),
            src.edge_y.as_slice(),
            src.edge_xy.as_slice(),
        );
        let (wv, we) = (&op.vte, &op.ete);
        for row in &dom_v.rows {
            let y = row.y;
            let vm = grid::vertex_row_start(y - 1, level) as i64;
            let v0 = grid::vertex_row_start(y, level) as i64;
            let vp = grid::vertex_row_start(y + 1, level) as i64;
            let em = y.checked_sub(1).map(|p| grid::edge_row_start(p, level) as i64);
            let e0 = grid::edge_row_start(y, level) as i64;
            let espan = row_span(&dom_e, y);
            for x in row.x_begin as i64..row.x_end as i64 {
                let i = (e0 + x) as usize;
                let sx = wv[0] * s[(vp + x - 1) as usize]
                    + wv[1] * s[(v0 + x) as usize]
                    + wv[2] * s[(v0 + x + 1) as usize]
                    + wv[3] * s[(vm + x + 1) as usize];
                let sxy = wv[4] * s[(vp + x) as usize]
                    + wv[5] * s[(vp + x + 1) as usize]
                    + wv[6] * s[(v0 + x) as usize]
                    + wv[7] * s[(v0 + x + 1) as usize];
                let sy = wv[8] * s[(vp + x - 1) as usize]
                    + wv[9] * s[(vp + x) as usize]
                    + wv[10] * s[(v0 + x) as usize]
                    + wv[11] * s[(v0 + x + 1) as usize];
                let in_ete = espan
                    .map(|sp| x >= sp.x_begin as i64 && x < sp.x_end as i64)
                    .unwrap_or(false);
                if in_ete {
                    let em = em.expect("ete rows start at y = 1");
                    let ep = grid::edge_row_start(y + 1, level) as i64;
                    let tx = we[0] * ex[i]
                        + we[1] * ey[i]
                        + we[2] * ey[(em + x + 1) as usize]
                        + we[3] * exy[i]
                        + we[4] * exy[(em + x) as usize];
                    let ty = we[5] * ey[i]
                        + we[6] * ex[i]
                        + we[7] * ex[(ep + x - 1) as usize]
                        + we[8] * exy[i]
                        + we[9] * exy[(e0 + x - 1) as usize];
                    let txy = we[10] * exy[i]
                        + we[11] * ex[i]
                        + we[12] * ex[(ep + x) as usize]
                        + we[13] * ey[i]
                        + we[14] * ey[(e0 + x + 1) as usize];
                    dst.edge_x.as_mut_slice()[i] = sx + tx;
                    dst.edge_y.as_mut_slice()[i] = sy + ty;
                    dst.edge_xy.as_mut_slice()[i] = sxy + txy;
                } else {
                    dst.edge_x.as_mut_slice()[i] = sx;
                    dst.edge_y.as_mut_slice()[i] = sy;
                    dst.edge_xy.as_mut_slice()[i] = sxy;
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::Fill;

    fn bit_eq(a: &P2Function, b: &P2Function) -> bool {
        ArrayId::ALL.into_iter().all(|arr| {
            a.component(arr)
                .iter()
                .zip(b.component(arr))
                .all(|(x, y)| x.to_bits() == y.to_bits())
        })
    }

    #[test]
    fn builtin_specs_are_valid() {
        for kernel in KernelKind::ALL {
            let spec = kernel.spec();
            spec.validate().unwrap();
            assert_eq!(spec.weight_count(), kernel.weight_count());
        }
        assert_eq!(KernelKind::VertexToEdge.spec().targets.len(), 3);
        assert_eq!(KernelKind::EdgeToEdge.spec().targets.len(), 3);
    }

    #[test]
    fn kernels_match_interpreter_bitwise() {
        for level in 2..=5 {
            for seed in 0..3u64 {
                let op = P2Operator::pseudo_random(seed);
                let src = P2Function::new(level, Fill::PseudoRandom(seed + 100)).unwrap();
                let mut a = P2Function::new(level, Fill::Zeros).unwrap();
                let mut b = P2Function::new(level, Fill::Zeros).unwrap();

                apply_vtv(&src.vertex, &op.vtv, &mut a.vertex).unwrap();
                reference_apply(&KernelKind::VertexToVertex.spec(), &op.vtv, &src, &mut b)
                    .unwrap();
                assert!(bit_eq(&a, &b), "vtv level {level} seed {seed}");

                apply_etv(&src.edge_x, &src.edge_y, &src.edge_xy, &op.etv, &mut a.vertex)
                    .unwrap();
                reference_apply(&KernelKind::EdgeToVertex.spec(), &op.etv, &src, &mut b).unwrap();
                assert!(bit_eq(&a, &b), "etv level {level} seed {seed}");

                apply_vte(
                    &src.vertex,
                    &op.vte,
                    &mut a.edge_x,
                    &mut a.edge_y,
                    &mut a.edge_xy,
                )
                .unwrap();
                reference_apply(&KernelKind::VertexToEdge.spec(), &op.vte, &src, &mut b).unwrap();
                assert!(bit_eq(&a, &b), "vte level {level} seed {seed}");

                apply_ete(
                    &src.edge_x,
                    &src.edge_y,
                    &src.edge_xy,
                    &op.ete,
                    &mut a.edge_x,
                    &mut a.edge_y,
                    &mut a.edge_xy,
                )
                .unwrap();
                reference_apply(&KernelKind::EdgeToEdge.spec(), &op.ete, &src, &mut b).unwrap();
                assert!(bit_eq(&a, &b), "ete level {level} seed {seed}");
            }
        }
    }

    #[test]
    fn fused_matches_four_pass_bitwise() {
        for level in 2..=5 {
            let op = P2Operator::pseudo_random(3);
            let src = P2Function::new(level, Fill::PseudoRandom(4)).unwrap();
            let mut a = P2Function::new(level, Fill::Zeros).unwrap();
            let mut b = P2Function::new(level, Fill::Zeros).unwrap();
            apply_p2(&op, &src, &mut a).unwrap();
            apply_p2_fused(&op, &src, &mut b).unwrap();
            assert!(bit_eq(&a, &b), "level {level}");
        }
    }

    #[test]
    fn unit_operator_counts_couplings() {
        // constant-one input and all-one weights turn each entry into its
        // coupling count: 19 where both vertex kernels apply, 9 where both
        // edge kernels apply
        let level = 4;
        let op = P2Operator::unit();
        let src = P2Function::new(level, Fill::Constant(1.0)).unwrap();
        let mut dst = P2Function::new(level, Fill::Zeros).unwrap();
        apply_p2(&op, &src, &mut dst).unwrap();

        let etv_dom = KernelKind::EdgeToVertex.domain(level).unwrap();
        for row in &etv_dom.rows {
            for x in row.x_begin..row.x_end {
                assert_eq!(dst.vertex.get(x, row.y).unwrap(), 19.0);
            }
        }
        let ete_dom = KernelKind::EdgeToEdge.domain(level).unwrap();
        for row in &ete_dom.rows {
            for x in row.x_begin..row.x_end {
                assert_eq!(dst.edge_x.get(x, row.y).unwrap(), 9.0);
                assert_eq!(dst.edge_y.get(x, row.y).unwrap(), 9.0);
                assert_eq!(dst.edge_xy.get(x, row.y).unwrap(), 9.0);
            }
        }
    }

    #[test]
    fn boundary_entries_stay_untouched() {
        let level = 3;
        let op = P2Operator::pseudo_random(1);
        let src = P2Function::new(level, Fill::PseudoRandom(2)).unwrap();
        let mut dst = P2Function::new(level, Fill::Constant(7.25)).unwrap();
        apply_p2(&op, &src, &mut dst).unwrap();

        let n = grid::edges_per_side(level) as u32;
        // hull of the vertex array: rows 0 and n, columns 0 and the diagonal
        for y in 0..=n {
            for x in 0..=(n - y) {
                let on_hull = y == 0 || x == 0 || x + y == n;
                if on_hull {
                    assert_eq!(dst.vertex.get(x, y).unwrap(), 7.25, "({x}, {y})");
                } else {
                    assert_ne!(dst.vertex.get(x, y).unwrap(), 7.25, "({x}, {y})");
                }
            }
        }
    }

    #[test]
    fn weight_scaling_is_linear() {
        let level = 4;
        let src = P2Function::new(level, Fill::PseudoRandom(9)).unwrap();
        let mut w = [0.0f64; 7];
        for (i, v) in w.iter_mut().enumerate() {
            *v = (i as f64 + 1.0) * 0.125;
        }
        let mut once = P2Function::new(level, Fill::Zeros).unwrap();
        apply_vtv(&src.vertex, &w, &mut once.vertex).unwrap();
        let doubled: Vec<f64> = w.iter().map(|v| v * 2.0).collect();
        let mut twice = P2Function::new(level, Fill::Zeros).unwrap();
        apply_vtv(
            &src.vertex,
            doubled.as_slice().try_into().unwrap(),
            &mut twice.vertex,
        )
        .unwrap();
        for (a, b) in once.vertex.as_slice().iter().zip(twice.vertex.as_slice()) {
            assert_eq!(*b, 2.0 * *a);
        }
    }
}
