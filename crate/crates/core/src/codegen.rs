//! Specialized C source emission for the stencil sweeps.
//!
//! The generator lowers a kernel at a fixed refinement level to an access
//! plan: loop bounds, per-target read lists with linearized offsets, and the
//! storage position of every weight. The C text is rendered from the plan
//! and the plan can be executed directly, so the emitted code and the
//! in-crate kernels are the same program by construction. Indexing follows
//! the row-major triangle layout where row `ctr_2` of an array with stride
//! `R` starts at `R*ctr_2 - ctr_2*(ctr_2 + 1)/2`.

use crate::fields::P2Function;
use crate::grid::{self, ArrayId, LoopBounds};
use crate::kernels::{KernelKind, StencilAccessSpec};
use crate::{Error, Result};

/// Storage order of the weight array the generated function receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightsLayout {
    /// weights stay in kernel numbering
    Identity,
    /// weights sorted by (dy, dx) of their access, the layout the modeled
    /// framework keeps its assembled stencils in
    RowMajor,
}

impl WeightsLayout {
    pub fn name(self) -> &'static str {
        match self {
            WeightsLayout::Identity => "identity",
            WeightsLayout::RowMajor => "row-major",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "identity" => Some(WeightsLayout::Identity),
            "row-major" => Some(WeightsLayout::RowMajor),
            _ => None,
        }
    }
}

/// Storage slot of each weight index under the layout.
pub fn weight_positions(spec: &StencilAccessSpec, layout: WeightsLayout) -> Vec<usize> {
    let n = spec.weight_count();
    match layout {
        WeightsLayout::Identity => (0..n).collect(),
        WeightsLayout::RowMajor => {
            let mut keys: Vec<(i8, i8, usize)> = spec
                .targets
                .iter()
                .flat_map(|t| &t.accesses)
                .map(|a| (a.dy, a.dx, a.weight))
                .collect();
            keys.sort_unstable();
            let mut pos = vec![0; n];
            for (rank, &(_, _, w)) in keys.iter().enumerate() {
                pos[w] = rank;
            }
            pos
        }
    }
}

/// Permutes kernel-ordered weights into their storage order.
pub fn store_weights(weights: &[f64], positions: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; weights.len()];
    for (k, &p) in positions.iter().enumerate() {
        out[p] = weights[k];
    }
    out
}

/// One read of the plan. `offset` folds the whole neighbor displacement
/// against the target row base: `stride*dy + dx`.
#[derive(Debug, Clone, Copy)]
pub struct PlannedAccess {
    pub array: ArrayId,
    /// kernel numbering, names the temporaries
    pub weight_index: usize,
    /// slot in the stored weight array
    pub weight_slot: usize,
    pub dx: i8,
    pub dy: i8,
    pub offset: i64,
}

#[derive(Debug, Clone)]
pub struct PlannedStore {
    pub array: ArrayId,
    pub accesses: Vec<PlannedAccess>,
}

/// Everything needed to run or print one specialized sweep.
#[derive(Debug, Clone)]
pub struct AccessPlan {
    pub kernel: KernelKind,
    pub level: u32,
    pub layout: WeightsLayout,
    pub bounds: LoopBounds,
    pub stores: Vec<PlannedStore>,
    pub positions: Vec<usize>,
}

pub fn plan(kind: KernelKind, level: u32, layout: WeightsLayout) -> Result<AccessPlan> {
    let spec = kind.spec();
    let dom = grid::interior_domain(&spec, level)?;
    let positions = weight_positions(&spec, layout);
    let stores = spec
        .targets
        .iter()
        .map(|t| PlannedStore {
            array: t.target,
            accesses: t
                .accesses
                .iter()
                .map(|a| PlannedAccess {
                    array: a.source,
                    weight_index: a.weight,
                    weight_slot: positions[a.weight],
                    dx: a.dx,
                    dy: a.dy,
                    offset: grid::row_stride(a.source, level) as i64 * a.dy as i64 + a.dx as i64,
                })
                .collect(),
        })
        .collect();
    Ok(AccessPlan {
        kernel: kind,
        level,
        layout,
        bounds: dom.bounds,
        stores,
        positions,
    })
}

fn quad(t: i64) -> i64 {
    t * (t + 1) / 2
}

impl AccessPlan {
    /// Runs the plan. `stored_weights` must already be in the plan's layout
    /// (see [`store_weights`]). Bit-identical to the interpreter and the
    /// specialized kernels: same bounds, same in-order sums.
    pub fn execute(
        &self,
        stored_weights: &[f64],
        src: &P2Function,
        dst: &mut P2Function,
    ) -> Result<()> {
        if stored_weights.len() != self.positions.len() {
            return Err(Error::WeightCount {
                expected: self.positions.len(),
                actual: stored_weights.len(),
            });
        }
        if src.level() != self.level || dst.level() != self.level {
            return Err(Error::LevelMismatch(self.level, src.level().min(dst.level())));
        }
        let b = &self.bounds;
        for y in b.y_begin as i64..b.y_end as i64 {
            let x_end = (b.x_limit as i64 - y).max(b.x_begin as i64);
            for store in &self.stores {
                let stride = grid::row_stride(store.array, self.level) as i64;
                let out_base = stride * y - quad(y);
                let out = dst.component_mut(store.array);
                for x in b.x_begin as i64..x_end {
                    let mut acc = 0.0;
                    for (i, a) in store.accesses.iter().enumerate() {
                        let src_stride = grid::row_stride(a.array, self.level) as i64;
                        let idx = x + src_stride * y - quad(y + a.dy as i64) + a.offset;
                        let term = stored_weights[a.weight_slot]
                            * src.component(a.array)[idx as usize];
                        acc = if i == 0 { term } else { acc + term };
                    }
                    out[(out_base + x) as usize] = acc;
                }
            }
        }
        Ok(())
    }

    /// Renders the plan as a C function.
    pub fn render(&self) -> String {
        let kernel_name = self.kernel.name();
        let mut params: Vec<String> = self
            .stores
            .iter()
            .map(|s| format!("double * restrict _data_dst_{}", s.array.name()))
            .collect();
        let mut seen_src: Vec<ArrayId> = Vec::new();
        for store in &self.stores {
            for a in &store.accesses {
                if !seen_src.contains(&a.array) {
                    seen_src.push(a.array);
                }
            }
        }
        params.extend(
            seen_src
                .iter()
                .map(|a| format!("const double * restrict _data_src_{}", a.name())),
        );
        params.push(format!("const double * restrict _data_{kernel_name}"));

        let mut out = String::new();
        out.push_str(&format!(
            "void {}_level{}({})\n{{\n",
            kernel_name,
            self.level,
            params.join(", ")
        ));
        for (k, &p) in self.positions.iter().enumerate() {
            out.push_str(&format!(
                "   const double xi_{k} = _data_{kernel_name}[{p}];\n"
            ));
        }
        let b = &self.bounds;
        out.push_str(&format!(
            "   for (int ctr_2 = {}; ctr_2 < {}; ctr_2 += 1)\n   {{\n",
            b.y_begin, b.y_end
        ));
        out.push_str(&format!(
            "      for (int ctr_1 = {}; ctr_1 < {} - ctr_2; ctr_1 += 1)\n      {{\n",
            b.x_begin, b.x_limit
        ));
        let mut temp = 10;
        for store in &self.stores {
            let mut terms = Vec::new();
            for a in &store.accesses {
                let expr = index_expression(
                    grid::row_stride(a.array, self.level),
                    a.dx as i32,
                    a.dy as i32,
                );
                out.push_str(&format!(
                    "         const double xi_{temp} = xi_{}*_data_src_{}[{expr}];\n",
                    a.weight_index,
                    a.array.name()
                ));
                terms.push(format!("xi_{temp}"));
                temp += 1;
            }
            let store_expr = index_expression(grid::row_stride(store.array, self.level), 0, 0);
            out.push_str(&format!(
                "         _data_dst_{}[{store_expr}] = {};\n",
                store.array.name(),
                terms.join(" + ")
            ));
        }
        out.push_str("      }\n   }\n}\n");
        out
    }
}

fn quad_factor(c: i32) -> String {
    match c {
        0 => "ctr_2".to_string(),
        c if c > 0 => format!("(ctr_2 + {c})"),
        c => format!("(ctr_2 - {})", -c),
    }
}

/// Linear index of the access `(ctr_1 + dx, ctr_2 + dy)` in an array with
/// the given row stride, printed the way the emitted code spells it: the
/// constant parts of the triangle row formula are folded into one trailing
/// term, the quadratic part keeps the bare `ctr_2` factor first.
pub fn index_expression(row_stride: u64, dx: i32, dy: i32) -> String {
    let (a, b) = (dy, dy + 1);
    let product = if b == 0 {
        format!("{}*{}", quad_factor(b), quad_factor(a))
    } else {
        format!("{}*{}", quad_factor(a), quad_factor(b))
    };
    let k = row_stride as i64 * dy as i64 + dx as i64;
    let mut expr = format!("ctr_1 + {row_stride}*ctr_2 - (({product}) / (2))");
    if k > 0 {
        expr.push_str(&format!(" + {k}"));
    } else if k < 0 {
        expr.push_str(&format!(" - {}", -k));
    }
    expr
}

#[derive(Debug, Clone)]
pub struct GeneratedKernel {
    pub source: String,
    pub plan: AccessPlan,
}

/// Lowers the kernel and renders it; text and plan come from the same
/// intermediate.
pub fn generate(kind: KernelKind, level: u32, layout: WeightsLayout) -> Result<GeneratedKernel> {
    let plan = plan(kind, level, layout)?;
    Ok(GeneratedKernel {
        source: plan.render(),
        plan,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{Fill, P2Operator};
    use crate::kernels::reference_apply;

    #[test]
    fn index_expressions() {
        assert_eq!(
            index_expression(1026, 0, 0),
            "ctr_1 + 1026*ctr_2 - ((ctr_2*(ctr_2 + 1)) / (2))"
        );
        assert_eq!(
            index_expression(1026, 1, -1),
            "ctr_1 + 1026*ctr_2 - ((ctr_2*(ctr_2 - 1)) / (2)) - 1025"
        );
        assert_eq!(
            index_expression(1026, -1, 1),
            "ctr_1 + 1026*ctr_2 - (((ctr_2 + 1)*(ctr_2 + 2)) / (2)) + 1025"
        );
        assert_eq!(
            index_expression(1025, -1, 0),
            "ctr_1 + 1025*ctr_2 - ((ctr_2*(ctr_2 + 1)) / (2)) - 1"
        );
    }

    #[test]
    fn row_major_positions() {
        let pos = weight_positions(
            &KernelKind::VertexToVertex.spec(),
            WeightsLayout::RowMajor,
        );
        assert_eq!(pos, [1, 4, 0, 3, 6, 2, 5]);
        let id = weight_positions(&KernelKind::VertexToVertex.spec(), WeightsLayout::Identity);
        assert_eq!(id, [0, 1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn plans_execute_bit_identical_to_interpreter() {
        for kind in KernelKind::ALL {
            for layout in [WeightsLayout::Identity, WeightsLayout::RowMajor] {
                let level = 4;
                let op = P2Operator::pseudo_random(11);
                let weights = op.weights(kind).to_vec();
                let src = P2Function::new(level, Fill::PseudoRandom(12)).unwrap();
                let mut want = P2Function::new(level, Fill::Zeros).unwrap();
                reference_apply(&kind.spec(), &weights, &src, &mut want).unwrap();

                let p = plan(kind, level, layout).unwrap();
                let stored = store_weights(&weights, &p.positions);
                let mut got = P2Function::new(level, Fill::Zeros).unwrap();
                p.execute(&stored, &src, &mut got).unwrap();

                for array in ArrayId::ALL {
                    let same = want
                        .component(array)
                        .iter()
                        .zip(got.component(array))
                        .all(|(a, b)| a.to_bits() == b.to_bits());
                    assert!(same, "{} {} {:?}", kind.name(), array.name(), layout);
                }
            }
        }
    }

    #[test]
    fn golden_vertex_kernel_level_10() {
        let generated = generate(
            KernelKind::VertexToVertex,
            10,
            WeightsLayout::RowMajor,
        )
        .unwrap();
        let golden = include_str!("../tests/data/vtv_level10.c");
        assert_eq!(generated.source, golden);
    }

    // regenerates the golden file; run explicitly after intentional emitter
    // changes and review the diff
    #[test]
    #[ignore]
    fn regen_golden() {
        let generated = generate(
            KernelKind::VertexToVertex,
            10,
            WeightsLayout::RowMajor,
        )
        .unwrap();
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/vtv_level10.c");
        std::fs::write(path, generated.source).unwrap();
    }

    #[test]
    fn render_marks_every_weight_once() {
        for kind in KernelKind::ALL {
            let g = generate(kind, 6, WeightsLayout::Identity).unwrap();
            let hoists = g
                .source
                .lines()
                .filter(|l| l.contains("= _data_") && l.contains("const double xi_"))
                .count();
            assert_eq!(hoists, kind.weight_count(), "{}", kind.name());
            assert_eq!(g.source.matches("restrict").count(), g.plan.stores.len() + {
                let spec = kind.spec();
                spec.source_arrays().len() + 1
            });
        }
    }
}
