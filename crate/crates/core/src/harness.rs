//! Driver routines behind the command line: correctness verification,
//! prediction tables, single-core and multi-core benchmarks, and the memory
//! comparison table, plus the CSV writers for all of them.

use std::io::Write;
use std::path::Path;
use std::sync::Barrier;
use std::time::Instant;

use crate::codegen::{self, WeightsLayout};
use crate::ecm::{self, CoreModelKind, EcmPrediction, LcFixture, MachineModel};
use crate::fields::{Fill, P2Function, P2Operator};
use crate::grid::{self, RowSpan};
use crate::kernels::{self, KernelKind};
use crate::sparse::{self, IndexWidth, MemoryFootprint};
use crate::Result;

pub fn online_cpus() -> u32 {
    std::thread::available_parallelism()
        .map(|n| n.get() as u32)
        .unwrap_or(1)
}

/// MemAvailable from /proc/meminfo, if the platform has it.
pub fn available_memory_bytes() -> Option<u64> {
    let text = std::fs::read_to_string("/proc/meminfo").ok()?;
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("MemAvailable:") {
            let kb: u64 = rest.trim().trim_end_matches(" kB").trim().parse().ok()?;
            return Some(kb * 1024);
        }
    }
    None
}

fn fmt_num(v: f64) -> String {
    format!("{v}")
}

#[derive(Debug, Clone)]
pub struct VerifyCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct VerifyReport {
    pub checks: Vec<VerifyCheck>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(VerifyCheck {
            name: name.to_string(),
            passed,
            detail,
        });
    }
}

fn bit_equal(a: &P2Function, b: &P2Function) -> bool {
    grid::ArrayId::ALL.into_iter().all(|arr| {
        a.component(arr)
            .iter()
            .zip(b.component(arr))
            .all(|(x, y)| x.to_bits() == y.to_bits())
    })
}

/// Cross-checks every implementation of the operator against the others up
/// to `max_level` (assembly capped at 6). `dump_dir` keeps the round-trip
/// files instead of a temp directory.
pub fn run_verify(max_level: u32, seeds: u64, dump_dir: Option<&Path>) -> Result<VerifyReport> {
    let mut report = VerifyReport::default();
    let max_level = max_level.max(2);

    {
        let mut ok = true;
        let mut detail = String::new();
        for level in 0..=max_level.min(6) {
            let c = grid::dof_counts(level)?;
            let n = grid::edges_per_side(level) as i64;
            let mut vertices = 0u64;
            let mut edges = 0u64;
            for y in 0..=n {
                for x in 0..=n {
                    vertices += u64::from(grid::is_valid(grid::ArrayId::Vertex, x, y, level));
                    edges += u64::from(grid::is_valid(
                        grid::ArrayId::Edge(grid::Orientation::X),
                        x,
                        y,
                        level,
                    ));
                }
            }
            if vertices != c.vertices || edges != c.edges_per_orientation {
                ok = false;
                detail = format!("level {level}: {vertices}/{edges} vs {c:?}");
                break;
            }
        }
        if ok {
            detail = format!("levels 0..={}", max_level.min(6));
        }
        report.push("dof counts match enumeration", ok, detail);
    }

    {
        let mut worst: Option<String> = None;
        for level in 2..=max_level {
            for seed in 0..seeds {
                let op = P2Operator::pseudo_random(seed);
                let src = P2Function::new(level, Fill::PseudoRandom(seed ^ 0x9e37))?;
                for kind in KernelKind::ALL {
                    let mut direct = P2Function::new(level, Fill::Zeros)?;
                    kernels::apply_kernel(kind, &op, &src, &mut direct)?;
                    let mut interp = P2Function::new(level, Fill::Zeros)?;
                    kernels::reference_apply(
                        &kind.spec(),
                        op.weights(kind),
                        &src,
                        &mut interp,
                    )?;
                    if !bit_equal(&direct, &interp) {
                        worst = Some(format!("{} level {level} seed {seed}", kind.name()));
                    }
                }
            }
        }
        report.push(
            "kernels match interpreter bit for bit",
            worst.is_none(),
            worst.unwrap_or_else(|| format!("levels 2..={max_level}, {seeds} seeds")),
        );
    }

    {
        let mut worst: Option<String> = None;
        for level in 2..=max_level {
            let op = P2Operator::pseudo_random(1);
            let src = P2Function::new(level, Fill::PseudoRandom(2))?;
            for kind in KernelKind::ALL {
                for layout in [WeightsLayout::Identity, WeightsLayout::RowMajor] {
                    let weights = op.weights(kind);
                    let mut interp = P2Function::new(level, Fill::Zeros)?;
                    kernels::reference_apply(&kind.spec(), weights, &src, &mut interp)?;
                    let plan = codegen::plan(kind, level, layout)?;
                    let stored = codegen::store_weights(weights, &plan.positions);
                    let mut planned = P2Function::new(level, Fill::Zeros)?;
                    plan.execute(&stored, &src, &mut planned)?;
                    if !bit_equal(&interp, &planned) {
                        worst = Some(format!(
                            "{} level {level} {}",
                            kind.name(),
                            layout.name()
                        ));
                    }
                }
            }
        }
        report.push(
            "generated access plans match interpreter bit for bit",
            worst.is_none(),
            worst.unwrap_or_else(|| format!("levels 2..={max_level}, both layouts")),
        );
    }

    {
        let mut worst: Option<String> = None;
        for level in 2..=max_level {
            let op = P2Operator::pseudo_random(3);
            let src = P2Function::new(level, Fill::PseudoRandom(4))?;
            let mut four_pass = P2Function::new(level, Fill::Zeros)?;
            kernels::apply_p2(&op, &src, &mut four_pass)?;
            let mut fused = P2Function::new(level, Fill::Zeros)?;
            kernels::apply_p2_fused(&op, &src, &mut fused)?;
            if !bit_equal(&four_pass, &fused) {
                worst = Some(format!("level {level}"));
            }
        }
        report.push(
            "fused composite matches the four passes bit for bit",
            worst.is_none(),
            worst.unwrap_or_else(|| format!("levels 2..={max_level}")),
        );
    }

    {
        let mut worst = 0.0f64;
        let mut place = String::new();
        for level in 2..=max_level.min(6) {
            for seed in 0..seeds {
                let op = P2Operator::pseudo_random(seed);
                let mat = sparse::assemble(&op, level)?;
                let mut src = P2Function::new(level, Fill::PseudoRandom(seed ^ 0x5bd1))?;
                sparse::zero_identity_slots(&mut src)?;
                let mut dst = P2Function::new(level, Fill::Zeros)?;
                kernels::apply_p2(&op, &src, &mut dst)?;
                let x = sparse::p2_to_flat(&src);
                let mut y = vec![0.0; x.len()];
                mat.spmv(&x, &mut y)?;
                let d = sparse::max_rel_diff(&y, &sparse::p2_to_flat(&dst));
                if d > worst {
                    worst = d;
                    place = format!("level {level} seed {seed}");
                }
            }
        }
        report.push(
            "assembled matrix matches kernels (scaled max diff <= 1e-13)",
            worst <= 1e-13,
            format!("worst {worst:.3e} at {place}"),
        );
    }

    {
        let tmp;
        let dir = match dump_dir {
            Some(d) => d,
            None => {
                tmp = std::env::temp_dir().join(format!("tristencil-verify-{}", std::process::id()));
                &tmp
            }
        };
        std::fs::create_dir_all(dir)?;
        let path = dir.join("roundtrip.p2dump");
        let f = P2Function::new(max_level.min(5), Fill::PseudoRandom(42))?;
        f.write_to(std::fs::File::create(&path)?)?;
        let back = P2Function::read_from(std::fs::File::open(&path)?)?;
        let ok = bit_equal(&f, &back);
        if dump_dir.is_none() {
            let _ = std::fs::remove_file(&path);
            let _ = std::fs::remove_dir(dir);
        }
        report.push(
            "field dump round-trip is bit exact",
            ok,
            path.display().to_string(),
        );
    }

    Ok(report)
}

pub fn run_predict(
    machine: &MachineModel,
    fixture: Option<&LcFixture>,
    kinds: &[KernelKind],
    levels: &[u32],
    core: CoreModelKind,
) -> Vec<EcmPrediction> {
    let mut out = Vec::new();
    for &kind in kinds {
        for &level in levels {
            out.push(ecm::predict_at(kind, level, machine, fixture, core));
        }
    }
    out
}

pub fn write_predict_csv<W: Write>(mut w: W, rows: &[EcmPrediction]) -> std::io::Result<()> {
    writeln!(
        w,
        "kernel,level,lc_state,t_ol,t_nol,t_l1l2,t_l2l3,t_l3mem,pred_cycles,pred_gflops"
    )?;
    for p in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{:.3}",
            p.kernel.name(),
            p.level,
            p.lc_label(),
            fmt_num(p.t_ol),
            fmt_num(p.t_nol),
            fmt_num(p.t_l1l2),
            fmt_num(p.t_l2l3),
            fmt_num(p.t_l3mem),
            fmt_num(p.cycles),
            p.gflops
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct BenchResult {
    pub kernel: KernelKind,
    pub level: u32,
    pub sweeps: u32,
    pub seconds: f64,
    pub gflops: f64,
    /// measured time converted to cycles per work unit at the model clock
    pub cycles_per_wu: f64,
    pub prediction: EcmPrediction,
}

#[derive(Debug, Clone)]
pub enum BenchOutcome {
    Done(BenchResult),
    /// level skipped because the fields would not fit in memory
    Skipped {
        kernel: KernelKind,
        level: u32,
        needed_bytes: u64,
        available_bytes: u64,
    },
}

fn sweep_flops(kind: KernelKind, level: u32) -> Result<f64> {
    let dom = kind.domain(level)?;
    let (m, a) = kind.flops();
    Ok(dom.size as f64 * (m + a) as f64)
}

/// Times `body` in doubling batches until one batch runs at least
/// `min_seconds`, returns (batch size, seconds).
fn time_batches<F: FnMut(u32)>(min_seconds: f64, mut body: F) -> (u32, f64) {
    let mut sweeps = 1u32;
    loop {
        let t0 = Instant::now();
        body(sweeps);
        let dt = t0.elapsed().as_secs_f64();
        if dt >= min_seconds || sweeps >= 1 << 24 {
            return (sweeps, dt.max(1e-12));
        }
        sweeps = sweeps.saturating_mul(2);
    }
}

pub fn run_bench(
    machine: &MachineModel,
    fixture: Option<&LcFixture>,
    kinds: &[KernelKind],
    levels: &[u32],
    core: CoreModelKind,
    seed: u64,
    min_seconds: f64,
) -> Result<Vec<BenchOutcome>> {
    let mut out = Vec::new();
    for &level in levels {
        let needed = 2 * 8 * grid::dof_counts(level)?.total;
        if let Some(avail) = available_memory_bytes() {
            if needed > avail / 10 * 8 {
                for &kind in kinds {
                    out.push(BenchOutcome::Skipped {
                        kernel: kind,
                        level,
                        needed_bytes: needed,
                        available_bytes: avail,
                    });
                }
                continue;
            }
        }
        let op = P2Operator::pseudo_random(seed);
        let src = P2Function::new(level, Fill::PseudoRandom(seed ^ 0xabcd))?;
        let mut dst = P2Function::new(level, Fill::Zeros)?;
        for &kind in kinds {
            kernels::apply_kernel(kind, &op, &src, &mut dst)?;
            let (sweeps, seconds) = time_batches(min_seconds, |n| {
                for _ in 0..n {
                    kernels::apply_kernel(kind, &op, &src, &mut dst).unwrap();
                }
            });
            std::hint::black_box(&dst);
            let flops = sweep_flops(kind, level)?;
            let per_sweep = seconds / sweeps as f64;
            let work_units = kind.domain(level)?.size as f64 / ecm::WORK_UNIT_ITERS as f64;
            out.push(BenchOutcome::Done(BenchResult {
                kernel: kind,
                level,
                sweeps,
                seconds,
                gflops: flops / per_sweep / 1e9,
                cycles_per_wu: per_sweep * machine.frequency_ghz * 1e9 / work_units,
                prediction: ecm::predict_at(kind, level, machine, fixture, core),
            }));
        }
    }
    Ok(out)
}

pub fn write_bench_csv<W: Write>(mut w: W, rows: &[BenchOutcome]) -> std::io::Result<()> {
    writeln!(
        w,
        "kernel,level,sweeps,seconds,meas_gflops,meas_cycles_per_wu,pred_gflops,pred_cycles,lc_state"
    )?;
    for row in rows {
        match row {
            BenchOutcome::Done(b) => writeln!(
                w,
                "{},{},{},{:.6},{:.3},{:.3},{:.3},{},{}",
                b.kernel.name(),
                b.level,
                b.sweeps,
                b.seconds,
                b.gflops,
                b.cycles_per_wu,
                b.prediction.gflops,
                fmt_num(b.prediction.cycles),
                b.prediction.lc_label()
            )?,
            BenchOutcome::Skipped { kernel, level, .. } => {
                writeln!(w, "{},{},skipped,,,,,,", kernel.name(), level)?
            }
        }
    }
    Ok(())
}

#[cfg(target_os = "linux")]
fn pin_to_cpu(cpu: usize) {
    // best effort; failure only costs pinning, not correctness
    unsafe {
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        libc::CPU_ZERO(&mut set);
        libc::CPU_SET(cpu % libc::CPU_SETSIZE as usize, &mut set);
        libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &set);
    }
}

#[cfg(not(target_os = "linux"))]
fn pin_to_cpu(_cpu: usize) {}

/// Splits the rows into `parts` contiguous chunks of roughly equal point
/// counts. Trailing chunks may be empty when there are more parts than rows.
fn partition_rows(rows: &[RowSpan], parts: u32) -> Vec<Vec<RowSpan>> {
    let total: u64 = rows.iter().map(|r| (r.x_end - r.x_begin) as u64).sum();
    let mut chunks = vec![Vec::new(); parts as usize];
    let mut done = 0u64;
    let mut part = 0usize;
    for row in rows {
        while part + 1 < parts as usize && done * parts as u64 >= total * (part as u64 + 1) {
            part += 1;
        }
        chunks[part].push(*row);
        done += (row.x_end - row.x_begin) as u64;
    }
    chunks
}

/// Splits one target component into per-chunk sub-slices. Chunks hold
/// contiguous row runs, so each gets the full flat range from its first row's
/// start to the end of its last row; empty chunks get empty slices.
fn split_segments<'a>(
    mut comp: &'a mut [f64],
    bounds: &[Option<(u64, u64)>],
) -> Vec<&'a mut [f64]> {
    let mut out = Vec::with_capacity(bounds.len());
    let mut cursor = 0u64;
    for b in bounds {
        match *b {
            None => out.push(Default::default()),
            Some((start, end)) => {
                let rest = std::mem::take(&mut comp);
                let (_, rest) = rest.split_at_mut((start - cursor) as usize);
                let (seg, rest) = rest.split_at_mut((end - start) as usize);
                comp = rest;
                cursor = end;
                out.push(seg);
            }
        }
    }
    out
}

/// Runs `reps` whole sweeps with one thread per chunk, each thread writing
/// its rows through the same specialized kernel bodies as [`kernels::apply_kernel`].
/// Returns the wall seconds between the start and finish barriers.
fn parallel_sweeps(
    kind: KernelKind,
    op: &P2Operator,
    src: &P2Function,
    dst: &mut P2Function,
    level: u32,
    chunks: &[Vec<RowSpan>],
    reps: u32,
) -> f64 {
    // all targets of one kernel share a row layout, so one bounds list serves
    let layout = kind.spec().targets[0].target;
    let bounds: Vec<Option<(u64, u64)>> = chunks
        .iter()
        .map(|c| {
            c.first().map(|first| {
                let last = c.last().unwrap();
                (
                    grid::row_start(layout, first.y, level),
                    grid::row_start(layout, last.y + 1, level),
                )
            })
        })
        .collect();
    let comps: Vec<&mut [f64]> = match kind {
        KernelKind::VertexToVertex | KernelKind::EdgeToVertex => {
            vec![dst.vertex.as_mut_slice()]
        }
        KernelKind::VertexToEdge | KernelKind::EdgeToEdge => vec![
            dst.edge_x.as_mut_slice(),
            dst.edge_y.as_mut_slice(),
            dst.edge_xy.as_mut_slice(),
        ],
    };
    // per chunk, one output slice per target component
    let mut outs: Vec<Vec<&mut [f64]>> = (0..chunks.len()).map(|_| Vec::new()).collect();
    for comp in comps {
        for (chunk_outs, seg) in outs.iter_mut().zip(split_segments(comp, &bounds)) {
            chunk_outs.push(seg);
        }
    }

    let barrier = Barrier::new(chunks.len() + 1);
    std::thread::scope(|s| {
        for (i, (chunk, mut chunk_outs)) in chunks.iter().zip(outs).enumerate() {
            let barrier = &barrier;
            let d_off = bounds[i].map(|(start, _)| start as i64).unwrap_or(0);
            s.spawn(move || {
                pin_to_cpu(i);
                barrier.wait();
                for _ in 0..reps {
                    kernels::apply_kernel_rows(kind, op, src, &mut chunk_outs, d_off, chunk);
                }
                barrier.wait();
            });
        }
        barrier.wait();
        let t0 = Instant::now();
        barrier.wait();
        t0.elapsed().as_secs_f64()
    })
}

#[derive(Debug, Clone)]
pub struct ScalePoint {
    pub threads: u32,
    pub sweeps: u32,
    pub seconds: f64,
    pub gflops: f64,
    /// measured speedup over the 1-thread point of the same run
    pub speedup: f64,
    pub predicted_multiple: f64,
    pub predicted_gflops: f64,
}

/// Thread-scaling benchmark of one kernel: rows are split across threads,
/// every thread is pinned, and the model curve is reported next to the
/// measurement.
pub fn run_scale(
    kind: KernelKind,
    level: u32,
    thread_counts: &[u32],
    machine: &MachineModel,
    fixture: Option<&LcFixture>,
    core: CoreModelKind,
    seed: u64,
    min_seconds: f64,
) -> Result<Vec<ScalePoint>> {
    let dom = kind.domain(level)?;
    let op = P2Operator::pseudo_random(seed);
    let src = P2Function::new(level, Fill::PseudoRandom(seed ^ 0x7777))?;
    let mut dst = P2Function::new(level, Fill::Zeros)?;
    let single = ecm::predict_at(kind, level, machine, fixture, core);
    let flops = sweep_flops(kind, level)?;

    let mut points: Vec<ScalePoint> = Vec::new();
    for &threads in thread_counts {
        let threads = threads.max(1);
        let chunks = partition_rows(&dom.rows, threads);
        let (sweeps, seconds) = {
            let mut reps = 1u32;
            loop {
                let dt = parallel_sweeps(kind, &op, &src, &mut dst, level, &chunks, reps);
                if dt >= min_seconds || reps >= 1 << 24 {
                    break (reps, dt.max(1e-12));
                }
                reps = reps.saturating_mul(2);
            }
        };
        let gflops = flops * sweeps as f64 / seconds / 1e9;
        let base = points.first().map(|p| p.gflops).unwrap_or(gflops);
        points.push(ScalePoint {
            threads,
            sweeps,
            seconds,
            gflops,
            speedup: gflops / base,
            predicted_multiple: ecm::scaling_multiple(&single, machine, threads),
            predicted_gflops: single.gflops * ecm::scaling_multiple(&single, machine, threads),
        });
    }
    Ok(points)
}

pub fn write_scale_csv<W: Write>(mut w: W, rows: &[ScalePoint]) -> std::io::Result<()> {
    writeln!(
        w,
        "threads,sweeps,seconds,meas_gflops,meas_speedup,pred_multiple,pred_gflops"
    )?;
    for p in rows {
        writeln!(
            w,
            "{},{},{:.6},{:.3},{:.3},{},{:.3}",
            p.threads,
            p.sweeps,
            p.seconds,
            p.gflops,
            p.speedup,
            fmt_num(p.predicted_multiple),
            p.predicted_gflops
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct MemoryRow {
    pub level: u32,
    pub crs32: MemoryFootprint,
    pub crs64: MemoryFootprint,
}

pub fn run_memory(levels: &[u32]) -> Result<Vec<MemoryRow>> {
    levels
        .iter()
        .map(|&level| {
            Ok(MemoryRow {
                level,
                crs32: sparse::footprint(level, IndexWidth::U32)?,
                crs64: sparse::footprint(level, IndexWidth::U64)?,
            })
        })
        .collect()
}

pub fn write_memory_csv<W: Write>(mut w: W, rows: &[MemoryRow]) -> std::io::Result<()> {
    writeln!(
        w,
        "level,crs32_bytes,crs64_bytes,matrixfree_bytes,hyteg_bytes,ratio_crs32_matrixfree,ratio_crs32_hyteg"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{:.3},{:.3}",
            r.level,
            r.crs32.crs_total_bytes,
            r.crs64.crs_total_bytes,
            r.crs32.matrix_free_bytes,
            r.crs32.stream_bytes,
            r.crs32.ratio_vs_matrix_free(),
            r.crs32.ratio_vs_stream()
        )?;
    }
    Ok(())
}
