//! Analytical performance model for the stencil kernels.
//!
//! The model works in units of one cache line of output, eight sweep
//! iterations (eight f64 fill a 64-byte line, matching one AVX-512 vector
//! per instruction). Per work unit it combines an in-core throughput
//! estimate with the line traffic every memory level has to move, sums the
//! non-overlapping parts down to wherever the data set lives, and takes the
//! maximum with the overlapping core time. Runtime and GFLOP/s follow from
//! cycles per work unit and the clock.

use std::path::Path;

use crate::grid::{self, ArrayId};
use crate::kernels::KernelKind;
use crate::{Error, Result};

/// Iterations folded into one model step.
pub const WORK_UNIT_ITERS: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Duplex {
    Half,
    Full,
}

/// Measured sustained memory bandwidth for one load:store mix.
#[derive(Debug, Clone, Copy)]
pub struct BandwidthEntry {
    pub loads: u32,
    pub stores: u32,
    pub gbytes_per_sec: f64,
    /// measured cycles one line costs at this mix; close to what frequency
    /// and bandwidth imply but keeps the benchmark's rounding
    pub cycles_per_line: f64,
}

impl BandwidthEntry {
    fn log_ratio(&self) -> f64 {
        (self.loads as f64 / self.stores as f64).ln()
    }

    fn store_share(&self) -> f64 {
        self.stores as f64 / (self.loads + self.stores) as f64
    }
}

/// Cycles one cache line costs at a given sustained bandwidth and clock.
pub fn cycles_per_cacheline(gbytes_per_sec: f64, frequency_ghz: f64, cacheline_bytes: u32) -> f64 {
    cacheline_bytes as f64 * frequency_ghz / gbytes_per_sec
}

/// Cache and bandwidth description of one machine.
#[derive(Debug, Clone)]
pub struct MachineModel {
    pub name: String,
    pub frequency_ghz: f64,
    pub cores_per_socket: u32,
    pub sockets: u32,
    pub cacheline_bytes: u32,
    pub l1_bytes: u64,
    pub l2_bytes: u64,
    pub l3_bytes: u64,
    pub l1l2_bytes_per_cycle: f64,
    pub l2l3_bytes_per_cycle: f64,
    pub l1l2_duplex: Duplex,
    pub l2l3_duplex: Duplex,
    pub bandwidths: Vec<BandwidthEntry>,
}

impl MachineModel {
    /// Dual-socket Xeon Platinum 8174 at its AVX-512 base clock. The shared
    /// 33 MB L3 is sized in decimal bytes; both private caches are exact
    /// powers of two.
    pub fn skx_8174() -> Self {
        MachineModel {
            name: "skx-8174".to_string(),
            frequency_ghz: 2.7,
            cores_per_socket: 24,
            sockets: 2,
            cacheline_bytes: 64,
            l1_bytes: 32_768,
            l2_bytes: 1_048_576,
            l3_bytes: 33_000_000,
            l1l2_bytes_per_cycle: 64.0,
            l2l3_bytes_per_cycle: 16.0,
            l1l2_duplex: Duplex::Half,
            l2l3_duplex: Duplex::Full,
            bandwidths: vec![
                BandwidthEntry {
                    loads: 1,
                    stores: 1,
                    gbytes_per_sec: 70.0,
                    cycles_per_line: 2.5,
                },
                BandwidthEntry {
                    loads: 3,
                    stores: 1,
                    gbytes_per_sec: 87.0,
                    cycles_per_line: 2.0,
                },
                BandwidthEntry {
                    loads: 1,
                    stores: 3,
                    gbytes_per_sec: 60.0,
                    cycles_per_line: 2.9,
                },
            ],
        }
    }

    pub fn total_cores(&self) -> u32 {
        self.cores_per_socket * self.sockets
    }

    /// Picks the bandwidth measurement whose load:store mix is closest to
    /// the requested one (exact ratio match first, then nearest on a log
    /// scale, ties toward the more store-heavy entry).
    pub fn select_bandwidth(&self, loads: u32, stores: u32) -> &BandwidthEntry {
        let target = (loads as f64 / stores as f64).ln();
        let mut best = &self.bandwidths[0];
        let mut best_diff = (best.log_ratio() - target).abs();
        for e in &self.bandwidths[1..] {
            let diff = (e.log_ratio() - target).abs();
            if diff + 1e-12 < best_diff
                || ((diff - best_diff).abs() <= 1e-12 && e.store_share() > best.store_share())
            {
                best = e;
                best_diff = diff;
            }
        }
        best
    }

    pub fn from_file<P: AsRef<Path>>(path: P) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parses the `key = value` machine format. Cache sizes and bandwidths
    /// are mandatory; duplex modes, socket count and per-mix cycle costs
    /// have defaults (`half`/`full`, 2, derived from the bandwidth).
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: origin.to_string(),
            line,
            msg,
        };
        let mut name = None;
        let mut plain: Vec<(usize, String, String)> = Vec::new();
        // (loads, stores) -> (gbytes_per_sec, cycles_per_line)
        let mut bw: Vec<(u32, u32, Option<f64>, Option<f64>)> = Vec::new();

        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(line_no, format!("expected key = value, got {raw:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if key == "name" {
                name = Some(value.to_string());
                continue;
            }
            if let Some(spec) = key.strip_prefix("bw.") {
                let (mix, field) = spec
                    .split_once('_')
                    .ok_or_else(|| err(line_no, format!("bad bandwidth key {key:?}")))?;
                let (l, s) = mix
                    .strip_suffix('s')
                    .and_then(|m| m.split_once('l'))
                    .ok_or_else(|| err(line_no, format!("bad load:store mix {mix:?}")))?;
                let loads: u32 = l
                    .parse()
                    .map_err(|_| err(line_no, format!("bad load count {l:?}")))?;
                let stores: u32 = s
                    .parse()
                    .map_err(|_| err(line_no, format!("bad store count {s:?}")))?;
                let v: f64 = value
                    .parse()
                    .map_err(|_| err(line_no, format!("bad number {value:?}")))?;
                let entry = match bw.iter_mut().find(|e| e.0 == loads && e.1 == stores) {
                    Some(e) => e,
                    None => {
                        bw.push((loads, stores, None, None));
                        bw.last_mut().unwrap()
                    }
                };
                match field {
                    "gbs" => entry.2 = Some(v),
                    "cycl" => entry.3 = Some(v),
                    _ => return Err(err(line_no, format!("bad bandwidth field {field:?}"))),
                }
                continue;
            }
            plain.push((line_no, key.to_string(), value.to_string()));
        }

        let mut take = |key: &str| -> Option<(usize, String)> {
            plain
                .iter()
                .position(|(_, k, _)| k == key)
                .map(|i| {
                    let (l, _, v) = plain.remove(i);
                    (l, v)
                })
        };
        let mut f64_key = |key: &str| -> Result<f64> {
            let (line, v) = take(key).ok_or_else(|| err(0, format!("missing key {key}")))?;
            v.parse()
                .map_err(|_| err(line, format!("bad number {v:?} for {key}")))
        };
        let frequency_ghz = f64_key("frequency_ghz")?;
        let cores_per_socket = f64_key("cores_per_socket")? as u32;
        let cacheline_bytes = f64_key("cacheline_bytes")? as u32;
        let l1_bytes = f64_key("l1_bytes")? as u64;
        let l2_bytes = f64_key("l2_bytes")? as u64;
        let l3_bytes = f64_key("l3_bytes")? as u64;
        let l1l2_bytes_per_cycle = f64_key("l1l2_bytes_per_cycle")?;
        let l2l3_bytes_per_cycle = f64_key("l2l3_bytes_per_cycle")?;
        let sockets = match take("sockets") {
            Some((line, v)) => v
                .parse()
                .map_err(|_| err(line, format!("bad socket count {v:?}")))?,
            None => 2,
        };
        let duplex = |taken: Option<(usize, String)>, dflt| -> Result<Duplex> {
            match taken {
                None => Ok(dflt),
                Some((_, v)) if v == "half" => Ok(Duplex::Half),
                Some((_, v)) if v == "full" => Ok(Duplex::Full),
                Some((line, v)) => Err(err(line, format!("bad duplex mode {v:?}"))),
            }
        };
        let l1l2_duplex = duplex(take("l1l2_duplex"), Duplex::Half)?;
        let l2l3_duplex = duplex(take("l2l3_duplex"), Duplex::Full)?;
        if let Some((line, key, _)) = plain.first() {
            return Err(err(*line, format!("unknown key {key:?}")));
        }

        let mut bandwidths = Vec::new();
        for (loads, stores, gbs, cycl) in bw {
            let gbytes_per_sec = gbs.ok_or_else(|| {
                err(0, format!("bandwidth mix {loads}l{stores}s has no bw.*_gbs"))
            })?;
            bandwidths.push(BandwidthEntry {
                loads,
                stores,
                gbytes_per_sec,
                cycles_per_line: cycl.unwrap_or_else(|| {
                    cycles_per_cacheline(gbytes_per_sec, frequency_ghz, cacheline_bytes)
                }),
            });
        }
        if bandwidths.is_empty() {
            return Err(err(0, "no bandwidth entries".to_string()));
        }
        Ok(MachineModel {
            name: name.unwrap_or_else(|| origin.to_string()),
            frequency_ghz,
            cores_per_socket,
            sockets,
            cacheline_bytes,
            l1_bytes,
            l2_bytes,
            l3_bytes,
            l1l2_bytes_per_cycle,
            l2l3_bytes_per_cycle,
            l1l2_duplex,
            l2l3_duplex,
            bandwidths,
        })
    }
}

/// Where a source line comes from within one sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessClass {
    /// first touch of the line in this sweep
    New,
    /// a read further right in the same row already pulled the line
    L1Resident,
    /// last touched this many rows earlier; hits only while the caches can
    /// hold that many rows
    RowReuse { rows: u32 },
}

#[derive(Debug, Clone, Copy)]
pub struct ClassifiedAccess {
    pub array: ArrayId,
    pub dx: i8,
    pub dy: i8,
    pub class: AccessClass,
}

/// Classifies every distinct source offset of the kernel. Two reads of the
/// same array at the same offset count once; the leading read of a row
/// (largest dx per dy) carries the traffic, trailing ones are L1 hits.
pub fn classify_accesses(spec: &crate::kernels::StencilAccessSpec) -> Vec<ClassifiedAccess> {
    let mut offsets: Vec<(ArrayId, i8, i8)> = Vec::new();
    for t in &spec.targets {
        for a in &t.accesses {
            let key = (a.source, a.dx, a.dy);
            if !offsets.contains(&key) {
                offsets.push(key);
            }
        }
    }
    offsets
        .iter()
        .map(|&(array, dx, dy)| {
            let trailing = offsets
                .iter()
                .any(|&(a2, dx2, dy2)| a2 == array && dy2 == dy && dx2 > dx);
            let class = if trailing {
                AccessClass::L1Resident
            } else {
                match offsets
                    .iter()
                    .filter(|&&(a2, _, dy2)| a2 == array && dy2 > dy)
                    .map(|&(_, _, dy2)| (dy2 - dy) as u32)
                    .min()
                {
                    Some(rows) => AccessClass::RowReuse { rows },
                    None => AccessClass::New,
                }
            };
            ClassifiedAccess {
                array,
                dx,
                dy,
                class,
            }
        })
        .collect()
}

/// Line traffic of one work unit, before any cache sizing is applied.
#[derive(Debug, Clone, Copy)]
pub struct TrafficCounts {
    pub new_lines: u32,
    pub l1_hits: u32,
    pub row_reuse: u32,
    pub store_streams: u32,
    pub distinct_loads: u32,
}

pub fn traffic_counts(spec: &crate::kernels::StencilAccessSpec) -> TrafficCounts {
    let classes = classify_accesses(spec);
    let count = |f: fn(&AccessClass) -> bool| classes.iter().filter(|c| f(&c.class)).count() as u32;
    TrafficCounts {
        new_lines: count(|c| matches!(c, AccessClass::New)),
        l1_hits: count(|c| matches!(c, AccessClass::L1Resident)),
        row_reuse: count(|c| matches!(c, AccessClass::RowReuse { .. })),
        store_streams: spec.targets.len() as u32,
        distinct_loads: classes.len() as u32,
    }
}

/// Rows a sweep must keep resident for its row reuse to hit: one row per
/// source array row touched plus one per written array.
pub fn reuse_rows(spec: &crate::kernels::StencilAccessSpec) -> u64 {
    let mut total = spec.targets.len() as u64;
    for array in spec.source_arrays() {
        let dys: Vec<i8> = spec
            .targets
            .iter()
            .flat_map(|t| &t.accesses)
            .filter(|a| a.source == array)
            .map(|a| a.dy)
            .collect();
        let lo = *dys.iter().min().unwrap();
        let hi = *dys.iter().max().unwrap();
        total += (hi - lo) as u64 + 1;
    }
    total
}

/// True when a cache of the given size holds the sweep's active rows (rows
/// are about `n` doubles long at refinement `level`).
pub fn layer_condition(
    spec: &crate::kernels::StencilAccessSpec,
    level: u32,
    cache_bytes: u64,
) -> bool {
    let n = grid::edges_per_side(level);
    reuse_rows(spec) * n * 8 <= cache_bytes
}

/// Last refinement level at which [`layer_condition`] still holds.
pub fn last_level_with_row_reuse(
    spec: &crate::kernels::StencilAccessSpec,
    cache_bytes: u64,
) -> Option<u32> {
    (0..=grid::MAX_LEVEL)
        .take_while(|&l| layer_condition(spec, l, cache_bytes))
        .last()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum CacheLevel {
    L1,
    L2,
    L3,
    Mem,
}

impl CacheLevel {
    pub fn name(self) -> &'static str {
        match self {
            CacheLevel::L1 => "L1",
            CacheLevel::L2 => "L2",
            CacheLevel::L3 => "L3",
            CacheLevel::Mem => "MEM",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "L1" => Some(CacheLevel::L1),
            "L2" => Some(CacheLevel::L2),
            "L3" => Some(CacheLevel::L3),
            "MEM" => Some(CacheLevel::Mem),
            _ => None,
        }
    }
}

/// Bytes of all arrays one kernel sweep touches (source and destination
/// fields counted separately).
pub fn touched_bytes(kind: KernelKind, level: u32) -> u64 {
    let spec = kind.spec();
    let arrays = spec
        .targets
        .iter()
        .map(|t| t.target)
        .chain(spec.source_arrays());
    arrays.map(|a| 8 * grid::array_len(a, level)).sum()
}

/// Innermost memory level that fits the sweep's working set (L2 at best;
/// the L1 never holds whole arrays at interesting sizes).
pub fn dataset_home(kind: KernelKind, level: u32, m: &MachineModel) -> CacheLevel {
    let bytes = touched_bytes(kind, level);
    if bytes <= m.l2_bytes {
        CacheLevel::L2
    } else if bytes <= m.l3_bytes {
        CacheLevel::L3
    } else {
        CacheLevel::Mem
    }
}

/// Cache situation of one kernel at one level: whether row reuse still hits
/// L1, how many reused lines per work unit miss L2, and where the data set
/// lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LcState {
    pub reuse_in_l1: bool,
    pub reuse_l2_misses: u32,
    pub home: CacheLevel,
}

impl LcState {
    /// Short form like `L1|L3` or `L2|MEM|m2` (reuse source, data home,
    /// optional partial L2 miss count).
    pub fn label(&self, total_row_reuse: u32) -> String {
        let reuse = if self.reuse_in_l1 {
            "L1"
        } else if self.reuse_l2_misses == 0 {
            "L2"
        } else if self.reuse_l2_misses >= total_row_reuse {
            "L3"
        } else {
            "L2"
        };
        let partial = self.reuse_l2_misses > 0 && self.reuse_l2_misses < total_row_reuse;
        if partial {
            format!("{}|{}|m{}", reuse, self.home.name(), self.reuse_l2_misses)
        } else {
            format!("{}|{}", reuse, self.home.name())
        }
    }
}

/// Predicts the cache situation from the machine model alone.
pub fn computed_lc_state(kind: KernelKind, level: u32, m: &MachineModel) -> LcState {
    let spec = kind.spec();
    let counts = traffic_counts(&spec);
    let l2_holds = layer_condition(&spec, level, m.l2_bytes);
    LcState {
        reuse_in_l1: layer_condition(&spec, level, m.l1_bytes),
        reuse_l2_misses: if l2_holds { 0 } else { counts.row_reuse },
        home: dataset_home(kind, level, m),
    }
}

/// One row of a pinned cache-state table.
#[derive(Debug, Clone, Copy)]
pub struct LcFixtureEntry {
    pub kernel: KernelKind,
    pub level_lo: u32,
    pub level_hi: u32,
    /// level that serves the row-reuse reads
    pub reuse: CacheLevel,
    pub home: CacheLevel,
    /// measured partial L2 miss count, overriding the all-or-nothing rule
    pub l2_miss_override: Option<u32>,
}

/// Cache states pinned per kernel and level range, typically taken from
/// hardware-counter runs instead of the pure model.
#[derive(Debug, Clone)]
pub struct LcFixture {
    pub entries: Vec<LcFixtureEntry>,
}

impl LcFixture {
    /// The built-in table for the default machine, levels 7 through 14.
    pub fn reference() -> Self {
        use CacheLevel::{Mem, L1, L2, L3};
        use KernelKind::{EdgeToEdge as Ete, EdgeToVertex as Etv, VertexToEdge as Vte,
                         VertexToVertex as Vtv};
        let row = |kernel, lo, hi, reuse, home, l2: Option<u32>| LcFixtureEntry {
            kernel,
            level_lo: lo,
            level_hi: hi,
            reuse,
            home,
            l2_miss_override: l2,
        };
        LcFixture {
            entries: vec![
                row(Vtv, 7, 10, L1, L3, None),
                row(Vtv, 11, 14, L2, Mem, None),
                row(Etv, 7, 8, L1, L3, None),
                row(Etv, 9, 10, L2, L3, None),
                row(Etv, 11, 14, L2, Mem, Some(2)),
                row(Vte, 7, 9, L1, L3, None),
                row(Vte, 10, 10, L3, L3, None),
                row(Vte, 11, 14, L3, Mem, None),
                row(Ete, 7, 8, L1, L3, None),
                row(Ete, 9, 14, L2, Mem, None),
            ],
        }
    }

    pub fn from_file<P: AsRef<Path>>(path: P) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Line format: `kernel lo..hi reuse home [l2_miss=N]`, levels inclusive,
    /// `#` comments.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: origin.to_string(),
            line,
            msg,
        };
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.len() < 4 || tokens.len() > 5 {
                return Err(err(line_no, format!("expected 4 or 5 fields, got {raw:?}")));
            }
            let kernel = KernelKind::parse(tokens[0])
                .map_err(|_| err(line_no, format!("unknown kernel {:?}", tokens[0])))?;
            let (lo, hi) = tokens[1]
                .split_once("..")
                .ok_or_else(|| err(line_no, format!("bad level range {:?}", tokens[1])))?;
            let level_lo: u32 = lo
                .parse()
                .map_err(|_| err(line_no, format!("bad level {lo:?}")))?;
            let level_hi: u32 = hi
                .parse()
                .map_err(|_| err(line_no, format!("bad level {hi:?}")))?;
            if level_lo > level_hi {
                return Err(err(line_no, format!("empty level range {}", tokens[1])));
            }
            let reuse = CacheLevel::parse(tokens[2])
                .filter(|&c| c != CacheLevel::Mem)
                .ok_or_else(|| err(line_no, format!("bad reuse level {:?}", tokens[2])))?;
            let home = CacheLevel::parse(tokens[3])
                .filter(|&c| c != CacheLevel::L1)
                .ok_or_else(|| err(line_no, format!("bad home level {:?}", tokens[3])))?;
            let l2_miss_override = match tokens.get(4) {
                None => None,
                Some(t) => Some(
                    t.strip_prefix("l2_miss=")
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| err(line_no, format!("bad option {t:?}")))?,
                ),
            };
            entries.push(LcFixtureEntry {
                kernel,
                level_lo,
                level_hi,
                reuse,
                home,
                l2_miss_override,
            });
        }
        Ok(LcFixture { entries })
    }

    pub fn entry(&self, kernel: KernelKind, level: u32) -> Option<&LcFixtureEntry> {
        self.entries
            .iter()
            .find(|e| e.kernel == kernel && (e.level_lo..=e.level_hi).contains(&level))
    }

    pub fn state(&self, kernel: KernelKind, level: u32) -> Option<LcState> {
        self.entry(kernel, level).map(|e| {
            let total = traffic_counts(&kernel.spec()).row_reuse;
            let misses = e.l2_miss_override.unwrap_or(match e.reuse {
                CacheLevel::L1 | CacheLevel::L2 => 0,
                _ => total,
            });
            LcState {
                reuse_in_l1: e.reuse == CacheLevel::L1,
                reuse_l2_misses: misses,
                home: e.home,
            }
        })
    }
}

/// Core cycles per work unit, split into the part that can overlap with
/// data transfers (arithmetic) and the part that cannot (load/store work).
#[derive(Debug, Clone, Copy)]
pub struct CoreCycles {
    pub t_ol: f64,
    pub t_nol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoreModelKind {
    /// static port-throughput analysis of the compiled AVX-512 loop bodies
    Measured,
    /// two-port sketch: one fused multiply per cycle, one load per cycle
    /// with stores costing two slots
    Simple,
}

pub fn core_cycles(kind: KernelKind, model: CoreModelKind) -> CoreCycles {
    match model {
        CoreModelKind::Measured => {
            let (t_ol, t_nol) = match kind {
                KernelKind::VertexToVertex => (10.0, 8.0),
                KernelKind::EdgeToVertex => (24.0, 12.0),
                KernelKind::VertexToEdge => (14.8, 12.0),
                KernelKind::EdgeToEdge => (20.0, 10.0),
            };
            CoreCycles { t_ol, t_nol }
        }
        CoreModelKind::Simple => {
            let counts = traffic_counts(&kind.spec());
            CoreCycles {
                t_ol: kind.flops().0 as f64,
                t_nol: counts.distinct_loads.max(2 * counts.store_streams) as f64,
            }
        }
    }
}

pub fn flops_per_work_unit(kind: KernelKind) -> u32 {
    let (m, a) = kind.flops();
    WORK_UNIT_ITERS * (m + a)
}

/// Full decomposition for one kernel at one level, cycles per work unit.
#[derive(Debug, Clone, Copy)]
pub struct EcmPrediction {
    pub kernel: KernelKind,
    pub level: u32,
    pub lc: LcState,
    pub t_ol: f64,
    pub t_nol: f64,
    pub t_l1l2: f64,
    pub t_l2l3: f64,
    pub t_l3mem: f64,
    pub cycles: f64,
    pub gflops: f64,
}

impl EcmPrediction {
    pub fn lc_label(&self) -> String {
        self.lc
            .label(traffic_counts(&self.kernel.spec()).row_reuse)
    }
}

/// Combines core model, traffic counts and cache state into the predicted
/// cycles per work unit. Transfer terms below the data set's home level are
/// zero; the rest add up and compete with the overlapping core time.
pub fn predict(
    kind: KernelKind,
    level: u32,
    lc: LcState,
    m: &MachineModel,
    core: CoreCycles,
) -> EcmPrediction {
    let counts = traffic_counts(&kind.spec());
    let cl = m.cacheline_bytes as f64;
    let stores = counts.store_streams;
    let write_allocates = stores;
    let new = counts.new_lines;

    let mut l1l2_lines = new + write_allocates;
    if !lc.reuse_in_l1 {
        l1l2_lines += counts.row_reuse;
    }
    if m.l1l2_duplex == Duplex::Half {
        l1l2_lines += stores;
    }
    let t_l1l2 = l1l2_lines as f64 * cl / m.l1l2_bytes_per_cycle;

    let t_l2l3 = if lc.home >= CacheLevel::L3 {
        let mut lines = new + write_allocates + lc.reuse_l2_misses;
        if m.l2l3_duplex == Duplex::Half {
            lines += stores;
        }
        lines as f64 * cl / m.l2l3_bytes_per_cycle
    } else {
        0.0
    };

    let t_l3mem = if lc.home == CacheLevel::Mem {
        let bw = m.select_bandwidth(new, stores);
        (new + stores) as f64 * bw.cycles_per_line
    } else {
        0.0
    };

    let cycles = core.t_ol.max(core.t_nol + t_l1l2 + t_l2l3 + t_l3mem);
    let gflops = flops_per_work_unit(kind) as f64 * m.frequency_ghz / cycles;
    EcmPrediction {
        kernel: kind,
        level,
        lc,
        t_ol: core.t_ol,
        t_nol: core.t_nol,
        t_l1l2,
        t_l2l3,
        t_l3mem,
        cycles,
        gflops,
    }
}

/// Prediction at a level, taking the cache state from the fixture when it
/// covers the level and from the pure model otherwise.
pub fn predict_at(
    kind: KernelKind,
    level: u32,
    m: &MachineModel,
    fixture: Option<&LcFixture>,
    core_model: CoreModelKind,
) -> EcmPrediction {
    let lc = fixture
        .and_then(|f| f.state(kind, level))
        .unwrap_or_else(|| computed_lc_state(kind, level, m));
    predict(kind, level, lc, m, core_cycles(kind, core_model))
}

/// Cores after which the memory interface is saturated; unbounded for
/// cache-resident data sets.
pub fn saturation_threads(p: &EcmPrediction) -> Option<u32> {
    if p.t_l3mem > 0.0 {
        Some((p.cycles / p.t_l3mem).ceil() as u32)
    } else {
        None
    }
}

/// Expected speedup over one core when running `threads` cores, filling one
/// socket before the next. Each socket saturates independently.
pub fn scaling_multiple(p: &EcmPrediction, m: &MachineModel, threads: u32) -> f64 {
    let cap = saturation_threads(p)
        .map(f64::from)
        .unwrap_or(f64::INFINITY);
    let mut remaining = threads;
    let mut total = 0.0;
    for _ in 0..m.sockets.max(1) {
        let on_socket = remaining.min(m.cores_per_socket);
        total += (on_socket as f64).min(cap);
        remaining -= on_socket;
    }
    // threads beyond the physical cores only oversubscribe
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(kind: KernelKind) -> (u32, u32, u32, u32) {
        let c = traffic_counts(&kind.spec());
        (c.new_lines, c.l1_hits, c.row_reuse, c.store_streams)
    }

    #[test]
    fn classification_quadruples() {
        assert_eq!(quad(KernelKind::VertexToVertex), (1, 4, 2, 1));
        assert_eq!(quad(KernelKind::EdgeToVertex), (3, 5, 4, 1));
        assert_eq!(quad(KernelKind::VertexToEdge), (1, 3, 2, 3));
        assert_eq!(quad(KernelKind::EdgeToEdge), (3, 3, 3, 3));
        for kind in KernelKind::ALL {
            for c in classify_accesses(&kind.spec()) {
                if let AccessClass::RowReuse { rows } = c.class {
                    assert_eq!(rows, 1, "{} ({}, {})", kind.name(), c.dx, c.dy);
                }
            }
        }
        let loads: Vec<u32> = KernelKind::ALL
            .iter()
            .map(|k| traffic_counts(&k.spec()).distinct_loads)
            .collect();
        assert_eq!(loads, [7, 12, 6, 9]);
    }

    #[test]
    fn reuse_row_footprints() {
        let rows: Vec<u64> = KernelKind::ALL.iter().map(|k| reuse_rows(&k.spec())).collect();
        assert_eq!(rows, [4, 8, 6, 9]);
    }

    #[test]
    fn layer_condition_transitions() {
        let m = MachineModel::skx_8174();
        let l1: Vec<u32> = KernelKind::ALL
            .iter()
            .map(|k| last_level_with_row_reuse(&k.spec(), m.l1_bytes).unwrap())
            .collect();
        assert_eq!(l1, [10, 9, 9, 8]);
        let l2: Vec<u32> = KernelKind::ALL
            .iter()
            .map(|k| last_level_with_row_reuse(&k.spec(), m.l2_bytes).unwrap())
            .collect();
        assert_eq!(l2, [15, 14, 14, 13]);
        // the vertex kernel's active rows exactly fill the L1 at its
        // boundary level, so the comparison must not be strict
        assert_eq!(reuse_rows(&KernelKind::VertexToVertex.spec()) * 1024 * 8, m.l1_bytes);
    }

    #[test]
    fn dataset_homes() {
        let m = MachineModel::skx_8174();
        for kind in KernelKind::ALL {
            assert_ne!(dataset_home(kind, 10, &m), CacheLevel::Mem, "{}", kind.name());
            assert_eq!(dataset_home(kind, 11, &m), CacheLevel::Mem, "{}", kind.name());
        }
        assert_eq!(dataset_home(KernelKind::EdgeToEdge, 10, &m), CacheLevel::L3);
        assert_eq!(touched_bytes(KernelKind::VertexToVertex, 11), 33_603_600);
    }

    #[test]
    fn bandwidth_selection() {
        let m = MachineModel::skx_8174();
        assert_eq!(m.select_bandwidth(1, 1).gbytes_per_sec, 70.0);
        assert_eq!(m.select_bandwidth(3, 1).gbytes_per_sec, 87.0);
        assert_eq!(m.select_bandwidth(1, 3).gbytes_per_sec, 60.0);
        // balanced mixes reduce to the 1:1 measurement
        assert_eq!(m.select_bandwidth(3, 3).gbytes_per_sec, 70.0);
        assert_eq!(m.select_bandwidth(2, 1).gbytes_per_sec, 87.0);
    }

    #[test]
    fn line_cost_formula() {
        let c = cycles_per_cacheline(70.0, 2.7, 64);
        assert!((c - 2.469).abs() < 0.01, "{c}");
        let m = MachineModel::skx_8174();
        for e in &m.bandwidths {
            let implied = cycles_per_cacheline(e.gbytes_per_sec, m.frequency_ghz, m.cacheline_bytes);
            let rel = (e.cycles_per_line - implied).abs() / implied;
            assert!(rel < 0.02, "{}l{}s: {rel}", e.loads, e.stores);
        }
    }

    fn assert_terms(p: &EcmPrediction, terms: (f64, f64, f64, f64), cycles: f64, gflops: f64) {
        let eps = 1e-9;
        assert!((p.t_nol - terms.0).abs() < eps, "{p:?}");
        assert!((p.t_l1l2 - terms.1).abs() < eps, "{p:?}");
        assert!((p.t_l2l3 - terms.2).abs() < eps, "{p:?}");
        assert!((p.t_l3mem - terms.3).abs() < eps, "{p:?}");
        assert!((p.cycles - cycles).abs() < eps, "{p:?}");
        assert!((p.gflops - gflops).abs() < 0.01, "{p:?}");
    }

    #[test]
    fn reference_predictions() {
        let m = MachineModel::skx_8174();
        let fx = LcFixture::reference();
        let p = |kind, level| predict_at(kind, level, &m, Some(&fx), CoreModelKind::Measured);

        use KernelKind::*;
        assert_terms(&p(VertexToVertex, 8), (8.0, 3.0, 8.0, 0.0), 19.0, 14.78);
        assert_terms(&p(VertexToVertex, 12), (8.0, 5.0, 8.0, 5.0), 26.0, 10.8);
        assert_terms(&p(EdgeToVertex, 7), (12.0, 5.0, 16.0, 0.0), 33.0, 15.05);
        assert_terms(&p(EdgeToVertex, 9), (12.0, 9.0, 16.0, 0.0), 37.0, 13.43);
        assert_terms(&p(EdgeToVertex, 12), (12.0, 9.0, 24.0, 8.0), 53.0, 9.37);
        assert_terms(&p(VertexToEdge, 8), (12.0, 7.0, 16.0, 0.0), 35.0, 12.96);
        assert_terms(&p(VertexToEdge, 10), (12.0, 9.0, 24.0, 0.0), 45.0, 10.08);
        assert_terms(&p(VertexToEdge, 12), (12.0, 9.0, 24.0, 11.6), 56.6, 8.01);
        assert_terms(&p(EdgeToEdge, 8), (10.0, 9.0, 24.0, 0.0), 43.0, 583.2 / 43.0);
        assert_terms(&p(EdgeToEdge, 12), (10.0, 12.0, 24.0, 15.0), 61.0, 583.2 / 61.0);

        assert_eq!(p(VertexToVertex, 8).lc_label(), "L1|L3");
        assert_eq!(p(EdgeToVertex, 12).lc_label(), "L2|MEM|m2");
        assert_eq!(p(VertexToEdge, 12).lc_label(), "L3|MEM");
    }

    #[test]
    fn simple_core_model() {
        let t: Vec<(f64, f64)> = KernelKind::ALL
            .iter()
            .map(|&k| {
                let c = core_cycles(k, CoreModelKind::Simple);
                (c.t_ol, c.t_nol)
            })
            .collect();
        assert_eq!(t, [(7.0, 7.0), (12.0, 12.0), (12.0, 6.0), (15.0, 9.0)]);
    }

    #[test]
    fn saturation_and_scaling() {
        let m = MachineModel::skx_8174();
        let fx = LcFixture::reference();
        let p = predict_at(
            KernelKind::VertexToVertex,
            12,
            &m,
            Some(&fx),
            CoreModelKind::Measured,
        );
        assert_eq!(saturation_threads(&p), Some(6));
        assert_eq!(scaling_multiple(&p, &m, 1), 1.0);
        assert_eq!(scaling_multiple(&p, &m, 6), 6.0);
        assert_eq!(scaling_multiple(&p, &m, 24), 6.0);
        assert_eq!(scaling_multiple(&p, &m, 25), 7.0);
        assert_eq!(scaling_multiple(&p, &m, 48), 12.0);

        let cached = predict_at(
            KernelKind::VertexToVertex,
            8,
            &m,
            Some(&fx),
            CoreModelKind::Measured,
        );
        assert_eq!(saturation_threads(&cached), None);
        assert_eq!(scaling_multiple(&cached, &m, 17), 17.0);
    }

    #[test]
    fn machine_parse_roundtrip() {
        let text = "\
# test machine
name = tiny
frequency_ghz = 2.0
cores_per_socket = 4
sockets = 1
cacheline_bytes = 64
l1_bytes = 32768
l2_bytes = 262144
l3_bytes = 8000000
l1l2_bytes_per_cycle = 32
l2l3_bytes_per_cycle = 16
bw.1l1s_gbs = 20
";
        let m = MachineModel::parse(text, "inline").unwrap();
        assert_eq!(m.name, "tiny");
        assert_eq!(m.sockets, 1);
        assert_eq!(m.l1l2_duplex, Duplex::Half);
        let e = &m.bandwidths[0];
        assert!((e.cycles_per_line - 6.4).abs() < 1e-12);

        assert!(MachineModel::parse("frequency_ghz = 2.0\nbogus = 1\n", "x").is_err());
        assert!(MachineModel::parse("", "x").is_err());
    }

    #[test]
    fn fixture_parse_matches_reference() {
        let text = "\
vtv 7..10 L1 L3
vtv 11..14 L2 MEM
etv 7..8 L1 L3
etv 9..10 L2 L3
etv 11..14 L2 MEM l2_miss=2
vte 7..9 L1 L3
vte 10..10 L3 L3
vte 11..14 L3 MEM
ete 7..8 L1 L3
ete 9..14 L2 MEM
";
        let parsed = LcFixture::parse(text, "inline").unwrap();
        let reference = LcFixture::reference();
        assert_eq!(parsed.entries.len(), reference.entries.len());
        for kind in KernelKind::ALL {
            for level in 7..=14 {
                assert_eq!(
                    parsed.state(kind, level),
                    reference.state(kind, level),
                    "{} {}",
                    kind.name(),
                    level
                );
            }
        }
        assert!(parsed.state(KernelKind::VertexToVertex, 6).is_none());
        assert!(LcFixture::parse("vtv 9..7 L1 L3", "x").is_err());
        assert!(LcFixture::parse("vtv 7..8 MEM L3", "x").is_err());
    }

    #[test]
    fn computed_states_off_fixture() {
        let m = MachineModel::skx_8174();
        let s = computed_lc_state(KernelKind::VertexToVertex, 12, &m);
        assert_eq!(
            s,
            LcState {
                reuse_in_l1: false,
                reuse_l2_misses: 0,
                home: CacheLevel::Mem
            }
        );
        let s = computed_lc_state(KernelKind::EdgeToEdge, 16, &m);
        assert_eq!(s.reuse_l2_misses, 3);
    }
}
