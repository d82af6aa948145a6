use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tristencil::codegen::{self, WeightsLayout};
use tristencil::ecm::{CoreModelKind, LcFixture, MachineModel};
use tristencil::fields::P2Operator;
use tristencil::harness;
use tristencil::kernels::KernelKind;
use tristencil::{sparse, Result};

#[derive(Parser)]
#[command(
    name = "tristencil",
    version,
    about = "Matrix-free P2 stencil kernels on structured triangles, with an analytical cache and memory performance model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cross-check kernels, interpreter, generated plans and the assembled matrix
    Verify(VerifyArgs),
    /// Print the modeled runtime decomposition and GFLOP/s per kernel and level
    Predict(PredictArgs),
    /// Measure kernel sweeps and put the prediction next to them
    Bench(BenchArgs),
    /// Measure thread scaling of one kernel against the model curve
    Scale(ScaleArgs),
    /// Print the assembled-vs-matrix-free memory table; optionally export a matrix
    Memory(MemoryArgs),
    /// Emit the specialized C source for one kernel at one level
    Codegen(CodegenArgs),
}

fn parse_core(s: &str) -> std::result::Result<CoreModelKind, String> {
    match s {
        "measured" => Ok(CoreModelKind::Measured),
        "simple" => Ok(CoreModelKind::Simple),
        _ => Err(format!("unknown core model {s:?} (measured, simple)")),
    }
}

fn parse_kernel(s: &str) -> std::result::Result<KernelKind, String> {
    KernelKind::parse(s).map_err(|e| e.to_string())
}

fn parse_layout(s: &str) -> std::result::Result<WeightsLayout, String> {
    WeightsLayout::parse(s).ok_or_else(|| format!("unknown layout {s:?} (identity, row-major)"))
}

/// Inclusive `a..b` or a single number.
#[derive(Clone, Debug)]
struct NumberRange(Vec<u32>);

fn parse_range(s: &str) -> std::result::Result<NumberRange, String> {
    let parse_one = |t: &str| {
        t.trim()
            .parse::<u32>()
            .map_err(|_| format!("bad number {t:?}"))
    };
    if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (parse_one(a)?, parse_one(b)?);
        if a > b {
            return Err(format!("empty range {s:?}"));
        }
        Ok(NumberRange((a..=b).collect()))
    } else {
        Ok(NumberRange(vec![parse_one(s)?]))
    }
}

#[derive(Args)]
struct ModelArgs {
    /// machine description file (key = value); built-in skx-8174 when absent
    #[arg(long)]
    machine: Option<PathBuf>,
    /// cache-state fixture file; built-in skx-8174 table when absent
    #[arg(long)]
    lc_fixture: Option<PathBuf>,
    /// ignore fixtures, derive every cache state from the machine model
    #[arg(long)]
    computed_lc: bool,
    /// in-core model: measured port analysis or the simple two-port sketch
    #[arg(long, default_value = "measured", value_parser = parse_core)]
    core: CoreModelKind,
}

impl ModelArgs {
    fn machine(&self) -> Result<MachineModel> {
        match &self.machine {
            Some(path) => MachineModel::from_file(path),
            None => Ok(MachineModel::skx_8174()),
        }
    }

    fn fixture(&self) -> Result<Option<LcFixture>> {
        if self.computed_lc {
            return Ok(None);
        }
        match &self.lc_fixture {
            Some(path) => LcFixture::from_file(path).map(Some),
            None => Ok(Some(LcFixture::reference())),
        }
    }
}

#[derive(Args)]
struct CsvOut {
    /// write the table to this file instead of stdout
    #[arg(long)]
    csv: Option<PathBuf>,
}

impl CsvOut {
    fn writer(&self) -> io::Result<Box<dyn Write>> {
        Ok(match &self.csv {
            Some(path) => Box::new(File::create(path)?),
            None => Box::new(io::stdout().lock()),
        })
    }
}

#[derive(Args)]
struct VerifyArgs {
    /// largest refinement level to test
    #[arg(long, default_value_t = 5)]
    level: u32,
    /// pseudo-random operators and fields per check
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    /// keep the round-trip field dumps in this directory
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// levels as `a..b` (inclusive) or a single level
    #[arg(long, default_value = "7..14", value_parser = parse_range)]
    levels: NumberRange,
    /// comma-separated kernels
    #[arg(long, value_delimiter = ',', default_values = ["vtv", "etv", "vte", "ete"], value_parser = parse_kernel)]
    kernels: Vec<KernelKind>,
    #[command(flatten)]
    out: CsvOut,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value = "4..9", value_parser = parse_range)]
    levels: NumberRange,
    #[arg(long, value_delimiter = ',', default_values = ["vtv", "etv", "vte", "ete"], value_parser = parse_kernel)]
    kernels: Vec<KernelKind>,
    /// seed for operator weights and field values
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// measure batches until one runs at least this long
    #[arg(long, default_value_t = 0.2)]
    min_seconds: f64,
    #[command(flatten)]
    out: CsvOut,
}

#[derive(Args)]
struct ScaleArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value = "vtv", value_parser = parse_kernel)]
    kernel: KernelKind,
    #[arg(long, default_value_t = 9)]
    level: u32,
    /// thread counts as `a..b` (inclusive) or a single count; all cores when absent
    #[arg(long, value_parser = parse_range)]
    threads: Option<NumberRange>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 0.2)]
    min_seconds: f64,
    #[command(flatten)]
    out: CsvOut,
}

#[derive(Args)]
struct MemoryArgs {
    #[arg(long, default_value = "2..14", value_parser = parse_range)]
    levels: NumberRange,
    #[command(flatten)]
    out: CsvOut,
    /// also export the assembled operator in Matrix Market format
    #[arg(long)]
    matrix_market: Option<PathBuf>,
    /// level of the exported matrix
    #[arg(long, default_value_t = 4)]
    matrix_level: u32,
    /// seed of the exported operator's weights
    #[arg(long, default_value_t = 0)]
    matrix_seed: u64,
}

#[derive(Args)]
struct CodegenArgs {
    #[arg(long, default_value = "vtv", value_parser = parse_kernel)]
    kernel: KernelKind,
    #[arg(long, default_value_t = 10)]
    level: u32,
    /// weight storage order the emitted function expects
    #[arg(long, default_value = "row-major", value_parser = parse_layout)]
    layout: WeightsLayout,
    /// write the source to this file instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Verify(args) => {
            let report = harness::run_verify(args.level, args.seeds, args.dump.as_deref())?;
            for c in &report.checks {
                let mark = if c.passed { " ok " } else { "FAIL" };
                println!("[{mark}] {} ({})", c.name, c.detail);
            }
            if report.all_passed() {
                println!("all {} checks passed", report.checks.len());
                Ok(ExitCode::SUCCESS)
            } else {
                println!("verification failed");
                Ok(ExitCode::FAILURE)
            }
        }
        Command::Predict(args) => {
            let machine = args.model.machine()?;
            let fixture = args.model.fixture()?;
            let rows = harness::run_predict(
                &machine,
                fixture.as_ref(),
                &args.kernels,
                &args.levels.0,
                args.model.core,
            );
            harness::write_predict_csv(args.out.writer()?, &rows)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Bench(args) => {
            let machine = args.model.machine()?;
            let fixture = args.model.fixture()?;
            let rows = harness::run_bench(
                &machine,
                fixture.as_ref(),
                &args.kernels,
                &args.levels.0,
                args.model.core,
                args.seed,
                args.min_seconds,
            )?;
            for row in &rows {
                if let harness::BenchOutcome::Skipped {
                    kernel,
                    level,
                    needed_bytes,
                    available_bytes,
                } = row
                {
                    eprintln!(
                        "skipping {} level {level}: needs {needed_bytes} bytes, {available_bytes} available",
                        kernel.name()
                    );
                }
            }
            harness::write_bench_csv(args.out.writer()?, &rows)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Scale(args) => {
            let machine = args.model.machine()?;
            let fixture = args.model.fixture()?;
            let threads = args
                .threads
                .map(|r| r.0)
                .unwrap_or_else(|| (1..=harness::online_cpus()).collect());
            let rows = harness::run_scale(
                args.kernel,
                args.level,
                &threads,
                &machine,
                fixture.as_ref(),
                args.model.core,
                args.seed,
                args.min_seconds,
            )?;
            harness::write_scale_csv(args.out.writer()?, &rows)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Memory(args) => {
            let rows = harness::run_memory(&args.levels.0)?;
            harness::write_memory_csv(args.out.writer()?, &rows)?;
            if let Some(path) = args.matrix_market {
                let op = P2Operator::pseudo_random(args.matrix_seed);
                let mat = sparse::assemble(&op, args.matrix_level)?;
                mat.write_matrix_market(File::create(&path)?)?;
                eprintln!(
                    "wrote {}x{} matrix with {} entries to {}",
                    mat.dim,
                    mat.dim,
                    mat.nnz(),
                    path.display()
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Codegen(args) => {
            let generated = codegen::generate(args.kernel, args.level, args.layout)?;
            match args.out {
                Some(path) => std::fs::write(path, generated.source)?,
                None => print!("{}", generated.source),
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
