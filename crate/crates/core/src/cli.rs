//! The `roma` command line.
//!
//! Exit codes: 0 success, 2 usage, 3 validation, 4 capacity, 5 I/O. Failures
//! print `error[<code>]: <message>` on stderr.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::brom::{rom_read_brom, rom_read_brom_wired, rom_read_standard, BRomArray, RomContents};
use crate::config::{Attachment, ConfigError, ModelConfig};
use crate::engine::{compare_with_shadow, load_runtime, ChipTopology, EngineError, ShadowModel, Token};
use crate::numerics::Fp8Format;
use crate::perf::{
    format_value, lora_capacity_mismatch, sweep, write_csv, CapacityParams, ChipTotals, PerfModel, SweepKind,
};
use crate::qcore::{BitWidth, LoraPair};
use crate::romimage::{load_image, load_lora_image, model_rom_bytes, pack_model, Accounting, ImageError, LoraImage};
use crate::tensorfile::{read_tensors, write_tensors, TensorFileError};
use crate::toy::toy_checkpoint;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_CAPACITY: i32 = 4;
pub const EXIT_IO: i32 = 5;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "ROMA_SIM_THREADS";

/// Per-layer relative error allowed between engine and shadow.
pub const SHADOW_TOLERANCE: f64 = 1.0 / 32.0;

#[derive(Debug, Parser)]
#[command(name = "roma", version, about = "Hybrid ROM/SRAM QLoRA accelerator simulator")]
pub struct RunManifest {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Quantize a tensor file into a ROM image.
    Pack(PackArgs),
    /// Encode LoRA factors from a tensor file into an FP8 adapter image.
    PackLora(PackLoraArgs),
    /// Greedy generation on the functional model.
    Run(RunArgs),
    /// Check B-ROM against standard ROM reads on random contents.
    Brom(BromArgs),
    /// Emit a calibrated performance sweep as CSV.
    Perf(PerfArgs),
    /// Write a deterministic random toy checkpoint.
    Toy(ToyArgs),
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["weights", "analytic"])))]
pub struct PackArgs {
    /// Named FP32 tensor file.
    #[arg(long, requires = "out")]
    pub weights: Option<PathBuf>,
    /// Report footprints of a full-size model without materializing it.
    #[arg(long, value_name = "MODEL", value_parser = parse_model)]
    pub analytic: Option<PerfModel>,
    /// Weight bit width.
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u8).range(2..=4))]
    pub bits: u8,
    /// Model config; checks tensor names and shapes and enables the blocks-only verdict.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output image path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PackLoraArgs {
    /// Tensor file with `layers.{l}.{proj}.lora_a` / `lora_b` entries.
    #[arg(long)]
    pub weights: PathBuf,
    /// Model config the adapters attach to.
    #[arg(long)]
    pub config: PathBuf,
    /// FP8 layout.
    #[arg(long, default_value = "e4m3", value_parser = parse_fp8)]
    pub format: Fp8Format,
    /// Output image path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Base-model ROM image.
    #[arg(long)]
    pub rom: PathBuf,
    /// LoRA adapter image.
    #[arg(long)]
    pub lora: PathBuf,
    /// Model config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Prompt token ids, comma or space separated.
    #[arg(long)]
    pub prompt: String,
    /// Tokens to generate.
    #[arg(long, default_value_t = 16)]
    pub max_new: usize,
    /// Also run the FP64 shadow model and report divergence.
    #[arg(long)]
    pub verify_shadow: bool,
}

#[derive(Debug, Args)]
pub struct BromArgs {
    /// Number of addresses.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub depth: u64,
    /// Bits per word.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub width: u64,
    /// Random contents to check.
    #[arg(long, default_value_t = 10)]
    pub trials: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PerfArgs {
    /// 3b4 (Llama 3.2 3B, 4-bit) or 8b2 (Llama 3 8B, 2-bit).
    #[arg(long, value_parser = parse_model)]
    pub model: PerfModel,
    /// prefill, decode, capacity, rank or ppa.
    #[arg(long, value_parser = parse_sweep)]
    pub sweep: SweepKind,
    /// CSV path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    /// Directory receiving model.toml, weights.rmwt and lora.rmwt.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Start from this config instead of the built-in toy.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn parse_model(s: &str) -> Result<PerfModel, String> {
    s.parse()
}

fn parse_sweep(s: &str) -> Result<SweepKind, String> {
    s.parse()
}

fn parse_fp8(s: &str) -> Result<Fp8Format, String> {
    match s {
        "e4m3" => Ok(Fp8Format::E4M3),
        "e5m2" => Ok(Fp8Format::E5M2),
        _ => Err(format!("unknown FP8 format {s:?} (expected e4m3 or e5m2)")),
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Validation { code: &'static str, message: String },
    Capacity { code: &'static str, message: String },
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Validation { .. } => EXIT_VALIDATION,
            CliError::Capacity { .. } => EXIT_CAPACITY,
            CliError::Io { .. } => EXIT_IO,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Validation { code, .. } | CliError::Capacity { code, .. } => code,
            CliError::Io { .. } => "io",
        }
    }

    fn invalid(code: &'static str, message: impl Into<String>) -> Self {
        CliError::Validation { code, message: message.into() }
    }

    fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Validation { message, .. } | CliError::Capacity { message, .. } => f.write_str(message),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
        }
    }
}

impl From<ImageError> for CliError {
    fn from(e: ImageError) -> Self {
        CliError::invalid(e.code(), e.to_string())
    }
}

impl From<TensorFileError> for CliError {
    fn from(e: TensorFileError) -> Self {
        CliError::invalid("tensor_file", e.to_string())
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Capacity { .. } => CliError::Capacity { code: "capacity", message: e.to_string() },
            EngineError::BufferFull { .. } => CliError::Capacity { code: "buffer_full", message: e.to_string() },
            EngineError::Image(img) => img.into(),
            other => CliError::invalid("engine", other.to_string()),
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn load_config(path: &Path) -> Result<ModelConfig, CliError> {
    ModelConfig::load(path).map_err(|e| match e {
        ConfigError::Io(source) => CliError::io(path, source),
        other => CliError::invalid("config", other.to_string()),
    })
}

fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::io(path, io::Error::new(io::ErrorKind::NotFound, "no such file")))
    }
}

fn require_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => {
            Err(CliError::io(path, io::Error::new(io::ErrorKind::NotFound, "parent directory does not exist")))
        }
        _ => Ok(()),
    }
}

impl RunManifest {
    /// Every input must exist and every output directory must be writable
    /// before any work starts.
    pub fn check_paths(&self) -> Result<(), CliError> {
        match &self.command {
            Command::Pack(a) => {
                for p in a.weights.iter().chain(&a.config) {
                    require_file(p)?;
                }
                a.out.as_deref().map_or(Ok(()), require_parent)
            }
            Command::PackLora(a) => {
                require_file(&a.weights)?;
                require_file(&a.config)?;
                require_parent(&a.out)
            }
            Command::Run(a) => [&a.rom, &a.lora, &a.config].into_iter().try_for_each(|p| require_file(p)),
            Command::Brom(_) => Ok(()),
            Command::Perf(a) => a.out.as_deref().map_or(Ok(()), require_parent),
            Command::Toy(a) => {
                if let Some(c) = &a.config {
                    require_file(c)?;
                }
                Ok(())
            }
        }
    }
}

/// Parse prompt token ids separated by commas and/or whitespace.
pub fn parse_prompt(s: &str) -> Result<Vec<Token>, CliError> {
    let tokens = s
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<Token>().map_err(|_| CliError::Usage(format!("bad token id {t:?} in --prompt"))))
        .collect::<Result<Vec<_>, _>>()?;
    if tokens.is_empty() {
        return Err(CliError::Usage("--prompt must contain at least one token id".into()));
    }
    Ok(tokens)
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    // a second call in the same process finds the pool already built
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parse `args` (program name first), execute, and return the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let manifest = match RunManifest::try_parse_from(args) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match configure_threads().and_then(|_| manifest.check_paths()).and_then(|_| execute(&manifest, out, err)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error[{}]: {e}", e.code());
            e.exit_code()
        }
    }
}

fn execute(m: &RunManifest, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    match &m.command {
        Command::Pack(a) => cmd_pack(a, out),
        Command::PackLora(a) => cmd_pack_lora(a, out),
        Command::Run(a) => cmd_run(a, out, err),
        Command::Brom(a) => cmd_brom(a, out),
        Command::Perf(a) => cmd_perf(a, out, err),
        Command::Toy(a) => cmd_toy(a, out),
    }
    .map_err(Failure::into_cli)
}

/// Command failure: a classified error, or a failed write to the output stream.
enum Failure {
    Cli(CliError),
    Out(io::Error),
}

impl Failure {
    fn into_cli(self) -> CliError {
        match self {
            Failure::Cli(e) => e,
            Failure::Out(e) => CliError::io(Path::new("<stdout>"), e),
        }
    }
}

impl<E: Into<CliError>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Cli(e.into())
    }
}

fn emit(out: &mut dyn Write, line: std::fmt::Arguments<'_>) -> Result<(), Failure> {
    out.write_fmt(line).and_then(|_| out.write_all(b"\n")).map_err(Failure::Out)
}

macro_rules! say {
    ($out:expr, $($t:tt)*) => { emit($out, format_args!($($t)*)) };
}

fn cmd_pack(a: &PackArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let cap = ChipTotals::ROMA.rom_bytes;
    if let Some(model) = a.analytic {
        let cfg = model.config();
        say!(out, "model: {model} ({}-bit)", cfg.bit_width.bits())?;
        say!(out, "rom capacity: {cap} bytes")?;
        for (label, mode) in [("all-params", Accounting::AllParams), ("blocks-only", Accounting::BlocksOnly)] {
            let bytes = model_rom_bytes(&cfg, mode);
            say!(out, "{label}: {bytes} bytes, fits: {}", bytes <= cap)?;
        }
        return Ok(());
    }
    let bits = BitWidth::try_from(a.bits).map_err(|e| CliError::Usage(e.to_string()))?;
    let weights_path = a.weights.as_deref().expect("clap group");
    let out_path = a.out.as_deref().expect("clap requires");
    let cfg = a.config.as_deref().map(load_config).transpose()?;
    let weights = read_tensors(&read_file(weights_path)?)?;
    if let Some(cfg) = &cfg {
        if cfg.bit_width != bits {
            return Err(ImageError::ConfigMismatch(format!(
                "--bits {} but config says {}-bit",
                bits.bits(),
                cfg.bit_width.bits()
            ))
            .into());
        }
        let specs = cfg.tensor_specs();
        for w in &weights {
            match specs.iter().find(|s| s.name == w.name) {
                None => return Err(ImageError::ConfigMismatch(format!("unexpected tensor {}", w.name)).into()),
                Some(s) if (s.rows, s.cols) != (w.rows, w.cols) => {
                    return Err(ImageError::ConfigMismatch(format!(
                        "{} is {}x{}, config expects {}x{}",
                        w.name, w.rows, w.cols, s.rows, s.cols
                    ))
                    .into())
                }
                _ => {}
            }
        }
        if let Some(s) = specs.iter().find(|s| !weights.iter().any(|w| w.name == s.name)) {
            return Err(ImageError::ConfigMismatch(format!("missing tensor {}", s.name)).into());
        }
    }
    let image = pack_model(&weights, bits)?;
    let bytes = image.to_bytes();
    write_file(out_path, &bytes)?;
    say!(
        out,
        "wrote {} ({} tensors, {} parameters)",
        out_path.display(),
        image.tensors().len(),
        image.parameter_count()
    )?;
    say!(out, "footprint: {} bytes", bytes.len())?;
    say!(out, "rom capacity: {cap} bytes")?;
    say!(out, "fits: {}", bytes.len() as u64 <= cap)?;
    if cfg.is_some() {
        let blocks: u64 = image
            .tensors()
            .iter()
            .filter(|(n, _)| n.starts_with("layers."))
            .map(|(_, m)| (m.rows() * m.groups_per_row() * crate::romimage::group_record_bytes(bits)) as u64)
            .sum();
        say!(out, "blocks-only payload: {blocks} bytes, fits: {}", blocks <= cap)?;
    }
    Ok(())
}

fn cmd_pack_lora(a: &PackLoraArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let cfg = load_config(&a.config)?;
    let tensors = read_tensors(&read_file(&a.weights)?)?;
    let mut halves: std::collections::BTreeMap<Attachment, [Option<usize>; 2]> = Default::default();
    for (i, t) in tensors.iter().enumerate() {
        let (at, is_a) = Attachment::parse_name(&t.name)
            .ok_or_else(|| CliError::invalid("invalid_tensor", format!("{:?} is not a LoRA tensor name", t.name)))?;
        halves.entry(at).or_default()[usize::from(!is_a)] = Some(i);
    }
    let mut image = LoraImage::new(a.format);
    for (at, [ai, bi]) in halves {
        let (Some(ai), Some(bi)) = (ai, bi) else {
            return Err(CliError::invalid("invalid_tensor", format!("{} lacks one of its factors", at.a_name())).into());
        };
        let (ta, tb) = (&tensors[ai], &tensors[bi]);
        if ta.rows != tb.cols {
            return Err(CliError::invalid(
                "invalid_tensor",
                format!("{}: A has rank {} but B has rank {}", at.a_name(), ta.rows, tb.cols),
            )
            .into());
        }
        let pair = LoraPair::from_f64(tb.rows, ta.cols, ta.rows, a.format, &ta.data, &tb.data)
            .map_err(|e| CliError::invalid("invalid_tensor", format!("{}: {e}", at.a_name())))?;
        image.insert(at, pair)?;
    }
    image.validate_against(&cfg)?;
    let bytes = image.to_bytes();
    write_file(&a.out, &bytes)?;
    say!(out, "wrote {} ({} adapters, rank {})", a.out.display(), image.adapters().len(), image.rank())?;
    say!(out, "sram bytes: {}", image.sram_bytes())?;
    say!(out, "footprint: {} bytes", bytes.len())?;
    Ok(())
}

fn join(tokens: &[Token]) -> String {
    tokens.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ")
}

fn cmd_run(a: &RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    let prompt = parse_prompt(&a.prompt)?;
    let cfg = load_config(&a.config)?;
    let rom = load_image(&read_file(&a.rom)?)?;
    let lora = load_lora_image(&read_file(&a.lora)?)?;
    let rt = load_runtime(&rom, &lora, &cfg, &ChipTopology::roma())?;
    if cfg.sram_budget_bytes.is_some() {
        let _ = writeln!(err, "kv capacity: {} tokens", rt.max_tokens());
    }
    let generated = rt.generate(&prompt, a.max_new)?;
    say!(out, "tokens: {}", join(&generated))?;
    if a.verify_shadow {
        let shadow = ShadowModel::new(&rom, &lora, &cfg)?;
        let mut all = prompt.clone();
        all.extend(&generated[..generated.len().saturating_sub(1)]);
        let report = compare_with_shadow(&rt, &shadow, &all, prompt.len())?;
        let shadow_tokens = shadow.generate(&prompt, a.max_new)?;
        say!(out, "shadow tokens: {}", join(&shadow_tokens))?;
        let errs: Vec<String> = report.layer_rel_error.iter().map(|e| format!("{e:.3e}")).collect();
        say!(out, "layer relative error: {}", errs.join(" "))?;
        say!(out, "greedy agreement: {}/{}", report.greedy_matches, report.steps)?;
        if report.max_rel_error() > SHADOW_TOLERANCE {
            return Err(CliError::invalid(
                "shadow_divergence",
                format!("layer error {:.3e} exceeds {SHADOW_TOLERANCE}", report.max_rel_error()),
            )
            .into());
        }
    }
    Ok(())
}

fn cmd_brom(a: &BromArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let (depth, width) = (a.depth as usize, a.width as usize);
    let results: Vec<Option<usize>> = (0..a.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed.wrapping_add(t));
            let rom = RomContents::random(depth, width, &mut rng).expect("positive shape");
            let brom = BRomArray::new(&rom);
            (0..depth).find(|&addr| {
                let direct = rom.word(addr).expect("in range");
                rom_read_standard(&rom, addr).expect("in range") != direct
                    || rom_read_brom(&brom, addr).expect("in range") != direct
                    || rom_read_brom_wired(&brom, addr).expect("in range") != direct
            })
        })
        .collect();
    let zeros = RomContents::zeros(depth, width).map_err(|e| CliError::Usage(e.to_string()))?;
    let brom = BRomArray::new(&zeros);
    if brom.padded_depth() != depth {
        say!(out, "note: depth {depth} padded to {} with zero words", brom.padded_depth())?;
    }
    let std_t = (depth * width) as u64;
    let brom_t = brom.transistors();
    let equivalent = results.iter().all(Option::is_none);
    say!(
        out,
        "equivalent: {equivalent}, std={std_t}, brom={brom_t}, ratio={}",
        format_value(brom_t as f64 / std_t as f64)
    )?;
    say!(out, "trials: {}, addresses per trial: {depth}", a.trials)?;
    if let Some((t, addr)) = results.iter().enumerate().find_map(|(t, r)| r.map(|addr| (t, addr))) {
        return Err(CliError::invalid("brom_mismatch", format!("trial {t} differs at address {addr}")).into());
    }
    Ok(())
}

fn cmd_perf(a: &PerfArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    if a.sweep == SweepKind::Capacity {
        let cfg = a.model.config();
        let params = CapacityParams::for_model(a.model, 0);
        let _ = writeln!(
            err,
            "note: fitted KV size {} B/token; FP16 K and V over all layers would be {} B/token",
            params.kv_bytes_per_token,
            cfg.kv_bytes_per_token()
        );
        if let Some(w) = lora_capacity_mismatch(&params, &cfg) {
            let _ = writeln!(err, "warning: {w}");
        }
    }
    let rows = sweep(a.model, a.sweep);
    let mut buf = Vec::new();
    write_csv(&rows, &mut buf).map_err(|e| CliError::invalid("csv", e.to_string()))?;
    match &a.out {
        Some(p) => {
            write_file(p, &buf)?;
            say!(out, "wrote {} ({} rows)", p.display(), rows.len())?;
        }
        None => out.write_all(&buf).map_err(Failure::Out)?,
    }
    Ok(())
}

fn cmd_toy(a: &ToyArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let cfg = match &a.config {
        Some(p) => load_config(p)?,
        None => ModelConfig::toy(),
    };
    let ck = toy_checkpoint(&cfg, a.seed)?;
    fs::create_dir_all(&a.out_dir).map_err(|e| CliError::io(&a.out_dir, e))?;
    let files = [
        ("model.toml", cfg.to_toml_string().into_bytes()),
        ("weights.rmwt", write_tensors(&ck.weights)?),
        ("lora.rmwt", write_tensors(&ck.lora_weights)?),
    ];
    for (name, bytes) in files {
        let p = a.out_dir.join(name);
        write_file(&p, &bytes)?;
        say!(out, "wrote {}", p.display())?;
    }
    Ok(())
}
