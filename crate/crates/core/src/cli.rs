//! Command-line front end. [`run`] parses arguments, executes one
//! subcommand and returns the process exit code: 0 on success, 1 when the
//! work itself fails, 2 on a usage or configuration error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{ConfigError, PipelineConfig};
use crate::fixer::{FixReport, FixerStrategy};
use crate::lm::{train_lm, Sampling, StrokeLm};
use crate::metrics::{self, EvalRecord, EvalReport, Timings};
use crate::svg::{self, Graphic};
use crate::tensor::Checkpoint;
use crate::vq::{self, Codec, StrokeTokenSeq};
use crate::{matrix, render};

pub const CONFIG_FORMAT_VERSION: &str = "pipeline-config key=value v1";

/// Marks failures that should exit with status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

#[derive(Debug, Parser)]
#[command(name = "stroketok", about = "Stroke-token codec and generator for vector graphics", disable_version_flag = true)]
struct Cli {
    /// Print the tool version and every on-disk format version.
    #[arg(long)]
    version: bool,
    #[command(subcommand)]
    cmd: Option<Cmd>,
}

#[derive(Debug, Args)]
struct Common {
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Parse, simplify and filter SVG or graphic JSON files.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        max_commands: Option<usize>,
        #[arg(long)]
        min_keywords: Option<usize>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Train the stroke codec on a directory of graphic JSON files.
    TrainVq {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Per-step loss CSV.
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Graphic (file or directory) to token files.
    Tokenize {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Token files (file or directory) back to graphics.
    Detokenize {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        fixer: Option<FixerStrategy>,
        #[command(flatten)]
        common: Common,
    },
    /// Train the keyword-conditioned stroke model on token files.
    TrainLm {
        #[arg(long)]
        tokens: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Sample stroke tokens for keywords and decode them to SVG.
    Generate {
        #[arg(long)]
        lm: PathBuf,
        #[arg(long)]
        vq: PathBuf,
        #[arg(long)]
        keywords: String,
        #[arg(long)]
        fixer: Option<FixerStrategy>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        top_k: Option<usize>,
        /// Also write the sampled tokens.
        #[arg(long)]
        tokens_out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Score candidate graphics against golden ones.
    Evaluate {
        #[arg(long)]
        golden: PathBuf,
        #[arg(long)]
        candidate: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Include wall-clock timings (makes the report non-reproducible).
        #[arg(long)]
        timings: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Rasterize a graphic to PNG, or PBM for a `.pbm` output.
    Render {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 256)]
        res: usize,
        #[arg(long, default_value_t = 1)]
        stroke_px: usize,
    },
    /// Write a synthetic corpus of graphic JSON files.
    GenSynth {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print every config key with its default and description.
    DumpConfig {
        #[command(flatten)]
        common: Common,
    },
}

pub fn version_text() -> String {
    [
        format!("stroketok {}", env!("CARGO_PKG_VERSION")),
        format!("graphic json: {}", svg::json::FORMAT_VERSION),
        format!("matrix: {}", matrix::FORMAT_VERSION),
        format!("checkpoint: {}", crate::tensor::FORMAT_VERSION),
        format!("tokens: {}", vq::TOKEN_FORMAT_VERSION),
        format!("config: {CONFIG_FORMAT_VERSION}"),
    ]
    .join("\n")
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    if cli.version {
        println!("{}", version_text());
        return 0;
    }
    let Some(cmd) = cli.cmd else {
        eprintln!("error: a subcommand is required\n\nUsage: stroketok <COMMAND>\nRun `stroketok --help` for the list.");
        return 2;
    };
    match dispatch(cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() || e.downcast_ref::<ConfigError>().is_some() {
                2
            } else {
                1
            }
        }
    }
}

fn resolve(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| UsageError(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = common.seed {
        cfg.set("seed", &s.to_string())?;
    }
    Ok(cfg)
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    if jobs == 0 {
        bail!(UsageError("--jobs must be at least 1".into()));
    }
    Ok(rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?)
}

/// Files in `dir` with one of `exts`, sorted by name. Fixer reports
/// (`*.fix.json`) are skipped.
pub fn list_files(dir: &Path, exts: &[&str]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let p = entry?.path();
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
        let ext_ok = p
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| exts.iter().any(|x| x.eq_ignore_ascii_case(e)));
        if p.is_file() && ext_ok && !name.ends_with(".fix.json") {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Reads a `.svg` document or graphic JSON.
pub fn load_graphic(path: &Path) -> Result<Graphic> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let is_svg = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("svg"));
    let g = if is_svg { svg::parse_svg(&text) } else { svg::json::from_json(&text) };
    g.with_context(|| format!("parsing {}", path.display()))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Graphic output by extension: `.svg` for SVG, anything else JSON.
fn write_graphic(path: &Path, g: &Graphic) -> Result<()> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("svg")) {
        write(path, svg::to_svg(g))
    } else {
        write(path, svg::json::to_json(g))
    }
}

fn fix_report_path(out: &Path) -> PathBuf {
    out.with_extension("fix.json")
}

fn stem(p: &Path) -> String {
    p.file_stem().and_then(|s| s.to_str()).unwrap_or("out").to_owned()
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Checkpoint::read_from(std::io::BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

pub fn load_codec(path: &Path) -> Result<Codec> {
    Ok(Codec::from_checkpoint(load_checkpoint(path)?)?)
}

fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    write(path, ck.to_bytes()?)
}

fn read_tokens(path: &Path) -> Result<StrokeTokenSeq> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    StrokeTokenSeq::from_text(&text).with_context(|| format!("parsing {}", path.display()))
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Preprocess {
            input,
            out,
            max_commands,
            min_keywords,
            jobs,
            common,
        } => {
            let mut cfg = resolve(&common)?;
            if let Some(m) = max_commands {
                cfg.preprocess.max_commands = m;
            }
            if let Some(m) = min_keywords {
                cfg.preprocess.min_keywords = m;
            }
            cmd_preprocess(&input, &out, &cfg, jobs)
        }
        Cmd::TrainVq { corpus, out, log, common } => {
            let cfg = resolve(&common)?;
            let corpus = corpus.or_else(|| (!cfg.corpus.is_empty()).then(|| PathBuf::from(&cfg.corpus)));
            let corpus = corpus.ok_or_else(|| UsageError("train-vq needs --corpus or a corpus key".into()))?;
            cmd_train_vq(&corpus, &out, log.as_deref(), &cfg)
        }
        Cmd::Tokenize {
            ckpt,
            input,
            out,
            common,
        } => {
            resolve(&common)?;
            cmd_tokenize(&ckpt, &input, &out)
        }
        Cmd::Detokenize {
            ckpt,
            input,
            out,
            fixer,
            common,
        } => {
            let cfg = resolve(&common)?;
            cmd_detokenize(&ckpt, &input, &out, fixer.unwrap_or(cfg.fixer))
        }
        Cmd::TrainLm { tokens, out, log, common } => {
            let cfg = resolve(&common)?;
            let tokens = tokens.or_else(|| (!cfg.tokens.is_empty()).then(|| PathBuf::from(&cfg.tokens)));
            let tokens = tokens.ok_or_else(|| UsageError("train-lm needs --tokens or a tokens key".into()))?;
            cmd_train_lm(&tokens, &out, log.as_deref(), &cfg)
        }
        Cmd::Generate {
            lm,
            vq,
            keywords,
            fixer,
            out,
            temperature,
            top_k,
            tokens_out,
            common,
        } => {
            let cfg = resolve(&common)?;
            let model = StrokeLm::from_checkpoint(load_checkpoint(&lm)?)?;
            let mut sampling = if common.config.is_some() || !common.set.is_empty() {
                cfg.lm.sampling
            } else {
                model.sampling()
            };
            if let Some(t) = temperature {
                sampling.temperature = t;
            }
            if let Some(k) = top_k {
                sampling.top_k = (k > 0).then_some(k);
            }
            let codec = load_codec(&vq)?;
            let opts = GenerateOpts {
                keywords: &keywords,
                fixer: fixer.unwrap_or(cfg.fixer),
                sampling,
                seed: cfg.seed,
            };
            cmd_generate(&model, &codec, &opts, &out, tokens_out.as_deref())
        }
        Cmd::Evaluate {
            golden,
            candidate,
            ckpt,
            report,
            jobs,
            timings,
            common,
        } => {
            let cfg = resolve(&common)?;
            cmd_evaluate(&golden, &candidate, &ckpt, &report, jobs, timings, &cfg)
        }
        Cmd::Render {
            input,
            out,
            res,
            stroke_px,
        } => {
            let g = load_graphic(&input)?;
            let bm = render::rasterize(&g, res, stroke_px)?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            bm.save(&out)?;
            Ok(())
        }
        Cmd::GenSynth { n, seed, out } => {
            for (i, g) in svg::gen_synthetic(n, seed).iter().enumerate() {
                write(&out.join(format!("synth_{i:05}.json")), svg::json::to_json(g))?;
            }
            println!("wrote {n} graphics to {}", out.display());
            Ok(())
        }
        Cmd::DumpConfig { common } => {
            print!("{}", resolve(&common)?.to_text());
            Ok(())
        }
    }
}

fn cmd_preprocess(input: &Path, out: &Path, cfg: &PipelineConfig, jobs: usize) -> Result<()> {
    let files = list_files(input, &["svg", "json"])?;
    let results: Vec<(PathBuf, Result<Graphic, String>)> = pool(jobs)?.install(|| {
        files
            .par_iter()
            .map(|f| {
                let r = load_graphic(f)
                    .map_err(|e| format!("{e:#}"))
                    .and_then(|g| svg::preprocess(&g, &cfg.preprocess).map_err(|r| r.to_string()));
                (f.clone(), r)
            })
            .collect()
    });
    fs::create_dir_all(out)?;
    let mut kept = 0;
    let mut rejected = String::new();
    for (f, r) in results {
        match r {
            Ok(g) => {
                write(&out.join(format!("{}.json", stem(&f))), svg::json::to_json(&g))?;
                kept += 1;
            }
            Err(why) => rejected.push_str(&format!("{}\t{why}\n", f.display())),
        }
    }
    write(&out.join("rejected.txt"), &rejected)?;
    println!("kept {kept}, rejected {}", rejected.lines().count());
    Ok(())
}

fn load_corpus(dir: &Path) -> Result<Vec<(PathBuf, Graphic)>> {
    list_files(dir, &["json", "svg"])?
        .into_iter()
        .map(|f| load_graphic(&f).map(|g| (f, g)))
        .collect()
}

fn cmd_train_vq(corpus: &Path, out: &Path, log: Option<&Path>, cfg: &PipelineConfig) -> Result<()> {
    let graphics = load_corpus(corpus)?;
    if graphics.is_empty() {
        bail!("no graphics in {}", corpus.display());
    }
    let mats = graphics
        .iter()
        .map(|(f, g)| {
            let m = matrix::to_matrix(g).with_context(|| f.display().to_string())?;
            Ok(matrix::scale(&m, matrix::Direction::ToUnit, g.viewbox)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let (codec, tlog) = vq::train(&mats, &cfg.codec)?;
    save_checkpoint(out, &codec.to_checkpoint())?;
    if let Some(p) = log {
        write(p, tlog.to_csv())?;
    }
    println!(
        "trained {} steps on {} graphics; reconstruction mse {:.3e}",
        tlog.steps.len(),
        mats.len(),
        codec.reconstruction_mse(&mats)?
    );
    Ok(())
}

fn cmd_tokenize(ckpt: &Path, input: &Path, out: &Path) -> Result<()> {
    let codec = load_codec(ckpt)?;
    if input.is_dir() {
        let files = list_files(input, &["json", "svg"])?;
        for f in &files {
            let seq = codec.tokenize(&load_graphic(f)?)?;
            write(&out.join(format!("{}.tok", stem(f))), seq.to_text())?;
        }
        println!("tokenized {} graphics", files.len());
    } else {
        write(out, codec.tokenize(&load_graphic(input)?)?.to_text())?;
    }
    Ok(())
}

fn cmd_detokenize(ckpt: &Path, input: &Path, out: &Path, fixer: FixerStrategy) -> Result<()> {
    let codec = load_codec(ckpt)?;
    let one = |src: &Path, dst: &Path| -> Result<FixReport> {
        let (g, report) = codec.detokenize(&read_tokens(src)?, fixer)?;
        write_graphic(dst, &g)?;
        write(&fix_report_path(dst), report.to_json())?;
        Ok(report)
    };
    if input.is_dir() {
        let files = list_files(input, &["tok"])?;
        let mut found = 0;
        for f in &files {
            found += one(f, &out.join(format!("{}.json", stem(f))))?.violations_found;
        }
        println!("decoded {} sequences; {found} connectivity violations repaired", files.len());
    } else {
        one(input, out)?;
    }
    Ok(())
}

fn cmd_train_lm(dir: &Path, out: &Path, log: Option<&Path>, cfg: &PipelineConfig) -> Result<()> {
    let files = list_files(dir, &["tok"])?;
    if files.is_empty() {
        bail!("no token files in {}", dir.display());
    }
    let pairs = files
        .iter()
        .map(|f| {
            let seq = read_tokens(f)?;
            if seq.meta.keywords.is_empty() {
                bail!("{} carries no keywords", f.display());
            }
            Ok((seq.meta.keywords.clone(), seq))
        })
        .collect::<Result<Vec<_>>>()?;
    let (lm, tlog) = train_lm(&pairs, &cfg.lm)?;
    save_checkpoint(out, &lm.to_checkpoint())?;
    if let Some(p) = log {
        write(p, tlog.to_csv())?;
    }
    println!(
        "trained {} steps on {} sequences; cross-entropy {:.4}",
        tlog.steps.len(),
        pairs.len(),
        lm.cross_entropy(&pairs)?
    );
    Ok(())
}

struct GenerateOpts<'a> {
    keywords: &'a str,
    fixer: FixerStrategy,
    sampling: Sampling,
    seed: u64,
}

fn cmd_generate(lm: &StrokeLm, codec: &Codec, o: &GenerateOpts, out: &Path, tokens_out: Option<&Path>) -> Result<()> {
    if lm.layout() != codec.layout() {
        bail!("model layout {:?} does not match codec layout {:?}", lm.layout(), codec.layout());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(o.seed);
    let gen = lm.generate(&[o.keywords], o.sampling, &mut rng)?;
    if gen.truncated {
        eprintln!("note: sequence hit the length limit before EOS");
    }
    let (g, report) = codec.detokenize(&gen.seq, o.fixer)?;
    write_graphic(out, &g)?;
    write(&fix_report_path(out), report.to_json())?;
    if let Some(p) = tokens_out {
        write(p, gen.seq.to_text())?;
    }
    Ok(())
}

fn find_candidate(dir: &Path, name: &str) -> Result<PathBuf> {
    ["json", "svg"]
        .iter()
        .map(|e| dir.join(format!("{name}.{e}")))
        .find(|p| p.is_file())
        .ok_or_else(|| anyhow!("no candidate for {name} in {}", dir.display()))
}

/// Scores one golden/candidate pair.
pub fn evaluate_pair(name: &str, golden: &Graphic, candidate: &Graphic, codec: &Codec, cfg: &PipelineConfig, timings: bool) -> Result<EvalRecord> {
    let t0 = Instant::now();
    let golden_tokens = codec.tokenize(golden)?;
    let t1 = Instant::now();
    let _ = codec.detokenize(&golden_tokens, cfg.fixer)?;
    let t2 = Instant::now();
    let candidate_tokens = codec.tokenize(candidate)?;
    let code_len = metrics::code_len(golden);
    let token_len = golden_tokens.len();
    Ok(EvalRecord {
        name: name.to_owned(),
        edit: metrics::edit_score(golden, candidate),
        code_len,
        token_len,
        cr: metrics::compression_ratio(code_len, token_len)?,
        cr_inverse: metrics::compression_ratio(token_len, code_len)?,
        recall: metrics::recall_score(&golden_tokens, &candidate_tokens)?,
        pixel_iou: metrics::pixel_iou(golden, candidate, cfg.iou_res, cfg.iou_stroke_px)?,
        timings: timings.then(|| Timings {
            tokenize_s: (t1 - t0).as_secs_f64(),
            detokenize_s: (t2 - t1).as_secs_f64(),
        }),
    })
}

fn cmd_evaluate(golden: &Path, candidate: &Path, ckpt: &Path, report: &Path, jobs: usize, timings: bool, cfg: &PipelineConfig) -> Result<()> {
    let codec = load_codec(ckpt)?;
    let files = list_files(golden, &["json", "svg"])?;
    if files.is_empty() {
        bail!("no golden graphics in {}", golden.display());
    }
    let records: Vec<EvalRecord> = pool(jobs)?.install(|| {
        files
            .par_iter()
            .map(|f| {
                let name = stem(f);
                let g = load_graphic(f)?;
                let c = load_graphic(&find_candidate(candidate, &name)?)?;
                evaluate_pair(&name, &g, &c, &codec, cfg, timings)
            })
            .collect::<Result<_>>()
    })?;
    let rep = EvalReport::new(records);
    write(report, rep.to_json())?;
    let a = &rep.aggregates;
    println!(
        "{} pairs: edit {:.4}, cr {:.3} (inverse {:.4}), recall {:.4}, pixel IoU {:.4}",
        a.count, a.edit.mean, a.cr.mean, a.cr_inverse.mean, a.recall.mean, a.pixel_iou.mean
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["stroketok", "render", "--bogus"]), 2);
        assert_eq!(run(["stroketok", "frobnicate"]), 2);
        assert_eq!(run(["stroketok"]), 2);
    }

    #[test]
    fn version_lists_formats() {
        let v = version_text();
        for needle in ["STKM", "STKT", "stroketok v1", "json"] {
            assert!(v.contains(needle), "{v}");
        }
        assert_eq!(run(["stroketok", "--version"]), 0);
    }

    #[test]
    fn domain_error_exits_1() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("missing.json");
        let out = dir.path().join("o.png");
        assert_eq!(
            run(["stroketok", "render", "--in", missing.to_str().unwrap(), "--out", out.to_str().unwrap()]),
            1
        );
    }

    #[test]
    fn unknown_config_key_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.cfg");
        fs::write(&cfg, "codec.bogus = 1\n").unwrap();
        let out = dir.path().join("x");
        let code = run([
            "stroketok",
            "train-vq",
            "--corpus",
            dir.path().to_str().unwrap(),
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 2);
    }

    #[test]
    fn gen_synth_writes_files() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("corpus");
        assert_eq!(run(["stroketok", "gen-synth", "--n", "12", "--seed", "7", "--out", out.to_str().unwrap()]), 0);
        assert_eq!(list_files(&out, &["json"]).unwrap().len(), 12);
    }
}
