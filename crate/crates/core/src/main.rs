use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use colorvein::attacks::{brute_force_attack, false_accept_attack, ThresholdRate};
use colorvein::colorize::{huber_loss, save_npz, save_preview_png, ChromaPlanes};
use colorvein::config::RunConfig;
use colorvein::embedding::{config_hash, write_loss_csv, Checkpoint};
use colorvein::extraction::segment;
use colorvein::hints::{derive_hints, IdentityToken};
use colorvein::imaging::{load_gray, save_binary_pgm};
use colorvein::matching::{self, TemplateRecord, TemplateStore, TokenVault, FORMAT_VERSION};
use colorvein::metrics::compute_eer;
use colorvein::pipeline::{protect, train_system, System, ENROLL_APPLICATION};
use colorvein::protocol::{leakage_report, Evaluation, Scenario};
use colorvein::report::{histogram_svg, score_set_svg, write_json, MetricReport};
use colorvein::synthetic::{derive_seed, SyntheticCorpus};
use colorvein::{Error, Result, VERSION};

#[derive(Parser)]
#[command(name = "colorvein", version, about = "Cancelable vein biometrics via token-bound colorization")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// INI-style run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    #[arg(long, global = true)]
    vault: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// normal, stolen, cross_app, revocability, linkability, or all.
    #[arg(long, global = true)]
    scenario: Option<String>,
    /// Hint count.
    #[arg(long, global = true)]
    m: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Any config key, e.g. `--set train.epochs=20`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus (PGM images, ground truth, manifest).
    Synth,
    /// Segment a grayscale image into a binary vein pattern.
    Segment { image: PathBuf },
    /// Colorize an image under a token; writes NPZ, PNG preview and a summary.
    Colorize {
        image: PathBuf,
        #[command(flatten)]
        who: Who,
        /// Token seed as hex; derived from the config's token seed if absent.
        #[arg(long)]
        token_seed: Option<String>,
    },
    /// Train the feature extractor and write a checkpoint.
    Train,
    /// Enroll an identity from one or more images.
    Enroll {
        #[command(flatten)]
        who: Who,
        #[arg(long)]
        token_seed: Option<String>,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Verify a probe; prints ACCEPT or REJECT.
    Verify {
        #[command(flatten)]
        who: Who,
        #[arg(long, allow_negative_numbers = true)]
        threshold: f64,
        image: PathBuf,
    },
    /// Revoke the live template and re-enroll under a new token seed.
    Revoke {
        #[command(flatten)]
        who: Who,
        #[arg(long)]
        new_seed: String,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Run evaluation protocols and write metric reports.
    Evaluate {
        /// Also estimate privacy leakage.
        #[arg(long)]
        leakage: bool,
    },
    /// Brute-force or false-accept attack against an enrolled template.
    Attack {
        #[arg(long, value_enum, default_value_t = AttackArg::BruteForce)]
        kind: AttackArg,
        /// Target subject; the first enrolled subject by default.
        #[arg(long)]
        identity: Option<String>,
    },
}

#[derive(Args)]
struct Who {
    #[arg(long)]
    identity: String,
    #[arg(long, default_value = ENROLL_APPLICATION)]
    app: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum AttackArg {
    BruteForce,
    FalseAccept,
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
}

impl Ctx {
    fn path(&self, explicit: &Option<PathBuf>, name: &str) -> PathBuf {
        explicit.clone().unwrap_or_else(|| self.out.join(name))
    }
    fn store(&self) -> PathBuf {
        self.path(&self.cfg.paths.store, "store.jsonl")
    }
    fn vault(&self) -> PathBuf {
        self.path(&self.cfg.paths.vault, "vault.jsonl")
    }
    fn checkpoint(&self) -> PathBuf {
        self.path(&self.cfg.paths.checkpoint, "model.ckpt")
    }
    fn system(&self) -> Result<System> {
        let ckpt = Checkpoint::load(self.checkpoint())?;
        Ok(System {
            model: ckpt.model,
            params: self.cfg.pipeline,
        })
    }
    fn token(&self, who: &Who, hex_seed: &Option<String>) -> Result<IdentityToken> {
        Ok(match hex_seed {
            Some(h) => IdentityToken::new(&who.identity, &who.app, parse_seed(h)?),
            None if who.app == ENROLL_APPLICATION => self.cfg.token_plan().enrolled(&who.identity),
            None => self
                .cfg
                .token_plan()
                .labeled(&who.identity, &who.app, &format!("enroll/{}", who.app)),
        })
    }
}

fn parse_seed(s: &str) -> Result<u128> {
    u128::from_str_radix(s.trim_start_matches("0x"), 16)
        .map_err(|_| Error::Config(format!("token seed {s:?} is not 1-32 hex digits")))
}

fn build_config(g: &Global) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in &g.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = g.seed {
        cfg.set("seed", &s.to_string())?;
    }
    let p = |x: &Option<PathBuf>| x.as_ref().map(|p| p.display().to_string());
    for (key, v) in [
        ("paths.manifest", p(&g.manifest)),
        ("paths.store", p(&g.store)),
        ("paths.vault", p(&g.vault)),
        ("paths.checkpoint", p(&g.checkpoint)),
        ("paths.out", p(&g.out)),
        ("pipeline.m", g.m.map(|m| m.to_string())),
    ] {
        if let Some(v) = v {
            cfg.set(key, &v)?;
        }
    }
    if let Some(s) = g.scenario.as_deref().filter(|s| *s != "all") {
        cfg.set("protocol.scenario", s)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct Stamp<'a> {
    command: &'a str,
    version: &'a str,
    config_hash: String,
    seed: u64,
    token_seed: u64,
    config: String,
    unix_time: u64,
}

fn write_stamp(ctx: &Ctx, command: &str) -> Result<()> {
    let stamp = Stamp {
        command,
        version: VERSION,
        config_hash: ctx.cfg.hash(),
        seed: ctx.cfg.seed,
        token_seed: ctx.cfg.token_seed,
        config: ctx.cfg.to_ini(),
        unix_time: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
    };
    write_json(ctx.out.join(format!("stamp_{command}.json")), &stamp)
}

fn stem(p: &Path) -> String {
    p.file_stem().map_or("image".into(), |s| s.to_string_lossy().into_owned())
}

#[derive(Serialize)]
struct ColorizeSummary {
    token_fingerprint: String,
    offset: (i64, i64),
    hints: usize,
    max_hint_error: f64,
    huber_to_hints: f64,
    delta: f64,
}

#[derive(Serialize)]
struct AttackSummary {
    kind: &'static str,
    target: String,
    global_tau: f64,
    user_tau: f64,
    seed: u64,
    runs: Vec<AttackRun>,
}

#[derive(Serialize)]
struct AttackRun {
    known_fraction: Option<f64>,
    n_probes: usize,
    mean_score: f64,
    acceptance: Vec<ThresholdRate>,
}

/// Exit code for a finished command.
fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = build_config(&cli.global)?;
    let out = cfg.paths.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let ctx = Ctx { cfg, out };
    let cfg = &ctx.cfg;
    let name = match &cli.command {
        Command::Synth => "synth",
        Command::Segment { .. } => "segment",
        Command::Colorize { .. } => "colorize",
        Command::Train => "train",
        Command::Enroll { .. } => "enroll",
        Command::Verify { .. } => "verify",
        Command::Revoke { .. } => "revoke",
        Command::Evaluate { .. } => "evaluate",
        Command::Attack { .. } => "attack",
    };
    write_stamp(&ctx, name)?;
    match cli.command {
        Command::Synth => {
            let dir = ctx.out.join("corpus");
            let m = SyntheticCorpus::generate(cfg.corpus)?.export(&dir)?;
            println!("wrote {} images and {}", m.entries.len(), dir.join("manifest.csv").display());
        }
        Command::Segment { image } => {
            let pattern = segment(&load_gray(&image, None)?)?;
            let path = ctx.out.join(format!("{}_mask.pgm", stem(&image)));
            save_binary_pgm(&pattern, &path)?;
            println!("{} vein pixels -> {}", pattern.count_ones(), path.display());
        }
        Command::Colorize { image, who, token_seed } => {
            let token = ctx.token(&who, &token_seed)?;
            let mask = segment(&load_gray(&image, None)?)?;
            let cv = protect(&mask, &token, &cfg.pipeline)?;
            let hints = derive_hints(&token, &mask, cfg.pipeline.m)?;
            let chroma = cv.chroma();
            let (mut a, mut b) = (chroma.a().to_vec(), chroma.b().to_vec());
            let mut max_err: f64 = 0.0;
            let (dx, dy) = cv.provenance().offset;
            let (h, w) = cv.dims();
            for hint in &hints.hints {
                let (y, x) = (hint.y as i64 + dy, hint.x as i64 + dx);
                if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 {
                    continue;
                }
                let i = y as usize * w + x as usize;
                max_err = max_err.max((a[i] - hint.chroma_a).abs()).max((b[i] - hint.chroma_b).abs());
                a[i] = hint.chroma_a;
                b[i] = hint.chroma_b;
            }
            let target = ChromaPlanes::new(h, w, a, b)?;
            let s = stem(&image);
            save_npz(&cv, ctx.out.join(format!("{s}.npz")))?;
            save_preview_png(&cv, ctx.out.join(format!("{s}_preview.png")))?;
            let summary = ColorizeSummary {
                token_fingerprint: token.fingerprint().to_string(),
                offset: cv.provenance().offset,
                hints: hints.hints.len(),
                max_hint_error: max_err,
                huber_to_hints: huber_loss(chroma, &target, cfg.protocol.delta)?,
                delta: cfg.protocol.delta,
            };
            write_json(ctx.out.join(format!("{s}_colorize.json")), &summary)?;
            println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
        }
        Command::Train => {
            let corpus = cfg.load_corpus()?;
            let (system, outcome) = train_system(&corpus, cfg.pipeline, cfg.token_plan(), &cfg.train, cfg.cross_app_tokens)?;
            let ckpt = Checkpoint {
                model: system.model,
                centers: outcome.centers,
                config_hash: config_hash(cfg.to_ini().as_bytes()),
            };
            ckpt.save(ctx.checkpoint())?;
            write_loss_csv(&outcome.history, ctx.out.join("loss.csv"))?;
            let last = outcome.history.last().expect("at least one epoch");
            println!(
                "trained {} epochs, final loss {:.6} -> {}",
                outcome.history.len(),
                last.total,
                ctx.checkpoint().display()
            );
        }
        Command::Enroll { who, token_seed, images } => {
            let system = ctx.system()?;
            let token = ctx.token(&who, &token_seed)?;
            let imgs = images.iter().map(|p| load_gray(p, None)).collect::<Result<Vec<_>>>()?;
            let mut store = TemplateStore::open(ctx.store())?;
            let mut vault = TokenVault::open(ctx.vault())?;
            let rec = matching::enroll(&who.identity, &imgs, &token, &system, &mut store, &mut vault)?;
            println!("{}", rec.to_json());
        }
        Command::Verify { who, threshold, image } => {
            let system = ctx.system()?;
            let store = TemplateStore::open(ctx.store())?;
            let vault = TokenVault::open(ctx.vault())?;
            let v = matching::verify(&load_gray(&image, None)?, &who.identity, &who.app, threshold, &system, &store, &vault)?;
            println!("{} {:.6}", if v.accepted { "ACCEPT" } else { "REJECT" }, v.score);
            if !v.accepted {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Revoke { who, new_seed, images } => {
            let system = ctx.system()?;
            let imgs = images.iter().map(|p| load_gray(p, None)).collect::<Result<Vec<_>>>()?;
            let mut store = TemplateStore::open(ctx.store())?;
            let mut vault = TokenVault::open(ctx.vault())?;
            let rec = matching::revoke_reissue(&who.identity, &who.app, parse_seed(&new_seed)?, &imgs, &system, &mut store, &mut vault)?;
            println!("{}", rec.to_json());
        }
        Command::Evaluate { leakage } => {
            let system = ctx.system()?;
            let corpus = cfg.load_corpus()?;
            let eval = Evaluation::new(&system, &corpus, cfg.token_plan())?;
            let scenarios = match cli.global.scenario.as_deref() {
                Some("all") => Scenario::ALL.to_vec(),
                _ => vec![cfg.protocol.scenario],
            };
            let leak = if leakage {
                Some(leakage_report(&system, &corpus, cfg.token_plan())?)
            } else {
                None
            };
            for sc in scenarios {
                let scores = eval.run(sc, cfg.seed)?;
                let mut report = MetricReport::from_scores(sc, &scores, cfg.protocol.bins, cfg.protocol.clip)?;
                report.leakage = leak.clone();
                let path = ctx.out.join(format!("report_{sc}.json"));
                write_json(&path, &report)?;
                let csv_path = ctx.out.join(format!("scores_{sc}.csv"));
                let f = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
                scores.write_csv(std::io::BufWriter::new(f))?;
                let svg_path = ctx.out.join(format!("scores_{sc}.svg"));
                std::fs::write(&svg_path, score_set_svg(&format!("{sc} scores"), &scores, cfg.protocol.bins))
                    .map_err(|e| Error::io(&svg_path, e))?;
                println!("{sc}: {}", serde_json::to_string(&report).expect("report serializes"));
            }
        }
        Command::Attack { kind, identity } => {
            let system = ctx.system()?;
            let corpus = cfg.load_corpus()?;
            let eval = Evaluation::new(&system, &corpus, cfg.token_plan())?;
            let normal = eval.run(Scenario::Normal, cfg.seed)?;
            let global_tau = compute_eer(&normal.genuine, &normal.impostor)?.threshold;
            let target_id = identity.unwrap_or_else(|| eval.subjects()[0].clone());
            let ti = eval
                .subjects()
                .iter()
                .position(|s| *s == target_id)
                .ok_or_else(|| Error::Config(format!("{target_id} is not an enrolled subject")))?;
            let own = eval.subject_scores(&target_id)?;
            let user_tau = compute_eer(&own.genuine, &own.impostor)?.threshold;
            let token = cfg.token_plan().enrolled(&target_id);
            let target = TemplateRecord {
                identity_id: target_id.clone(),
                application_id: token.application_id.clone(),
                token_fingerprint: token.fingerprint(),
                template: eval.templates()[ti],
                created_at: 0,
                version: FORMAT_VERSION,
            };
            let seed = derive_seed(cfg.seed, "attack");
            let n = cfg.protocol.n_attack;
            let (kind_name, reports) = match kind {
                AttackArg::BruteForce => ("brute_force", vec![brute_force_attack(&target, n, seed)?]),
                AttackArg::FalseAccept => (
                    "false_accept",
                    cfg.protocol
                        .known_fractions
                        .iter()
                        .map(|&f| false_accept_attack(&target, f, n, seed, cfg.protocol.known_positions))
                        .collect::<Result<Vec<_>>>()?,
                ),
            };
            let mut runs = Vec::new();
            let mut csv = String::from("known_fraction,score\n");
            let mut series: Vec<(String, Vec<f64>)> =
                vec![("genuine".into(), normal.genuine.clone()), ("impostor".into(), normal.impostor.clone())];
            for mut r in reports {
                r.record_threshold("global_eer", global_tau);
                r.record_threshold("user_eer", user_tau);
                let f = r.known_fraction.unwrap_or(0.0);
                for s in &r.scores {
                    csv.push_str(&format!("{f},{s:.6}\n"));
                }
                series.push((
                    match r.known_fraction {
                        Some(f) => format!("attack N={f}"),
                        None => "brute force".into(),
                    },
                    r.scores.clone(),
                ));
                runs.push(AttackRun {
                    known_fraction: r.known_fraction,
                    n_probes: r.n_probes,
                    mean_score: r.mean_score(),
                    acceptance: r.acceptance,
                });
            }
            let summary = AttackSummary {
                kind: kind_name,
                target: target_id,
                global_tau,
                user_tau,
                seed,
                runs,
            };
            write_json(ctx.out.join(format!("attack_{kind_name}.json")), &summary)?;
            let p = ctx.out.join(format!("attack_{kind_name}_scores.csv"));
            std::fs::write(&p, csv).map_err(|e| Error::io(&p, e))?;
            let refs: Vec<(&str, &[f64])> = series.iter().map(|(n, v)| (n.as_str(), v.as_slice())).collect();
            let p = ctx.out.join(format!("attack_{kind_name}.svg"));
            std::fs::write(&p, histogram_svg(&format!("{kind_name} attack"), &refs, cfg.protocol.bins))
                .map_err(|e| Error::io(&p, e))?;
            println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
