use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use log::info;

use protoscope::attrs::ExtractOptions;
use protoscope::compliance::CipherRegistry;
use protoscope::fingerprint::{build_fingerprint, load_library, match_fingerprint};
use protoscope::flow::FlowConfig;
use protoscope::model::{
    builtin_models, load_model_dir, parse_model_unchecked, validate_model_set, ProtocolModel, Severity,
};
use protoscope::packet_io::{read_pcap, ByteOrder};
use protoscope::pipeline::{analyze_packets, Analysis, AnalysisConfig};
use protoscope::report::{
    aggregate, device_fingerprints, export, render_table, DeviceMap, ExportFormat, VersionStamps,
};
use protoscope::synth::{load_manifest, synth_corpus, truth_path, write_corpus};

/// Exit status of `analyze --fail-on-vulnerable` when a vulnerable finding exists.
const EXIT_VULNERABLE: u8 = 3;

#[derive(Parser)]
#[command(name = "protoscope", version, about = "Port-agnostic protocol detection and auditing for pcap files")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Store HTTP credentials as a digest and length instead of raw text.
    #[arg(long, global = true, default_value_t = true, action = ArgAction::Set, value_name = "BOOL")]
    redact_credentials: bool,
    /// Idle gap that splits a 5-tuple into separate flows.
    #[arg(long, global = true, value_name = "SECS")]
    flow_timeout: Option<u64>,
    /// Overrides the manifest seed when synthesizing.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Protocol model documents.
    Models {
        #[command(subcommand)]
        command: ModelsCommand,
    },
    /// Detect, extract, and audit every flow in a capture.
    Analyze(AnalyzeArgs),
    /// Device fingerprints.
    Fingerprint {
        #[command(subcommand)]
        command: FingerprintCommand,
    },
    /// Generate a capture and its ground truth from a manifest.
    Synth {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write big-endian record headers.
        #[arg(long)]
        big_endian: bool,
    },
}

#[derive(Subcommand)]
enum ModelsCommand {
    /// Print diagnostics; exits nonzero when any model has errors.
    Validate { dir: PathBuf },
}

#[derive(Args)]
struct Inputs {
    /// Model directory. Defaults to the built-in models.
    #[arg(long)]
    models: Option<PathBuf>,
    /// Cipher category CSV. Defaults to the built-in snapshot.
    #[arg(long)]
    ciphers: Option<PathBuf>,
    /// `device_id,ip_or_mac` lines.
    #[arg(long)]
    devices: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    pcap: PathBuf,
    #[command(flatten)]
    inputs: Inputs,
    /// Write report and per-flow results here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
    #[arg(long)]
    fail_on_vulnerable: bool,
}

#[derive(Subcommand)]
enum FingerprintCommand {
    /// Build one device fingerprint from a capture.
    Build {
        pcap: PathBuf,
        #[arg(long)]
        device: String,
        /// Restrict to flows the device map attributes to `--device`.
        #[arg(long)]
        devices: Option<PathBuf>,
        #[arg(long)]
        models: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank library fingerprints against a capture.
    Match {
        pcap: PathBuf,
        #[arg(long)]
        library: PathBuf,
        /// Match each mapped device separately instead of the whole capture.
        #[arg(long)]
        devices: Option<PathBuf>,
        #[arg(long)]
        models: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
    Table,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let g = cli.global;
    match cli.command {
        Command::Models {
            command: ModelsCommand::Validate { dir },
        } => validate_models(&dir),
        Command::Analyze(a) => analyze(&g, a),
        Command::Fingerprint { command } => fingerprint(&g, command),
        Command::Synth {
            manifest,
            out,
            big_endian,
        } => {
            let mut m = load_manifest(&manifest)?;
            if let Some(seed) = g.seed {
                m.seed = seed;
            }
            let corpus = synth_corpus(&m, &CipherRegistry::builtin())?;
            let order = if big_endian { ByteOrder::Big } else { ByteOrder::Little };
            write_corpus(&corpus, &out, order)?;
            println!(
                "wrote {} packets in {} flows to {} (truth: {})",
                corpus.packets.len(),
                corpus.truth.entries.len(),
                out.display(),
                truth_path(&out).display()
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn validate_models(dir: &Path) -> Result<ExitCode> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot read {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut errors = 0;
    let mut models = Vec::new();
    for p in &paths {
        let parsed = std::fs::read_to_string(p)
            .map_err(anyhow::Error::from)
            .and_then(|t| parse_model_unchecked(&t).map_err(anyhow::Error::from));
        match parsed {
            Ok(m) => models.push(m),
            Err(e) => {
                errors += 1;
                println!("{}: error: {e}", p.display());
            }
        }
    }
    for d in validate_model_set(&models) {
        if d.severity == Severity::Error {
            errors += 1;
        }
        println!("{d}");
    }
    println!("{} model(s), {errors} error(s)", paths.len());
    Ok(if errors == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn load_models(dir: Option<&Path>) -> Result<Vec<ProtocolModel>> {
    match dir {
        Some(d) => Ok(load_model_dir(d)?),
        None => Ok(builtin_models()),
    }
}

fn load_devmap(path: Option<&Path>) -> Result<DeviceMap> {
    Ok(path.map(DeviceMap::load).transpose()?.unwrap_or_default())
}

fn run_pipeline(g: &Global, pcap: &Path, models: &[ProtocolModel], registry: &CipherRegistry) -> Result<Analysis> {
    let cap = read_pcap(pcap).with_context(|| format!("reading {}", pcap.display()))?;
    if cap.truncated {
        log::warn!("{} ends with a truncated record", pcap.display());
    }
    let mut config = AnalysisConfig {
        flow: FlowConfig::default(),
        extract: ExtractOptions {
            redact_credentials: g.redact_credentials,
        },
    };
    if let Some(t) = g.flow_timeout {
        config.flow.flow_timeout_secs = t;
    }
    let a = analyze_packets(&cap.packets, models, registry, &config)?;
    info!(
        "{} packets, {} flows, {} detected",
        cap.packets.len(),
        a.flows.len(),
        a.detected().count()
    );
    Ok(a)
}

fn analyze(g: &Global, args: AnalyzeArgs) -> Result<ExitCode> {
    let models = load_models(args.inputs.models.as_deref())?;
    let registry = match &args.inputs.ciphers {
        Some(p) => CipherRegistry::load(p)?,
        None => CipherRegistry::builtin(),
    };
    let devmap = load_devmap(args.inputs.devices.as_deref())?;
    let analysis = run_pipeline(g, &args.pcap, &models, &registry)?;
    let fps = device_fingerprints(&analysis.flows, &devmap);
    let report = aggregate(&analysis.flows, &fps, &devmap, VersionStamps::new(&models, &registry));

    let (body, ext) = match args.format {
        Format::Json => (export(&report, ExportFormat::Json), "json"),
        Format::Csv => (export(&report, ExportFormat::Csv), "csv"),
        Format::Table => (render_table(&report).into_bytes(), "txt"),
    };
    match &args.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(format!("report.{ext}")), &body)?;
            let flows = serde_json::to_string_pretty(&analysis)? + "\n";
            std::fs::write(dir.join("flows.json"), flows)?;
            for fp in &fps {
                std::fs::write(dir.join(format!("fingerprint-{}.json", fp.device_id)), fp.to_json() + "\n")?;
            }
            println!("wrote report.{ext} and flows.json to {}", dir.display());
        }
        None => {
            use std::io::Write;
            std::io::stdout().write_all(&body)?;
        }
    }
    if args.fail_on_vulnerable && report.has_vulnerable() {
        return Ok(ExitCode::from(EXIT_VULNERABLE));
    }
    Ok(ExitCode::SUCCESS)
}

fn fingerprint(g: &Global, command: FingerprintCommand) -> Result<ExitCode> {
    match command {
        FingerprintCommand::Build {
            pcap,
            device,
            devices,
            models,
            out,
        } => {
            let models = load_models(models.as_deref())?;
            let devmap = devices.as_deref().map(DeviceMap::load).transpose()?;
            let a = run_pipeline(g, &pcap, &models, &CipherRegistry::builtin())?;
            let bundles = a
                .flows
                .iter()
                .filter(|f| {
                    devmap
                        .as_ref()
                        .is_none_or(|m| m.attribute(f.client, f.client_mac, f.server, f.server_mac) == device)
                })
                .filter_map(|f| f.attributes.as_ref());
            let fp = build_fingerprint(&device, bundles);
            if fp.is_empty() {
                bail!("no fingerprintable attributes found for {device}");
            }
            let json = fp.to_json() + "\n";
            match out {
                Some(p) => std::fs::write(&p, json).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{json}"),
            }
            Ok(ExitCode::SUCCESS)
        }
        FingerprintCommand::Match {
            pcap,
            library,
            devices,
            models,
        } => {
            let models = load_models(models.as_deref())?;
            let lib = load_library(&library)?;
            if lib.is_empty() {
                bail!("no fingerprints in {}", library.display());
            }
            let a = run_pipeline(g, &pcap, &models, &CipherRegistry::builtin())?;
            let observed = match devices {
                Some(p) => device_fingerprints(&a.flows, &DeviceMap::load(&p)?),
                None => vec![build_fingerprint(
                    pcap.file_stem().and_then(|s| s.to_str()).unwrap_or("observed"),
                    a.flows.iter().filter_map(|f| f.attributes.as_ref()),
                )],
            };
            for obs in &observed {
                println!("{}:", obs.device_id);
                for (rank, m) in match_fingerprint(obs, &lib).iter().enumerate() {
                    println!(
                        "  {:>2}. {:<24} score {:.4}  server-cipher overlap {:.2}",
                        rank + 1,
                        m.device_id,
                        m.score,
                        m.server_selected_overlap
                    );
                }
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
