use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use ni_stratum::api::scenario::{run_scenario, RunOptions, DEFAULT_TOKEN};
use ni_stratum::api::service::{serve, Clock, ServeConfig, Service};

#[derive(Parser)]
#[command(name = "nist", version, about = "Network intelligence orchestrator")]
struct Cli {
    /// Seed for the simulation and training pipelines.
    #[arg(long, global = true, env = "NIST_SEED")]
    seed: Option<u64>,
    /// Directory for the catalog, policy database and pipeline runs.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Service configuration (TOML or JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Service base URL for client commands.
    #[arg(long, global = true, env = "NIST_URL", default_value = "http://127.0.0.1:8080")]
    url: String,
    /// Bearer token for client commands.
    #[arg(long, global = true, env = "NIST_TOKEN", default_value = DEFAULT_TOKEN)]
    token: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
    /// Onboard a NIFD or NISD file.
    Onboard { file: PathBuf },
    /// Create a NIS from an onboarded NISD (name or id) or a NISD file.
    Create {
        nisd: String,
        #[arg(long)]
        no_wait: bool,
    },
    /// Instantiate a created NIS.
    Instantiate {
        id: String,
        #[arg(long)]
        no_wait: bool,
    },
    /// Update a running instance with a new NIFD or NISD.
    Update {
        id: String,
        file: PathBuf,
        #[arg(long)]
        no_wait: bool,
    },
    /// Terminate a running instance.
    Terminate {
        id: String,
        #[arg(long)]
        no_wait: bool,
    },
    /// Run a scenario file; exits non-zero on invariant violations.
    RunScenario {
        file: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Show an instance (nis-*) or a request (req-*).
    Status { id: String },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let client = Client { base: cli.url.trim_end_matches('/').to_string(), token: cli.token.clone() };
    match cli.command {
        Command::Serve { bind } => {
            let mut config = match &cli.config {
                Some(p) => ServeConfig::load(p)?,
                None => ServeConfig::default(),
            };
            if let Some(s) = cli.seed {
                config.seed = s;
            }
            if cli.data_dir.is_some() {
                config.data_dir = cli.data_dir.clone();
            }
            if let Some(b) = bind {
                config.bind = b;
            }
            let svc = Arc::new(Service::start(config.build_nio()?, Clock::Wall(Instant::now())));
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(svc, &config.bind))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::RunScenario { file, out } => {
            let opts = RunOptions { seed: cli.seed, data_dir: cli.data_dir.clone(), ..RunOptions::default() };
            let run = run_scenario(&file, &out, &opts)?;
            println!(
                "{} records, {} violations, log in {}",
                run.records.len(),
                run.summary.violations.len(),
                out.join("events.jsonl").display()
            );
            for v in &run.summary.violations {
                println!("violation at {}: {} {}", v.t, v.invariant, v.detail);
            }
            Ok(ExitCode::from(run.exit_code() as u8))
        }
        Command::Onboard { file } => {
            let text = read(&file)?;
            client.show(client.call("POST", "/v1/descriptors", Some(json!({"descriptor": text})))?)
        }
        Command::Create { nisd, no_wait } => {
            let nisd = if Path::new(&nisd).is_file() { read(Path::new(&nisd))? } else { nisd };
            client.lifecycle("POST", "/v1/nis", Some(json!({"nisd": nisd})), no_wait)
        }
        Command::Instantiate { id, no_wait } => {
            client.lifecycle("POST", &format!("/v1/nis/{id}/instances"), Some(json!({})), no_wait)
        }
        Command::Update { id, file, no_wait } => {
            let text = read(&file)?;
            client.lifecycle("PATCH", &format!("/v1/nis/{id}"), Some(json!({"descriptor": text})), no_wait)
        }
        Command::Terminate { id, no_wait } => client.lifecycle("DELETE", &format!("/v1/instances/{id}"), None, no_wait),
        Command::Status { id } => {
            let path = if id.starts_with("req-") { format!("/v1/requests/{id}") } else { format!("/v1/instances/{id}") };
            client.show(client.call("GET", &path, None)?)
        }
    }
}

fn read(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

struct Client {
    base: String,
    token: String,
}

impl Client {
    fn call(&self, method: &str, path: &str, body: Option<Value>) -> anyhow::Result<(u16, Value)> {
        let http = reqwest::blocking::Client::new();
        let url = format!("{}{}", self.base, path);
        let mut req = http.request(method.parse()?, &url).bearer_auth(&self.token);
        if let Some(b) = body {
            req = req.json(&b);
        }
        let res = req.send().with_context(|| format!("{method} {url}"))?;
        let status = res.status().as_u16();
        let body = res.json::<Value>().unwrap_or(Value::Null);
        Ok((status, body))
    }

    fn show(&self, (status, body): (u16, Value)) -> anyhow::Result<ExitCode> {
        println!("{}", serde_json::to_string_pretty(&body)?);
        Ok(if (200..300).contains(&status) { ExitCode::SUCCESS } else { ExitCode::from(1) })
    }

    fn lifecycle(&self, method: &str, path: &str, body: Option<Value>, no_wait: bool) -> anyhow::Result<ExitCode> {
        let (status, accepted) = self.call(method, path, body)?;
        if status != 202 || no_wait {
            return self.show((status, accepted));
        }
        let Some(id) = accepted["request_id"].as_str() else { bail!("no request id in {accepted}") };
        let deadline = Instant::now() + Duration::from_secs(60);
        loop {
            let (status, body) = self.call("GET", &format!("/v1/requests/{id}"), None)?;
            if body["state"]["status"] != "pending" || Instant::now() > deadline {
                let ok = body["state"]["submission"]["outcome"] == "ok";
                println!("{}", serde_json::to_string_pretty(&body)?);
                return Ok(if status == 200 && ok { ExitCode::SUCCESS } else { ExitCode::from(1) });
            }
            std::thread::sleep(Duration::from_millis(100));
        }
    }
}
