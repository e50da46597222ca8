//! Operator CLI for the private discovery toolkit.

use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use privdisc::cli::{self, CliError, CmdOutput};

#[derive(Parser)]
#[command(
    name = "privdisc",
    about = "Private mutual authentication and private 0-RTT service discovery"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct HomeArg {
    /// Key directory (defaults to $PRIVDISC_HOME).
    #[arg(long)]
    home: Option<PathBuf>,
}

impl HomeArg {
    fn resolve(&self) -> Result<PathBuf, CliError> {
        if let Some(home) = &self.home {
            return Ok(home.clone());
        }
        std::env::var_os(cli::HOME_ENV)
            .map(PathBuf::from)
            .ok_or(CliError {
                code: cli::EXIT_MALFORMED,
                message: format!("--home not given and {} not set", cli::HOME_ENV),
            })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Identity-provider operations.
    Idp {
        #[command(subcommand)]
        command: IdpCommand,
    },
    /// Generate a signing key pair.
    Keygen {
        /// Output path for the secret key; the public key lands next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Build and emit a service advertisement.
    Advertise {
        #[command(flatten)]
        home: HomeArg,
        /// Acting principal's hierarchical name.
        #[arg(long = "as")]
        as_name: String,
        /// Acting principal's signing key file.
        #[arg(long)]
        key: PathBuf,
        /// Comma-separated authorization policy prefixes.
        #[arg(long)]
        policy: String,
        /// Advertisement lifetime in seconds.
        #[arg(long, default_value_t = 3600)]
        ttl: u64,
        /// Where to write the advertisement bytes (`-` for stdout).
        #[arg(long, default_value = "-")]
        out: String,
        /// Also print the mDNS TXT-record form.
        #[arg(long)]
        txt: bool,
        /// Override the clock (unix seconds).
        #[arg(long)]
        now: Option<u64>,
    },
    /// Process a received advertisement.
    Discover {
        #[command(flatten)]
        home: HomeArg,
        #[arg(long = "as")]
        as_name: String,
        #[arg(long)]
        key: PathBuf,
        /// Client-side authorization policy for acceptable servers.
        #[arg(long)]
        policy: Option<String>,
        /// Advertisement file (`-` for stdin).
        #[arg(long = "in", default_value = "-")]
        input: String,
        #[arg(long)]
        now: Option<u64>,
    },
    /// Run the 0-RTT exchange between two local principals over a loopback
    /// pipe and compare session keys.
    Connect {
        #[command(flatten)]
        home: HomeArg,
        #[arg(long)]
        client: String,
        #[arg(long)]
        client_key: PathBuf,
        #[arg(long)]
        server: String,
        #[arg(long)]
        server_key: PathBuf,
        /// Server authorization policy.
        #[arg(long)]
        policy: String,
        /// File with early application data for the first flight.
        #[arg(long)]
        early_data: Option<PathBuf>,
        #[arg(long)]
        now: Option<u64>,
    },
    /// Benchmarks (TSV on stdout).
    Bench {
        /// Which table: `ibe` or `handshake`.
        which: String,
        #[arg(long, default_value_t = 50)]
        iters: usize,
    },
}

#[derive(Subcommand)]
enum IdpCommand {
    /// Create the identity provider.
    Init {
        #[command(flatten)]
        home: HomeArg,
        /// Root name component, e.g. `dev.v.io`.
        #[arg(long)]
        name: String,
    },
    /// Issue a blessing and key ring for a principal.
    Issue {
        #[command(flatten)]
        home: HomeArg,
        /// Full hierarchical name, starting with the root component.
        #[arg(long)]
        name: String,
        /// The subject's public-key file.
        #[arg(long)]
        pubkey: PathBuf,
    },
}

fn now_or(now: Option<u64>) -> u64 {
    now.unwrap_or_else(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .expect("clock after epoch")
            .as_secs()
    })
}

fn read_input(source: &str) -> Result<Vec<u8>, CliError> {
    if source == "-" {
        let mut buf = Vec::new();
        std::io::stdin()
            .read_to_end(&mut buf)
            .map_err(CliError::from)?;
        Ok(buf)
    } else {
        std::fs::read(source).map_err(CliError::from)
    }
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    let output: CmdOutput = match cli.command {
        Command::Idp { command } => match command {
            IdpCommand::Init { home, name } => cli::cmd_idp_init(&home.resolve()?, &name)?,
            IdpCommand::Issue { home, name, pubkey } => {
                cli::cmd_idp_issue(&home.resolve()?, &name, &pubkey)?
            }
        },
        Command::Keygen { out } => cli::cmd_keygen(&out)?,
        Command::Advertise {
            home,
            as_name,
            key,
            policy,
            ttl,
            out,
            txt,
            now,
        } => {
            let output = cli::cmd_advertise(
                &home.resolve()?,
                &as_name,
                &key,
                &policy,
                ttl,
                txt,
                now_or(now),
            )?;
            let bytes = output.data.as_deref().unwrap_or_default();
            if out == "-" {
                // bytes to stdout, report to stderr
                std::io::stdout().write_all(bytes)?;
                eprint!("{}", output.text);
                return Ok(());
            }
            std::fs::write(&out, bytes)?;
            CmdOutput {
                text: output.text,
                data: None,
            }
        }
        Command::Discover {
            home,
            as_name,
            key,
            policy,
            input,
            now,
        } => {
            let bytes = read_input(&input)?;
            cli::cmd_discover(
                &home.resolve()?,
                &as_name,
                &key,
                policy.as_deref(),
                &bytes,
                now_or(now),
            )?
        }
        Command::Connect {
            home,
            client,
            client_key,
            server,
            server_key,
            policy,
            early_data,
            now,
        } => {
            let early = early_data.map(std::fs::read).transpose()?;
            cli::cmd_connect(
                &home.resolve()?,
                &client,
                &client_key,
                &server,
                &server_key,
                &policy,
                early.as_deref(),
                now_or(now),
            )?
        }
        Command::Bench { which, iters } => cli::cmd_bench(&which, iters)?,
    };
    print!("{}", output.text);
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if e.code == cli::EXIT_NOT_AUTHORIZED {
                // the "not authorized" verdict is an answer, not a failure
                println!("{}", e.message);
            } else {
                eprintln!("error: {}", e.message);
            }
            ExitCode::from(e.code as u8)
        }
    }
}
