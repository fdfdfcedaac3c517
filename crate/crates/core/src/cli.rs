//! The `ibetls` command line. Identity-request commands speak the T-PKG API,
//! either to an in-process service opened from the state directory or to a
//! running `tpkg-serve` over IBE-TLS.

use std::collections::BTreeMap;
use std::io::Write;
use std::net::{SocketAddr, TcpListener};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread::JoinHandle;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::handshake::{ClientConfig, HandshakeError, ServerConfig};
use crate::kem::{Epoch, IdentityString, KemError, KemParams};
use crate::metrics::{compare_report, CertCostModel, CheckResult, ComparisonReport, ReportFormat};
use crate::simnet::{self, K8sCluster, NodeSecret, Role, Scenario, SeedStream, SimError, SimNode, World};
use crate::tpkg::{
    dir_name, tpkg_setup, verify_jsonl, ApiRequest, ApiResponse, Clock, DomainStore, Issuer, IssuerPolicy,
    KeyDeliveryJson, Principal, PrincipalKind, RequestSpec, SystemClock, TokenAuthority, TpkgClient, TpkgError,
    TpkgService, Usage,
};

const TOKEN_FILE: &str = "token.key";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Tpkg(#[from] TpkgError),
    #[error(transparent)]
    Kem(#[from] KemError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("handshake aborted: {0}")]
    Handshake(#[from] HandshakeError),
    #[error("{status} {kind}: {message}")]
    Api { status: u16, kind: String, message: String },
    #[error("{0}")]
    Failed(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn tpkg_code(e: &TpkgError) -> u8 {
    match e {
        TpkgError::Unauthenticated
        | TpkgError::Forbidden(_)
        | TpkgError::PolicyViolation(_)
        | TpkgError::Blocklisted(_)
        | TpkgError::EpochInvalid(_)
        | TpkgError::EpochExpired(_)
        | TpkgError::NotApproved(_) => 3,
        TpkgError::RegistryCorrupted { .. } => 5,
        TpkgError::InvalidThreshold { .. } | TpkgError::InvalidPolicy(_) | TpkgError::UnknownIssuer(_) => 2,
        _ => 1,
    }
}

impl CliError {
    /// 0 ok, 2 usage, 3 policy denial, 4 handshake abort, 5 registry
    /// corruption, 1 anything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Kem(_) => 2,
            CliError::Tpkg(e) => tpkg_code(e),
            CliError::Handshake(_) => 4,
            CliError::Sim(SimError::Tpkg(e)) => tpkg_code(e),
            CliError::Sim(SimError::Handshake(_)) => 4,
            CliError::Sim(SimError::Api { status: 401 | 403 | 410, .. }) => 3,
            CliError::Api { kind, status, .. } => match (kind.as_str(), status) {
                ("RegistryCorrupted", _) => 5,
                (_, 401 | 403 | 410) => 3,
                ("NotApproved", _) => 3,
                _ => 1,
            },
            _ => 1,
        }
    }
}

/// On-disk configuration. Every field has a default, so the file is optional.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    /// Holds one directory per trust domain plus the token secret.
    pub state_dir: PathBuf,
    /// Explicit domain directories (registry, shares and policies live
    /// inside each). Empty means every domain found under `state_dir`.
    pub domains: BTreeMap<String, PathBuf>,
    pub listen: SocketAddr,
    pub params: String,
    pub log_level: String,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            state_dir: PathBuf::from("ibe-state"),
            domains: BTreeMap::new(),
            listen: SocketAddr::from(([127, 0, 0, 1], 7443)),
            params: "compact".into(),
            log_level: "warn".into(),
        }
    }
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: CliConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.kem_params()?;
        self.log_level
            .parse::<log::LevelFilter>()
            .map_err(|_| CliError::Usage(format!("unknown log level {:?}", self.log_level)))?;
        Ok(())
    }

    pub fn kem_params(&self) -> Result<KemParams, CliError> {
        KemParams::by_name(&self.params).ok_or_else(|| CliError::Usage(format!("unknown parameter set {:?}", self.params)))
    }

    pub fn domain_dir(&self, domain: &str) -> PathBuf {
        self.domains.get(domain).cloned().unwrap_or_else(|| self.state_dir.join(dir_name(domain)))
    }

    /// Domain name to directory for every configured or discovered domain.
    pub fn discover_domains(&self) -> Result<BTreeMap<String, PathBuf>, CliError> {
        if !self.domains.is_empty() {
            return Ok(self.domains.clone());
        }
        let mut out = BTreeMap::new();
        let entries = match std::fs::read_dir(&self.state_dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
            Err(e) => return Err(e.into()),
        };
        for e in entries.flatten() {
            let dir = e.path();
            if let Ok(store) = DomainStore::open(&dir) {
                out.insert(store.load_policy()?.trust_domain, dir);
            }
        }
        Ok(out)
    }

    fn token_authority(&self) -> Result<TokenAuthority, CliError> {
        let path = self.state_dir.join(TOKEN_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Usage(format!("{}: {e} (run tpkg-setup first)", path.display())))?;
        let key: [u8; 32] = hex::decode(text.trim())
            .ok()
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| CliError::Failed(format!("{} is not a 32-byte hex key", path.display())))?;
        Ok(TokenAuthority::new(key))
    }
}

#[derive(Debug, Parser)]
#[command(name = "ibetls", version, about = "Certificate-free IBE-TLS with a threshold key generator")]
pub struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "table", value_parser = parse_format)]
    pub format: ReportFormat,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub listen: Option<SocketAddr>,
    /// Overrides the configured state directory.
    #[arg(long, global = true)]
    pub state_dir: Option<PathBuf>,
    /// Overrides the configured KEM parameter set (compact, desk).
    #[arg(long, global = true)]
    pub params: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    s.parse()
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a trust domain: master keys, shares, policy and registry.
    TpkgSetup(SetupArgs),
    /// Serve the T-PKG API over IBE-TLS.
    TpkgServe(ServeArgs),
    /// File an identity request.
    IdRequest(RequestArgs),
    /// Approve a pending identity request.
    IdApprove(ApproveArgs),
    /// List identity requests.
    IdList(DomainArgs),
    /// Blocklist an identity.
    IdRevoke(RevokeArgs),
    /// Advance a domain to its next epoch.
    EpochBump(DomainArgs),
    /// Run the Kubernetes control-plane scenario.
    DemoK8s(DemoArgs),
    /// Run the 5G core scenario.
    #[command(name = "demo-5g")]
    Demo5g(DemoArgs),
    /// Measure IBE-TLS handshakes and compare with the certificate cost model.
    BenchReport(BenchArgs),
    /// Check every registry hash chain.
    RegistryVerify(VerifyArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    KubernetesApiserver,
    OperatorOnly,
    FivegCore,
}

#[derive(Debug, Args)]
pub struct SetupArgs {
    /// Trust domain name; derived from the preset when omitted.
    #[arg(long)]
    pub domain: Option<String>,
    #[arg(long, value_enum, default_value = "kubernetes-apiserver")]
    pub preset: Preset,
    #[arg(long, default_value = "default")]
    pub cluster: String,
    #[arg(long, default_value = simnet::PLMN)]
    pub plmn: String,
    /// Identity patterns for the operator-only preset.
    #[arg(long = "pattern", default_values_t = ["*".to_owned()])]
    pub patterns: Vec<String>,
    #[arg(long, default_value_t = 3)]
    pub nodes: usize,
    #[arg(long, default_value_t = 2)]
    pub threshold: usize,
    #[arg(long, default_value = "1")]
    pub epoch: String,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub domain: Option<String>,
    /// Identity the service proves possession of.
    #[arg(long, default_value = "kube-apiserver")]
    pub identity: String,
}

/// Where API calls go. Without `--server` they run against the state
/// directory directly.
#[derive(Debug, Args)]
pub struct Target {
    #[arg(long)]
    pub domain: Option<String>,
    /// Caller: admin, bootstrap:NODE, serviceaccount:NS:NAME or nf:NAME.
    #[arg(long = "as", default_value = "admin")]
    pub principal: String,
    /// Address of a running tpkg-serve.
    #[arg(long)]
    pub server: Option<SocketAddr>,
    #[arg(long, default_value = "kube-apiserver")]
    pub server_identity: String,
    /// Domain whose key the server holds; defaults to `--domain`.
    #[arg(long)]
    pub server_domain: Option<String>,
}

#[derive(Debug, Args)]
pub struct DomainArgs {
    #[command(flatten)]
    pub target: Target,
}

#[derive(Debug, Args)]
pub struct RequestArgs {
    #[command(flatten)]
    pub target: Target,
    #[arg(long)]
    pub identity: String,
    #[arg(long, value_delimiter = ',', default_value = "client,server", value_parser = parse_usage)]
    pub usage: Vec<Usage>,
    #[arg(long, default_value_t = 86_400)]
    pub expiration: u64,
    /// Once approved, collect the key and write it as a node secret file.
    #[arg(long)]
    pub key_out: Option<PathBuf>,
}

fn parse_usage(s: &str) -> Result<Usage, String> {
    serde_json::from_value(Value::String(s.to_owned())).map_err(|_| format!("unknown usage {s:?}"))
}

#[derive(Debug, Args)]
pub struct ApproveArgs {
    #[command(flatten)]
    pub target: Target,
    pub name: String,
}

#[derive(Debug, Args)]
pub struct RevokeArgs {
    #[command(flatten)]
    pub target: Target,
    #[arg(long)]
    pub identity: String,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    /// Scenario JSON to run instead of the built-in one.
    #[arg(long)]
    pub script: Option<PathBuf>,
    /// Directory for the transcript and registries.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 100)]
    pub runs: usize,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub domain: Option<String>,
    /// Verify a registry file instead of the state directory.
    #[arg(long)]
    pub file: Vec<PathBuf>,
}

/// Parses `args`, runs the command and returns the process exit code.
/// Output goes to `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{e}");
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn load_config(cli: &Cli) -> Result<CliConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => CliConfig::load(p)?,
        None => CliConfig::default(),
    };
    if let Some(d) = &cli.state_dir {
        cfg.state_dir = d.clone();
    }
    if let Some(l) = cli.listen {
        cfg.listen = l;
    }
    if let Some(p) = &cli.params {
        cfg.params = p.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    let fmt = cli.format;
    match &cli.command {
        Command::TpkgSetup(a) => setup(&cfg, a, cli.seed, fmt, out),
        Command::TpkgServe(a) => {
            let (addr, handle) = serve(&cfg, a, cli.seed)?;
            writeln!(out, "listening on {addr} as {}", a.identity)?;
            out.flush()?;
            handle.join().map_err(|_| CliError::Failed("server thread panicked".into()))
        }
        Command::IdRequest(a) => id_request(&cfg, a, cli.seed, fmt, out),
        Command::IdApprove(a) => {
            let mut api = Api::open(&cfg, &a.target, cli.seed)?;
            let path = format!("/identityrequests/{}/approve", a.name);
            let body = api.call("POST", &path, json!({ "issuer": api.domain }))?;
            emit(fmt, out, &body, |o| writeln!(o, "{} {}", a.name, body["phase"].as_str().unwrap_or("?")))
        }
        Command::IdList(a) => {
            let mut api = Api::open(&cfg, &a.target, cli.seed)?;
            let body = api.call("GET", "/identityrequests", json!({ "issuer": api.domain }))?;
            emit(fmt, out, &body, |o| list_table(o, &body))
        }
        Command::IdRevoke(a) => {
            let mut api = Api::open(&cfg, &a.target, cli.seed)?;
            let body = api.call(
                "POST",
                "/identities/revoke",
                json!({ "issuer": api.domain, "identity": a.identity }),
            )?;
            emit(fmt, out, &body, |o| writeln!(o, "revoked {} (record {})", a.identity, body["index"]))
        }
        Command::EpochBump(a) => {
            let mut api = Api::open(&cfg, &a.target, cli.seed)?;
            let body = api.call("POST", "/epochs/increment", json!({ "issuer": api.domain }))?;
            emit(fmt, out, &body, |o| writeln!(o, "current epoch {}", body["currentEpoch"].as_str().unwrap_or("?")))
        }
        Command::DemoK8s(a) => demo(&cfg, a, Scenario::demo_k8s(), cli.seed, fmt, out),
        Command::Demo5g(a) => demo(&cfg, a, Scenario::demo_5g(), cli.seed, fmt, out),
        Command::BenchReport(a) => {
            let (report, runs) = bench(cfg.kem_params()?, cli.seed.unwrap_or(1), a.runs)?;
            let text = report.render(fmt);
            writeln!(out, "{text}")?;
            if fmt == ReportFormat::Table {
                writeln!(out, "handshakes measured: {runs}")?;
            }
            if let Some(p) = &a.out {
                std::fs::write(p, format!("{text}\n"))?;
            }
            match report.checks.iter().find(|c| !c.passed) {
                Some(c) => Err(CliError::Failed(format!("check failed: {} ({})", c.name, c.detail))),
                None => Ok(()),
            }
        }
        Command::RegistryVerify(a) => registry_verify(&cfg, a, fmt, out),
    }
}

fn emit(
    fmt: ReportFormat,
    out: &mut dyn Write,
    body: &Value,
    table: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
) -> Result<(), CliError> {
    match fmt {
        ReportFormat::Json => writeln!(out, "{}", serde_json::to_string_pretty(body).expect("json"))?,
        ReportFormat::Table => table(out)?,
    }
    Ok(())
}

fn list_table(out: &mut dyn Write, body: &Value) -> std::io::Result<()> {
    let empty = Vec::new();
    let items = body["items"].as_array().unwrap_or(&empty);
    let rows: Vec<[String; 4]> = items
        .iter()
        .map(|i| {
            let s = |v: &Value| v.as_str().unwrap_or("").to_owned();
            [s(&i["metadata"]["name"]), s(&i["spec"]["identity"]), s(&i["status"]["phase"]), s(&i["status"]["principal"])]
        })
        .collect();
    write_table(out, &["NAME", "IDENTITY", "PHASE", "PRINCIPAL"], &rows)
}

fn write_table<const N: usize>(out: &mut dyn Write, head: &[&str; N], rows: &[[String; N]]) -> std::io::Result<()> {
    let mut w: [usize; N] = head.map(str::len);
    for r in rows {
        for (i, c) in r.iter().enumerate() {
            w[i] = w[i].max(c.len());
        }
    }
    let line = |out: &mut dyn Write, cells: Vec<&str>| -> std::io::Result<()> {
        let padded: Vec<String> = cells.iter().enumerate().map(|(i, c)| format!("{c:<width$}", width = w[i])).collect();
        writeln!(out, "{}", padded.join("  ").trim_end())
    };
    line(out, head.to_vec())?;
    for r in rows {
        line(out, r.iter().map(String::as_str).collect())?;
    }
    Ok(())
}

/// Parses a `--as` value.
pub fn parse_principal(s: &str) -> Result<Principal, CliError> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        ["admin"] => Ok(Principal::new(PrincipalKind::Admin, "cli-admin", &["system:masters", "5gc:operators"])),
        ["bootstrap", node] => Ok(K8sCluster::bootstrap_principal(node)),
        ["serviceaccount", ns, name] => Ok(K8sCluster::service_account(ns, name)),
        ["nf", name] => Ok(Principal::new(PrincipalKind::OperatorNF, &format!("nf:{name}"), &["5gc:network-functions"])),
        _ => Err(CliError::Usage(format!("unknown principal {s:?}"))),
    }
}

fn master_seed(seed: Option<u64>) -> ([u8; 32], ChaCha20Rng) {
    let (mut master, rng) = match seed {
        Some(s) => {
            let mut st = SeedStream::new(s);
            (st.next(), ChaCha20Rng::from_seed(st.next()))
        }
        None => {
            let mut m = [0u8; 32];
            rand::rngs::OsRng.fill_bytes(&mut m);
            (m, ChaCha20Rng::from_entropy())
        }
    };
    // Keeps the seed below the share field modulus.
    master[0] &= 0x7f;
    (master, rng)
}

fn setup(cfg: &CliConfig, a: &SetupArgs, seed: Option<u64>, fmt: ReportFormat, out: &mut dyn Write) -> Result<(), CliError> {
    let epoch = Epoch::parse(&a.epoch).ok_or_else(|| CliError::Usage(format!("bad epoch {:?}", a.epoch)))?;
    let mut policy = match a.preset {
        Preset::KubernetesApiserver => IssuerPolicy::kubernetes_apiserver(&a.cluster, epoch),
        Preset::FivegCore => IssuerPolicy::fiveg_core(&a.plmn, epoch),
        Preset::OperatorOnly => {
            let domain = a.domain.as_deref().ok_or_else(|| CliError::Usage("operator-only needs --domain".into()))?;
            let pats: Vec<&str> = a.patterns.iter().map(String::as_str).collect();
            IssuerPolicy::operator_only(domain, &pats, epoch)
        }
    };
    if let Some(d) = &a.domain {
        policy.trust_domain = d.clone();
    }
    let domain = policy.trust_domain.clone();
    let (master, mut rng) = master_seed(seed);
    let (mpk, set, genesis) = tpkg_setup(&domain, &cfg.kem_params()?, a.nodes, a.threshold, master, &mut rng, SystemClock.now())?;
    let dir = cfg.domain_dir(&domain);
    let store = DomainStore::create(&dir, &mpk, &policy, &genesis, &set)?;

    let token = cfg.state_dir.join(TOKEN_FILE);
    if !token.exists() {
        let mut key = [0u8; 32];
        rng.fill_bytes(&mut key);
        std::fs::create_dir_all(&cfg.state_dir)?;
        std::fs::write(&token, format!("{}\n", hex::encode(key)))?;
    }
    let shares: Vec<String> = set.shares.iter().map(|s| store.share_path(s.share_id).display().to_string()).collect();
    let body = json!({
        "domain": domain,
        "dir": dir.display().to_string(),
        "mpkHash": hex::encode(mpk.params_hash()),
        "nodes": a.nodes,
        "threshold": a.threshold,
        "currentEpoch": epoch.to_string(),
        "shares": shares,
    });
    emit(fmt, out, &body, |o| {
        writeln!(o, "domain     {domain}")?;
        writeln!(o, "directory  {}", dir.display())?;
        writeln!(o, "mpk        {}", hex::encode(mpk.params_hash()))?;
        writeln!(o, "shares     {} of {} needed", a.threshold, a.nodes)?;
        writeln!(o, "epoch      {epoch}")
    })
}

/// Opens every domain into one service. With `strict`, a domain with fewer
/// readable shares than its threshold is an error.
pub fn open_service(cfg: &CliConfig, strict: bool) -> Result<TpkgService, CliError> {
    let mut svc = TpkgService::new(cfg.token_authority()?);
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    for (domain, dir) in cfg.discover_domains()? {
        let store = DomainStore::open(&dir)?;
        let (shares, bad) = store.load_shares();
        for b in &bad {
            log::warn!("{domain}: unreadable share {b}");
        }
        let need = shares.first().map(|s| s.threshold).unwrap_or(1);
        if strict && (shares.is_empty() || shares.len() < need) {
            return Err(TpkgError::ThresholdNotMet { have: shares.len(), need }.into());
        }
        svc.add_domain(Issuer::open(store, clock.clone())?, shares);
    }
    Ok(svc)
}

fn pick_domain(cfg: &CliConfig, domain: Option<&str>) -> Result<String, CliError> {
    let all = cfg.discover_domains()?;
    match domain {
        Some(d) if all.contains_key(d) => Ok(d.to_owned()),
        Some(d) => Err(CliError::Usage(format!("no domain {d} under {}", cfg.state_dir.display()))),
        None if all.len() == 1 => Ok(all.into_keys().next().expect("one domain")),
        None if all.is_empty() => Err(CliError::Usage(format!("no domains under {}", cfg.state_dir.display()))),
        None => Err(CliError::Usage(format!(
            "several domains, pick one with --domain: {}",
            all.into_keys().collect::<Vec<_>>().join(", ")
        ))),
    }
}

/// Binds the listener and starts serving. The returned handle never finishes
/// on its own.
pub fn serve(cfg: &CliConfig, a: &ServeArgs, seed: Option<u64>) -> Result<(SocketAddr, JoinHandle<()>), CliError> {
    let svc = open_service(cfg, true)?;
    let domain = pick_domain(cfg, a.domain.as_deref())?;
    let admin = parse_principal("admin")?;
    let d = svc.provision(&domain, &a.identity, &[Usage::Server], 86_400 * 365, &admin)?;
    let server_cfg = ServerConfig::new(d.mpk.clone(), Arc::new(d.private_key));
    let listener = TcpListener::bind(cfg.listen)?;
    let addr = listener.local_addr()?;
    let seed = match seed {
        Some(s) => SeedStream::new(s).next(),
        None => {
            let mut b = [0u8; 32];
            rand::rngs::OsRng.fill_bytes(&mut b);
            b
        }
    };
    log::info!("serving {} domains on {addr}", svc.domains().count());
    Ok((addr, crate::tpkg::spawn_server(listener, Arc::new(svc), server_cfg, seed)))
}

enum Backend {
    Local(Box<TpkgService>),
    Remote(Box<TpkgClient>),
}

struct Api {
    backend: Backend,
    token: String,
    domain: String,
}

impl Api {
    fn open(cfg: &CliConfig, t: &Target, seed: Option<u64>) -> Result<Self, CliError> {
        let domain = pick_domain(cfg, t.domain.as_deref())?;
        let principal = parse_principal(&t.principal)?;
        let tokens = cfg.token_authority()?;
        let token = tokens.issue(&principal);
        let backend = match t.server {
            None => Backend::Local(Box::new(open_service(cfg, false)?)),
            Some(addr) => {
                let sd = t.server_domain.clone().unwrap_or_else(|| domain.clone());
                let store = DomainStore::open(cfg.domain_dir(&sd))?;
                let epoch = store.load_policy()?.current_epoch;
                let id = IdentityString::parse(&format!("{}.{epoch}", t.server_identity))?;
                let ccfg = ClientConfig::new(Arc::new(store.load_mpk()?), id);
                let mut rs = [0u8; 32];
                match seed {
                    Some(s) => rs = SeedStream::new(s).next(),
                    None => rand::rngs::OsRng.fill_bytes(&mut rs),
                }
                Backend::Remote(Box::new(TpkgClient::connect(addr, ccfg, rs)?))
            }
        };
        Ok(Api { backend, token, domain })
    }

    fn call(&mut self, method: &str, path: &str, body: Value) -> Result<Value, CliError> {
        let req = ApiRequest::new(method, path, &self.token, body);
        self.send(&req)
    }

    fn send(&mut self, req: &ApiRequest) -> Result<Value, CliError> {
        let resp: ApiResponse = match &mut self.backend {
            Backend::Local(s) => s.handle(req),
            Backend::Remote(c) => c.call(req)?,
        };
        if resp.is_success() {
            return Ok(resp.body);
        }
        Err(CliError::Api {
            status: resp.status,
            kind: resp.error_kind().unwrap_or("Error").to_owned(),
            message: resp.body["message"].as_str().unwrap_or("").to_owned(),
        })
    }
}

fn id_request(cfg: &CliConfig, a: &RequestArgs, seed: Option<u64>, fmt: ReportFormat, out: &mut dyn Write) -> Result<(), CliError> {
    let mut api = Api::open(cfg, &a.target, seed)?;
    let spec = RequestSpec {
        issuer: api.domain.clone(),
        identity: a.identity.clone(),
        usage: a.usage.clone(),
        expiration_seconds: a.expiration,
    };
    let created = api.send(&ApiRequest::create(&api.token, &spec))?;
    let name = created["metadata"]["name"].as_str().unwrap_or_default().to_owned();
    let phase = created["status"]["phase"].as_str().unwrap_or_default().to_owned();
    let mut key_file = None;
    if let Some(path) = &a.key_out {
        if phase != "Approved" {
            return Err(CliError::Api {
                status: 409,
                kind: "NotApproved".into(),
                message: format!("{name} is {phase}; approve it and collect the key later"),
            });
        }
        let fetched = api.send(&ApiRequest::fetch_key(&api.token, &api.domain, &name))?;
        let delivery: KeyDeliveryJson =
            serde_json::from_value(fetched).map_err(|e| CliError::Failed(format!("key delivery: {e}")))?;
        let d = delivery.into_delivery()?;
        let secret = NodeSecret::new(&d.private_key, &d.mpk);
        std::fs::write(path, serde_json::to_vec_pretty(&secret).expect("json"))?;
        key_file = Some(path.display().to_string());
    }
    let mut body = created;
    if let Some(k) = &key_file {
        body["keyFile"] = json!(k);
    }
    emit(fmt, out, &body, |o| {
        writeln!(o, "{name} {} {phase}", body["spec"]["identity"].as_str().unwrap_or(""))?;
        if let Some(k) = &key_file {
            writeln!(o, "key written to {k}")?;
        }
        Ok(())
    })
}

fn registry_verify(cfg: &CliConfig, a: &VerifyArgs, fmt: ReportFormat, out: &mut dyn Write) -> Result<(), CliError> {
    let files: Vec<(String, PathBuf)> = if !a.file.is_empty() {
        a.file.iter().map(|p| (p.display().to_string(), p.clone())).collect()
    } else {
        let mut all = cfg.discover_domains()?;
        if let Some(d) = &a.domain {
            all.retain(|k, _| k == d);
        }
        if all.is_empty() {
            return Err(CliError::Usage("no registries to verify".into()));
        }
        all.into_iter().map(|(d, dir)| Ok((d, DomainStore::open(dir)?.registry_path()))).collect::<Result<_, CliError>>()?
    };
    let mut results = Vec::new();
    let mut first_err = None;
    for (label, path) in files {
        let res = verify_jsonl(&std::fs::read_to_string(&path)?);
        results.push(verify_row(&label, &res));
        if let Err(e) = res {
            first_err.get_or_insert(e);
        }
    }
    emit_verify(fmt, out, &results)?;
    first_err.map_or(Ok(()), |e| Err(e.into()))
}

fn verify_row(label: &str, res: &Result<Vec<crate::tpkg::RegistryRecord>, TpkgError>) -> Value {
    match res {
        Ok(recs) => json!({
            "registry": label,
            "records": recs.len(),
            "head": recs.last().map(|r| hex::encode(r.record_hash)).unwrap_or_default(),
            "ok": true,
        }),
        Err(e) => json!({ "registry": label, "ok": false, "error": e.to_string() }),
    }
}

fn emit_verify(fmt: ReportFormat, out: &mut dyn Write, rows: &[Value]) -> Result<(), CliError> {
    let body = json!({ "registries": rows });
    emit(fmt, out, &body, |o| {
        let rows: Vec<[String; 3]> = rows
            .iter()
            .map(|r| {
                let status = if r["ok"] == json!(true) { "OK".to_owned() } else { format!("CORRUPT: {}", r["error"].as_str().unwrap_or("")) };
                [r["registry"].as_str().unwrap_or("").to_owned(), r["records"].to_string().replace("null", "-"), status]
            })
            .collect();
        write_table(o, &["REGISTRY", "RECORDS", "STATUS"], &rows)
    })
}

fn demo(cfg: &CliConfig, a: &DemoArgs, builtin: Scenario, seed: Option<u64>, fmt: ReportFormat, out: &mut dyn Write) -> Result<(), CliError> {
    let mut script = match &a.script {
        Some(p) => Scenario::from_json(&std::fs::read_to_string(p)?)?,
        None => builtin,
    };
    if a.script.is_none() {
        script.params = cfg.params.clone();
    }
    let run = simnet::execute(&script, seed.unwrap_or(1))?;
    let transcript = run.log.to_jsonl();

    // Re-verify the registries from their serialized form, as written.
    let mut rows = Vec::new();
    let mut first_err = None;
    for (domain, records) in &run.registries {
        let text: String = records.iter().map(|r| r.to_json_line() + "\n").collect();
        if let Some(dir) = &a.out {
            let reg_dir = dir.join("registries");
            std::fs::create_dir_all(&reg_dir)?;
            std::fs::write(reg_dir.join(format!("{}.jsonl", dir_name(domain))), &text)?;
        }
        let res = verify_jsonl(&text);
        rows.push(verify_row(domain, &res));
        if let Err(e) = res {
            first_err.get_or_insert(e);
        }
    }
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("transcript.jsonl"), &transcript)?;
    }
    match fmt {
        ReportFormat::Json => write!(out, "{transcript}")?,
        ReportFormat::Table => {
            let table: Vec<[String; 5]> = run
                .log
                .entries
                .iter()
                .map(|e| {
                    [
                        e.step.to_string(),
                        e.action.clone(),
                        if e.initiator.is_empty() { e.domain.clone() } else { format!("{} -> {}", e.initiator, e.responder) },
                        format!("{:?}", e.outcome).to_lowercase(),
                        e.detail.clone(),
                    ]
                })
                .collect();
            write_table(out, &["STEP", "ACTION", "PEERS", "OUTCOME", "DETAIL"], &table)?;
            writeln!(out)?;
            emit_verify(fmt, out, &rows)?;
        }
    }
    first_err.map_or(Ok(()), |e| Err(e.into()))
}

/// Runs `runs` mutual handshakes between two fresh nodes and compares the
/// first against the certificate cost model. Adds a check that the
/// authentication bytes never vary.
pub fn bench(params: KemParams, seed: u64, runs: usize) -> Result<(ComparisonReport, usize), CliError> {
    if runs == 0 {
        return Err(CliError::Usage("--runs must be at least 1".into()));
    }
    const DOMAIN: &str = "ibe.bench/local";
    let mut w = World::new(seed, params, parse_principal("admin")?);
    let mpk = w.add_domain(IssuerPolicy::operator_only(DOMAIN, &["*"], Epoch::Counter(1)))?;
    for n in ["client", "server"] {
        w.add_node(SimNode::new(n, Role::Operator).trusting(DOMAIN, mpk.clone()));
        w.provision(n, DOMAIN, n, &[Usage::Client, Usage::Server])?;
    }
    let mut measured = Vec::with_capacity(runs);
    for _ in 0..runs {
        let ch = w.connect(DOMAIN, "client", Some("client"), "server", "server", None)?;
        measured.push(ch.metrics().map_err(|e| CliError::Failed(e.to_string()))?);
    }
    let mut report = compare_report(&measured[0], &CertCostModel::default()).map_err(|e| CliError::Failed(e.to_string()))?;
    let auth: Vec<u64> = measured.iter().map(|m| m.auth_bytes).collect();
    let constant = auth.iter().all(|&b| b == auth[0]);
    report.checks.push(CheckResult {
        name: "auth bytes constant across runs",
        passed: constant,
        detail: format!("{} handshakes, auth bytes {}..={}", runs, auth.iter().min().unwrap(), auth.iter().max().unwrap()),
    });
    Ok((report, runs))
}
