//! `qacal` command-line pipeline: item generation, form export, response
//! ingestion, calibration, scoring, DIF screening, analytics and
//! simulation studies.

pub mod config;
pub mod ingest;
pub mod report;

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use qacal_core::analytics::{
    aggregate_items, disagreement_profile, exact_agreement, heatmap_columns, pearson_matrix, question_number,
    AgreementReport, OpinionSheet,
};
use qacal_core::dif::{run_dif_screen, DifConfig, Group, Grouping};
use qacal_core::genpipe::{
    export_form, generate_items, AnswerKey, ContextSnippet, GeneratedItem, HttpProvider, Provider, StubProvider,
};
use qacal_core::scoring::{default_theta_grid, eap_scores, test_information};
use qacal_core::simulator::{dif_power_study, recovery_study, simulate_responses, SimSpec, StudyGrouping};
use qacal_core::{fit_mixed, gauss_hermite_grid, CalibrationResult, ResponseMatrix};
use serde::de::DeserializeOwned;
use serde::Serialize;

use config::RunConfig;
use ingest::{ingest_csv, ExamKey, ExamValues};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "qacal", version, about = "Generate, field and calibrate multiple-choice tests")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProviderKind {
    Live,
    Stub,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StudyKind {
    Recovery,
    DifPower,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StudyGroupingArg {
    Simulated,
    MedianSplit,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate an item bank from the *.txt snippets in a directory.
    Generate {
        #[arg(long)]
        context_dir: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "live")]
        provider: ProviderKind,
        /// Canned responses for the stub provider (default: <context-dir>/fixtures).
        #[arg(long)]
        fixtures: Option<PathBuf>,
        #[arg(long)]
        n_per_snippet: Option<usize>,
    },
    /// Write the form schema and, separately, the answer key.
    ExportForm {
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        out_form: PathBuf,
        #[arg(long)]
        out_key: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Turn a response CSV into a response matrix and opinion sidecar.
    Ingest {
        #[arg(long)]
        responses: PathBuf,
        #[arg(long)]
        bank: Option<PathBuf>,
        /// Answer key overriding the bank's keyed options.
        #[arg(long)]
        key: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Default: <out stem>.opinions.json
        #[arg(long)]
        opinions_out: Option<PathBuf>,
        /// Default: options with --bank, scored without.
        #[arg(long, value_enum)]
        exam_values: Option<ExamValues>,
    },
    /// Fit the mixed 2PL + graded model.
    Calibrate {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        quad_nodes: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Per-item and total information on the default θ grid.
        #[arg(long)]
        info_out: Option<PathBuf>,
    },
    /// EAP ability estimates.
    Score {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Uniform DIF screen of the dichotomous items.
    Dif {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        flag_delta: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        /// CSV `person_id,group` with low/high labels instead of a median split.
        #[arg(long)]
        groups: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Item aggregates, correlations and disagreement profile.
    Analyze {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        opinions: PathBuf,
        #[arg(long)]
        params: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// CSV `rater,assess_1,...` of expert star ratings.
        #[arg(long)]
        experts: Option<PathBuf>,
    },
    /// Draw one response matrix from a simulation spec.
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// CSV of the drawn θ and group per person.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Replicated recovery or DIF-power study.
    Study {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 20)]
        replicates: usize,
        #[arg(long, value_enum, default_value = "recovery")]
        kind: StudyKind,
        #[arg(long, value_enum, default_value = "simulated")]
        grouping: StudyGroupingArg,
        #[arg(long)]
        out: PathBuf,
    },
}

/// An error with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let numerical = error.chain().any(|e| {
            e.downcast_ref::<qacal_core::Error>().is_some_and(|c| {
                matches!(
                    c,
                    qacal_core::Error::InsufficientData(_)
                        | qacal_core::Error::NumericalFailure { .. }
                        | qacal_core::Error::ItemFailure { .. }
                        | qacal_core::Error::DegenerateGrouping(_)
                )
            })
        });
        Failure {
            code: if numerical { EXIT_NUMERICAL } else { EXIT_USAGE },
            error,
        }
    }
}

impl From<qacal_core::Error> for Failure {
    fn from(e: qacal_core::Error) -> Self {
        anyhow::Error::new(e).into()
    }
}

type Outcome = Result<(), Failure>;

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Messages go to `out`; errors to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    match execute(cli, out) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {f}");
            f.code
        }
    }
}

fn execute(cli: Cli, out: &mut dyn Write) -> Outcome {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed.or(cfg.seed) {
        cfg.calibration.seed = seed;
    }
    match cli.command {
        Command::Generate {
            context_dir,
            out: path,
            provider,
            fixtures,
            n_per_snippet,
        } => cmd_generate(&cfg, context_dir, &path, provider, fixtures, n_per_snippet, out),
        Command::ExportForm {
            bank,
            out_form,
            out_key,
            force,
        } => cmd_export_form(&bank, &out_form, &out_key, force, out),
        Command::Ingest {
            responses,
            bank,
            key,
            out: path,
            opinions_out,
            exam_values,
        } => cmd_ingest(&responses, bank.as_deref(), key.as_deref(), &path, opinions_out, exam_values, out),
        Command::Calibrate {
            matrix,
            quad_nodes,
            out: path,
            report,
            info_out,
        } => cmd_calibrate(&cfg, &matrix, quad_nodes, &path, report.as_deref(), info_out.as_deref(), out),
        Command::Score { params, matrix, out: path } => cmd_score(&params, &matrix, &path, out),
        Command::Dif {
            params,
            matrix,
            flag_delta,
            alpha,
            groups,
            out: path,
            table,
            report,
        } => {
            let dif = DifConfig {
                delta_flag_threshold: flag_delta.unwrap_or(cfg.dif.delta_flag_threshold),
                alpha: alpha.unwrap_or(cfg.dif.alpha),
                grouping: Grouping::MedianSplit,
            };
            cmd_dif(&params, &matrix, dif, groups.as_deref(), &path, table.as_deref(), report.as_deref(), out)
        }
        Command::Analyze {
            matrix,
            opinions,
            params,
            out: dir,
            experts,
        } => cmd_analyze(&matrix, &opinions, &params, &dir, experts.as_deref(), out),
        Command::Simulate { spec, out: path, truth } => cmd_simulate(&spec, cli.seed, &path, truth.as_deref(), out),
        Command::Study {
            spec,
            replicates,
            kind,
            grouping,
            out: path,
        } => cmd_study(&cfg, &spec, cli.seed, replicates, kind, grouping, &path, out),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {what} {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid {what} {}", path.display()))
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("document types serialize");
    s.push('\n');
    s
}

fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    std::fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

// console output is best effort; a closed stdout must not change the exit code
macro_rules! say {
    ($out:expr, $($arg:tt)*) => {{
        let _ = writeln!($out, $($arg)*);
    }};
}

fn read_bank(path: &Path) -> anyhow::Result<Vec<GeneratedItem>> {
    let bank: Vec<GeneratedItem> = read_json(path, "item bank")?;
    for item in &bank {
        if let Err(errs) = item.validate() {
            let msgs: Vec<String> = errs.iter().map(ToString::to_string).collect();
            bail!("item {} in bank is invalid: {}", item.id, msgs.join("; "));
        }
    }
    Ok(bank)
}

pub fn read_snippets(dir: &Path) -> anyhow::Result<Vec<ContextSnippet>> {
    let entries = std::fs::read_dir(dir).with_context(|| format!("cannot read context dir {}", dir.display()))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "txt"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("context dir {} has no .txt snippet files", dir.display());
    }
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok(ContextSnippet::new(id, text.trim_end(), None)?)
        })
        .collect()
}

fn cmd_generate(
    cfg: &RunConfig,
    context_dir: Option<PathBuf>,
    path: &Path,
    provider: ProviderKind,
    fixtures: Option<PathBuf>,
    n_per_snippet: Option<usize>,
    out: &mut dyn Write,
) -> Outcome {
    let dir = context_dir
        .or_else(|| cfg.paths.context_dir.clone())
        .ok_or_else(|| anyhow!("--context-dir is required"))?;
    let mut gen = cfg.provider.gen_config();
    if let Some(n) = n_per_snippet {
        gen.n_per_snippet = n;
    }
    gen.validate()?;
    let snippets = read_snippets(&dir)?;
    let provider: Box<dyn Provider> = match provider {
        ProviderKind::Stub => {
            let fx = fixtures.or_else(|| cfg.paths.fixtures.clone()).unwrap_or_else(|| dir.join("fixtures"));
            if !fx.is_dir() {
                return Err(anyhow!("stub fixture dir {} does not exist", fx.display()).into());
            }
            Box::new(StubProvider::new(fx, &snippets))
        }
        ProviderKind::Live => Box::new(
            HttpProvider::from_env(cfg.provider.endpoint.clone(), Duration::from_secs(cfg.provider.timeout_secs))
                .map_err(|m| anyhow!(m))?,
        ),
    };
    let outcome = generate_items(&snippets, provider.as_ref(), &gen)?;
    for s in &snippets {
        let made: Vec<&str> = outcome.items.iter().filter(|i| i.source == s.id).map(|i| i.id.as_str()).collect();
        if !made.is_empty() {
            say!(out, "{}: ok ({})", s.id, made.join(", "));
        }
        for f in outcome.failures.iter().filter(|f| f.snippet_id == s.id) {
            say!(out, "{}: FAILED after {} attempts: {}", s.id, f.attempts, f.errors.join(" | "));
        }
    }
    say!(
        out,
        "generated {} items from {} snippets, {} failures",
        outcome.items.len(),
        snippets.len(),
        outcome.failures.len()
    );
    if outcome.items.is_empty() {
        return Err(Failure {
            code: EXIT_NUMERICAL,
            error: anyhow!("no item passed validation"),
        });
    }
    write_file(path, &to_json(&outcome.items))?;
    Ok(())
}

fn cmd_export_form(bank: &Path, form_path: &Path, key_path: &Path, force: bool, out: &mut dyn Write) -> Outcome {
    if !force {
        if let Some(p) = [form_path, key_path].into_iter().find(|p| p.exists()) {
            return Err(anyhow!("{} exists; pass --force to overwrite", p.display()).into());
        }
    }
    let items = read_bank(bank)?;
    let (form, key) = export_form(&items)?;
    write_file(form_path, &to_json(&form))?;
    write_file(key_path, &to_json(&key))?;
    say!(out, "form with {} question blocks; key with {} entries", form.blocks.len(), key.len());
    Ok(())
}

fn cmd_ingest(
    responses: &Path,
    bank: Option<&Path>,
    key: Option<&Path>,
    path: &Path,
    opinions_out: Option<PathBuf>,
    exam_values: Option<ExamValues>,
    out: &mut dyn Write,
) -> Outcome {
    let bank = bank.map(read_bank).transpose()?;
    let key: Option<AnswerKey> = match (key, &bank) {
        (Some(k), _) => Some(read_json(k, "answer key")?),
        (None, Some(b)) => Some(b.iter().map(|i| (i.id.clone(), i.correct_index)).collect()),
        (None, None) => None,
    };
    let values = exam_values.unwrap_or(if bank.is_some() { ExamValues::Options } else { ExamValues::Scored });
    let exam_key = bank.as_deref().zip(key.as_ref()).map(|(bank, key)| ExamKey { bank, key });
    let file = std::fs::File::open(responses).with_context(|| format!("cannot open {}", responses.display()))?;
    let got = ingest_csv(file, values, exam_key.as_ref())?;
    let opinions_path = opinions_out.unwrap_or_else(|| {
        let stem = path.file_stem().unwrap_or_default().to_string_lossy();
        path.with_file_name(format!("{stem}.opinions.json"))
    });
    write_file(path, &to_json(&got.matrix))?;
    write_file(&opinions_path, &to_json(&got.opinions))?;
    say!(
        out,
        "ingested {} persons x {} items ({} exam, {} assess); {} opinion entries",
        got.matrix.n_persons(),
        got.matrix.n_items(),
        got.n_exam,
        got.n_assess,
        got.opinions.entries.len()
    );
    Ok(())
}

fn cmd_calibrate(
    cfg: &RunConfig,
    matrix: &Path,
    quad_nodes: Option<usize>,
    path: &Path,
    report: Option<&Path>,
    info_out: Option<&Path>,
    out: &mut dyn Write,
) -> Outcome {
    let m: ResponseMatrix = read_json(matrix, "response matrix")?;
    let mut config = cfg.calibration.clone();
    if let Some(q) = quad_nodes {
        config.n_quadrature = q;
    }
    let result = fit_mixed(&m, &config)?;
    write_file(path, &to_json(&result))?;
    let info = test_information(&result.params(), &default_theta_grid());
    if let Some(r) = report {
        write_file(r, &report::calibration_report(&result, &info))?;
    }
    if let Some(p) = info_out {
        let ids: Vec<String> = result.items.iter().map(|i| i.item_id.clone()).collect();
        write_file(p, &report::information_csv(&info, &ids))?;
    }
    say!(
        out,
        "calibrated {} items ({} dropped) in {} EM cycles, converged: {}, log-likelihood {:.4}",
        result.items.len(),
        result.dropped.len(),
        result.n_cycles,
        result.converged,
        result.log_likelihood
    );
    Ok(())
}

fn load_aligned(params: &Path, matrix: &Path) -> anyhow::Result<(CalibrationResult, ResponseMatrix, ResponseMatrix)> {
    let result: CalibrationResult = read_json(params, "calibration result")?;
    let full: ResponseMatrix = read_json(matrix, "response matrix")?;
    let (aligned, _) = result.aligned(&full)?;
    Ok((result, full, aligned))
}

fn cmd_score(params: &Path, matrix: &Path, path: &Path, out: &mut dyn Write) -> Outcome {
    let (result, _, m) = load_aligned(params, matrix)?;
    let grid = gauss_hermite_grid(result.n_quadrature)?;
    let scores = eap_scores(&m, &result.params(), &grid)?;
    write_file(path, &report::abilities_csv(&scores))?;
    say!(
        out,
        "scored {} persons ({} prior only)",
        scores.len(),
        scores.iter().filter(|s| s.prior_only).count()
    );
    Ok(())
}

fn read_groups(path: &Path, persons: &[String]) -> anyhow::Result<Vec<Group>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut by_id = std::collections::HashMap::new();
    for (r, rec) in reader.records().enumerate() {
        let rec = rec?;
        let (id, g) = (rec.get(0).unwrap_or_default(), rec.get(1).unwrap_or_default());
        let group = match g.to_ascii_lowercase().as_str() {
            "low" => Group::Low,
            "high" => Group::High,
            other => bail!("groups row {}: {other:?} is not low or high", r + 1),
        };
        by_id.insert(id.to_string(), group);
    }
    persons
        .iter()
        .map(|p| by_id.get(p).copied().ok_or_else(|| anyhow!("no group for person {p}")))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn cmd_dif(
    params: &Path,
    matrix: &Path,
    mut dif: DifConfig,
    groups: Option<&Path>,
    path: &Path,
    table: Option<&Path>,
    report: Option<&Path>,
    out: &mut dyn Write,
) -> Outcome {
    dif.validate()?;
    let (result, _, m) = load_aligned(params, matrix)?;
    if let Some(g) = groups {
        dif.grouping = Grouping::External(read_groups(g, m.person_ids())?);
    }
    let grid = gauss_hermite_grid(result.n_quadrature)?;
    let dif_report = run_dif_screen(&m, &result.params(), &grid, &dif)?;
    write_file(path, &to_json(&dif_report))?;
    if let Some(t) = table {
        write_file(t, &report::dif_csv(&dif_report))?;
    }
    let text = report::dif_text(&dif_report);
    if let Some(r) = report {
        write_file(r, &text)?;
    }
    let _ = out.write_all(text.as_bytes());
    Ok(())
}

fn read_experts(path: &Path, questions: &[u32]) -> anyhow::Result<Vec<(String, Vec<Option<u8>>)>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    let cols: Vec<Option<u32>> = header.iter().skip(1).map(|h| question_number(h)).collect();
    if let Some(bad) = header.iter().skip(1).zip(&cols).find(|(_, q)| q.is_none()) {
        bail!("expert column {} has no question number", bad.0);
    }
    let mut raters = Vec::new();
    for (r, rec) in reader.records().enumerate() {
        let rec = rec?;
        let mut stars = vec![None; questions.len()];
        for (c, q) in cols.iter().enumerate() {
            let Some(raw) = rec.get(c + 1).filter(|s| !s.is_empty()) else { continue };
            let v: u8 = raw
                .parse()
                .ok()
                .filter(|v| (1..=5).contains(v))
                .ok_or_else(|| anyhow!("experts row {}, column {}: {raw:?} is not a rating 1..5", r + 1, header[c + 1]))?;
            if let Some(i) = questions.iter().position(|x| Some(*x) == *q) {
                stars[i] = Some(v);
            }
        }
        raters.push((rec.get(0).unwrap_or_default().to_string(), stars));
    }
    Ok(raters)
}

fn cmd_analyze(matrix: &Path, opinions: &Path, params: &Path, dir: &Path, experts: Option<&Path>, out: &mut dyn Write) -> Outcome {
    let m: ResponseMatrix = read_json(matrix, "response matrix")?;
    let sheet: OpinionSheet = read_json(opinions, "opinion sheet")?;
    let result: CalibrationResult = read_json(params, "calibration result")?;
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let (aggs, excluded) = aggregate_items(&m, &sheet, &result);
    if aggs.is_empty() {
        return Err(qacal_core::Error::InsufficientData("no question has any response".into()).into());
    }
    let columns = heatmap_columns(&aggs);
    let corr = pearson_matrix(&columns);

    write_file(&dir.join("aggregates.csv"), &report::aggregates_csv(&aggs))?;
    let r_csv = report::matrix_csv(&corr, |i, j| report::cell(corr.r(i, j)));
    let p_csv = report::matrix_csv(&corr, |i, j| report::cell(corr.cells[i][j].map(|c| c.p_value)));
    let n_csv = report::matrix_csv(&corr, |i, j| corr.cells[i][j].map(|c| c.n.to_string()).unwrap_or_default());
    write_file(&dir.join("correlations.csv"), &r_csv)?;
    write_file(&dir.join("correlation_pvalues.csv"), &p_csv)?;
    write_file(&dir.join("correlation_n.csv"), &n_csv)?;

    // per-question star ratings from the students
    let ratings: Vec<Vec<Option<u8>>> = aggs
        .iter()
        .map(|a| {
            a.assess_item
                .as_deref()
                .and_then(|id| m.item_index(id))
                .map(|j| m.column(j).collect())
                .unwrap_or_default()
        })
        .collect();
    let features: Vec<(String, Vec<Option<f64>>)> = columns
        .iter()
        .filter(|(n, _)| matches!(n.as_str(), "avg_exam_score" | "difficulty" | "discrimination" | "avg_assessment"))
        .cloned()
        .collect();
    let profile = disagreement_profile(&ratings, &features)?;
    let mut d = String::from("question,star_sd\n");
    for (a, sd) in aggs.iter().zip(&profile.dispersion) {
        d.push_str(&format!("{},{}\n", a.question, report::cell(*sd)));
    }
    write_file(&dir.join("disagreement.csv"), &d)?;
    let mut f = String::from("feature,r,p_value,n\n");
    for (name, c) in &profile.features {
        f.push_str(&format!(
            "{name},{},{},{}\n",
            report::cell(c.map(|c| c.r)),
            report::cell(c.map(|c| c.p_value)),
            c.map(|c| c.n.to_string()).unwrap_or_default()
        ));
    }
    write_file(&dir.join("disagreement_correlations.csv"), &f)?;

    let mut agreement: Vec<AgreementReport> = Vec::new();
    if let Some(e) = experts {
        let questions: Vec<u32> = aggs.iter().map(|a| a.question).collect();
        let raters = read_experts(e, &questions)?;
        for i in 0..raters.len() {
            for j in i + 1..raters.len() {
                agreement.push(exact_agreement(&raters[i].0, &raters[i].1, &raters[j].0, &raters[j].1)?);
            }
        }
        let mut s = String::from("rater_a,rater_b,exact_agreement,n_items\n");
        for a in &agreement {
            s.push_str(&format!("{},{},{},{}\n", a.rater_a, a.rater_b, report::cell(Some(a.proportion)), a.n_items));
        }
        write_file(&dir.join("agreement.csv"), &s)?;
    }

    let plot = serde_json::json!({
        "labels": corr.names,
        "r": (0..corr.names.len()).map(|i| (0..corr.names.len()).map(|j| corr.r(i, j)).collect::<Vec<_>>()).collect::<Vec<_>>(),
        "p_value": corr.cells.iter().map(|row| row.iter().map(|c| c.map(|c| c.p_value)).collect::<Vec<_>>()).collect::<Vec<_>>(),
        "excluded": excluded,
    });
    write_file(&dir.join("plot_data.json"), &to_json(&plot))?;
    let map = report::heatmap(&corr);
    write_file(&dir.join("heatmap.txt"), &map)?;
    let _ = out.write_all(map.as_bytes());
    say!(
        out,
        "{} questions aggregated, {} excluded; files written to {}",
        aggs.len(),
        excluded.len(),
        file_name(dir)
    );
    Ok(())
}

fn read_spec(path: &Path, seed: Option<u64>) -> anyhow::Result<SimSpec> {
    let mut spec: SimSpec = read_json(path, "simulation spec")?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate()?;
    Ok(spec)
}

fn cmd_simulate(spec: &Path, seed: Option<u64>, path: &Path, truth: Option<&Path>, out: &mut dyn Write) -> Outcome {
    let spec = read_spec(spec, seed)?;
    let sim = simulate_responses(&spec)?;
    write_file(path, &to_json(&sim.matrix))?;
    if let Some(t) = truth {
        let mut s = String::from("person_id,theta,group\n");
        for ((id, th), g) in sim.matrix.person_ids().iter().zip(&sim.theta).zip(&sim.groups) {
            let g = if *g == Group::High { "high" } else { "low" };
            s.push_str(&format!("{id},{},{g}\n", report::cell(Some(*th))));
        }
        write_file(t, &s)?;
    }
    say!(out, "simulated {} persons x {} items (seed {})", sim.matrix.n_persons(), sim.matrix.n_items(), spec.seed);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_study(
    cfg: &RunConfig,
    spec: &Path,
    seed: Option<u64>,
    replicates: usize,
    kind: StudyKind,
    grouping: StudyGroupingArg,
    path: &Path,
    out: &mut dyn Write,
) -> Outcome {
    let spec = read_spec(spec, seed)?;
    let text = match kind {
        StudyKind::Recovery => {
            let r = recovery_study(&spec, &cfg.calibration, replicates)?;
            write_file(path, &to_json(&r))?;
            report::recovery_text(&r)
        }
        StudyKind::DifPower => {
            let dif = DifConfig {
                delta_flag_threshold: cfg.dif.delta_flag_threshold,
                alpha: cfg.dif.alpha,
                grouping: Grouping::MedianSplit,
            };
            let g = match grouping {
                StudyGroupingArg::Simulated => StudyGrouping::Simulated,
                StudyGroupingArg::MedianSplit => StudyGrouping::MedianSplit,
            };
            let r = dif_power_study(&spec, &cfg.calibration, &dif, g, replicates)?;
            write_file(path, &to_json(&r))?;
            report::dif_power_text(&r)
        }
    };
    let _ = out.write_all(text.as_bytes());
    Ok(())
}
