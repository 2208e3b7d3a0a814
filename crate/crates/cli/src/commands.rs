use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use serde::Serialize;
use syllogism_circuits::circuits::{
    classify_movers, evaluate_conditions, mean_table, mover_scores, necessity_curve, sufficiency_curve,
    AblationCurve, CircuitSpec, ConditionReport, MoverClassification,
};
use syllogism_circuits::datasets::{
    corrupt_batch, ingest_nonsymbolic, parse_nonsymbolic, perturb_batch, read_instances, to_jsonl, Belief,
    Intervention, Perturbation, PromptPair, RejectedRow, SyllogismInstance, SyllogisticScheme,
    BUNDLED_NONSYMBOLIC,
};
use syllogism_circuits::interventions::{
    attention_profile, head_output_sweep, head_pattern_sweep, head_value_sweep, logit_degradation, path_patch,
    path_patch_senders, residual_sweep, Degradation, PositionSel, SweepOptions, SweepResult,
};
use syllogism_circuits::lens::{diagonal_score, letter_tokens, ov_lens, LensMatrix};
use syllogism_circuits::metrics::{accuracy, batch_stats, score_instances, BatchStats};
use syllogism_circuits::model::{load_bundle_with_tokenizer, ModelBundle, Tokenizer};
use syllogism_circuits::{Exec, HeadId};

use crate::config::{sha256_hex, usage, ExperimentConfig, SweepKind};
use crate::output::{heatmap_ppm, Provenance, Report, Sink};

/// Heatmap block size in pixels per cell.
const HEATMAP_SCALE: usize = 8;

pub struct Session {
    pub cfg: ExperimentConfig,
    pub seed: u64,
    pub exec: Exec,
    tokenizer: Arc<Tokenizer>,
    config_hash: String,
}

impl Session {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        let seed = cfg.seed()?;
        cfg.check_files()?;
        let tokenizer = match (&cfg.model.vocab, &cfg.model.merges) {
            (Some(v), Some(m)) => Arc::new(Tokenizer::from_files(v, m)?),
            _ => Arc::new(Tokenizer::gpt2()),
        };
        let config_hash = cfg.hash()?;
        Ok(Session { exec: Exec::with_workers(cfg.workers), seed, tokenizer, config_hash, cfg })
    }

    fn provenance(&self, command: &str, model_hash: Option<String>, dataset: Option<&[SyllogismInstance]>) -> Result<Provenance> {
        Ok(Provenance {
            command: command.into(),
            seed: self.seed,
            config_hash: self.config_hash.clone(),
            model_hash,
            dataset_hash: dataset.map(|d| to_jsonl(d).map(|s| sha256_hex(s.as_bytes()))).transpose()?,
            config: self.cfg.clone(),
        })
    }

    fn sink(&self, command: &str, model_hash: Option<String>, dataset: Option<&[SyllogismInstance]>) -> Result<Sink> {
        Sink::new(&self.cfg.output, self.provenance(command, model_hash, dataset)?)
    }

    fn model(&self) -> Result<(ModelBundle, String)> {
        let path = self.cfg.checkpoint()?;
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let bundle = load_bundle_with_tokenizer(path, self.tokenizer.clone())?;
        Ok((bundle, sha256_hex(&bytes)))
    }

    /// Every scheme named by the config; `all` expands to the full table.
    fn schemes(&self) -> Result<Vec<SyllogisticScheme>> {
        if self.cfg.dataset.scheme.eq_ignore_ascii_case("all") {
            return Ok(SyllogisticScheme::all().to_vec());
        }
        Ok(vec![SyllogisticScheme::lookup(&self.cfg.dataset.scheme)?])
    }

    fn scheme(&self) -> Result<SyllogisticScheme> {
        match self.schemes()?.as_slice() {
            [one] => Ok(*one),
            _ => Err(usage("this command needs a single scheme, not `all`")),
        }
    }

    fn sample(&self, scheme: SyllogisticScheme) -> Result<Vec<SyllogismInstance>> {
        Ok(syllogism_circuits::datasets::generate_symbolic(scheme, self.cfg.dataset.n, self.seed, &self.tokenizer)?)
    }

    /// The configured dataset file, or a fresh seeded sample.
    fn instances(&self) -> Result<Vec<SyllogismInstance>> {
        let instances = match &self.cfg.dataset.file {
            Some(path) => read_instances(path, &self.tokenizer)?,
            None => self.sample(self.scheme()?)?,
        };
        if instances.is_empty() {
            return Err(usage("the dataset is empty; regenerate it with `syllo generate`"));
        }
        Ok(instances)
    }

    /// One batch per scheme: the dataset file, or a sample of each configured scheme.
    fn batches(&self) -> Result<Vec<Vec<SyllogismInstance>>> {
        if self.cfg.dataset.file.is_some() {
            return Ok(vec![self.instances()?]);
        }
        self.schemes()?.into_iter().map(|s| self.sample(s)).collect()
    }

    fn pairs(&self, instances: &[SyllogismInstance], intervention: Intervention) -> Result<Vec<PromptPair>> {
        Ok(corrupt_batch(instances, intervention, self.seed, &self.tokenizer)?)
    }

    /// Unperturbed instances first, then one variant per configured perturbation.
    fn variants(&self, instances: &[SyllogismInstance]) -> Result<Vec<(String, Vec<SyllogismInstance>)>> {
        let base = instances[0].scheme.id();
        let mut out = vec![(base.clone(), instances.to_vec())];
        for &kind in &self.cfg.dataset.perturbations {
            let perturbed = perturb_batch(instances, kind, self.seed, &self.tokenizer)?;
            out.push((format!("{base}+{}", perturbation_label(kind)), perturbed));
        }
        Ok(out)
    }
}

fn perturbation_label(kind: Perturbation) -> &'static str {
    match kind {
        Perturbation::Numeric => "numeric",
        Perturbation::Quantifier => "quantifier",
    }
}

fn announce(sink: &Sink) {
    for path in sink.written() {
        println!("wrote {}", path.display());
    }
}

#[derive(Debug, Serialize)]
pub struct DatasetSummary {
    pub scheme: String,
    pub samples: usize,
    pub tokens_per_prompt: usize,
    pub unique_s: usize,
    pub unique_m: usize,
    pub unique_p: usize,
    pub file: PathBuf,
}

pub fn generate(ctx: &Session) -> Result<()> {
    let scheme = ctx.scheme()?;
    let instances = ctx.sample(scheme)?;
    let unique = |f: fn(&SyllogismInstance) -> &str| instances.iter().map(f).collect::<BTreeSet<_>>().len();
    let summary = DatasetSummary {
        scheme: scheme.id(),
        samples: instances.len(),
        tokens_per_prompt: instances[0].n_tokens(),
        unique_s: unique(|i| &i.terms.s),
        unique_m: unique(|i| &i.terms.m1),
        unique_p: unique(|i| &i.terms.p),
        file: ctx.cfg.output.join("dataset.jsonl"),
    };
    let mut sink = ctx.sink("generate", None, Some(&instances))?;
    sink.raw("dataset.jsonl", to_jsonl(&instances)?.as_bytes())?;
    sink.report("generate.json", &summary)?;
    println!(
        "{}: {} samples, {} tokens each, unique s/m/p {}/{}/{}",
        summary.scheme, summary.samples, summary.tokens_per_prompt, summary.unique_s, summary.unique_m, summary.unique_p
    );
    announce(&sink);
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct CompletionScores {
    pub dataset: String,
    pub samples: usize,
    pub accuracy: f64,
    pub logit_difference: BatchStats,
}

fn completion(bundle: &ModelBundle, label: &str, instances: &[SyllogismInstance], exec: &Exec) -> Result<CompletionScores> {
    let scores = score_instances(bundle, instances, exec)?;
    let deltas: Vec<f64> = scores.iter().map(|s| s.delta).collect();
    Ok(CompletionScores {
        dataset: label.into(),
        samples: instances.len(),
        accuracy: accuracy(&scores)?,
        logit_difference: batch_stats(&deltas)?,
    })
}

pub fn run(ctx: &Session) -> Result<()> {
    let (bundle, model_hash) = ctx.model()?;
    let batches = ctx.batches()?;
    let mut rows = Vec::new();
    for batch in &batches {
        for (label, variant) in ctx.variants(batch)? {
            let row = completion(&bundle, &label, &variant, &ctx.exec)?;
            println!(
                "{:<20} n={:<4} accuracy {:.3}  δ {:.3} ± {:.3}",
                row.dataset, row.samples, row.accuracy, row.logit_difference.mean, row.logit_difference.std
            );
            rows.push(row);
        }
    }
    let mut sink = ctx.sink("run", Some(model_hash), Some(&batches.concat()))?;
    sink.report("run.json", &rows)?;
    announce(&sink);
    Ok(())
}

fn write_grid(ctx: &Session, sink: &mut Sink, stem: &str, result: &SweepResult) -> Result<()> {
    sink.report(&format!("{stem}.json"), result)?;
    sink.raw(&format!("{stem}.csv"), result.to_csv().as_bytes())?;
    if ctx.cfg.sweep.heatmap {
        sink.raw(&format!("{stem}.ppm"), &heatmap_ppm(&result.means(), HEATMAP_SCALE))?;
    }
    let top: Vec<String> = result.top(5).iter().map(|(r, c, s)| format!("{r}.{c}={s:.3}")).collect();
    println!("{stem}: top {}", top.join(" "));
    Ok(())
}

pub fn sweep(ctx: &Session) -> Result<()> {
    let (bundle, model_hash) = ctx.model()?;
    let instances = ctx.instances()?;
    let pairs = ctx.pairs(&instances, ctx.cfg.dataset.intervention)?;
    let mut opts = SweepOptions::new(ctx.cfg.sweep.direction);
    opts.exec = ctx.exec.clone();
    let mut sink = ctx.sink("sweep", Some(model_hash), Some(&instances))?;
    for &kind in &ctx.cfg.sweep.kinds {
        match kind {
            SweepKind::Residual => write_grid(ctx, &mut sink, "sweep_residual", &residual_sweep(&bundle, &pairs, &opts)?)?,
            SweepKind::HeadOut => write_grid(ctx, &mut sink, "sweep_head_out", &head_output_sweep(&bundle, &pairs, &opts)?)?,
            SweepKind::HeadValue => {
                write_grid(ctx, &mut sink, "sweep_head_value", &head_value_sweep(&bundle, &pairs, &opts)?)?
            }
            SweepKind::HeadPattern => {
                let mut last = opts.clone();
                last.positions = PositionSel::Role(syllogism_circuits::datasets::Role::Last);
                write_grid(ctx, &mut sink, "sweep_head_pattern", &head_pattern_sweep(&bundle, &pairs, &last)?)?
            }
            SweepKind::Attention => {
                let heads = (!ctx.cfg.sweep.heads.is_empty()).then_some(ctx.cfg.sweep.heads.as_slice());
                let profile = attention_profile(&bundle, &instances, ctx.cfg.sweep.query, heads, &ctx.exec)?;
                sink.report("attention.json", &profile)?;
                for head in &profile.heads {
                    let cells: Vec<String> = profile
                        .columns
                        .iter()
                        .zip(&head.mean)
                        .map(|(c, w)| format!("{}={w:.2}", c.label))
                        .collect();
                    println!("attention {} from [{}]: {}", head.head, ctx.cfg.sweep.query.label(), cells.join(" "));
                }
            }
        }
    }
    announce(&sink);
    Ok(())
}

pub fn path_patching(ctx: &Session) -> Result<()> {
    let receiver = ctx
        .cfg
        .path
        .receiver
        .ok_or_else(|| usage("no receiver head: set [path] receiver or pass --receiver L.H"))?;
    let (bundle, model_hash) = ctx.model()?;
    let instances = ctx.instances()?;
    let pairs = ctx.pairs(&instances, ctx.cfg.dataset.intervention)?;
    let mut sink = ctx.sink("path-patch", Some(model_hash), Some(&instances))?;
    match ctx.cfg.path.sender {
        Some(sender) => {
            let result = path_patch(&bundle, &pairs, sender, receiver, &ctx.exec)?;
            match &result.stats {
                Some(s) => println!("{sender} -> {receiver}: {:.4} ± {:.4} ({} missing)", s.mean, s.std, result.missing),
                None => println!("{sender} -> {receiver}: undefined for every pair"),
            }
            sink.report(&format!("path_{sender}_to_{receiver}.json"), &result)?;
        }
        None => {
            let grid = path_patch_senders(&bundle, &pairs, receiver, &ctx.exec)?;
            write_grid(ctx, &mut sink, &format!("path_senders_to_{receiver}"), &grid)?;
        }
    }
    announce(&sink);
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct LensEntry {
    pub diagonal_score: f64,
    pub lens: LensMatrix,
}

pub fn lens(ctx: &Session) -> Result<()> {
    let (bundle, model_hash) = ctx.model()?;
    let heads = if ctx.cfg.lens.heads.is_empty() {
        CircuitSpec::all_heads(&bundle.config).heads
    } else {
        ctx.cfg.lens.heads.clone()
    };
    let tokens = letter_tokens(&ctx.tokenizer)?;
    let mut sink = ctx.sink("lens", Some(model_hash), None)?;
    let mut entries = Vec::with_capacity(heads.len());
    for head in heads {
        let lens = ov_lens(&bundle, head, &tokens)?;
        let score = diagonal_score(&lens)?;
        if !ctx.cfg.lens.heads.is_empty() {
            println!("lens {head}: diagonal score {score:.4}");
            sink.raw(&format!("lens_{head}.csv"), lens.to_csv().as_bytes())?;
        }
        entries.push(LensEntry { diagonal_score: score, lens });
    }
    sink.report("lens.json", &entries)?;
    announce(&sink);
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct AblationVariant {
    pub dataset: String,
    pub necessity: AblationCurve,
    pub sufficiency: AblationCurve,
    pub conditions: ConditionReport,
}

fn circuit(ctx: &Session) -> Result<CircuitSpec> {
    Ok(match &ctx.cfg.circuit {
        Some(path) => CircuitSpec::load(path)?,
        None => CircuitSpec::default(),
    })
}

pub fn ablate(ctx: &Session) -> Result<()> {
    let (bundle, model_hash) = ctx.model()?;
    let circuit = circuit(ctx)?;
    circuit.validate(&bundle.config)?;
    let batches = ctx.batches()?;
    let mut variants = Vec::new();
    let mut csv = String::from("dataset,c1_necessity,c2_sufficiency,c3_positive_baseline,accuracy\n");
    for batch in &batches {
        for (label, variant) in ctx.variants(batch)? {
            let table = mean_table(&bundle, &variant, &ctx.exec)?;
            let necessity = necessity_curve(&bundle, &circuit, &variant, &table, &ctx.exec)?;
            let sufficiency = sufficiency_curve(&bundle, &circuit, &variant, &table, &ctx.exec)?;
            let baseline = score_instances(&bundle, &variant, &ctx.exec)?;
            let c = evaluate_conditions(&necessity, &sufficiency, &baseline, ctx.cfg.margins)?;
            println!(
                "{label:<20} baseline {:.3}  necessity {:.3} [{}]  sufficiency {:.3} [{}]  positive baseline [{}]",
                c.baseline_mean,
                c.necessity_final,
                verdict(c.necessity),
                c.sufficiency_final,
                verdict(c.sufficiency),
                verdict(c.positive_baseline),
            );
            csv.push_str(&format!("{label},{},{},{},{}\n", c.necessity, c.sufficiency, c.positive_baseline, c.accuracy));
            variants.push(AblationVariant { dataset: label, necessity, sufficiency, conditions: c });
        }
    }
    let mut sink = ctx.sink("ablate", Some(model_hash), Some(&batches.concat()))?;
    sink.report("ablate.json", &variants)?;
    sink.raw("conditions.csv", csv.as_bytes())?;
    announce(&sink);
    Ok(())
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "holds"
    } else {
        "fails"
    }
}

/// Always uses all-term corruption so every term slot differs between runs.
pub fn movers(ctx: &Session) -> Result<()> {
    let (bundle, model_hash) = ctx.model()?;
    let instances = ctx.instances()?;
    let pairs = ctx.pairs(&instances, Intervention::AllTerm)?;
    let mut opts = SweepOptions::new(ctx.cfg.sweep.direction);
    opts.exec = ctx.exec.clone();
    let classes: Vec<MoverClassification> = classify_movers(&mover_scores(&bundle, &pairs, &opts)?);
    for c in classes.iter().filter(|c| c.outlier) {
        println!("{} S_all {:.3} PPD {:.3} {:?}", c.head, c.s_all, c.ppd, c.quadrant);
    }
    let mut sink = ctx.sink("movers", Some(model_hash), Some(&instances))?;
    sink.report("movers.json", &classes)?;
    announce(&sink);
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct SubjectBias {
    pub symbolic: Degradation,
    pub nonsymbolic: Degradation,
    pub nonsymbolic_consistent: Option<Degradation>,
    pub nonsymbolic_inconsistent: Option<Degradation>,
    pub rejected_rows: Vec<RejectedRow>,
}

pub fn subject_bias(ctx: &Session) -> Result<()> {
    let (bundle, model_hash) = ctx.model()?;
    let scheme = ctx.scheme()?;
    let instances = ctx.instances()?;
    let symbolic = logit_degradation(&bundle, &ctx.pairs(&instances, Intervention::SubjectTerm)?, &ctx.exec)?;
    let ingest = match &ctx.cfg.dataset.nonsymbolic {
        Some(path) => ingest_nonsymbolic(path, scheme, &ctx.tokenizer)?,
        None => parse_nonsymbolic(BUNDLED_NONSYMBOLIC, scheme, &ctx.tokenizer)?,
    };
    let words = ingest.instances;
    let degrade = |subset: Vec<SyllogismInstance>| -> Result<Option<Degradation>> {
        if subset.is_empty() {
            return Ok(None);
        }
        Ok(Some(logit_degradation(&bundle, &ctx.pairs(&subset, Intervention::SubjectTerm)?, &ctx.exec)?))
    };
    let by_belief = |b: Belief| words.iter().filter(|i| i.label == Some(b)).cloned().collect::<Vec<_>>();
    let report = SubjectBias {
        symbolic,
        nonsymbolic: degrade(words.clone())?.ok_or_else(|| usage("every non-symbolic row was rejected"))?,
        nonsymbolic_consistent: degrade(by_belief(Belief::Consistent))?,
        nonsymbolic_inconsistent: degrade(by_belief(Belief::Inconsistent))?,
        rejected_rows: ingest.rejected,
    };
    for row in &report.rejected_rows {
        eprintln!("skipped line {} ({}): {}", row.line, row.row, row.reason);
    }
    println!("symbolic     degradation {:.3} ± {:.3}", report.symbolic.stats.mean, report.symbolic.stats.std);
    println!("non-symbolic degradation {:.3} ± {:.3}", report.nonsymbolic.stats.mean, report.nonsymbolic.stats.std);
    let mut sink = ctx.sink("subject-bias", Some(model_hash), Some(&instances))?;
    sink.report("subject_bias.json", &report)?;
    announce(&sink);
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct ReportIndexEntry {
    pub file: String,
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    pub model_hash: Option<String>,
    pub dataset_hash: Option<String>,
}

/// Index every report in the output directory.
pub fn report(ctx: &Session) -> Result<()> {
    let dir = &ctx.cfg.output;
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}; run another command first to create it", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && !is_index(p))
        .collect();
    files.sort();
    let mut index = Vec::new();
    for path in files {
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let Ok(report) = serde_json::from_str::<Report<serde_json::Value>>(&text) else {
            continue;
        };
        let p = report.provenance;
        println!(
            "{:<32} {:<13} seed {:<6} config {}",
            path.file_name().unwrap_or_default().to_string_lossy(),
            p.command,
            p.seed,
            &p.config_hash[..12]
        );
        index.push(ReportIndexEntry {
            file: path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
            command: p.command,
            seed: p.seed,
            config_hash: p.config_hash,
            model_hash: p.model_hash,
            dataset_hash: p.dataset_hash,
        });
    }
    if index.is_empty() {
        return Err(usage(format!("no reports in {}; run a command such as `syllo run` first", dir.display())));
    }
    let mut sink = ctx.sink("report", None, None)?;
    sink.report("index.json", &index)?;
    announce(&sink);
    Ok(())
}

fn is_index(path: &Path) -> bool {
    path.file_name().is_some_and(|n| n == "index.json")
}

/// Heads named on the command line, comma separated.
pub fn parse_heads(list: &str) -> Result<Vec<HeadId>> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<HeadId>().map_err(|e| usage(format!("bad head `{s}`: {e}"))))
        .collect()
}
