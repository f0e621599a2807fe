//! One runner per subcommand. Runners are pure functions of their argument
//! structs plus the referenced files, shared between direct invocation and
//! manifest replay; all of them echo the resolved configuration as sorted
//! `key=value` lines on success.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use abdiff_core::artifact::{
    file_sha256_hex, load_artifact, load_json, save_json, ArtifactError, ArtifactKind,
};
use abdiff_core::corpus::{
    load_assay_table, load_paired_fasta, write_assay_table, write_paired_fasta, CorpusError,
    CorpusRecord, PairedCorpus,
};
use abdiff_core::denoiser::{DenoiserBundle, DenoiserError};
use abdiff_core::evalkit::{ecdf, enrichment_report, pairwise_stats, ssn_edges, EvalError, IdentityMatrix};
use abdiff_core::guidance::{
    guided_generate_pair, guided_infill_pair, AssayTerm, GuidanceConfig, GuidanceError,
};
use abdiff_core::oracle::{KmerFeaturizer, OracleError, RidgeOracle, ExternalFeatures, Featurizer};
use abdiff_core::sampler::{derive_seed, generate_pair, SamplerConfig, SamplerError};
use abdiff_core::seq::{apply_region_mask, encode_pair, RegionMask, SeqError};
use abdiff_core::toy::{toy_dataset, ToyConfig, ToyError};

use crate::args::{
    EvaluateArgs, GuideArgs, ReplayArgs, ReportArgs, SampleArgs, TrainDenoiserArgs, TrainOracleArgs,
};
use crate::manifest::{write_manifest, RunManifest, RunSpec};

/// A failed run: stable machine-readable code plus a human message.
#[derive(Debug)]
pub struct CliError {
    pub code: String,
    pub message: String,
}

impl CliError {
    fn new(code: &str, message: impl Display) -> Self {
        CliError {
            code: code.to_string(),
            message: message.to_string(),
        }
    }

    fn flag(message: impl Display) -> Self {
        Self::new("bad-flag", message)
    }

    fn regions(message: impl Display) -> Self {
        Self::new("bad-regions", message)
    }
}

impl Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "error[{}]: {}", self.code, self.message)
    }
}

macro_rules! from_core_error {
    ($($t:ty),+) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError { code: e.code().to_string(), message: e.to_string() }
            }
        }
    )+};
}

from_core_error!(
    ArtifactError,
    CorpusError,
    DenoiserError,
    EvalError,
    GuidanceError,
    OracleError,
    SamplerError,
    SeqError,
    ToyError
);

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new("io", e)
    }
}

/// Sorted `key=value` echo of the resolved configuration and run statistics.
struct Echo(BTreeMap<String, String>);

impl Echo {
    fn new(command: &str, threads: usize) -> Self {
        let mut map = BTreeMap::new();
        map.insert("command".to_string(), command.to_string());
        map.insert("threads".to_string(), threads.to_string());
        Echo(map)
    }

    fn set(&mut self, key: &str, value: impl Display) {
        self.0.insert(key.to_string(), value.to_string());
    }

    fn set_path(&mut self, key: &str, value: &Path) {
        self.set(key, value.display());
    }

    fn set_opt_path(&mut self, key: &str, value: &Option<PathBuf>) {
        if let Some(p) = value {
            self.set(key, p.display());
        }
    }

    fn print(&self) {
        for (k, v) in &self.0 {
            println!("{k}={v}");
        }
    }
}

fn record_seed(base: u64, index: usize) -> u64 {
    derive_seed(base, index as u64)
}

fn generated_corpus(records: Vec<CorpusRecord>) -> Result<PairedCorpus, CliError> {
    Ok(PairedCorpus::from_records(records)?)
}

pub fn run_train_denoiser(args: &TrainDenoiserArgs, threads: usize) -> Result<(), CliError> {
    let mut echo = Echo::new("train-denoiser", threads);
    let mut inputs: Vec<&PathBuf> = Vec::new();
    let mut outputs: Vec<&PathBuf> = vec![&args.out];
    let corpus = if args.toy {
        let (corpus, table) = toy_dataset(&ToyConfig::default())?;
        if let Some(path) = &args.emit_corpus {
            write_paired_fasta(&corpus, BufWriter::new(File::create(path)?))?;
            outputs.push(path);
        }
        if let Some(path) = &args.emit_assays {
            write_assay_table(&table, BufWriter::new(File::create(path)?))?;
            outputs.push(path);
        }
        corpus
    } else {
        let path = args.corpus.as_ref().expect("clap requires --corpus without --toy");
        inputs.push(path);
        load_paired_fasta(path)?
    };
    let bundle = DenoiserBundle::from_corpus(&corpus, args.masking_draws, args.seed)?;
    save_json(ArtifactKind::Denoiser, &bundle, &args.out)?;

    echo.set("toy", args.toy);
    if let Some(p) = &args.corpus {
        echo.set_path("corpus", p);
    }
    echo.set_opt_path("emit_corpus", &args.emit_corpus);
    echo.set_opt_path("emit_assays", &args.emit_assays);
    echo.set("masking_draws", args.masking_draws);
    echo.set("seed", args.seed);
    echo.set_path("out", &args.out);
    echo.set_opt_path("manifest_out", &args.manifest_out);
    echo.set("records", corpus.len());
    echo.set("contexts", bundle.model.context_count());
    echo.set("layouts", bundle.lengths.support_size());
    echo.print();

    write_manifest(
        &args.manifest_out,
        RunSpec::TrainDenoiser(args.clone()),
        &inputs,
        &outputs,
    )
}

pub fn run_train_oracle(args: &TrainOracleArgs, threads: usize) -> Result<(), CliError> {
    let mut echo = Echo::new("train-oracle", threads);
    let corpus = load_paired_fasta(&args.corpus)?;
    let table = load_assay_table(&args.assays)?;
    table.validate_against(&corpus)?;
    let idx = table.assay_index(&args.assay)?;
    let featurizer: Box<dyn Featurizer> = match &args.features {
        Some(path) => Box::new(ExternalFeatures::load(path)?),
        None => Box::new(KmerFeaturizer),
    };
    let ids = table.labeled_ids(idx);
    let records: Vec<&CorpusRecord> = ids
        .iter()
        .map(|id| corpus.get(id).expect("validated against corpus"))
        .collect();
    let targets: Vec<f64> = ids
        .iter()
        .map(|id| table.value(id, idx).expect("labeled id has a value"))
        .collect();
    let oracle = RidgeOracle::fit(&args.assay, featurizer.as_ref(), &records, &targets, args.alpha)?;
    save_json(ArtifactKind::Oracle, &oracle, &args.out)?;

    echo.set_path("corpus", &args.corpus);
    echo.set_path("assays", &args.assays);
    echo.set("assay", &args.assay);
    echo.set("alpha", args.alpha);
    echo.set_opt_path("features", &args.features);
    echo.set_path("out", &args.out);
    echo.set_opt_path("manifest_out", &args.manifest_out);
    echo.set("labeled", records.len());
    echo.set("dim", oracle.dim());
    echo.set("scheme", &oracle.scheme_id);
    echo.set("stationarity_residual", oracle.stationarity_residual);
    echo.print();

    let mut inputs: Vec<&PathBuf> = vec![&args.corpus, &args.assays];
    if let Some(f) = &args.features {
        inputs.push(f);
    }
    write_manifest(
        &args.manifest_out,
        RunSpec::TrainOracle(args.clone()),
        &inputs,
        &[&args.out],
    )
}

fn sampler_config(temperature: f64, order: crate::args::OrderArg, seed: u64, greedy: bool) -> SamplerConfig {
    SamplerConfig {
        temperature,
        order: order.into(),
        seed,
        greedy,
    }
}

pub fn run_sample(args: &SampleArgs, threads: usize) -> Result<(), CliError> {
    let mut echo = Echo::new("sample", threads);
    let bundle: DenoiserBundle = load_json(ArtifactKind::Denoiser, &args.model)?;
    let cfg = sampler_config(args.temperature, args.order, args.seed, args.greedy);
    let mut records = Vec::with_capacity(args.n);
    for i in 0..args.n {
        let pair = generate_pair(
            &bundle.model,
            &bundle.lengths,
            &cfg,
            record_seed(args.seed, i),
            args.max_attempts,
        )?;
        records.push(CorpusRecord {
            id: format!("gen_{i:06}"),
            heavy: pair.heavy,
            light: pair.light,
        });
    }
    let corpus = generated_corpus(records)?;
    write_paired_fasta(&corpus, BufWriter::new(File::create(&args.out)?))?;

    echo.set_path("model", &args.model);
    echo.set("n", args.n);
    echo.set("temperature", args.temperature);
    echo.set("order", args.order);
    echo.set("greedy", args.greedy);
    echo.set("seed", args.seed);
    echo.set("max_attempts", args.max_attempts);
    echo.set_path("out", &args.out);
    echo.set_opt_path("manifest_out", &args.manifest_out);
    echo.print();

    write_manifest(
        &args.manifest_out,
        RunSpec::Sample(args.clone()),
        &[&args.model],
        &[&args.out],
    )
}

/// Region rows grouped by id: sorted spans plus the first row's label.
fn parse_region_file(path: &PathBuf) -> Result<BTreeMap<String, RegionMask>, CliError> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: BTreeMap<String, Vec<(usize, usize, String)>> = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let cols: Vec<&str> = trimmed.split('\t').collect();
        if cols.len() != 4 {
            return Err(CliError::regions(format!(
                "line {lineno}: expected 4 tab-separated columns, found {}",
                cols.len()
            )));
        }
        let bounds = (cols[1].parse::<usize>(), cols[2].parse::<usize>());
        match bounds {
            (Ok(start), Ok(end)) => {
                rows.entry(cols[0].to_string()).or_default().push((
                    start,
                    end,
                    cols[3].to_string(),
                ));
            }
            _ if lineno == 1 => {} // header row
            _ => {
                return Err(CliError::regions(format!(
                    "line {lineno}: start/end must be nonnegative integers"
                )))
            }
        }
    }
    if rows.is_empty() {
        return Err(CliError::regions("no region rows"));
    }
    let mut out = BTreeMap::new();
    for (id, mut entries) in rows {
        entries.sort_by_key(|&(start, end, _)| (start, end));
        let label = entries[0].2.clone();
        let spans: Vec<(usize, usize)> = entries.iter().map(|&(s, e, _)| (s, e)).collect();
        let mask = RegionMask::new(spans, label)
            .map_err(|e| CliError::regions(format!("id {id}: {e}")))?;
        out.insert(id, mask);
    }
    Ok(out)
}

pub fn run_guide(args: &GuideArgs, threads: usize) -> Result<(), CliError> {
    let mut echo = Echo::new("guide", threads);
    let bundle: DenoiserBundle = load_json(ArtifactKind::Denoiser, &args.model)?;
    let oracles: Vec<RidgeOracle> = args
        .oracles
        .iter()
        .map(|p| load_json(ArtifactKind::Oracle, p))
        .collect::<Result<_, _>>()?;
    let weights = match &args.weights {
        Some(w) if w.len() == oracles.len() => w.clone(),
        Some(w) => {
            return Err(CliError::flag(format!(
                "--weights lists {} values for {} oracles",
                w.len(),
                oracles.len()
            )))
        }
        None => vec![1.0 / oracles.len() as f64; oracles.len()],
    };
    let reference = load_paired_fasta(&args.reference)?;
    let featurizer = KmerFeaturizer;
    let terms: Vec<AssayTerm> = oracles
        .into_iter()
        .zip(&weights)
        .map(|(oracle, &weight)| AssayTerm::from_reference(oracle, weight, &featurizer, &reference))
        .collect::<Result<_, _>>()?;
    let assays: Vec<String> = terms.iter().map(|t| t.oracle.assay.clone()).collect();
    let cfg = GuidanceConfig {
        terms,
        branches: args.branches,
        rollout: args.rollout.into(),
        sampler: sampler_config(args.temperature, args.order, args.seed, args.greedy),
    };

    let mut records = Vec::new();
    match &args.template {
        Some(template_path) => {
            let regions_path = args.regions.as_ref().expect("clap ties --template to --regions");
            let template = load_paired_fasta(template_path)?;
            let masks = parse_region_file(regions_path)?;
            for id in masks.keys() {
                if template.get(id).is_none() {
                    return Err(CliError::regions(format!(
                        "id {id} is not in the template FASTA"
                    )));
                }
            }
            let mut i = 0usize;
            for rec in template.records() {
                let Some(mask) = masks.get(&rec.id) else {
                    continue;
                };
                let state = encode_pair(&rec.heavy, &rec.light)?;
                let init = apply_region_mask(&state, mask)?;
                let pair = guided_infill_pair(
                    &bundle.model,
                    &cfg,
                    &featurizer,
                    &init,
                    record_seed(args.seed, i),
                    args.max_attempts,
                )?;
                records.push(CorpusRecord {
                    id: format!("gen_{i:06}__{}", rec.id),
                    heavy: pair.heavy,
                    light: pair.light,
                });
                i += 1;
            }
            echo.set_path("template", template_path);
            echo.set_path("regions", regions_path);
            echo.set("templates_infilled", records.len());
        }
        None => {
            for i in 0..args.n {
                let pair = guided_generate_pair(
                    &bundle.model,
                    &bundle.lengths,
                    &cfg,
                    &featurizer,
                    record_seed(args.seed, i),
                    args.max_attempts,
                )?;
                records.push(CorpusRecord {
                    id: format!("gen_{i:06}"),
                    heavy: pair.heavy,
                    light: pair.light,
                });
            }
            echo.set("n", args.n);
        }
    }
    let corpus = generated_corpus(records)?;
    write_paired_fasta(&corpus, BufWriter::new(File::create(&args.out)?))?;

    echo.set_path("model", &args.model);
    echo.set(
        "oracles",
        args.oracles
            .iter()
            .map(|p| p.display().to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    echo.set("assays", assays.join(","));
    echo.set(
        "weights",
        weights.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
    );
    echo.set("branches", args.branches);
    echo.set("rollout", args.rollout);
    echo.set_path("reference", &args.reference);
    echo.set("temperature", args.temperature);
    echo.set("order", args.order);
    echo.set("greedy", args.greedy);
    echo.set("seed", args.seed);
    echo.set("max_attempts", args.max_attempts);
    echo.set_path("out", &args.out);
    echo.set_opt_path("manifest_out", &args.manifest_out);
    echo.print();

    let mut inputs: Vec<&PathBuf> = vec![&args.model, &args.reference];
    inputs.extend(args.oracles.iter());
    if let Some(t) = &args.template {
        inputs.push(t);
    }
    if let Some(r) = &args.regions {
        inputs.push(r);
    }
    write_manifest(
        &args.manifest_out,
        RunSpec::Guide(args.clone()),
        &inputs,
        &[&args.out],
    )
}

fn write_tsv(path: &PathBuf, header: &str, rows: impl Iterator<Item = String>) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{header}")?;
    for row in rows {
        writeln!(w, "{row}")?;
    }
    Ok(())
}

pub fn run_evaluate(args: &EvaluateArgs, threads: usize) -> Result<(), CliError> {
    let mut echo = Echo::new("evaluate", threads);
    let generated = load_paired_fasta(&args.generated)?;
    let reference = load_paired_fasta(&args.reference)?;
    let clinical = load_paired_fasta(&args.clinical)?;

    // Within-set identity ECDF for the generated set.
    let gen_concats: Vec<String> = generated.records().iter().map(|r| r.concat()).collect();
    let stats = pairwise_stats(&gen_concats, args.pair_cap, args.seed)?;
    let curve = ecdf(&stats.identities)?;
    let ecdf_path = PathBuf::from(format!("{}.ecdf.tsv", args.out_prefix));
    write_tsv(
        &ecdf_path,
        "identity\tcumulative_fraction",
        curve.iter().map(|(v, f)| format!("{v}\t{f}")),
    )?;

    // Similarity network over the union of the three sets.
    let sets: [(&str, &PairedCorpus); 3] = [
        ("generated", &generated),
        ("reference", &reference),
        ("clinical", &clinical),
    ];
    let mut ids = Vec::new();
    let mut concats = Vec::new();
    let mut labels: BTreeMap<String, &str> = BTreeMap::new();
    for (label, corpus) in sets {
        for r in corpus.records() {
            ids.push(r.id.clone());
            concats.push(r.concat());
            labels.insert(r.id.clone(), label);
        }
    }
    let matrix = IdentityMatrix::from_concats(ids, concats)?;
    let edges = ssn_edges(&matrix, args.ssn_threshold)?;
    let nodes_path = PathBuf::from(format!("{}.nodes.tsv", args.out_prefix));
    write_tsv(
        &nodes_path,
        "id\tset",
        labels.iter().map(|(id, set)| format!("{id}\t{set}")),
    )?;
    let edges_path = PathBuf::from(format!("{}.edges.tsv", args.out_prefix));
    write_tsv(
        &edges_path,
        "id_a\tid_b\tidentity",
        edges.iter().map(|e| format!("{}\t{}\t{}", e.a, e.b, e.identity)),
    )?;
    let mut outputs: Vec<PathBuf> = vec![ecdf_path, nodes_path, edges_path];

    // Enrichment against clinical thresholds, when oracles are supplied.
    if let Some(oracle_paths) = &args.oracles {
        let oracles: Vec<RidgeOracle> = oracle_paths
            .iter()
            .map(|p| load_json(ArtifactKind::Oracle, p))
            .collect::<Result<_, _>>()?;
        let mut seen = std::collections::BTreeSet::new();
        for o in &oracles {
            if !seen.insert(o.assay.as_str()) {
                return Err(CliError::new(
                    "duplicate-assay",
                    format!("two oracles predict assay {}", o.assay),
                ));
            }
        }
        let featurizer = KmerFeaturizer;
        let mut predictions: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        for corpus in [&clinical, &generated] {
            for r in corpus.records() {
                let row: BTreeMap<String, f64> = oracles
                    .iter()
                    .map(|o| Ok((o.assay.clone(), o.predict_record(&featurizer, r)?)))
                    .collect::<Result<_, OracleError>>()?;
                predictions.insert(r.id.clone(), row);
            }
        }
        let reference_ids: Vec<String> = clinical.records().iter().map(|r| r.id.clone()).collect();
        let candidate_ids: Vec<String> = generated.records().iter().map(|r| r.id.clone()).collect();
        let report = enrichment_report(&predictions, &reference_ids, &candidate_ids, args.percentile)?;
        let mut rows: BTreeMap<String, String> = BTreeMap::new();
        rows.insert("percentile".into(), report.percentile.to_string());
        rows.insert("pass".into(), report.pass.to_string());
        rows.insert("total".into(), report.total.to_string());
        rows.insert("fraction_pass".into(), report.fraction_pass.to_string());
        for (assay, t) in &report.thresholds {
            rows.insert(format!("threshold.{assay}"), t.to_string());
        }
        for (assay, f) in &report.per_assay_fractions {
            rows.insert(format!("per_assay.{assay}"), f.to_string());
        }
        let enrichment_path = PathBuf::from(format!("{}.enrichment.tsv", args.out_prefix));
        write_tsv(
            &enrichment_path,
            "key\tvalue",
            rows.iter().map(|(k, v)| format!("{k}\t{v}")),
        )?;
        outputs.push(enrichment_path);
        echo.set("enrichment_fraction_pass", report.fraction_pass);
        echo.set(
            "oracles",
            oracle_paths
                .iter()
                .map(|p| p.display().to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
    }

    echo.set_path("generated", &args.generated);
    echo.set_path("reference", &args.reference);
    echo.set_path("clinical", &args.clinical);
    echo.set("percentile", args.percentile);
    echo.set("ssn_threshold", args.ssn_threshold);
    echo.set("pair_cap", args.pair_cap);
    echo.set("seed", args.seed);
    echo.set("out_prefix", &args.out_prefix);
    echo.set_opt_path("manifest_out", &args.manifest_out);
    echo.set("pairs_used", stats.pairs_used);
    echo.set("total_pairs", stats.total_pairs);
    echo.set("subsampled", stats.subsampled);
    echo.set("edges", edges.len());
    echo.print();

    let mut inputs: Vec<&PathBuf> = vec![&args.generated, &args.reference, &args.clinical];
    if let Some(oracle_paths) = &args.oracles {
        inputs.extend(oracle_paths.iter());
    }
    let output_refs: Vec<&PathBuf> = outputs.iter().collect();
    write_manifest(
        &args.manifest_out,
        RunSpec::Evaluate(args.clone()),
        &inputs,
        &output_refs,
    )
}

pub fn run_report(args: &ReportArgs, threads: usize) -> Result<(), CliError> {
    let mut echo = Echo::new("report", threads);
    let bundle = load_artifact(&args.input)?;
    echo.set_path("input", &args.input);
    let kind_name = match bundle.kind {
        ArtifactKind::Denoiser => "denoiser",
        ArtifactKind::Oracle => "oracle",
        ArtifactKind::RunManifest => "run-manifest",
    };
    echo.set("kind", kind_name);
    echo.set("version", bundle.version);
    echo.set("payload_bytes", bundle.payload.len());
    echo.set("digest", bundle.content_digest());
    match bundle.kind {
        ArtifactKind::Denoiser => {
            let d: DenoiserBundle =
                serde_json::from_slice(&bundle.payload).map_err(ArtifactError::from)?;
            echo.set("denoiser.buckets", d.model.buckets());
            echo.set("denoiser.contexts", d.model.context_count());
            echo.set("denoiser.smoothing", d.model.smoothing());
            echo.set("denoiser.layouts", d.lengths.support_size());
        }
        ArtifactKind::Oracle => {
            let o: RidgeOracle =
                serde_json::from_slice(&bundle.payload).map_err(ArtifactError::from)?;
            echo.set("oracle.assay", &o.assay);
            echo.set("oracle.alpha", o.alpha);
            echo.set("oracle.dim", o.dim());
            echo.set("oracle.scheme", &o.scheme_id);
            echo.set("oracle.stationarity_residual", o.stationarity_residual);
        }
        ArtifactKind::RunManifest => {
            let m: RunManifest =
                serde_json::from_slice(&bundle.payload).map_err(ArtifactError::from)?;
            echo.set("manifest.command", m.spec.command_name());
            for (path, digest) in &m.inputs {
                echo.set(&format!("manifest.input.{path}"), digest);
            }
            for (path, digest) in &m.outputs {
                echo.set(&format!("manifest.output.{path}"), digest);
            }
        }
    }
    echo.print();
    Ok(())
}

pub fn run_spec(spec: &RunSpec, threads: usize) -> Result<(), CliError> {
    match spec {
        RunSpec::TrainDenoiser(a) => run_train_denoiser(a, threads),
        RunSpec::TrainOracle(a) => run_train_oracle(a, threads),
        RunSpec::Sample(a) => run_sample(a, threads),
        RunSpec::Guide(a) => run_guide(a, threads),
        RunSpec::Evaluate(a) => run_evaluate(a, threads),
    }
}

pub fn run_replay(args: &ReplayArgs, threads: usize) -> Result<(), CliError> {
    let manifest: RunManifest = load_json(ArtifactKind::RunManifest, &args.manifest)?;
    for (path, recorded) in &manifest.inputs {
        let current = file_sha256_hex(path)?;
        if current != *recorded {
            return Err(CliError::new(
                "input-digest-mismatch",
                format!("{path}: recorded {recorded}, found {current}"),
            ));
        }
    }
    let spec = manifest.spec.clone().without_manifest_out();
    run_spec(&spec, threads)?;
    for (path, recorded) in &manifest.outputs {
        let current = file_sha256_hex(path)?;
        if current != *recorded {
            return Err(CliError::new(
                "output-digest-mismatch",
                format!("{path}: recorded {recorded}, found {current}"),
            ));
        }
        println!("verified={path}");
    }
    Ok(())
}
