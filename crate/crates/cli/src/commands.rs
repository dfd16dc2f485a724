use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;
use visitpat::appropagation::PreferenceMode;
use visitpat::evalkit::{self, LabeledClustering, Linkage};
use visitpat::ingest::{self, GapHistogram, TraceSchema};
use visitpat::patterns::{self, Grouping};
use visitpat::preprocess::{self, Bis};
use visitpat::segtree::SegmentTree;
use visitpat::synth;
use visitpat::{par, Error};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::runlog::RunLog;

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn read_bis_file(path: &Path) -> Result<Vec<Bis>, CliError> {
    let bis = preprocess::read_bis(open(path)?)?;
    if let Some(first) = bis.first() {
        if let Some(b) = bis.iter().find(|b| b.len() != first.len() || b.lambda != first.lambda) {
            return Err(CliError::Input(format!(
                "{}: sequence {}/{} differs in length or lambda from the first row",
                path.display(),
                b.key.subject_id,
                b.key.day
            )));
        }
    }
    Ok(bis)
}

fn read_labels_file(path: &Path, n: usize) -> Result<Vec<usize>, CliError> {
    let labels = synth::read_labels(open(path)?)?;
    if labels.len() != n {
        return Err(CliError::Input(format!(
            "{}: {} labels for {n} sequences",
            path.display(),
            labels.len()
        )));
    }
    Ok(labels)
}

fn check_lambda(bis: &[Bis], cfg: &RunConfig) -> Result<(), CliError> {
    match bis.first() {
        Some(b) if b.lambda != cfg.lambda_s => Err(CliError::Input(format!(
            "sequences use lambda {} s, config has {} s",
            b.lambda, cfg.lambda_s
        ))),
        _ => Ok(()),
    }
}

pub fn ingest(input: &Path, out: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    let schema = TraceSchema::default().with_overrides(&cfg.columns);
    let parsed = ingest::parse_trace(open(input)?, &schema)?;
    let seqs = ingest::build_point_sequences(&parsed.records, cfg.utc_offset_s);
    let mut w = create(out)?;
    ingest::write_point_sequences(&mut w, seqs.values())?;
    w.flush()?;

    let mut log = RunLog::new("ingest", cfg);
    log.input(input)?;
    log.output(out)?;
    log.note("records", parsed.records.len());
    log.note("skipped_rows", parsed.skipped);
    log.note("sequences", seqs.len());
    log.note("duplicates", seqs.values().map(|s| s.duplicates).sum::<usize>());
    let q = cfg.delta_quantile.unwrap_or(0.95);
    let hist = GapHistogram::from_sequences(seqs.values());
    log.note("delta_quantile", q);
    log.note("delta_estimate_s", ingest::estimate_delta(&hist, q).ok());
    log.write(out)?;
    Ok(())
}

pub fn preprocess(input: &Path, out: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    let seqs = ingest::read_point_sequences(open(input)?)?;
    let mut deltas: BTreeMap<String, u32> = BTreeMap::new();
    let global = match cfg.delta_quantile {
        Some(q) if !seqs.is_empty() => {
            if cfg.delta_per_subject {
                for (s, h) in GapHistogram::per_subject(&seqs) {
                    let d = ingest::estimate_delta(&h, q).unwrap_or(cfg.delta_s);
                    deltas.insert(s, d);
                }
                cfg.delta_s
            } else {
                ingest::estimate_delta(&GapHistogram::from_sequences(&seqs), q)?
            }
        }
        _ => cfg.delta_s,
    };
    let bis: Vec<Bis> = par::map_slice(&seqs, |ps| {
        let d = deltas.get(&ps.key.subject_id).copied().unwrap_or(global);
        preprocess::to_bis(ps, d, cfg.lambda_s)
    });
    let mut w = create(out)?;
    preprocess::write_bis(&mut w, &bis)?;
    w.flush()?;

    let mut log = RunLog::new("preprocess", cfg);
    log.input(input)?;
    log.output(out)?;
    log.note("sequences", bis.len());
    log.note("delta_s", global);
    if !deltas.is_empty() {
        log.note("delta_per_subject_s", serde_json::to_value(&deltas)?);
    }
    log.write(out)?;
    Ok(())
}

pub fn tree(input: &Path, out: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    let bis = read_bis_file(input)?;
    check_lambda(&bis, cfg)?;
    let w = cfg.w_units(cfg.omega_s);
    let t = SegmentTree::build(&bis, w)?;
    t.save(out)?;

    let mut log = RunLog::new("tree", cfg);
    log.input(input)?;
    log.output(out)?;
    log.note("sequences", t.n());
    log.note("w_units", w);
    log.note("nodes", t.len());
    log.note("leaves", t.leaf_count());
    log.note("depth", t.depth());
    log.write(out)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub le: usize,
    pub ri: usize,
    pub lambda: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternOut {
    pub exemplar: usize,
    pub support: usize,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterOut {
    pub exemplar: usize,
    pub members: Vec<usize>,
    pub probabilities: Vec<f64>,
}

/// Discovery result for one window and one sequence group. Indices refer to
/// rows of the BIS file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowOut {
    pub group: String,
    pub window: WindowSpec,
    pub w_units: usize,
    pub preference_mode: PreferenceMode,
    pub net_sim: f64,
    pub iterations: usize,
    pub converged: bool,
    pub patterns: Vec<PatternOut>,
    pub clusters: Vec<ClusterOut>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternsFile {
    pub alpha: usize,
    pub windows: Vec<WindowOut>,
}

/// Cluster every configured window, once per sequence group.
pub fn run_windows(
    tree: &SegmentTree,
    bis: &[Bis],
    cfg: &RunConfig,
    mode: PreferenceMode,
) -> Result<Vec<WindowOut>, CliError> {
    let len = bis.first().map_or(0, Bis::len);
    let windows = cfg.windows_for(len);
    let groups = patterns::group_indices(bis, cfg.grouping);
    let params = cfg.ap_params();
    let matrices: Vec<_> = par::map_slice(&windows, |&(le, ri)| {
        tree.window_matrix(le, ri).map(|m| (tree.snap(le, ri), m))
    });
    let matrices = matrices.into_iter().collect::<Result<Vec<_>, Error>>()?;
    let jobs: Vec<(usize, usize)> = (0..windows.len())
        .flat_map(|w| (0..groups.len()).map(move |g| (w, g)))
        .collect();
    let results = par::map_slice(&jobs, |&(w, g)| -> Result<WindowOut, Error> {
        let (snapped, full) = &matrices[w];
        let (name, idx) = &groups[g];
        let restricted;
        let (m, sub): (_, Cow<[Bis]>) = match cfg.grouping {
            Grouping::Pooled => (full, Cow::Borrowed(bis)),
            Grouping::PerSubject => {
                restricted = full.restrict(idx)?;
                (&restricted, Cow::Owned(idx.iter().map(|&i| bis[i].clone()).collect()))
            }
        };
        let d = patterns::discover_from_matrix(m, &sub, *snapped, cfg.alpha, mode, &params)?;
        let lambda = bis.first().map_or(cfg.lambda_s, |b| b.lambda);
        Ok(WindowOut {
            group: name.clone(),
            window: WindowSpec {
                le: snapped.0,
                ri: snapped.1,
                lambda,
            },
            w_units: tree.w_units(),
            preference_mode: mode,
            net_sim: d.clustering.net_sim,
            iterations: d.clustering.iterations,
            converged: d.clustering.converged,
            patterns: d
                .patterns
                .iter()
                .map(|p| PatternOut {
                    exemplar: idx[p.exemplar],
                    support: p.support,
                    probabilities: p.probabilities.clone(),
                })
                .collect(),
            clusters: d
                .all_patterns
                .iter()
                .map(|p| ClusterOut {
                    exemplar: idx[p.exemplar],
                    members: p.members.iter().map(|&i| idx[i]).collect(),
                    probabilities: p.probabilities.clone(),
                })
                .collect(),
        })
    });
    Ok(results.into_iter().collect::<Result<Vec<_>, Error>>()?)
}

fn non_converged(runs: &[WindowOut]) -> usize {
    runs.iter().filter(|r| !r.converged).count()
}

fn strict_check(strict: bool, count: usize) -> Result<(), CliError> {
    if strict && count > 0 {
        Err(CliError::NonConvergence(format!(
            "{count} clustering run(s) stopped at max_iter without converging"
        )))
    } else {
        Ok(())
    }
}

pub fn discover(
    tree_dir: &Path,
    bis_path: &Path,
    out: &Path,
    clusters_csv: Option<&Path>,
    cfg: &RunConfig,
    strict: bool,
) -> Result<(), CliError> {
    let tree = SegmentTree::load(tree_dir)?;
    let bis = read_bis_file(bis_path)?;
    if bis.len() != tree.n() {
        return Err(CliError::Input(format!(
            "tree holds {} sequences, BIS file has {}",
            tree.n(),
            bis.len()
        )));
    }
    check_lambda(&bis, cfg)?;
    let runs = run_windows(&tree, &bis, cfg, cfg.preference_mode)?;
    let file = PatternsFile {
        alpha: cfg.alpha,
        windows: runs,
    };
    let mut w = create(out)?;
    serde_json::to_writer_pretty(&mut w, &file)?;
    writeln!(w)?;
    w.flush()?;

    let mut log = RunLog::new("discover", cfg);
    log.input(tree_dir)?;
    log.input(bis_path)?;
    log.output(out)?;
    if let Some(csv) = clusters_csv {
        let mut c = create(csv)?;
        writeln!(c, "cluster_id,exemplar_index,member_indices")?;
        let all = file.windows.iter().flat_map(|r| &r.clusters);
        for (id, cl) in all.enumerate() {
            let members: Vec<String> = cl.members.iter().map(usize::to_string).collect();
            writeln!(c, "{id},{},{}", cl.exemplar, members.join(";"))?;
        }
        c.flush()?;
        log.output(csv)?;
    }
    let counts: Vec<usize> = file.windows.iter().map(|r| r.clusters.len()).collect();
    log.note("clusters", counts);
    log.note("non_converged", non_converged(&file.windows));
    log.write(out)?;
    strict_check(strict, non_converged(&file.windows))
}

pub fn synth(out: &Path, labels: &Path, emit_raw: bool, cfg: &RunConfig) -> Result<(), CliError> {
    let params = cfg.synth_params();
    let data = synth::generate(&params)?;
    let mut w = create(out)?;
    if emit_raw {
        synth::write_raw(&mut w, &data.sequences)?;
    } else {
        preprocess::write_bis(&mut w, &data.sequences)?;
    }
    w.flush()?;
    let mut l = create(labels)?;
    synth::write_labels(&mut l, &data.labels)?;
    l.flush()?;

    let mut log = RunLog::new("synth", cfg);
    log.output(out)?;
    log.output(labels)?;
    log.note("modes", params.modes.len());
    log.note("flip_rate", data.flip_rate());
    log.note("run_loss_rate_4", data.run_loss_rate(4));
    log.write(out)?;
    Ok(())
}

/// Purity, Rand index and F-measure of `predicted` against `truth`.
pub fn scores(predicted: Vec<usize>, truth: &[usize], beta: f64) -> Result<serde_json::Value, CliError> {
    let clusters = predicted.iter().collect::<BTreeSet<_>>().len();
    let lc = LabeledClustering::new(predicted, truth.to_vec())?;
    Ok(json!({
        "clusters": clusters,
        "purity": evalkit::purity(&lc)?,
        "rand_index": evalkit::rand_index(&lc)?,
        "f_measure": evalkit::f_measure(&lc, beta)?,
    }))
}

/// Cluster id per sequence and pattern vectors for one window, merging the
/// groups of that window.
fn window_assignment(runs: &[&WindowOut], n: usize) -> Result<(Vec<usize>, Vec<Vec<f64>>), CliError> {
    let mut label: Vec<Option<usize>> = vec![None; n];
    let mut vectors = Vec::new();
    for cl in runs.iter().flat_map(|r| &r.clusters) {
        let id = vectors.len();
        vectors.push(cl.probabilities.clone());
        for &m in &cl.members {
            match label.get_mut(m) {
                Some(slot @ None) => *slot = Some(id),
                Some(Some(_)) => return Err(CliError::Input(format!("sequence {m} is in two clusters"))),
                None => return Err(CliError::Input(format!("member {m} outside {n} sequences"))),
            }
        }
    }
    let label = label
        .into_iter()
        .enumerate()
        .map(|(i, l)| l.ok_or_else(|| CliError::Input(format!("sequence {i} is not clustered"))))
        .collect::<Result<_, _>>()?;
    Ok((label, vectors))
}

fn evaluate_window(
    runs: &[&WindowOut],
    bis: &[Bis],
    truth: &[usize],
    cfg: &RunConfig,
    baselines: bool,
) -> Result<serde_json::Value, CliError> {
    let win = &runs[0].window;
    let (le, ri) = (win.le, win.ri);
    let (predicted, vectors) = window_assignment(runs, bis.len())?;
    let segments: Vec<&[bool]> = bis.iter().map(|b| &b.bits[le..ri]).collect();
    let assignment: Vec<Option<usize>> = predicted.iter().map(|&p| Some(p)).collect();
    let accuracy = evalkit::accuracy_score(&segments, &vectors, &assignment, cfg.normalize)?;
    let td = scores(predicted, truth, cfg.beta)?;
    let mut per_method = serde_json::Map::new();
    per_method.insert("tdist".into(), td.clone());
    if baselines {
        let k = truth.iter().collect::<BTreeSet<_>>().len();
        let km = evalkit::kmeans_baseline(&segments, k, cfg.seed)?;
        let hc = evalkit::hc_baseline(&segments, k, Linkage::Complete)?;
        per_method.insert("kmeans".into(), scores(km, truth, cfg.beta)?);
        per_method.insert("hc".into(), scores(hc, truth, cfg.beta)?);
    }
    Ok(json!({
        "window": win,
        "clusters": td["clusters"],
        "purity": td["purity"],
        "rand_index": td["rand_index"],
        "f_measure": td["f_measure"],
        "accuracy_score": accuracy,
        "per_method": per_method,
    }))
}

fn by_window(runs: &[WindowOut]) -> Vec<Vec<&WindowOut>> {
    let mut out: Vec<Vec<&WindowOut>> = Vec::new();
    for r in runs {
        match out.iter_mut().find(|g| g[0].window == r.window) {
            Some(g) => g.push(r),
            None => out.push(vec![r]),
        }
    }
    out
}

pub fn eval(
    patterns_path: &Path,
    bis_path: &Path,
    labels_path: &Path,
    out: &Path,
    baselines: bool,
    cfg: &RunConfig,
) -> Result<(), CliError> {
    let file: PatternsFile = serde_json::from_reader(open(patterns_path)?)?;
    let bis = read_bis_file(bis_path)?;
    let truth = read_labels_file(labels_path, bis.len())?;
    if file.windows.is_empty() {
        return Err(CliError::Input("patterns file has no windows".into()));
    }
    let mut reports = Vec::new();
    for group in by_window(&file.windows) {
        let WindowSpec { le, ri, .. } = group[0].window;
        if ri > bis.first().map_or(0, Bis::len) || le >= ri {
            return Err(CliError::Input(format!("window [{le}, {ri}) does not fit the sequences")));
        }
        reports.push(evaluate_window(&group, &bis, &truth, cfg, baselines)?);
    }
    let first = &reports[0];
    let report = json!({
        "purity": first["purity"],
        "rand_index": first["rand_index"],
        "f_measure": first["f_measure"],
        "beta": cfg.beta,
        "accuracy_score": first["accuracy_score"],
        "normalize": cfg.normalize,
        "per_method": first["per_method"],
        "windows": reports,
    });
    let mut w = create(out)?;
    serde_json::to_writer_pretty(&mut w, &report)?;
    writeln!(w)?;
    w.flush()?;

    let mut log = RunLog::new("eval", cfg);
    log.input(patterns_path)?;
    log.input(bis_path)?;
    log.input(labels_path)?;
    log.output(out)?;
    log.write(out)?;
    Ok(())
}

/// One row of the sweep table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub omega_s: u32,
    pub w_units: usize,
    pub mode: PreferenceMode,
    pub le: usize,
    pub ri: usize,
    pub clusters: usize,
    pub frequent: usize,
    pub accuracy_score: f64,
    pub purity: Option<f64>,
    pub rand_index: Option<f64>,
    pub f_measure: Option<f64>,
    pub converged: bool,
}

pub fn sweep_rows(bis: &[Bis], truth: Option<&[usize]>, cfg: &RunConfig) -> Result<Vec<SweepRow>, CliError> {
    let mut rows = Vec::new();
    for &omega in &cfg.omegas {
        let w = cfg.w_units(omega);
        let tree = SegmentTree::build(bis, w)?;
        for mode in [PreferenceMode::Minimizing, PreferenceMode::Median] {
            let runs = run_windows(&tree, bis, cfg, mode)?;
            for group in by_window(&runs) {
                let win = &group[0].window;
                let (predicted, vectors) = window_assignment(&group, bis.len())?;
                let segments: Vec<&[bool]> = bis.iter().map(|b| &b.bits[win.le..win.ri]).collect();
                let assignment: Vec<Option<usize>> = predicted.iter().map(|&p| Some(p)).collect();
                let accuracy = evalkit::accuracy_score(&segments, &vectors, &assignment, cfg.normalize)?;
                let metric = |key: &str, s: &serde_json::Value| s[key].as_f64();
                let s = match truth {
                    Some(t) => Some(scores(predicted, t, cfg.beta)?),
                    None => None,
                };
                rows.push(SweepRow {
                    omega_s: omega,
                    w_units: w,
                    mode,
                    le: win.le,
                    ri: win.ri,
                    clusters: vectors.len(),
                    frequent: group.iter().map(|r| r.patterns.len()).sum(),
                    accuracy_score: accuracy,
                    purity: s.as_ref().and_then(|s| metric("purity", s)),
                    rand_index: s.as_ref().and_then(|s| metric("rand_index", s)),
                    f_measure: s.as_ref().and_then(|s| metric("f_measure", s)),
                    converged: group.iter().all(|r| r.converged),
                });
            }
        }
    }
    Ok(rows)
}

pub fn sweep(
    bis_path: &Path,
    labels_path: Option<&Path>,
    out: &Path,
    cfg: &RunConfig,
    strict: bool,
) -> Result<(), CliError> {
    let bis = read_bis_file(bis_path)?;
    check_lambda(&bis, cfg)?;
    let truth = labels_path.map(|p| read_labels_file(p, bis.len())).transpose()?;
    let rows = sweep_rows(&bis, truth.as_deref(), cfg)?;
    let mut w = create(out)?;
    writeln!(
        w,
        "omega_s,w_units,mode,le,ri,clusters,frequent,accuracy_score,purity,rand_index,f_measure,converged"
    )?;
    let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
    for r in &rows {
        let mode = match r.mode {
            PreferenceMode::Minimizing => "minimizing",
            PreferenceMode::Median => "median",
        };
        writeln!(
            w,
            "{},{},{mode},{},{},{},{},{:.6},{},{},{},{}",
            r.omega_s,
            r.w_units,
            r.le,
            r.ri,
            r.clusters,
            r.frequent,
            r.accuracy_score,
            opt(r.purity),
            opt(r.rand_index),
            opt(r.f_measure),
            r.converged
        )?;
    }
    w.flush()?;

    let mut log = RunLog::new("sweep", cfg);
    log.input(bis_path)?;
    if let Some(p) = labels_path {
        log.input(p)?;
    }
    log.output(out)?;
    log.note("rows", rows.len());
    log.write(out)?;
    strict_check(strict, rows.iter().filter(|r| !r.converged).count())
}
