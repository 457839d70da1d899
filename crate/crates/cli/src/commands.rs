use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::value::RawValue;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tagdistill::adapter::{train, AdapterSet, TrainConfig};
use tagdistill::distill::{build_pseudo_label, finite_diff_check, loss_total};
use tagdistill::metrics::{binarize, eval_tag_seg, eval_tags, eval_text_seg, TagSegSample};
use tagdistill::sample::load_samples;
use tagdistill::scoring::{cosine, global_pool, score_all, simmap};
use tagdistill::selection::prune_samples;
use tagdistill::synth::{fixture, SynthConfig};
use tagdistill::tensor_io::{load_manifest, manifest_line, write_atomic, write_mask, write_tensor, Manifest};
use tagdistill::{Exec, Sample, SelectionResult, TagEmbedding, TagScores};

use crate::{Cli, Command, Failure, Global, TrainArgs};

type Out = Result<String, Failure>;

/// A JSON number printed with exactly six decimals.
fn fixed6(v: f64) -> Box<RawValue> {
    RawValue::from_string(format!("{v:.6}")).expect("decimal literal is valid JSON")
}

fn push_line(out: &mut String, v: &Value) {
    out.push_str(&v.to_string());
    out.push('\n');
}

fn exec(g: &Global) -> Exec {
    if g.jobs == 1 {
        Exec::Sequential
    } else {
        Exec::Parallel
    }
}

fn manifest(g: &Global) -> Result<Manifest, Failure> {
    let path = g
        .manifest
        .as_ref()
        .ok_or_else(|| Failure::Config("--manifest is required for this command".into()))?;
    Ok(load_manifest(path)?)
}

fn out_dir(g: &Global) -> Result<&Path, Failure> {
    let dir = g
        .out
        .as_deref()
        .ok_or_else(|| Failure::Config("--out is required for this command".into()))?;
    fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

/// Loads every sample of the manifest, adapted when `--adapter` is given.
fn samples(g: &Global) -> Result<Vec<Sample>, Failure> {
    let m = manifest(g)?;
    let exec = exec(g);
    let loaded = load_samples(&m, exec)?;
    match &g.adapter {
        None => Ok(loaded),
        Some(dir) => {
            let a = AdapterSet::load(dir)?;
            Ok(exec.try_map(&loaded, |s| a.apply_sample(s))?)
        }
    }
}

fn scored(g: &Global, s: &Sample) -> Result<TagScores, Failure> {
    score_all(s, g.method).map_err(|e| Failure::Data(format!("sample {}: {e}", s.id)))
}

fn selected(g: &Global, s: &Sample) -> Result<(TagScores, SelectionResult), Failure> {
    let scores = scored(g, s)?;
    let sel = g
        .selection
        .apply(&scores)
        .map_err(|e| Failure::Data(format!("sample {}: {e}", s.id)))?;
    Ok((scores, sel))
}

fn per_sample<R: Send>(
    g: &Global,
    samples: &[Sample],
    f: impl Fn(&Sample) -> Result<R, Failure> + Sync + Send,
) -> Result<Vec<R>, Failure> {
    exec(g).try_map(samples, f)
}

pub fn run(cli: &Cli) -> Out {
    let g = &cli.global;
    match &cli.command {
        Command::Score => score(g),
        Command::Select => select(g),
        Command::Pseudolabel => pseudolabel(g),
        Command::Loss => loss(g),
        Command::Gradcheck { step } => gradcheck(g, *step),
        Command::Train(t) => train_cmd(g, t),
        Command::EvalTags { predictions } => eval_tags_cmd(g, predictions.as_deref()),
        Command::EvalSeg { background_threshold } => eval_seg(g, *background_threshold),
        Command::Prune => prune(g),
        Command::Synth { samples } => synth(g, *samples),
    }
}

fn score(g: &Global) -> Out {
    let all = samples(g)?;
    let lines = per_sample(g, &all, |s| {
        let sc = scored(g, s)?;
        let entries: Vec<(String, Box<RawValue>)> = sc.entries.iter().map(|(t, v)| (t.clone(), fixed6(*v))).collect();
        Ok(json!({ "sample_id": s.id, "method": g.method.as_str(), "scores": entries }))
    })?;
    let mut out = String::new();
    lines.iter().for_each(|l| push_line(&mut out, l));
    eprintln!("scored {} samples with {}", lines.len(), g.method);
    Ok(out)
}

fn select(g: &Global) -> Out {
    let all = samples(g)?;
    let lines = per_sample(g, &all, |s| {
        let (_, sel) = selected(g, s)?;
        Ok(json!({
            "sample_id": s.id,
            "method": g.method.as_str(),
            "selection": g.selection.to_string(),
            "selected": sel.selected,
            "boundary_index": sel.boundary_index,
        }))
    })?;
    let mut out = String::new();
    lines.iter().for_each(|l| push_line(&mut out, l));
    Ok(out)
}

fn selected_embeddings(s: &Sample, sel: &SelectionResult) -> Vec<TagEmbedding> {
    sel.selected
        .iter()
        .filter_map(|t| s.candidates.iter().find(|c| &c.tag == t).cloned())
        .collect()
}

fn pseudolabel(g: &Global) -> Out {
    let dir = out_dir(g)?;
    let all = samples(g)?;
    let lines = per_sample(g, &all, |s| {
        let (_, sel) = selected(g, s)?;
        let label = build_pseudo_label(&s.pixels, &selected_embeddings(s, &sel))?;
        let name = format!("{}.pseudolabel.ttdt", s.id);
        write_tensor(&label.union_map.to_tensor(), &dir.join(&name))?;
        Ok(json!({ "sample_id": s.id, "contributors": label.contributors, "path": name }))
    })?;
    let mut out = String::new();
    lines.iter().for_each(|l| push_line(&mut out, l));
    eprintln!("wrote {} pseudo-labels to {}", lines.len(), dir.display());
    Ok(out)
}

fn loss(g: &Global) -> Out {
    let all = samples(g)?;
    let lines = per_sample(g, &all, |s| {
        let (_, sel) = selected(g, s)?;
        let r = loss_total(&s.pixels, &s.text_embedding, &s.candidates, &sel.selected, g.reduction)
            .map_err(|e| Failure::Data(format!("sample {}: {e}", s.id)))?;
        Ok(json!({
            "sample_id": s.id,
            "selected": sel.selected,
            "l_distill": r.l_distill,
            "l_tag": r.l_tag,
            "total": r.total,
            "per_tag": r.per_tag,
        }))
    })?;
    let mut out = String::new();
    lines.iter().for_each(|l| push_line(&mut out, l));
    Ok(out)
}

fn gradcheck(g: &Global, step: f64) -> Out {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Failure::Config(format!("--step must be > 0, got {step}")));
    }
    let all = samples(g)?;
    let errors = per_sample(g, &all, |s| {
        let (_, sel) = selected(g, s)?;
        finite_diff_check(
            &s.pixels,
            &s.text_embedding,
            &s.candidates,
            &sel.selected,
            step,
            g.reduction,
        )
        .map_err(|e| Failure::Data(format!("sample {}: {e}", s.id)))
    })?;
    let mut out = String::new();
    for (s, e) in all.iter().zip(&errors) {
        push_line(&mut out, &json!({ "sample_id": s.id, "max_rel_error": e }));
    }
    let worst = errors.iter().copied().fold(0.0f64, f64::max);
    eprintln!(
        "max relative error {worst:.3e} over {} samples (step {step:e})",
        errors.len()
    );
    Ok(out)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn train_cmd(g: &Global, t: &TrainArgs) -> Out {
    let config = TrainConfig {
        learning_rate: t.lr,
        weight_decay: t.weight_decay,
        epochs: t.epochs,
        batch_size: t.batch_size,
        seed: g.seed,
        selection_mode: g.selection,
        score_method: g.method,
        loss_reduction: g.reduction,
        batch_reduction: t.batch_reduction,
        rank: t.rank,
        alpha: t.alpha,
        sharing: t.sharing.into(),
    };
    config.validate()?;
    let dir = out_dir(g)?;
    let all = samples(g)?;
    let log = train(&all, &config, exec(g))?;
    let hash = hex(&Sha256::digest(config.to_json().to_string().as_bytes()));
    log.adapter.save(dir, &hash)?;
    write_atomic(&dir.join("train_log.csv"), log.to_csv().as_bytes())?;
    let first = log.records.first().map(|r| r.total);
    let last = log.records.last().map(|r| r.total);
    eprintln!(
        "trained {} steps; loss {:.6} -> {:.6}",
        log.records.len(),
        first.unwrap_or(f64::NAN),
        last.unwrap_or(f64::NAN)
    );
    let mut out = String::new();
    push_line(
        &mut out,
        &json!({
            "steps": log.records.len(),
            "initial_total": first,
            "final_total": last,
            "config_hash": hash,
            "checkpoint": dir,
        }),
    );
    Ok(out)
}

/// `sample_id -> selected` from a JSON-lines file such as the output of `select`.
fn read_predictions(path: &Path) -> Result<BTreeMap<String, Vec<String>>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |why: &str| Failure::Data(format!("{} line {}: {why}", path.display(), i + 1));
        let v: Value = serde_json::from_str(line).map_err(|e| bad(&e.to_string()))?;
        let id = v["sample_id"].as_str().ok_or_else(|| bad("missing sample_id"))?;
        let tags = v["selected"]
            .as_array()
            .ok_or_else(|| bad("missing selected"))?
            .iter()
            .map(|t| {
                t.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| bad("selected must hold strings"))
            })
            .collect::<Result<Vec<_>, _>>()?;
        out.insert(id.to_string(), tags);
    }
    Ok(out)
}

fn eval_tags_cmd(g: &Global, predictions: Option<&Path>) -> Out {
    let all = samples(g)?;
    let given = predictions.map(read_predictions).transpose()?;
    let rows = per_sample(g, &all, |s| {
        let truth = s
            .gt_tags
            .clone()
            .ok_or_else(|| Failure::Data(format!("sample {} has no gt_tags", s.id)))?;
        let scores = scored(g, s)?;
        let pred = match &given {
            Some(p) => p
                .get(&s.id)
                .cloned()
                .ok_or_else(|| Failure::Data(format!("no prediction for sample {}", s.id)))?,
            None => selected(g, s)?.1.selected,
        };
        Ok((pred, truth, scores))
    })?;
    let (mut preds, mut truths, mut scores) = (Vec::new(), Vec::new(), Vec::new());
    for (p, t, s) in rows {
        preds.push(p);
        truths.push(t);
        scores.push(s);
    }
    let report = eval_tags(&preds, &truths, &scores)?;
    eprintln!(
        "P {:.1}  R {:.1}  F1 {:.1}  Acc {:.1}  mAP {:.1}",
        100.0 * report.precision,
        100.0 * report.recall,
        100.0 * report.f1,
        100.0 * report.accuracy,
        100.0 * report.map
    );
    let mut out = String::new();
    push_line(&mut out, &report.to_json());
    Ok(out)
}

fn eval_seg(g: &Global, background_threshold: f64) -> Out {
    let all = samples(g)?;
    let dir = match &g.out {
        Some(_) => Some(out_dir(g)?),
        None => None,
    };
    let rows = per_sample(g, &all, |s| {
        let gt = s
            .gt_text_mask
            .clone()
            .ok_or_else(|| Failure::Data(format!("sample {} has no gt_text_mask_path", s.id)))?;
        let pred = binarize(&simmap(&s.pixels, &s.text_embedding)?, g.binarize_threshold);
        if let Some(d) = dir {
            write_mask(&pred, &d.join(format!("{}.predmask.ttdt", s.id)))?;
        }
        let tag_sample = match &s.gt_tag_masks {
            Some(masks) => {
                let (_, sel) = selected(g, s)?;
                let maps = selected_embeddings(s, &sel)
                    .iter()
                    .map(|t| Ok((t.tag.clone(), simmap(&s.pixels, &t.embedding)?)))
                    .collect::<Result<Vec<_>, tagdistill::Error>>()?;
                Some(TagSegSample {
                    maps,
                    gt: masks.clone(),
                })
            }
            None => None,
        };
        Ok((pred, gt, tag_sample))
    })?;
    let (mut preds, mut gts, mut tag_samples) = (Vec::new(), Vec::new(), Vec::new());
    for (p, t, ts) in rows {
        preds.push(p);
        gts.push(t);
        tag_samples.extend(ts);
    }
    let report = eval_text_seg(&preds, &gts)?;
    let mut v = report.to_json();
    if !tag_samples.is_empty() {
        let miou = eval_tag_seg(&tag_samples, background_threshold)?;
        v["tag_miou"] = json!((1000.0 * miou).round() / 10.0);
    }
    eprintln!(
        "caption IoU {:.1} over {} samples",
        100.0 * report.caption_iou,
        preds.len()
    );
    let mut out = String::new();
    push_line(&mut out, &v);
    Ok(out)
}

fn prune(g: &Global) -> Out {
    let all = samples(g)?;
    let sims = per_sample(g, &all, |s| {
        let pooled = global_pool(&s.pixels)?;
        let sim = cosine(pooled.as_slice(), s.text_embedding.as_slice())
            .map_err(|e| Failure::Data(format!("sample {}: {e}", s.id)))?;
        Ok((s.id.clone(), sim))
    })?;
    if sims.is_empty() {
        return Ok(String::new());
    }
    let kept = prune_samples(&sims)?;
    let by_id: BTreeMap<&str, f64> = sims.iter().map(|(id, v)| (id.as_str(), *v)).collect();
    let mut out = String::new();
    for id in &kept {
        push_line(
            &mut out,
            &json!({ "sample_id": id, "similarity": fixed6(by_id[id.as_str()]) }),
        );
    }
    eprintln!("kept {} of {} samples", kept.len(), sims.len());
    Ok(out)
}

fn synth(g: &Global, n: usize) -> Out {
    let dir = out_dir(g)?;
    let samples = fixture(n, g.seed, &SynthConfig::default())?;
    let mut manifest = String::new();
    for s in &samples {
        manifest.push_str(&manifest_line(&s.write(dir)?));
        manifest.push('\n');
    }
    let path: PathBuf = dir.join("manifest.jsonl");
    write_atomic(&path, manifest.as_bytes())?;
    eprintln!("wrote {n} synthetic samples (seed {}) to {}", g.seed, path.display());
    let mut out = String::new();
    push_line(&mut out, &json!({ "manifest": path, "samples": n, "seed": g.seed }));
    Ok(out)
}
