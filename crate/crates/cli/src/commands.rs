use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use scd_core::annotation::{run_batch, Stage};
use scd_core::backbone::{ModelConfig, ScdModel, TrainSample, Trainer};
use scd_core::curation::{
    build_pairs, curation_stats, load_pair_manifest, save_pair_manifest, split, ImageRecord, PairRecord, SplitSpec,
};
use scd_core::enhancer::HashingTextEncoder;
use scd_core::evaluation::{
    eval_csv, eval_table, evaluate, sweep, sweep_csv, sweep_table, Averaging, SweepSample, SweepStage,
};
use scd_core::fsutil;
use scd_core::matching::match_and_refine;
use scd_core::review::{export_dataset, load_exported, ReviewStore, SystemClock};
use scd_core::synthetic::annotation_scenes;
use scd_core::types::io::{load_bitmap, load_change_mask, load_instances, save_bitmap, save_rgb};
use scd_core::{to_binary, ChangeMask};

use crate::api::{router, AppState};
use crate::cli::*;
use crate::config::{DataLayout, Settings};
use crate::fixtures::{scripted_retriever, AdapterFixtures, RetrievalFixture};

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let settings = Settings::load(cli.config.as_deref())?;
    let layout = DataLayout::new(settings.resolve_data_root(cli.data_root.as_deref()));
    match cli.command {
        Command::Pair(a) => pair(&settings, a),
        Command::Split(a) => split_cmd(a),
        Command::Annotate(a) => annotate(&settings, &layout, a),
        Command::Refine(a) => refine(&settings, a),
        Command::Train(a) => train(&settings, a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep_cmd(&settings, a),
        Command::Stats(a) => stats(&settings, &layout, a),
        Command::Serve(a) => serve(&settings, &layout, a),
        Command::Export(a) => export(&settings, &layout, a),
        Command::Demo(a) => demo(a),
    }
}

fn open_store(settings: &Settings, layout: &DataLayout) -> anyhow::Result<ReviewStore> {
    let runs = layout.runs();
    if !runs.is_dir() {
        bail!(
            "no annotation runs at {}; run `scd annotate` first or set --data-root",
            runs.display()
        );
    }
    Ok(ReviewStore::open(
        &runs,
        &layout.decision_log(),
        settings.review,
        Arc::new(SystemClock),
    )?)
}

fn split_spec(sizes: &SplitSizeArgs, seed: u64) -> anyhow::Result<SplitSpec> {
    match (sizes.counts.as_deref(), sizes.fractions.as_deref()) {
        (Some(&[a, b, c]), _) => Ok(SplitSpec::counts(a, b, c, seed)),
        (None, Some(&[a, b, c])) => Ok(SplitSpec::fractions(a, b, c, seed)),
        _ => bail!("split sizes need exactly three comma-separated values: train,val,test"),
    }
}

fn pair(settings: &Settings, a: PairArgs) -> anyhow::Result<()> {
    let database: Vec<ImageRecord> = fsutil::read_json(&a.database)?;
    let queries: Vec<ImageRecord> = fsutil::read_json(&a.queries)?;
    let retrievals: RetrievalFixture = fsutil::read_json(&a.retrievals)?;
    let mut cfg = settings.pairing;
    if let Some(d) = a.min_gap_days {
        cfg.min_gap_days = d;
    }
    cfg.unique_queries |= a.unique_queries;
    let report = build_pairs(&database, &queries, &scripted_retriever(&retrievals), &cfg)?;
    save_pair_manifest(&a.out, &report.pairs)?;
    let rejections = a.rejections.unwrap_or_else(|| a.out.with_extension("rejections.json"));
    fsutil::write_json_atomic(&rejections, &report.rejections)?;
    println!(
        "{} pairs written to {}; {} candidates rejected (see {})",
        report.pairs.len(),
        a.out.display(),
        report.rejections.len(),
        rejections.display()
    );
    Ok(())
}

fn split_cmd(a: SplitArgs) -> anyhow::Result<()> {
    let ids: Vec<String> = load_pair_manifest(&a.pairs)?.into_iter().map(|p| p.id).collect();
    let splits = split(&ids, &split_spec(&a.sizes, a.seed)?)?;
    splits.save(&a.out)?;
    let [tr, va, te] = splits.sizes();
    println!("train {tr}, val {va}, test {te} written to {}", a.out.display());
    Ok(())
}

fn manifest_base(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn annotate(settings: &Settings, layout: &DataLayout, a: AnnotateArgs) -> anyhow::Result<()> {
    let mut s = settings.annotate.clone();
    if let Some(w) = a.workers {
        s.workers = w;
    }
    if let Some(t) = a.tau_cv {
        s.view.tau_cv = t;
    }
    if let Some(r) = a.resolution {
        s.resolution = r;
    }
    let mut cfg = s.pipeline();
    cfg.halt_after = a
        .halt_after
        .map(|n| Stage::from_number(n).expect("clap checks the range"));
    let records = load_pair_manifest(&a.pairs)?;
    let base = manifest_base(&a.pairs);
    let pairs = records
        .iter()
        .map(|r| r.load(&base, Some(s.resolution)))
        .collect::<scd_core::Result<Vec<_>>>()?;
    let fakes = AdapterFixtures::load(&a.fixtures)?.script(&pairs, settings.caption.clone())?;
    let out = a.out.unwrap_or_else(|| layout.runs());
    let report = run_batch(&pairs, &fakes.adapters(), &cfg, &out)?;
    println!(
        "{} completed, {} pending, {} halted; outputs in {}",
        report.completed.len(),
        report.pending.len(),
        report.halted.len(),
        out.display()
    );
    for p in &report.pending {
        println!("  pending {}: {}", p.pair_id, p.error);
    }
    Ok(())
}

fn refine(settings: &Settings, a: RefineArgs) -> anyhow::Result<()> {
    let mut cfg = settings.matching;
    if let Some(t) = a.alpha_t {
        cfg.alpha_t = t;
    }
    if let Some(g) = a.alpha_g {
        cfg.alpha_g = g;
    }
    if let Some(k) = a.keep_initial {
        cfg.keep_initial = k == Switch::On;
    }
    if a.non_strict {
        cfg.strict_inequality = false;
    }
    let initial = load_bitmap(&a.initial)?;
    let tracker = load_instances(&a.tracker)?;
    let segments = load_instances(&a.segments)?;
    let r = match_and_refine(&initial, &tracker, &segments, &cfg)?;
    save_bitmap(&r.mask, &a.out)?;
    let prov = a.provenance.unwrap_or_else(|| a.out.with_extension("provenance.json"));
    fsutil::write_json_atomic(&prov, &r.provenance_json())?;
    println!(
        "retained {} of {} candidates; {} changed pixels -> {}",
        r.retained_count(),
        r.candidate_count(),
        r.mask.area(),
        a.out.display()
    );
    if r.no_evidence {
        println!("warning: no candidate passed; the refined mask is empty");
    }
    Ok(())
}

fn binarize(mut s: TrainSample) -> TrainSample {
    s.target = ChangeMask::from_bitmap(&to_binary(&s.target));
    s
}

fn train(settings: &Settings, a: TrainArgs) -> anyhow::Result<()> {
    let classes: u8 = a.classes.parse()?;
    let config = match &a.model_config {
        Some(p) => fsutil::read_json::<ModelConfig>(p)?,
        None => {
            let mut c = ModelConfig::toy();
            c.backbone = c.backbone.with_classes(classes);
            c
        }
    };
    if config.backbone.num_classes != classes {
        bail!(
            "--classes {classes} but the model config has {}",
            config.backbone.num_classes
        );
    }
    let res = config.backbone.input_resolution;
    let load = |split: &str| -> anyhow::Result<Vec<TrainSample>> {
        load_exported(&a.dataset, Some(split))?
            .into_iter()
            .map(|s| {
                let s = s.resampled(res)?;
                Ok(if classes == 2 { binarize(s) } else { s })
            })
            .collect()
    };
    let (train_set, val_set) = (load("train")?, load("val")?);
    let mut tc = settings.train.clone();
    if let Some(e) = a.epochs {
        tc.epochs = e;
    }
    if let Some(lr) = a.lr {
        tc.lr = lr;
    }
    if let Some(b) = a.batch {
        tc.batch_size = b;
    }
    if let Some(s) = a.seed {
        tc.seed = s;
    }
    let model = ScdModel::new(config)?;
    let text = HashingTextEncoder::new(model.config().enhancer.text_input_dim);
    let outcome = Trainer::new(&model, &text, tc, &a.out).train(&train_set, &val_set, a.resume)?;
    println!(
        "{} steps; best val F1 {:.4} at epoch {}; checkpoints {} and {}",
        outcome.steps,
        outcome.best_val_f1,
        outcome.best_epoch,
        outcome.best_checkpoint.display(),
        outcome.last_checkpoint.display()
    );
    Ok(())
}

fn png_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("list {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    files.sort();
    Ok(files)
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let classes: u8 = a.classes.parse()?;
    let load = |p: &Path| -> anyhow::Result<ChangeMask> {
        let m = load_change_mask(p, 4)?;
        Ok(if classes == 2 {
            ChangeMask::from_bitmap(&to_binary(&m))
        } else {
            m
        })
    };
    let mut pairs = Vec::new();
    for gt in png_files(&a.gt)? {
        let name = gt.file_name().expect("listed file");
        let pred = a.pred.join(name);
        if !pred.is_file() {
            bail!("no prediction {} for ground truth {}", pred.display(), gt.display());
        }
        pairs.push((load(&pred)?, load(&gt)?));
    }
    let averaging = match a.averaging {
        AveragingArg::Pooled => Averaging::Pooled,
        AveragingArg::PerImage => Averaging::PerImage,
    };
    let report = evaluate(&pairs, averaging)?;
    println!("{} images, {:?} averaging", report.images, report.averaging);
    print!("{}", eval_table(&report));
    if let Some(p) = &a.csv {
        fsutil::write_atomic(p, eval_csv(&report).as_bytes())?;
    }
    if let Some(p) = &a.json {
        fsutil::write_json_atomic(p, &report)?;
    }
    Ok(())
}

fn sweep_cmd(settings: &Settings, a: SweepArgs) -> anyhow::Result<()> {
    let stage: SweepStage = a.stage.parse()?;
    let samples: Vec<SweepSample> = fsutil::read_json(&a.samples)?;
    let mut base = settings.matching;
    if let Some(f) = a.fixed {
        match stage {
            SweepStage::Geometric => base.alpha_g = f,
            SweepStage::Semantic => base.alpha_t = f,
        }
    }
    let rows = sweep(&samples, stage, &a.grid, &base)?;
    print!("{}", sweep_table(&rows, stage));
    if let Some(p) = &a.csv {
        fsutil::write_atomic(p, sweep_csv(&rows).as_bytes())?;
    }
    Ok(())
}

fn stats(settings: &Settings, layout: &DataLayout, a: StatsArgs) -> anyhow::Result<()> {
    let store = open_store(settings, layout)?;
    let s = curation_stats(&store.annotations());
    print!("{}", s.to_table());
    if let Some(p) = &a.json {
        fsutil::write_json_atomic(p, &s)?;
    }
    Ok(())
}

fn serve(settings: &Settings, layout: &DataLayout, a: ServeArgs) -> anyhow::Result<()> {
    let mut settings = settings.clone();
    if let Some(t) = a.lease_timeout_secs {
        settings.review.lease_timeout_secs = t;
    }
    let store = Arc::new(open_store(&settings, layout)?);
    let addr = a.addr.unwrap_or(settings.serve.addr.clone());
    let static_dir = a.static_dir.or(settings.serve.static_dir.clone());
    let app = router(
        AppState {
            store: store.clone(),
            clock: Arc::new(SystemClock),
        },
        static_dir,
    );
    let p = store.progress();
    tokio::runtime::Runtime::new()?.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("bind {addr}"))?;
        println!(
            "review API on http://{} ({} pending of {}; log {})",
            listener.local_addr()?,
            p.pending,
            p.total,
            store.log_path().display()
        );
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

fn export(settings: &Settings, layout: &DataLayout, a: ExportArgs) -> anyhow::Result<()> {
    let store = open_store(settings, layout)?;
    let m = export_dataset(&store, &a.out, &split_spec(&a.sizes, a.seed)?, a.allow_partial)?;
    let [tr, va, te] = m.splits.sizes();
    println!(
        "{} pairs exported to {} (train {tr}, val {va}, test {te}; {} discarded, {} pending)",
        m.pairs.len(),
        a.out.display(),
        m.stats.discarded,
        m.stats.pending
    );
    Ok(())
}

fn demo(a: DemoArgs) -> anyhow::Result<()> {
    let scenes = annotation_scenes(a.pairs, a.size, a.seed)?;
    let mut records = Vec::with_capacity(scenes.len());
    for s in &scenes {
        let t0 = PathBuf::from(format!("images/{}_t0.png", s.pair.id));
        let t1 = PathBuf::from(format!("images/{}_t1.png", s.pair.id));
        save_rgb(&s.pair.image_t0, &a.out.join(&t0))?;
        save_rgb(&s.pair.image_t1, &a.out.join(&t1))?;
        records.push(PairRecord {
            id: s.pair.id.clone(),
            t0_path: t0,
            t1_path: t1,
            t0_time: s.pair.capture_t0,
            t1_time: s.pair.capture_t1,
            database_id: None,
            query_id: None,
            retrieval_score: None,
        });
    }
    save_pair_manifest(&a.out.join("pairs.json"), &records)?;
    AdapterFixtures::from_scenes(&scenes).save(&a.out.join("fixtures.json"))?;
    let settings = format!(
        "data_root = \"data\"\n\n[annotate]\nresolution = {}\n\n[caption]\ninter_call_pause = 0.0\n",
        a.size
    );
    fsutil::write_atomic(&a.out.join("scd.toml"), settings.as_bytes())?;
    println!(
        "{} pairs in {}; try: scd --config scd.toml annotate --pairs pairs.json --fixtures fixtures.json",
        records.len(),
        a.out.display()
    );
    Ok(())
}
